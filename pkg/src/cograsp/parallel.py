"""Order-stable task fan-out."""
from __future__ import annotations

from typing import Callable, Sequence


def ordered_map(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Map ``fn`` over ``tasks``; results come back in task order for any ``jobs``.

    Every task carries its own seed, so the outcome does not depend on scheduling.
    """
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs, backend="loky")(delayed(fn)(t) for t in tasks)
