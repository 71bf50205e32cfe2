import json

import numpy as np
import pytest

from cograsp import fixture
from cograsp.kinematics import load_hand, parse_hand


@pytest.fixture(scope="session")
def planar():
    return load_hand(fixture("hand_planar2f.json"))


@pytest.fixture(scope="session")
def prismatic():
    return load_hand(fixture("hand_prismatic2f.json"))


@pytest.fixture(scope="session")
def four():
    return load_hand(fixture("hand_4f.json"))


@pytest.fixture(scope="session")
def slider():
    """Prismatic fixture trimmed to one contact and one body sample per finger."""
    d = json.loads(fixture("hand_prismatic2f.json").read_text())
    d["fingertip_samples"] = {k: v[:1] for k, v in d["fingertip_samples"].items()}
    d["surface_samples"] = {k: [s["point"] for s in v] for k, v in d["fingertip_samples"].items()}
    return parse_hand(d)


@pytest.fixture
def planar_data():
    return json.loads(fixture("hand_planar2f.json").read_text())


def thumb_q(a, b):
    """Full planar-fixture config with the thumb at (a, b) and the index at rest."""
    return np.array([a, b, 0.0, 0.0])


def antipodal_pinch(D):
    """Planar-fixture config with both pad apexes facing each other D apart, plus their midpoint.

    Tips point along +x; the index chain mirrors the thumb about y = 0.0175.
    """
    a = np.arcsin((0.035 - D) / 0.1)
    return np.array([a, -a, a, -a]), np.array([0.05 * np.cos(a) + 0.04, 0.0175, 0.0])


def held_sphere(r, gap=0.0):
    from cograsp.geometry import make_primitive
    from cograsp.kinematics import RigidTransform
    q, c = antipodal_pinch(2 * (r + gap))
    return q, make_primitive("sphere", {"r": r}, pose=RigidTransform(np.eye(3), c))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance")
        for k in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[k])
