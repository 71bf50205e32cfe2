"""Grasp synthesis and fingertip contact-plane co-design at desk scale."""
from pathlib import Path

__version__ = "0.1.0"

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def fixture(name: str) -> Path:
    """Path of a bundled hand description, e.g. ``fixture("hand_planar2f.json")``."""
    return FIXTURES / name
