import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cograsp.energy import wrench_resistance
from cograsp.geometry import Plane, make_primitive
from cograsp.oracle import (
    REASONS,
    LabeledExample,
    OracleOptions,
    evaluate_grasp,
    external_wrenches,
    generate_labels,
    task_seed,
)
from cograsp.surrogate import write_jsonl
from cograsp.synthesis import GraspCandidate, synthesize_precise_grasp

from conftest import antipodal_pinch, held_sphere


def _cand(q, mode="precise"):
    return GraspCandidate(np.zeros(6), np.asarray(q, float), mode, 0.0, True, 0)


def test_antipodal_hold_succeeds(planar):
    q, ball = held_sphere(0.005, gap=0.0002)
    out = evaluate_grasp(planar, _cand(q), ball)
    assert out.success and out.reasons == []
    assert out.metrics["min_contact_gap"] == pytest.approx(0.0002, abs=1e-12)
    assert out.metrics["max_penetration"] == 0.0
    assert all(np.isfinite(v) for v in out.metrics.values())


def test_penetration_fails(planar):
    q, ball = held_sphere(0.005, gap=-0.001)
    out = evaluate_grasp(planar, _cand(q), ball)
    assert not out.success and "penetration" in out.reasons
    assert out.metrics["max_penetration"] >= 0.001 - 1e-12


def test_single_finger_touch_fails(planar):
    q, ball = held_sphere(0.005, gap=0.0002)
    q = q.copy()
    q[2] -= 0.2  # swing the index away
    out = evaluate_grasp(planar, _cand(q), ball)
    assert not out.success and "no_contact" in out.reasons


def test_power_needs_three_fingers(planar):
    q, ball = held_sphere(0.005, gap=0.0002)
    out = evaluate_grasp(planar, _cand(q, "power"), ball)
    assert "no_contact" in out.reasons


def test_aperture_reason_carries_over(planar):
    box = make_primitive("box", {"hx": 0.2, "hy": 0.2, "hz": 0.2})
    c = synthesize_precise_grasp(planar, box, 0)
    out = evaluate_grasp(planar, c, box)
    assert "aperture" in out.reasons and not out.success


def test_external_wrenches():
    opts = OracleOptions()
    g, lateral = external_wrenches(opts)
    w = opts.mass * opts.gravity
    assert np.allclose(g, [0, 0, -w, 0, 0, 0])
    assert len(lateral) == 4
    for d in lateral:
        assert d[2] == -w
        assert np.linalg.norm(d[:2]) == pytest.approx(0.5 * w)


@pytest.fixture(scope="module")
def sample_candidates(planar):
    """A handful of synthesized grasps with their objects, success and failure mixed."""
    out = []
    for r in (0.004, 0.007):
        ball = make_primitive("sphere", {"r": r})
        for s in range(4):
            out.append((synthesize_precise_grasp(planar, ball, s), ball))
    q, ball = held_sphere(0.005, 0.0002)
    out.append((_cand(q), ball))
    return out


def test_outcome_invariants(planar, sample_candidates):
    for cand, shape in sample_candidates:
        out = evaluate_grasp(planar, cand, shape)
        assert set(out.reasons) <= set(REASONS)
        assert out.success == (not out.reasons)
        assert all(np.isfinite(v) for v in out.metrics.values())
        if out.success:
            g, lateral = external_wrenches(OracleOptions())
            o = OracleOptions()
            for w in [g] + lateral:
                r = wrench_resistance(out.contacts, o.mu, w, o.m_edges, o.tol, o.max_iter,
                                      reference=shape.center, torque_scale=shape.bounding_radius)
                assert r.feasible


def test_evaluator_deterministic(planar, sample_candidates):
    for cand, shape in sample_candidates:
        a, b = evaluate_grasp(planar, cand, shape), evaluate_grasp(planar, cand, shape)
        assert a.reasons == b.reasons and a.metrics == b.metrics


@settings(max_examples=30, deadline=None)
@given(i=st.integers(0, 8), e1=st.floats(2e-4, 3e-3), de=st.floats(0, 3e-3))
def test_looser_contact_never_breaks_success(planar, sample_candidates, i, e1, de):
    cand, shape = sample_candidates[i]
    tight = evaluate_grasp(planar, cand, shape, OracleOptions(eps_contact=e1))
    loose = evaluate_grasp(planar, cand, shape, OracleOptions(eps_contact=e1 + de))
    assert loose.success or not tight.success


@settings(max_examples=30, deadline=None)
@given(i=st.integers(0, 8), r1=st.floats(0, 2), dr=st.floats(0, 2))
def test_stronger_push_never_creates_success(planar, sample_candidates, i, r1, dr):
    cand, shape = sample_candidates[i]
    weak = evaluate_grasp(planar, cand, shape, OracleOptions(disturbance_ratio=r1))
    strong = evaluate_grasp(planar, cand, shape, OracleOptions(disturbance_ratio=r1 + dr))
    assert weak.success or not strong.success


def test_task_seed():
    assert task_seed(1, 2, 3) == task_seed(1, 2, 3)
    assert task_seed(1, 2, 3) != task_seed(1, 3, 2)
    assert task_seed(1, "x", 0) != task_seed(2, "x", 0)
    assert 0 <= task_seed(7, "label", 1) < 2**63


def test_labeled_example_json():
    e = LabeledExample([0, 0, 0, 0, 0, 1.0], [0.1, 0.2], "sphere:r=0.005#abc", 1, 42, 3)
    assert LabeledExample.from_json(e.to_json()) == e


@pytest.mark.slow
def test_labels_cardinality_direction_and_determinism(planar, tmp_path):
    q, mid = antipodal_pinch(0.012)
    along = Plane(mid, np.array([0, -1.0, 0]))  # normal along the pinch, towards the thumb
    across = Plane(mid, np.array([1.0, 0, 0]))
    objs = [make_primitive("sphere", {"r": 0.005}), make_primitive("sphere", {"r": 0.008})]
    planes = [(along, q), (across, q)]
    labels = generate_labels(planar, planes, objs, 3, global_seed=5)
    assert len(labels) == 12
    rate = [np.mean([e.label for e in labels if e.plane_id == i]) for i in range(2)]
    assert rate[0] > rate[1]
    again = generate_labels(planar, planes, objs, 3, global_seed=5)
    write_jsonl(tmp_path / "a.jsonl", [e.to_json() for e in labels])
    write_jsonl(tmp_path / "b.jsonl", [e.to_json() for e in again])
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
