import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cograsp.energy import (
    PowerWeights,
    e_power,
    e_precise,
    grasp_energy_terms,
    grasp_map,
    net_wrench,
    sample_fingertip_contacts,
    wrench_resistance,
)
from cograsp.geometry import Plane, make_primitive, plane_sdf
from cograsp.kinematics import RigidTransform, forward_kinematics, rotvec_to_matrix

from conftest import thumb_q


def test_contact_at_rest(planar):
    cs = sample_fingertip_contacts(planar, thumb_q(0, 0), ["thumb"], 1)
    assert np.allclose(cs.x[0], [0.09, 0, 0], atol=1e-12)
    assert np.allclose(cs.c[0], [0, 1, 0], atol=1e-12)


def test_contact_normal_rotates(planar):
    cs = sample_fingertip_contacts(planar, thumb_q(np.pi / 2, 0), ["thumb"], 1)
    assert np.allclose(cs.c[0], [-1, 0, 0], atol=1e-12)


def test_contact_count_and_unit_normals(four):
    q = np.full(four.dof, 0.3)
    cs = sample_fingertip_contacts(four, q, ["thumb", "index"], 7)
    assert len(cs.x) == 14 and cs.n_per_finger == 7
    assert np.abs(np.linalg.norm(cs.c, axis=1) - 1).max() <= 1e-9
    # more contacts than stored samples repeat cyclically
    n_stored = len(four.samples("thumb").points)
    assert np.array_equal(cs.sample[:7], np.arange(7) % n_stored)


def test_contacts_lie_on_cover(planar):
    P_local = Plane(np.array([0, 0.004, 0.0]), np.array([0.1, 1.0, 0.2]))
    q = thumb_q(0.4, 0.3)
    cs = sample_fingertip_contacts(planar, q, ["thumb"], 4, covers={"thumb": P_local})
    T = forward_kinematics(planar, q)["thumb_tip"]
    local = T.inverse().apply(cs.x)
    assert np.abs(plane_sdf(P_local, local)).max() <= 1e-9


def test_contact_errors(planar):
    with pytest.raises(ValueError):
        sample_fingertip_contacts(planar, planar.zero_config(), ["thumb"], 0)
    with pytest.raises(ValueError):
        sample_fingertip_contacts(planar, planar.zero_config(), [], 1)


def test_grasp_map_structure():
    x = np.random.default_rng(0).normal(size=(5, 3))
    G = grasp_map(x)
    assert G.shape == (6, 15)
    for i in range(5):
        assert np.array_equal(G[:3, 3 * i:3 * i + 3], np.eye(3))
        S = G[3:, 3 * i:3 * i + 3]
        assert np.abs(S + S.T).max() <= 1e-12
        assert np.allclose(S @ np.array([1.0, 2, 3]), np.cross(x[i], [1.0, 2, 3]))


@pytest.mark.parametrize("x, c, expected", [
    ([[0.01, 0, 0], [-0.01, 0, 0]], [[-1, 0, 0], [1, 0, 0]], 0.0),
    ([[0, 0, 0]], [[0, 0, 1]], 1.0),
    ([[0.01, 0.005, 0], [-0.01, 0, 0]], [[-1, 0, 0], [1, 0, 0]], 0.005),
])
def test_e_precise_examples(x, c, expected):
    x, c = np.array(x, float), np.array(c, float)
    assert e_precise((x, c)) == pytest.approx(expected, abs=1e-15)
    # hand-assembled map about the centroid gives the same number
    G = grasp_map(x, x.mean(axis=0))
    assert np.linalg.norm(G @ c.ravel()) == pytest.approx(expected, abs=1e-15)


def _random_contacts(seed, m=6):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m, 3)) * 0.01
    c = rng.normal(size=(m, 3))
    return x, c / np.linalg.norm(c, axis=1, keepdims=True)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rv=st.tuples(*[st.floats(-3, 3)] * 3))
def test_e_precise_rotation_invariant(seed, rv):
    x, c = _random_contacts(seed)
    x = x - x.mean(axis=0)
    R = rotvec_to_matrix(np.array(rv))
    assert abs(e_precise((x @ R.T, c @ R.T)) - e_precise((x, c))) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(1e-3, 1e3))
def test_e_precise_scales_with_normals(seed, s):
    x, c = _random_contacts(seed)
    assert e_precise((x, s * c)) == pytest.approx(s * e_precise((x, c)), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.tuples(*[st.floats(-1, 1)] * 3), k=st.integers(1, 4))
def test_e_precise_zero_for_antipodal_pairs(seed, t, k):
    # each pair sits at ref +- r_i with normals along -+r_i
    rng = np.random.default_rng(seed)
    r = rng.normal(size=(k, 3)) * 0.01
    ref = np.array(t)
    X = np.vstack([ref + r, ref - r])
    C = np.vstack([-r, r]) * rng.uniform(0.5, 2, size=(2 * k, 1))[[*range(k)] * 2]
    assert e_precise((X, C)) <= 1e-12


def test_point_reflection_alone_does_not_cancel_torque():
    x = np.array([[0.01, 0, 0], [-0.01, 0, 0]])
    c = np.array([[0, 1.0, 0], [0, -1.0, 0]])
    assert e_precise((x, c)) == pytest.approx(0.02)


def test_e_precise_translation_invariant():
    x, c = _random_contacts(1)
    assert e_precise((x + 5.0, c)) == pytest.approx(e_precise((x, c)), abs=1e-12)


def test_power_far_fingers_is_distance_only(slider):
    ball = make_primitive("sphere", {"r": 0.005})
    q = np.zeros(2)
    t = grasp_energy_terms(slider, q, np.zeros(6), ball, slider.finger_names, 1, with_grad=False)
    assert t["wrench"] == pytest.approx(0, abs=1e-15)
    assert t["pen"] == 0
    assert e_power(slider, q, ball, n=1) == pytest.approx(10 * 0.03, abs=1e-15)


def test_power_penetration_term(slider):
    ball = make_primitive("sphere", {"r": 0.005})
    q = np.array([0.016, 0.01])  # thumb 1 mm inside, index well outside
    t = grasp_energy_terms(slider, q, np.zeros(6), ball, slider.finger_names, 1, with_grad=False)
    assert t["pen"] == pytest.approx(0.001 ** 2, rel=1e-9)
    w = PowerWeights()
    assert e_power(slider, q, ball, w, n=1) == pytest.approx(w.dist * (0.001 + 0.025) + w.pen * 1e-6, rel=1e-9)


def test_orthogonal_antipodal_pairs_zero():
    r = 0.01
    ball = make_primitive("sphere", {"r": r})
    d = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0.0]])
    x, c = r * d, -d
    assert e_precise((x, c)) == 0.0
    assert np.abs(ball.sdf(x)[0]).sum() <= 1e-15
    assert np.linalg.norm(grasp_map(x, x.mean(axis=0)) @ c.ravel()) == 0.0


def test_power_rejects_unsigned_cloud(slider):
    from cograsp.geometry import cloud_shape
    cloud = cloud_shape(make_primitive("sphere", {"r": 0.01}).cloud)
    with pytest.raises(ValueError):
        e_power(slider, np.zeros(2), cloud)


def _fd(f, z, h=1e-6):
    out = np.zeros(len(z))
    for k in range(len(z)):
        e = np.zeros(len(z))
        e[k] = h
        out[k] = (f(z + e) - f(z - e)) / (2 * h)
    return out


@pytest.mark.parametrize("name", ["planar", "four"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_precise_energy_gradient_matches_fd(request, name, seed):
    model = request.getfixturevalue(name)
    rng = np.random.default_rng(seed)
    q = rng.uniform(model.lower, model.upper)
    wp = np.concatenate([rng.normal(size=3) * 0.01, rng.normal(size=3)])
    ball = make_primitive("sphere", {"r": 0.01}, count=32)
    fingers = ["thumb", "index"]
    t = grasp_energy_terms(model, q, wp, ball, fingers, 4)
    if t["wrench"] < 1e-6:
        return
    z = np.concatenate([wp, q])

    def f(z):
        return grasp_energy_terms(model, z[6:], z[:6], ball, fingers, 4, with_grad=False)["wrench"]

    fd = _fd(f, z)
    assert np.linalg.norm(t["g_wrench"] - fd) <= 1e-4 * np.linalg.norm(fd) + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_power_energy_gradient_matches_fd(four, seed):
    rng = np.random.default_rng(seed)
    q = rng.uniform(four.lower, four.upper)
    wp = np.concatenate([rng.normal(size=3) * 0.02, rng.normal(size=3)])
    ball = make_primitive("sphere", {"r": 0.04}, count=32)
    w = PowerWeights()
    z = np.concatenate([wp, q])
    h = 1e-6

    def terms(z):
        return grasp_energy_terms(four, z[6:], z[:6], ball, four.finger_names, 4, with_grad=False)

    # skip kinks: sign flips of a contact gap or a change of the penetrating set within the stencil
    for e in np.eye(len(z)) * h:
        a, b = terms(z + e), terms(z - e)
        if np.any(np.sign(a["gap"]) != np.sign(b["gap"])) or np.any((a["depth"] > 0) != (b["depth"] > 0)):
            return
    t = grasp_energy_terms(four, q, wp, ball, four.finger_names, 4)
    g = w.wrench * t["g_wrench"] + w.dist * t["g_dist"] + w.pen * t["g_pen"]
    fd = _fd(lambda z: e_power(four, z[6:], ball, w, RigidTransform.from_params(z[:6])), z, h)
    assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd) + 1e-9


def test_wrench_zero_external():
    x, c = _random_contacts(2)
    r = wrench_resistance((x, c), 0.5, np.zeros(6))
    assert r.feasible and r.residual == 0.0 and not r.lambdas.any()


def test_single_contact_cannot_pull():
    r = wrench_resistance((np.zeros((1, 3)), np.array([[0, 0, 1.0]])), 0.5, [0, 0, 1, 0, 0, 0])
    assert not r.feasible
    assert r.residual == pytest.approx(1.0, rel=1e-6)


def test_antipodal_pair_resists_lateral_push():
    x = np.array([[0.01, 0, 0], [-0.01, 0, 0]])
    c = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
    r = wrench_resistance((x, c), 0.5, [0, 0.1, 0, 0, 0, 0], m_edges=8)
    assert r.feasible and r.residual < 1e-4
    # independent check of the returned multipliers
    from cograsp.energy import cone_generators
    A = cone_generators(x, c, 0.5, 8, torque_scale=0.01)
    assert np.linalg.norm(A @ r.lambdas + np.array([0, 0.1, 0, 0, 0, 0])) == pytest.approx(r.residual, abs=1e-12)
    assert (r.lambdas >= 0).all()


def test_wrench_argument_checks():
    x, c = _random_contacts(0)
    with pytest.raises(ValueError):
        wrench_resistance((x, c), 0.0, np.zeros(6))
    with pytest.raises(ValueError):
        wrench_resistance((x, c), 0.5, np.zeros(6), m_edges=3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mu=st.floats(0.1, 1.0), dmu=st.floats(0.0, 1.0))
def test_wrench_residual_monotone_in_mu(seed, mu, dmu):
    rng = np.random.default_rng(seed)
    x, c = _random_contacts(seed, 3)
    w = rng.normal(size=6)
    lo = wrench_resistance((x, c), mu, w, max_iter=4000).residual
    hi = wrench_resistance((x, c), mu + dmu, w, max_iter=4000).residual
    assert hi <= lo + 1e-6 * max(1.0, lo)


def test_net_wrench_matches_grasp_map():
    x, c = _random_contacts(9, 8)
    assert np.allclose(net_wrench(x, c), grasp_map(x, x.mean(axis=0)) @ c.ravel(), atol=1e-15)
