import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import Delaunay

from cograsp import fixture
from cograsp.design import (
    DesignOptions,
    DesignWeights,
    design_energy,
    design_terms,
    directional_manipulability,
    e_rep_hinge,
    e_rep_indicator,
    generate_cover,
    generate_covers,
    localize_plane,
    make_covers,
    optimize_plane,
    read_obj,
    read_stl,
    write_obj,
    write_stl,
)
from cograsp.energy import local_contact_samples
from cograsp.geometry import DegenerateHullError, Plane, plane_sdf
from cograsp.kinematics import RigidTransform, forward_kinematics, parse_hand, rotvec_to_matrix

from conftest import thumb_q


@pytest.fixture(scope="module")
def tri():
    """Prismatic fixture whose thumb carries two contact samples and the index one: three points in all."""
    d = json.loads(fixture("hand_prismatic2f.json").read_text())
    d["fingertip_samples"] = {
        "thumb_tip": [{"point": [0.0, 0.01, 0.003], "normal": [1, 0, 0]},
                      {"point": [0.0, -0.005, 0.0], "normal": [1, 0, 0]}],
        "index_tip": [{"point": [0.0, 0.0, 0.004], "normal": [-1, 0, 0]}],
    }
    d["surface_samples"] = {"thumb_tip": [[0.0, 0.0, 0.0]], "index_tip": [[0.0, 0.0, 0.0]]}
    return parse_hand(d)


def test_att_zero_when_contacts_on_plane(slider):
    P = Plane(np.zeros(3), np.array([0, 0, 1.0]))
    e = design_energy(P, slider, np.array([0.005, -0.01]), n_contacts=1)
    assert e["E_att"] == 0.0


def test_rep_hinge_example():
    phi = np.array([1.0, -0.2, -0.3])
    assert e_rep_hinge(phi) == pytest.approx(0.5, abs=1e-15)
    assert e_rep_hinge(phi) == e_rep_indicator(phi)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(0, 300))
def test_rep_forms_identical(seed, n):
    rng = np.random.default_rng(seed)
    P = Plane(rng.normal(size=3), rng.normal(size=3))
    phi = plane_sdf(P, rng.normal(size=(n, 3))) if n else np.zeros(0)
    assert e_rep_hinge(phi) - e_rep_indicator(phi) == 0.0


def test_manipulability_example(planar):
    m = directional_manipulability(planar, thumb_q(0, 0), "thumb", [0, 1, 0])
    assert m == pytest.approx(np.hypot(0.09, 0.04), abs=1e-12)
    assert m == pytest.approx(0.098489, abs=1e-6)


def test_mani_is_minus_sum_over_pinch_fingers(planar):
    q = np.array([0.2, 0.5, 0.4, 0.1])
    n = np.array([0.3, 0.9, 0.1])
    n /= np.linalg.norm(n)
    e = design_energy(Plane(np.zeros(3), n), planar, q)
    expect = -(directional_manipulability(planar, q, "thumb", n) + directional_manipulability(planar, q, "index", n))
    assert e["E_mani"] == pytest.approx(expect, abs=1e-15)


def test_total_is_weighted_sum(planar):
    w = DesignWeights(att=2.0, rep=3.0, mani=0.5)
    e = design_energy(Plane(np.array([0.08, 0.02, 0]), np.array([0.1, 1, 0.2])), planar, np.full(4, 0.3), w)
    assert e["total"] == pytest.approx(2 * e["E_att"] + 3 * e["E_rep"] + 0.5 * e["E_mani"], abs=1e-15)


def test_repulsion_sides(planar):
    # mid-line plane with the normal towards the thumb: each body on its own side
    q = np.array([0.25, -0.25, 0.25, -0.25])
    P = Plane(np.array([0.0, 0.0175, 0.0]), np.array([0, -1.0, 0]))
    assert design_energy(P, planar, q)["E_rep"] == 0.0
    assert design_energy(P.flipped(), planar, q)["E_rep"] > 0.0


def _fd_design(model, theta, q, key, h=1e-6):
    def f(th, qq):
        return design_terms(model, th, qq, grad=False)[key]

    gt = np.array([(f(theta + e, q) - f(theta - e, q)) / (2 * h) for e in np.eye(6) * h])
    gq = np.array([(f(theta, q + e) - f(theta, q - e)) / (2 * h) for e in np.eye(len(q)) * h])
    return gt, gq


def _near_kink(model, theta, q, h=1e-6):
    # any contact or body sample within the stencil of the plane
    p, n = theta[:3], theta[3:] / np.linalg.norm(theta[3:])
    links = forward_kinematics(model, q)
    for f in model.finger_names:
        T = links[model.finger(f).tip_link]
        pts = [T.apply(model.samples(f).surface)]
        if f in (model.thumb, model.index):
            pts.append(T.apply(local_contact_samples(model, f, 4)[0]))
        if np.abs((np.vstack(pts) - p) @ n).min() < 1e-4:
            return True
    return False


@pytest.mark.parametrize("name", ["planar", "four"])
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_design_gradients_match_fd(request, name, seed):
    model = request.getfixturevalue(name)
    rng = np.random.default_rng(seed)
    q = rng.uniform(model.lower, model.upper)
    theta = np.concatenate([rng.normal(size=3) * 0.03 + [0.08, 0.03, 0], rng.normal(size=3)])
    if _near_kink(model, theta, q):
        return
    t = design_terms(model, theta, q)
    for key in ("att", "rep", "mani"):
        gt, gq = _fd_design(model, theta, q, key)
        g = np.concatenate([t["g_theta_" + key], t["g_q_" + key]])
        fd = np.concatenate([gt, gq])
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd) + 1e-9, key


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(-1, 1))
def test_energies_invariant_to_in_plane_shift(planar, seed, s):
    rng = np.random.default_rng(seed)
    q = rng.uniform(planar.lower, planar.upper)
    P = Plane(rng.normal(size=3) * 0.05, rng.normal(size=3))
    t = np.cross(P.n, rng.normal(size=3))
    t /= np.linalg.norm(t)
    a = design_energy(P, planar, q)
    b = design_energy(Plane(P.p + s * t, P.n), planar, q)
    for k in a:
        assert abs(a[k] - b[k]) <= 1e-9


def test_optimize_history_non_increasing(planar):
    res = optimize_plane(planar, opts=DesignOptions(iterations=40, batch=4))
    totals = [h["total"] for h in res.history]
    assert np.all(np.diff(totals) <= 0)
    assert abs(np.linalg.norm(res.plane.n) - 1) < 1e-12
    assert np.all(res.q_batch >= planar.lower) and np.all(res.q_batch <= planar.upper)
    assert set(res.history[0]) == {"iter", "E_att", "E_rep", "E_mani", "E_phys", "total"}


def test_repulsion_only_clears_the_fingers(planar):
    q = np.array([[0.25, -0.25, 0.25, -0.25], [0.3, -0.2, 0.3, -0.2]])
    # tilted plane cutting through both tips
    P0 = Plane(np.array([0.0875, 0.0175, 0.0]), np.array([1.0, 0.3, 0.0]))
    assert sum(design_energy(P0, planar, qq)["E_rep"] for qq in q) > 1e-3
    opts = DesignOptions(iterations=300, weights=DesignWeights(att=0, rep=1, mani=0))
    res = optimize_plane(planar, opts=opts, q_init=q, plane_init=P0)
    assert res.history[-1]["E_rep"] <= 1e-6


def test_attraction_only_interpolates_three_points(tri):
    q = np.zeros((1, 2))
    links = forward_kinematics(tri, q[0])
    pts = np.vstack([links["thumb_tip"].apply(local_contact_samples(tri, "thumb", 2)[0]),
                     links["index_tip"].apply(local_contact_samples(tri, "index", 1)[0])])
    n_true = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    n_true /= np.linalg.norm(n_true)
    P0 = Plane(pts.mean(axis=0) + 0.002 * n_true, n_true + np.array([0.05, -0.03, 0.02]))
    opts = DesignOptions(iterations=500, n_contacts=2, optimize_q=False, weights=DesignWeights(att=1, rep=0, mani=0))
    res = optimize_plane(tri, opts=opts, q_init=q, plane_init=P0)
    assert res.history[-1]["E_att"] <= 1e-9
    assert abs(abs(res.plane.n @ n_true) - 1) <= 1e-9
    assert np.abs(plane_sdf(res.plane, pts)).max() <= 1e-9


def test_optimize_errors(planar):
    with pytest.raises(ValueError, match="empty"):
        optimize_plane(planar, opts=DesignOptions(batch=0))
    with pytest.raises(ValueError, match="empty"):
        optimize_plane(planar, q_init=np.zeros((0, 4)))
    with pytest.raises(ValueError, match="object"):
        optimize_plane(planar, surrogate=object(), opts=DesignOptions(weights=DesignWeights(phys=1.0)))


def test_anchor_is_lowest_member(planar):
    res = optimize_plane(planar, opts=DesignOptions(iterations=20, batch=5))
    per = [design_energy(res.plane, planar, q)["total"] for q in res.q_batch]
    assert res.anchor == int(np.argmin(per))
    assert np.array_equal(res.q_anchor, res.q_batch[res.anchor])


def test_localize_plane_examples():
    P = Plane(np.array([0.1, 0.2, 0.3]), np.array([1.0, 0, 0]))
    assert np.array_equal(localize_plane(P, RigidTransform()).params(), P.params())
    t = np.array([0.01, -0.02, 0.03])
    L = localize_plane(P, RigidTransform(np.eye(3), t))
    assert np.allclose(L.p, P.p - t) and np.array_equal(L.n, P.n)
    R = rotvec_to_matrix(np.array([0, 0, np.pi / 2]))
    assert np.allclose(localize_plane(P, RigidTransform(R, np.zeros(3))).n, [0, -1, 0], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(w=st.tuples(*[st.floats(-1, 1)] * 6), seed=st.integers(0, 1000))
def test_localize_round_trip(w, seed):
    rng = np.random.default_rng(seed)
    P = Plane(rng.normal(size=3), rng.normal(size=3))
    T = RigidTransform.from_params(np.array(w))
    L = localize_plane(P, T)
    assert np.allclose(T.apply(L.p), P.p, atol=1e-12)
    assert np.allclose(T.rotation @ L.n, P.n, atol=1e-12)


def test_covers_put_each_body_on_positive_side(planar):
    q = np.array([0.25, -0.25, 0.25, -0.25])
    P = Plane(np.array([0.0, 0.0175, 0.0]), np.array([0, -1.0, 0]))
    for f, L in make_covers(planar, P, q).items():
        assert plane_sdf(L, planar.samples(f).surface).min() > 0


def _assert_valid_cover(cover, pts):
    m = cover.mesh
    assert m.is_watertight()
    assert m.euler_characteristic() == 2
    flat = cover.flat_face()
    assert len(flat) > 0
    assert np.abs(plane_sdf(cover.plane, m.vertices[np.unique(m.faces[flat])])).max() <= 1e-9
    assert plane_sdf(cover.plane, m.vertices).min() >= -1e-12
    inside = Delaunay(m.vertices).find_simplex(pts[plane_sdf(cover.plane, pts) >= 0], tol=1e-12)
    assert np.all(inside >= 0)


def test_tetrahedron_cover():
    s = 0.004
    tet = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1.0]]) * s / np.sqrt(3)
    tet[:, 2] += 0.005 - tet[:, 2].min()
    P = Plane(np.zeros(3), np.array([0, 0, -1.0]))
    cover = generate_cover(P.flipped(), tet, 1e-3)
    _assert_valid_cover(cover, tet)
    assert cover.mesh.area(cover.flat_face()) > 0


def test_zero_inflation_touching_plane():
    pts = np.array([[0, 0, 0], [0.003, 0, 0.002], [0, 0.003, 0.001], [0.002, 0.002, 0.004]])
    cover = generate_cover(Plane(np.zeros(3), np.array([0, 0, 1.0])), pts, 0.0)
    _assert_valid_cover(cover, pts)
    assert cover.mesh.area(cover.flat_face()) > 0


def test_degenerate_cover():
    # collinear samples already on the plane have no volume to hull
    pts = np.array([[0, 0, 0], [0.001, 0, 0], [0.002, 0, 0], [0.003, 0, 0.0]])
    with pytest.raises(DegenerateHullError):
        generate_cover(Plane(np.zeros(3), np.array([0, 0, 1.0])), pts, 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), infl=st.floats(1e-4, 2e-3))
def test_random_covers_are_valid(seed, infl):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(int(rng.integers(4, 40)), 3)) * 0.003
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    # plane somewhere below the highest sample so some body stays above it
    P = Plane(pts[np.argmax(pts @ n)] - rng.uniform(1e-4, 0.01) * n, n)
    _assert_valid_cover(generate_cover(P, pts, infl), pts)


def test_fixture_covers_valid(planar):
    res = optimize_plane(planar, opts=DesignOptions(iterations=30, batch=4))
    covers = generate_covers(planar, res.plane, res.q_anchor)
    assert set(covers) == {"thumb", "index"}
    for f, c in covers.items():
        _assert_valid_cover(c, planar.samples(f).surface)


@pytest.mark.parametrize("fmt", ["stl", "obj"])
def test_mesh_round_trip(tmp_path, fmt):
    rng = np.random.default_rng(1)
    cover = generate_cover(Plane(np.zeros(3), np.array([0, 0, 1.0])), rng.normal(size=(20, 3)) * 0.003, 1e-3)
    path = tmp_path / f"c.{fmt}"
    (write_stl if fmt == "stl" else write_obj)(path, cover.mesh)
    back = (read_stl if fmt == "stl" else read_obj)(path)
    a = cover.mesh.vertices[np.lexsort(cover.mesh.vertices.T)]
    b = back.vertices[np.lexsort(back.vertices.T)]
    assert a.shape == b.shape and np.abs(a - b).max() <= 1e-12
    assert back.is_watertight()
    assert back.volume() == pytest.approx(cover.mesh.volume(), rel=1e-12)
