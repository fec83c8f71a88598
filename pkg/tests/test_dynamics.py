import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghz.dynamics import (
    NonHyperbolicPointError, find_fixed_points, linearize, sigma_bar, verify_structure,
)
from ghz.matrix_eq import ou_sigma

BOX1 = [(-1.0, 1.0)]
BOX2 = [(-1.0, 1.0), (-1.0, 1.0)]


def double_well(x):
    return np.array([4 * x[0] ** 3 - x[0]])


def test_linear_sink():
    (pt,) = find_fixed_points(lambda x: 2 * x, BOX1)
    assert abs(pt.xi[0]) < 1e-12
    assert pt.B[0, 0] == pytest.approx(2.0, abs=1e-8)
    assert pt.sigma == pytest.approx(-2.0, abs=1e-8)
    assert pt.kind == "sink" and pt.hyperbolic


def test_double_well_points():
    pts = find_fixed_points(double_well, BOX1)
    assert np.allclose([p.xi[0] for p in pts], [-0.5, 0.0, 0.5], atol=1e-9)
    assert np.allclose([p.B[0, 0] for p in pts], [2.0, -1.0, 2.0], atol=1e-6)
    assert np.allclose([p.sigma for p in pts], [-2.0, 0.0, -2.0], atol=1e-6)
    assert [p.kind for p in pts] == ["sink", "source", "sink"]
    for p in pts:
        assert np.linalg.norm(double_well(p.xi)) <= 1e-8
    sb = sigma_bar(pts)
    assert sb.value == 0.0 and sb.unique and abs(sb.maximizers[0].xi[0]) <= 1e-9


def test_no_root_gives_empty_list():
    assert find_fixed_points(lambda x: x + 3.0, BOX1) == []
    with pytest.raises(ValueError):
        sigma_bar([])


def test_symmetric_sinks_tie():
    pts = [linearize(lambda x: 2 * x, [0.0], 1e-4), linearize(lambda x: 2 * x, [0.3], 1e-4)]
    sb = sigma_bar(pts)
    assert not sb.unique and len(sb.maximizers) == 2


def test_single_sink_sigma():
    assert sigma_bar(find_fixed_points(lambda x: 2 * x, BOX1)).value == pytest.approx(-2.0, abs=1e-8)


def test_non_hyperbolic_rejected():
    pt = linearize(lambda x: np.array([x[1], -x[0]]), [0.0, 0.0], 1e-4)
    assert not pt.hyperbolic
    with pytest.raises(NonHyperbolicPointError):
        sigma_bar([pt])


def test_two_dimensional_saddle_and_roots():
    f = lambda x: np.array([x[0] ** 2 - 0.25, -x[1]])
    pts = find_fixed_points(f, BOX2)
    assert np.allclose([p.xi for p in pts], [[-0.5, 0.0], [0.5, 0.0]], atol=1e-9)
    # x' = -f: at x1 = 0.5 the first direction contracts, the second expands
    assert [p.kind for p in pts] == ["source", "saddle"]
    assert pts[1].sigma == pytest.approx(-1.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=4, max_size=4))
def test_sigma_is_nonpositive(entries):
    J = np.array(entries).reshape(2, 2)
    pt = linearize(lambda x: J @ x, [0.0, 0.0], 1e-4)
    assert pt.sigma <= 0.0
    assert (pt.sigma == 0.0) == bool(np.all(pt.eigenvalues.real >= 0))


def test_sigma_matches_ou_identity(rng):
    for _ in range(10):
        J = rng.normal(size=(2, 2))
        pt = linearize(lambda x: J @ x, [0.0, 0.0], 1e-4)
        if not pt.hyperbolic or np.min(np.abs(pt.eigenvalues.real)) < 0.05:
            continue
        M = rng.normal(size=(2, 2))
        Q = M @ M.T + 0.5 * np.eye(2)
        sig, _ = ou_sigma(pt.B, Q)
        assert abs(sig - pt.sigma) <= 1e-8


def test_structure_double_well():
    pts = find_fixed_points(double_well, BOX1)
    rep = verify_structure(double_well, pts, BOX1, n_orbit_seeds=8)
    assert rep.verdict == "pass"
    assert rep.connections == [(1, 0), (1, 2)]
    assert not rep.has_cycle
    assert rep.backward["undetermined"] == 0
    assert "structure verdict: pass" in rep.to_text()


def test_structure_source():
    f = lambda x: -2 * x
    pts = find_fixed_points(f, BOX1)
    assert pts[0].kind == "source" and pts[0].sigma == 0.0
    rep = verify_structure(f, pts, BOX1)
    assert rep.verdict == "pass" and not rep.has_cycle
    assert rep.connections == []


def test_structure_rotation_inconclusive():
    f = lambda x: np.array([x[1], -x[0]])
    pt = linearize(f, [0.0, 0.0], 1e-4)
    rep = verify_structure(f, [pt], BOX2, n_orbit_seeds=3, horizon=20.0)
    assert rep.verdict == "inconclusive"
    assert any("hyperbolic" in e for e in rep.evidence)


def test_structure_with_tabulated_drift():
    pts = find_fixed_points(double_well, BOX1)
    rep = verify_structure(double_well, pts, BOX1, n_orbit_seeds=4, tabulate=65)
    assert rep.verdict == "pass"
