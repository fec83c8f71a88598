import csv
import warnings

import numpy as np
import pytest

from ghz.coeff_dsl import validate_coefficient_set as coeffs
from ghz.discretization import TorusGrid
from ghz.effective import (
    DriftField, EffectiveError, HamiltonianTable, effective_drift, effective_H_critical,
    effective_H_subcritical, effective_H_supercritical, hessian_Q, invariant_density_supercritical,
    regime_of, steady_density,
)

pytestmark = pytest.mark.filterwarnings("ignore:cross-derivative stencil:RuntimeWarning")

HARMONIC = coeffs([["2 + sin(2*pi*y1)"]], ["0"], "0", 1)


def test_regimes():
    assert [regime_of(a) for a in (2.0, 1.0, 0.5)] == ["supercritical", "critical", "subcritical"]
    with pytest.raises(ValueError):
        regime_of(0.0)


def test_identity_density():
    th = invariant_density_supercritical(coeffs([["1", "0"], ["0", "1"]], ["0", "0"], "0", 2), [0, 0],
                                         n=8)
    assert np.allclose(th.values, 1.0, atol=1e-12)


def test_harmonic_mean_value():
    # (a theta)'' = 0 gives theta = 1 / (a int 1/a), so int a theta = 1 / int(1/a) = sqrt(3)
    assert effective_H_supercritical(HARMONIC, [1.0], [0.0]) == pytest.approx(np.sqrt(3.0), abs=1e-12)


def test_mean_zero_drift_drops_out():
    cs = coeffs([["1"]], ["sin(2*pi*y1)"], "0", 1)
    assert effective_H_supercritical(cs, [1.0], [0.0]) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p", [[0.0, 0.0], [0.7, -0.3], [-1.2, 2.0]])
def test_constant_coefficients_agree_in_all_regimes(p):
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([1.0, -1.0])
    cs = coeffs([["2", "0.5"], ["0.5", "1"]], ["1", "-1"], "3", 2)
    exact = np.dot(p, A @ p) - b @ p + 3.0
    g = TorusGrid.uniform(2, 8)
    assert effective_H_supercritical(cs, p, [0, 0], g) == pytest.approx(exact, abs=1e-10)
    assert effective_H_critical(cs, p, [0, 0], g) == pytest.approx(exact, abs=1e-10)
    est = effective_H_subcritical(cs, p, [0, 0], grid=g)
    assert est.value == pytest.approx(exact, abs=1e-9)
    assert np.allclose(est.sequence, exact, atol=1e-10)


@pytest.mark.parametrize("alpha", [2.0, 1.0, 0.5])
def test_zero_momentum_without_potential(alpha):
    cs = coeffs([["1 + 0.5*cos(2*pi*y1)"]], ["x1 + sin(2*pi*y1)"], "0", 1)
    assert abs(HamiltonianTable(cs, alpha, n=32)([0.0], [0.3])) <= 1e-8


def test_critical_value_refinement():
    cs = coeffs([["1"]], ["sin(2*pi*y1)"], "0", 1)
    lam = {n: effective_H_critical(cs, [0.5], [0.0], n=n) for n in (64, 128, 256)}
    rich = (4 * lam[128] - lam[64]) / 3
    assert abs(rich - lam[256]) < 1e-6
    # Collatz-Wielandt bounds with the constant test vector: range of H(0.5, y)
    assert -0.25 < rich < 0.75


def test_eikonal_limit_from_below():
    cs = coeffs([["1"]], ["0"], "cos(2*pi*y1)", 1)
    errs = []
    for sched in [(0.4, 0.2, 0.1), (0.2, 0.1, 0.05), (0.1, 0.05, 0.025)]:
        est = effective_H_subcritical(cs, [0.0], [0.0], sched, n=256)
        seq = np.array(est.sequence)
        assert np.all(seq < 1.0) and np.all(np.diff(seq) > 0)
        assert "assumed O(eta) rate" in est.flags
        errs.append(abs(est.value - 1.0))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 2e-3


def test_single_viscosity_is_flagged():
    cs = coeffs([["1"]], ["0"], "cos(2*pi*y1)", 1)
    est = effective_H_subcritical(cs, [0.0], [0.0], [0.1], n=64)
    assert "no extrapolation" in est.flags
    assert est.value == est.sequence[0]


def test_schedule_must_decrease():
    with pytest.raises(ValueError):
        effective_H_subcritical(HARMONIC, [0.0], [0.0], [0.1, 0.2])


def test_midpoint_convexity(rng):
    cs = coeffs([["1 + 0.3*sin(2*pi*y1)", "0.2*cos(2*pi*y2)"], ["0.2*cos(2*pi*y2)", "1"]],
                ["sin(2*pi*y2)", "cos(2*pi*y1)"], "0.5*sin(2*pi*(y1 + y2))", 2)
    table = HamiltonianTable(cs, 1.0, n=16)
    for _ in range(5):
        p, q = rng.uniform(-1.5, 1.5, (2, 2))
        mid = table(0.5 * (p + q), [0, 0])
        assert mid <= 0.5 * (table(p, [0, 0]) + table(q, [0, 0])) + 1e-6


def test_drift_examples():
    cs = coeffs([["1", "0"], ["0", "1"]], ["0.5 + sin(2*pi*y2)", "-1 + cos(2*pi*y1)"], "0", 2)
    assert np.allclose(effective_drift(cs, [0, 0], n=16), [0.5, -1.0], atol=1e-12)
    cs = coeffs([["1"]], ["sin(2*pi*y1)"], "0", 1)
    assert abs(effective_drift(cs, [0.0], n=64)[0]) < 1e-12


def test_drift_matches_momentum_gradient():
    cs = coeffs([["1"]], ["2*x1 + sin(2*pi*y1) + 0.3*cos(2*pi*y1)"], "0", 1)
    field = DriftField(cs, 1.0, n=64)
    table = HamiltonianTable(cs, 1.0, n=64)
    for x in (-0.4, 0.1, 0.35):
        assert abs(-table.gradient_p([0.0], [x])[0] - field([x])[0]) <= 1e-4
    th = steady_density(cs, [0.1])
    assert np.all(th.values > 0) and abs(th.values.mean() - 1) < 1e-10


def test_hessian_of_harmonic_example():
    table = HamiltonianTable(HARMONIC, 2.0)
    assert table.hessian_Q([0.0])[0, 0] == pytest.approx(np.sqrt(3.0), abs=1e-8)
    const = HamiltonianTable(coeffs([["2", "0.5"], ["0.5", "1"]], ["0", "0"], "0", 2), 1.0)
    assert np.allclose(const.hessian_Q([0, 0]), [[2, 0.5], [0.5, 1]], atol=1e-8)


def test_hessian_noise_floor():
    table = HamiltonianTable(coeffs([["1"]], ["sin(2*pi*y1)"], "cos(2*pi*y1)", 1), 1.0, n=32)
    with pytest.raises(EffectiveError, match="noise floor"):
        table.hessian_Q([0.0], dp=1e-9)
    with pytest.raises(EffectiveError):
        HamiltonianTable(HARMONIC, 0.5).hessian_Q([0.0])


def test_hessian_rejects_concave():
    with pytest.raises(EffectiveError):
        hessian_Q(lambda p, x: -float(p @ p), [0.0], 1)


def test_table_memo_is_deterministic(tmp_path):
    table = HamiltonianTable(coeffs([["1"]], ["sin(2*pi*y1)"], "0", 1), 1.0, n=32)
    first = table([0.3], [0.0])
    assert table([0.3 + 1e-14], [0.0]) == first
    assert len(table) == 1
    path = tmp_path / "hbar.csv"
    table.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["p1", "x1", "Hbar"]
    assert float(rows[1][0]) == 0.3 and float(rows[1][2]) == pytest.approx(first, rel=1e-14)


def test_resolution_check():
    table = HamiltonianTable(coeffs([["1"]], ["sin(2*pi*y1)"], "0", 1), 1.0, n=64)
    res = table.resolution_check([([0.5], [0.0])])
    assert res["trusted"] and res["max_shift"] < 1e-5


def test_surrogate_exact_for_quadratic_momentum(rng):
    # supercritical: hbar is quadratic in p and affine in x here, so interpolation is exact
    cs = coeffs([["2 + sin(2*pi*y1)"]], ["x1 + cos(2*pi*y1)"], "x1*sin(2*pi*y1)", 1)
    table = HamiltonianTable(cs, 2.0, n=32)
    sur = table.surrogate([(-1.0, 1.0)], 2.0, n_x=3, n_p=5)
    P = rng.uniform(-2, 2, (6, 4, 1))
    X = rng.uniform(-1, 1, (6, 1))
    many = sur.many_p(P, X)
    for m in range(6):
        for k in range(4):
            assert many[m, k] == pytest.approx(table(P[m, k], X[m]), abs=1e-10)
            assert sur(P[m, k], X[m]) == many[m, k]
    with pytest.raises(ValueError):
        sur([2.5], [0.0])


def test_surrogate_closed_form_for_y_free():
    cs = coeffs([["1"]], ["2*x1"], "0", 1)
    sur = HamiltonianTable(cs, 1.0).surrogate([(-1.0, 1.0)], 1.0)
    assert sur.exact
    assert sur(np.array([0.5]), np.array([0.25])) == pytest.approx(0.25 - 0.25, abs=1e-15)


def test_monotone_sequence_not_flagged():
    cs = coeffs([["1"]], ["0"], "cos(2*pi*y1)", 1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = effective_H_subcritical(cs, [0.0], [0.0], [0.1, 0.05], n=32, monotone_tol=10.0)
    assert not caught and "non-monotone sequence" not in est.flags
