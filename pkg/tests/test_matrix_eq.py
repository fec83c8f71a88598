import numpy as np
import pytest
from scipy.integrate import quad_vec

from ghz.coeff_dsl import validate_coefficient_set as coeffs
from ghz.discretization import BoxGrid, assemble_dirichlet
from ghz.matrix_eq import (
    MatrixEquationError, NonHyperbolicError, SingularLyapunovError, bernoulli_max, lyapunov_pair,
    ou_sigma, quadratic_barrier, riccati_delta, solve_lyapunov, spectral_projectors,
)
from ghz.spectral import principal_eigenpair

DIAG = np.diag([2.0, -3.0])


def random_hyperbolic(rng, n, margin=0.1):
    while True:
        B = rng.normal(size=(n, n))
        if np.min(np.abs(np.linalg.eigvals(B).real)) > margin:
            return B


def random_pd(rng, n):
    M = rng.normal(size=(n, n))
    return M @ M.T + 0.5 * np.eye(n)


# -- projectors -------------------------------------------------------------------

def test_projectors_diagonal():
    pp = spectral_projectors(DIAG)
    assert np.allclose(pp.stable, np.diag([1.0, 0.0]), atol=1e-14)
    assert np.allclose(pp.unstable, np.diag([0.0, 1.0]), atol=1e-14)
    assert (pp.n_stable, pp.n_unstable) == (1, 1)


def test_projectors_triangular():
    # eigenvectors (1, 0) for 2 and (1, -5) for -3
    pp = spectral_projectors([[2.0, 1.0], [0.0, -3.0]])
    assert np.allclose(pp.stable, [[1.0, 0.2], [0.0, 0.0]], atol=1e-13)


def test_rotation_is_not_hyperbolic():
    with pytest.raises(NonHyperbolicError):
        spectral_projectors([[0.0, 1.0], [-1.0, 0.0]])


def test_projector_identities_random(rng):
    for _ in range(100):
        n = int(rng.integers(2, 5))
        B = random_hyperbolic(rng, n)
        defects = spectral_projectors(B).identity_defects(B)
        assert max(defects.values()) <= 1e-10 * max(1.0, np.abs(B).max())


# -- Lyapunov ---------------------------------------------------------------------

def test_lyapunov_examples():
    assert solve_lyapunov([[2.0]], [[4.0]])[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(solve_lyapunov(DIAG, np.eye(2)), np.diag([0.25, -1.0 / 6.0]), atol=1e-14)
    # eigenvalues 1 and -1 sum to zero: the operator is singular even though this C is consistent
    with pytest.raises(SingularLyapunovError):
        solve_lyapunov(np.diag([1.0, -1.0]), np.eye(2))


def test_lyapunov_singular():
    with pytest.raises(SingularLyapunovError) as info:
        solve_lyapunov([[0.0, 1.0], [0.0, 0.0]], np.eye(2))
    assert info.value.smallest_singular_value < 1e-12


def test_lyapunov_pair_diagonal():
    A_s, A_u = lyapunov_pair(DIAG)
    assert np.allclose(A_s, np.diag([0.25, 0.0]), atol=1e-14)
    assert np.allclose(A_u, np.diag([0.0, 1.0 / 6.0]), atol=1e-14)
    A_s, A_u = lyapunov_pair([[2.0]])
    assert A_u[0, 0] == 0.0 and A_s[0, 0] == pytest.approx(0.25)


def test_lyapunov_pair_matches_integrals(rng):
    # B = S diag(lam) S^-1, so exp(B t) Ps = S diag(exp(lam t) [lam > 0]) S^-1 without leakage
    for _ in range(3):
        lam = rng.choice([-1, 1], 3) * rng.uniform(0.3, 2.0, 3)
        lam[0], lam[1] = abs(lam[0]), -abs(lam[1])
        S = rng.normal(size=(3, 3)) + 2 * np.eye(3)
        Si = np.linalg.inv(S)
        B = S @ np.diag(lam) @ Si
        pp = spectral_projectors(B)
        Ps, Pu = pp.stable, pp.unstable
        assert np.allclose(Ps, S @ np.diag((lam > 0).astype(float)) @ Si, atol=1e-10)
        A_s, A_u = lyapunov_pair(B)
        assert np.abs(B @ A_s + A_s @ B.T - Ps @ Ps.T).max() <= 1e-10 * max(1, np.abs(A_s).max())
        assert np.abs(B @ A_u + A_u @ B.T + Pu @ Pu.T).max() <= 1e-10 * max(1, np.abs(A_u).max())

        def flow(t, mask):
            E = S @ np.diag(np.where(mask, np.exp(lam * t), 0.0)) @ Si
            return E @ E.T

        T = 40.0 / 0.6
        Is, _ = quad_vec(lambda t: flow(t, lam > 0), -T, 0.0, epsabs=1e-12)
        Iu, _ = quad_vec(lambda t: flow(t, lam < 0), 0.0, T, epsabs=1e-12)
        assert np.abs(Is - A_s).max() < 1e-8 * max(1, np.abs(A_s).max())
        assert np.abs(Iu - A_u).max() < 1e-8 * max(1, np.abs(A_u).max())
        for A in (A_s, A_u):
            assert np.linalg.eigvalsh(A).min() >= -1e-10


# -- Riccati and Bernoulli -----------------------------------------------------

@pytest.mark.parametrize("delta", [1e-1, 1e-2, 1e-4, 1e-6])
def test_riccati_scalar_closed_form(delta):
    # 4 G^2 - 4 G - delta = 0
    G = riccati_delta([[2.0]], [[1.0]], delta)[0, 0]
    assert G == pytest.approx((1 + np.sqrt(1 + delta)) / 2, abs=1e-13)
    assert abs(G - 1) <= delta


def test_riccati_diagonal_blocks():
    d = 1e-6
    G = riccati_delta(DIAG, np.eye(2), d)
    # per entry: 4 g^2 - 2 b g - d = 0 with b = 2 and b = -3
    g1 = (4 + np.sqrt(16 + 16 * d)) / 8
    g2 = (-6 + np.sqrt(36 + 16 * d)) / 8
    assert np.allclose(G, np.diag([g1, g2]), atol=1e-13)
    assert G[1, 1] == pytest.approx(d / 6, rel=1e-5)


def test_riccati_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        riccati_delta(DIAG, np.eye(2), 0.0)


def test_bernoulli_examples():
    sol = bernoulli_max(DIAG, np.eye(2))
    assert np.allclose(sol.gamma, np.diag([1.0, 0.0]), atol=1e-14)
    assert sol.sigma == pytest.approx(-2.0, abs=1e-14)
    assert sol.route == "subspace"
    sol = bernoulli_max(np.diag([1.0, -1.0]), np.eye(2))
    assert np.allclose(sol.gamma, np.diag([0.5, 0.0]), atol=1e-14)
    assert sol.sigma == pytest.approx(-1.0, abs=1e-14)


def test_bernoulli_requires_pd_q():
    with pytest.raises(ValueError):
        bernoulli_max(DIAG, np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        bernoulli_max(DIAG, [[1.0, 0.5], [0.0, 1.0]])


def test_bernoulli_invariants_random(rng):
    for _ in range(100):
        n = int(rng.integers(2, 5))
        B = random_hyperbolic(rng, n)
        Q = random_pd(rng, n)
        sol = bernoulli_max(B, Q)
        d = sol.invariant_defects(B, Q)
        scale = max(1.0, np.abs(B).max())
        assert d["symmetry"] <= 1e-12 and d["min_eig"] >= -1e-10
        assert d["residual"] <= 1e-9 * scale
        assert d["range"] <= 1e-8
        # oracle: sum of the positive real parts of eig(B)
        ev = np.linalg.eigvals(B)
        assert abs(2 * np.trace(Q @ sol.gamma) - ev.real[ev.real > 0].sum()) <= 1e-8 * scale


def test_gamma_positive_on_stable_range(rng):
    for _ in range(30):
        n = int(rng.integers(2, 5))
        B = random_hyperbolic(rng, n)
        sol = bernoulli_max(B, random_pd(rng, n))
        PsT = sol.projectors.stable.T
        if sol.projectors.n_stable == 0:
            continue
        U, s, _ = np.linalg.svd(PsT)
        W = U[:, : sol.projectors.n_stable]
        gamma_min = np.linalg.eigvalsh(W.T @ sol.gamma @ W).min()
        assert gamma_min > 0
        for _ in range(50):
            v = rng.normal(size=n)
            v /= np.linalg.norm(v)
            w = np.linalg.norm(PsT @ v)
            if w >= 0.1:
                assert v @ sol.gamma @ v >= gamma_min * w**2 * (1 - 1e-9)


def test_delta_continuation_is_monotone(rng):
    for _ in range(20):
        B = random_hyperbolic(rng, 3, margin=0.2)
        sol = bernoulli_max(B, random_pd(rng, 3))
        info = sol.cross_check
        assert info["monotone"]
        assert info["extrapolated_gap"] <= 1e-6


def test_ou_sigma_examples():
    sig, G = ou_sigma([[2.0]], [[1.0]])
    assert sig == pytest.approx(-2.0) and G[0, 0] == pytest.approx(1.0)
    sig, G = ou_sigma(DIAG, np.eye(2))
    assert sig == pytest.approx(-2.0) and np.allclose(G, np.diag([1.0, 0.0]))


def test_ou_sigma_against_discrete_operator():
    # u'' + 2 z u' on (-4, 4): principal eigenvalue and profile exp(-z^2)
    op = assemble_dirichlet(coeffs([["1"]], ["2*x1"], "0", 1), BoxGrid.uniform(((-4.0, 4.0),), 1024), 1.0, 1.0)
    pair = principal_eigenpair(op)
    sig, G = ou_sigma([[2.0]], [[1.0]])
    assert abs(pair.eigenvalue - sig) < 1e-3
    z = op.grid.axes()[0]
    assert np.abs(pair.eigenfunction.values - np.exp(-G[0, 0] * z**2)).max() < 1e-3


# -- barriers ----------------------------------------------------------------------

def hbar_linear(p, x):
    return float(p @ p - 2 * x @ p)


def test_barrier_scalar_sink():
    bar = quadratic_barrier([0.0], [[2.0]], 1.0, 1.0, hbar=hbar_linear)
    assert bar.A_s[0, 0] == pytest.approx(0.25) and bar.A_u[0, 0] == 0.0
    assert bar.valid and bar.halvings == 0
    # mu (mu / 4 - 1) with mu = 1
    assert bar.max_ratio == pytest.approx(-0.75, abs=1e-12)
    assert bar([0.4]) == pytest.approx(0.04)


def test_barrier_halving():
    bar = quadratic_barrier([0.0], [[2.0]], 8.0, 8.0, hbar=hbar_linear)
    assert bar.valid and bar.halvings == 2 and bar.mu == 2.0


def test_barrier_at_source_is_nonpositive(rng):
    bar = quadratic_barrier([0.0], [[-2.0]], 1.0, 1.0)
    assert bar.A_s[0, 0] == 0.0 and bar.A_u[0, 0] == pytest.approx(0.25)
    assert all(bar([x]) <= 0 for x in rng.uniform(-1, 1, 20))


def test_degenerate_barrier_fails():
    bar = quadratic_barrier([0.0], [[2.0]], 0.0, 0.0, hbar=hbar_linear, max_halvings=3)
    assert bar.valid is False and "no valid" in bar.message


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        quadratic_barrier([0.0], [[2.0]], -1.0, 1.0)


def test_equation_error_hierarchy():
    assert issubclass(SingularLyapunovError, MatrixEquationError)
    assert issubclass(MatrixEquationError, ArithmeticError)
