import numpy as np
import pytest

from discounted_empc.lqr import (
    BracketingError,
    RiccatiDivergenceError,
    bisect_threshold,
    closed_loop_matrix,
    gaitsgory_c_threshold,
    gaitsgory_feasible,
    is_stabilizing,
    lyapunov_threshold,
    optimal_gain,
    riccati_map,
    solve_dare,
    spectral_radius,
    stabilizing_threshold,
    value_is_lyapunov,
)
from discounted_empc.model import LinearQuadraticProblem, lqr_example


def scalar(a, b=1.0, q=1.0, r=1.0, gamma=0.5):
    return LinearQuadraticProblem([[a]], [[b]], [[q]], [[r]], gamma)


def scan_threshold(template, predicate, lo=0.01, hi=0.999, step=1e-5):
    """First gamma at which ``predicate`` holds: scan at 1e-3, then at ``step`` in that cell."""
    coarse = np.arange(lo, hi + 5e-4, 1e-3)
    for k, g in enumerate(coarse):
        if predicate(template.with_gamma(float(g))):
            break
    else:
        return None
    start = coarse[k - 1] if k else lo
    for g in np.arange(start, coarse[k] + step / 2, step):
        if predicate(template.with_gamma(float(g))):
            return float(g)
    return None


def undiscounted_iteration(A, B, Q, R, iters=100_000, tol=1e-14):
    P = Q.copy()
    for _ in range(iters):
        BtPA = B.T @ P @ A
        nxt = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
        nxt = (nxt + nxt.T) / 2
        if np.abs(nxt - P).max() <= tol:
            return nxt
        P = nxt
    return P


def test_zero_dynamics():
    p = LinearQuadraticProblem(np.zeros((2, 2)), np.ones((2, 1)), np.diag([1.0, 2.0]), [[3.0]], 0.7)
    sol = solve_dare(p)
    np.testing.assert_allclose(sol.P, p.Q, atol=1e-15)
    np.testing.assert_allclose(sol.K, 0.0, atol=1e-15)


def test_scalar_closed_form():
    sol = solve_dare(scalar(0.5, b=0.0, gamma=0.5))
    assert sol.P[0, 0] == pytest.approx(8 / 7, abs=1e-11)


def test_example_value_matrix(lq_riccati):
    np.testing.assert_allclose(lq_riccati.P, [[4.1048, 1.3334], [1.3334, 2.8645]], atol=2e-4)
    assert lq_riccati.residual < 1e-10


def test_bellman_residual_and_symmetry(lq, lq_riccati):
    P = lq_riccati.P
    assert np.array_equal(P, P.T)
    assert np.linalg.eigvalsh(P)[0] > 0
    defect = np.abs(P - riccati_map(P, lq.A, lq.B, lq.Q, lq.R, lq.gamma)).max()
    assert defect <= 1e-12 * 10


def test_gain_formula(lq, lq_riccati):
    P, g = lq_riccati.P, lq.gamma
    K = -np.linalg.inv(lq.R + g * lq.B.T @ P @ lq.B) @ (g * lq.B.T @ P @ lq.A)
    np.testing.assert_allclose(lq_riccati.K, K, atol=1e-12)


@pytest.mark.parametrize("gamma", [0.334, 0.5, 0.9, 1.0])
def test_discount_scaling_equivalence(gamma):
    p = lqr_example(gamma)
    s = np.sqrt(gamma)
    P_ref = undiscounted_iteration(s * p.A, s * p.B, p.Q, p.R)
    np.testing.assert_allclose(solve_dare(p).P, P_ref, rtol=0, atol=1e-10)


def test_divergence_reported():
    # x+ = 2x with no input: the discounted value is finite only for gamma < 1/4
    with pytest.raises(RiccatiDivergenceError):
        solve_dare(scalar(2.0, b=0.0, gamma=0.5))


def test_policy_optimality(lq, lq_riccati):
    P, K, g = lq_riccati.P, lq_riccati.K, lq.gamma
    rng = np.random.default_rng(1)
    probes = rng.standard_normal((20, 2))

    def total(K):
        M = lq.Q + K.T @ lq.R @ K + g * (lq.A + lq.B @ K).T @ P @ (lq.A + lq.B @ K)
        return sum(x @ M @ x for x in probes)

    base = total(K)
    for _ in range(100):
        dK = rng.standard_normal(K.shape)
        dK *= 1e-3 / np.linalg.norm(dK)
        assert total(K + dK) >= base - 1e-12


def test_spectral_radius_examples(lq):
    assert spectral_radius(closed_loop_matrix(lq, np.zeros((2, 2)))) == pytest.approx(2.0)
    p0 = LinearQuadraticProblem(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), 0.5)
    K = np.array([[0.3, 0.1], [0.0, -0.7]])
    assert spectral_radius(closed_loop_matrix(p0, K)) == pytest.approx(0.7)


def test_closed_loop_shape_checked(lq):
    with pytest.raises(ValueError):
        closed_loop_matrix(lq, np.zeros((1, 2)))


def test_example_is_stabilizing(lq, lq_riccati):
    assert spectral_radius(closed_loop_matrix(lq, lq_riccati.K)) < 1
    assert not is_stabilizing(lqr_example(0.29))


def test_example_thresholds_and_ordering():
    p = lqr_example()
    s = stabilizing_threshold(p)
    l = lyapunov_threshold(p)
    c = gaitsgory_c_threshold(p)
    assert s.gamma_critical == pytest.approx(0.3109, abs=5e-4)
    assert l.gamma_critical == pytest.approx(0.3342, abs=5e-4)
    assert c.gamma_critical == pytest.approx(0.846, abs=2e-3)
    assert s.gamma_critical <= l.gamma_critical <= c.gamma_critical
    for r in (s, l, c):
        lo, hi = r.bracket
        assert hi - lo <= 5e-5
        assert r.gamma_critical == hi


def test_bracket_semantics():
    p = lqr_example()
    r = stabilizing_threshold(p)
    assert is_stabilizing(p.with_gamma(r.bracket[1]))
    assert not is_stabilizing(p.with_gamma(r.bracket[0]))


@pytest.mark.parametrize("fn", [stabilizing_threshold, lyapunov_threshold, gaitsgory_c_threshold])
def test_trivially_satisfied_at_floor(fn):
    p = LinearQuadraticProblem(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), 0.5)
    r = fn(p)
    assert r.at_floor and r.gamma_critical == 0.01


def test_open_loop_stable_at_floor():
    r = stabilizing_threshold(scalar(0.5))
    assert r.at_floor


def test_bracketing_error():
    with pytest.raises(BracketingError):
        bisect_threshold(lambda g: False, "never")


@pytest.mark.parametrize(
    "fn, predicate",
    [
        (stabilizing_threshold, is_stabilizing),
        (lyapunov_threshold, value_is_lyapunov),
        (gaitsgory_c_threshold, gaitsgory_feasible),
    ],
)
def test_scalar_thresholds_match_scan(fn, predicate):
    template = scalar(2.0)
    r = fn(template)
    ref = scan_threshold(template, predicate)
    assert ref is not None
    assert abs(r.gamma_critical - ref) <= 5e-5 + 1e-5


def test_riccati_map_fixed_point(lq, lq_riccati):
    K = optimal_gain(lq_riccati.P, lq.A, lq.B, lq.R, lq.gamma)
    np.testing.assert_allclose(K, lq_riccati.K, atol=1e-14)
