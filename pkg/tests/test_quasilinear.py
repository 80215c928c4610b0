import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import varspde as vs
from varspde import quasilinear as ql


def interval(dim=8):
    return vs.SpectralTriple.interval(dim)


def noise_model(steps=40, modes=1, T=0.5, seed=7):
    return vs.NoiseModel(modes, vs.uniform_grid(T, steps), seed)


def one_mode_u0(triple, amp=1.0, mode=0):
    u0 = np.zeros((1, triple.dim))
    u0[0, mode] = amp
    return u0


# ---------------------------------------------------------------------------
# Ball projection


def test_project_ball_scaling():
    np.testing.assert_allclose(ql.project_ball(np.array([3.0, 4.0]), 2.0), [1.2, 1.6])


def test_project_ball_identity_inside():
    y = np.array([[0.3, -0.4], [1.0, 0.0]])
    np.testing.assert_array_equal(ql.project_ball(y, 2.0), y)


def test_project_ball_lipschitz_and_idempotent():
    rng = np.random.default_rng(0)
    y1 = rng.uniform(-5, 5, size=(10_000, 3))
    y2 = rng.uniform(-5, 5, size=(10_000, 3))
    p1, p2 = ql.project_ball(y1, 1.5), ql.project_ball(y2, 1.5)
    # oracle: direct evaluation of both sides of the Lipschitz inequality
    lhs = np.linalg.norm(p1 - p2, axis=1)
    rhs = np.linalg.norm(y1 - y2, axis=1)
    assert np.all(lhs <= rhs * (1 + 1e-12))
    np.testing.assert_allclose(ql.project_ball(p1, 1.5), p1, rtol=1e-14)


def test_truncation_radius_guard():
    with pytest.raises(ValueError):
        ql.TruncationRadius(0.0)


# ---------------------------------------------------------------------------
# Mollification


def test_mollify_constant_exact():
    c = ql.constant_coefficients(a=3.0, b=0.5)
    mc = ql.mollify(c, m=2).coefficients()
    x = np.linspace(0.1, 0.9, 5)
    y = np.random.default_rng(1).uniform(-2, 2, (4, 5, 1))
    np.testing.assert_allclose(mc.a_values(0.0, x, y)[..., 0, 0], 3.0, rtol=1e-14)
    np.testing.assert_allclose(mc.b_values(0.0, x, y)[..., 0, 0, 0], 0.5, rtol=1e-14)


def test_mollify_clamp_sup_distance():
    def a_clamp(t, x, y):
        out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
        out[..., 0, 0, 0] = 2.0 + np.clip(y[..., 0], -1, 1)
        return out

    base = ql.QLCoefficients(N=1, d=1, K=1, a=a_clamp, Lambda=3.0, lam=1.0)
    x = np.array([0.5])
    yg = np.linspace(-3, 3, 61)[:, None, None]
    for m in (2, 5, 10):
        mc = ql.mollify(base, m=m).coefficients()
        dist = np.abs(mc.a_values(0.0, x, yg) - base.a_values(0.0, x, yg)).max()
        assert dist <= 2.0 / m  # kernel support bound for a 1-Lipschitz field


def test_mollify_preserves_bounds_and_coercivity():
    rng = np.random.default_rng(3)

    def make_field(seed):
        r = np.random.default_rng(seed)
        c0, c1, beta = r.uniform(1.5, 2.5), r.uniform(0.2, 0.5), r.uniform(0.1, 0.6)

        def a_fn(t, x, y):
            out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
            out[..., 0, 0, 0] = c0 + c1 * np.tanh(y[..., 0])
            return out

        def b_fn(t, x, y):
            out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
            out[..., 0, 0, 0] = beta * np.tanh(y[..., 0])
            return out

        return ql.QLCoefficients(N=1, d=1, K=1, a=a_fn, b=b_fn, Lambda=c0 + c1, lam=c0 - c1 - beta**2 / 2)

    for seed in range(6):
        base = make_field(seed)
        rep0 = ql.check_ql_coercivity(base, y_range=2.5, seed=seed)
        Lam0, _ = ql.coefficient_bounds(base, y_range=2.5, seed=seed)
        for m in (1, 2, 4):
            mc = ql.mollify(base, m, window=8.0).coefficients()
            rep = ql.check_ql_coercivity(mc, y_range=2.5, seed=seed)
            assert rep.margin >= rep0.margin - 1e-6
            Lam, _ = ql.coefficient_bounds(mc, y_range=2.5, seed=seed)
            assert Lam <= Lam0 + 1e-6


def test_mollify_lipschitz_scale():
    # discontinuous base field: the mollified slope is O(m * Lambda)
    def a_step(t, x, y):
        out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
        out[..., 0, 0, 0] = 1.0 + (y[..., 0] > 0)
        return out

    base = ql.QLCoefficients(N=1, d=1, K=1, a=a_step, Lambda=2.0, lam=1.0)
    x = np.array([0.5])
    for m in (1, 4):
        mc = ql.mollify(base, m, nodes=33).coefficients()
        yy = np.linspace(-2.0 / m, 2.0 / m, 81)[:, None, None]
        vals = mc.a_values(0.0, x, yy)[..., 0, 0, 0].ravel()
        slope = np.abs(np.diff(vals)).max() / (yy[1, 0, 0] - yy[0, 0, 0])
        assert slope <= 10.0 * m * base.Lambda


def test_mollify_window_guard():
    c = ql.constant_coefficients(a=1.0)
    mc = ql.mollify(c, m=1, window=2.0).coefficients()
    with pytest.raises(ql.WindowError):
        mc.a_values(0.0, np.array([0.5]), np.full((1, 1, 1), 1.9))
    with pytest.raises(ValueError):
        ql.mollify(c, m=1, window=0.5)


# ---------------------------------------------------------------------------
# Coercivity margins


def test_ql_coercivity_identity():
    c = ql.constant_coefficients(a=1.0)
    assert ql.check_ql_coercivity(c).margin == pytest.approx(1.0)


def test_ql_coercivity_rank_one_update():
    # a = I, single gradient-noise entry beta: margin 1 - beta^2/2
    for beta in (1.0, np.sqrt(2.0)):
        c = ql.constant_coefficients(a=1.0, b=beta)
        rep = ql.check_ql_coercivity(c)
        np.testing.assert_allclose(rep.margin, 1 - beta**2 / 2, atol=1e-12)
    assert ql.check_ql_coercivity(ql.constant_coefficients(a=1.0, b=np.sqrt(2.0))).margin <= 1e-12


def test_ql_coercivity_symmetrization_invariance():
    def a_asym(t, x, y):
        out = np.zeros(np.shape(y)[:-1] + (1, 2, 2))
        out[..., 0, 0] = 2.0
        out[..., 1, 1] = 1.0
        out[..., 0, 1] = 0.5
        out[..., 1, 0] = -0.1
        return out

    def a_sym(t, x, y):
        raw = a_asym(t, x, y)
        return 0.5 * (raw + np.swapaxes(raw, -1, -2))

    c1 = ql.QLCoefficients(N=1, d=2, K=1, a=a_asym)
    c2 = ql.QLCoefficients(N=1, d=2, K=1, a=a_sym)
    m1 = ql.check_ql_coercivity(c1).margin
    m2 = ql.check_ql_coercivity(c2).margin
    np.testing.assert_allclose(m1, m2, rtol=1e-12)
    with pytest.raises(ValueError):
        ql.check_ql_coercivity(c1, symmetrize=False)


# ---------------------------------------------------------------------------
# Solver


def test_heat_decay_exact_recurrence():
    # a = I, no noise or reaction: mode k decays like (1 + dt lambda_k)^-i
    t = interval(8)
    noise = noise_model()
    c = ql.constant_coefficients(a=1.0)
    u0 = one_mode_u0(t) + 0.5 * np.eye(1, 8, 3)
    ens = ql.solve_ql(c, t, noise, u0, paths=2)
    dt = noise.grid[1]
    steps = np.arange(noise.n_steps + 1)
    decay = (1 + dt * t.eigenvalues[None, :]) ** (-steps[:, None])  # (n+1, dim)
    expected = np.broadcast_to(decay[None, :, None, :] * u0[None, None], ens.paths.shape)
    np.testing.assert_allclose(ens.paths, expected, atol=1e-14)


def test_y_independent_equals_linear_solver():
    t = interval(8)
    noise = vs.NoiseModel(2, vs.uniform_grid(0.5, 50), 3)
    c = ql.constant_coefficients(a=1.2, b=0.4, g=0.3, K=2)
    pair, f, g = ql.freeze_linear_pair(c, t)
    u0 = one_mode_u0(t, 0.7)
    prob = vs.LinearProblem(triple=t, pair=pair, noise=noise, f=f, g=g, u0=u0)
    lin = vs.solve_linear(prob, paths=5)
    quas = ql.solve_ql(c, t, noise, u0, paths=5)
    np.testing.assert_allclose(lin.paths, quas.paths, atol=1e-12)


def test_truncation_inactive_is_bitwise_identical():
    t = interval(8)
    noise = noise_model(seed=9)
    c = ql.cubic_reaction_coefficients(a=1.0, g=0.1, reaction=1.0)
    u0 = one_mode_u0(t, 0.3)
    e1 = ql.solve_ql(c, t, noise, u0, paths=4, R_trunc=4.0)
    e2 = ql.solve_ql(c, t, noise, u0, paths=4, R_trunc=8.0)
    assert float(np.abs(e1.paths).max()) < 4.0
    np.testing.assert_array_equal(e1.paths, e2.paths)


def test_noncoercive_coefficients_rejected():
    c = ql.constant_coefficients(a=1.0, b=1.5)
    t = interval(6)
    with pytest.raises(vs.CoercivityError):
        ql.solve_ql(c, t, noise_model(), one_mode_u0(t), paths=1)


def test_solver_worker_invariance():
    t = interval(8)
    noise = vs.NoiseModel(1, vs.uniform_grid(0.5, 30), 5)
    c = ql.cubic_reaction_coefficients(a=1.0, g=0.2, reaction=1.0)
    u0 = one_mode_u0(t, 0.4)
    base = ql.solve_ql(c, t, noise, u0, paths=9, workers=1).paths
    np.testing.assert_array_equal(
        base, ql.solve_ql(c, t, noise, u0, paths=9, workers=4).paths
    )


def test_state_dependent_diffusion_runs_and_stays_bounded():
    def a_fn(t, x, y):
        out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
        out[..., 0, 0, 0] = 1.0 + 0.5 * np.tanh(y[..., 0])
        return out

    c = ql.QLCoefficients(N=1, d=1, K=1, a=a_fn, Lambda=1.5, lam=0.5, a_depends_y=True)
    t = interval(8)
    ens = ql.solve_ql(c, t, noise_model(), one_mode_u0(t, 0.8), paths=3, m=2.0)
    assert np.abs(ens.paths).max() <= 0.8


# ---------------------------------------------------------------------------
# Martingale residuals


def quasi_setup(paths=300, steps=80, seed=3):
    t = interval(10)
    noise = vs.NoiseModel(2, vs.uniform_grid(0.5, steps), seed)
    c = ql.cubic_reaction_coefficients(a=1.0, b=0.3, g=0.25, reaction=1.0, K=2)
    u0 = one_mode_u0(t, 0.4)
    ens = ql.solve_ql(c, t, noise, u0, paths=paths, R_trunc=2.0)
    return t, c, ens


def test_martingale_residual_mean_and_variants():
    t, c, ens = quasi_setup()
    xi = 0.4 * np.random.default_rng(1).standard_normal((1, 10))
    gam = ql.path_functional(t, s_index=20, seed=2)
    for kind in ("mean", "quadratic", "cross"):
        stat = ql.martingale_residual(ens, c, xi, 20, 70, gamma=gam, kind=kind)
        assert abs(stat.z) <= 3.5, (kind, stat)


def test_martingale_residual_gamma_one_reduces_to_mean_zero():
    t, c, ens = quasi_setup(paths=200)
    xi = one_mode_u0(t, 1.0)
    stat = ql.martingale_residual(ens, c, xi, 0, 40, gamma=None)
    assert abs(stat.z) <= 3.5


def test_martingale_residual_catches_lookahead():
    # shifting the increments by one step breaks adaptedness: the residual
    # picks up the b du / g correlation and the z-score explodes
    t, c, ens = quasi_setup(paths=400)
    shifted = np.roll(ens.paths, 1, axis=1)
    shifted[:, 0] = ens.paths[:, 0]
    broken = vs.PathEnsemble(shifted, ens.grid, ens.triple, ens.seed, ens.noise, dict(ens.meta))
    xi = one_mode_u0(t, 1.0)
    stat = ql.martingale_residual(broken, c, xi, 0, 60, kind="mean")
    assert abs(stat.z) > 3.0


def test_martingale_left_quadrature_biased_at_dt():
    t, c, ens = quasi_setup(paths=300)
    xi = one_mode_u0(t, 1.0)
    exact = ql.martingale_residual(ens, c, xi, 0, 79, quadrature="scheme")
    left = ql.martingale_residual(ens, c, xi, 0, 79, quadrature="left")
    assert abs(exact.mean) <= abs(left.mean) + 3 * exact.se


def test_martingale_guards():
    t, c, ens = quasi_setup(paths=8, steps=20)
    xi = one_mode_u0(t, 1.0)
    with pytest.raises(ValueError):
        ql.martingale_residual(ens, c, np.zeros((1, 3)), 0, 10)
    with pytest.raises(ValueError):
        ql.martingale_residual(ens, c, xi, 10, 10)
    lin_ens = vs.PathEnsemble(ens.paths, ens.grid, ens.triple, 0)
    with pytest.raises(ValueError):
        ql.martingale_residual(lin_ens, c, xi, 0, 10)


# ---------------------------------------------------------------------------
# Convergence studies


def test_convergence_levels_must_increase():
    t = interval(6)
    c = ql.constant_coefficients(a=1.0)
    with pytest.raises(ValueError):
        ql.convergence_study(c, t, noise_model(), one_mode_u0(t), [2, 1])


def test_convergence_smooth_coefficients_decay():
    def a_fn(t, x, y):
        out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
        out[..., 0, 0, 0] = 1.0 + 0.4 * np.tanh(y[..., 0])
        return out

    c = ql.QLCoefficients(N=1, d=1, K=1, a=a_fn, Lambda=1.4, lam=0.6,
                          g=lambda t, x, y: 0.2 * np.ones(np.shape(y)[:-1] + (1, 1)))
    t = interval(8)
    rep = ql.convergence_study(
        c, t, noise_model(steps=30), one_mode_u0(t, 0.6), [1, 2, 4, 8], vary="m", paths=6
    )
    assert rep.monotone
    assert rep.mean_sup_distance[-1] < rep.mean_sup_distance[0]


def test_convergence_truncation_inactive_levels_identical():
    t = interval(8)
    c = ql.cubic_reaction_coefficients(a=1.0, g=0.1, reaction=1.0)
    rep = ql.convergence_study(
        c, t, noise_model(), one_mode_u0(t, 0.3), [4, 8, 16], vary="R", paths=4
    )
    np.testing.assert_array_equal(rep.mean_sup_distance, 0.0)


def test_convergence_linear_all_levels_identical():
    t = interval(8)
    c = ql.constant_coefficients(a=1.0, g=0.2)
    rep = ql.convergence_study(
        c, t, noise_model(), one_mode_u0(t, 0.5), [1, 2, 4], vary="R", paths=4
    )
    np.testing.assert_array_equal(rep.mean_sup_distance, 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), radius=st.floats(0.5, 5.0))
def test_project_ball_properties(seed, radius):
    rng = np.random.default_rng(seed)
    y = rng.uniform(-10, 10, size=(32, 4))
    p = ql.project_ball(y, radius)
    assert np.all(np.linalg.norm(p, axis=-1) <= radius * (1 + 1e-12))
    inside = np.linalg.norm(y, axis=-1) <= radius
    np.testing.assert_array_equal(p[inside], y[inside])
