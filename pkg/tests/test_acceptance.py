"""Acceptance suite: every criterion at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one pass/fail line
per criterion together with the measured runtime.
"""

import json
import time

import numpy as np
import pytest

import varspde as vs
from varspde import cli
from varspde import diagnostics as dg
from varspde import dissipation as dp
from varspde import quasilinear as ql
from varspde import stein


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def report(n, ok, timer, limit, detail=""):
    status = "PASS" if ok else "FAIL"
    print(
        f"[criterion {n:2d}] {status} ({timer.elapsed:6.2f}s / limit {limit:g}s) {detail}"
    )
    assert ok, f"criterion {n}: {detail}"
    assert timer.elapsed < limit, f"criterion {n}: runtime {timer.elapsed:.1f}s over {limit}s"


def test_criterion_01_psi_suite():
    # q in {2.5, 3, 4}, m in {1, 2, 5}, grid step 1e-2 on [-10m, 10m]:
    # all five inequalities with slack >= -1e-10, C^2 matching to 1e-12
    with Timer() as t:
        worst_slack, worst_match = np.inf, 0.0
        for q in (2.5, 3.0, 4.0):
            for m in (1.0, 2.0, 5.0):
                grid = np.arange(-10.0 * m, 10.0 * m + 1e-12, 1e-2)
                rep = dp.verify_psi_properties(dp.PsiM(q, m), grid)
                worst_slack = min(worst_slack, rep.worst())
                worst_match = max(worst_match, max(rep.matching_defects))
        ok = worst_slack >= -1e-10 and worst_match <= 1e-12
    report(1, ok, t, 1.0, f"min slack {worst_slack:.2e}, C2 defect {worst_match:.2e}")


def test_criterion_02_polarization():
    # 1e4 random hermitian forms, dim <= 20, zero violations of the
    # polarized bound given the exact diagonal constant
    with Timer() as t:
        rng = np.random.default_rng(20260810)
        violations = 0
        for k in range(10_000):
            dim = int(rng.integers(2, 21))
            triple = vs.SpectralTriple.interval(dim)
            raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
            form = 0.5 * (raw + raw.conj().T)
            w = triple.flat_weights()
            c = float(
                np.max(
                    np.abs(
                        np.linalg.eigvalsh(
                            form / np.sqrt(w)[:, None] / np.sqrt(w)[None, :]
                        )
                    )
                )
            )
            if not vs.polarization_bound(triple, form, c, probes=8, seed=k):
                violations += 1
        ok = violations == 0
    report(2, ok, t, 5.0, f"{violations} violations in 10000 forms")


def test_criterion_03_stein_family():
    # 50 random admissible symmetric pairs with M = 0: distance bound,
    # strip coercivity >= 1 - R(1-rho) - 1e-8, exact recovery at theta
    with Timer() as t:
        triple = vs.SpectralTriple.interval(12)
        noise = vs.NoiseModel(2, vs.uniform_grid(1.0, 50), 1)
        Cp = vs.estimate_Cp(triple, noise.grid, p=2, probes=4)
        rng = np.random.default_rng(5)
        worst_strip, worst_rebuild, all_dist = np.inf, 0.0, True
        for k in range(50):
            lam = float(rng.uniform(0.4, 1.2))
            Lam = float(rng.uniform(lam + 0.3, 3.0))
            pair = vs.random_symmetric_pair(
                triple, seed=1000 + k, lam=lam, Lam=Lam,
                noise_frac=float(rng.uniform(0.0, 0.8)), modes=2,
            )
            cert = vs.check_coercivity(pair, probes=0)
            c_est = 2.0  # measured scale for the perturbation constant
            params = stein.SteinParams.from_report(cert, q=4.0, Cp=Cp, c=c_est)
            all_dist &= bool(stein.verify_distance_bound(pair, triple, params, probes=64))
            fam = stein.build_family(pair, params)
            strip = stein.verify_strip_coercivity(fam, probes=0)
            worst_strip = min(worst_strip, strip.min_lhs - strip.global_bound)
            at_theta = fam(params.theta)
            scale = max(1.0, np.abs(pair.A_matrix()).max())
            worst_rebuild = max(
                worst_rebuild,
                np.abs(at_theta.A_matrix() - pair.A_matrix()).max() / scale,
                np.abs(at_theta.B_stack() - pair.B_stack()).max(),
            )
        ok = all_dist and worst_strip >= -1e-8 and worst_rebuild <= 1e-12
    report(
        3, ok, t, 30.0,
        f"strip slack {worst_strip:.2e}, rebuild defect {worst_rebuild:.2e}",
    )


def test_criterion_04_scalar_oracle():
    # Monte Carlo second moment vs u0^2 exp((b^2-2a)T) within 3 SE at
    # dt = 1e-3 with 1e4 paths; divergence reported when a - b^2/2 < 0
    with Timer() as t:
        a, b, T, u0 = 1.0, 0.5, 1.0, 1.0
        triple = vs.scalar_triple(2.0)
        noise = vs.NoiseModel(1, vs.uniform_grid(T, 1000), 314)
        prob = vs.LinearProblem(
            triple=triple, pair=vs.scalar_pair(triple, a, b), noise=noise,
            u0=np.array([[u0]]),
        )
        ens = vs.solve_linear(prob, paths=10_000)
        sq = np.abs(ens.paths[:, -1, 0, 0]) ** 2
        mean, se = float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(len(sq)))
        exact = u0**2 * np.exp((b**2 - 2 * a) * T)
        fit_ok = abs(mean - exact) <= 3 * se

        bad_noise = vs.NoiseModel(1, vs.uniform_grid(4.0, 400), 315)
        bad = vs.LinearProblem(
            triple=triple, pair=vs.scalar_pair(triple, 0.3, 1.5), noise=bad_noise,
            u0=np.array([[1.0]]),
        )
        try:
            vs.solve_with_B_fixed_point(bad, paths=64)
            diverged = False
        except vs.DivergenceError:
            diverged = True
        ok = fit_ok and diverged
    report(
        4, ok, t, 60.0,
        f"|MC - exact| = {abs(mean - exact):.2e} vs 3SE = {3 * se:.2e}; "
        f"divergence reported: {diverged}",
    )


def test_criterion_05_classical_estimate():
    # battery of 10 admissible pairs (dim 64, K = 8): the ratio of the
    # classical estimate drifts < 10% between dt and dt/2 on coupled noise
    with Timer() as t:
        triple = vs.SpectralTriple.interval(64)
        drifts = []
        for seed in range(10):
            pair = vs.random_symmetric_pair(
                triple, seed, lam=0.8, Lam=2.0, noise_frac=0.4, modes=8
            )
            rng = np.random.default_rng(900 + seed)
            f = 0.4 * rng.standard_normal((1, 64))
            g = 0.2 * rng.standard_normal((8, 1, 64))
            u0 = 0.3 * rng.standard_normal((1, 64))
            noise = vs.NoiseModel(8, vs.uniform_grid(1.0, 256), seed)
            coarse_prob = vs.LinearProblem(
                triple=triple, pair=pair, noise=noise, f=f, g=g, u0=u0
            )
            fine_prob = vs.LinearProblem(
                triple=triple, pair=pair, noise=noise.coupled(2), f=f, g=g, u0=u0
            )
            r1 = dg.classical_estimate_report(
                vs.solve_linear(coarse_prob, paths=32), coarse_prob
            ).ratio
            r2 = dg.classical_estimate_report(
                vs.solve_linear(fine_prob, paths=32), fine_prob
            ).ratio
            drifts.append(abs(r2 - r1) / r1)
        ok = max(drifts) < 0.10
    report(5, ok, t, 300.0, f"max ratio drift {max(drifts):.3%} over 10 pairs")


def test_criterion_06_mollification():
    # 20 random coefficient fields with certified (lambda, Lambda): the
    # mollified fields keep the margin within 1e-6 and the bound within
    # 1e-6, for m in {1, 2, 4}
    with Timer() as t:
        worst_margin, worst_bound = np.inf, -np.inf
        for seed in range(20):
            r = np.random.default_rng(seed)
            c0 = float(r.uniform(1.5, 3.0))
            c1 = float(r.uniform(0.2, 0.8))
            beta = float(r.uniform(0.0, 0.7))
            freq = float(r.uniform(0.5, 3.0))

            def a_fn(tt, x, y, c0=c0, c1=c1, freq=freq):
                out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
                out[..., 0, 0, 0] = c0 + c1 * np.tanh(freq * y[..., 0])
                return out

            def b_fn(tt, x, y, beta=beta, freq=freq):
                out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
                out[..., 0, 0, 0] = beta * np.tanh(freq * y[..., 0])
                return out

            base = ql.QLCoefficients(N=1, d=1, K=1, a=a_fn, b=b_fn)
            lam_cert = ql.check_ql_coercivity(base, y_range=2.5, seed=seed).margin
            Lam_cert, _ = ql.coefficient_bounds(base, y_range=2.5, seed=seed)
            for m in (1.0, 2.0, 4.0):
                mc = ql.mollify(base, m, window=8.0).coefficients()
                rep = ql.check_ql_coercivity(mc, y_range=2.5, seed=seed)
                Lam_m, _ = ql.coefficient_bounds(mc, y_range=2.5, seed=seed)
                worst_margin = min(worst_margin, rep.margin - (lam_cert - 1e-6))
                worst_bound = max(worst_bound, Lam_m - (Lam_cert + 1e-6))
        ok = worst_margin >= 0 and worst_bound <= 0
    report(
        6, ok, t, 30.0,
        f"margin slack {worst_margin:.2e}, bound excess {worst_bound:.2e}",
    )


def test_criterion_07_bootstrap_uniform_in_truncation():
    # cubic dissipative scalar, q = 4: energy ratio changes < 25% per
    # doubling of R_trunc in {1, 2, 4, 8}, for psi levels m in {1, 2, 4}
    with Timer() as t:
        triple = vs.SpectralTriple.interval(32)
        noise = vs.NoiseModel(1, vs.uniform_grid(0.5, 128), 77)
        coeffs = ql.cubic_reaction_coefficients(a=1.0, g=0.3, reaction=1.0)
        # amplitude chosen so the R = 1 truncation is genuinely active
        # (grid sup of |u| runs to ~1.7) before the ratio plateaus
        u0 = np.zeros((1, 32))
        u0[0, 0] = 1.2
        ratios = {m: [] for m in (1.0, 2.0, 4.0)}
        for R in (1.0, 2.0, 4.0, 8.0):
            ens = ql.solve_ql(coeffs, triple, noise, u0, paths=1000, R_trunc=R)
            for m in ratios:
                ratios[m].append(dp.energy_bootstrap(ens, dp.PsiM(4.0, m), u0=u0).ratio)
        worst = 0.0
        for m, series in ratios.items():
            for prev, nxt in zip(series, series[1:]):
                worst = max(worst, abs(nxt - prev) / prev)
        ok = worst < 0.25
    report(7, ok, t, 300.0, f"max ratio change per doubling {worst:.3%}")


def test_criterion_08_martingale_residuals():
    # 20 independent (xi, s, t, gamma) residual tests on a quasilinear
    # run: at most one z-score exceeds 3
    with Timer() as t:
        triple = vs.SpectralTriple.interval(10)
        noise = vs.NoiseModel(2, vs.uniform_grid(0.5, 80), 4242)

        def a_fn(tt, x, y):
            out = np.zeros(np.shape(y)[:-1] + (1, 1, 1))
            out[..., 0, 0, 0] = 1.0 + 0.3 * np.tanh(y[..., 0])
            return out

        def b_fn(tt, x, y):
            out = np.zeros(np.shape(y)[:-1] + (1, 2, 1))
            out[..., 0, 0, 0] = 0.3
            return out

        def g_fn(tt, x, y):
            out = np.zeros(np.shape(y)[:-1] + (1, 2))
            out[..., 1] = 0.2
            return out

        coeffs = ql.QLCoefficients(
            N=1, d=1, K=2, a=a_fn, b=b_fn, g=g_fn,
            phi=lambda tt, x, y: -np.asarray(y) ** 3,
            Lambda=1.3, lam=0.655, growth_h=3.0,
        )
        u0 = np.zeros((1, 10))
        u0[0, 0] = 0.4
        ens = ql.solve_ql(coeffs, triple, noise, u0, paths=800, R_trunc=2.0)
        rng = np.random.default_rng(31)
        kinds = ["mean"] * 12 + ["quadratic"] * 4 + ["cross"] * 4
        exceed, zs = 0, []
        for j, kind in enumerate(kinds):
            s_idx = int(rng.integers(0, 40))
            t_idx = int(rng.integers(s_idx + 20, 80))
            xi = 0.5 * rng.standard_normal((1, 10))
            gamma = ql.path_functional(triple, s_idx, seed=500 + j)
            stat = ql.martingale_residual(
                ens, coeffs, xi, s_idx, t_idx, gamma=gamma, kind=kind
            )
            zs.append(stat.z)
            exceed += abs(stat.z) > 3.0
        ok = exceed <= 1
    report(
        8, ok, t, 300.0,
        f"{exceed}/20 z-scores exceed 3 (max |z| = {max(abs(z) for z in zs):.2f})",
    )


def test_criterion_09_tightness():
    # battery of 5 pairs with shared constants: every empirical tail is
    # dominated by its Chebyshev bound, and one radius achieves
    # tail <= 0.05 across the battery
    with Timer() as t:
        triple = vs.SpectralTriple.interval(16)
        theta, p, eps = 0.45, 2.5, 0.05
        reports = []
        for seed in range(5):
            pair = vs.random_symmetric_pair(
                triple, seed, lam=0.8, Lam=2.0, noise_frac=0.4, modes=4
            )
            rng = np.random.default_rng(700 + seed)
            prob = vs.LinearProblem(
                triple=triple,
                pair=pair,
                noise=vs.NoiseModel(4, vs.uniform_grid(1.0, 128), seed),
                f=0.4 * rng.standard_normal((1, 16)),
                g=0.2 * rng.standard_normal((4, 1, 16)),
                u0=0.3 * rng.standard_normal((1, 16)),
            )
            ens = vs.solve_linear(prob, paths=200)
            reports.append(dg.tightness_check(ens, theta, p, eps=eps))
        dominated = all(
            np.all(r.empirical_tail <= r.chebyshev_bound + 3 * r.tail_se + 1e-12)
            for r in reports
        )
        R_univ = dg.universal_tightness_radius(reports, eps)
        covers = all(r.moment / R_univ**p <= eps + 1e-12 for r in reports)
        ok = dominated and covers
    report(
        9, ok, t, 300.0,
        f"tails dominated: {dominated}; universal R_eps = {R_univ:.2f} covers all",
    )


def test_criterion_10_determinism(tmp_path):
    # identical config/seed with different worker counts produce
    # byte-identical outputs for both experiment families
    with Timer() as t:
        lin = tmp_path / "lin.toml"
        lin.write_text(
            """
kind = "solve-linear"
seed = 99
[triple]
dim = 16
[noise]
modes = 4
steps = 64
[numerics]
paths = 150
[pair]
family = "random-symmetric"
seed = 2
lam = 0.8
Lam = 2.0
noise_frac = 0.3
modes = 4
[data]
seed = 4
f_scale = 0.4
g_scale = 0.2
u0_scale = 0.3
[outputs]
dump_trajectories = true
"""
        )
        qlc = tmp_path / "ql.toml"
        qlc.write_text(
            """
kind = "solve-ql"
seed = 98
[triple]
dim = 8
[noise]
modes = 1
steps = 40
T = 0.5
[numerics]
paths = 130
[coefficients]
a = "1.0 + 0.3*tanh(y[0])"
phi = "-y[0]**3"
g = "0.15"
lam = 0.7
R_trunc = 2.0
[data]
u0_mode = 0
u0_amplitude = 0.4
[outputs]
dump_trajectories = true
"""
        )
        ok = True
        for cfg in (lin, qlc):
            sums = []
            for w in (1, 3):
                m = cli.run(cfg, workers=w, out=tmp_path / f"{cfg.stem}-w{w}")
                sums.append([o["sha256"] for o in m["outputs"]])
            ok &= sums[0] == sums[1]
    report(10, ok, t, 120.0, "worker counts 1 and 3 byte-identical")
