"""Ensemble-level verification: moments, tightness tails, analyticity.

Moment reports estimate E||u||^p for configurable space-time norms with
jackknifed standard errors (heavy-tailed path norms make plain CLT errors
unreliable) and express them as ratios against the data size

    C_{u0,f,g} = ||u0|| + ||f|| + ||g||

in the norms the a priori estimates pair them with.  Tightness reports
compare empirical tail probabilities of path-norm distributions against
their Chebyshev bounds, including the universal radius that works across a
battery of operator pairs sharing the same certified constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import triple as tr
from .linear import PathEnsemble, solve_linear

__all__ = [
    "MomentEntry",
    "MomentReport",
    "moment_estimates",
    "data_norm",
    "classical_estimate_report",
    "ClassicalEstimateReport",
    "TightnessReport",
    "tightness_check",
    "universal_tightness_radius",
    "analyticity_check",
    "AnalyticityReport",
    "holder_norms",
]


def _jackknife_se(samples, batches=10):
    n = len(samples)
    if n < 2:
        return 0.0
    batches = min(batches, n)
    splits = np.array_split(np.arange(n), batches)
    total = samples.sum()
    means = np.array([(total - samples[s].sum()) / (n - len(s)) for s in splits])
    return float(
        np.sqrt((batches - 1) / batches * np.sum((means - means.mean()) ** 2))
    )


@dataclass
class MomentEntry:
    label: str
    p: float
    moment: float
    se: float
    ratio: float | None = None


@dataclass
class MomentReport:
    entries: list
    data_size: float | None = None

    def by_label(self, label):
        return {e.label: e for e in self.entries}[label]


def moment_estimates(ensemble, kinds, data_size=None, batches=10):
    """Batched Monte Carlo estimates of E||u||^p for path-norm kinds.

    kinds is a list of (TimeNormKind, p) pairs; each entry reports the
    p-th moment with jackknife SE over >= 10 batches and, when a data
    size C_{u0,f,g} is supplied, the ratio (E||u||^p)^(1/p) / C.
    """
    entries = []
    for kind, p in kinds:
        if p < 1:
            raise ValueError("moment order p must be >= 1")
        norms = ensemble.time_norms(kind)
        powered = norms**p
        moment = float(np.mean(powered))
        se = _jackknife_se(powered, batches)
        ratio = None
        if data_size is not None:
            ratio = (moment ** (1.0 / p) / data_size) if data_size > 0 else np.inf
        entries.append(MomentEntry(kind.label(), p, moment, se, ratio))
    return MomentReport(entries, data_size)


def data_norm(problem, grid, p=2, u0_tag=None):
    """Discrete C_{u0,f,g} for the problem data on the given grid.

    ||u0|| in (H,V)_{1-2/p,p} (H at p = 2), ||f|| in L^p(0,T;V*),
    ||g|| in L^p(0,T;HS).  Deterministic data only; the Omega-average is
    then the value itself.
    """
    triple = problem.triple
    grid = np.asarray(grid, dtype=float)
    dt = np.diff(grid)
    if u0_tag is None:
        s = 1.0 - 2.0 / p
        u0_tag = tr.real_interp(s, p) if 0 < s < 1 else tr.H
    total = 0.0
    if problem.u0 is not None and not callable(problem.u0):
        total += float(tr.norm(triple, np.asarray(problem.u0), u0_tag))
    fv = problem.f_eval(grid[0], None)
    if fv is not None:
        fvals = np.array([problem.f_eval(t, None) for t in grid[:-1]])
        total += float(
            np.sum(dt * tr.norm(triple, fvals, tr.VDUAL) ** p) ** (1.0 / p)
        )
    gv = problem.g_eval(grid[0], None)
    if gv is not None:
        gvals = np.array([problem.g_eval(t, None) for t in grid[:-1]])
        hs = np.sum(tr.norm(triple, gvals, tr.H) ** 2, axis=1) ** 0.5
        total += float(np.sum(dt * hs**p) ** (1.0 / p))
    return total


@dataclass
class ClassicalEstimateReport:
    solution_size: float
    data_size: float

    @property
    def ratio(self):
        return self.solution_size / self.data_size


def classical_estimate_report(ensemble, problem, p=2):
    """Ratio of the classical L^2 estimate for a linear solve:
    (||u||_{L^2(Omega x (0,T); V)} + ||u||_{L^2(Omega; C([0,T]; H))}) / C_{u0,f,g}
    with ||u0|| taken in H."""
    sol = ensemble.ensemble_lp_V(p) + ensemble.ensemble_sup_H(p)
    data = data_norm(problem, ensemble.grid, p, u0_tag=tr.H)
    return ClassicalEstimateReport(sol, data)


# ---------------------------------------------------------------------------
# Tightness


def holder_norms(ensemble, theta, p):
    """Path norms in C^(theta-1/p)([0,T]; [H,V]_{1-2 theta}):
    sup-in-time norm plus the Holder seminorm."""
    if not (1.0 / p) < theta < 0.5:
        raise ValueError("tightness exponent requires theta in (1/p, 1/2)")
    space = tr.complex_interp(1.0 - 2.0 * theta)
    gamma = theta - 1.0 / p
    sup_part = ensemble.sup_time_norms(space)
    semi = np.array(
        [
            tr.holder_seminorm(
                ensemble.triple, ensemble.paths[i], ensemble.grid, gamma, space
            )
            for i in range(ensemble.n_paths)
        ]
    )
    return sup_part + semi


@dataclass
class TightnessReport:
    radii: np.ndarray
    empirical_tail: np.ndarray
    chebyshev_bound: np.ndarray
    tail_se: np.ndarray
    moment: float
    p: float
    R_eps: float | None = None
    eps: float | None = None

    @property
    def dominated(self):
        return bool(np.all(self.empirical_tail <= self.chebyshev_bound + 3 * self.tail_se + 1e-12))


def tightness_check(ensemble_or_norms, theta=None, p=2.5, radii=None, eps=0.05):
    """Empirical tail of the Holder path norm versus its Chebyshev bound.

    Markov's inequality holds samplewise on the empirical measure, so the
    empirical tail never exceeds the bound computed from the same
    ensemble; for reporting, the binomial SE of the tail estimate is
    attached.  R_eps is the smallest sampled radius whose Chebyshev bound
    drops below eps (the radius the universal-compactness proof picks).
    """
    if isinstance(ensemble_or_norms, PathEnsemble):
        norms = holder_norms(ensemble_or_norms, theta, p)
    else:
        norms = np.asarray(ensemble_or_norms)
    P = len(norms)
    moment = float(np.mean(norms**p))
    if radii is None:
        top = np.quantile(norms, 0.99)
        radii = np.linspace(0.5 * np.median(norms), 4.0 * max(top, 1e-12), 25)
    radii = np.asarray(radii, dtype=float)
    tails = np.array([np.mean(norms >= R) for R in radii])
    bounds = np.array([moment / R**p if R > 0 else np.inf for R in radii])
    ses = np.sqrt(np.maximum(tails * (1 - tails), 0.0) / P)
    R_eps = float((moment / eps) ** (1.0 / p))
    return TightnessReport(
        radii=radii,
        empirical_tail=tails,
        chebyshev_bound=bounds,
        tail_se=ses,
        moment=moment,
        p=p,
        R_eps=R_eps,
        eps=eps,
    )


def universal_tightness_radius(reports, eps=0.05):
    """Single radius achieving tail <= eps for every report in a battery
    of admissible pairs with shared constants (max of the per-pair R_eps)."""
    return max(r.R_eps for r in reports)


# ---------------------------------------------------------------------------
# Analyticity in the interpolation parameter


@dataclass
class AnalyticityReport:
    residuals: np.ndarray
    z_values: list
    h: float

    @property
    def max_residual(self):
        return float(np.max(self.residuals))


def analyticity_check(
    family,
    noise,
    z_values,
    h=1e-3,
    paths=4,
    test_vectors=None,
    f=None,
    g=None,
    u0=None,
    seed=0,
):
    """Cauchy-Riemann residual of z -> u_z on fixed noise.

    Solves the complex problem at z +/- h and z +/- ih, pairs the final
    ensemble mean with test vectors and evaluates
    |d/dx F + i d/dy F| / 2; an analytic dependence gives O(h^2) + MC-free
    residuals since the noise is common to all four solves.
    """
    if h < 1e-5:
        raise ValueError("step too small: cancellation guard requires h >= 1e-5")
    from .linear import LinearProblem  # local import to avoid cycle at module load

    triple = family.triple
    rng = np.random.default_rng(seed)
    if test_vectors is None:
        test_vectors = rng.standard_normal((3, triple.components, triple.dim))

    def functional(z):
        prob = LinearProblem(
            triple=triple, pair=family(z), noise=noise, f=f, g=g, u0=u0
        )
        ens = solve_linear(prob, paths, check=False)
        mean_final = ens.paths[:, -1].mean(axis=0)
        return np.array(
            [tr.duality_pairing(triple, mean_final, w) for w in test_vectors]
        )

    residuals = []
    for z in z_values:
        z = complex(z)
        fx = (functional(z + h) - functional(z - h)) / (2 * h)
        fy = (functional(z + 1j * h) - functional(z - 1j * h)) / (2 * h)
        residuals.append(np.abs(fx + 1j * fy) / 2.0)
    return AnalyticityReport(np.array(residuals), list(z_values), h)
