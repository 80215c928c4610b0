"""C^2 power approximants psi_m and the discrete L^q energy bootstrap.

psi_m agrees with |xi|^q inside [-m, m] and continues quadratically
outside with the matched value, slope and curvature:

    psi_m(xi) = m^(q-2) [ q(q-1)/2 xi^2 - q(q-2) m |xi| + (q-1)(q-2)/2 m^2 ]

for |xi| > m.  The second derivative is q(q-1)|xi|^(q-2) inside and the
constant q(q-1) m^(q-2) outside, so psi_m'' is bounded, monotone in |xi|,
and both one-sided limits at |xi| = m coincide.  These functions drive the
Itô-formula energy estimate: testing the truncated system against
psi_m'(v) yields L^q moment bounds whose constants do not depend on the
truncation radius, which is what energy_bootstrap measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quasilinear import IntervalAssembly

__all__ = [
    "PsiM",
    "psi",
    "psi_d1",
    "psi_d2",
    "verify_psi_properties",
    "PsiPropertyReport",
    "verify_dissipativity",
    "energy_bootstrap",
    "BootstrapReport",
    "phibar_energy_defect",
]


@dataclass(frozen=True)
class PsiM:
    """Exponent q > 2 and matching point m >= 1."""

    q: float
    m: float = 1.0

    def __post_init__(self):
        if not self.q > 2:
            raise ValueError("psi_m requires q > 2")
        if not self.m >= 1:
            raise ValueError("psi_m requires m >= 1")


def psi(p, xi):
    """Piecewise value of psi_m (vectorized)."""
    q, m = p.q, p.m
    xi = np.asarray(xi, dtype=float)
    ax = np.abs(xi)
    inner = ax**q
    outer = m ** (q - 2) * (
        0.5 * q * (q - 1) * xi**2
        - q * (q - 2) * m * ax
        + 0.5 * (q - 1) * (q - 2) * m**2
    )
    return np.where(ax <= m, inner, outer)


def psi_d1(p, xi):
    q, m = p.q, p.m
    xi = np.asarray(xi, dtype=float)
    ax = np.abs(xi)
    sgn = np.sign(xi)
    inner = q * ax ** (q - 1) * sgn
    outer = m ** (q - 2) * (q * (q - 1) * xi - q * (q - 2) * m * sgn)
    return np.where(ax <= m, inner, outer)


def psi_d2(p, xi):
    q, m = p.q, p.m
    xi = np.asarray(xi, dtype=float)
    ax = np.abs(xi)
    inner = q * (q - 1) * ax ** (q - 2)
    outer = np.full_like(ax, m ** (q - 2) * q * (q - 1))
    return np.where(ax <= m, inner, outer)


@dataclass
class PsiPropertyReport:
    min_slacks: dict
    matching_defects: tuple
    convergence_defect: float
    ok: bool

    def worst(self):
        return min(self.min_slacks.values())


def verify_psi_properties(p, grid=None, tol=1e-10, match_tol=1e-12, m_values=(2.0, 4.0, 8.0, 16.0)):
    """Pointwise verification of the five structural inequalities.

        (i)   |psi'(xi)| <= |xi| psi''(xi)
        (ii)  psi'(xi)/xi >= 0                (xi != 0)
        (iii) psi''(xi) <= q(q-1)(1 + psi(xi))
        (iv)  xi^2 psi''(xi) <= q(q-1) psi(xi)
        (v)   psi'' nondecreasing in |xi|

    plus C^2 matching of value/slope/curvature across |xi| = m and the
    pointwise limits psi_m -> |.|^q, psi_m'' -> q(q-1)|.|^(q-2) along
    increasing m (exact once m >= |xi|; the limit of psi'' carries the
    curvature factor q(q-1) of the power).
    """
    q, m = p.q, p.m
    if grid is None:
        grid = np.arange(-10.0 * m, 10.0 * m + 1e-12, 0.01)
    grid = np.asarray(grid, dtype=float)
    v, d1, d2 = psi(p, grid), psi_d1(p, grid), psi_d2(p, grid)
    slacks = {}
    slacks["d1_vs_xi_d2"] = float(np.min(np.abs(grid) * d2 - np.abs(d1)))
    nz = grid != 0.0
    slacks["d1_over_xi"] = float(np.min(d1[nz] / grid[nz]))
    slacks["d2_vs_psi"] = float(np.min(q * (q - 1) * (1.0 + v) - d2))
    slacks["xi2_d2_vs_psi"] = float(np.min(q * (q - 1) * v - grid**2 * d2))
    order = np.argsort(np.abs(grid), kind="stable")
    slacks["d2_monotone"] = float(np.min(np.diff(d2[order])))

    # one-sided branch values at the matching point |xi| = m
    def branch(fun_inner, fun_outer):
        return abs(fun_inner - fun_outer)

    inner_v, outer_v = m**q, m ** (q - 2) * (
        0.5 * q * (q - 1) * m**2 - q * (q - 2) * m**2 + 0.5 * (q - 1) * (q - 2) * m**2
    )
    inner_d1, outer_d1 = q * m ** (q - 1), m ** (q - 2) * (q * (q - 1) * m - q * (q - 2) * m)
    inner_d2, outer_d2 = q * (q - 1) * m ** (q - 2), m ** (q - 2) * q * (q - 1)
    scale = max(1.0, m**q)
    matching = (
        branch(inner_v, outer_v) / scale,
        branch(inner_d1, outer_d1) / max(1.0, q * m ** (q - 1)),
        branch(inner_d2, outer_d2) / max(1.0, inner_d2),
    )

    conv = 0.0
    probe = grid[:: max(1, len(grid) // 64)]
    for mm in m_values:
        pm = PsiM(q, mm)
        sel = np.abs(probe) <= mm
        conv = max(
            conv,
            float(np.max(np.abs(psi(pm, probe[sel]) - np.abs(probe[sel]) ** q))),
            float(
                np.max(
                    np.abs(
                        psi_d2(pm, probe[sel])
                        - q * (q - 1) * np.abs(probe[sel]) ** (q - 2)
                    )
                )
            ),
        )

    ok = (
        all(s >= -tol for s in slacks.values())
        and all(d <= match_tol for d in matching)
        and conv <= tol
    )
    return PsiPropertyReport(slacks, matching, conv, ok)


def verify_dissipativity(phi, p, samples=None, seed=0, N=1, y_range=4.0, n_samples=512, t=0.0, x=None):
    """Smallest K with sum_a psi'(v^a) phi^a(v) <= K (1 + sum_b psi(v^b)).

    phi follows the QLCoefficients calling convention.  Returns 0 for a
    field whose left side never goes positive (e.g. phi = 0 or odd
    dissipative reactions).
    """
    rng = np.random.default_rng(seed)
    if x is None:
        x = np.array([0.5])
    if samples is None:
        samples = rng.uniform(-y_range, y_range, size=(n_samples, len(x), N))
    vals = np.asarray(phi(t, x, samples))
    lhs = np.sum(psi_d1(p, samples) * vals, axis=-1)
    rhs = 1.0 + np.sum(psi(p, samples), axis=-1)
    return float(max(0.0, np.max(lhs / rhs)))


@dataclass
class BootstrapReport:
    psi_mass: float
    grad_mass: float
    data_mass: float
    se: float

    @property
    def ratio(self):
        return (self.psi_mass + self.grad_mass) / self.data_mass


def energy_bootstrap(ensemble, p, u0=None, batches=10):
    """Discrete analogue of the L^q energy estimate for a solve_ql run.

    Computes E sum_i dt int psi_m(v) dx and E sum_i dt int psi''_m(v)|dv|^2 dx
    (trapezoid in space, spectral gradient) and their ratio against
    1 + ||u0||_{L^q}^q.  The jackknifed standard error of the combined
    mass is reported; uniformity of the ratio over truncation radii is
    the acceptance-level check.
    """
    meta = ensemble.meta
    if meta.get("kind") != "quasilinear":
        raise ValueError("energy_bootstrap expects a solve_ql ensemble")
    asm = IntervalAssembly(ensemble.triple, meta["collocation_factor"])
    grid = ensemble.grid
    dt = np.diff(grid)
    P = ensemble.n_paths
    psi_path = np.zeros(P)
    grad_path = np.zeros(P)
    for i in range(len(dt)):
        u_hat = ensemble.paths[:, i]
        vals = asm.values(u_hat)
        dvals = asm.gradient(u_hat)
        psi_path += dt[i] * asm.integrate(np.sum(psi(p, vals), axis=-1))
        grad_path += dt[i] * asm.integrate(
            np.sum(psi_d2(p, vals) * dvals**2, axis=-1)
        )
    if u0 is None:
        u0_vals = asm.values(ensemble.paths[:, 0])
        data = 1.0 + float(np.mean(asm.integrate(np.sum(np.abs(u0_vals) ** p.q, axis=-1))))
    else:
        u0_vals = asm.values(np.asarray(u0))
        data = 1.0 + float(asm.integrate(np.sum(np.abs(u0_vals) ** p.q, axis=-1)))
    total = psi_path + grad_path
    se = _jackknife_se(total, batches) / data
    return BootstrapReport(
        psi_mass=float(np.mean(psi_path)),
        grad_mass=float(np.mean(grad_path)),
        data_mass=data,
        se=float(se),
    )


def _jackknife_se(samples, batches):
    n = len(samples)
    if n < 2:
        return 0.0
    batches = min(batches, n)
    splits = np.array_split(np.arange(n), batches)
    total = samples.sum()
    means = np.array(
        [(total - samples[s].sum()) / (n - len(s)) for s in splits]
    )
    return np.sqrt((batches - 1) / batches * np.sum((means - means.mean()) ** 2))


def phibar_energy_defect(ensemble, coeffs, p, step_indices=None):
    """Size of the divergence-part contribution to the energy identity.

    The y^a-only part Phi_bar drops out of the psi-energy balance by the
    divergence theorem; on the discrete grid its contribution
    int psi''(v^a) Phi_bar^a(v^a) d_x v^a dx is pure quadrature error.
    Returns the largest absolute value over the sampled steps.
    """
    if coeffs.Phi_bar is None:
        return 0.0
    meta = ensemble.meta
    asm = IntervalAssembly(ensemble.triple, meta["collocation_factor"])
    if step_indices is None:
        step_indices = range(0, ensemble.paths.shape[1], max(1, ensemble.paths.shape[1] // 8))
    worst = 0.0
    for i in step_indices:
        u_hat = ensemble.paths[:, i]
        vals = asm.values(u_hat)
        dvals = asm.gradient(u_hat)
        bar = np.asarray(coeffs.Phi_bar(vals))[..., 0]
        integrand = np.sum(psi_d2(p, vals) * bar * dvals, axis=-1)
        worst = max(worst, float(np.abs(asm.integrate(integrand)).max()))
    return worst
