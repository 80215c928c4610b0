"""Quasilinear diagonal systems on the interval with Dirichlet boundary.

System solved (per component alpha, Einstein summation over j, n):

    du^a = [d_i(a^a_ij(u) d_j u^a) + d_i Phi^a_i(u) + phi^a(u)] dt
         + sum_n [b^a_{n,j}(u^a) d_j u^a + g^a_n(u)] dw_n,   u = 0 on the boundary.

Spatial discretization is collocation on a uniform grid plus discrete sine
synthesis: the frozen diffusion matrix is assembled from grid values of a
at the current iterate (the semilinear reduction), the drift is implicit in
that matrix, and the divergence nonlinearity, reaction, and noise are
explicit.  Mollification acts on the coefficients in the state variable
(kernel-shift quadrature with a shrinking bump) together with spatial
smoothing of the state; truncation composes Phi and phi with the
1-Lipschitz ball projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.ndimage import convolve1d

from . import triple as tr
from ._parallel import run_chunked, worker_count
from .linear import LinearProblem, NumericsError, PathEnsemble
from .operators import CoercivityError, OperatorPair

__all__ = [
    "QLCoefficients",
    "MollifiedCoefficients",
    "TruncationRadius",
    "WindowError",
    "project_ball",
    "mollify",
    "check_ql_coercivity",
    "coefficient_bounds",
    "solve_ql",
    "freeze_linear_pair",
    "martingale_residual",
    "MartingaleStatistic",
    "path_functional",
    "convergence_study",
    "constant_coefficients",
    "cubic_reaction_coefficients",
    "IntervalAssembly",
]


class WindowError(RuntimeError):
    """State left the mollification window (zero-extension would corrupt)."""


def project_ball(y, radius):
    """Projection of y in R^N onto the closed ball of the given radius.

    1-Lipschitz and idempotent; acts on the last axis.
    """
    if radius <= 0:
        raise ValueError("truncation radius must be positive")
    y = np.asarray(y, dtype=float)
    norms = np.sqrt(np.sum(y**2, axis=-1, keepdims=True))
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return y * scale


@dataclass(frozen=True)
class TruncationRadius:
    """Ball projection P_R and the truncated nonlinearities it induces."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("truncation radius must be positive")

    def __call__(self, y):
        return project_ball(y, self.radius)


@dataclass
class QLCoefficients:
    """Coefficient fields of the diagonal quasilinear system.

    Callable conventions (t scalar, x (G,) grid points, y (..., G, N)
    state values; leading axes are broadcast batches):

        a(t, x, y)       -> (..., G, N, d, d)   per-component diffusion
        b(t, x, y)       -> (..., G, N, K, d)   gradient-noise, y^a only
        Phi_hat(t, x, y) -> (..., G, N, d)      Lipschitz divergence part
        Phi_bar(y)       -> (..., G, N, d)      y^a-only divergence part
        phi(t, x, y)     -> (..., G, N)         dissipative reaction
        g(t, x, y)       -> (..., G, N, K)      additive noise

    Diagonality in the components is structural: a and b return
    per-component blocks, so cross-component couplings are identically
    zero.  Metadata records the certified constants.
    """

    N: int
    d: int
    K: int
    a: object
    b: object = None
    Phi_hat: object = None
    Phi_bar: object = None
    phi: object = None
    g: object = None
    Lambda: float = 1.0
    lam: float = 1.0
    C: float = 1.0
    growth_h: float = 1.0
    a_depends_y: bool = True
    b_depends_y: bool = True
    name: str = ""

    def a_values(self, t, x, y):
        out = np.asarray(self.a(t, x, y))
        want = (len(x), self.N, self.d, self.d)
        if out.shape[-4:] != want:
            raise ValueError(f"a must return trailing shape {want}, got {out.shape}")
        return out

    def b_values(self, t, x, y):
        if self.b is None:
            return None
        out = np.asarray(self.b(t, x, y))
        want = (len(x), self.N, self.K, self.d)
        if out.shape[-4:] != want:
            raise ValueError(f"b must return trailing shape {want}, got {out.shape}")
        return out

    def Phi_values(self, t, x, y):
        total = None
        if self.Phi_hat is not None:
            total = np.asarray(self.Phi_hat(t, x, y))
        if self.Phi_bar is not None:
            bar = np.asarray(self.Phi_bar(y))
            total = bar if total is None else total + bar
        return total

    def phi_values(self, t, x, y):
        return None if self.phi is None else np.asarray(self.phi(t, x, y))

    def g_values(self, t, x, y):
        return None if self.g is None else np.asarray(self.g(t, x, y))


# ---------------------------------------------------------------------------
# Mollification


def _bump(s):
    out = np.zeros_like(s, dtype=float)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2))
    return out


def _kernel_nodes(m, nodes):
    """Midpoint discretization of the bump on [-1/m, 1/m], mass exactly 1."""
    s = -1.0 + (np.arange(nodes) + 0.5) * (2.0 / nodes)
    w = _bump(s)
    w = w / w.sum()
    return s / m, w


@dataclass
class MollifiedCoefficients:
    """Coefficients with a, b smoothed in the state variable at level m.

    The convolution is a finite convex combination of shifted evaluations
    (product bump kernel for a over R^N, a one-dimensional bump for b per
    the diagonal structure), so sup bounds and the coercivity margin are
    preserved exactly up to rounding.  Evaluations must stay inside the
    window: |y|_inf + 1/m <= window, otherwise the zero extension would be
    felt and a guard fires.
    """

    base: QLCoefficients
    m: float
    window: float = 8.0
    nodes: int = 9

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("mollification level m must be >= 1")
        if self.nodes < 3:
            raise ValueError("need at least 3 kernel nodes")
        if self.window <= 1.0 / self.m:
            raise ValueError("window smaller than the kernel support")
        shifts1, w1 = _kernel_nodes(self.m, self.nodes)
        self._shifts1 = shifts1
        self._w1 = w1
        N = self.base.N
        grids = np.meshgrid(*([shifts1] * N), indexing="ij")
        self._shiftsN = np.stack([g.ravel() for g in grids], axis=-1)
        wprod = w1
        for _ in range(N - 1):
            wprod = np.multiply.outer(wprod, w1)
        self._wN = wprod.ravel()
        self._wN = self._wN / self._wN.sum()

    def _guard(self, y):
        peak = float(np.max(np.abs(y))) if y.size else 0.0
        if peak + 1.0 / self.m > self.window:
            raise WindowError(
                f"state magnitude {peak:.3g} + kernel support {1.0 / self.m:.3g} "
                f"exceeds mollification window {self.window:.3g}"
            )

    def coefficients(self):
        """QLCoefficients view with mollified a and b."""
        base = self.base

        def a_moll(t, x, y, _self=self):
            y = np.asarray(y)
            _self._guard(y)
            z = _self._shiftsN.reshape((-1,) + (1,) * (y.ndim - 1) + (base.N,))
            vals = base.a_values(t, x, y[None] - z)
            return np.tensordot(_self._wN, vals, axes=(0, 0))

        b_moll = None
        if base.b is not None:

            def b_moll(t, x, y, _self=self):
                y = np.asarray(y)
                _self._guard(y)
                z = _self._shifts1.reshape((-1,) + (1,) * y.ndim)
                vals = base.b_values(t, x, y[None] - z)
                return np.tensordot(_self._w1, vals, axes=(0, 0))

        return replace(base, a=a_moll, b=b_moll, name=base.name + f"|m={self.m:g}")


def mollify(base, m, window=8.0, nodes=9):
    """Mollified coefficient fields at level m (kernel support 1/m)."""
    return MollifiedCoefficients(base, m, window, nodes)


# ---------------------------------------------------------------------------
# Coercivity and bounds on samples


@dataclass
class QLMarginReport:
    margin: float
    lam: float
    at: tuple | None = None

    @property
    def coercive(self):
        return self.margin >= self.lam


def check_ql_coercivity(
    coeffs,
    t_samples=(0.0, 0.5),
    x_samples=None,
    y_samples=None,
    seed=0,
    y_range=3.0,
    n_y=64,
    symmetrize=True,
    tol=1e-9,
):
    """Minimal eigenvalue over samples of a^a - 1/2 (b^a)^T b^a.

    Returns the sampled margin (coercive iff >= lam).  The eigenvalue of
    the symmetrized matrix is computed, so the result is invariant under
    a -> (a + a^T)/2; a raw asymmetry beyond tol raises unless
    symmetrize is requested explicitly.
    """
    rng = np.random.default_rng(seed)
    if x_samples is None:
        x_samples = np.linspace(0.05, 0.95, 7)
    x_samples = np.asarray(x_samples, dtype=float)
    if y_samples is None:
        y_samples = rng.uniform(-y_range, y_range, size=(n_y, len(x_samples), coeffs.N))
        y_samples[0] *= 0.0
    margin = np.inf
    where = None
    for t in t_samples:
        a = coeffs.a_values(t, x_samples, y_samples)
        asym = np.abs(a - np.swapaxes(a, -1, -2)).max()
        if not symmetrize and asym > tol * max(1.0, np.abs(a).max()):
            raise ValueError("a^alpha is not symmetric")
        a = 0.5 * (a + np.swapaxes(a, -1, -2))
        form = a.copy()
        b = coeffs.b_values(t, x_samples, y_samples)
        if b is not None:
            form = form - 0.5 * np.einsum("...ki,...kj->...ij", b, b)
        eigs = np.linalg.eigvalsh(form)[..., 0]
        local = float(eigs.min())
        if local < margin:
            margin = local
            where = (t, np.unravel_index(int(np.argmin(eigs)), eigs.shape))
    return QLMarginReport(margin=margin, lam=coeffs.lam, at=where)


def coefficient_bounds(coeffs, t_samples=(0.0, 0.5), x_samples=None, y_samples=None, seed=0, y_range=3.0, n_y=64):
    """Sampled sup-bound of |a| entries and the HS size of b."""
    rng = np.random.default_rng(seed)
    if x_samples is None:
        x_samples = np.linspace(0.05, 0.95, 7)
    x_samples = np.asarray(x_samples, dtype=float)
    if y_samples is None:
        y_samples = rng.uniform(-y_range, y_range, size=(n_y, len(x_samples), coeffs.N))
    sup_a = 0.0
    sup_b = 0.0
    for t in t_samples:
        sup_a = max(sup_a, float(np.abs(coeffs.a_values(t, x_samples, y_samples)).max()))
        b = coeffs.b_values(t, x_samples, y_samples)
        if b is not None:
            sup_b = max(sup_b, float(np.abs(b).max()))
    return sup_a, sup_b


# ---------------------------------------------------------------------------
# Collocation assembly on the interval


class IntervalAssembly:
    """Sine synthesis/quadrature operators on a uniform collocation grid.

    Interior nodes x_g = g/(G+1); the full grid adds the two boundary
    points with trapezoid half-weights.  Analysis against a sine mode uses
    the interior sum only (the integrand vanishes at the boundary), which
    is exact for band-limited integrands since G >= dim.
    """

    def __init__(self, triple, factor=4):
        if triple.domain != "interval":
            raise NotImplementedError(
                "quasilinear assembly is implemented for interval domains"
            )
        self.triple = triple
        dim = triple.dim
        G = max(int(factor) * dim, dim)
        self.G = G
        self.h = 1.0 / (G + 1)
        self.x_full = np.linspace(0.0, 1.0, G + 2)
        self.x_int = self.x_full[1:-1]
        k = np.arange(1, dim + 1)
        self.S_full = np.sqrt(2.0) * np.sin(np.pi * np.outer(self.x_full, k))
        self.S_int = self.S_full[1:-1]
        self.D_full = np.sqrt(2.0) * np.pi * k * np.cos(np.pi * np.outer(self.x_full, k))
        self.D_int = self.D_full[1:-1]
        self.w_full = np.full(G + 2, self.h)
        self.w_full[0] = self.w_full[-1] = 0.5 * self.h

    def values(self, u_hat):
        """(..., N, dim) coefficients -> (..., G+2, N) grid values."""
        return np.einsum("gk,...nk->...gn", self.S_full, u_hat)

    def gradient(self, u_hat):
        return np.einsum("gk,...nk->...gn", self.D_full, u_hat)

    def project(self, fvals_int):
        """(..., G, N) interior values -> (..., N, dim) mode loads of <f, e_k>."""
        return self.h * np.einsum("gk,...gn->...nk", self.S_int, fvals_int)

    def project_gradient(self, fvals_full):
        """(..., G+2, N) values -> (..., N, dim) loads of <f, e_k'>."""
        return np.einsum("g,gk,...gn->...nk", self.w_full, self.D_full, fvals_full)

    def stiffness(self, a_full):
        """(..., G+2, N) diffusion values -> (..., N, dim, dim) blocks of
        <a d(.), d e_k>."""
        return np.einsum(
            "...gn,g,gk,gl->...nkl", a_full, self.w_full, self.D_full, self.D_full
        )

    def integrate(self, fvals_full):
        """Trapezoid integral of (..., G+2) values over (0,1)."""
        return np.einsum("g,...g->...", self.w_full, fvals_full)

    def smooth_state(self, vals, m):
        """Spatial mollification R_m of grid values with zero extension."""
        halfw = int(np.floor(1.0 / (m * self.h)))
        if halfw < 1:
            return vals
        offsets = np.arange(-halfw, halfw + 1) * self.h
        ker = _bump(offsets * m)
        ker = ker / ker.sum()
        return convolve1d(vals, ker, axis=-2, mode="constant", cval=0.0)


@dataclass
class _QLContext:
    """Everything a step (or its reconstruction) needs."""

    coeffs: QLCoefficients
    assembly: IntervalAssembly
    m: float | None
    R_trunc: float | None
    window: float
    nodes: int
    eff: QLCoefficients = None

    def __post_init__(self):
        if self.m is not None:
            self.eff = mollify(self.coeffs, self.m, self.window, self.nodes).coefficients()
        else:
            self.eff = self.coeffs

    def state_fields(self, t, u_hat):
        """Grid values and the spatially smoothed state of the iterate."""
        asm = self.assembly
        vals = asm.values(u_hat)
        ysm = asm.smooth_state(vals, self.m) if self.m is not None else vals
        return vals, ysm

    def diffusion_blocks(self, t, ysm):
        a_full = self.eff.a_values(t, self.assembly.x_full, ysm)
        if self.coeffs.d != 1:
            raise NotImplementedError("interval assembly requires d = 1")
        return self.assembly.stiffness(a_full[..., 0, 0])

    def drift_loads(self, t, vals):
        asm = self.assembly
        ytr = project_ball(vals, self.R_trunc) if self.R_trunc is not None else vals
        load = 0.0
        Phi = self.eff.Phi_values(t, asm.x_full, ytr)
        if Phi is not None:
            load = load - asm.project_gradient(Phi[..., 0])
        phi = self.eff.phi_values(t, asm.x_int, ytr[..., 1:-1, :])
        if phi is not None:
            load = load + asm.project(phi)
        return load

    def noise_loads(self, t, vals, ysm, du_int):
        """(..., N, K, dim) mode loads of <b du + g_n, e_k>."""
        asm = self.assembly
        total = None
        b = self.eff.b_values(t, asm.x_int, ysm[..., 1:-1, :])
        if b is not None:
            total = b[..., 0] * du_int[..., None]
        gv = self.eff.g_values(t, asm.x_int, vals[..., 1:-1, :])
        if gv is not None:
            total = gv if total is None else total + gv
        if total is None:
            return None
        return asm.h * np.einsum("gm,...gnk->...nkm", asm.S_int, total)


def _ql_step_chunk(ctx, noise, u0_fn, lo, hi, out):
    coeffs = ctx.coeffs
    asm = ctx.assembly
    grid = noise.grid
    n = noise.n_steps
    N, dim = coeffs.N, asm.triple.dim
    idx = np.arange(lo, hi)
    chunk = hi - lo
    dW = np.stack([noise.increments(p) for p in idx]) if noise.modes else None

    u = u0_fn(idx)
    out[lo:hi, 0] = u
    shared_lu = None
    eye = np.eye(dim)
    for i in range(n):
        t = grid[i]
        dt = grid[i + 1] - grid[i]
        vals, ysm = ctx.state_fields(t, u)
        rhs = u + dt * ctx.drift_loads(t, vals)
        if dW is not None:
            du_int = np.einsum("gk,pnk->pgn", asm.D_int, u)
            loads = ctx.noise_loads(t, vals, ysm, du_int)
            if loads is not None:
                rhs = rhs + np.einsum("pnkm,pk->pnm", loads, dW[:, :, i])
        if coeffs.a_depends_y:
            A = ctx.diffusion_blocks(t, ysm)  # (chunk, N, dim, dim)
            mats = eye + dt * A
            u = np.linalg.solve(
                mats.reshape(chunk * N, dim, dim), rhs.reshape(chunk * N, dim, 1)
            ).reshape(chunk, N, dim)
        else:
            if shared_lu is None or shared_lu[0] != (t, dt):
                A = ctx.diffusion_blocks(t, np.zeros((asm.G + 2, N)))
                shared_lu = ((t, dt), [lu_factor(eye + dt * A[alpha]) for alpha in range(N)])
            for alpha in range(N):
                u[:, alpha] = lu_solve(shared_lu[1][alpha], rhs[:, alpha].T).T
        if not np.all(np.isfinite(u)):
            raise NumericsError("non-finite state in quasilinear solve", step=i)
        out[lo:hi, i + 1] = u


def solve_ql(
    coeffs,
    triple,
    noise,
    u0,
    paths,
    m=None,
    R_trunc=None,
    window=8.0,
    kernel_nodes=9,
    collocation_factor=4,
    check=True,
    workers=None,
):
    """Ensemble solve of the (possibly mollified/truncated) system.

    m enables coefficient mollification plus spatial state smoothing at
    level m; R_trunc composes Phi and phi with the ball projection (b and
    g stay untouched).  The implicit matrix is assembled from grid values
    of a at the current iterate; with y-independent a the factorization is
    shared across paths.
    """
    if check:
        report = check_ql_coercivity(coeffs)
        if report.margin <= 0:
            raise CoercivityError(
                f"quasilinear coercivity fails: sampled margin {report.margin:.3e}"
            )
    asm = IntervalAssembly(triple, collocation_factor)
    ctx = _QLContext(coeffs, asm, m, R_trunc, window, kernel_nodes)
    n = noise.n_steps
    out = np.empty((paths, n + 1, coeffs.N, triple.dim))

    if callable(u0):
        u0_fn = lambda idx: np.broadcast_to(
            u0(idx), (len(idx), coeffs.N, triple.dim)
        ).astype(float).copy()
    else:
        arr = np.asarray(u0, dtype=float)
        u0_fn = lambda idx: np.broadcast_to(arr, (len(idx), coeffs.N, triple.dim)).copy()

    run_chunked(
        paths, workers, lambda lo, hi: _ql_step_chunk(ctx, noise, u0_fn, lo, hi, out)
    )
    meta = {
        "m": m,
        "R_trunc": R_trunc,
        "window": window,
        "kernel_nodes": kernel_nodes,
        "collocation_factor": collocation_factor,
        "workers": worker_count(workers),
        "kind": "quasilinear",
    }
    return PathEnsemble(
        paths=out, grid=noise.grid.copy(), triple=triple, seed=noise.seed,
        noise=noise, meta=meta,
    )


def freeze_linear_pair(coeffs, triple, t=0.0, collocation_factor=4):
    """Assemble the constant OperatorPair and data of y-independent fields.

    Uses the identical collocation quadrature as solve_ql, so solving the
    returned LinearProblem reproduces the quasilinear output pathwise.
    """
    if coeffs.a_depends_y or coeffs.b_depends_y:
        raise ValueError("freeze_linear_pair requires y-independent a and b")
    asm = IntervalAssembly(triple, collocation_factor)
    N, dim, K = coeffs.N, triple.dim, coeffs.K
    zeros_full = np.zeros((asm.G + 2, N))
    A_blocks = coeffs.a_values(t, asm.x_full, zeros_full)[..., 0, 0]
    A_blocks = asm.stiffness(A_blocks)
    nd = N * dim
    A = np.zeros((nd, nd))
    for alpha in range(N):
        A[alpha * dim : (alpha + 1) * dim, alpha * dim : (alpha + 1) * dim] = A_blocks[alpha]
    B = None
    if coeffs.b is not None:
        bvals = coeffs.b_values(t, asm.x_int, zeros_full[1:-1])  # (G, N, K, d)
        B = np.zeros((K, nd, nd))
        for kmode in range(K):
            for alpha in range(N):
                blk = asm.h * asm.S_int.T @ (bvals[:, alpha, kmode, 0][:, None] * asm.D_int)
                B[kmode, alpha * dim : (alpha + 1) * dim, alpha * dim : (alpha + 1) * dim] = blk
    pair = OperatorPair(triple, A, B, name=f"frozen({coeffs.name})")

    zero_state = np.zeros((asm.G + 2, N))
    f_load = 0.0
    Phi = coeffs.Phi_values(t, asm.x_full, zero_state)
    if Phi is not None:
        f_load = f_load - asm.project_gradient(Phi[..., 0])
    phiv = coeffs.phi_values(t, asm.x_int, zero_state[1:-1])
    if phiv is not None:
        f_load = f_load + asm.project(phiv)
    f = None if np.isscalar(f_load) else f_load
    g = None
    gv = coeffs.g_values(t, asm.x_int, zero_state[1:-1])
    if gv is not None:
        g = asm.h * np.einsum("gm,gnk->knm", asm.S_int, gv)
    return pair, f, g


# ---------------------------------------------------------------------------
# Martingale diagnostics


@dataclass
class MartingaleStatistic:
    mean: float
    se: float
    z: float
    n_paths: int
    kind: str

    @property
    def accepted(self):
        return abs(self.mean) <= 3.0 * self.se


def path_functional(triple, s_index, seed=0, n_points=3):
    """Bounded continuous functional of the path up to index s_index.

    A tanh-squashed linear readout of finitely many H-pairings, mapped
    into [0, 1]; the admissible class for the conditional-centering test.
    """
    rng = np.random.default_rng(seed)
    idxs = np.sort(rng.integers(0, s_index + 1, size=n_points))
    w = rng.standard_normal((triple.components, triple.dim))
    c = rng.standard_normal(n_points)

    def gamma(paths):
        vals = np.einsum("ptnk,nk->pt", paths[:, idxs], w)
        return 0.5 * (1.0 + np.tanh(vals @ c))

    return gamma


def _reconstruct_weak_terms(ensemble, ctx, xi_hat, quadrature):
    """Per-step drift quadrature and noise coefficients paired with xi.

    Returns (drift (P, n), noise_coef (P, n, K)); with quadrature
    "scheme" the a-term uses the implicit iterate, reproducing the solver
    identity exactly, while "left" evaluates everything at the left node.
    """
    asm = ctx.assembly
    coeffs = ctx.coeffs
    grid = ensemble.grid
    n = len(grid) - 1
    paths = ensemble.paths
    P = paths.shape[0]
    K = coeffs.K
    dxi_full = np.einsum("gk,nk->gn", asm.D_full, xi_hat)
    xi_int = np.einsum("gk,nk->gn", asm.S_int, xi_hat)
    drift = np.zeros((P, n))
    noise_coef = np.zeros((P, n, max(K, 1)))
    for i in range(n):
        t = grid[i]
        u_hat = paths[:, i]
        vals, ysm = ctx.state_fields(t, u_hat)
        u_for_a = paths[:, i + 1] if quadrature == "scheme" else u_hat
        du_a = np.einsum("gk,pnk->pgn", asm.D_full, u_for_a)
        a_full = ctx.eff.a_values(t, asm.x_full, ysm)[..., 0, 0]
        drift[:, i] = np.einsum(
            "g,pgn,pgn,gn->p", asm.w_full, a_full, du_a, dxi_full
        )
        ytr = project_ball(vals, ctx.R_trunc) if ctx.R_trunc is not None else vals
        Phi = ctx.eff.Phi_values(t, asm.x_full, ytr)
        if Phi is not None:
            drift[:, i] += np.einsum("g,pgn,gn->p", asm.w_full, Phi[..., 0], dxi_full)
        phiv = ctx.eff.phi_values(t, asm.x_int, ytr[..., 1:-1, :])
        if phiv is not None:
            drift[:, i] -= asm.h * np.einsum("pgn,gn->p", phiv, xi_int)
        du_int = np.einsum("gk,pnk->pgn", asm.D_int, u_hat)
        loads = ctx.noise_loads(t, vals, ysm, du_int)
        if loads is not None:
            noise_coef[:, i, :] = np.einsum("pnkm,nm->pk", loads, xi_hat)
    return drift, noise_coef


def martingale_residual(
    ensemble,
    coeffs,
    xi,
    s_index,
    t_index,
    gamma=None,
    kind="mean",
    quadrature="scheme",
):
    """Monte Carlo test that the weak-form process has centered increments.

    M(t) = <u(t), xi> - <u(0), xi> + int [<a du, dxi> + <Phi, dxi> - <phi, xi>]
    is computed per path from the stored trajectory; the statistic is the
    mean of gamma * (M(t) - M(s)) with gamma a bounded functional of the
    path up to s.  kind "quadratic" tests M^2 minus its bracket and
    "cross" tests M w_n minus the cross bracket.  The solver is accepted
    when |mean| <= 3 SE.
    """
    meta = ensemble.meta
    if meta.get("kind") != "quasilinear":
        raise ValueError("martingale_residual expects a solve_ql ensemble")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (coeffs.N, ensemble.triple.dim):
        raise ValueError("test function must lie in the Galerkin span (N, dim)")
    if not 0 <= s_index < t_index < len(ensemble.grid):
        raise ValueError("need 0 <= s < t within the grid")
    asm = IntervalAssembly(ensemble.triple, meta["collocation_factor"])
    ctx = _QLContext(
        coeffs, asm, meta["m"], meta["R_trunc"], meta["window"], meta["kernel_nodes"]
    )
    drift, noise_coef = _reconstruct_weak_terms(ensemble, ctx, xi, quadrature)
    pairing = np.einsum("ptnk,nk->pt", ensemble.paths, xi)
    dt = np.diff(ensemble.grid)
    dM = np.diff(pairing, axis=1) + dt * drift
    M = np.concatenate([np.zeros((dM.shape[0], 1)), np.cumsum(dM, axis=1)], axis=1)

    if gamma is None:
        gw = np.ones(ensemble.n_paths)
    else:
        gw = np.asarray(gamma(ensemble.paths))

    if kind == "mean":
        samples = gw * (M[:, t_index] - M[:, s_index])
    elif kind == "quadratic":
        bracket = np.sum(noise_coef**2, axis=2) * dt
        proc = M**2
        proc[:, 1:] -= np.cumsum(bracket, axis=1)
        samples = gw * (proc[:, t_index] - proc[:, s_index])
    elif kind == "cross":
        if ensemble.noise is None or ensemble.noise.modes == 0:
            raise ValueError("cross variation needs the driving noise")
        incs = np.stack(
            [ensemble.noise.increments(p)[0] for p in range(ensemble.n_paths)]
        )
        wpath = np.concatenate(
            [np.zeros((ensemble.n_paths, 1)), np.cumsum(incs, axis=1)], axis=1
        )
        proc = M * wpath
        proc[:, 1:] -= np.cumsum(noise_coef[:, :, 0] * dt, axis=1)
        samples = gw * (proc[:, t_index] - proc[:, s_index])
    else:
        raise ValueError(f"unknown residual kind {kind!r}")
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(len(samples)))
    z = mean / se if se > 0 else 0.0
    return MartingaleStatistic(mean=mean, se=se, z=z, n_paths=len(samples), kind=kind)


# ---------------------------------------------------------------------------
# Convergence across mollification / truncation levels


@dataclass
class ConvergenceReport:
    levels: list
    mean_sup_distance: np.ndarray
    per_path: np.ndarray

    @property
    def monotone(self):
        d = self.mean_sup_distance
        return bool(np.all(np.diff(d) <= 1e-12 + 0.05 * d[:-1])) if len(d) > 1 else True


def convergence_study(
    coeffs, triple, noise, u0, levels, vary="m", paths=16, base_m=None,
    base_R=None, workers=None, **options
):
    """Coupled-path distances between consecutive mollification or
    truncation levels: the computable stand-in for the compactness step.

    All levels share the same noise paths.  Reports the sup-in-time
    H-distance per path and its ensemble mean level-to-level.
    """
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    runs = []
    for lev in levels:
        m = lev if vary == "m" else base_m
        R = lev if vary == "R" else base_R
        runs.append(
            solve_ql(
                coeffs, triple, noise, u0, paths, m=m, R_trunc=R,
                workers=workers, check=False, **options
            )
        )
    dists = []
    for prev, nxt in zip(runs, runs[1:]):
        diff = prev.paths - nxt.paths
        sup_h = np.max(tr.norm(triple, diff, tr.H), axis=1)
        dists.append(sup_h)
    per_path = np.stack(dists) if dists else np.zeros((0, paths))
    return ConvergenceReport(
        levels=levels,
        mean_sup_distance=per_path.mean(axis=1) if dists else np.zeros(0),
        per_path=per_path,
    )


# ---------------------------------------------------------------------------
# Built-in coefficient families


def constant_coefficients(N=1, K=1, a=1.0, b=0.0, g=0.0, name="constant"):
    """y-independent diffusion a*I, gradient noise b, additive noise g."""

    def a_fn(t, x, y):
        out = np.zeros(np.shape(y)[:-1] + (N, 1, 1))
        out[..., 0, 0] = a
        return out

    b_fn = None
    if b != 0.0:

        def b_fn(t, x, y):
            out = np.zeros(np.shape(y)[:-1] + (N, K, 1))
            out[..., 0, 0] = b
            return out

    g_fn = None
    if g != 0.0:

        def g_fn(t, x, y):
            out = np.zeros(np.shape(y)[:-1] + (N, K))
            out[..., 0] = g
            return out

    lam = a - 0.5 * b * b
    return QLCoefficients(
        N=N, d=1, K=K, a=a_fn, b=b_fn, g=g_fn,
        Lambda=max(a, abs(b), abs(g), 1.0), lam=lam, C=abs(g),
        a_depends_y=False, b_depends_y=False, name=name,
    )


def cubic_reaction_coefficients(
    N=1, K=1, a=1.0, b=0.0, g=0.0, reaction=1.0, name="cubic"
):
    """Dissipative cubic reaction phi(y) = -reaction * y^3 per component."""
    base = constant_coefficients(N=N, K=K, a=a, b=b, g=g, name=name)

    def phi(t, x, y):
        return -reaction * np.asarray(y) ** 3

    return replace(base, phi=phi, C=max(base.C, reaction), growth_h=3.0, name=name)
