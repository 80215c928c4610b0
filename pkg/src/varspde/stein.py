"""Complex interpolation family (A_z, B_z) on the unit strip.

Given a symmetric coercive pair with M = 0 and certified constants, put
mu = Lambda(A), rho = lambda / Lambda(A) and pick 0 < r < 1 < R with
R(1-rho) < 1 and r * min(C_p (1-rho), c Lambda(B)) < 1.  With
F(z) = r e^{z log(R/r)} the family

    A_z = mu (F(z) (mu^-1 A - A0) + A0),     B_z = F(z)^(1/2) B

is analytic, uniformly coercive on the closed strip with margin at least
1 - |F(z)|(1-rho), recovers (A, B) exactly at z = theta = -log r / log(R/r),
and its boundary line z = i t is a small perturbation of mu*A0.  Every one
of these statements is exposed as a numerical check here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linear import riesz_matrix
from .operators import OperatorPair

__all__ = [
    "SteinParams",
    "SteinFamily",
    "compute_mu_rho",
    "default_radii",
    "build_family",
    "verify_distance_bound",
    "verify_strip_coercivity",
    "endpoint_perturbation_check",
    "DistanceBoundResult",
    "StripCoercivityReport",
    "default_strip_grid",
]

_M_TOL = 1e-9


def compute_mu_rho(report):
    """(mu, rho) = (Lambda(A), lambda / Lambda(A)) from a certificate.

    Requires M = 0 (shift the pair first otherwise) and lambda > 0.
    """
    if abs(report.M) > _M_TOL:
        raise ValueError("compute_mu_rho needs a certificate with M = 0")
    if report.lam <= 0:
        raise ValueError("pair is not coercive (lambda <= 0)")
    if report.Lambda_A <= 0:
        raise ValueError("Lambda(A) must be positive")
    mu = report.Lambda_A
    rho = report.lam / report.Lambda_A
    return mu, min(rho, 1.0)


def default_radii(rho, Cp=None, c=None, Lambda_B=None):
    """Admissible (r, R) for the given rho and measured constants.

    R sits halfway between 1 and the admissibility cap 1/(1-rho), but never
    above 2 (a huge R buys nothing and amplifies rounding in the family);
    r is capped so that r * min(C_p (1-rho), c Lambda(B)) < 1 with margin.
    """
    if rho >= 1.0:
        R = 2.0
    else:
        R = min(2.0, 0.5 * (1.0 + 1.0 / (1.0 - rho)))
    caps = []
    if Cp is not None:
        caps.append(Cp * (1.0 - rho))
    if c is not None and Lambda_B is not None:
        caps.append(c * Lambda_B)
    gate = min(caps) if caps else 0.0
    r = 0.5 if gate <= 0 else min(0.5, 0.9 / gate)
    return r, R


@dataclass(frozen=True)
class SteinParams:
    """Interpolation parameters (mu, rho, r, R, theta) plus exponents.

    q > 2 is the boundary integrability target; the interpolated exponent
    q_theta solves 1/q_theta = (1-theta)/2 + theta/q and is the certified
    p0 > 2 for these radii.
    """

    mu: float
    rho: float
    r: float
    R: float
    q: float = 4.0
    Cp: float | None = None
    c: float | None = None
    Lambda_B: float | None = None

    def __post_init__(self):
        if not (self.mu > 0 and 0 < self.rho <= 1):
            raise ValueError("need mu > 0 and rho in (0, 1]")
        if not (0 < self.r < 1 < self.R):
            raise ValueError("need 0 < r < 1 < R")
        if self.R * (1.0 - self.rho) >= 1.0:
            raise ValueError("admissibility R(1-rho) < 1 fails")
        caps = []
        if self.Cp is not None:
            caps.append(self.Cp * (1.0 - self.rho))
        if self.c is not None and self.Lambda_B is not None:
            caps.append(self.c * self.Lambda_B)
        if caps and self.r * min(caps) >= 1.0:
            raise ValueError("admissibility r*min(Cp(1-rho), c Lambda(B)) < 1 fails")
        if not self.q > 2:
            raise ValueError("target integrability q must exceed 2")

    @property
    def log_ratio(self):
        return np.log(self.R / self.r)

    @property
    def theta(self):
        return -np.log(self.r) / self.log_ratio

    @property
    def q_theta(self):
        th = self.theta
        return 1.0 / ((1.0 - th) / 2.0 + th / self.q)

    def F(self, z):
        return self.r * np.exp(np.asarray(z) * self.log_ratio)

    def F_half(self, z):
        # globally analytic square root of F (F never vanishes)
        return np.sqrt(self.r) * np.exp(np.asarray(z) * (0.5 * self.log_ratio))

    @classmethod
    def from_report(cls, report, q=4.0, Cp=None, c=None, r=None, R=None):
        mu, rho = compute_mu_rho(report)
        r0, R0 = default_radii(rho, Cp, c, report.Lambda_B)
        return cls(
            mu=mu,
            rho=rho,
            r=r if r is not None else r0,
            R=R if R is not None else R0,
            q=q,
            Cp=Cp,
            c=c,
            Lambda_B=report.Lambda_B,
        )

    def summary(self):
        return {
            "mu": self.mu,
            "rho": self.rho,
            "r": self.r,
            "R": self.R,
            "theta": self.theta,
            "q": self.q,
            "q_theta": self.q_theta,
        }


class SteinFamily:
    """Evaluator z -> (A_z, B_z) on the closed unit strip."""

    def __init__(self, pair, params, triple=None):
        self.pair = pair
        self.params = params
        self.triple = triple or pair.triple
        self._A0 = riesz_matrix(self.triple)

    def __call__(self, z):
        z = complex(z)
        if not -1e-12 <= z.real <= 1.0 + 1e-12:
            raise ValueError("z lies outside the closed unit strip")
        pair, params, A0 = self.pair, self.params, self._A0
        Fz = params.F(z)
        Fh = params.F_half(z)
        mu = params.mu

        def A_eval(t, state, _F=Fz):
            A = pair.A_matrix(t, state)
            return mu * (_F * (A / mu - A0) + A0)

        def B_eval(t, state, _Fh=Fh):
            return _Fh * pair.B_stack(t, state)

        if pair.constant:
            return OperatorPair(
                self.triple,
                A_eval(0.0, None),
                B_eval(0.0, None) if pair.noise_modes else None,
                name=f"{pair.name}@z={z:g}",
            )
        return OperatorPair(
            self.triple,
            A_eval,
            B_eval if pair.noise_modes else None,
            noise_modes=pair.noise_modes,
            name=f"{pair.name}@z={z:g}",
        )


def build_family(pair, params, triple=None):
    """Family with A_theta = A and B_theta = B exactly (F(theta) = 1)."""
    return SteinFamily(pair, params, triple)


@dataclass
class DistanceBoundResult:
    ok: bool
    form_margin: float
    op_distance: float
    bound: float
    witness: np.ndarray | None = None

    def __bool__(self):
        return self.ok


def verify_distance_bound(
    pair, triple, params, probes=128, t=0.0, state=None, seed=0, tol=1e-9
):
    """Check |mu^-1(a[v] - 1/2||Bv||^2) - ||v||_V^2| <= (1-rho)||v||_V^2
    on probe vectors, and the operator bound ||mu^-1 A - A0|| <= 1 - rho
    by exact singular value.
    """
    A = pair.A_matrix(t, state)
    sym_defect = np.abs(A - A.conj().T).max()
    if sym_defect > 1e-9 * max(1.0, np.abs(A).max()):
        raise ValueError("distance bound requires a symmetric (hermitian) A")
    B = pair.B_stack(t, state)
    w = triple.flat_weights()
    n = triple.flat_dim
    mu, rho = params.mu, params.rho
    bound = 1.0 - rho

    rng = np.random.default_rng(seed)
    v = rng.standard_normal((probes, n))
    if np.iscomplexobj(A) or np.iscomplexobj(B):
        v = v + 1j * rng.standard_normal((probes, n))
    vV2 = np.einsum("pi,i,pi->p", np.conj(v), w, v).real
    a_v = np.einsum("pi,ij,pj->p", np.conj(v), A, v).real
    if B.shape[0]:
        Bv = np.einsum("knm,pm->pkn", B, v)
        hs = np.einsum("pkn,pkn->p", np.conj(Bv), Bv).real
    else:
        hs = np.zeros(probes)
    lhs = np.abs((a_v - 0.5 * hs) / mu - vV2)
    slack = bound * vV2 - lhs
    form_margin = float(np.min(slack / np.maximum(vV2, 1e-300)))
    witness = None
    ok = form_margin >= -tol
    if not ok:
        witness = v[int(np.argmin(slack))]

    wroot = np.sqrt(w)
    M = A / mu - np.diag(w)
    M_w = M / wroot[:, None] / wroot[None, :]
    op_distance = float(np.linalg.svd(M_w, compute_uv=False)[0])
    if op_distance > bound + tol:
        ok = False
    return DistanceBoundResult(ok, form_margin, op_distance, bound, witness)


def default_strip_grid():
    ts = [0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0, 4.0, -4.0]
    zs = [complex(x, t) for x in (0.0, 1.0) for t in ts]
    zs += [complex(x, t) for x in np.arange(0.1, 0.95, 0.1) for t in ts]
    return zs


@dataclass
class StripCoercivityReport:
    z_values: list
    lhs_min: np.ndarray
    bounds: np.ndarray
    min_lhs: float
    min_slack: float
    global_bound: float
    ok: bool = field(default=True)


def verify_strip_coercivity(
    family, triple=None, z_samples=None, probes=16, t=0.0, state=None, seed=0, tol=1e-9
):
    """Uniform coercivity of (A_z, B_z) over the closed strip.

    For each sampled z the exact minimum over unit-V vectors of
    Re mu^-1 (a_z[v] - 1/2||B_z v||^2) is computed by eigen-decomposition
    and compared against the bound 1 - |F(z)|(1-rho); the minimum over the
    strip is also compared against the global bound 1 - R(1-rho) > 0.
    """
    triple = triple or family.triple
    params = family.params
    if z_samples is None:
        z_samples = default_strip_grid()
    w = triple.flat_weights()
    wroot = np.sqrt(w)
    mu, rho = params.mu, params.rho
    lhs = np.empty(len(z_samples))
    bounds = np.empty(len(z_samples))
    rng = np.random.default_rng(seed)
    for j, z in enumerate(z_samples):
        pz = family(z)
        A = pz.A_matrix(t, state)
        B = pz.B_stack(t, state)
        S = 0.5 * (A + A.conj().T)
        G = np.einsum("kij,kil->jl", np.conj(B), B) if B.shape[0] else 0.0
        form = (S - 0.5 * G) / mu
        form_w = form / wroot[:, None] / wroot[None, :]
        form_w = 0.5 * (form_w + form_w.conj().T)
        lhs[j] = np.linalg.eigvalsh(form_w)[0]
        bounds[j] = 1.0 - abs(params.F(z)) * (1.0 - rho)
        if probes:
            v = rng.standard_normal((probes, triple.flat_dim)) + 1j * rng.standard_normal(
                (probes, triple.flat_dim)
            )
            vV2 = np.einsum("pi,i,pi->p", np.conj(v), w, v).real
            q = np.einsum("pi,ij,pj->p", np.conj(v), form, v).real
            if np.any(q < (lhs[j] - tol) * vV2 - tol):
                raise AssertionError("strip eigen-certificate violated on probe")
    min_slack = float(np.min(lhs - bounds))
    report = StripCoercivityReport(
        z_values=list(z_samples),
        lhs_min=lhs,
        bounds=bounds,
        min_lhs=float(np.min(lhs)),
        min_slack=min_slack,
        global_bound=1.0 - params.R * (1.0 - rho),
        ok=min_slack >= -tol,
    )
    return report


def endpoint_perturbation_margins(
    family, Cp, t_samples=(0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0, 4.0, -4.0)
):
    """Per-boundary-point margins 1 - C_p |F(it)| ||mu^-1 A - A0||.

    |F(it)| = r on the whole left boundary, so the margins coincide up to
    rounding; the exact operator distance is used.
    """
    params = family.params
    triple = family.triple
    A = family.pair.A_matrix(0.0, None)
    w = triple.flat_weights()
    wroot = np.sqrt(w)
    M = A / params.mu - np.diag(w)
    dist = float(np.linalg.svd(M / wroot[:, None] / wroot[None, :], compute_uv=False)[0])
    return [1.0 - Cp * abs(params.F(1j * t)) * dist for t in t_samples]


def endpoint_perturbation_check(
    family, Cp, t_samples=(0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0, 4.0, -4.0)
):
    """Minimum boundary margin; positive means the smallness hypotheses of
    the perturbation step hold for the whole boundary family."""
    return float(min(endpoint_perturbation_margins(family, Cp, t_samples)))
