"""Progressively measurable operator pairs (A, B) and their certificates.

A acts V -> V* and B collects K noise-mode matrices acting V -> H, all in
eigenbasis coefficients.  The coercivity constant lambda, the operator
norms Lambda(A), Lambda(B) and the form symmetry are certified by exact
eigen/singular-value computations in the V-weighted basis and spot-checked
on random probe vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .triple import SpectralTriple

__all__ = [
    "OperatorPair",
    "CoercivityReport",
    "CoercivityError",
    "check_coercivity",
    "check_symmetry",
    "polarization_bound",
    "PolarizationResult",
    "riesz_pair",
    "laplacian_pair",
    "scalar_pair",
    "scalar_triple",
    "diagonal_pair",
    "random_symmetric_pair",
]


class CoercivityError(ValueError):
    """Raised when a solve requires a coercive pair and the certificate fails."""


class OperatorPair:
    """Pair (A, B) with A(t, state) a (Nd, Nd) matrix and B a stack of K
    noise-mode matrices (K, Nd, Nd).

    Evaluation must be a pure function of (t, state) so that ensembles can
    evaluate it concurrently.  ``constant=True`` (auto-detected for plain
    arrays) lets solvers factor the implicit matrix once.
    """

    def __init__(self, triple, A, B=None, noise_modes=None, name=""):
        self.triple = triple
        n = triple.flat_dim
        self._A_const = None if callable(A) else np.asarray(A)
        if self._A_const is not None and self._A_const.shape != (n, n):
            raise ValueError(f"A must have shape ({n}, {n})")
        self._A_eval = A if callable(A) else None
        if B is None:
            self._B_const = np.zeros((0, n, n))
            self._B_eval = None
        elif callable(B):
            self._B_const = None
            self._B_eval = B
        else:
            B = np.asarray(B)
            if B.ndim == 2:
                B = B[None]
            if B.shape[1:] != (n, n):
                raise ValueError(f"each B_n must have shape ({n}, {n})")
            self._B_const = B
            self._B_eval = None
        if noise_modes is None:
            if self._B_const is None:
                raise ValueError("noise_modes required for callable B")
            noise_modes = self._B_const.shape[0]
        self.noise_modes = int(noise_modes)
        if self.noise_modes == 0 and self._B_eval is not None:
            raise ValueError("K = 0 with a nonzero B requested")
        self.name = name

    @property
    def constant(self):
        return self._A_const is not None and self._B_const is not None

    def A_matrix(self, t=0.0, state=None):
        A = self._A_const if self._A_const is not None else self._A_eval(t, state)
        A = np.asarray(A)
        if not np.all(np.isfinite(A)):
            raise ValueError("A evaluation produced non-finite entries")
        return A

    def B_stack(self, t=0.0, state=None):
        if self._B_const is not None:
            return self._B_const
        B = np.asarray(self._B_eval(t, state))
        if B.ndim == 2:
            B = B[None]
        if not np.all(np.isfinite(B)):
            raise ValueError("B evaluation produced non-finite entries")
        return B

    def is_complex(self, t=0.0, state=None):
        return np.iscomplexobj(self.A_matrix(t, state)) or np.iscomplexobj(
            self.B_stack(t, state)
        )


@dataclass
class CoercivityReport:
    """Certified constants of Assumption-style coercivity/boundedness.

    lam is the largest constant with Re<Av,v> - 1/2||Bv||^2 + M||v||_H^2
    >= lam ||v||_V^2 on the Galerkin space, for the given M.
    """

    lam: float
    Lambda_A: float
    Lambda_B: float
    M: float
    symmetric: bool
    witnesses: dict = field(default_factory=dict)

    @property
    def Lambda(self):
        return self.Lambda_A + self.Lambda_B

    def to_json(self):
        payload = {
            "lambda": self.lam,
            "LambdaA": self.Lambda_A,
            "LambdaB": self.Lambda_B,
            "Lambda": self.Lambda,
            "M": self.M,
            "symmetric": self.symmetric,
            "witness_vectors": {
                k: np.asarray(v).tolist() for k, v in self.witnesses.items()
            },
        }
        return json.dumps(payload)


def _weighted(triple, mat, exponent=-0.5):
    w = triple.flat_weights() ** exponent
    return mat * w[:, None] * w[None, :]


def _hs_gram(B):
    # sum_n B_n^H B_n, the quadratic form of ||Bv||_HS^2
    if B.shape[0] == 0:
        return np.zeros(B.shape[1:])
    return np.einsum("kij,kil->jl", np.conj(B), B)


def check_symmetry(pair, t=0.0, state=None, tol=1e-10):
    """True iff the form <Au, v> is symmetric (hermitian when complex)."""
    A = pair.A_matrix(t, state)
    adj = A.conj().T if np.iscomplexobj(A) else A.T
    scale = max(1.0, np.abs(A).max())
    return bool(np.abs(A - adj).max() <= tol * scale)


def check_coercivity(pair, triple=None, t=0.0, state=None, M=0.0, probes=32, seed=0):
    """Certify (lambda, Lambda(A), Lambda(B)) for the pair at (t, state).

    lambda solves the generalized eigenproblem for the symmetrized form
    Q(v) = Re<Av,v> - 1/2 sum_n ||B_n v||_H^2 with the H-mass M||v||_H^2
    added; Lambda(A), Lambda(B) are exact operator norms in the weighted
    bases.  Random probe vectors re-verify the certificate to 1e-10.
    """
    triple = triple or pair.triple
    A = pair.A_matrix(t, state)
    B = pair.B_stack(t, state)
    S = 0.5 * (A + A.conj().T)
    G = _hs_gram(B)
    n = triple.flat_dim
    form = S - 0.5 * G + M * np.eye(n)
    form_w = _weighted(triple, form)
    form_w = 0.5 * (form_w + form_w.conj().T)
    eigvals, eigvecs = np.linalg.eigh(form_w)
    lam = float(eigvals[0])
    wroot = triple.flat_weights() ** -0.5
    lam_witness = wroot * eigvecs[:, 0]

    A_w = _weighted(triple, A)
    svals = np.linalg.svd(A_w, compute_uv=False)
    Lambda_A = float(svals[0])
    G_w = _weighted(triple, G)
    G_w = 0.5 * (G_w + G_w.conj().T)
    gvals, gvecs = np.linalg.eigh(G_w)
    Lambda_B = float(np.sqrt(max(gvals[-1], 0.0)))

    report = CoercivityReport(
        lam=lam,
        Lambda_A=Lambda_A,
        Lambda_B=Lambda_B,
        M=M,
        symmetric=check_symmetry(pair, t, state),
        witnesses={
            "lambda": lam_witness,
            "LambdaB": wroot * gvecs[:, -1],
        },
    )
    _spot_check(triple, A, G, report, probes, seed)
    return report


def _spot_check(triple, A, G, report, probes, seed, tol=1e-10):
    if probes <= 0:
        return
    rng = np.random.default_rng(seed)
    n = triple.flat_dim
    w = triple.flat_weights()
    v = rng.standard_normal((probes, n))
    if np.iscomplexobj(A) or np.iscomplexobj(G):
        v = v + 1j * rng.standard_normal((probes, n))
    vV = np.einsum("pi,i,pi->p", np.conj(v), w, v).real
    vH = np.einsum("pi,pi->p", np.conj(v), v).real
    Av = v @ A.T
    q = np.einsum("pi,ip->p", np.conj(v), A @ v.T).real
    q -= 0.5 * np.einsum("pi,ip->p", np.conj(v), G @ v.T).real
    scale = np.maximum(vV, 1e-300)
    if np.any(q + report.M * vH - report.lam * vV < -tol * scale):
        raise AssertionError("coercivity certificate violated on probe vector")
    Av_dual = np.einsum("pi,i->p", np.abs(Av) ** 2, 1.0 / w)
    if np.any(Av_dual > (report.Lambda_A**2) * vV * (1.0 + 1e-8) + tol):
        raise AssertionError("Lambda(A) certificate violated on probe vector")


@dataclass
class PolarizationResult:
    ok: bool
    constant: float
    witness: tuple | None = None

    def __bool__(self):
        return self.ok


def polarization_bound(triple, form, c, probes=256, seed=0, tol=1e-9):
    """Check that a hermitian form bounded by c on the diagonal satisfies
    |a(u,v)| <= c ||u||_V ||v||_V on random pairs.

    The input form matrix must be hermitian (raises otherwise) and must
    verify |a[u]| <= c||u||_V^2 on probe vectors; a violating pair is
    returned as a witness.
    """
    form = np.asarray(form)
    adj = form.conj().T
    if np.abs(form - adj).max() > 1e-12 * max(1.0, np.abs(form).max()):
        raise ValueError("form matrix is not hermitian")
    rng = np.random.default_rng(seed)
    n = form.shape[0]
    w = triple.flat_weights()
    if len(w) != n:
        raise ValueError("form dimension does not match triple")

    def draw(k):
        x = rng.standard_normal((k, n))
        if np.iscomplexobj(form):
            x = x + 1j * rng.standard_normal((k, n))
        return x

    u = draw(probes)
    uV2 = np.einsum("pi,i,pi->p", np.conj(u), w, u).real
    diag = np.abs(np.einsum("pi,ij,pj->p", np.conj(u), form, u))
    if np.any(diag > c * uV2 * (1 + tol) + tol):
        bad = int(np.argmax(diag - c * uV2))
        raise ValueError(
            f"diagonal bound |a[u]| <= c||u||_V^2 fails on probe {bad}"
        )
    u = draw(probes)
    v = draw(probes)
    a_uv = np.abs(np.einsum("pi,ij,pj->p", np.conj(v), form, u))
    uV = np.sqrt(np.einsum("pi,i,pi->p", np.conj(u), w, u).real)
    vV = np.sqrt(np.einsum("pi,i,pi->p", np.conj(v), w, v).real)
    bound = c * uV * vV
    bad = a_uv > bound * (1 + tol) + tol
    if np.any(bad):
        i = int(np.argmax(a_uv - bound))
        return PolarizationResult(False, c, (u[i], v[i]))
    return PolarizationResult(True, c)


# ---------------------------------------------------------------------------
# Built-in pair families


def riesz_pair(triple):
    """The Riesz map A0 with <A0 u, v> = (u|v)_V; B = 0."""
    return OperatorPair(triple, np.diag(triple.flat_weights()), name="riesz")


def laplacian_pair(triple):
    """Dirichlet Laplacian pairing <Av,v> = sum lambda_k |v_k|^2; B = 0."""
    lam = np.tile(triple.eigenvalues, triple.components)
    return OperatorPair(triple, np.diag(lam), name="laplacian")


def scalar_triple(v_weight=2.0):
    """One-mode triple with prescribed ||v||_V^2 = v_weight * |v|^2."""
    if v_weight <= 1.0:
        raise ValueError("V-weight must exceed 1 (weights are 1 + lambda)")
    return SpectralTriple.custom([v_weight - 1.0])


def scalar_pair(triple, a, b=0.0):
    """dim-1 pair A = [[a]] with one noise mode B = [[b]]."""
    if triple.flat_dim != 1:
        raise ValueError("scalar_pair needs a one-dimensional triple")
    B = np.array([[[b]]]) if b != 0.0 else None
    return OperatorPair(triple, np.array([[float(a)]]), B, name="scalar")


def diagonal_pair(triple, v_basis_values, b_scale=0.0, modes=1):
    """Pair diagonal in the V-weighted basis with the given spectrum.

    <Av,v> = sum d_k w_k |v_k|^2, so the distance-to-Riesz constants are
    read off the d_k directly; optional isotropic gradient noise with
    ||Bv||^2 = b_scale^2 ||v||_V^2 split over K modes.
    """
    d = np.asarray(v_basis_values, dtype=float)
    if d.shape != (triple.flat_dim,):
        raise ValueError("need one diagonal value per flat mode")
    w = triple.flat_weights()
    A = np.diag(d * w)
    if b_scale == 0.0:
        return OperatorPair(triple, A, name="diagonal")
    B = np.stack(
        [np.diag(b_scale * np.sqrt(w / modes)) for _ in range(modes)]
    )
    return OperatorPair(triple, A, B, name="diagonal")


def random_symmetric_pair(
    triple,
    seed,
    lam=1.0,
    Lam=2.0,
    noise_frac=0.5,
    modes=1,
):
    """Random symmetric admissible pair with exact target constants.

    In the V-weighted basis, A is a random symmetric matrix with spectrum
    spanning [lam, Lam] exactly, and the noise Gram is a multiple of
    (A_w - lam I), which keeps the coercivity constant at exactly lam for
    any noise fraction in [0, 1).  All pairs drawn with common (lam, Lam)
    therefore share their certified constants with M = 0.
    """
    if not 0.0 < lam <= Lam:
        raise ValueError("need 0 < lam <= Lam")
    if not 0.0 <= noise_frac < 1.0:
        raise ValueError("noise_frac must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n = triple.flat_dim
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if n == 1:
        d = np.array([Lam])
        lam_eff = Lam
    else:
        d = np.sort(rng.uniform(lam, Lam, size=n))
        d[0], d[-1] = lam, Lam
        lam_eff = lam
    A_w = (q * d) @ q.T
    wroot = np.sqrt(triple.flat_weights())
    A = A_w * wroot[:, None] * wroot[None, :]
    G_w = 2.0 * noise_frac * (A_w - lam_eff * np.eye(n))
    G_w = 0.5 * (G_w + G_w.T)
    evals, evecs = np.linalg.eigh(G_w)
    evals = np.maximum(evals, 0.0)
    C = (evecs * np.sqrt(evals)) @ evecs.T
    C = C * wroot[None, :]  # factor of G = sum B_n^T B_n
    B = np.zeros((modes, n, n))
    for k in range(modes):
        B[k, k::modes, :] = C[k::modes, :]
    return OperatorPair(triple, A, B, name=f"random-symmetric({seed})")
