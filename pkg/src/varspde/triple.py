"""Finite spectral model of the Gelfand triple (V, H, V*) and its norms.

Everything lives in coefficient space: a vector is an (N, dim) array of
coefficients against the H-orthonormal Dirichlet eigenbasis of the chosen
domain.  With w_k = 1 + lambda_k, the V / H / V* norms and the whole
interpolation scale are plain weighted l2 sums, which is what makes every
estimate in the library checkable to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpectralTriple",
    "SpaceTag",
    "H",
    "V",
    "VDUAL",
    "complex_interp",
    "real_interp",
    "TimeNormKind",
    "lp_norm_kind",
    "sup_norm_kind",
    "holder_kind",
    "gagliardo_kind",
    "norm",
    "duality_pairing",
    "time_norm",
    "holder_seminorm",
]


def _interval_eigenvalues(dim):
    k = np.arange(1, dim + 1, dtype=float)
    return (k * np.pi) ** 2


def _square_eigenvalues(dim):
    # dim smallest values of (k^2 + l^2) pi^2; enumerating k,l up to
    # ceil(sqrt(2 dim)) + 1 is guaranteed to contain them.
    kmax = int(np.ceil(np.sqrt(2.0 * dim))) + 1
    k, l = np.meshgrid(np.arange(1, kmax + 1), np.arange(1, kmax + 1))
    sums = (k**2 + l**2).ravel()
    order = np.lexsort((l.ravel(), k.ravel(), sums))
    idx = order[:dim]
    eig = sums[idx].astype(float) * np.pi**2
    modes = np.stack([k.ravel()[idx], l.ravel()[idx]], axis=1)
    return eig, modes


class SpectralTriple:
    """Galerkin model of (V, H, V*) from Dirichlet Laplacian eigenpairs.

    Immutable after construction; instances may be shared freely across
    ensemble workers.  ``domain`` is one of ``interval`` (0,1), ``square``
    (0,1)^2 or ``custom`` (explicit eigenvalues, used by scalar test
    problems that need a prescribed V-weight).
    """

    def __init__(self, dim, components=1, domain="interval", eigenvalues=None):
        if dim < 1:
            raise ValueError("dim must be a positive integer")
        if components < 1:
            raise ValueError("components must be a positive integer")
        self.dim = int(dim)
        self.components = int(components)
        self.domain = domain
        if domain == "interval":
            eig = _interval_eigenvalues(dim)
            modes = np.arange(1, dim + 1)[:, None]
        elif domain == "square":
            eig, modes = _square_eigenvalues(dim)
        elif domain == "custom":
            if eigenvalues is None:
                raise ValueError("custom domain requires explicit eigenvalues")
            eig = np.asarray(eigenvalues, dtype=float).copy()
            modes = np.arange(1, dim + 1)[:, None]
        else:
            raise ValueError(f"unknown domain kind {domain!r}")
        if eig.shape != (self.dim,):
            raise ValueError("eigenvalue count does not match dim")
        if np.any(eig <= 0) or np.any(np.diff(eig) < 0):
            raise ValueError("eigenvalues must be positive and nondecreasing")
        self.eigenvalues = eig
        self.mode_indices = modes
        self.weights = 1.0 + eig
        for arr in (self.eigenvalues, self.mode_indices, self.weights):
            arr.flags.writeable = False

    @classmethod
    def interval(cls, dim, components=1):
        return cls(dim, components, "interval")

    @classmethod
    def square(cls, dim, components=1):
        return cls(dim, components, "square")

    @classmethod
    def custom(cls, eigenvalues, components=1):
        eig = np.asarray(eigenvalues, dtype=float)
        return cls(len(eig), components, "custom", eigenvalues=eig)

    @property
    def spatial_dim(self):
        return 2 if self.domain == "square" else 1

    @property
    def flat_dim(self):
        return self.components * self.dim

    def flat_weights(self):
        """V-weights repeated per component, matching C-order flattening."""
        return np.tile(self.weights, self.components)

    def check_vector(self, v):
        v = np.asarray(v)
        if v.shape[-2:] != (self.components, self.dim):
            raise ValueError(
                f"expected trailing shape ({self.components}, {self.dim}), "
                f"got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("vector has non-finite entries")
        return v

    def basis_vector(self, mode, component=0):
        """Coefficient array of the eigenfunction e_{mode} (0-based index)."""
        v = np.zeros((self.components, self.dim))
        v[component, mode] = 1.0
        return v

    def __repr__(self):
        return (
            f"SpectralTriple(dim={self.dim}, components={self.components}, "
            f"domain={self.domain!r})"
        )


@dataclass(frozen=True)
class SpaceTag:
    """Which norm of the interpolation scale to evaluate.

    kind: "H" | "V" | "Vdual" | "complex" | "real".  The complex scale
    [H,V]_theta uses weight (1+lambda)^theta; the real scale (H,V)_{s,p}
    is the dyadic-block sequence norm.
    """

    kind: str
    theta: float = 0.0
    s: float = 0.0
    p: float = 2.0

    def label(self):
        if self.kind == "complex":
            return f"complex({self.theta:g})"
        if self.kind == "real":
            return f"real({self.s:g},{self.p:g})"
        return self.kind


H = SpaceTag("H")
V = SpaceTag("V")
VDUAL = SpaceTag("Vdual")


def complex_interp(theta):
    if not 0.0 <= theta <= 1.0:
        raise ValueError("complex interpolation exponent must lie in [0, 1]")
    return SpaceTag("complex", theta=float(theta))


def real_interp(s, p):
    if not 0.0 < s < 1.0:
        raise ValueError("real interpolation exponent s must lie in (0, 1)")
    if p < 2.0:
        raise ValueError("real interpolation requires p >= 2")
    return SpaceTag("real", s=float(s), p=float(p))


def _weight_exponent(tag):
    return {"H": 0.0, "V": 1.0, "Vdual": -1.0, "complex": tag.theta}[tag.kind]


def norm(triple, v, tag=H):
    """Norm of coefficient array v in the space selected by tag.

    Supports leading batch axes; the norm reduces the trailing
    (components, dim) block.
    """
    v = triple.check_vector(v)
    sq = np.abs(v) ** 2
    if tag.kind == "real":
        return _besov_norm(triple, sq, tag.s, tag.p)
    e = _weight_exponent(tag)
    w = triple.weights**e if e != 0.0 else np.ones(triple.dim)
    return np.sqrt(np.sum(sq * w, axis=(-2, -1)))


def _dyadic_blocks(triple):
    # block j collects modes with 2^(2j) <= 1 + lambda_k < 2^(2(j+1))
    j = np.floor(np.log2(triple.weights) / 2.0).astype(int)
    return j


def _besov_norm(triple, sq, s, p):
    blocks = _dyadic_blocks(triple)
    nblocks = blocks.max() + 1
    comp_sq = np.sum(sq, axis=-2)  # components in quadrature
    batch = comp_sq.shape[:-1]
    block_sq = np.zeros(batch + (nblocks,))
    for j in range(nblocks):
        sel = blocks == j
        if np.any(sel):
            block_sq[..., j] = np.sum(comp_sq[..., sel], axis=-1)
    scale = 2.0 ** (np.arange(nblocks) * s * p)
    return np.sum(scale * block_sq ** (p / 2.0), axis=-1) ** (1.0 / p)


def duality_pairing(triple, f, v):
    """<f, v> for f in V*, v in V, extending the H inner product.

    Returns sum_k f_k conj(v_k); real inputs give a float.  Satisfies
    |<f,v>| <= ||f||_{V*} ||v||_V.
    """
    f = triple.check_vector(f)
    v = triple.check_vector(v)
    out = np.sum(f * np.conj(v), axis=(-2, -1))
    if not (np.iscomplexobj(f) or np.iscomplexobj(v)):
        return out.real if out.ndim else float(out.real)
    return out


@dataclass(frozen=True)
class TimeNormKind:
    """Discrete path-norm selector: lp | sup | holder | gagliardo."""

    kind: str
    p: float = 2.0
    gamma: float = 0.5
    theta: float = 0.25
    space: SpaceTag = V

    def label(self):
        if self.kind == "lp":
            return f"Lp({self.p:g};{self.space.label()})"
        if self.kind == "sup":
            return f"sup({self.space.label()})"
        if self.kind == "holder":
            return f"holder({self.gamma:g};{self.space.label()})"
        return f"gagliardo({self.theta:g},{self.p:g};{self.space.label()})"


def lp_norm_kind(p, space=V):
    if p < 1:
        raise ValueError("p must be >= 1")
    return TimeNormKind("lp", p=float(p), space=space)


def sup_norm_kind(space=H):
    return TimeNormKind("sup", space=space)


def holder_kind(gamma, space=H):
    if not 0.0 < gamma < 1.0:
        raise ValueError("holder exponent must lie in (0, 1)")
    return TimeNormKind("holder", gamma=float(gamma), space=space)


def gagliardo_kind(theta, p, space=H):
    if not 0.0 <= theta < 0.5:
        raise ValueError("gagliardo exponent must lie in [0, 1/2)")
    if p < 1:
        raise ValueError("p must be >= 1")
    return TimeNormKind("gagliardo", theta=float(theta), p=float(p), space=space)


def _check_grid(grid, nsteps=None):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must contain at least two time points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if nsteps is not None and grid.size != nsteps:
        raise ValueError("grid length does not match path length")
    return grid


def _space_norms(triple, path, tag):
    return norm(triple, path, tag)


def holder_seminorm(triple, path, grid, gamma, space=H):
    """max over i<j of ||u(t_j)-u(t_i)||_X / (t_j-t_i)^gamma."""
    path = triple.check_vector(path)
    grid = _check_grid(grid, path.shape[0])
    gram = _space_gram(triple, path, space)
    d = np.diag(gram)
    dist_sq = np.maximum(d[:, None] + d[None, :] - 2.0 * gram, 0.0)
    dt = np.abs(grid[:, None] - grid[None, :])
    iu = np.triu_indices(len(grid), k=1)
    ratios = np.sqrt(dist_sq[iu]) / dt[iu] ** gamma
    return float(np.max(ratios))


def _space_gram(triple, path, tag):
    if tag.kind == "real":
        raise ValueError("holder/gagliardo norms need a Hilbertian space tag")
    e = _weight_exponent(tag)
    w = triple.weights**e
    flat = path.reshape(path.shape[0], -1)
    wflat = np.tile(w, triple.components)
    weighted = flat * wflat
    return np.real(weighted @ np.conj(flat).T)


def time_norm(triple, path, grid, kind):
    """Discrete-in-time path norm of a trajectory (n+1, N, dim).

    lp:        (sum_i dt_i ||u(t_i)||_X^p)^(1/p) with i = 1..n and
               dt_i = t_i - t_{i-1} (right endpoints; a transient thinner
               than the grid then contributes at most its own mass instead
               of a full-weight t = 0 sample).
    sup:       max_i ||u(t_i)||_X.
    holder:    the Holder seminorm (constant paths give 0).
    gagliardo: discrete Sobolev-Slobodeckij double sum plus the lp term;
               theta = 0 degenerates to the plain lp norm.
    """
    path = triple.check_vector(path)
    grid = _check_grid(grid, path.shape[0])
    if kind.kind == "sup":
        return float(np.max(_space_norms(triple, path, kind.space)))
    if kind.kind == "holder":
        return holder_seminorm(triple, path, grid, kind.gamma, kind.space)
    dt = np.diff(grid)
    norms = _space_norms(triple, path, kind.space)
    lp = float(np.sum(dt * norms[1:] ** kind.p) ** (1.0 / kind.p))
    if kind.kind == "lp":
        return lp
    if kind.kind == "gagliardo":
        if kind.theta == 0.0:
            return lp
        gram = _space_gram(triple, path, kind.space)
        d = np.diag(gram)
        dist_sq = np.maximum(d[:, None] + d[None, :] - 2.0 * gram, 0.0)
        tdiff = np.abs(grid[:, None] - grid[None, :])
        np.fill_diagonal(tdiff, 1.0)
        dtw = np.append(dt, dt[-1])
        weights = np.outer(dtw, dtw) / tdiff ** (1.0 + kind.theta * kind.p)
        np.fill_diagonal(weights, 0.0)
        double = np.sum(weights * dist_sq ** (kind.p / 2.0))
        return float(double ** (1.0 / kind.p) + lp)
    raise ValueError(f"unknown time norm kind {kind.kind!r}")
