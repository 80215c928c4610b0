"""Seeded truncated cylindrical Brownian motion.

Increments are drawn from a counter-based Philox stream keyed on
(seed, path_index, purpose), so any worker can regenerate any path
bit-identically and ensembles parallelize without shared RNG state.
"""

from __future__ import annotations

import numpy as np

__all__ = ["NoiseModel", "uniform_grid"]

_BASE_STREAM = 0


def uniform_grid(T, steps):
    if steps < 1:
        raise ValueError("need at least one time step")
    if T <= 0:
        raise ValueError("horizon T must be positive")
    return np.linspace(0.0, float(T), steps + 1)


class NoiseModel:
    """K independent scalar Brownian motions on a fixed time grid.

    increments(path) returns the (K, n) array of Gaussian increments with
    column variances dt_i; refined(path, factor) returns Brownian-bridge
    consistent increments on the factor-refined grid, whose sums over each
    coarse step reproduce the coarse increments exactly.
    """

    def __init__(self, modes, grid, seed):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must contain at least two time points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if modes < 0:
            raise ValueError("modes must be nonnegative")
        self.modes = int(modes)
        self.grid = grid
        self.seed = int(seed)

    @property
    def n_steps(self):
        return self.grid.size - 1

    @property
    def T(self):
        return float(self.grid[-1])

    def _generator(self, path_index, purpose):
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(int(path_index), int(purpose))
        )
        return np.random.Generator(np.random.Philox(ss))

    def increments(self, path_index):
        if self.n_steps == 0:
            raise ValueError("empty grid")
        gen = self._generator(path_index, _BASE_STREAM)
        z = gen.standard_normal((self.modes, self.n_steps))
        return z * np.sqrt(np.diff(self.grid))

    def refined_grid(self, factor):
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        coarse = self.grid
        fine = np.empty((coarse.size - 1) * factor + 1)
        for i in range(coarse.size - 1):
            fine[i * factor : (i + 1) * factor] = np.linspace(
                coarse[i], coarse[i + 1], factor, endpoint=False
            )
        fine[-1] = coarse[-1]
        return fine

    def refined(self, path_index, factor):
        """Increments on the factor-refined grid, coupled to this path.

        Within each coarse step the sub-increments are conditioned on
        their sum being the coarse increment (Brownian bridge); the last
        sub-increment is set by the exact remainder so the sums match to
        the bit.
        """
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        coarse = self.increments(path_index)
        if factor == 1:
            return coarse
        dt = np.diff(self.grid)
        gen = self._generator(path_index, factor)
        x = gen.standard_normal((self.modes, self.n_steps, factor))
        x *= np.sqrt(dt / factor)[None, :, None]
        y = x - x.mean(axis=-1, keepdims=True) + coarse[..., None] / factor
        # the last sub-increment carries the remainder; summation recovers
        # the coarse increment to IEEE rounding (a couple of ulps), which is
        # the floor for any float construction
        partial = y[..., :-1].sum(axis=-1)
        y[..., -1] = coarse - partial
        return y.reshape(self.modes, self.n_steps * factor)

    def refined_model(self, factor):
        """Independent model on the refined grid (fresh increments)."""
        return NoiseModel(self.modes, self.refined_grid(factor), self.seed)

    def coupled(self, factor):
        """Noise model on the refined grid whose increments are the
        Brownian-bridge refinement of this model's paths, so runs at the
        two resolutions share one underlying Brownian path."""
        return _CoupledRefinement(self, factor)


class _CoupledRefinement(NoiseModel):
    def __init__(self, base, factor):
        super().__init__(base.modes, base.refined_grid(factor), base.seed)
        self._base = base
        self._factor = int(factor)

    def increments(self, path_index):
        return self._base.refined(path_index, self._factor)
