"""Worked examples with hand-computed constants, kept as regression anchors."""

import json

import numpy as np
import pytest

import varspde as vs
from varspde import cli, stein
from varspde import quasilinear as ql


def test_distance_bound_unit_weight_arithmetic():
    # scalar a = 2, one noise mode b = 1, ||v||_V^2 = v^2 (realized with an
    # eigenvalue epsilon): c[v] = 1.5 v^2, mu = Lambda(A) = 2, so the form
    # deviation is |0.75 - 1| = 0.25.  With the (non-sharp) certificate
    # lambda = 0.75 one gets rho = 0.375 and the bound 0.25 <= 0.625.
    eps = 1e-9
    triple = vs.SpectralTriple.custom([eps])
    pair = vs.scalar_pair(triple, 2.0, 1.0)
    rep = vs.check_coercivity(pair)
    np.testing.assert_allclose(rep.Lambda_A, 2.0, rtol=1e-8)
    np.testing.assert_allclose(rep.lam, 1.5, rtol=1e-8)  # sharp constant
    params = stein.SteinParams(mu=2.0, rho=0.75 / 2.0, r=0.5, R=1.5, q=4.0)
    res = stein.verify_distance_bound(pair, triple, params)
    assert res.ok
    # form deviation |mu^-1 c[v] - ||v||_V^2| / ||v||_V^2 is 0.25 for every v,
    # so the probe margin is 0.625 - 0.25 = 0.375 exactly
    np.testing.assert_allclose(res.bound - res.form_margin, 0.25, atol=1e-7)
    # the A-only operator distance (no noise part) vanishes: mu^-1 A = A0
    assert res.op_distance <= 1e-6
    # the sharp certificate lambda = 1.5 makes the form bound tight
    sharp = stein.SteinParams(mu=2.0, rho=0.75, r=0.5, R=1.3, q=4.0)
    res2 = stein.verify_distance_bound(pair, triple, sharp)
    assert res2.ok
    np.testing.assert_allclose(res2.bound - res2.form_margin, 0.25, atol=1e-7)
    np.testing.assert_allclose(res2.bound, 0.25)


def test_square_domain_end_to_end_linear():
    triple = vs.SpectralTriple.square(10)
    # lowest eigenvalue 2 pi^2, weights nondecreasing
    np.testing.assert_allclose(triple.eigenvalues[0], 2 * np.pi**2)
    pair = vs.random_symmetric_pair(triple, 3, lam=0.7, Lam=2.0, noise_frac=0.3, modes=2)
    noise = vs.NoiseModel(2, vs.uniform_grid(0.5, 30), 11)
    rng = np.random.default_rng(0)
    prob = vs.LinearProblem(
        triple=triple, pair=pair, noise=noise,
        f=0.3 * rng.standard_normal((1, 10)), u0=0.2 * rng.standard_normal((1, 10)),
    )
    ens = vs.solve_linear(prob, paths=6)
    assert np.all(np.isfinite(ens.paths))
    assert vs.check_coercivity(pair).lam == pytest.approx(0.7, abs=1e-9)


def test_square_domain_quasilinear_not_implemented():
    triple = vs.SpectralTriple.square(8)
    c = ql.constant_coefficients(a=1.0)
    noise = vs.NoiseModel(1, vs.uniform_grid(0.5, 10), 1)
    with pytest.raises(NotImplementedError):
        ql.solve_ql(c, triple, noise, np.zeros((1, 8)), paths=1)


def test_cli_dt_field_sets_grid(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        """
kind = "solve-linear"
seed = 1
[triple]
dim = 4
[noise]
modes = 1
T = 1.0
[numerics]
paths = 2
dt = 0.05
[pair]
family = "riesz"
[data]
u0_mode = 0
"""
    )
    out = tmp_path / "o"
    assert cli.main(["solve-linear", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 20


def test_workers_env_variable(tmp_path, monkeypatch):
    from varspde._parallel import worker_count

    monkeypatch.setenv("VARSPDE_WORKERS", "3")
    assert worker_count(None) == 3
    monkeypatch.setenv("VARSPDE_WORKERS", "junk")
    assert worker_count(None) == 1
    assert worker_count(5) == 5


def test_n_steps_alias(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        """
kind = "check-coercivity"
[triple]
domain_kind = "interval"
dim = 5
[noise]
modes = 1
n_steps = 17
[pair]
family = "laplacian"
[numerics]
M = 1.0
"""
    )
    out = tmp_path / "o"
    assert cli.main(["check-coercivity", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "coercivity.json").read_text())
    assert rep["lambda"] == pytest.approx(1.0, abs=1e-9)
