"""Run configuration: parsing, validation, and object construction.

Configs are TOML (primary) or JSON.  Coefficient and data fields accept
either built-in family names with parameters or expression strings over
(t, x, y) with the arithmetic grammar +, -, *, /, **, unary -, the
functions exp, log, tanh, clamp(v, lo, hi), pow, and component references
y[0], y[1], ...  Expressions are parsed through a whitelisted AST and
evaluated with numpy broadcasting.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import quasilinear as ql
from .noise import NoiseModel, uniform_grid
from .operators import (
    diagonal_pair,
    laplacian_pair,
    random_symmetric_pair,
    riesz_pair,
    scalar_pair,
)
from .triple import SpectralTriple

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "validate_config",
    "compile_expression",
    "build_triple",
    "build_noise",
    "build_pair",
    "build_coefficients",
    "build_data",
]

_KINDS = (
    "solve-linear",
    "solve-ql",
    "stein-verify",
    "psi-test",
    "bootstrap",
    "moments",
    "tightness",
    "analyticity",
    "check-coercivity",
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Expression grammar

_ALLOWED_CALLS = {
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "pow": np.power,
    "abs": np.abs,
    "clamp": lambda v, lo, hi: np.clip(v, lo, hi),
}

_ALLOWED_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def compile_expression(text, names=("t", "x", "y")):
    """Compile an arithmetic expression into fn(t, x, y) -> ndarray.

    y is indexed by component: y[0], y[1], ...; bare y means y[0].
    Raises ConfigError with the offending construct on anything outside
    the grammar.
    """
    try:
        node = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(
            f"expression {text!r}: parse error at line {exc.lineno}, col {exc.offset}"
        ) from None

    def check(n):
        if isinstance(n, ast.Expression):
            check(n.body)
        elif isinstance(n, ast.BinOp) and type(n.op) in _ALLOWED_BINOPS:
            check(n.left)
            check(n.right)
        elif isinstance(n, ast.UnaryOp) and isinstance(n.op, (ast.USub, ast.UAdd)):
            check(n.operand)
        elif isinstance(n, ast.Call):
            if not isinstance(n.func, ast.Name) or n.func.id not in _ALLOWED_CALLS:
                raise ConfigError(f"expression {text!r}: call to disallowed function")
            if n.keywords:
                raise ConfigError(f"expression {text!r}: keyword arguments not allowed")
            for a in n.args:
                check(a)
        elif isinstance(n, ast.Subscript):
            if not (isinstance(n.value, ast.Name) and n.value.id == "y"):
                raise ConfigError(f"expression {text!r}: only y[...] may be indexed")
            idx = n.slice
            if not (isinstance(idx, ast.Constant) and isinstance(idx.value, int)):
                raise ConfigError(f"expression {text!r}: y index must be an integer literal")
        elif isinstance(n, ast.Name):
            if n.id not in names:
                raise ConfigError(f"expression {text!r}: unknown name {n.id!r}")
        elif isinstance(n, ast.Constant):
            if not isinstance(n.value, (int, float)):
                raise ConfigError(f"expression {text!r}: only numeric literals allowed")
        else:
            raise ConfigError(
                f"expression {text!r}: construct {type(n).__name__} not in grammar"
            )

    check(node)
    code = compile(node, filename="<expression>", mode="eval")

    def fn(t, x, y):
        y = np.asarray(y)

        class _Y:
            def __getitem__(self, k):
                return y[..., k]

        env = {"t": t, "x": x, "y": _Y(), **_ALLOWED_CALLS}
        return np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float)

    fn.source = text
    return fn


def _expr_uses(text, name):
    try:
        node = ast.parse(text, mode="eval")
    except SyntaxError:
        return False
    return any(isinstance(n, ast.Name) and n.id == name for n in ast.walk(node))


# ---------------------------------------------------------------------------
# Loading / schema


@dataclass
class RunConfig:
    kind: str
    raw: dict
    path: str = ""

    def section(self, name, default=None):
        return self.raw.get(name, {} if default is None else default)

    @property
    def seed(self):
        return int(self.raw.get("seed", 0))

    def canonical_json(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))


def load_config(path):
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: JSON parse error: {exc}") from None
    else:
        try:
            raw = tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: TOML parse error: {exc}") from None
    kind = raw.get("kind")
    if kind not in _KINDS:
        raise ConfigError(
            f"{path}: kind must be one of {', '.join(_KINDS)}; got {kind!r}"
        )
    return RunConfig(kind=kind, raw=raw, path=str(path))


# ---------------------------------------------------------------------------
# Builders


def build_triple(cfg):
    sec = cfg.section("triple")
    domain = sec.get("domain", sec.get("domain_kind", "interval"))
    components = int(sec.get("components", 1))
    if domain == "custom":
        return SpectralTriple.custom(sec["eigenvalues"], components)
    dim = int(sec.get("dim", 16))
    return SpectralTriple(dim, components, domain)


def build_noise(cfg, seed_override=None):
    sec = cfg.section("noise")
    seed = cfg.seed if seed_override is None else seed_override
    T = float(sec.get("T", 1.0))
    dt = cfg.section("numerics").get("dt")
    if dt:
        steps = int(round(T / float(dt)))
    else:
        steps = int(sec.get("steps", sec.get("n_steps", 100)))
    return NoiseModel(int(sec.get("modes", 1)), uniform_grid(T, steps), seed)


def build_pair(cfg, triple):
    sec = cfg.section("pair")
    family = sec.get("family", "riesz")
    if family == "riesz":
        return riesz_pair(triple)
    if family == "laplacian":
        return laplacian_pair(triple)
    if family == "scalar":
        return scalar_pair(triple, float(sec.get("a", 1.0)), float(sec.get("b", 0.0)))
    if family == "diagonal":
        return diagonal_pair(
            triple,
            np.asarray(sec["values"], dtype=float),
            float(sec.get("b_scale", 0.0)),
            int(sec.get("modes", 1)),
        )
    if family == "random-symmetric":
        return random_symmetric_pair(
            triple,
            int(sec.get("seed", 0)),
            lam=float(sec.get("lam", 1.0)),
            Lam=float(sec.get("Lam", 2.0)),
            noise_frac=float(sec.get("noise_frac", 0.0)),
            modes=int(sec.get("modes", 1)),
        )
    raise ConfigError(f"unknown pair family {family!r}")


def _per_component(spec, N, what):
    """Normalize a string or list-of-strings field to one entry per component."""
    if isinstance(spec, str):
        return [spec] * N
    if isinstance(spec, list) and all(isinstance(s, str) for s in spec):
        if len(spec) != N:
            raise ConfigError(f"{what}: need {N} expressions, got {len(spec)}")
        return list(spec)
    raise ConfigError(f"{what}: expected expression string or list of strings")


def _stack_components(fns, t, x, y):
    return np.stack([fn(t, x, y) for fn in fns], axis=-1)


def build_coefficients(cfg):
    """QLCoefficients from the [coefficients] section.

    Built-in families ("constant", "cubic") take numeric parameters;
    otherwise a/b/phi/Phi/g are expression fields over (t, x, y).
    """
    sec = cfg.section("coefficients")
    N = int(sec.get("components", 1))
    K = int(sec.get("modes", 1))
    family = sec.get("family")
    if family == "constant":
        return ql.constant_coefficients(
            N=N, K=K, a=float(sec.get("a", 1.0)), b=float(sec.get("b", 0.0)),
            g=float(sec.get("g", 0.0)),
        )
    if family == "cubic":
        return ql.cubic_reaction_coefficients(
            N=N, K=K, a=float(sec.get("a", 1.0)), b=float(sec.get("b", 0.0)),
            g=float(sec.get("g", 0.0)), reaction=float(sec.get("reaction", 1.0)),
        )
    if family is not None:
        raise ConfigError(f"unknown coefficient family {family!r}")

    a_exprs = _per_component(sec.get("a", "1.0"), N, "coefficients.a")
    a_fns = [compile_expression(s) for s in a_exprs]
    a_depends_y = any(_expr_uses(s, "y") for s in a_exprs)

    def a_fn(t, x, y):
        vals = _stack_components(a_fns, t, x, np.asarray(y))
        vals = np.broadcast_to(vals, np.shape(y)[:-1] + (N,))
        return vals[..., None, None] * np.ones((1, 1))

    b_fn = None
    b_depends_y = False
    if "b" in sec:
        rows = sec["b"]
        if isinstance(rows, str):
            rows = [rows] * K
        if len(rows) != K:
            raise ConfigError(f"coefficients.b: need {K} mode entries")
        b_fns = []
        for n, row in enumerate(rows):
            comp = _per_component(row, N, f"coefficients.b[{n}]")
            for alpha, s in enumerate(comp):
                for other in range(N):
                    if other != alpha and _expr_uses(s, "y") and f"y[{other}]" in s:
                        raise ConfigError(
                            f"coefficients.b[{n}][{alpha}]: may depend on y[{alpha}] only"
                        )
            b_fns.append([compile_expression(s) for s in comp])
            b_depends_y = b_depends_y or any(_expr_uses(s, "y") for s in comp)

        def b_fn(t, x, y):
            y = np.asarray(y)
            per_mode = []
            for fns in b_fns:
                vals = _stack_components(fns, t, x, y)
                per_mode.append(np.broadcast_to(vals, y.shape[:-1] + (N,)))
            out = np.stack(per_mode, axis=-1)  # (..., N, K)
            return out[..., None]  # d = 1

    def _scalar_field(key):
        if key not in sec:
            return None
        fns = [compile_expression(s) for s in _per_component(sec[key], N, f"coefficients.{key}")]

        def fn(t, x, y):
            y = np.asarray(y)
            vals = _stack_components(fns, t, x, y)
            return np.broadcast_to(vals, y.shape[:-1] + (N,))

        return fn

    phi_fn = _scalar_field("phi")
    Phi_base = _scalar_field("Phi")
    Phi_fn = None
    if Phi_base is not None:
        Phi_fn = lambda t, x, y: Phi_base(t, x, y)[..., None]

    g_fn = None
    if "g" in sec:
        rows = sec["g"]
        if isinstance(rows, str):
            rows = [rows] * K
        if len(rows) != K:
            raise ConfigError(f"coefficients.g: need {K} mode entries")
        g_fns = [
            [compile_expression(s) for s in _per_component(row, N, f"coefficients.g[{n}]")]
            for n, row in enumerate(rows)
        ]

        def g_fn(t, x, y):
            y = np.asarray(y)
            per_mode = [
                np.broadcast_to(_stack_components(fns, t, x, y), y.shape[:-1] + (N,))
                for fns in g_fns
            ]
            return np.stack(per_mode, axis=-1)

    return ql.QLCoefficients(
        N=N,
        d=1,
        K=K,
        a=a_fn,
        b=b_fn,
        phi=phi_fn,
        Phi_hat=Phi_fn,
        g=g_fn,
        Lambda=float(sec.get("Lambda", 1.0)),
        lam=float(sec.get("lam", 0.0)),
        C=float(sec.get("C", 1.0)),
        growth_h=float(sec.get("h", 1.0)),
        a_depends_y=a_depends_y,
        b_depends_y=b_depends_y,
        name=sec.get("name", "expression"),
    )


def build_data(cfg, triple, modes):
    """(f, g, u0) for linear problems from the [data] section.

    Fields are either explicit coefficient arrays or (seed, scale) pairs
    generating a fixed random vector; u0_mode places unit mass on one
    eigenmode.
    """
    sec = cfg.section("data")
    N, dim = triple.components, triple.dim
    rng = np.random.default_rng(int(sec.get("seed", 0)))

    def vec(key, shape, scale_key):
        if key in sec:
            arr = np.asarray(sec[key], dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"data.{key}: expected shape {shape}")
            return arr
        scale = float(sec.get(scale_key, 0.0))
        if scale == 0.0:
            return None
        return scale * rng.standard_normal(shape)

    f = vec("f", (N, dim), "f_scale")
    g = vec("g", (modes, N, dim), "g_scale")
    u0 = vec("u0", (N, dim), "u0_scale")
    if u0 is None and "u0_mode" in sec:
        u0 = np.zeros((N, dim))
        u0[0, int(sec["u0_mode"])] = float(sec.get("u0_amplitude", 1.0))
    return f, g, u0


# ---------------------------------------------------------------------------
# Validation


def validate_config(cfg):
    """Full pre-flight validation; returns a list of issue strings.

    Includes coercivity pre-checks on pair/coefficient specs and the
    mollification window guard; never launches a simulation.
    """
    issues = []
    raw = cfg.raw

    num = cfg.section("numerics")
    paths = num.get("paths", 8)
    if not (isinstance(paths, int) and paths >= 1):
        issues.append("numerics.paths must be a positive integer")
    nsec = cfg.section("noise")
    T = nsec.get("T", 1.0)
    steps = nsec.get("steps", nsec.get("n_steps", 100))
    if not (isinstance(T, (int, float)) and T > 0):
        issues.append("noise.T must be positive")
    if not (isinstance(steps, int) and steps >= 1):
        issues.append("noise.steps must be a positive integer")
    if isinstance(T, (int, float)) and isinstance(steps, int) and steps >= 1 and T > 0:
        dt = T / steps
        M = num.get("M", 0.0)
        if M and dt * M >= 1.0:
            issues.append(f"dt*M = {dt * M:.3g} must be < 1 for the implicit step")
    if "dt" in num and num["dt"] <= 0:
        issues.append("numerics.dt must be positive")

    try:
        triple = build_triple(cfg)
    except Exception as exc:
        issues.append(f"triple: {exc}")
        return issues

    if cfg.kind in ("solve-linear", "check-coercivity", "stein-verify", "moments", "tightness", "analyticity"):
        try:
            pair = build_pair(cfg, triple)
        except Exception as exc:
            issues.append(f"pair: {exc}")
            return issues
        from .operators import check_coercivity

        M = float(num.get("M", 0.0))
        report = check_coercivity(pair, triple, M=M)
        require = raw.get("pair", {}).get("require_coercive", True)
        if require and report.lam <= 0:
            issues.append(
                f"coercivity violation: lambda({M:g}) = {report.lam:.4g} <= 0 "
                "for the configured pair"
            )

    if cfg.kind in ("solve-ql", "bootstrap"):
        try:
            coeffs = build_coefficients(cfg)
        except Exception as exc:
            issues.append(f"coefficients: {exc}")
            return issues
        sec = cfg.section("coefficients")
        m = sec.get("m")
        window = float(sec.get("window", 8.0))
        if m is not None:
            if m < 1:
                issues.append("coefficients.m must be >= 1")
            elif window <= 1.0 / m:
                issues.append(
                    f"mollification window {window:g} does not exceed the kernel "
                    f"support 1/m = {1.0 / m:g}"
                )
        if sec.get("R_trunc", 1.0) <= 0:
            issues.append("coefficients.R_trunc must be positive")
        rep = ql.check_ql_coercivity(coeffs, y_range=float(sec.get("y_range", 3.0)))
        if raw.get("coefficients", {}).get("require_coercive", True) and rep.margin <= 0:
            issues.append(
                f"coercivity violation: sampled quasilinear margin {rep.margin:.4g} <= 0"
            )

    if cfg.kind == "tightness":
        p = float(raw.get("tightness", {}).get("p", 2.5))
        theta = float(raw.get("tightness", {}).get("theta", 0.45))
        if not (1.0 / p < theta < 0.5):
            issues.append("tightness requires theta in (1/p, 1/2)")

    return issues
