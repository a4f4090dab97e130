"""Test functions on R^n, their normalisation against gamma_n, and the catalog.

A function is evaluated on a batch of points of shape ``(m, n)`` and returns
shape ``(m,)``.  Convexity and the semiconvexity constant ``beta`` are
certificates supplied by whoever builds the function; they are never inferred.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, ContractError, DivergenceError
from .gauss_core import (
    MonteCarlo,
    Quadrature,
    RandomStream,
    phi_cdf,
    sample_gaussian,
    tensor_rule,
)

ArrayFn = Callable[[np.ndarray], np.ndarray]

NORMALIZATION_TOL = 1e-6
DIVERGENCE_LOG_RATIO = math.log(1.5)


def as_points(x, n: int) -> np.ndarray:
    """Coerce scalars, single points and batches to a float array of shape (m, n)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if n == 1 else arr.reshape(1, -1)
    if arr.shape[1] != n:
        raise ContractError(f"expected points in R^{n}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class TestFunction:
    """A function R^n -> R with convexity metadata."""

    __test__ = False  # not a pytest class

    n: int
    evaluate: ArrayFn
    label: str
    beta: float = 0.0
    convex: bool = False
    coordinatewise_nondecreasing: bool = False
    gradient: Optional[ArrayFn] = None
    # Free-form analytic metadata: preferred tilt direction, critical points,
    # derivative callables for 1D piecewise-monotone functions.
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ContractError("dimension must be >= 1")
        if self.beta < 0:
            raise ContractError("semiconvexity certificate beta must be >= 0")

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(as_points(x, self.n))

    def grad(self, x) -> np.ndarray:
        if self.gradient is None:
            raise ContractError(f"{self.label} has no gradient")
        return self.gradient(as_points(x, self.n))

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "n": self.n,
            "beta": self.beta,
            "flags": {
                "convex": self.convex,
                "coordinatewise_nondecreasing": self.coordinatewise_nondecreasing,
            },
            "shift": 0.0,
        }


@dataclass(frozen=True)
class NormalizedFunction:
    """``base + shift`` with int exp(base + shift) d gamma_n = 1 up to ``normalization_error``."""

    base: Union[TestFunction, "NormalizedFunction"]
    shift: float
    normalization_error: float = 0.0

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def beta(self) -> float:
        return self.base.beta

    @property
    def convex(self) -> bool:
        return self.base.convex

    @property
    def coordinatewise_nondecreasing(self) -> bool:
        return self.base.coordinatewise_nondecreasing

    @property
    def label(self) -> str:
        return self.base.label

    @property
    def meta(self) -> dict:
        return self.base.meta

    @property
    def gradient(self) -> Optional[ArrayFn]:
        return self.base.gradient

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        return self.base.evaluate(pts) + self.shift

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(as_points(x, self.n))

    def grad(self, x) -> np.ndarray:
        return self.base.grad(x)

    def to_json(self) -> dict:
        out = self.base.to_json()
        out["shift"] = out["shift"] + self.shift
        out["normalization_error"] = self.normalization_error
        return out


AnyFunction = Union[TestFunction, NormalizedFunction]


def _log_integral_quadrature(f: AnyFunction, order: int) -> float:
    pts, w = tensor_rule(f.n, order)
    vals = f.evaluate(pts)
    with np.errstate(over="ignore", invalid="ignore"):
        out = float(logsumexp(vals, b=w))
    return out


def log_exp_integral(f: AnyFunction, method) -> tuple[float, float]:
    """Estimate log int e^f d gamma_n and an error bound on that log.

    Quadrature mode refines the order until two successive levels agree to
    NORMALIZATION_TOL; Monte Carlo mode reports 3 standard errors.
    """
    if isinstance(method, Quadrature):
        m = method.order
        prev = _log_integral_quadrature(f, m)
        while True:
            m2 = min(2 * m, 256)
            cur = _log_integral_quadrature(f, m2)
            if not (math.isfinite(prev) and math.isfinite(cur)):
                raise DivergenceError(f"int e^f d gamma is not finite for {f.label}")
            if cur - prev > DIVERGENCE_LOG_RATIO:
                raise DivergenceError(
                    f"int e^f d gamma grows under refinement for {f.label} "
                    f"(log-integral {prev:.6g} at order {m}, {cur:.6g} at order {m2})"
                )
            err = abs(cur - prev)
            if err <= NORMALIZATION_TOL:
                return cur, err
            if m2 == 256:
                raise DivergenceError(
                    f"quadrature for int e^f d gamma did not stabilise for {f.label} "
                    f"(last change {err:.3g}); use Monte Carlo"
                )
            m, prev = m2, cur
    if isinstance(method, MonteCarlo):
        if method.count < 16:
            raise ConfigurationError("Monte Carlo normalisation needs at least 16 samples")
        pts = sample_gaussian(method.stream, f.n, method.count)
        with np.errstate(over="ignore"):
            vals = np.exp(f.evaluate(pts))
        if not np.all(np.isfinite(vals)):
            raise DivergenceError(f"e^f overflowed while normalising {f.label}")
        quarter = vals[: method.count // 4]
        mean = vals.mean()
        if mean / quarter.mean() > 1.5:
            raise DivergenceError(f"Monte Carlo estimate of int e^f grows with N for {f.label}")
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        return math.log(mean), 3.0 * se / mean
    raise ConfigurationError(f"unknown integration method {method!r}")


def normalize(f: AnyFunction, method=None) -> NormalizedFunction:
    """Shift ``f`` so that int e^f d gamma_n = 1."""
    if method is None:
        method = Quadrature(64) if f.n <= 3 else MonteCarlo(10**6, RandomStream(0))
    log_i, err = log_exp_integral(f, method)
    return NormalizedFunction(f, -log_i, err)


# ---------------------------------------------------------------------------
# Builders


def affine(coef: Sequence[float], const: float = 0.0, label: str | None = None) -> TestFunction:
    a = np.asarray(coef, dtype=float)
    nondecr = bool(np.all(a >= 0))
    return TestFunction(
        n=len(a),
        evaluate=lambda x: x @ a + const,
        gradient=lambda x: np.broadcast_to(a, x.shape).copy(),
        label=label or f"affine({list(a)},{const})",
        beta=0.0,
        convex=True,
        coordinatewise_nondecreasing=nondecr,
        meta={"direction": a / np.linalg.norm(a) if np.any(a) else None},
    )


def quadratic(a: float, n: int = 1, const: float = 0.0, label: str | None = None) -> TestFunction:
    """x -> a |x|^2 + const; convex iff a >= 0, otherwise (-2a)-semiconvex."""
    return TestFunction(
        n=n,
        evaluate=lambda x: a * np.einsum("ij,ij->i", x, x) + const,
        gradient=lambda x: 2.0 * a * x,
        label=label or f"quadratic(a={a},n={n})",
        beta=max(0.0, -2.0 * a),
        convex=a >= 0,
    )


def sharpness_function(t: float, n: int = 1) -> NormalizedFunction:
    """The extremal f_t(x) = sqrt(2t) x_1 - t, normalised exactly."""
    if t < 0:
        raise ContractError("sharpness level t must be >= 0")
    coef = np.zeros(n)
    coef[0] = math.sqrt(2.0 * t)
    base = affine(coef, 0.0, label=f"sharp_t{_fmt(t)}" + (f"_n{n}" if n > 1 else ""))
    base.meta["direction"] = np.eye(n)[0]
    return NormalizedFunction(base, -float(t), 0.0)


def compose_pushforward(f: TestFunction, gs: Sequence[TestFunction], label: str | None = None) -> TestFunction:
    """x -> f(g_1(x), ..., g_n(x)) for nondecreasing convex f and convex g_i."""
    if not (f.convex and f.coordinatewise_nondecreasing):
        raise ContractError("outer function must be convex and coordinate-wise non-decreasing")
    if len(gs) != f.n:
        raise ContractError(f"need {f.n} inner functions, got {len(gs)}")
    dims = {g.n for g in gs}
    if len(dims) != 1:
        raise ContractError("inner functions must share a dimension")
    if not all(g.convex for g in gs):
        raise ContractError("inner functions must be convex")
    big_n = dims.pop()

    def evaluate(x):
        u = np.stack([g.evaluate(x) for g in gs], axis=-1)
        return f.evaluate(u)

    gradient = None
    if f.gradient is not None and all(g.gradient is not None for g in gs):

        def gradient(x):
            u = np.stack([g.evaluate(x) for g in gs], axis=-1)
            df = f.gradient(u)
            return sum(df[:, [i]] * g.gradient(x) for i, g in enumerate(gs))

    return TestFunction(
        n=big_n,
        evaluate=evaluate,
        gradient=gradient,
        label=label or f"{f.label}∘({', '.join(g.label for g in gs)})",
        beta=0.0,
        convex=True,
    )


# ---------------------------------------------------------------------------
# Pointwise comparison with |x|^2 / 2


@dataclass(frozen=True)
class PointwiseBoundReport:
    label: str
    max_violation: float
    argmax: list
    offset: float
    tolerance: float
    verdict: str


def axis_grid(n: int, points: int = 2001, half_width: float = 6.0) -> np.ndarray:
    """Points along every coordinate axis and the main diagonal of [-w, w]^n."""
    s = np.linspace(-half_width, half_width, points)
    rows = []
    for i in range(n):
        p = np.zeros((points, n))
        p[:, i] = s
        rows.append(p)
    if n > 1:
        rows.append(np.repeat(s[:, None], n, axis=1))
        rows.append(np.repeat(s[:, None], n, axis=1) * np.where(np.arange(n) % 2, -1.0, 1.0))
    return np.concatenate(rows, axis=0)


def pointwise_bound_check(f: NormalizedFunction, grid=None) -> PointwiseBoundReport:
    """max over the grid of f(x) - (n/2) ln(1+beta) - |x|^2/2."""
    pts = axis_grid(f.n) if grid is None else as_points(grid, f.n)
    offset = 0.5 * f.n * math.log1p(f.beta)
    gap = f.evaluate(pts) - offset - 0.5 * np.einsum("ij,ij->i", pts, pts)
    i = int(np.argmax(gap))
    tol = 1e-7 + 2.0 * getattr(f, "normalization_error", 0.0)
    worst = float(gap[i])
    return PointwiseBoundReport(
        label=f.label,
        max_violation=worst,
        argmax=pts[i].tolist(),
        offset=offset,
        tolerance=tol,
        verdict="PASS" if worst <= tol else "FAIL",
    )


# ---------------------------------------------------------------------------
# Randomised certificate checks


def _triples(stream: RandomStream, n: int, count: int):
    g = stream.generator()
    x = 2.0 * g.standard_normal((count, n))
    y = 2.0 * g.standard_normal((count, n))
    lam = g.uniform(0.0, 1.0, size=count)
    return x, y, lam


def semiconvexity_violation(f: AnyFunction, beta: float | None = None, count: int = 1000,
                            stream: RandomStream = RandomStream(11)) -> float:
    """Largest excess of f(mid) over the beta-semiconvex chord bound on random triples."""
    beta = f.beta if beta is None else beta
    x, y, lam = _triples(stream, f.n, count)
    mid = lam[:, None] * x + (1 - lam[:, None]) * y
    d2 = np.einsum("ij,ij->i", x - y, x - y)
    excess = f.evaluate(mid) - lam * f.evaluate(x) - (1 - lam) * f.evaluate(y)
    excess -= 0.5 * beta * lam * (1 - lam) * d2
    return float(np.max(excess))


def gradient_mismatch(f: AnyFunction, count: int = 100, step: float = 1e-5,
                      stream: RandomStream = RandomStream(12)) -> float:
    """Max relative gap between the analytic gradient and central differences."""
    pts = sample_gaussian(stream, f.n, count)
    g = f.grad(pts)
    fd = np.empty_like(g)
    for i in range(f.n):
        e = np.zeros(f.n)
        e[i] = step
        fd[:, i] = (f.evaluate(pts + e) - f.evaluate(pts - e)) / (2 * step)
    scale = np.maximum(1.0, np.abs(g))
    return float(np.max(np.abs(g - fd) / scale))


# ---------------------------------------------------------------------------
# Catalog


def _fmt(x: float) -> str:
    return f"{x:g}"


def _log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2 * ax)) - math.log(2.0)


def _zero(n: int) -> NormalizedFunction:
    base = TestFunction(
        n=n,
        evaluate=lambda x: np.zeros(len(x)),
        gradient=lambda x: np.zeros_like(x),
        label="zero" + (f"_n{n}" if n > 1 else ""),
        convex=True,
        coordinatewise_nondecreasing=True,
    )
    return NormalizedFunction(base, 0.0, 0.0)


def _quad(a: float, n: int) -> NormalizedFunction:
    if not a < 0.5:
        raise DivergenceError(f"e^(a|x|^2) is not gamma-integrable for a={a} >= 1/2")
    label = f"quad_a{_fmt(a)}" + (f"_n{n}" if n > 1 else "")
    base = quadratic(a, n, label=label)
    # int e^{a|x|^2} d gamma_n = (1 - 2a)^{-n/2}
    return NormalizedFunction(base, 0.5 * n * math.log1p(-2 * a), 0.0)


def _neg_quad(beta: float, tilt: float = 0.0) -> NormalizedFunction:
    label = f"neg_quad_b{_fmt(beta)}" + (f"_tilt{_fmt(tilt)}" if tilt else "")
    base = TestFunction(
        n=1,
        evaluate=lambda x: -0.5 * beta * x[:, 0] ** 2 + tilt * x[:, 0],
        gradient=lambda x: -beta * x + tilt,
        label=label,
        beta=beta,
        convex=beta == 0,
        meta={"direction": np.array([1.0 if tilt >= 0 else -1.0])},
    )
    # int e^{tilt x - beta x^2/2} d gamma_1 = (1+beta)^{-1/2} exp(tilt^2 / (2(1+beta)))
    shift = 0.5 * math.log1p(beta) - tilt * tilt / (2 * (1 + beta))
    return NormalizedFunction(base, shift, 0.0)


def _abs_l1(lam: float, n: int) -> NormalizedFunction:
    base = TestFunction(
        n=n,
        evaluate=lambda x: lam * np.abs(x).sum(axis=1),
        gradient=lambda x: lam * np.sign(x),
        label=f"abs_l{_fmt(lam)}" + (f"_n{n}" if n > 1 else ""),
        convex=True,
    )
    # int e^{lam|x|} d gamma_1 = 2 e^{lam^2/2} Phi(lam)
    per_axis = 0.5 * lam * lam + math.log(2.0 * phi_cdf(lam))
    return NormalizedFunction(base, -n * per_axis, 0.0)


def _logcosh(n: int) -> NormalizedFunction:
    base = TestFunction(
        n=n,
        evaluate=lambda x: _log_cosh(x).sum(axis=1),
        gradient=lambda x: np.tanh(x),
        label="logcosh" + (f"_n{n}" if n > 1 else ""),
        convex=True,
    )
    # int cosh d gamma_1 = e^{1/2}
    return NormalizedFunction(base, -0.5 * n, 0.0)


def _exp_pushforward(a: float) -> NormalizedFunction:
    outer = affine([a], label=f"{_fmt(a)}u")
    g = quadratic(0.5, 2, label="(x1²+x2²)/2")
    base = compose_pushforward(outer, [g], label=f"exp_pushforward_a{_fmt(a)}")
    # (x1^2+x2^2)/2 is Exp(1): int e^{a E} = 1/(1-a)
    return NormalizedFunction(base, math.log1p(-a), 0.0)


def _corr_pushforward(a: float) -> NormalizedFunction:
    outer = affine([a / 2, a / 2], label=f"{_fmt(a)}(u+v)/2")
    g1 = TestFunction(3, lambda x: 0.5 * (x[:, 0] ** 2 + x[:, 1] ** 2), "(x1²+x2²)/2",
                      convex=True, gradient=lambda x: x * np.array([1.0, 1.0, 0.0]))
    g2 = TestFunction(3, lambda x: 0.5 * (x[:, 1] ** 2 + x[:, 2] ** 2), "(x2²+x3²)/2",
                      convex=True, gradient=lambda x: x * np.array([0.0, 1.0, 1.0]))
    base = compose_pushforward(outer, [g1, g2], label=f"corr_pushforward_a{_fmt(a)}")
    # a(u+v)/2 = (a/4)(x1^2 + 2 x2^2 + x3^2); each term is a Gaussian quadratic form
    shift = 0.5 * (2 * math.log1p(-a / 2) + math.log1p(-a))
    return NormalizedFunction(base, shift, 0.0)


def _mono_sin(eps: float) -> NormalizedFunction:
    base = TestFunction(
        n=1,
        evaluate=lambda x: x[:, 0] + eps * np.sin(x[:, 0]),
        gradient=lambda x: 1.0 + eps * np.cos(x),
        label=f"mono_sin_e{_fmt(eps)}",
        beta=abs(eps),
        meta={"direction": np.array([1.0]), "monotone": True},
    )
    return normalize(base, Quadrature(64))


def quartic_counterexample() -> TestFunction:
    """x^4 - 2x^2 + x/2: semiconvex (beta = 4) with a strict non-global local minimum."""
    coeffs = np.array([1.0, 0.0, -2.0, 0.5, 0.0])
    d1 = np.polyder(coeffs)
    d2 = np.polyder(d1)
    crit = np.sort(np.real(np.roots(d1)))
    return TestFunction(
        n=1,
        evaluate=lambda x: np.polyval(coeffs, x[:, 0]),
        gradient=lambda x: np.polyval(d1, x),
        label="quartic",
        beta=4.0,
        convex=False,
        meta={
            "poly": coeffs,
            "critical_points": crit,
            "d1": lambda x: np.polyval(d1, x),
            "d2": lambda x: np.polyval(d2, x),
        },
    )


_FAMILIES: list[tuple[re.Pattern, Callable]] = [
    (re.compile(r"zero(?:_n(\d+))?$"), lambda m: _zero(int(m[1] or 1))),
    (re.compile(r"sharp_t([0-9.]+)(?:_n(\d+))?$"),
     lambda m: sharpness_function(float(m[1]), int(m[2] or 1))),
    (re.compile(r"quad_a([-0-9.]+)(?:_n(\d+))?$"), lambda m: _quad(float(m[1]), int(m[2] or 1))),
    (re.compile(r"neg_quad_b([0-9.]+)(?:_tilt([-0-9.]+))?$"),
     lambda m: _neg_quad(float(m[1]), float(m[2] or 0.0))),
    (re.compile(r"abs_l([0-9.]+)(?:_n(\d+))?$"), lambda m: _abs_l1(float(m[1]), int(m[2] or 1))),
    (re.compile(r"logcosh(?:_n(\d+))?$"), lambda m: _logcosh(int(m[1] or 1))),
    (re.compile(r"exp_pushforward_a([0-9.]+)$"), lambda m: _exp_pushforward(float(m[1]))),
    (re.compile(r"corr_pushforward_a([0-9.]+)$"), lambda m: _corr_pushforward(float(m[1]))),
    (re.compile(r"mono_sin_e([0-9.]+)$"), lambda m: _mono_sin(float(m[1]))),
    (re.compile(r"quartic$"), lambda m: quartic_counterexample()),
]

# Default instances used by the verification suites.
CONVEX_LABELS = [
    "sharp_t1",
    "sharp_t2_n3",
    "quad_a0.25",
    "quad_a0.1_n3",
    "abs_l1_n2",
    "logcosh",
    "logcosh_n2",
    "exp_pushforward_a0.5",
    "corr_pushforward_a0.5",
]
SEMICONVEX_1D_LABELS = ["neg_quad_b0.5", "neg_quad_b1_tilt0.5", "mono_sin_e0.1"]
CATALOG_LABELS = ["zero", "zero_n3"] + CONVEX_LABELS + SEMICONVEX_1D_LABELS + ["quartic"]


def catalog_function(label: str) -> AnyFunction:
    """Look up a catalog entry by label (parametrised families are parsed)."""
    for pattern, build in _FAMILIES:
        m = pattern.match(label)
        if m:
            return build(m)
    raise ConfigurationError(f"unknown function label {label!r}; known: {', '.join(CATALOG_LABELS)}")
