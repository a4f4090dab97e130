"""Ornstein-Uhlenbeck semigroup on Gaussian space.

P_t g(x) = E g(e^{-t} x + sqrt(1 - e^{-2t}) Y), Y ~ gamma_n.

Positive functions of the form g = e^f are handled in log space throughout,
so P_t e^f is accurate even where e^f itself would overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, DivergenceError, NumericError, PositivityError
from .functions import AnyFunction, TestFunction, as_points
from .gauss_core import MonteCarlo, Quadrature, RandomStream, sample_gaussian, tensor_rule

MAX_ORDER = 128
MIN_MC_COUNT = 1000
_BATCH = 1 << 21  # function evaluations per vectorised call


@dataclass(frozen=True)
class ExpOf:
    """The positive function g = e^f, carried by its logarithm f."""

    f: AnyFunction

    @property
    def n(self) -> int:
        return self.f.n

    @property
    def label(self) -> str:
        return f"exp({self.f.label})"

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.f.evaluate(pts))

    def log_evaluate(self, pts: np.ndarray) -> np.ndarray:
        return self.f.evaluate(pts)

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(as_points(x, self.n))


Semigroupable = Union[AnyFunction, ExpOf]


@dataclass(frozen=True)
class SemigroupConfig:
    time: float
    method: Union[Quadrature, MonteCarlo] = field(default_factory=lambda: Quadrature(48))
    fd_step: float = 1e-3
    rtol: float = 1e-6  # quadrature: agreement required with the doubled-order rule

    def __post_init__(self):
        if not (self.time > 0 and math.isfinite(self.time)):
            raise ConfigurationError(f"semigroup time must be positive, got {self.time}")
        if isinstance(self.method, Quadrature) and self.method.order > MAX_ORDER:
            raise ConfigurationError(f"quadrature order must be <= {MAX_ORDER}")
        if isinstance(self.method, MonteCarlo) and self.method.count < MIN_MC_COUNT:
            raise ConfigurationError(f"Monte Carlo count must be >= {MIN_MC_COUNT}")
        if not self.fd_step > 0:
            raise ConfigurationError("fd_step must be positive")

    def at(self, time: float) -> "SemigroupConfig":
        return SemigroupConfig(time, self.method, self.fd_step, self.rtol)


@dataclass(frozen=True)
class OUValues:
    """P_t g at a batch of points with an error estimate per point.

    ``error`` is the refinement difference (quadrature) or the standard error
    (Monte Carlo); ``log`` marks values stored as log P_t g.
    """

    values: np.ndarray
    error: np.ndarray
    method: str
    log: bool = False


def _kernel(cfg: SemigroupConfig) -> tuple[float, float]:
    return math.exp(-cfg.time), math.sqrt(-math.expm1(-2.0 * cfg.time))


def _reduce(g: Semigroupable, X: np.ndarray, a: float, b: float, Y: np.ndarray,
            w: np.ndarray, log: bool) -> np.ndarray:
    """sum_k w_k g(a X + b Y_k), or its logarithm, for every row of X."""
    K, n = Y.shape
    rows = max(1, _BATCH // K)
    out = np.empty(len(X))
    with np.errstate(divide="ignore"):  # underflowed tensor weights contribute nothing
        logw = np.log(w) if log else None
    for s in range(0, len(X), rows):
        Xc = X[s:s + rows]
        Z = (a * Xc[:, None, :] + b * Y[None, :, :]).reshape(-1, n)
        if log:
            lv = g.log_evaluate(Z).reshape(len(Xc), K)
            out[s:s + rows] = logsumexp(lv + logw[None, :], axis=1)
        else:
            out[s:s + rows] = g.evaluate(Z).reshape(len(Xc), K) @ w
    return out


def _ou_values(g: Semigroupable, X: np.ndarray, cfg: SemigroupConfig, log: bool) -> OUValues:
    a, b = _kernel(cfg)
    if isinstance(cfg.method, MonteCarlo):
        Y = sample_gaussian(cfg.method.stream, g.n, cfg.method.count)
        m = len(Y)
        if log:
            vals = _reduce(g, X, a, b, Y, np.full(m, 1.0 / m), True)
            # SE of the mean of e^{f - log mean}, mapped to log scale by the delta method
            rel = np.array([_relative_se(g, x, a, b, Y, v) for x, v in zip(X, vals)])
            return OUValues(vals, rel, "monte_carlo", True)
        gv = np.empty((len(X),))
        se = np.empty((len(X),))
        for i, x in enumerate(X):
            y = g.evaluate(a * x[None, :] + b * Y)
            gv[i] = np.mean(y)
            se[i] = np.std(y, ddof=1) / math.sqrt(m)
        return OUValues(gv, se, "monte_carlo", False)

    order = cfg.method.order
    Y, w = tensor_rule(g.n, order)
    prev = _reduce(g, X, a, b, Y, w, log)
    while True:
        order2 = min(2 * order, 256)
        Y, w = tensor_rule(g.n, order2)
        cur = _reduce(g, X, a, b, Y, w, log)
        if not np.all(np.isfinite(cur)):
            raise DivergenceError(f"P_t g is not finite for {g.label} at t={cfg.time}")
        if log:
            err = np.abs(cur - prev)  # absolute on log scale = relative on g
            scale = np.ones_like(cur)
            grow = cur - prev
        else:
            err = np.abs(cur - prev)
            scale = np.maximum(np.abs(cur), np.max(np.abs(cur)) * 1e-12 + 1e-300)
            with np.errstate(divide="ignore", invalid="ignore"):
                grow = np.log(np.abs(cur) / np.abs(prev))
        if np.any(grow > math.log(1.5)):
            raise DivergenceError(
                f"quadrature for P_t {g.label} grew by more than 1.5x from order {order} to {order2}; "
                "g is likely not integrable against the kernel"
            )
        rel = err / scale
        if np.all(rel <= cfg.rtol):
            return OUValues(cur, err, "quadrature", log)
        if order2 == 256:
            raise NumericError(
                f"quadrature for P_t {g.label} did not reach rtol {cfg.rtol:g} by order 256 "
                f"(worst relative change {np.max(rel):.3g})"
            )
        order, prev = order2, cur


def _relative_se(g, x, a, b, Y, logmean):
    lv = g.log_evaluate(a * x[None, :] + b * Y)
    r = np.exp(lv - logmean)
    return float(np.std(r, ddof=1) / math.sqrt(len(Y)))


def _points(g: Semigroupable, x) -> tuple[np.ndarray, bool]:
    """Rows of x as points, and whether x was a single point."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and g.n > 1)
    return as_points(arr, g.n), single


def ou_values(g: Semigroupable, x, cfg: SemigroupConfig) -> OUValues:
    """P_t g at the rows of x, with error estimates."""
    X, _ = _points(g, x)
    if isinstance(cfg.method, Quadrature) and g.n > 3:
        raise ConfigurationError("quadrature evaluation needs n <= 3; use MonteCarlo")
    return _ou_values(g, X, cfg, log=False) if not hasattr(g, "log_evaluate") else _exp_values(g, X, cfg)


def _exp_values(g: ExpOf, X, cfg) -> OUValues:
    lv = _ou_values(g, X, cfg, log=True)
    vals = np.exp(lv.values)
    return OUValues(vals, vals * lv.error, lv.method, False)


def ou_apply(g: Semigroupable, x, cfg: SemigroupConfig):
    """P_t g(x); a float for a single point, an array for a batch of points."""
    X, single = _points(g, x)
    vals = ou_values(g, X, cfg).values
    return float(vals[0]) if single else vals


def ou_log_values(g: Semigroupable, x, cfg: SemigroupConfig) -> OUValues:
    """log P_t g at the rows of x; computed in log space for ExpOf inputs."""
    X, _ = _points(g, x)
    if isinstance(cfg.method, Quadrature) and g.n > 3:
        raise ConfigurationError("quadrature evaluation needs n <= 3; use MonteCarlo")
    if hasattr(g, "log_evaluate"):
        return _ou_values(g, X, cfg, log=True)
    lin = _ou_values(g, X, cfg, log=False)
    if np.any(lin.values <= 0):
        i = int(np.argmin(lin.values))
        raise PositivityError(f"P_t {g.label} = {lin.values[i]:.3g} <= 0 at x = {X[i].tolist()}")
    return OUValues(np.log(lin.values), lin.error / lin.values, lin.method, True)


def ou_log_apply(g: Semigroupable, x, cfg: SemigroupConfig):
    X, single = _points(g, x)
    vals = ou_log_values(g, X, cfg).values
    return float(vals[0]) if single else vals


def semigroup_function(g: Semigroupable, cfg: SemigroupConfig) -> TestFunction:
    """x -> P_t g(x) as a TestFunction, e.g. for composing semigroup steps."""
    return TestFunction(g.n, lambda X: ou_values(g, X, cfg).values, f"P_{cfg.time:g} {g.label}")


# ---------------------------------------------------------------------------
# Checks


@dataclass(frozen=True)
class HessianReport:
    label: str
    time: float
    min_eigenvalue: float
    argmin: list
    threshold: float
    tolerance: float
    probes: int
    verdict: str

    def to_json(self) -> dict:
        return {
            "name": "log_hessian_lower_bound",
            "function": self.label,
            "inputs": {"s": self.time, "probes": self.probes},
            "estimate": self.min_eigenvalue,
            "argmin": self.argmin,
            "bound": self.threshold,
            "tolerance": self.tolerance,
            "margin": self.min_eigenvalue - (self.threshold - self.tolerance),
            "verdict": self.verdict,
        }


def default_probes(n: int, stream: RandomStream = RandomStream(5), count: int = 50,
                   axis_points: int = 17) -> np.ndarray:
    """50 Gaussian samples plus a grid on each axis of [-4, 4]^n."""
    pts = [sample_gaussian(stream, n, count)]
    line = np.linspace(-4.0, 4.0, axis_points)
    for i in range(n):
        p = np.zeros((axis_points, n))
        p[:, i] = line
        pts.append(p)
    return np.concatenate(pts)


def fd_hessians(L, X: np.ndarray, h: float) -> np.ndarray:
    """Hessians of a batched scalar function L by the 3x3 stencil in each coordinate plane."""
    m, n = X.shape
    offs = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)]
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    pts = []
    for i, j in pairs:
        for di, dj in offs:
            d = np.zeros(n)
            d[i] += di * h
            d[j] += dj * h
            pts.append(X + d)
    vals = L(np.concatenate(pts)).reshape(len(pairs), 9, m)
    H = np.empty((m, n, n))
    for k, (i, j) in enumerate(pairs):
        v = vals[k]
        if i == j:
            H[:, i, i] = (v[1] - 2 * v[4] + v[7]) / (h * h)
        else:
            H[:, i, j] = H[:, j, i] = (v[8] - v[6] - v[2] + v[0]) / (4 * h * h)
    return H


def log_hessian_lower_bound_check(g: Semigroupable, s: float, points=None,
                                  cfg: Optional[SemigroupConfig] = None) -> HessianReport:
    """Falsification probe of Hess log P_s g >= -1/(2s) Id."""
    cfg = SemigroupConfig(s) if cfg is None else cfg.at(s)
    X = default_probes(g.n) if points is None else as_points(points, g.n)
    h = cfg.fd_step
    H = fd_hessians(lambda P: ou_log_values(g, P, cfg).values, X, h)
    eig = np.linalg.eigvalsh(H)[:, 0]
    k = int(np.argmin(eig))
    thr = -1.0 / (2.0 * s)
    tol = max(1e-3, 10 * h)
    lam = float(eig[k])
    return HessianReport(g.label, s, lam, X[k].tolist(), thr, tol, len(X),
                         "PASS" if lam >= thr - tol else "FAIL")


def _outer_log_norm(logvals_fn, n: int, p: float, order: int) -> float:
    """log ||h||_p under gamma_n from log|h| on a quadrature grid."""
    X, w = tensor_rule(n, order)
    return float(logsumexp(p * logvals_fn(X) + np.log(w))) / p


def log_lp_norm(g: Semigroupable, p: float, order: int = 64) -> float:
    """log ||g||_{L^p(gamma_n)}, checked against the doubled-order rule."""
    fn = _log_abs_fn(g)
    a = _outer_log_norm(fn, g.n, p, order)
    b = _outer_log_norm(fn, g.n, p, min(2 * order, 256))
    if not math.isfinite(b) or b - a > math.log(1.5) / p:
        raise DivergenceError(f"||{g.label}||_{p:g} does not stabilise under refinement")
    return b


def _log_abs_fn(g: Semigroupable):
    if hasattr(g, "log_evaluate"):
        return g.log_evaluate
    return lambda X: np.log(np.abs(g.evaluate(X)))


@dataclass(frozen=True)
class HypercontractivityReport:
    label: str
    p: float
    q: float
    time: float
    lhs: float  # ||P_t g||_q
    rhs: float  # ||g||_p
    verdict: str

    def to_json(self) -> dict:
        return {
            "name": "hypercontractivity",
            "function": self.label,
            "inputs": {"p": self.p, "q": self.q, "t": self.time},
            "estimate": self.lhs,
            "bound": self.rhs,
            "margin": self.rhs * (1 + 1e-4) - self.lhs,
            "verdict": self.verdict,
        }


def hypercontractivity_check(g: Semigroupable, p: float, t: float,
                             cfg: Optional[SemigroupConfig] = None, order: int = 64) -> HypercontractivityReport:
    """||P_t g||_q <= ||g||_p with q = 1 + (p - 1) e^{2t}."""
    if not p > 1:
        raise ConfigurationError("hypercontractivity needs p > 1")
    cfg = SemigroupConfig(t) if cfg is None else cfg.at(t)
    q = 1.0 + (p - 1.0) * math.exp(2.0 * t)
    rhs = log_lp_norm(g, p, order)
    inner = ExpOf(TestFunction(g.n, lambda X: _log_abs_ou(g, X, cfg), f"log|P_t {g.label}|"))
    lhs = log_lp_norm(inner, q, order)
    L, R = math.exp(lhs), math.exp(rhs)
    return HypercontractivityReport(g.label, p, q, t, L, R, "PASS" if L <= R * (1 + 1e-4) else "FAIL")


def _log_abs_ou(g, X, cfg):
    if hasattr(g, "log_evaluate"):
        return ou_log_values(g, X, cfg).values
    return np.log(np.abs(ou_values(g, X, cfg).values))


@dataclass(frozen=True)
class ConvexityReport:
    label: str
    time: float
    worst_gap: float  # max of lhs - rhs over triples
    tolerance: float
    triples: int
    verdict: str


def log_convexity_preservation_check(g: Semigroupable, t: float, count: int = 200,
                                     stream: RandomStream = RandomStream(13),
                                     cfg: Optional[SemigroupConfig] = None,
                                     half_width: float = 3.0) -> ConvexityReport:
    """log P_t g is convex along random chords when log g is."""
    cfg = SemigroupConfig(t) if cfg is None else cfg.at(t)
    rng = stream.generator()
    x = rng.uniform(-half_width, half_width, (count, g.n))
    y = rng.uniform(-half_width, half_width, (count, g.n))
    lam = rng.uniform(0.0, 1.0, (count, 1))
    res = ou_log_values(g, np.concatenate([x, y, lam * x + (1 - lam) * y]), cfg)
    lx, ly, lz = np.split(res.values, 3)
    ex, ey, ez = np.split(res.error, 3)
    lam = lam[:, 0]
    gap = lz - (lam * lx + (1 - lam) * ly)
    tol = 1e-5 + float(np.max(ex + ey + ez))
    worst = float(np.max(gap))
    return ConvexityReport(g.label, t, worst, tol, count, "PASS" if worst <= tol else "FAIL")


def gaussian_mean(g: Semigroupable, order: int = 64) -> float:
    """E g(Y) under gamma_n by tensor quadrature."""
    X, w = tensor_rule(g.n, order)
    return float(g.evaluate(X) @ w)
