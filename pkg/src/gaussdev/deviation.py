"""Gaussian deviation probabilities of test functions and the bounds they obey.

Tail probabilities gamma_n(f >= t) are estimated by plain Monte Carlo or by
importance sampling under a mean-shifted Gaussian.  The level-set curve
phi(s) = Phi^{-1}(gamma_n(f <= s)) is estimated from one shared sample batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaincc, log_ndtr

from .convex_analysis import GridFunction1D, legendre_transform
from .errors import ConfigurationError, ContractError, DomainError, NumericError, RangeError
from .functions import AnyFunction
from .gauss_core import (
    RandomStream,
    map_chunks,
    phi_bar,
    phi_density,
    phi_inv,
    sample_gaussian,
)

MIN_COUNT = 1000
SE_BAND = 3.0
FLOAT_SLACK = 1e-12  # equality cases must not fail on rounding


@dataclass(frozen=True)
class TailEstimate:
    level: float
    p_hat: float
    se: float
    count: int
    method: str = "plain"
    drift: Optional[list] = None

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "p_hat": self.p_hat,
            "se": self.se,
            "count": self.count,
            "method": self.method,
            "drift": self.drift,
        }


@dataclass(frozen=True)
class BoundCheckReport:
    level: float
    estimate: TailEstimate
    bound_name: str
    bound_value: float
    margin: float
    verdict: str
    label: str = ""

    @classmethod
    def build(cls, est: TailEstimate, name: str, bound: float, label: str = "") -> "BoundCheckReport":
        margin = bound - (est.p_hat - SE_BAND * est.se)
        return cls(est.level, est, name, bound, margin, "PASS" if margin >= 0 else "FAIL", label)

    def to_json(self) -> dict:
        return {
            "name": self.bound_name,
            "function": self.label,
            "inputs": {"level": self.level, "count": self.estimate.count,
                       "method": self.estimate.method, "drift": self.estimate.drift},
            "estimate": self.estimate.p_hat,
            "se": self.estimate.se,
            "bound": self.bound_value,
            "margin": self.margin,
            "verdict": self.verdict,
        }


# ---------------------------------------------------------------------------
# Tail estimation


def tail_estimate(f: AnyFunction, t: float, count: int, stream: RandomStream,
                  drift=None, workers: int = 1) -> TailEstimate:
    """Unbiased estimate of gamma_n(f >= t).

    With ``drift`` theta, points are drawn from N(theta, Id) and each hit is
    reweighted by exp(-theta.x + |theta|^2 / 2).
    """
    if count < MIN_COUNT:
        raise ConfigurationError(f"tail_estimate needs count >= {MIN_COUNT}")
    if drift is None:
        hits = map_chunks(stream, f.n, count, lambda z: int(np.count_nonzero(f.evaluate(z) >= t)), workers)
        p = sum(hits) / count
        return TailEstimate(float(t), p, math.sqrt(p * (1 - p) / count), count, "plain")

    theta = np.asarray(drift, dtype=float).reshape(f.n)
    half_sq = 0.5 * float(theta @ theta)

    def partial(z):
        x = z + theta
        with np.errstate(over="ignore"):
            w = np.exp(-(x @ theta) + half_sq)
        if not np.all(np.isfinite(w)):
            raise NumericError(
                f"importance weight overflow (|theta| = {math.sqrt(2 * half_sq):.3g}, "
                f"max |theta.x| = {np.max(np.abs(x @ theta)):.3g})"
            )
        v = np.where(f.evaluate(x) >= t, w, 0.0)
        return math.fsum(v), math.fsum(v * v)

    parts = map_chunks(stream, f.n, count, partial, workers)
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / count
    var = max(0.0, s2 / count - mean * mean) * count / (count - 1)
    return TailEstimate(float(t), min(1.0, mean), math.sqrt(var / count), count,
                        "importance", theta.tolist())


def _boundary_radius(f: AnyFunction, direction: np.ndarray, t: float, r_max: float = 40.0) -> Optional[float]:
    """Smallest r on a coarse-then-bisected ray with f(r * direction) >= t."""
    rs = np.linspace(0.0, r_max, 401)
    vals = f.evaluate(rs[:, None] * direction[None, :])
    above = np.nonzero(vals >= t)[0]
    if len(above) == 0:
        return None
    k = int(above[0])
    if k == 0:
        return 0.0
    lo, hi = rs[k - 1], rs[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f.evaluate((mid * direction)[None, :])[0] >= t:
            hi = mid
        else:
            lo = mid
    return hi


def select_drift(f: AnyFunction, t: float, stream: RandomStream = RandomStream(0, 99),
                 pilot: int = 200_000) -> np.ndarray:
    """Tilt mean for estimating gamma_n(f >= t).

    The direction is the function's declared deviation direction when it has
    one, otherwise the best of 64 random directions at radius sqrt(2t); the
    mean is then placed on the boundary of {f >= t} along it.  When a plain
    pilot batch already sees >= 100 hits, the tilt is shrunk towards 0 to
    minimise the pilot estimate of the weighted second moment; this keeps
    the weights tame for sets that surround the origin.
    """
    direction = f.meta.get("direction") if f.meta else None
    if direction is None:
        u = stream.generator().standard_normal((64, f.n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r0 = math.sqrt(2 * max(t, 0.0))
        direction = u[int(np.argmax(f.evaluate(r0 * u)))]
    direction = np.asarray(direction, dtype=float)
    r = _boundary_radius(f, direction, t)
    if r is None:
        r = math.sqrt(2 * max(t, 0.0))
    theta = r * direction
    z = stream.child(0).generator().standard_normal((pilot, f.n))
    hit = z[f.evaluate(z) >= t]
    if len(hit) < 100:
        return theta
    scales = np.linspace(0.0, 1.0, 11)
    # E_q[w^2 1] = E_gamma[w 1] with w = exp(-theta.x + |theta|^2 / 2)
    proj = hit @ theta
    sq = float(theta @ theta)
    m2 = [float(np.mean(np.exp(-s * proj + 0.5 * s * s * sq))) for s in scales]
    return float(scales[int(np.argmin(m2))]) * theta


# ---------------------------------------------------------------------------
# Bound families

BOUND_RANGES = {
    "theorem1": "t >= 0",
    "eq_start": "t > 0",
    "dim1": "t >= 1",
    "lehec": "t > 1",
    "corollary12": "t >= 1",
    "prop41": "u >= log(1 + kappa) / 2",
    "chi2_route": "2t >= log(1 + beta)",
}


def bound_value(name: str, level: float, *, beta: float = 0.0, kappa: float = 0.0,
                alpha: Optional[float] = None, c_beta: Optional[float] = None) -> float:
    """Evaluate one of the deviation bounds at ``level``.

    ``lehec`` and ``eq_start`` carry unspecified universal constants and must be
    given ``alpha`` / ``c_beta`` explicitly.
    """
    t = float(level)

    def need(ok: bool):
        if not ok:
            raise DomainError(f"bound {name!r} is valid only for {BOUND_RANGES[name]}, got level {t}")

    if name == "theorem1":
        need(t >= 0)
        return phi_bar(math.sqrt(2 * t))
    if name == "eq_start":
        need(t > 0)
        if c_beta is None:
            raise ContractError("eq_start needs an explicit constant c_beta")
        return c_beta * math.exp(-t) / math.sqrt(t)
    if name == "dim1":
        need(t >= 1)
        return (1 + beta) / math.sqrt(2) * math.exp(-t) / math.sqrt(t)
    if name == "lehec":
        need(t > 1)
        if alpha is None:
            raise ContractError("lehec needs an explicit constant alpha")
        return alpha / (t * math.sqrt(math.log(t)))
    if name == "corollary12":
        need(t >= 1)
        return phi_bar(math.sqrt(2 * math.log(t)))
    if name == "prop41":
        need(t >= 0.5 * math.log1p(kappa))
        return phi_bar(math.sqrt(max(0.0, 2 * t - math.log1p(kappa))))
    if name == "chi2_route":
        need(2 * t - math.log1p(beta) >= 0)
        return chi_square_tail(1, 2 * t - math.log1p(beta))
    raise ConfigurationError(f"unknown bound {name!r}; known: {', '.join(BOUND_RANGES)}")


def chi_square_tail(n: int, r: float) -> float:
    """gamma_n(|x|^2 >= r)."""
    if n < 1 or r < 0:
        raise DomainError("chi_square_tail needs n >= 1 and r >= 0")
    if n == 1:
        return 2.0 * phi_bar(math.sqrt(r))
    return float(gammaincc(0.5 * n, 0.5 * r))


def _check_hypotheses(f: AnyFunction, name: str):
    if name in ("theorem1", "corollary12") and not f.convex:
        raise ContractError(f"{name} requires a convex-flagged function, {f.label} is not")
    if name in ("dim1", "chi2_route") and f.n != 1:
        raise ContractError(f"{name} is a one-dimensional statement; {f.label} has n={f.n}")


def needs_tilt(t: float, count: int) -> bool:
    """Switch to importance sampling once plain MC would see < 1000 hits at the theorem1 level."""
    return phi_bar(math.sqrt(2 * max(t, 0.0))) * count < 1000


def check_bound(f: AnyFunction, bound_name: str, levels: Sequence[float], count: int,
                stream: RandomStream, *, kappa: float = 0.0, alpha: Optional[float] = None,
                c_beta: Optional[float] = None, tilt: Optional[bool] = None,
                workers: int = 1) -> list[BoundCheckReport]:
    """Compare tail estimates with a bound at each level (3 SE slack)."""
    _check_hypotheses(f, bound_name)
    reports = []
    for i, t in enumerate(levels):
        bound = bound_value(bound_name, t, beta=f.beta, kappa=kappa, alpha=alpha, c_beta=c_beta)
        use_tilt = needs_tilt(t, count) if tilt is None else tilt
        drift = select_drift(f, t) if use_tilt else None
        est = tail_estimate(f, t, count, stream.child(i), drift=drift, workers=workers)
        reports.append(BoundCheckReport.build(est, bound_name, bound, f.label))
    return reports


# ---------------------------------------------------------------------------
# The level-set curve phi(s) = Phi^{-1}(gamma_n(f <= s))


@dataclass(frozen=True)
class PhiCurve:
    levels: np.ndarray
    phi_values: np.ndarray
    ses: np.ndarray
    cdf: np.ndarray  # p_hat at the retained levels
    count: int
    label: str = ""
    # The shared batch of f-values, sorted; kept so that integrals over levels
    # can be refined without redrawing.
    sorted_values: np.ndarray = field(default=None, repr=False, compare=False)

    def grid(self) -> GridFunction1D:
        return GridFunction1D(self.levels, self.phi_values)

    def survival(self, u) -> np.ndarray:
        """Empirical gamma_n(f > u) from the shared batch."""
        k = np.searchsorted(self.sorted_values, np.asarray(u, dtype=float), side="right")
        return 1.0 - k / len(self.sorted_values)

    def to_rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.levels.tolist(), self.phi_values.tolist(), self.ses.tolist()))


def sample_values(f: AnyFunction, count: int, stream: RandomStream, workers: int = 1) -> np.ndarray:
    parts = map_chunks(stream, f.n, count, f.evaluate, workers)
    return np.sort(np.concatenate(parts))


def phi_curve(f: AnyFunction, level_range=None, K: int = 32, count: int = 10**6,
              stream: RandomStream = RandomStream(7), workers: int = 1) -> PhiCurve:
    """Estimate phi on a uniform level grid from one shared sample batch."""
    if K < 8:
        raise ConfigurationError("phi_curve needs K >= 8 levels")
    vals = sample_values(f, count, stream, workers)
    if level_range is None:
        level_range = (vals[int(1e-3 * count)], vals[int((1 - 1e-3) * count)])
    lo, hi = map(float, level_range)
    if not hi > lo:
        raise RangeError(f"degenerate level range [{lo}, {hi}] for {f.label}")
    levels = np.linspace(lo, hi, K)
    p = np.searchsorted(vals, levels, side="right") / count
    keep = p * (1 - p) * count >= 10
    if not np.any(keep):
        raise RangeError(f"every level in [{lo}, {hi}] has p_hat in {{0, 1}} for {f.label}")
    p = p[keep]
    phi = phi_inv(p)
    se = np.sqrt(p * (1 - p) / count) / phi_density(phi)
    return PhiCurve(levels[keep], phi, se, p, count, f.label, vals)


@dataclass(frozen=True)
class CurveCheck:
    name: str
    verdict: str
    worst_margin: float
    checked: int
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "margin": self.worst_margin,
                "checked": self.checked, **self.details}


def phi_lower_bound_check(curve: PhiCurve) -> CurveCheck:
    """phi(u) + 3 se >= sqrt(2u) at every retained level u >= 0."""
    u = curve.levels
    mask = u >= 0
    if not np.any(mask):
        return CurveCheck("phi_lower_bound", "PASS", math.inf, 0, {"note": "no levels u >= 0"})
    margin = curve.phi_values[mask] + SE_BAND * curve.ses[mask] - np.sqrt(2 * u[mask])
    worst = float(np.min(margin))
    return CurveCheck("phi_lower_bound", "PASS" if worst >= -FLOAT_SLACK else "FAIL", worst, int(mask.sum()),
                      {"worst_level": float(u[mask][np.argmin(margin)])})


def psi_lower_bound_check(curve: PhiCurve, slopes=None) -> CurveCheck:
    """psi(t) = sup_u (u t + phi(u)) >= -1/(2t) for t in [-10, -0.05].

    The sup over the sampled window never exceeds the true sup; when it is
    attained at an interior grid point the shortfall due to grid spacing is
    at most max(g_k - g_{k-1}, g_k - g_{k+1}) with g = u t + phi (concavity),
    which is added as a resolution allowance.  Slopes whose sup sits on the
    window edge are truncated and only counted if they already pass.
    """
    u, phi = curve.levels, curve.phi_values
    if slopes is None:
        # the curve's own chord slopes are where the conjugate has its kinks
        chords = -np.diff(phi) / np.diff(u)
        chords = chords[(chords >= -10.0) & (chords <= -0.05)]
        t = np.unique(np.concatenate([np.linspace(-10.0, -0.05, 200), chords]))
    else:
        t = np.sort(np.asarray(slopes, dtype=float))
    if np.any(t >= 0):
        raise DomainError("psi check is restricted to negative slopes")
    conj = legendre_transform(GridFunction1D(u, -phi), t)
    k = np.searchsorted(u, conj.argmax)
    g = u[None, :] * t[:, None] + phi[None, :]
    rows = np.arange(len(t))
    left = np.where(k > 0, g[rows, k] - g[rows, np.maximum(k - 1, 0)], 0.0)
    right = np.where(k < len(u) - 1, g[rows, k] - g[rows, np.minimum(k + 1, len(u) - 1)], 0.0)
    allowance = np.maximum(left, right)
    interior = (k > 0) & (k < len(u) - 1)
    target = -1.0 / (2.0 * t)
    margin = conj.values + allowance + SE_BAND * curve.ses[k] - target
    failing = (margin < -FLOAT_SLACK) & interior
    judged = interior | (margin >= -FLOAT_SLACK)
    worst = float(np.min(margin[judged])) if np.any(judged) else math.inf
    verdict = "FAIL" if np.any(failing) else ("PASS" if np.any(judged) else "INCONCLUSIVE")
    return CurveCheck("psi_lower_bound", verdict, worst, int(interior.sum()),
                      {"truncated": int((~interior).sum()),
                       "truncated_below_target": int(((margin < -FLOAT_SLACK) & ~interior).sum())})


def layer_cake_check(f: AnyFunction, curve: Optional[PhiCurve] = None, u_range=None,
                     count: int = 10**6, stream: RandomStream = RandomStream(7)) -> CurveCheck:
    """Integrate e^u Phibar(phi(u)) du; the result should be 1 for normalised f.

    Inside ``u_range`` the integrand uses the empirical survival function of
    the shared batch.  Being a step function it is integrated exactly:
    the integral equals the batch mean of (e^{min(f, hi)} - e^{lo})_+.  Below the range the survival function is
    at most 1; above it phi is extended linearly from its last retained
    levels, and the two caps are added analytically.
    """
    vals = curve.sorted_values if curve is not None else sample_values(f, count, stream)
    n = len(vals)
    if u_range is None:
        # stop where about 10 samples remain above; the rest is the upper cap
        hi = float(vals[max(n - 11, 0)]) if curve is not None else float(vals[-1])
        u_range = (float(vals[0]) - 10.0, hi)
    lo, hi = map(float, u_range)
    if not hi > lo:
        raise RangeError("empty integration range")
    top_surv = 1.0 - np.searchsorted(vals, hi, side="right") / n
    y = np.clip(np.exp(np.minimum(vals, hi)) - math.exp(lo), 0.0, None)
    body = math.fsum(y) / n

    lower_cap = math.exp(lo)
    upper_cap = 0.0
    if curve is not None and top_surv > 0:
        tail = curve.levels >= curve.levels[0] + 0.75 * (curve.levels[-1] - curve.levels[0])
        if tail.sum() < 2:
            tail = np.zeros(len(curve.levels), dtype=bool)
            tail[-2:] = True
        slope, icpt = np.polyfit(curve.levels[tail], curve.phi_values[tail], 1)
        a = phi_inv(min(max(1.0 - top_surv, 1e-300), 1 - 1e-16))
        if slope <= 0:
            raise RangeError("phi is not increasing at the top of the range; widen it")
        upper_cap = integrate.quad(
            lambda u: math.exp(u + log_ndtr(-(a + slope * (u - hi)))), hi, math.inf
        )[0]
    elif curve is None and top_surv > 0:
        raise RangeError("integration range ends below the largest sample; widen it")
    if lower_cap > 0.01 or upper_cap > 0.01:
        raise RangeError(f"tail caps too large (lower {lower_cap:.3g}, upper {upper_cap:.3g}); widen the range")
    se = float(np.std(y, ddof=1) / math.sqrt(n))
    total = body + lower_cap * _lower_survival_fraction(vals, lo) + upper_cap
    tol = max(0.02, 5 * se)
    err = abs(total - 1.0)
    return CurveCheck("layer_cake", "PASS" if err <= tol else "FAIL", tol - err, n,
                      {"integral": total, "se": se, "tolerance": tol,
                       "lower_cap": lower_cap, "upper_cap": upper_cap})


def _lower_survival_fraction(vals: np.ndarray, lo: float) -> float:
    # Below the range the survival function is 1 unless samples reach below lo.
    return 1.0 - np.searchsorted(vals, lo, side="right") / len(vals) if len(vals) else 1.0
