"""Pushforward laws and monotone rearrangement in dimension one.

For f on (R^n, gamma_n) the law mu_f of f has CDF F, and T = F^{-1} o Phi is
the nondecreasing map pushing gamma_1 onto mu_f.  Convexity of f makes T
convex; the quartic counterexample shows no semiconvexity constant survives
without it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .convex_analysis import GridFunction1D, concavity_test, semiconvexity_estimate
from .deviation import BoundCheckReport, TailEstimate, check_bound
from .errors import (
    AnalysisFailure,
    ConfigurationError,
    CriticalLevelError,
    DomainError,
    ResolutionError,
)
from .functions import AnyFunction, as_points
from .gauss_core import (
    MonteCarlo,
    Quadrature,
    RandomStream,
    iter_gaussian_chunks,
    phi_bar,
    phi_cdf,
    phi_density,
    phi_inv,
    sample_gaussian,
    tensor_rule,
)


@dataclass(frozen=True)
class QuantileGrid:
    """Deterministic 1D rule: atoms at Phi^{-1}((i + 1/2) / count), equal weights."""

    count: int

    def __post_init__(self):
        if self.count < 10:
            raise ConfigurationError("quantile grid needs count >= 10")

    def nodes(self) -> np.ndarray:
        return phi_inv((np.arange(self.count) + 0.5) / self.count)


@dataclass(frozen=True)
class EmpiricalCDF:
    """Discrete law: sorted atoms with weights summing to 1."""

    atoms: np.ndarray
    weights: np.ndarray
    method: str = "monte_carlo"
    cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if a.ndim != 1 or a.shape != w.shape or len(a) == 0:
            raise ConfigurationError("atoms and weights must be equal-length 1D arrays")
        order = np.argsort(a, kind="stable")
        a, w = a[order], w[order]
        cw = np.cumsum(w)
        cw /= cw[-1]
        cw[-1] = 1.0
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "cumulative", cw)

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def effective_count(self) -> float:
        """Kish effective sample size; equals the atom count for equal weights."""
        return float(1.0 / np.sum(self.weights**2))

    def __call__(self, t) -> np.ndarray:
        """F(t) = mass of atoms <= t."""
        k = np.searchsorted(self.atoms, np.asarray(t, dtype=float), side="right")
        return np.where(k > 0, self.cumulative[np.maximum(k - 1, 0)], 0.0)

    def inverse(self, s) -> np.ndarray:
        """Generalized inverse inf{t : F(t) >= s} for s in (0, 1]."""
        s = np.asarray(s, dtype=float)
        if np.any((s <= 0) | (s > 1)):
            raise DomainError("generalized inverse is defined for s in (0, 1]")
        k = np.searchsorted(self.cumulative, s, side="left")
        return self.atoms[np.minimum(k, len(self.atoms) - 1)]


    def smooth_transport(self, u) -> np.ndarray:
        """F^{-1}(Phi(u)) interpolated linearly in u between atom mid-masses.

        Linear in u (not in probability) so that affine maps are reproduced
        exactly.  Used for the transport map's grid values only; exact
        statements (Galois inequalities, pushforward) go through ``inverse``.
        """
        a, w = self.atoms, self.weights
        # atoms equal up to rounding (e.g. f(x) and f(-x) for even f) act as one
        scale = max(1.0, float(np.max(np.abs(a))))
        start = np.concatenate([[True], np.diff(a) > 1e-12 * scale])
        group = np.cumsum(start) - 1
        wg = np.bincount(group, weights=w)
        ag = a[start]
        keep = wg > 0
        cum = np.cumsum(wg)
        mid = (cum - 0.5 * wg)[keep] / cum[-1]
        return np.interp(np.asarray(u, dtype=float), phi_inv(mid), ag[keep])


def build_cdf(f: AnyFunction, method: Union[Quadrature, QuantileGrid, MonteCarlo]) -> EmpiricalCDF:
    """Law of f under gamma_n as weighted atoms."""
    if isinstance(method, QuantileGrid):
        if f.n != 1:
            raise ConfigurationError("a quantile grid is one-dimensional")
        x = method.nodes()
        return EmpiricalCDF(f.evaluate(x[:, None]), np.full(len(x), 1.0 / len(x)), "quantile_grid")
    if isinstance(method, Quadrature):
        X, w = tensor_rule(f.n, method.order)
        return EmpiricalCDF(f.evaluate(X), w, "quadrature")
    if isinstance(method, MonteCarlo):
        vals = np.concatenate([f.evaluate(z) for z in iter_gaussian_chunks(method.stream, f.n, method.count)])
        return EmpiricalCDF(vals, np.full(len(vals), 1.0 / len(vals)), "monte_carlo")
    raise ConfigurationError(f"unsupported method {method!r}")


def galois_violations(cdf: EmpiricalCDF) -> int:
    """Count failures of F(F^{-1}(s)) >= s and F^{-1}(F(t)) <= t over the atoms."""
    s = cdf.cumulative
    bad = int(np.sum(cdf(cdf.inverse(s)) < s))
    bad += int(np.sum(cdf.inverse(cdf(cdf.atoms)) > cdf.atoms))
    return bad


# ---------------------------------------------------------------------------
# Transport map


@dataclass(frozen=True)
class TransportMap1D:
    us: np.ndarray
    values: np.ndarray
    ses: np.ndarray  # resolution / sampling error of each value
    cdf: EmpiricalCDF = field(repr=False)
    meta: dict = field(default_factory=dict)

    def grid(self) -> GridFunction1D:
        return GridFunction1D(self.us, self.values)

    def apply(self, u) -> np.ndarray:
        """Exact T(u) = F^{-1}(Phi(u)) from the atoms, for any real u."""
        p = phi_cdf(np.asarray(u, dtype=float))
        return self.cdf.inverse(np.clip(p, np.nextafter(0.0, 1.0), 1.0))

    def interpolate(self, u) -> np.ndarray:
        """Piecewise-linear display version on the grid."""
        return np.interp(u, self.us, self.values)

    def to_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.us.tolist(), self.values.tolist()))


def build_transport_map(cdf: EmpiricalCDF, u_max: float = 4.0, K: int = 129) -> TransportMap1D:
    """T(u_i) = F^{-1}(Phi(u_i)) on a uniform grid of [-u_max, u_max]."""
    if not 0 < u_max <= 6:
        raise ConfigurationError("u_max must be in (0, 6]")
    if K < 64:
        raise ConfigurationError("transport grid needs K >= 64")
    tail = phi_bar(u_max)
    upper = int(np.sum(cdf.cumulative > 1.0 - tail))
    lower = int(np.sum(cdf.cumulative <= tail))
    if min(upper, lower) < 10 or tail * cdf.effective_count < 10:
        raise ResolutionError(
            f"only {min(upper, lower)} atoms beyond |u| = {u_max} "
            f"(effective count {cdf.effective_count:.3g}); lower u_max or add samples"
        )
    us = np.linspace(-u_max, u_max, K)
    p = phi_cdf(us)
    T = cdf.smooth_transport(us)
    slope = np.gradient(T, us)
    if cdf.method == "monte_carlo":
        # an error dp in probability moves T by dp T' / phi(u)
        ses = np.sqrt(p * (1 - p) / cdf.effective_count) * np.abs(slope) / phi_density(us)
    else:
        # linear interpolation over atom gaps du ~ w / phi(u) errs by du^2 |T''| / 8
        du = float(np.max(cdf.weights)) / phi_density(us)
        ses = du**2 * np.abs(np.gradient(slope, us)) / 8
    ses = ses + 1e-12 * np.maximum(np.abs(T), 1.0)
    return TransportMap1D(us, T, ses, cdf, {"atoms": cdf.size, "method": cdf.method, "u_max": u_max, "K": K})


@dataclass(frozen=True)
class SemiconvexityEstimate:
    kappa: float  # smallest kappa making the grid values kappa-semiconvex
    noise_floor: float  # 3 sigma / h^2 at the index attaining kappa
    excess: float  # max_i (-d2_i - 3 sigma_i) / h^2, clipped at 0
    argmin: float
    window: tuple

    @property
    def within_noise(self) -> bool:
        return self.excess == 0.0

    def to_json(self) -> dict:
        return {"kappa": self.kappa, "noise_floor": self.noise_floor, "excess": self.excess,
                "argmin": self.argmin, "window": list(self.window)}


def transport_semiconvexity(tmap: TransportMap1D, window: float = 4.0, z: float = 3.0) -> SemiconvexityEstimate:
    """kappa-hat of T on [-window, window], with the part noise alone could explain."""
    mask = np.abs(tmap.us) <= window + 1e-12
    g = GridFunction1D(tmap.us[mask], tmap.values[mask])
    h = g.spacing()
    s = tmap.ses[mask]
    d2 = g.ys[:-2] - 2 * g.ys[1:-1] + g.ys[2:]
    sig = np.sqrt(s[:-2] ** 2 + 4 * s[1:-1] ** 2 + s[2:] ** 2)
    i = int(np.argmin(d2))
    excess = max(0.0, float(np.max(-d2 - z * sig))) / (h * h)
    return SemiconvexityEstimate(semiconvexity_estimate(g), z * float(sig[i]) / (h * h), excess,
                                 float(g.xs[i + 1]), (-window, window))


def inverse_map_concavity(cdf: EmpiricalCDF, levels: Sequence[float]):
    """concavity_test on Phi^{-1} o F, the inverse of T."""
    t = np.asarray(levels, dtype=float)
    p = cdf(t)
    keep = p * (1 - p) * cdf.effective_count >= 10
    t, p = t[keep], p[keep]
    phi = phi_inv(p)
    se = np.sqrt(p * (1 - p) / cdf.effective_count) / phi_density(phi)
    if cdf.method != "monte_carlo":
        se = (1.0 / cdf.effective_count) / phi_density(phi)
    return concavity_test(GridFunction1D(t, phi), se)


def resampled_tail(tmap: TransportMap1D, t: float, count: int, stream: RandomStream) -> TailEstimate:
    """gamma_1(T(G) >= t) from fresh G; the SE also carries the map's own sampling error."""
    G = sample_gaussian(stream, 1, count)[:, 0]
    p = float(np.mean(tmap.apply(G) >= t))
    var = p * (1 - p) / count
    if tmap.cdf.method == "monte_carlo":
        var += p * (1 - p) / tmap.cdf.effective_count
    return TailEstimate(float(t), p, math.sqrt(var), count, "transport")


def prop41_check(f: AnyFunction, kappa: float, levels: Sequence[float], count: int,
                 stream: RandomStream, workers: int = 1) -> list[BoundCheckReport]:
    """Tail bound Phibar(sqrt(2u - log(1 + kappa))) for u >= log(1 + kappa) / 2."""
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    return check_bound(f, "prop41", levels, count, stream, kappa=kappa, workers=workers)


# ---------------------------------------------------------------------------
# Piecewise-monotone functions of one variable: exact level sets


@dataclass(frozen=True)
class Branches:
    """Monotone pieces of f between consecutive critical points."""

    f: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    breaks: np.ndarray  # critical points, sorted

    @classmethod
    def of(cls, f: AnyFunction, critical_points=None, derivative=None) -> "Branches":
        if f.n != 1:
            raise ConfigurationError("level-set analysis is one-dimensional")
        meta = f.meta or {}
        crit = meta.get("critical_points", []) if critical_points is None else critical_points
        d1 = derivative or meta.get("d1")
        scalar = lambda x: float(f.evaluate(np.array([[x]], dtype=float))[0])
        if d1 is None and f.gradient is not None:
            d1 = lambda x: np.asarray(f.gradient(np.atleast_1d(x)[:, None]), dtype=float).reshape(-1)
        elif d1 is None:
            # central difference; only used for densities at regular levels
            d1 = lambda x, h=1e-6: (scalar(float(x) + h) - scalar(float(x) - h)) / (2 * h)
        return cls(scalar, lambda x: float(np.asarray(d1(np.asarray(x, dtype=float))).reshape(-1)[0]),
                   np.sort(np.asarray(crit, dtype=float)))

    def intervals(self) -> list[tuple[float, float]]:
        edges = [-math.inf, *self.breaks.tolist(), math.inf]
        return list(zip(edges[:-1], edges[1:]))

    def _end(self, a: float, b: float, left: bool) -> float:
        """A finite stand-in for an infinite interval end (far enough that Phi saturates)."""
        x = a if left else b
        if math.isfinite(x):
            return x
        anchor = (b if left else a) if math.isfinite(b if left else a) else 0.0
        return anchor - 40.0 if left else anchor + 40.0

    def preimages(self, t: float) -> list[float]:
        roots = []
        for a, b in self.intervals():
            lo, hi = self._end(a, b, True), self._end(a, b, False)
            flo, fhi = self.f(lo) - t, self.f(hi) - t
            if flo == 0:
                roots.append(lo)
            elif flo * fhi < 0:
                roots.append(brentq(lambda x: self.f(x) - t, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500))
        return sorted(set(roots))

    def sublevel_measure(self, t: float) -> float:
        """gamma_1({f <= t}) exactly, from the branch roots."""
        total = 0.0
        for a, b in self.intervals():
            lo, hi = self._end(a, b, True), self._end(a, b, False)
            flo, fhi = self.f(lo), self.f(hi)
            increasing = fhi >= flo
            if max(flo, fhi) <= t:
                total += _gauss_mass(a, b)
            elif min(flo, fhi) > t:
                continue
            else:
                r = brentq(lambda x: self.f(x) - t, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
                total += _gauss_mass(a, r) if increasing else _gauss_mass(r, b)
        return min(1.0, total)


def _gauss_mass(a: float, b: float) -> float:
    # Use the smaller tail to keep relative accuracy away from the centre.
    if b <= 0:
        return float(phi_cdf(b) - phi_cdf(a))
    if a >= 0:
        return float(phi_bar(a) - phi_bar(b))
    return float(1.0 - phi_cdf(a) - phi_bar(b))


def pushforward_density(f: AnyFunction, t: float, critical_points=None, derivative=None) -> float:
    """h(t) = sum over {f = t} of phi(x) / |f'(x)|."""
    br = Branches.of(f, critical_points, derivative)
    for c in br.breaks:
        if abs(br.f(c) - t) < 1e-8:
            raise CriticalLevelError(f"level {t} is within 1e-8 of the critical value f({c:.6g})")
    return _branch_density(br, t, strict=True)


def _branch_density(br: "Branches", t: float, strict: bool) -> float:
    total = 0.0
    for x in br.preimages(t):
        d = abs(br.d1(x))
        if d < 1e-8:
            if strict:
                raise CriticalLevelError(f"|f'| = {d:.3g} at preimage {x:.6g} of level {t}")
            continue
        total += float(phi_density(x)) / d
    return total


def pushforward_density_integral(f: AnyFunction, critical_points=None, derivative=None) -> float:
    """Integral of pushforward_density over all levels (should be 1).

    The level axis is cut at the critical values, where the density has
    inverse square-root singularities.  Bounded pieces use t = a + (b - a)(1 - cos th)/2,
    the unbounded top piece t = c + s^2; both absorb those singularities.
    """
    from scipy.integrate import quad

    br = Branches.of(f, critical_points, derivative)
    xs = np.linspace(-40, 40, 80001)
    fmin = float(np.min(f.evaluate(xs[:, None])))
    cuts = sorted({fmin, *(br.f(c) for c in br.breaks)})
    dens = lambda t: _branch_density(br, t, strict=False)
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        if b - a < 1e-12:
            continue
        g = lambda th, a=a, b=b: dens(a + 0.5 * (b - a) * (1 - math.cos(th))) * 0.5 * (b - a) * math.sin(th)
        total += quad(g, 1e-9, math.pi - 1e-9, limit=200)[0]
    c = cuts[-1]
    total += quad(lambda s: 2 * s * dens(c + s * s), 1e-9, math.inf, limit=200)[0]
    return total


def level_set_cdf(f: AnyFunction, critical_points=None, derivative=None) -> Callable[[float], float]:
    """Exact F(t) = gamma_1(f <= t) for a piecewise-monotone f."""
    return Branches.of(f, critical_points, derivative).sublevel_measure


# ---------------------------------------------------------------------------
# The counterexample


@dataclass(frozen=True)
class CriticalPoint:
    x: float
    value: float
    kind: str  # "min" or "max"


def classify_critical_points(f: AnyFunction) -> list[CriticalPoint]:
    meta = f.meta or {}
    if "critical_points" not in meta or "d2" not in meta:
        raise ConfigurationError(f"{f.label} carries no critical-point data")
    d2 = meta["d2"]
    out = []
    for c in np.sort(np.asarray(meta["critical_points"], dtype=float)):
        # polish the root with Newton steps on f'
        for _ in range(3):
            c = c - float(meta["d1"](c)) / float(d2(c))
        curv = float(d2(c))
        out.append(CriticalPoint(float(c), float(f.evaluate(np.array([[c]]))[0]),
                                 "min" if curv > 0 else "max"))
    return out


def non_global_local_min(f: AnyFunction) -> CriticalPoint:
    pts = classify_critical_points(f)
    mins = [p for p in pts if p.kind == "min"]
    if len(mins) < 2:
        raise AnalysisFailure(f"{f.label} has no non-global local minimum")
    lowest = min(p.value for p in mins)
    return max((p for p in mins if p.value > lowest), key=lambda p: p.value)


@dataclass(frozen=True)
class CriticalLevelAnalysis:
    label: str
    level: float
    x_o: Optional[float]
    steps: list
    q_plus: list
    q_minus: list
    ratios: list  # q_plus[k+1] / q_plus[k]
    exponent: float  # slope of log(q_plus) against log(h)
    left_spread: float  # max / min of q_minus
    mass_below: float  # F(t_o)
    verdict: str

    def to_json(self) -> dict:
        return {
            "name": "counterexample_analysis",
            "function": self.label,
            "inputs": {"level": self.level, "x_o": self.x_o, "steps": self.steps},
            "q_plus": self.q_plus,
            "q_minus": self.q_minus,
            "ratios": self.ratios,
            "estimate": self.exponent,
            "left_spread": self.left_spread,
            "mass_below": self.mass_below,
            "verdict": self.verdict,
        }


def counterexample_analysis(f: AnyFunction, h0: float = 0.1, k_max: int = 8,
                            level: Optional[float] = None, expect_divergence: bool = True) -> CriticalLevelAnalysis:
    """Difference quotients of F at the level of a non-global local minimum.

    Right quotients should blow up like h^{-1/2}; left ones stay bounded.  With
    ``level`` given and ``expect_divergence=False`` this is the smooth control.
    """
    x_o = None
    if level is None:
        crit = non_global_local_min(f)
        x_o, level = crit.x, crit.value
    F = level_set_cdf(f)
    Fo = F(level)
    if not 0 < Fo < 1:
        raise AnalysisFailure(f"mu_f has no mass on one side of t_o = {level} (F = {Fo})")
    steps = [h0 * 4.0**-k for k in range(k_max + 1)]
    qp = [(F(level + h) - Fo) / h for h in steps]
    qm = [(Fo - F(level - h)) / h for h in steps]
    ratios = [b / a for a, b in zip(qp, qp[1:])]
    exponent = float(np.polyfit(np.log(steps[2:]), np.log(qp[2:]), 1)[0])
    spread = max(qm) / min(qm) if min(qm) > 0 else math.inf
    verdict = "PASS"
    if expect_divergence:
        if not -0.7 <= exponent <= -0.3:
            raise AnalysisFailure(
                f"right-quotient exponent {exponent:.3f} outside [-0.7, -0.3]; t_o or resolution is off"
            )
        ok = all(1.7 <= r <= 2.3 for r in ratios[2:7]) and spread <= 2.0
        verdict = "PASS" if ok else "FAIL"
    return CriticalLevelAnalysis(f.label, float(level), x_o, steps, qp, qm, ratios, exponent,
                                 float(spread), float(Fo), verdict)


def exact_transport(f: AnyFunction) -> Callable[[float], float]:
    """T(u) = F^{-1}(Phi(u)) by root-finding on the exact level-set CDF."""
    F = level_set_cdf(f)
    # bracket the range of f on a generous window
    xs = np.linspace(-12, 12, 24001)
    vals = f.evaluate(xs[:, None])
    lo, hi = float(np.min(vals)) - 1.0, float(np.max(vals))

    def T(u: float) -> float:
        p = float(phi_cdf(u))
        return brentq(lambda t: F(t) - p, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)

    return T


@dataclass(frozen=True)
class WitnessResult:
    lam: float
    found: bool
    triple: Optional[tuple]  # (u1, u2, midpoint)
    excess: float  # T(mid) - (T(u1)+T(u2))/2 - (lam/8)(u2-u1)^2
    noise: float
    verdict: str  # VIOLATION or INCONCLUSIVE

    def to_json(self) -> dict:
        return {"lambda": self.lam, "found": self.found, "triple": self.triple,
                "excess": self.excess, "noise": self.noise, "verdict": self.verdict}


def kappa_divergence_witness(f: AnyFunction, lambdas: Sequence[float], u_o: Optional[float] = None,
                             max_level: int = 40, noise: float = 1e-10) -> list[WitnessResult]:
    """Search symmetric triples around u_o that break lambda-semiconvexity of T_f.

    ``u_o`` defaults to Phi^{-1}(F(t_o)) at the non-global local minimum.  The
    half-width is halved until a violation beyond 3 x noise appears.
    """
    T = exact_transport(f)
    if u_o is None:
        crit = non_global_local_min(f)
        u_o = float(phi_inv(level_set_cdf(f)(crit.value)))
    Tm = T(u_o)
    out = []
    for lam in lambdas:
        best = (-math.inf, None)
        found = False
        for j in range(max_level):
            d = 0.5 * 2.0**-j
            u1, u2 = u_o - d, u_o + d
            excess = Tm - 0.5 * (T(u1) + T(u2)) - lam / 8.0 * (u2 - u1) ** 2
            if excess > best[0]:
                best = (excess, (u1, u2, u_o))
            if excess > 3 * noise:
                found = True
                break
        out.append(WitnessResult(float(lam), found, best[1], float(best[0]), noise,
                                 "VIOLATION" if found else "INCONCLUSIVE"))
    return out


def quartic_assumptions(f: AnyFunction, probes: int = 4001, alpha0: float = 0.2) -> dict:
    """Numerical evidence for the level-set assumptions used on the quartic.

    Reports the largest number of preimages over probed levels and
    beta0 = min |f'| on {t_o - alpha0 <= f < t_o}.
    """
    br = Branches.of(f)
    crit = non_global_local_min(f)
    vals = f.evaluate(np.linspace(-3, 3, 6001)[:, None])
    levels = np.linspace(float(vals.min()) + 1e-6, float(vals.max()), probes)
    card = max(len(br.preimages(float(t))) for t in levels)
    xs = np.linspace(-3, 3, 600001)
    fx = f.evaluate(xs[:, None])
    band = (fx >= crit.value - alpha0) & (fx < crit.value)
    d1 = np.abs(np.array([br.d1(x) for x in xs[band][:: max(1, band.sum() // 2000)]]))
    return {"max_preimages": card, "alpha0": alpha0, "beta0": float(d1.min()) if len(d1) else math.inf,
            "t_o": crit.value, "x_o": crit.x}
