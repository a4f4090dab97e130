"""Ehrhard's inequality on intervals and convex polygons, and Kwapien's median bound.

Phi^{-1}(gamma(lam A + (1 - lam) B)) >= lam Phi^{-1}(gamma(A)) + (1 - lam) Phi^{-1}(gamma(B))
for convex A, B.  In dimension one every quantity is a closed form; in
dimension two the measure of a polygon is a one-dimensional integral over
vertical slices, or a Monte Carlo fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.integrate import quad

from .errors import ContractError, DegenerateMeasureError, DivergenceError, DomainError
from .functions import AnyFunction
from .gauss_core import (
    MonteCarlo,
    Quadrature,
    RandomStream,
    map_chunks,
    phi_bar,
    phi_cdf,
    phi_density,
    phi_inv,
)

CLIP = 10.0  # unbounded bodies are cut to |coordinate| <= CLIP
ROUNDING = 1e-12  # allowance for the exact 1D slack in the equality cases


@dataclass(frozen=True)
class ConvexBody:
    dim: int
    interval: Optional[tuple] = None  # 1D: (a, b), ends may be infinite
    vertices: Optional[np.ndarray] = None  # 2D: (k, 2), counterclockwise
    degenerate: bool = False
    clipped_faces: int = 0  # faces lying on the clipping box

    def __post_init__(self):
        if self.dim == 1:
            a, b = map(float, self.interval)
            if not a <= b:
                raise ContractError(f"interval needs a <= b, got [{a}, {b}]")
            if a == b and not self.degenerate:
                raise ContractError("empty-interior interval must be flagged degenerate")
            object.__setattr__(self, "interval", (a, b))
        elif self.dim == 2:
            v = np.asarray(self.vertices, dtype=float)
            if v.ndim != 2 or v.shape[1] != 2 or len(v) < 1:
                raise ContractError("polygon vertices must be a (k, 2) array")
            object.__setattr__(self, "vertices", v)
            if len(v) >= 3:
                e = np.roll(v, -1, axis=0) - v
                cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
                if np.any(cross < -1e-12):
                    raise ContractError("polygon must be convex with counterclockwise vertices")
                area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
            else:
                area = 0.0
            if area <= 1e-14 and not self.degenerate:
                raise ContractError("polygon without interior must be flagged degenerate")
        else:
            raise ContractError("only dimensions 1 and 2 are supported")

    @classmethod
    def segment(cls, a: float, b: float) -> "ConvexBody":
        return cls(1, interval=(a, b))

    @classmethod
    def polygon(cls, points) -> "ConvexBody":
        """Convex hull of the given points as a CCW polygon."""
        hull = convex_hull(np.asarray(points, dtype=float))
        return cls(2, vertices=hull, degenerate=len(hull) < 3)

    @classmethod
    def half_plane(cls, normal, offset: float) -> "ConvexBody":
        """{x : normal . x <= offset} cut to the box [-CLIP, CLIP]^2."""
        n = np.asarray(normal, dtype=float)
        box = np.array([[-CLIP, -CLIP], [CLIP, -CLIP], [CLIP, CLIP], [-CLIP, CLIP]])
        poly = clip_polygon(box, n, float(offset))
        return cls(2, vertices=poly, clipped_faces=3)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        if self.dim == 1:
            a, b = self.interval
            return (pts[:, 0] >= a) & (pts[:, 0] <= b)
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        inside = np.ones(len(pts), dtype=bool)
        for (x0, y0), (ex, ey) in zip(v, e):
            inside &= ex * (pts[:, 1] - y0) - ey * (pts[:, 0] - x0) >= 0
        return inside

    def truncation_error(self) -> float:
        """Bound on the measure lost to clipping (2 Phibar(CLIP) per clipped face)."""
        return 2.0 * float(phi_bar(CLIP)) * self.clipped_faces

    def to_json(self) -> dict:
        if self.dim == 1:
            return {"dim": 1, "interval": list(self.interval)}
        return {"dim": 2, "vertices": self.vertices.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ConvexBody":
        if obj.get("dim") == 1:
            return cls.segment(*obj["interval"])
        if obj.get("dim") == 2:
            return cls.polygon(obj["vertices"])
        raise ContractError(f"cannot read a convex body from {obj!r}")


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counterclockwise, collinear points dropped."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def clip_polygon(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by {normal . x <= offset}."""
    out = []
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        sp, sq = normal @ p - offset, normal @ q - offset
        if sp <= 0:
            out.append(p)
        if sp * sq < 0:
            out.append(p + (q - p) * (sp / (sp - sq)))
    if len(out) < 3:
        raise DegenerateMeasureError("half-plane misses the clipping box")
    return np.array(out)


def minkowski_combination(A: ConvexBody, B: ConvexBody, lam: float) -> ConvexBody:
    """lam A + (1 - lam) B."""
    if A.dim != B.dim:
        raise ContractError("Minkowski combination needs bodies of the same dimension")
    if not 0 <= lam <= 1:
        raise DomainError("lambda must lie in [0, 1]")
    if lam == 1:
        return A
    if lam == 0:
        return B
    if A.dim == 1:
        (a1, b1), (a2, b2) = A.interval, B.interval
        a, b = lam * a1 + (1 - lam) * a2, lam * b1 + (1 - lam) * b2
        return ConvexBody(1, interval=(a, b), degenerate=a == b)
    pts = lam * A.vertices[:, None, :] + (1 - lam) * B.vertices[None, :, :]
    hull = convex_hull(pts.reshape(-1, 2))
    return ConvexBody(2, vertices=hull, degenerate=len(hull) < 3,
                      clipped_faces=max(A.clipped_faces, B.clipped_faces))


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    se: float
    method: str


def _interval_mass(a: float, b: float) -> float:
    if b <= 0:
        return float(phi_cdf(b) - phi_cdf(a))
    if a >= 0:
        return float(phi_bar(a) - phi_bar(b))
    return float(1.0 - phi_cdf(a) - phi_bar(b))


def _slice_bounds(v: np.ndarray, x: float) -> tuple[float, float]:
    """Lowest and highest y of the polygon over the vertical line at x."""
    ys = []
    k = len(v)
    for i in range(k):
        (x0, y0), (x1, y1) = v[i], v[(i + 1) % k]
        if (x0 - x) * (x1 - x) <= 0 and x0 != x1:
            ys.append(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
        elif x0 == x1 == x:
            ys.extend([y0, y1])
    return min(ys), max(ys)


def _polygon_mass(v: np.ndarray) -> tuple[float, float]:
    """gamma_2 of a convex polygon by integrating phi(x) gamma_1(slice) over x."""
    xs = np.unique(v[:, 0])
    total, err = 0.0, 0.0

    def g(x):
        lo, hi = _slice_bounds(v, x)
        return float(phi_density(x)) * _interval_mass(lo, hi)

    for a, b in zip(xs, xs[1:]):
        val, e = quad(g, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        total += val
        err += e
    return total, err


def gaussian_measure(body: ConvexBody,
                     method: Union[Quadrature, MonteCarlo, None] = None) -> MeasureEstimate:
    """gamma_n(body); exact in 1D, slice quadrature or Monte Carlo in 2D."""
    if body.dim == 1:
        return MeasureEstimate(_interval_mass(*body.interval), 0.0, "exact")
    if isinstance(method, MonteCarlo):
        hits = map_chunks(method.stream, 2, method.count, lambda z: int(np.count_nonzero(body.contains(z))))
        p = sum(hits) / method.count
        return MeasureEstimate(p, math.sqrt(p * (1 - p) / method.count), "monte_carlo")
    if body.degenerate:
        return MeasureEstimate(0.0, 0.0, "quadrature")
    val, err = _polygon_mass(body.vertices)
    return MeasureEstimate(val, err + body.truncation_error(), "quadrature")


@dataclass(frozen=True)
class EhrhardReport:
    lambdas: list
    slacks: list
    ses: list
    measures: dict
    min_slack: float
    verdict: str
    method: str

    def to_json(self) -> dict:
        return {
            "name": "ehrhard",
            "inputs": {"lambdas": self.lambdas, "method": self.method},
            "estimate": self.min_slack,
            "se": max(self.ses) if self.ses else 0.0,
            "bound": 0.0,
            "margin": min((s + 3 * e for s, e in zip(self.slacks, self.ses)), default=0.0),
            "slacks": self.slacks,
            "measures": self.measures,
            "verdict": self.verdict,
        }


def _probit(m: MeasureEstimate, name: str) -> tuple[float, float]:
    if not 0 < m.value < 1:
        raise DegenerateMeasureError(f"gamma({name}) = {m.value}; Ehrhard needs a measure in (0, 1)")
    z = float(phi_inv(m.value))
    return z, m.se / float(phi_density(z))


def ehrhard_check(A: ConvexBody, B: ConvexBody, lambdas: Sequence[float] = (0.1, 0.25, 0.5, 0.75, 0.9),
                  method: Union[Quadrature, MonteCarlo, None] = None) -> EhrhardReport:
    """slack(lam) = LHS - RHS of Ehrhard; PASS iff every slack >= -3 se - ROUNDING."""

    def measure(body, k):
        if isinstance(method, MonteCarlo):
            return gaussian_measure(body, MonteCarlo(method.count, method.stream.child(k)))
        return gaussian_measure(body, method)

    mA, mB = measure(A, 0), measure(B, 1)
    zA, sA = _probit(mA, "A")
    zB, sB = _probit(mB, "B")
    slacks, ses, mC = [], [], []
    for i, lam in enumerate(lambdas):
        m = measure(minkowski_combination(A, B, float(lam)), 2 + i)
        zC, sC = _probit(m, f"lam A + (1 - lam) B at lam={lam}")
        slacks.append(zC - (lam * zA + (1 - lam) * zB))
        ses.append(math.sqrt(sC**2 + (lam * sA) ** 2 + ((1 - lam) * sB) ** 2))
        mC.append(m.value)
    ok = all(s >= -3 * e - ROUNDING for s, e in zip(slacks, ses))
    return EhrhardReport([float(l) for l in lambdas], slacks, ses,
                         {"A": mA.value, "B": mB.value, "combinations": mC},
                         float(min(slacks)), "PASS" if ok else "FAIL", mA.method)


def random_interval_pair(rng: np.random.Generator) -> tuple[ConvexBody, ConvexBody]:
    def one():
        a = rng.uniform(-3, 2)
        return ConvexBody.segment(a, a + rng.uniform(0.05, 4))

    return one(), one()


def random_polygon_pair(rng: np.random.Generator) -> tuple[ConvexBody, ConvexBody]:
    def one():
        k = int(rng.integers(3, 9))
        c = rng.uniform(-1.5, 1.5, 2)
        ang = np.sort(rng.uniform(0, 2 * np.pi, k))
        r = rng.uniform(0.5, 2.5, k)
        return ConvexBody.polygon(c + np.c_[r * np.cos(ang), r * np.sin(ang)])

    return one(), one()


# ---------------------------------------------------------------------------
# Median versus mean


@dataclass(frozen=True)
class KwapienReport:
    label: str
    median: float
    median_se: float
    mean: float
    mean_se: float
    count: int
    verdict: str

    def to_json(self) -> dict:
        se = math.hypot(self.median_se, self.mean_se)
        return {
            "name": "kwapien",
            "function": self.label,
            "inputs": {"count": self.count},
            "estimate": self.median,
            "se": se,
            "bound": self.mean,
            "margin": self.mean + 3 * se - self.median,
            "verdict": self.verdict,
        }


def kwapien_check(f: AnyFunction, count: int = 10**6, stream: RandomStream = RandomStream(7),
                  workers: int = 1) -> KwapienReport:
    """Sample median <= sample mean + 3 combined SE for convex f."""
    if not f.convex:
        raise ContractError(f"median/mean comparison needs a convex-flagged function, {f.label} is not")
    vals = np.sort(np.concatenate(map_chunks(stream, f.n, count, f.evaluate, workers)))
    mean = math.fsum(vals) / count
    if not math.isfinite(mean):
        raise DivergenceError(f"sample mean of {f.label} is not finite")
    mean_se = float(np.std(vals, ddof=1)) / math.sqrt(count)
    median = float(np.median(vals))
    # one-sigma order-statistic band around the median: ranks n/2 -+ sqrt(n)/2
    half = 0.5 * math.sqrt(count)
    lo = vals[max(0, int(math.floor(count / 2 - half)))]
    hi = vals[min(count - 1, int(math.ceil(count / 2 + half)))]
    median_se = 0.5 * float(hi - lo)
    ok = median <= mean + 3 * math.hypot(median_se, mean_se)
    return KwapienReport(f.label, median, median_se, mean, mean_se, count, "PASS" if ok else "FAIL")
