"""One-dimensional convex analysis on sampled grids.

Discrete Legendre-Fenchel conjugates, convex envelopes, semiconvexity
constants and a noise-aware concavity test.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class GridFunction1D:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if xs.ndim != 1 or xs.shape != ys.shape:
            raise ContractError("xs and ys must be 1D arrays of equal length")
        if len(xs) < 3:
            raise ContractError("a grid function needs at least 3 points")
        if np.any(np.diff(xs) < 1e-12):
            raise ContractError("xs must be strictly increasing (gaps >= 1e-12)")
        if not np.all(np.isfinite(ys)):
            raise ContractError("grid values must be finite")

    @classmethod
    def sample(cls, func, lo: float, hi: float, num: int) -> "GridFunction1D":
        xs = np.linspace(lo, hi, num)
        return cls(xs, func(xs))

    def spacing(self) -> float:
        """Common spacing of a uniform grid; raises if the grid is not uniform."""
        d = np.diff(self.xs)
        h = (self.xs[-1] - self.xs[0]) / (len(self.xs) - 1)
        if np.max(np.abs(d - h)) > 1e-12 * max(1.0, abs(h)) + 1e-12:
            raise ContractError("operation requires a uniform grid")
        return float(h)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in zip(self.xs, self.ys):
            w.writerow([f"{x:.17g}", f"{y:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction1D":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        return cls(np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class ConjugateResult:
    slopes: np.ndarray
    values: np.ndarray
    argmax: np.ndarray  # grid abscissa attaining each sup
    domain_note: dict = field(default_factory=dict)


def lower_hull_indices(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Indices of the vertices of the lower convex hull of sorted points (monotone chain)."""
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull, dtype=int)


def legendre_transform(g: GridFunction1D, slopes) -> ConjugateResult:
    """g*(t) = max_i (t x_i - g(x_i)) for sorted slopes, in O(N + M).

    The maximiser over the grid is always a vertex of the lower convex hull,
    and along the hull the maximising vertex moves right as t increases, so a
    single forward pointer sweep suffices.
    """
    t = np.asarray(slopes, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) < 0):
        raise ContractError("slopes must be a sorted 1D sequence")
    xs, ys = g.xs, g.ys
    hull = lower_hull_indices(xs, ys)
    hx, hy = xs[hull], ys[hull]
    vals = np.empty(len(t))
    arg = np.empty(len(t))
    k = 0
    last = len(hull) - 1
    for j, tj in enumerate(t):
        while k < last and tj * hx[k + 1] - hy[k + 1] >= tj * hx[k] - hy[k]:
            k += 1
        vals[j] = tj * hx[k] - hy[k]
        arg[j] = hx[k]
    # Finite only on [min slope of g, max slope of g]; beyond, the true
    # conjugate grows linearly with the truncation window.
    edge = np.diff(hy) / np.diff(hx) if len(hull) > 1 else np.array([0.0])
    note = {
        "window": [float(xs[0]), float(xs[-1])],
        "interior_slopes": [float(edge[0]), float(edge[-1])],
        "truncated": int(np.sum((arg == xs[0]) | (arg == xs[-1]))),
    }
    return ConjugateResult(t, vals, arg, note)


def legendre_transform_bruteforce(g: GridFunction1D, slopes) -> np.ndarray:
    """Reference O(N M) evaluation of the discrete conjugate."""
    t = np.asarray(slopes, dtype=float)
    return np.max(t[:, None] * g.xs[None, :] - g.ys[None, :], axis=1)


def double_conjugate(g: GridFunction1D) -> GridFunction1D:
    """Biconjugate g** on g's own grid, i.e. its convex envelope.

    On a finite grid g** is the piecewise-linear interpolant of the lower
    convex hull, which is what is returned.
    """
    hull = lower_hull_indices(g.xs, g.ys)
    env = np.interp(g.xs, g.xs[hull], g.ys[hull])
    env = np.minimum(env, g.ys)
    return GridFunction1D(g.xs.copy(), env)


def semiconvexity_estimate(g: GridFunction1D) -> float:
    """Smallest kappa >= 0 making g + kappa x^2 / 2 convex on the grid."""
    h = g.spacing()
    d2 = g.ys[:-2] - 2.0 * g.ys[1:-1] + g.ys[2:]
    return max(0.0, float(-np.min(d2)) / (h * h))


@dataclass(frozen=True)
class ConcavityReport:
    verdict: str
    max_z: float
    second_differences: np.ndarray
    sigmas: np.ndarray
    violations: list


def concavity_test(g: GridFunction1D, ses=None, z_crit: float = 3.0) -> ConcavityReport:
    """Test concavity of noisy grid values via second differences and their SEs."""
    if len(g.xs) < 3:
        raise ContractError("concavity test needs at least 3 points")
    g.spacing()
    s = np.zeros_like(g.ys) if ses is None else np.asarray(ses, dtype=float)
    if s.shape != g.ys.shape or np.any(s < 0):
        raise ContractError("standard errors must be non-negative and match the grid")
    d2 = g.ys[:-2] - 2.0 * g.ys[1:-1] + g.ys[2:]
    sig = np.sqrt(s[:-2] ** 2 + 4.0 * s[1:-1] ** 2 + s[2:] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sig > 0, d2 / sig, np.where(d2 > 0, math.inf, np.where(d2 < 0, -math.inf, 0.0)))
    bad = np.nonzero(d2 > z_crit * sig + 1e-9)[0] + 1
    return ConcavityReport(
        verdict="PASS" if len(bad) == 0 else "FAIL",
        max_z=float(np.max(z)),
        second_differences=d2,
        sigmas=sig,
        violations=bad.tolist(),
    )
