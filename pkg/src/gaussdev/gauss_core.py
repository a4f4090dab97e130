"""Scalar Gaussian primitives, Gauss-Hermite rules and seedable normal sampling.

Every tail quantity is evaluated through the complementary error function so
that deep-tail values keep relative (not just absolute) accuracy.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import erfc, ndtri

from .errors import ConfigurationError, DomainError

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)

# Samples are drawn in fixed-size chunks, one Philox jump per chunk, so the
# concatenated batch does not depend on how chunks are scheduled.
CHUNK_SIZE = 1 << 17


def phi_cdf(t):
    """Standard normal CDF."""
    return 0.5 * erfc(-np.asarray(t, dtype=float) / SQRT2) if np.ndim(t) else float(
        0.5 * erfc(-float(t) / SQRT2)
    )


def phi_bar(t):
    """Standard normal upper tail, computed directly from erfc."""
    return 0.5 * erfc(np.asarray(t, dtype=float) / SQRT2) if np.ndim(t) else float(
        0.5 * erfc(float(t) / SQRT2)
    )


def phi_density(t):
    t = np.asarray(t, dtype=float)
    out = np.exp(-0.5 * t * t) / SQRT2PI
    return out if out.ndim else float(out)


def _phi_inv_array(p: np.ndarray) -> np.ndarray:
    x = ndtri(p)
    # One Newton step; the residual is taken on the smaller tail so that it
    # is not swamped by cancellation near p = 1.
    lower = p < 0.5
    resid = np.where(lower, phi_cdf(x) - p, (1.0 - p) - phi_bar(x))
    dens = phi_density(x)
    step = np.divide(resid, dens, out=np.zeros_like(resid), where=dens > 0)
    return x - step


def phi_inv(p):
    """Standard normal quantile function on the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError(f"invalid probability for phi_inv: {p!r} (need 0 < p < 1)")
    out = _phi_inv_array(np.atleast_1d(arr))
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def phi_bar_upper_bound(s: float) -> float:
    """Mills-ratio upper bound exp(-s^2/2) / (sqrt(2 pi) s) on the normal tail."""
    if not s > 0:
        raise DomainError(f"phi_bar_upper_bound requires s > 0, got {s!r}")
    return math.exp(-0.5 * s * s) / (SQRT2PI * s)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule normalised against the standard Gaussian measure."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self) -> int:
        return len(self.nodes)

    def integrate(self, func) -> float:
        return float(np.dot(self.weights, func(self.nodes)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["node", "weight"])
        for x, w in zip(self.nodes, self.weights):
            writer.writerow([f"{x:.17g}", f"{w:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "QuadratureRule":
        rows = list(csv.reader(io.StringIO(text)))
        body = [r for r in rows[1:] if r]
        nodes = np.array([float(r[0]) for r in body])
        weights = np.array([float(r[1]) for r in body])
        return cls(nodes, weights)

    def tensor(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor-product nodes (shape (m**n, n)) and weights for dimension n."""
        grids = np.meshgrid(*([self.nodes] * n), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        w = self.weights
        for _ in range(n - 1):
            w = np.multiply.outer(w, self.weights)
        return pts, np.ravel(w)


_RULE_CACHE: dict[int, QuadratureRule] = {}


def _log_abs_orthonormal_hermite(x: np.ndarray, degree: int) -> np.ndarray:
    """log |p_degree(x)| for the gamma_1-orthonormal Hermite polynomials."""
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    log_scale = np.zeros_like(x)
    for k in range(degree):
        nxt = (x * cur - math.sqrt(k) * prev) / math.sqrt(k + 1)
        prev, cur = cur, nxt
        big = np.abs(cur) > 1e100
        if np.any(big):
            prev = np.where(big, prev / 1e100, prev)
            cur = np.where(big, cur / 1e100, cur)
            log_scale = log_scale + np.where(big, math.log(1e100), 0.0)
    return np.log(np.abs(cur)) + log_scale


def gauss_hermite_rule(m: int) -> QuadratureRule:
    """Golub-Welsch Gauss-Hermite rule with m nodes, rescaled to N(0, 1)."""
    if not isinstance(m, (int, np.integer)) or not 1 <= m <= 256:
        raise ConfigurationError(f"quadrature order must be an integer in [1, 256], got {m!r}")
    m = int(m)
    if m in _RULE_CACHE:
        return _RULE_CACHE[m]
    if m == 1:
        rule = QuadratureRule(np.zeros(1), np.ones(1))
    else:
        # Jacobi matrix of the physicists' Hermite polynomials (weight e^{-x^2});
        # eigenvalues scaled by sqrt(2) are the nodes for gamma_1.
        off = np.sqrt(np.arange(1, m) / 2.0)
        vals = eigh_tridiagonal(np.zeros(m), off, eigvals_only=True)
        nodes = np.sort(vals) * SQRT2
        nodes = 0.5 * (nodes - nodes[::-1])
        # Eigenvector components underflow for the outer nodes, so weights come
        # from the Christoffel formula w_i = 1 / (m p_{m-1}(x_i)^2) with p_k
        # orthonormal for gamma_1, carried in log scale.
        log_w = -math.log(m) - 2.0 * _log_abs_orthonormal_hermite(nodes, m - 1)
        weights = np.exp(log_w - log_w.max())
        weights = 0.5 * (weights + weights[::-1])
        weights = weights / math.fsum(weights)
        rule = QuadratureRule(nodes, weights)
    rule.nodes.setflags(write=False)
    rule.weights.setflags(write=False)
    _RULE_CACHE[m] = rule
    return rule


@dataclass(frozen=True)
class RandomStream:
    """A (seed, stream) pair addressing one reproducible Philox substream."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream < 2**64):
            raise ConfigurationError("seed and stream must be 64-bit unsigned integers")

    def generator(self, chunk: int = 0) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed + (self.stream << 64))
        if chunk:
            bitgen = bitgen.jumped(chunk)
        return np.random.Generator(bitgen)

    def child(self, offset: int) -> "RandomStream":
        """Substream used for an independent sub-task (e.g. one level or one body)."""
        return RandomStream(self.seed, (self.stream + 1 + offset * 0x9E3779B97F4A7C15) % 2**64)


def iter_gaussian_chunks(stream: RandomStream, n: int, count: int) -> Iterator[np.ndarray]:
    """Yield standard normal batches of shape (k, n) totalling ``count`` rows."""
    if n < 1 or count < 1:
        raise ConfigurationError("need n >= 1 and count >= 1")
    done = 0
    chunk = 0
    while done < count:
        k = min(CHUNK_SIZE, count - done)
        yield stream.generator(chunk).standard_normal((k, n))
        done += k
        chunk += 1


def sample_gaussian(stream: RandomStream, n: int, count: int) -> np.ndarray:
    """Reproducible batch of ``count`` standard Gaussian points in R^n."""
    return np.concatenate(list(iter_gaussian_chunks(stream, n, count)), axis=0)


@dataclass(frozen=True)
class Quadrature:
    """Tensor Gauss-Hermite integration with ``order`` nodes per axis."""

    order: int = 64

    def __post_init__(self):
        if not 1 <= self.order <= 256:
            raise ConfigurationError(f"quadrature order must be in [1, 256], got {self.order}")


@dataclass(frozen=True)
class MonteCarlo:
    """Plain Monte Carlo integration against gamma_n."""

    count: int
    stream: RandomStream

    def __post_init__(self):
        if self.count < 1:
            raise ConfigurationError("Monte Carlo count must be positive")


MAX_TENSOR_DIM = 3


def tensor_rule(n: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    if n > MAX_TENSOR_DIM:
        raise ConfigurationError(f"tensor quadrature supports n <= {MAX_TENSOR_DIM}, got n={n}")
    return gauss_hermite_rule(order).tensor(n)



def map_chunks(stream: RandomStream, n: int, count: int, fn, workers: int = 1) -> list:
    """Apply ``fn`` to every fixed-size sample chunk; results come back in chunk order.

    Chunk boundaries depend only on ``count``, so any reduction over the
    returned list (done in list order) is independent of ``workers``.
    """
    if n < 1 or count < 1:
        raise ConfigurationError("need n >= 1 and count >= 1")
    sizes = [CHUNK_SIZE] * (count // CHUNK_SIZE)
    if count % CHUNK_SIZE:
        sizes.append(count % CHUNK_SIZE)

    def run(j: int):
        return fn(stream.generator(j).standard_normal((sizes[j], n)))

    if workers <= 1 or len(sizes) == 1:
        return [run(j) for j in range(len(sizes))]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(sizes))))
