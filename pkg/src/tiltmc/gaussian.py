"""Deterministic generation of standard normal samples and Brownian path maps.

Draws are counter-addressable: the normal at flat index k is a pure function
of (seed, stream_id, k), so blocks can be filled in parallel chunks, sliced,
or regenerated later with bit-identical results. Uniform variates come from
the Philox counter-based generator and are mapped to normals through the
inverse CDF (``scipy.special.ndtri``) rather than a rejection method, which
would break index addressing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .errors import InvalidCorrelation, InvalidGrid, SampleBudgetExceeded

__all__ = [
    "RngStream",
    "SampleBlock",
    "CorrelationChol",
    "PathMap",
    "new_stream",
    "normal_draws",
    "draw_samples",
    "regenerate",
    "cholesky_correlation",
    "build_path_map",
]

# Default storage budget for one block: 2**27 float64 entries (1 GiB).
DEFAULT_SAMPLE_BUDGET = 1 << 27

# Rows are filled in fixed-size flat chunks so that the output does not
# depend on how many workers participate.
_FILL_CHUNK = 1 << 16

# Dense path-map matrices are only materialized up to this dimension.
DENSE_PATH_LIMIT = 4096

_U64 = np.uint64
_TWO_M53 = 2.0 ** -53


@dataclass(frozen=True)
class RngStream:
    """Addressable position in a deterministic normal stream.

    ``seed`` and ``stream_id`` select the stream, ``counter`` is the flat
    index of the next draw. Instances are immutable; advancing returns a
    new descriptor.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id", "counter"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if not 0 <= self.stream_id < 2**64:
            raise ValueError("stream_id must fit in 64 bits")
        if self.counter < 0:
            raise ValueError("counter must be nonnegative")

    def advanced(self, count: int) -> "RngStream":
        """Descriptor pointing ``count`` draws further into the stream."""
        return RngStream(self.seed, self.stream_id, self.counter + int(count))

    def substream(self, offset: int) -> "RngStream":
        """Fresh stream with ``stream_id`` shifted by ``offset``, counter reset."""
        return RngStream(self.seed, self.stream_id + int(offset), 0)


def new_stream(seed: int, stream_id: int = 0) -> RngStream:
    """Create a stream descriptor positioned at its first draw."""
    return RngStream(int(seed), int(stream_id), 0)


def _raw_words(stream: RngStream, start: int, count: int) -> np.ndarray:
    # Philox emits 4 output words per counter block; advance() moves whole
    # blocks, so address word w as (block w // 4, offset w % 4).
    key = np.array([stream.seed, stream.stream_id], dtype=_U64)
    block, rem = divmod(stream.counter + start, 4)
    gen = Philox(key=key)
    if block:
        gen.advance(block)
    return gen.random_raw(rem + count)[rem:]


def normal_draws(stream: RngStream, count: int, offset: int = 0) -> np.ndarray:
    """Standard normal draws at flat indices ``offset .. offset+count-1``.

    The value at each index is a pure function of
    (seed, stream_id, counter + index).
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    raw = _raw_words(stream, offset, count)
    # 53-bit uniform shifted to the open interval (0, 1); ndtri is then finite.
    u = ((raw >> _U64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class SampleBlock:
    """Stored i.i.d. standard normal draws with their generator provenance.

    ``values`` has shape (n, d) and is read-only; ``provenance`` is the
    stream descriptor positioned at the block's first draw, so
    :func:`regenerate` reproduces the block exactly.
    """

    values: np.ndarray
    provenance: RngStream

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError("values must be an (n, d) matrix with n, d >= 1")
        if not np.isfinite(self.values).all():
            raise ValueError("sample block contains non-finite entries")
        self.values.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def end_stream(self) -> RngStream:
        """Stream descriptor for the first draw after this block."""
        return self.provenance.advanced(self.values.size)


def draw_samples(
    stream: RngStream,
    n: int,
    d: int,
    *,
    max_elements: int = DEFAULT_SAMPLE_BUDGET,
    workers: int = 1,
) -> SampleBlock:
    """Draw and store an n-by-d block of standard normals.

    Entry (i, j) depends only on (seed, stream_id, counter + i*d + j); the
    block is therefore identical whether filled serially or by several
    workers, and can be regenerated from its provenance without storage.

    Raises
    ------
    SampleBudgetExceeded
        If n*d exceeds ``max_elements``. Callers that genuinely need more
        should regenerate chunks on demand via :func:`normal_draws`.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    total = n * d
    if total > max_elements:
        raise SampleBudgetExceeded(
            f"block of {n}x{d} = {total} doubles exceeds budget of {max_elements} elements"
        )
    flat = np.empty(total, dtype=np.float64)
    spans = [(lo, min(lo + _FILL_CHUNK, total)) for lo in range(0, total, _FILL_CHUNK)]

    def fill(span):
        lo, hi = span
        flat[lo:hi] = normal_draws(stream, hi - lo, offset=lo)

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, spans))
    else:
        for span in spans:
            fill(span)
    return SampleBlock(values=flat.reshape(n, d), provenance=stream)


def regenerate(block: SampleBlock) -> SampleBlock:
    """Re-draw a block from its provenance; bit-identical to the original."""
    return draw_samples(block.provenance, block.n, block.d)


@dataclass(frozen=True, eq=False)
class CorrelationChol:
    """Cholesky factor of the equicorrelation matrix C = (1-rho) I + rho 11*."""

    dim: int
    rho: float
    factor: np.ndarray  # lower triangular, factor @ factor.T == C

    def __post_init__(self):
        self.factor.setflags(write=False)

    @property
    def matrix(self) -> np.ndarray:
        c = np.full((self.dim, self.dim), self.rho)
        np.fill_diagonal(c, 1.0)
        return c


def cholesky_correlation(n_assets: int, rho: float) -> CorrelationChol:
    """Factor the equicorrelation matrix of ``n_assets`` Brownian motions.

    ``rho`` must lie in the open interval (-1/(n_assets-1), 1) for the
    matrix to be positive definite; with one asset any value is accepted
    since C is the 1x1 identity.
    """
    if n_assets < 1:
        raise ValueError("n_assets must be >= 1")
    if n_assets == 1:
        return CorrelationChol(dim=1, rho=float(rho), factor=np.ones((1, 1)))
    lo = -1.0 / (n_assets - 1)
    if not lo < rho < 1.0:
        raise InvalidCorrelation(
            f"rho={rho} outside the admissible interval ({lo}, 1) for {n_assets} assets"
        )
    c = np.full((n_assets, n_assets), float(rho))
    np.fill_diagonal(c, 1.0)
    return CorrelationChol(dim=n_assets, rho=float(rho), factor=np.linalg.cholesky(c))


def _validate_grid(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise InvalidGrid("time grid is empty")
    if times[0] <= 0.0 or np.any(np.diff(times) <= 0.0):
        raise InvalidGrid("time grid must be positive and strictly increasing")
    return times


@dataclass(frozen=True, eq=False)
class PathMap:
    """Linear map from i.i.d. normals to a correlated discrete Brownian path.

    Applied to G in R^(I*N) (time-major layout: index (j-1)*I + i holds the
    i-th asset's j-th increment), the result (W_{t_1}, ..., W_{t_N}) has
    covariance Cov(W^i_{t_j}, W^l_{t_k}) = rho^{1[i != l]} min(t_j, t_k).
    The map is applied as a blocked triangular product; the dense matrix is
    only materialized on request and for moderate dimensions.
    """

    times: np.ndarray
    chol: CorrelationChol

    def __post_init__(self):
        self.times.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.times.size

    @property
    def n_assets(self) -> int:
        return self.chol.dim

    @property
    def dim(self) -> int:
        return self.n_steps * self.n_assets

    @property
    def step_sizes(self) -> np.ndarray:
        return np.diff(self.times, prepend=0.0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map normals (..., I*N) to Brownian values of shape (..., N, I)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last dimension {self.dim}, got {x.shape[-1]}")
        steps = x.reshape(x.shape[:-1] + (self.n_steps, self.n_assets))
        increments = (steps @ self.chol.factor.T) * np.sqrt(self.step_sizes)[:, None]
        return np.cumsum(increments, axis=-2)

    def dense(self) -> np.ndarray:
        """Materialize the (I*N) x (I*N) block lower-triangular matrix."""
        if self.dim > DENSE_PATH_LIMIT:
            raise ValueError(
                f"dense path map of dimension {self.dim} exceeds limit {DENSE_PATH_LIMIT}; "
                "use apply() instead"
            )
        scale = np.tril(np.tile(np.sqrt(self.step_sizes), (self.n_steps, 1)))
        return np.kron(scale, self.chol.factor)


def build_path_map(times, chol: CorrelationChol) -> PathMap:
    """Assemble the Brownian path map for a strictly increasing time grid."""
    return PathMap(times=_validate_grid(times), chol=chol)
