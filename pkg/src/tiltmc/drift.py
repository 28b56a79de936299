"""Drift subspaces: the reduction matrix A mapping reduced parameters to drifts.

A full importance-sampling search runs over all of R^d; restricting the
drift to {A v : v in R^d'} keeps the optimization d'-dimensional. The
structured maps here (identity, one parameter per Brownian coordinate per
path, one parameter per asset) have O(d) apply kernels; arbitrary matrices
are supported through the dense fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidGrid, RankDeficientDriftMap

__all__ = [
    "DriftMap",
    "IdentityDrift",
    "PathSingleDrift",
    "PathMultiDrift",
    "DenseDrift",
    "GramMatrix",
    "identity_map",
    "path_drift_single",
    "path_drift_multi",
    "dense_map",
    "load_dense_map",
]


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """A*A with its Cholesky factor and smallest-eigenvalue lower bound."""

    matrix: np.ndarray
    factor: np.ndarray  # lower-triangular Cholesky factor of A*A
    min_eigenvalue: float

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.factor.setflags(write=False)


def _make_gram(matrix: np.ndarray) -> GramMatrix:
    matrix = 0.5 * (matrix + matrix.T)
    try:
        factor = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientDriftMap(
            "A*A is not positive definite; the drift map lacks full column rank"
        ) from exc
    min_eig = float(np.linalg.eigvalsh(matrix)[0])
    return GramMatrix(matrix=matrix, factor=factor, min_eigenvalue=min_eig)


class DriftMap:
    """Interface shared by all drift representations.

    Subclasses provide ``d`` (ambient dimension), ``d_reduced`` (subspace
    dimension), ``apply`` (theta = A v), ``apply_adjoint`` (A* x, also for
    row-stacked batches) and ``gram`` (A*A as a :class:`GramMatrix`).
    """

    d: int
    d_reduced: int

    def apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_adjoint(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gram(self) -> GramMatrix:
        raise NotImplementedError

    def _check_reduced(self, v) -> np.ndarray:
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        if v.shape != (self.d_reduced,):
            raise DimensionMismatch(
                f"expected reduced vector of length {self.d_reduced}, got shape {v.shape}"
            )
        return v

    def _check_ambient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise DimensionMismatch(
                f"expected trailing dimension {self.d}, got shape {x.shape}"
            )
        return x


@dataclass(frozen=True, eq=False)
class IdentityDrift(DriftMap):
    """A = I_d: the unreduced, full-dimensional search space."""

    d: int

    @property
    def d_reduced(self) -> int:
        return self.d

    def apply(self, v):
        return self._check_reduced(v).copy()

    def apply_adjoint(self, x):
        # No copy: inputs are immutable sample blocks and this is the hot
        # path of the full-dimensional optimizer.
        return self._check_ambient(x)

    def gram(self) -> GramMatrix:
        eye = np.eye(self.d)
        return GramMatrix(matrix=eye, factor=np.eye(self.d), min_eigenvalue=1.0)


@dataclass(frozen=True, eq=False)
class PathSingleDrift(DriftMap):
    """Single parameter driving a linear Brownian drift on one asset.

    A is the column (sqrt(t_1), sqrt(t_2 - t_1), ..., sqrt(t_d - t_{d-1}))*,
    so A v adds the drift v*t to the underlying Brownian path.
    """

    times: np.ndarray

    def __post_init__(self):
        self.times.setflags(write=False)

    @property
    def d(self) -> int:
        return self.times.size

    @property
    def d_reduced(self) -> int:
        return 1

    @property
    def column(self) -> np.ndarray:
        return np.sqrt(np.diff(self.times, prepend=0.0))

    def apply(self, v):
        v = self._check_reduced(v)
        return self.column * v[0]

    def apply_adjoint(self, x):
        x = self._check_ambient(x)
        return x @ self.column[:, None]

    def gram(self) -> GramMatrix:
        total = float(self.times[-1])  # telescoping sum of increments
        return GramMatrix(
            matrix=np.array([[total]]),
            factor=np.array([[np.sqrt(total)]]),
            min_eigenvalue=total,
        )


@dataclass(frozen=True, eq=False)
class PathMultiDrift(DriftMap):
    """One parameter per asset over an N-step grid of I correlated assets.

    With the time-major sample layout, A[(j-1)*I + i, i] = sqrt(t_j - t_{j-1})
    and every other entry is zero: parameter i adds a linear drift to asset
    i's Brownian coordinate.
    """

    times: np.ndarray
    n_assets: int

    def __post_init__(self):
        self.times.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return self.times.size

    @property
    def d(self) -> int:
        return self.n_steps * self.n_assets

    @property
    def d_reduced(self) -> int:
        return self.n_assets

    @property
    def sqrt_steps(self) -> np.ndarray:
        return np.sqrt(np.diff(self.times, prepend=0.0))

    def apply(self, v):
        v = self._check_reduced(v)
        return np.outer(self.sqrt_steps, v).reshape(-1)

    def apply_adjoint(self, x):
        x = self._check_ambient(x)
        steps = x.reshape(x.shape[:-1] + (self.n_steps, self.n_assets))
        return np.einsum("...ji,j->...i", steps, self.sqrt_steps)

    def gram(self) -> GramMatrix:
        total = float(self.times[-1])
        eye = np.eye(self.n_assets)
        return GramMatrix(
            matrix=total * eye,
            factor=np.sqrt(total) * eye,
            min_eigenvalue=total,
        )


@dataclass(frozen=True, eq=False)
class DenseDrift(DriftMap):
    """Arbitrary full-column-rank matrix supplied by the user."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def d_reduced(self) -> int:
        return self.matrix.shape[1]

    def apply(self, v):
        return self.matrix @ self._check_reduced(v)

    def apply_adjoint(self, x):
        return self._check_ambient(x) @ self.matrix

    def gram(self) -> GramMatrix:
        return _make_gram(self.matrix.T @ self.matrix)


def identity_map(d: int) -> IdentityDrift:
    if d < 1:
        raise ValueError("d must be >= 1")
    return IdentityDrift(d=d)


def _grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise InvalidGrid("time grid is empty")
    if times[0] <= 0.0 or np.any(np.diff(times) <= 0.0):
        raise InvalidGrid("time grid must be positive and strictly increasing")
    return times


def path_drift_single(times) -> PathSingleDrift:
    """Drift column with entries sqrt(t_j - t_{j-1}) over the given grid."""
    return PathSingleDrift(times=_grid(times))


def path_drift_multi(times, n_assets: int) -> PathMultiDrift:
    """Per-asset drift columns over an I-asset, N-step grid (d = I*N, d' = I)."""
    if n_assets < 1:
        raise ValueError("n_assets must be >= 1")
    return PathMultiDrift(times=_grid(times), n_assets=n_assets)


def dense_map(matrix) -> DenseDrift:
    """Wrap an explicit matrix; rank is verified eagerly via Cholesky of A*A."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < matrix.shape[1] or matrix.shape[1] < 1:
        raise RankDeficientDriftMap(
            f"drift matrix must be d x d' with d >= d' >= 1, got shape {matrix.shape}"
        )
    out = DenseDrift(matrix=matrix)
    out.gram()  # raises RankDeficientDriftMap if A*A is singular
    return out


def load_dense_map(path) -> DenseDrift:
    """Read a dense drift matrix from a whitespace-separated text file.

    The first line holds the two dimensions ``d d'``; the remaining tokens
    are the d*d' entries in row-major order.
    """
    with open(path, "r", encoding="utf-8") as handle:
        tokens = handle.read().split()
    if len(tokens) < 2:
        raise ValueError(f"{path}: expected a 'd d-reduced' header")
    try:
        d, d_red = int(tokens[0]), int(tokens[1])
        entries = np.array([float(t) for t in tokens[2:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric token in drift matrix file") from exc
    if entries.size != d * d_red:
        raise ValueError(
            f"{path}: header promises {d}x{d_red} = {d * d_red} entries, found {entries.size}"
        )
    return dense_map(entries.reshape(d, d_red))
