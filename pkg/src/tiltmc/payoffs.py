"""Market models and claims composed into discounted payoff evaluators.

A payoff is a function f: R^d -> R mapping a standard normal vector to a
discounted claim value. Two model families are provided: a multi-asset
lognormal model driven by equicorrelated Brownian motions (exact terminal
law on the monitoring grid), and a one-dimensional local-volatility
diffusion discretized by the Euler recursion
s_{k} = s_{k-1} (1 + sigma((k-1)h, s_{k-1}) sqrt(h) u_k + r h).

Evaluators are pure and vectorized: x may be a single point of length d or
a row-stacked batch (n, d).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import IncompatibleClaim, NonFiniteInput
from .gaussian import PathMap, build_path_map, cholesky_correlation

__all__ = [
    "BlackScholesMulti",
    "LocalVol1D",
    "ConstantVol",
    "PowerLawVol",
    "TabulatedVol",
    "Basket",
    "Digital",
    "BarrierCall",
    "BarrierBasketCall",
    "BestOf",
    "VanillaCall",
    "VanillaPut",
    "Payoff",
    "build_payoff",
    "asset_paths",
]


# --- local volatility functions ---------------------------------------------


@dataclass(frozen=True)
class ConstantVol:
    """sigma(t, s) = sigma0."""

    sigma: float

    def __call__(self, t: float, s: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(s, dtype=np.float64), self.sigma)


@dataclass(frozen=True)
class PowerLawVol:
    """Spot-power volatility sigma0 * (s / ref)^(gamma - 1), clamped.

    The clamp to [floor, cap] keeps the function bounded, which the Euler
    scheme requires for s near 0 or very large.
    """

    sigma: float
    gamma: float
    ref_spot: float
    floor: float = 0.01
    cap: float = 2.0

    def __call__(self, t: float, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        with np.errstate(divide="ignore", over="ignore"):
            raw = self.sigma * np.power(np.maximum(s, 1e-300) / self.ref_spot, self.gamma - 1.0)
        return np.clip(raw, self.floor, self.cap)


@dataclass(frozen=True, eq=False)
class TabulatedVol:
    """Bilinear interpolation of a (t, s) -> sigma table, edge-clamped."""

    t_grid: np.ndarray
    s_grid: np.ndarray
    values: np.ndarray  # shape (len(t_grid), len(s_grid))

    def __post_init__(self):
        self.t_grid.setflags(write=False)
        self.s_grid.setflags(write=False)
        self.values.setflags(write=False)

    @classmethod
    def from_csv(cls, path) -> "TabulatedVol":
        """Load (t, s, sigma) triples; they must fill a rectangular grid."""
        triples = []
        with open(path, "r", encoding="utf-8", newline="") as handle:
            for row in csv.reader(handle):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                if len(row) != 3:
                    raise ValueError(f"{path}: expected 't,s,sigma' rows, got {row!r}")
                triples.append(tuple(float(v) for v in row))
        if not triples:
            raise ValueError(f"{path}: no volatility rows found")
        t_grid = np.unique([p[0] for p in triples])
        s_grid = np.unique([p[1] for p in triples])
        table = np.full((t_grid.size, s_grid.size), np.nan)
        for t, s, sig in triples:
            table[np.searchsorted(t_grid, t), np.searchsorted(s_grid, s)] = sig
        if np.isnan(table).any():
            raise ValueError(f"{path}: (t, s) points do not form a full rectangular grid")
        if (table <= 0).any():
            raise ValueError(f"{path}: volatilities must be positive")
        return cls(t_grid=t_grid, s_grid=s_grid, values=table)

    def __call__(self, t: float, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        ti = np.clip(np.searchsorted(self.t_grid, t, side="right") - 1, 0, self.t_grid.size - 2)
        if self.t_grid.size == 1:
            row = self.values[0]
        else:
            t0, t1 = self.t_grid[ti], self.t_grid[ti + 1]
            wt = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
            row = (1.0 - wt) * self.values[ti] + wt * self.values[ti + 1]
        if self.s_grid.size == 1:
            return np.full_like(s, row[0])
        si = np.clip(np.searchsorted(self.s_grid, s, side="right") - 1, 0, self.s_grid.size - 2)
        s0, s1 = self.s_grid[si], self.s_grid[si + 1]
        ws = np.clip((s - s0) / (s1 - s0), 0.0, 1.0)
        return (1.0 - ws) * row[si] + ws * row[si + 1]


# --- market models -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BlackScholesMulti:
    """I lognormal assets on a monitoring grid, equicorrelated drivers.

    Asset i at grid date t_j is spot_i * exp((rate - vol_i^2/2) t_j +
    vol_i W^i_{t_j}) with W built from the path map, so the terminal law is
    exact on the grid.
    """

    spot: np.ndarray
    vol: np.ndarray
    rate: float
    rho: float
    times: np.ndarray
    path_map: PathMap = field(init=False, repr=False)

    def __post_init__(self):
        if np.any(self.spot <= 0):
            raise ValueError("spots must be positive")
        if np.any(self.vol <= 0):
            raise ValueError("volatilities must be positive")
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")
        if self.spot.shape != self.vol.shape or self.spot.ndim != 1:
            raise ValueError("spot and vol must be 1-d arrays of equal length")
        # Validates rho admissibility and the grid.
        object.__setattr__(
            self,
            "path_map",
            build_path_map(self.times, cholesky_correlation(self.spot.size, self.rho)),
        )
        self.spot.setflags(write=False)
        self.vol.setflags(write=False)

    @property
    def n_assets(self) -> int:
        return self.spot.size

    @property
    def n_steps(self) -> int:
        return self.path_map.n_steps

    @property
    def dim(self) -> int:
        return self.path_map.dim

    @property
    def maturity(self) -> float:
        return float(self.path_map.times[-1])

    def paths(self, x: np.ndarray) -> np.ndarray:
        """Asset values S^i_{t_j}, shape (..., N, I)."""
        w = self.path_map.apply(x)
        drift = np.outer(self.path_map.times, self.rate - 0.5 * self.vol**2)
        return self.spot * np.exp(drift + self.vol * w)

    @classmethod
    def create(cls, n_assets, times, spot, vol, rate, rho=0.0) -> "BlackScholesMulti":
        """Build from possibly scalar spot/vol, broadcast across assets."""
        spot = np.broadcast_to(np.asarray(spot, dtype=np.float64), (n_assets,)).copy()
        vol = np.broadcast_to(np.asarray(vol, dtype=np.float64), (n_assets,)).copy()
        times = np.asarray(times, dtype=np.float64).reshape(-1).copy()
        return cls(spot=spot, vol=vol, rate=float(rate), rho=float(rho), times=times)


@dataclass(frozen=True, eq=False)
class LocalVol1D:
    """One asset following ds = s (sigma(t, s) dW + r dt), Euler-discretized.

    The normal vector has one entry per Euler step; sigma must be bounded
    with s * sigma(t, s) Lipschitz in s (documented requirement on the
    supplied function, not machine-checked).
    """

    spot: float
    rate: float
    maturity: float
    n_steps: int
    vol_fn: Callable[[float, np.ndarray], np.ndarray]

    def __post_init__(self):
        if self.spot <= 0 or self.maturity <= 0:
            raise ValueError("spot and maturity must be positive")
        if self.rate < 0:
            raise ValueError("rate must be nonnegative")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def n_assets(self) -> int:
        return 1

    @property
    def dim(self) -> int:
        return self.n_steps

    @property
    def times(self) -> np.ndarray:
        h = self.maturity / self.n_steps
        return h * np.arange(1, self.n_steps + 1)

    def paths(self, x: np.ndarray) -> np.ndarray:
        """Euler path values at the step dates, shape (..., N, 1)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_steps:
            raise ValueError(f"expected last dimension {self.n_steps}, got {x.shape[-1]}")
        h = self.maturity / self.n_steps
        sqrt_h = np.sqrt(h)
        s = np.full(x.shape[:-1], self.spot)
        out = np.empty(x.shape[:-1] + (self.n_steps, 1))
        for k in range(self.n_steps):
            sig = self.vol_fn(k * h, s)
            s = s * (1.0 + sig * sqrt_h * x[..., k] + self.rate * h)
            out[..., k, 0] = s
        return out


ModelSpec = Union[BlackScholesMulti, LocalVol1D]


# --- claims ------------------------------------------------------------------


def _as_weights(weights, n_assets) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != n_assets:
        raise IncompatibleClaim(f"claim has {w.size} weights but the model has {n_assets} assets")
    if not np.isfinite(w).all():
        raise IncompatibleClaim("claim weights must be finite")
    return w


@dataclass(frozen=True, eq=False)
class Basket:
    """(sum_i w_i S^i_T - K)_+; a negative strike prices put-like claims."""

    weights: np.ndarray
    strike: float

    def payout(self, paths: np.ndarray, model) -> np.ndarray:
        w = _as_weights(self.weights, model.n_assets)
        terminal = paths[..., -1, :]
        return np.maximum(terminal @ w - self.strike, 0.0)


@dataclass(frozen=True)
class Digital:
    """Indicator that the terminal value is beyond a level (single asset)."""

    level: float
    above: bool = True

    def payout(self, paths: np.ndarray, model) -> np.ndarray:
        if model.n_assets != 1:
            raise IncompatibleClaim("digital claims require a single-asset model")
        terminal = paths[..., -1, 0]
        hit = terminal > self.level if self.above else terminal < self.level
        return hit.astype(np.float64)


@dataclass(frozen=True)
class VanillaCall:
    strike: float

    def payout(self, paths: np.ndarray, model) -> np.ndarray:
        if model.n_assets != 1:
            raise IncompatibleClaim("vanilla claims require a single-asset model")
        return np.maximum(paths[..., -1, 0] - self.strike, 0.0)


@dataclass(frozen=True)
class VanillaPut:
    strike: float

    def payout(self, paths: np.ndarray, model) -> np.ndarray:
        if model.n_assets != 1:
            raise IncompatibleClaim("vanilla claims require a single-asset model")
        return np.maximum(self.strike - paths[..., -1, 0], 0.0)


@dataclass(frozen=True)
class BarrierCall:
    """Call knocked out when the asset crosses the barrier at any grid date."""

    strike: float
    barrier: float
    knock: str = "down-out"  # or "up-out"

    def payout(self, paths: np.ndarray, model) -> np.ndarray:
        if model.n_assets != 1:
            raise IncompatibleClaim("single-asset barrier claims require a single-asset model")
        if self.knock not in ("down-out", "up-out"):
            raise IncompatibleClaim(f"unknown knock direction {self.knock!r}")
        s = paths[..., 0]
        if self.knock == "down-out":
            alive = (s >= self.barrier).all(axis=-1)
        else:
            alive = (s <= self.barrier).all(axis=-1)
        return np.maximum(paths[..., -1, 0] - self.strike, 0.0) * alive


@dataclass(frozen=True, eq=False)
class BarrierBasketCall:
    """Basket call voided if any asset dips below its barrier at a grid date."""

    weights: np.ndarray
    strike: float
    barriers: np.ndarray

    def payout(self, paths: np.ndarray, model) -> np.ndarray:
        w = _as_weights(self.weights, model.n_assets)
        barriers = _as_weights(self.barriers, model.n_assets)
        alive = (paths >= barriers).all(axis=(-2, -1))
        basket = paths[..., -1, :] @ w
        return np.maximum(basket - self.strike, 0.0) * alive


@dataclass(frozen=True, eq=False)
class BestOf:
    """(max_i w_i S^i_T - K)_+ over several assets."""

    weights: np.ndarray
    strike: float

    def payout(self, paths: np.ndarray, model) -> np.ndarray:
        w = _as_weights(self.weights, model.n_assets)
        best = (paths[..., -1, :] * w).max(axis=-1)
        return np.maximum(best - self.strike, 0.0)


ClaimSpec = Union[Basket, Digital, VanillaCall, VanillaPut, BarrierCall, BarrierBasketCall, BestOf]


# --- composed evaluator -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Payoff:
    """Discounted claim evaluator f: R^d -> R.

    ``model`` and ``claim`` are kept for introspection and are None for
    payoffs wrapped from a raw function.
    """

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    model: ModelSpec | None = None
    claim: ClaimSpec | None = None

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        scalar = x.ndim == 1
        if x.shape[-1] != self.dim:
            raise ValueError(f"payoff has dimension {self.dim}, input has {x.shape[-1]}")
        if not np.isfinite(x).all():
            raise NonFiniteInput("payoff evaluated at a non-finite point")
        values = np.asarray(self.fn(x), dtype=np.float64)
        return float(values) if scalar else values

    @classmethod
    def from_function(cls, dim: int, fn: Callable[[np.ndarray], np.ndarray]) -> "Payoff":
        """Wrap a vectorized function of the normal vector directly."""
        return cls(dim=dim, fn=fn)


def asset_paths(model: ModelSpec, x) -> np.ndarray:
    """Asset values at the monitoring dates for normal input x, (..., N, I)."""
    return model.paths(np.asarray(x, dtype=np.float64))


def build_payoff(model: ModelSpec, claim: ClaimSpec) -> Payoff:
    """Compose a model and a claim into a present-value evaluator.

    The discount factor exp(-r T) is part of the payoff, so estimates are
    present values. Claim/model compatibility (asset counts, barrier
    vectors) is checked here, once, not per evaluation.
    """
    discount = np.exp(-model.rate * model.maturity)
    claim.payout(model.paths(np.zeros(model.dim)), model)  # validate pairing eagerly

    def fn(x: np.ndarray) -> np.ndarray:
        return discount * claim.payout(model.paths(x), model)

    return Payoff(dim=model.dim, fn=fn, model=model, claim=claim)
