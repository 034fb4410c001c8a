"""2D grid map that fuses grasp observations into per-cell histograms.

Each cell keeps a quality histogram ``q_hist`` (length ``n_q``), a joint
angle/quality histogram ``m_hist`` (``n_phi x n_q``), a running width sum and
an observation count. Storage is a set of dense numpy arrays over the whole
lattice so that map-wide queries (entropy, mean quality) stay vectorised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from mvp_sim.errors import ConfigError, NoEstimateError

DEFAULT_N_Q = 10
DEFAULT_N_PHI = 18


@dataclass(frozen=True)
class GraspObservation:
    x: float
    y: float
    q: float
    phi: float
    w: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"quality {self.q} outside [0, 1]")
        if not 0.0 <= self.phi <= math.pi:
            raise ValueError(f"angle {self.phi} outside [0, pi]")
        if self.w < 0.0:
            raise ValueError(f"width {self.w} is negative")


@dataclass
class CellStats:
    """Observation histograms of a single cell (a copy, not a view)."""

    q_hist: np.ndarray
    m_hist: np.ndarray
    w_sum: float
    n_obs: int

    @property
    def n_q(self) -> int:
        return len(self.q_hist)

    @property
    def n_phi(self) -> int:
        return self.m_hist.shape[0]

    @classmethod
    def empty(cls, n_q: int = DEFAULT_N_Q, n_phi: int = DEFAULT_N_PHI) -> "CellStats":
        return cls(np.zeros(n_q, dtype=np.int64), np.zeros((n_phi, n_q), dtype=np.int64), 0.0, 0)

    @classmethod
    def from_observations(
        cls, qs: Iterable[float], phis: Iterable[float], ws: Iterable[float],
        n_q: int = DEFAULT_N_Q, n_phi: int = DEFAULT_N_PHI,
    ) -> "CellStats":
        cell = cls.empty(n_q, n_phi)
        for q, phi, w in zip(qs, phis, ws):
            iq = quality_bin(q, n_q) - 1
            ip = angle_bin(phi, n_phi) - 1
            cell.q_hist[iq] += 1
            cell.m_hist[ip, iq] += 1
            cell.w_sum += w
            cell.n_obs += 1
        return cell


@dataclass(frozen=True)
class GraspEstimate:
    cx: float
    cy: float
    phi_bar: float
    w_bar: float
    q_bar: float
    degenerate_angle: bool = False


def quality_bin(q, n_q: int = DEFAULT_N_Q):
    """1-based quality bin: ``max(1, ceil(q * n_q))``. Accepts scalars or arrays."""
    b = np.maximum(1, np.ceil(np.asarray(q, dtype=float) * n_q)).astype(np.int64)
    b = np.minimum(b, n_q)
    return int(b) if b.ndim == 0 else b


def angle_bin(phi, n_phi: int = DEFAULT_N_PHI):
    """1-based angle bin: ``max(1, ceil(phi * n_phi / pi))``; ``pi`` maps to ``n_phi``."""
    b = np.maximum(1, np.ceil(np.asarray(phi, dtype=float) * n_phi / math.pi)).astype(np.int64)
    b = np.minimum(b, n_phi)
    return int(b) if b.ndim == 0 else b


def cell_mean_quality(cell: CellStats) -> float:
    if cell.n_obs < 1:
        raise NoEstimateError("mean quality of an empty cell is undefined")
    bins = np.arange(1, cell.n_q + 1, dtype=np.int64)
    # integer numerator/denominator keeps the ratio exactly rounded
    return int(cell.q_hist @ bins) / (cell.n_q * int(cell.q_hist.sum()))


def _resultant(m_hist: np.ndarray) -> tuple[float, float]:
    n_phi, n_q = m_hist.shape
    ang = np.arange(1, n_phi + 1) / n_phi * math.pi
    qv = np.arange(1, n_q + 1) / n_q
    weighted = m_hist @ qv
    return float(np.sin(ang) @ weighted), float(np.cos(ang) @ weighted)


def mean_angle_with_flag(cell: CellStats) -> tuple[float, bool]:
    """Quality-weighted vector mean of the binned angles, plus a degeneracy flag.

    The flag is set (and 0.0 returned) when the weighted resultant vanishes.
    """
    if cell.n_obs < 1:
        raise NoEstimateError("mean angle of an empty cell is undefined")
    s, c = _resultant(cell.m_hist)
    if math.hypot(s, c) < 1e-12 * max(1, cell.n_obs):
        return 0.0, True
    phi = math.atan2(s, c)
    if phi < 0.0:
        phi += math.pi
    return phi, False


def cell_mean_angle(cell: CellStats) -> float:
    return mean_angle_with_flag(cell)[0]


def cell_mean_width(cell: CellStats) -> float:
    if cell.n_obs < 1:
        raise NoEstimateError("mean width of an empty cell is undefined")
    return cell.w_sum / cell.n_obs


def entropy_of_counts(counts: np.ndarray, n_q: Optional[int] = None) -> np.ndarray:
    """Shannon entropy (nats) along the last axis; all-zero rows get ``ln n_q``."""
    counts = np.asarray(counts, dtype=float)
    n_q = counts.shape[-1] if n_q is None else n_q
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(total > 0, counts / total, 0.0)
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    h = np.where(total[..., 0] > 0, np.maximum(h, 0.0), math.log(n_q))
    return h


def cell_entropy(cell: CellStats) -> float:
    return float(entropy_of_counts(cell.q_hist))


class GridMap:
    """``J x K`` lattice of observation histograms.

    Cell ``(j, k)`` covers ``origin + [j, j+1) * cell_size`` along x and
    ``origin + [k, k+1) * cell_size`` along y.
    """

    def __init__(
        self, J: int, K: int, cell_size: float, origin: Sequence[float] = (0.0, 0.0),
        n_q: int = DEFAULT_N_Q, n_phi: int = DEFAULT_N_PHI,
    ):
        if int(J) != J or int(K) != K or J < 1 or K < 1:
            raise ConfigError(f"grid dimensions must be positive integers, got J={J}, K={K}")
        if not cell_size > 0:
            raise ConfigError(f"cell_size must be > 0, got {cell_size}")
        if n_q < 1 or n_phi < 1:
            raise ConfigError("bin counts must be >= 1")
        self.J, self.K = int(J), int(K)
        self.cell_size = float(cell_size)
        self.origin = (float(origin[0]), float(origin[1]))
        self.n_q, self.n_phi = int(n_q), int(n_phi)
        self.q_hist = np.zeros((self.J, self.K, self.n_q), dtype=np.int64)
        self.m_hist = np.zeros((self.J, self.K, self.n_phi, self.n_q), dtype=np.int64)
        self.w_sum = np.zeros((self.J, self.K))
        self.n_obs = np.zeros((self.J, self.K), dtype=np.int64)
        self._qbins = np.arange(1, self.n_q + 1, dtype=np.int64)

    # geometry

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, x0 + self.J * self.cell_size, y0, y0 + self.K * self.cell_size

    @property
    def centers_x(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.J) + 0.5) * self.cell_size

    @property
    def centers_y(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.K) + 0.5) * self.cell_size

    def cell_center(self, j: int, k: int) -> tuple[float, float]:
        return (self.origin[0] + (j + 0.5) * self.cell_size,
                self.origin[1] + (k + 0.5) * self.cell_size)

    def world_to_cell(self, x: float, y: float) -> Optional[tuple[int, int]]:
        """Cell index containing ``(x, y)``, or ``None`` outside the map."""
        j = math.floor((x - self.origin[0]) / self.cell_size)
        k = math.floor((y - self.origin[1]) / self.cell_size)
        if 0 <= j < self.J and 0 <= k < self.K:
            return j, k
        return None

    def world_to_cell_array(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        j = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(np.int64)
        k = np.floor((np.asarray(y) - self.origin[1]) / self.cell_size).astype(np.int64)
        inside = (j >= 0) & (j < self.J) & (k >= 0) & (k < self.K)
        return j, k, inside

    # fusion

    def insert_observation(self, obs: GraspObservation) -> None:
        self.insert_arrays([obs.x], [obs.y], [obs.q], [obs.phi], [obs.w])

    def insert_arrays(self, x, y, q, phi, w) -> None:
        """Bulk insert. Observations outside the map are dropped."""
        j, k, inside = self.world_to_cell_array(x, y)
        if not inside.any():
            return
        j, k = j[inside], k[inside]
        self.insert_cells(j, k, np.asarray(q)[inside], np.asarray(phi)[inside], np.asarray(w)[inside])

    def insert_cells(self, j: np.ndarray, k: np.ndarray, q, phi, w, unique: bool = False) -> None:
        """Bulk insert by cell index (indices assumed in bounds).

        ``unique=True`` asserts that no cell appears twice, which allows plain
        fancy-index increments instead of unbuffered accumulation.
        """
        iq = quality_bin(np.atleast_1d(q), self.n_q) - 1
        ip = angle_bin(np.atleast_1d(phi), self.n_phi) - 1
        w = np.atleast_1d(w)
        if unique:
            self.q_hist[j, k, iq] += 1
            self.m_hist[j, k, ip, iq] += 1
            self.w_sum[j, k] += w
            self.n_obs[j, k] += 1
            return
        np.add.at(self.q_hist, (j, k, iq), 1)
        np.add.at(self.m_hist, (j, k, ip, iq), 1)
        np.add.at(self.w_sum, (j, k), w)
        np.add.at(self.n_obs, (j, k), 1)

    def reset(self) -> None:
        self.q_hist.fill(0)
        self.m_hist.fill(0)
        self.w_sum.fill(0.0)
        self.n_obs.fill(0)

    def copy(self) -> "GridMap":
        other = GridMap(self.J, self.K, self.cell_size, self.origin, self.n_q, self.n_phi)
        other.q_hist[...] = self.q_hist
        other.m_hist[...] = self.m_hist
        other.w_sum[...] = self.w_sum
        other.n_obs[...] = self.n_obs
        return other

    # queries

    def cell(self, j: int, k: int) -> CellStats:
        return CellStats(self.q_hist[j, k].copy(), self.m_hist[j, k].copy(),
                         float(self.w_sum[j, k]), int(self.n_obs[j, k]))

    def entropy_map(self) -> np.ndarray:
        return entropy_of_counts(self.q_hist, self.n_q)

    def mean_quality_map(self) -> np.ndarray:
        """Mean quality per cell; empty cells rank as 0."""
        num = self.q_hist @ self._qbins
        den = self.n_q * self.n_obs
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.n_obs > 0, num / np.where(den > 0, den, 1), 0.0)

    def best_cell(self) -> tuple[tuple[int, int], GraspEstimate]:
        """Cell with the highest mean quality (row-major first on ties)."""
        if not (self.n_obs > 0).any():
            raise NoEstimateError("grid map holds no observations")
        qbar = np.where(self.n_obs > 0, self.mean_quality_map(), -1.0)
        flat = int(np.argmax(qbar))
        j, k = divmod(flat, self.K)
        return (j, k), self.estimate(j, k)

    def estimate(self, j: int, k: int) -> GraspEstimate:
        cell = self.cell(j, k)
        cx, cy = self.cell_center(j, k)
        phi, degenerate = mean_angle_with_flag(cell)
        return GraspEstimate(cx, cy, phi, cell_mean_width(cell), cell_mean_quality(cell), degenerate)

    def is_empty(self) -> bool:
        return not (self.n_obs > 0).any()

    # serialization

    def to_dict(self) -> dict:
        cells = []
        for j, k in zip(*np.nonzero(self.n_obs)):
            cells.append({
                "j": int(j), "k": int(k),
                "q_hist": self.q_hist[j, k].tolist(),
                "m_hist": self.m_hist[j, k].reshape(-1).tolist(),
                "w_sum": float(self.w_sum[j, k]),
                "n_obs": int(self.n_obs[j, k]),
            })
        return {"J": self.J, "K": self.K, "cell_size": self.cell_size,
                "origin": list(self.origin), "n_q": self.n_q, "n_phi": self.n_phi, "cells": cells}

    @classmethod
    def from_dict(cls, data: dict) -> "GridMap":
        gm = cls(data["J"], data["K"], data["cell_size"], data["origin"],
                 data.get("n_q", DEFAULT_N_Q), data.get("n_phi", DEFAULT_N_PHI))
        for c in data["cells"]:
            j, k = c["j"], c["k"]
            gm.q_hist[j, k] = c["q_hist"]
            gm.m_hist[j, k] = np.asarray(c["m_hist"]).reshape(gm.n_phi, gm.n_q)
            gm.w_sum[j, k] = c["w_sum"]
            gm.n_obs[j, k] = c["n_obs"]
        return gm


def new_map(J: int, K: int, cell_size: float, origin: Sequence[float] = (0.0, 0.0), **kw) -> GridMap:
    return GridMap(J, K, cell_size, origin, **kw)
