"""Information-gain viewpoint controller and the baseline policies.

The expected information gain of a viewpoint is the Gaussian-weighted sum of
cell entropies inside its footprint. Because the footprint is an axis-aligned
rectangle of cells and the Gaussian is separable, the gain of a viewpoint
above every cell at one height is ``Wx @ H @ Wy.T`` where row ``j`` of ``Wx``
holds the x-weights for a candidate above column ``j`` (zero outside the
footprint). That keeps the full utility field to two small matrix products
per control step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mvp_sim.errors import ConfigError, NoEstimateError
from mvp_sim.geometry import VelocityCommand, Viewpoint
from mvp_sim.grasp_map import GridMap
from mvp_sim.scene import CameraModel, footprint_half_width

POLICY_NAMES = ("mvp", "single-view", "fixed-25", "fixed-50", "no-exploration")


@dataclass
class ControllerConfig:
    gamma: float = 0.0
    z_max: float = 0.5
    z_min: float = 0.2
    speed: float = 0.1
    dt: float = 0.1
    gaussian_sigma_fraction: float = 0.35
    horizontal_fraction_cap: float = 0.9
    proportional_gain: float = 2.0
    # gain units per metre of cost; lets gamma in [0, 0.7] span exploration to convergence
    cost_scale: float = 4.0
    spiral_r0: float = 0.12
    spiral_dtheta: float = 2.5

    def validate(self) -> None:
        if not self.z_max > self.z_min:
            raise ConfigError("controller.z_max must exceed controller.z_min")
        if self.z_min <= 0:
            raise ConfigError("controller.z_min must be > 0")
        if not self.speed > 0:
            raise ConfigError("controller.speed must be > 0")
        if not self.dt > 0:
            raise ConfigError("controller.dt must be > 0")
        if not 0 < self.horizontal_fraction_cap < 1:
            raise ConfigError("controller.horizontal_fraction_cap must be in (0, 1)")
        if self.gamma < 0:
            raise ConfigError("controller.gamma must be >= 0")
        if not self.gaussian_sigma_fraction > 0:
            raise ConfigError("controller.gaussian_sigma_fraction must be > 0")
        if not self.proportional_gain > 0:
            raise ConfigError("controller.proportional_gain must be > 0")
        if not self.cost_scale > 0:
            raise ConfigError("controller.cost_scale must be > 0")
        if self.spiral_r0 < 0:
            raise ConfigError("controller.spiral_r0 must be >= 0")

    @property
    def max_steps(self) -> int:
        """Analytic bound on control steps for one descent (vz never drops below this share)."""
        lam = self.horizontal_fraction_cap
        # the small slack keeps float round-off (0.3 / 0.001 = 300.0000...4) from adding a step
        return math.ceil((self.z_max - self.z_min) / ((1 - lam) * self.speed * self.dt) - 1e-9)


def _axis_weights(centers: np.ndarray, cell_size: float, origin: float, n: int,
                  pos: float, half_width: float, sigma: float) -> np.ndarray:
    """Per-cell Gaussian weights along one axis for a footprint centred at ``pos``."""
    lo = max(0, math.ceil((pos - half_width - origin) / cell_size - 0.5))
    hi = min(n, math.floor((pos + half_width - origin) / cell_size - 0.5) + 1)
    w = np.zeros(n)
    if hi <= lo:
        return w
    # centroid of the (clipped) observable set, not the camera position
    centroid = 0.5 * (centers[lo] + centers[hi - 1])
    d = centers[lo:hi] - centroid
    w[lo:hi] = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return w


def _weight_matrix(centers: np.ndarray, cell_size: float, origin: float, n: int,
                   half_width: float, sigma: float) -> np.ndarray:
    """Row ``i`` equals ``_axis_weights`` for a footprint centred on cell ``i``."""
    lo = np.maximum(0, np.ceil((centers - half_width - origin) / cell_size - 0.5)).astype(np.int64)
    hi = np.minimum(n, np.floor((centers + half_width - origin) / cell_size - 0.5).astype(np.int64) + 1)
    hi = np.maximum(hi, lo + 1)
    centroid = 0.5 * (centers[lo] + centers[hi - 1])
    d = centers[None, :] - centroid[:, None]
    idx = np.arange(n)
    mask = (idx[None, :] >= lo[:, None]) & (idx[None, :] < hi[:, None])
    return np.where(mask, np.exp(-(d * d) / (2.0 * sigma * sigma)), 0.0)


def gaussian_sigma(z: float, cam: CameraModel, cfg: ControllerConfig) -> float:
    return cfg.gaussian_sigma_fraction * footprint_half_width(z, cam)


def _full_weight(cell_size: float, half_width: float, sigma: float) -> float:
    """1D weight sum of an unclipped footprint centred on a cell."""
    m = math.floor(half_width / cell_size)
    d = np.arange(-m, m + 1) * cell_size
    return float(np.exp(-(d * d) / (2.0 * sigma * sigma)).sum())


def expected_info_gain(gm: GridMap, p: Viewpoint, cam: CameraModel,
                       cfg: Optional[ControllerConfig] = None,
                       entropy: Optional[np.ndarray] = None) -> float:
    cfg = cfg or ControllerConfig()
    hw = footprint_half_width(p.z, cam)
    sigma = gaussian_sigma(p.z, cam, cfg)
    wx = _axis_weights(gm.centers_x, gm.cell_size, gm.origin[0], gm.J, p.x, hw, sigma)
    wy = _axis_weights(gm.centers_y, gm.cell_size, gm.origin[1], gm.K, p.y, hw, sigma)
    if not wx.any() or not wy.any():
        return 0.0
    H = gm.entropy_map() if entropy is None else entropy
    return float((wx @ H) @ wy)


def info_gain_field(gm: GridMap, z: float, cam: CameraModel, cfg: ControllerConfig,
                    entropy: Optional[np.ndarray] = None) -> np.ndarray:
    """Expected information gain of a viewpoint at height ``z`` above every cell."""
    hw = footprint_half_width(z, cam)
    sigma = gaussian_sigma(z, cam, cfg)
    Wx = _weight_matrix(gm.centers_x, gm.cell_size, gm.origin[0], gm.J, hw, sigma)
    Wy = _weight_matrix(gm.centers_y, gm.cell_size, gm.origin[1], gm.K, hw, sigma)
    H = gm.entropy_map() if entropy is None else entropy
    return (Wx @ H) @ Wy.T


def cost_weight(z: float, cell_size: float, cam: CameraModel, cfg: ControllerConfig) -> float:
    """Factor converting metric cost into gain units at height ``z``.

    The gain grows with the footprint's total Gaussian weight, so the cost is
    weighted by the same quantity for an unclipped footprint; ``cost_scale``
    then sets the exchange rate per metre.
    """
    hw = footprint_half_width(z, cam)
    return cfg.cost_scale * _full_weight(cell_size, hw, gaussian_sigma(z, cam, cfg)) ** 2


def height_scale(z: float, cfg: ControllerConfig) -> float:
    return 1.0 - (z - cfg.z_min) / (cfg.z_max - cfg.z_min)


def cost(p: Viewpoint, best: tuple[float, float], cfg: ControllerConfig) -> float:
    """Horizontal distance to the best grasp, scaled from 0 at ``z_max`` to 1 at ``z_min``."""
    return math.hypot(p.x - best[0], p.y - best[1]) * height_scale(p.z, cfg)


def cost_field(gm: GridMap, z: float, best: tuple[float, float], cfg: ControllerConfig) -> np.ndarray:
    dx = gm.centers_x[:, None] - best[0]
    dy = gm.centers_y[None, :] - best[1]
    return np.sqrt(dx * dx + dy * dy) * height_scale(z, cfg)


def utility_field(gm: GridMap, z: float, best: tuple[float, float], cfg: ControllerConfig,
                  cam: CameraModel, entropy: Optional[np.ndarray] = None) -> np.ndarray:
    gain = info_gain_field(gm, z, cam, cfg, entropy)
    if cfg.gamma == 0.0:
        return gain
    return gain - cfg.gamma * cost_weight(z, gm.cell_size, cam, cfg) * cost_field(gm, z, best, cfg)


def _argmax_cell(field: np.ndarray) -> tuple[int, int]:
    j, k = divmod(int(np.argmax(field)), field.shape[1])
    return j, k


def steer_towards(p: Viewpoint, target: tuple[float, float], cell_size: float,
                  cfg: ControllerConfig) -> VelocityCommand:
    """Constant-speed command: capped proportional horizontal part, rest goes down."""
    dx, dy = target[0] - p.x, target[1] - p.y
    dist = math.hypot(dx, dy)
    if dist < cell_size / 2:
        return VelocityCommand(0.0, 0.0, -cfg.speed)
    v_h = min(cfg.proportional_gain * dist, cfg.horizontal_fraction_cap * cfg.speed)
    vz = -math.sqrt(cfg.speed * cfg.speed - v_h * v_h)
    return VelocityCommand(v_h * dx / dist, v_h * dy / dist, vz)


def straight_descent(cfg: ControllerConfig) -> VelocityCommand:
    return VelocityCommand(0.0, 0.0, -cfg.speed)


def mvp_target(gm: GridMap, p: Viewpoint, cfg: ControllerConfig, cam: CameraModel) -> tuple[float, float]:
    _, est = gm.best_cell()
    field = utility_field(gm, p.z, (est.cx, est.cy), cfg, cam)
    return gm.cell_center(*_argmax_cell(field))


def mvp_velocity(gm: GridMap, p: Viewpoint, cfg: ControllerConfig, cam: CameraModel) -> VelocityCommand:
    try:
        target = mvp_target(gm, p, cfg, cam)
    except NoEstimateError:
        return straight_descent(cfg)
    return steer_towards(p, target, gm.cell_size, cfg)


def no_exploration_velocity(gm: GridMap, p: Viewpoint, cfg: ControllerConfig) -> VelocityCommand:
    try:
        _, est = gm.best_cell()
    except NoEstimateError:
        return straight_descent(cfg)
    return steer_towards(p, (est.cx, est.cy), gm.cell_size, cfg)


def spiral_waypoints(center: tuple[float, float], cfg: ControllerConfig, n_views: int) -> list[Viewpoint]:
    """Archimedean spiral from ``r0`` at ``z_max`` down to the centre at ``z_min``."""
    if n_views < 2:
        raise ConfigError("a fixed spiral needs at least 2 views")
    out = []
    for i in range(n_views):
        s = i / (n_views - 1)
        theta = i * cfg.spiral_dtheta
        r = cfg.spiral_r0 * (1.0 - s)
        out.append(Viewpoint(center[0] + r * math.cos(theta), center[1] + r * math.sin(theta),
                             cfg.z_max - (cfg.z_max - cfg.z_min) * s))
    return out


def policy_single_view(gm: GridMap, p: Viewpoint, cfg: ControllerConfig) -> VelocityCommand:
    """Straight descent; the engine only lets this policy observe at step 0."""
    return straight_descent(cfg)


def policy_no_exploration(gm: GridMap, p: Viewpoint, cfg: ControllerConfig) -> VelocityCommand:
    return no_exploration_velocity(gm, p, cfg)


def policy_fixed_spiral(step_index: int, cfg: ControllerConfig, n_views: int,
                        center: tuple[float, float]) -> Viewpoint:
    """Waypoint ``step_index`` of the fixed spiral."""
    if not 0 <= step_index < n_views:
        raise IndexError(f"step {step_index} outside a {n_views}-view spiral")
    return spiral_waypoints(center, cfg, n_views)[step_index]


class Policy:
    """Velocity-producing policy driven by the episode engine."""

    name = "policy"
    gamma: Optional[float] = None

    def __init__(self, cfg: ControllerConfig, cam: CameraModel):
        self.cfg = cfg
        self.cam = cam

    def observes(self, step: int) -> bool:
        return True

    def command(self, gm: GridMap, p: Viewpoint) -> VelocityCommand:
        raise NotImplementedError


class MVPPolicy(Policy):
    name = "mvp"

    def __init__(self, cfg: ControllerConfig, cam: CameraModel):
        super().__init__(cfg, cam)
        self.gamma = cfg.gamma

    def command(self, gm, p):
        return mvp_velocity(gm, p, self.cfg, self.cam)


class NoExplorationPolicy(Policy):
    name = "no-exploration"

    def command(self, gm, p):
        return no_exploration_velocity(gm, p, self.cfg)


class SingleViewPolicy(Policy):
    name = "single-view"

    def observes(self, step):
        return step == 0

    def command(self, gm, p):
        return straight_descent(self.cfg)


class FixedSpiralPolicy(Policy):
    def __init__(self, cfg: ControllerConfig, cam: CameraModel, n_views: int):
        super().__init__(cfg, cam)
        self.n_views = n_views
        self.name = f"fixed-{n_views}"

    def waypoints(self, center: tuple[float, float]) -> list[Viewpoint]:
        return spiral_waypoints(center, self.cfg, self.n_views)


def make_policy(name: str, cfg: ControllerConfig, cam: CameraModel) -> Policy:
    if name == "mvp":
        return MVPPolicy(cfg, cam)
    if name == "single-view":
        return SingleViewPolicy(cfg, cam)
    if name == "no-exploration":
        return NoExplorationPolicy(cfg, cam)
    if name.startswith("fixed-"):
        try:
            n = int(name.split("-", 1)[1])
        except ValueError:
            n = 0
        if n >= 2:
            return FixedSpiralPolicy(cfg, cam, n)
    raise ConfigError(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}")
