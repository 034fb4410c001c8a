"""Synthetic cluttered scenes and the viewpoint-dependent grasp observation oracle.

Objects are vertical cylinders (disk footprint extruded to a height). A cell
seen from a viewpoint is occluded when the segment from the camera to the
cell centre on the table passes through another object's cylinder. Occluded
cells return high-variance garbage, which is what makes a single viewpoint
unreliable in clutter.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from mvp_sim.errors import ConfigError, SceneGenerationError
from mvp_sim.geometry import Viewpoint, angular_distance
from mvp_sim.grasp_map import GraspEstimate, GraspObservation, GridMap

Bounds = tuple[float, float, float, float]  # xmin, xmax, ymin, ymax

DEFAULT_WORKSPACE: Bounds = (0.0, 0.30, 0.0, 0.30)


@dataclass
class GraspSite:
    x: float
    y: float
    phi_true: float
    w_true: float
    q_true: float


@dataclass
class SceneObject:
    cx: float
    cy: float
    radius: float
    height: float
    sites: list[GraspSite] = field(default_factory=list)
    removed: bool = False


@dataclass
class SceneParams:
    workspace: Bounds = DEFAULT_WORKSPACE
    radius_range: tuple[float, float] = (0.015, 0.040)
    height_range: tuple[float, float] = (0.020, 0.080)
    sites_per_object: tuple[int, int] = (1, 4)
    # sites below the occluded-law mean would be indistinguishable from occlusion noise
    q_true_range: tuple[float, float] = (0.6, 1.0)
    w_true_range: tuple[float, float] = (0.01, 0.07)
    # sites are placed within this fraction of the footprint radius
    site_radius_fraction: float = 0.7
    # two footprints may overlap by at most this fraction of their radius sum
    max_overlap: float = 0.3
    max_retries: int = 2000

    def validate(self) -> None:
        x0, x1, y0, y1 = self.workspace
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("workspace bounds are empty")
        for name in ("radius_range", "height_range", "q_true_range", "w_true_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"scene.{name}: lower bound exceeds upper bound")
        if self.radius_range[0] <= 0 or self.height_range[0] <= 0:
            raise ConfigError("object radius and height must be > 0")
        if not (0 < self.q_true_range[0] and self.q_true_range[1] <= 1):
            raise ConfigError("scene.q_true_range must lie in (0, 1]")
        if self.w_true_range[0] < 0:
            raise ConfigError("scene.w_true_range must be >= 0")
        lo, hi = self.sites_per_object
        if lo < 1 or hi < lo:
            raise ConfigError("scene.sites_per_object must satisfy 1 <= lo <= hi")
        if not 0 < self.site_radius_fraction <= 1:
            raise ConfigError("scene.site_radius_fraction must be in (0, 1]")
        if not 0 <= self.max_overlap < 1:
            raise ConfigError("scene.max_overlap must be in [0, 1)")
        if self.max_retries < 1:
            raise ConfigError("scene.max_retries must be >= 1")


@dataclass
class CameraModel:
    fov_half_angle: float = math.radians(30.0)
    noise_sigma_q: float = 0.05
    noise_sigma_phi: float = 0.1
    noise_sigma_w: float = 0.005
    # cells whose centre is within this many cell widths of a site see that site
    site_influence_cells: float = 1.0
    # one quality bin: an unoccluded flat surface settles to zero entropy
    background_q_range: tuple[float, float] = (0.0, 0.1)
    occluded_q_range: tuple[float, float] = (0.0, 1.0)
    # width law for background and occluded cells
    random_w_range: tuple[float, float] = (0.0, 0.08)

    def validate(self) -> None:
        if not 0 < self.fov_half_angle < math.pi / 2:
            raise ConfigError("camera.fov_half_angle must be in (0, pi/2)")
        if min(self.noise_sigma_q, self.noise_sigma_phi, self.noise_sigma_w) < 0:
            raise ConfigError("camera noise sigmas must be >= 0")
        if self.site_influence_cells < 0:
            raise ConfigError("camera.site_influence_cells must be >= 0")
        for name in ("background_q_range", "occluded_q_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi <= 1:
                raise ConfigError(f"camera.{name} must satisfy 0 <= lo <= hi <= 1")
        lo, hi = self.random_w_range
        if not 0 <= lo <= hi:
            raise ConfigError("camera.random_w_range must satisfy 0 <= lo <= hi")


@dataclass
class Scene:
    objects: list[SceneObject]
    workspace: Bounds = DEFAULT_WORKSPACE
    rng_seed: int = 0

    @property
    def remaining(self) -> list[SceneObject]:
        return [o for o in self.objects if not o.removed]

    @property
    def n_remaining(self) -> int:
        return sum(not o.removed for o in self.objects)

    @property
    def center(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.workspace
        return 0.5 * (x0 + x1), 0.5 * (y0 + y1)

    def to_dict(self) -> dict:
        return {
            "workspace": list(self.workspace),
            "seed": self.rng_seed,
            "objects": [
                {"cx": o.cx, "cy": o.cy, "radius": o.radius, "height": o.height,
                 "removed": o.removed, "sites": [asdict(s) for s in o.sites]}
                for o in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        objects = [
            SceneObject(o["cx"], o["cy"], o["radius"], o["height"],
                        [GraspSite(**s) for s in o["sites"]], o.get("removed", False))
            for o in data["objects"]
        ]
        return cls(objects, tuple(data["workspace"]), data.get("seed", 0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))


def generate_scene(n_objects: int, seed: int, params: Optional[SceneParams] = None) -> Scene:
    """Place ``n_objects`` cylinders by rejection sampling; deterministic in ``seed``."""
    params = params or SceneParams()
    params.validate()
    if n_objects < 0:
        raise ConfigError("n_objects must be >= 0")
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = params.workspace
    objects: list[SceneObject] = []
    for i in range(n_objects):
        for _ in range(params.max_retries):
            r = rng.uniform(*params.radius_range)
            if x1 - x0 < 2 * r or y1 - y0 < 2 * r:
                continue
            cx = rng.uniform(x0 + r, x1 - r)
            cy = rng.uniform(y0 + r, y1 - r)
            if all(math.hypot(cx - o.cx, cy - o.cy) >= (1 - params.max_overlap) * (r + o.radius)
                   for o in objects):
                break
        else:
            raise SceneGenerationError(
                f"could not place object {i + 1} of {n_objects} after {params.max_retries} tries")
        height = rng.uniform(*params.height_range)
        n_sites = int(rng.integers(params.sites_per_object[0], params.sites_per_object[1] + 1))
        sites = []
        for _ in range(n_sites):
            rho = r * params.site_radius_fraction * math.sqrt(rng.uniform())
            theta = rng.uniform(0, 2 * math.pi)
            sites.append(GraspSite(
                x=cx + rho * math.cos(theta), y=cy + rho * math.sin(theta),
                phi_true=rng.uniform(0, math.pi),
                w_true=rng.uniform(*params.w_true_range),
                q_true=rng.uniform(*params.q_true_range),
            ))
        objects.append(SceneObject(cx, cy, r, height, sites))
    return Scene(objects, tuple(params.workspace), seed)


def footprint_half_width(z: float, cam: CameraModel) -> float:
    return z * math.tan(cam.fov_half_angle)


def observable_ranges(gm: GridMap, x: float, y: float, z: float,
                      cam: CameraModel) -> tuple[int, int, int, int]:
    """Half-open index ranges ``(j0, j1, k0, k1)`` of cells inside the camera footprint."""
    h = footprint_half_width(z, cam)
    cs = gm.cell_size
    # centre of cell j is origin + (j + 0.5) cs; keep |centre - x| <= h
    j0 = max(0, math.ceil((x - h - gm.origin[0]) / cs - 0.5))
    j1 = min(gm.J, math.floor((x + h - gm.origin[0]) / cs - 0.5) + 1)
    k0 = max(0, math.ceil((y - h - gm.origin[1]) / cs - 0.5))
    k1 = min(gm.K, math.floor((y + h - gm.origin[1]) / cs - 0.5) + 1)
    return j0, max(j0, j1), k0, max(k0, k1)


def observable_cells(gm: GridMap, p: Viewpoint, cam: CameraModel) -> set[tuple[int, int]]:
    j0, j1, k0, k1 = observable_ranges(gm, p.x, p.y, p.z, cam)
    return {(j, k) for j in range(j0, j1) for k in range(k0, k1)}


def _active_arrays(scene: Scene):
    objs = scene.remaining
    if not objs:
        return None
    return (np.array([o.cx for o in objs]), np.array([o.cy for o in objs]),
            np.array([o.radius for o in objs]), np.array([o.height for o in objs]))


def occlusion_mask(scene: Scene, p: Viewpoint, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    """Occlusion test for many table points ``(cx, cy, 0)``.

    A point is occluded when the camera-to-point segment enters a remaining
    cylinder whose footprint does not contain the point.
    """
    cx = np.atleast_1d(np.asarray(cx, dtype=float))
    cy = np.atleast_1d(np.asarray(cy, dtype=float))
    arrays = _active_arrays(scene)
    if arrays is None:
        return np.zeros(cx.shape, dtype=bool)
    ox, oy, r, h = arrays
    hit = _segment_hits(p.x, p.y, p.z, cx[:, None], cy[:, None], ox, oy, r, h)
    contains = (cx[:, None] - ox) ** 2 + (cy[:, None] - oy) ** 2 <= r * r
    return (hit & ~contains).any(axis=1)


def is_occluded(scene: Scene, p: Viewpoint, cx: float, cy: float) -> bool:
    return bool(occlusion_mask(scene, p, np.array([cx]), np.array([cy]))[0])


def _segment_hits(px, py, pz, cx, cy, ox, oy, r, h):
    """Elementwise segment/cylinder test for camera ``(px, py, pz)`` and table points ``(cx, cy, 0)``."""
    # segment xy(t) = P + t d, z(t) = pz (1 - t), t in [0, 1]; inside the cylinder's
    # height range once t >= 1 - h / pz
    dx = cx - px
    dy = cy - py
    fx = px - ox
    fy = py - oy
    a = dx * dx + dy * dy
    b = 2.0 * (fx * dx + fy * dy)
    c = fx * fx + fy * fy - r * r
    t_h = np.maximum(0.0, 1.0 - h / pz)
    disc = b * b - 4.0 * a * c
    vertical = a < 1e-18
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = np.where(vertical, -np.inf, (-b - sq) / (2.0 * a))
        t2 = np.where(vertical, np.where(c <= 0, np.inf, -np.inf), (-b + sq) / (2.0 * a))
    hit_xy = np.where(vertical, c <= 0, disc > 0)
    return hit_xy & (np.maximum(t1, t_h) < np.minimum(t2, 1.0))


def occlusion_grid(scene: Scene, p: Viewpoint, gm: GridMap,
                   ranges: tuple[int, int, int, int]) -> np.ndarray:
    """Occlusion of the cell centres in ``ranges`` as a 2D mask.

    Same predicate as :func:`occlusion_mask`, but each object is only tested
    against cells inside the bounding box of its shadow.
    """
    j0, j1, k0, k1 = ranges
    mask = np.zeros((j1 - j0, k1 - k0), dtype=bool)
    if j1 <= j0 or k1 <= k0:
        return mask
    cs = gm.cell_size
    xs = gm.origin[0] + (np.arange(j0, j1) + 0.5) * cs
    ys = gm.origin[1] + (np.arange(k0, k1) + 0.5) * cs
    for o in scene.objects:
        if o.removed:
            continue
        # the occluding part of the segment projects within the base disk and
        # the top disk's shadow on the table
        s = p.z / (p.z - o.height)
        tx = p.x + (o.cx - p.x) * s
        ty = p.y + (o.cy - p.y) * s
        rr = o.radius * s
        bx0, bx1 = min(o.cx - o.radius, tx - rr), max(o.cx + o.radius, tx + rr)
        by0, by1 = min(o.cy - o.radius, ty - rr), max(o.cy + o.radius, ty + rr)
        a0 = max(0, int(np.searchsorted(xs, bx0 - 1e-12)))
        a1 = int(np.searchsorted(xs, bx1 + 1e-12, side="right"))
        b0 = max(0, int(np.searchsorted(ys, by0 - 1e-12)))
        b1 = int(np.searchsorted(ys, by1 + 1e-12, side="right"))
        if a1 <= a0 or b1 <= b0:
            continue
        cx = xs[a0:a1, None]
        cy = ys[None, b0:b1]
        hit = _segment_hits(p.x, p.y, p.z, cx, cy, o.cx, o.cy, o.radius, o.height)
        inside = (cx - o.cx) ** 2 + (cy - o.cy) ** 2 <= o.radius * o.radius
        mask[a0:a1, b0:b1] |= hit & ~inside
    return mask


def site_table(scene: Scene, gm: GridMap, cam: CameraModel):
    """Nearest visible-site parameters for every cell, or ``None`` if no site remains.

    Returns ``(has_site, phi, w, q)`` arrays of shape ``(J, K)``. A cell sees a
    site when it contains it or its centre lies within the influence radius.
    """
    sites = [s for o in scene.objects if not o.removed for s in o.sites]
    if not sites:
        return None
    sx = np.array([s.x for s in sites])
    sy = np.array([s.y for s in sites])
    cx = gm.centers_x[:, None, None]
    cy = gm.centers_y[None, :, None]
    d2 = (cx - sx) ** 2 + (cy - sy) ** 2
    sj, sk, _ = gm.world_to_cell_array(sx, sy)
    same = (np.arange(gm.J)[:, None, None] == sj) & (np.arange(gm.K)[None, :, None] == sk)
    radius = cam.site_influence_cells * gm.cell_size
    near = same | (d2 <= radius * radius)
    d2 = np.where(near, d2, np.inf)
    idx = np.argmin(d2, axis=2)
    has = near.any(axis=2)
    phi = np.array([s.phi_true for s in sites])[idx]
    w = np.array([s.w_true for s in sites])[idx]
    q = np.array([s.q_true for s in sites])[idx]
    return has, phi, w, q


def observe_arrays(scene: Scene, p: Viewpoint, gm: GridMap, cam: CameraModel,
                   rng: np.random.Generator, sites=None):
    """One noisy grasp observation per observable cell.

    Returns ``(j, k, q, phi, w)`` arrays in row-major cell order. Random
    stream consumption depends only on the number of observable cells.
    ``sites`` may carry a precomputed :func:`site_table` for the current scene.
    """
    ranges = observable_ranges(gm, p.x, p.y, p.z, cam)
    j0, j1, k0, k1 = ranges
    jj, kk = np.meshgrid(np.arange(j0, j1), np.arange(k0, k1), indexing="ij")
    j, k = jj.ravel(), kk.ravel()
    n = j.size
    if n == 0:
        e = np.zeros(0)
        return j, k, e, e, e

    noise = rng.standard_normal((3, n))
    unif = rng.uniform(size=(3, n))

    occluded = occlusion_grid(scene, p, gm, ranges).ravel()
    bq0, bq1 = cam.background_q_range
    oq0, oq1 = cam.occluded_q_range
    w0, w1 = cam.random_w_range
    q = np.where(occluded, oq0 + (oq1 - oq0) * unif[0], bq0 + (bq1 - bq0) * unif[0])
    phi = math.pi * unif[1]
    w = w0 + (w1 - w0) * unif[2]

    if sites is None:
        sites = site_table(scene, gm, cam)
    if sites is not None:
        has, sphi, sw, sq = (a[j0:j1, k0:k1].ravel() for a in sites)
        sel = has & ~occluded
        q[sel] = np.clip(sq[sel] + cam.noise_sigma_q * noise[0, sel], 0.0, 1.0)
        phi[sel] = np.mod(sphi[sel] + cam.noise_sigma_phi * noise[1, sel], math.pi)
        w[sel] = np.maximum(0.0, sw[sel] + cam.noise_sigma_w * noise[2, sel])
    return j, k, q, phi, w


def observe(scene: Scene, p: Viewpoint, gm: GridMap, cam: CameraModel,
            rng: np.random.Generator) -> list[GraspObservation]:
    j, k, q, phi, w = observe_arrays(scene, p, gm, cam, rng)
    cs = gm.cell_size
    return [GraspObservation(gm.origin[0] + (a + 0.5) * cs, gm.origin[1] + (b + 0.5) * cs,
                             float(qq), float(pp), float(ww))
            for a, b, qq, pp, ww in zip(j, k, q, phi, w)]


@dataclass
class GraspTolerances:
    position: float = 0.010
    angle: float = 0.3
    width: float = 0.020

    def validate(self) -> None:
        if min(self.position, self.angle, self.width) < 0:
            raise ConfigError("grasp tolerances must be >= 0")


def match_site(scene: Scene, g: GraspEstimate, tol: GraspTolerances):
    """Nearest remaining site compatible with ``g``; returns ``(object, site)`` or ``None``."""
    best = None
    best_d = math.inf
    for obj in scene.objects:
        if obj.removed:
            continue
        for site in obj.sites:
            d = math.hypot(g.cx - site.x, g.cy - site.y)
            if (d <= tol.position and d < best_d
                    and angular_distance(g.phi_bar, site.phi_true) <= tol.angle
                    and abs(g.w_bar - site.w_true) <= tol.width):
                best, best_d = (obj, site), d
    return best


def execute_grasp(scene: Scene, g: GraspEstimate, tol: GraspTolerances,
                  rng: np.random.Generator) -> bool:
    """Adjudicate a grasp; on success the owning object is removed from the scene."""
    match = match_site(scene, g, tol)
    if match is None:
        return False
    obj, site = match
    if rng.uniform() < site.q_true:
        obj.removed = True
        return True
    return False
