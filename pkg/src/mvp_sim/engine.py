"""Grasp attempts, bin-emptying episodes, experiments and their metrics."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from mvp_sim.config import BASELINES, GAMMA_GRID, SimConfig
from mvp_sim.controller import FixedSpiralPolicy, Policy, make_policy
from mvp_sim.errors import NoEstimateError
from mvp_sim.geometry import Viewpoint
from mvp_sim.grasp_map import GraspEstimate, GridMap
from mvp_sim.scene import Scene, execute_grasp, generate_scene, observe_arrays, site_table

# tolerance on "reached z_min" so that 30 steps of 1 cm land on 0.2 m
_Z_EPS = 1e-9


@dataclass
class AttemptRecord:
    policy: str
    gamma: Optional[float]
    trajectory: list[Viewpoint]
    n_viewpoints: int
    n_steps: int
    grasp: Optional[GraspEstimate]
    success: bool
    duration: float
    objects_present: int


@dataclass
class EpisodeResult:
    seed: int
    attempts: list[AttemptRecord]
    objects_start: int
    objects_removed: int
    terminated_by: str  # "emptied" | "attempt-cap"


@dataclass
class Metrics:
    success_rate: float
    mean_time: float
    mpph: float
    mean_viewpoints: float
    total_attempts: int
    failures: int


@dataclass
class ExperimentRow:
    policy: str
    gamma: Optional[float]
    metrics: Metrics
    episodes: list[EpisodeResult] = field(repr=False, default_factory=list)

    @property
    def attempts(self) -> list[AttemptRecord]:
        return [a for ep in self.episodes for a in ep.attempts]


def new_grid(cfg: SimConfig) -> GridMap:
    m = cfg.map
    return GridMap(m.J, m.K, m.cell_size, cfg.map_origin, n_q=m.n_q, n_phi=m.n_phi)


def episode_rng(seed: int) -> np.random.Generator:
    """Observation/adjudication stream for one episode, independent of the scene stream."""
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def run_attempt(scene: Scene, policy: Policy, cfg: SimConfig, rng: np.random.Generator,
                gm: Optional[GridMap] = None) -> AttemptRecord:
    """One reach-and-grasp from ``(workspace centre, z_max)``; mutates ``scene`` on success."""
    ctrl = policy.cfg
    if gm is None:
        gm = new_grid(cfg)
    else:
        gm.reset()
    objects_present = scene.n_remaining
    center = scene.center
    sites = site_table(scene, gm, cfg.camera)

    def look(p: Viewpoint) -> None:
        j, k, q, phi, w = observe_arrays(scene, p, gm, cfg.camera, rng, sites)
        gm.insert_cells(j, k, q, phi, w, unique=True)

    trajectory: list[Viewpoint] = []
    n_views = 0
    if isinstance(policy, FixedSpiralPolicy):
        trajectory = policy.waypoints(center)
        for wp in trajectory:
            look(wp)
        n_views = len(trajectory)
        length = sum(math.dist(a.as_list(), b.as_list()) for a, b in zip(trajectory, trajectory[1:]))
        # waypoints are visited by teleporting; time is charged for the spiral path
        n_steps = math.ceil(length / (ctrl.speed * ctrl.dt) - _Z_EPS)
    else:
        p = Viewpoint(center[0], center[1], ctrl.z_max)
        n_steps = 0
        cap = ctrl.max_steps
        while True:
            trajectory.append(p)
            if policy.observes(n_steps):
                look(p)
                n_views += 1
            v = policy.command(gm, p)
            p = Viewpoint(p.x + v.vx * ctrl.dt, p.y + v.vy * ctrl.dt, p.z + v.vz * ctrl.dt)
            n_steps += 1
            if p.z <= ctrl.z_min + _Z_EPS or n_steps >= cap:
                break

    duration = n_steps * ctrl.dt + cfg.experiment.t_overhead
    try:
        _, grasp = gm.best_cell()
    except NoEstimateError:
        grasp = None
    success = grasp is not None and execute_grasp(scene, grasp, cfg.grasp, rng)
    return AttemptRecord(policy.name, policy.gamma, trajectory, n_views, n_steps,
                         grasp, success, duration, objects_present)


def run_episode(n_objects: int, seed: int, policy: Policy, cfg: SimConfig) -> EpisodeResult:
    """Empty a freshly generated bin until no objects remain or the attempt cap is hit."""
    if n_objects < 1:
        raise ValueError("an episode needs at least one object")
    scene = generate_scene(n_objects, seed, cfg.scene)
    rng = episode_rng(seed)
    gm = new_grid(cfg)
    cap = max(1, math.ceil(cfg.experiment.attempt_cap_factor * n_objects))
    attempts = []
    while scene.n_remaining > 0 and len(attempts) < cap:
        attempts.append(run_attempt(scene, policy, cfg, rng, gm))
    removed = n_objects - scene.n_remaining
    return EpisodeResult(seed, attempts, n_objects, removed,
                         "emptied" if scene.n_remaining == 0 else "attempt-cap")


def compute_metrics(attempts: Sequence[AttemptRecord]) -> Metrics:
    if not attempts:
        raise ValueError("no attempts to compute metrics from")
    total = len(attempts)
    failures = sum(not a.success for a in attempts)
    success_rate = (total - failures) / total
    mean_time = sum(a.duration for a in attempts) / total
    mean_views = sum(a.n_viewpoints for a in attempts) / total
    return Metrics(success_rate, mean_time, mpph(success_rate, mean_time), mean_views, total, failures)


def mpph(success_rate: float, mean_time: float) -> float:
    """Mean successful picks per hour."""
    return 3600.0 / mean_time * success_rate


# experiments


@dataclass(frozen=True)
class Configuration:
    policy: str
    gamma: Optional[float]
    runs: int


def sweep_configurations(cfg: SimConfig, gammas: Iterable[float] = GAMMA_GRID,
                         baselines: Iterable[str] = BASELINES) -> list[Configuration]:
    exp = cfg.experiment
    rows = [Configuration("mvp", float(g), exp.runs) for g in gammas]
    rows += [Configuration(b, None, exp.baseline_runs) for b in baselines]
    return rows


def run_configurations(configs: Sequence[Configuration], cfg: SimConfig,
                       workers: Optional[int] = None) -> list[ExperimentRow]:
    """Run every configuration on episode seeds ``seed + i``; output order follows ``configs``."""
    exp = cfg.experiment
    tasks = [(c.policy, c.gamma, exp.seed + i) for c in configs for i in range(c.runs)]
    workers = exp.workers if workers is None else workers
    if workers <= 0:
        workers = os.cpu_count() or 1
    workers = min(workers, max(1, len(tasks)))
    if workers == 1:
        results = [_episode_task(cfg, *t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_task, [cfg] * len(tasks), *zip(*tasks)))
    rows = []
    pos = 0
    for c in configs:
        episodes = results[pos:pos + c.runs]
        pos += c.runs
        attempts = [a for ep in episodes for a in ep.attempts]
        rows.append(ExperimentRow(c.policy, c.gamma, compute_metrics(attempts), episodes))
    return rows


def run_experiment(policy: str, gamma_list: Sequence[float], n_runs: int, n_objects: int,
                   base_seed: int, cfg: SimConfig, workers: Optional[int] = None) -> list[ExperimentRow]:
    """One row per gamma for ``mvp``; a single row for a baseline policy."""
    cfg = cfg.with_overrides({"experiment.objects": n_objects, "experiment.seed": base_seed})
    if policy == "mvp":
        configs = [Configuration("mvp", float(g), n_runs) for g in gamma_list]
    else:
        configs = [Configuration(policy, None, n_runs)]
    return run_configurations(configs, cfg, workers)


def _episode_task(cfg: SimConfig, policy_name: str, gamma: Optional[float], seed: int) -> EpisodeResult:
    ctrl = cfg.controller
    if gamma is not None:
        ctrl = type(ctrl)(**{**ctrl.__dict__, "gamma": gamma})
    policy = make_policy(policy_name, ctrl, cfg.camera)
    return run_episode(cfg.experiment.objects, seed, policy, cfg)
