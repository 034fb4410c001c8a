import io
import math

import numpy as np
import pytest

from mvp_sim.config import SimConfig
from mvp_sim.controller import make_policy
from mvp_sim.engine import (
    AttemptRecord, Configuration, compute_metrics, episode_rng, mpph, run_attempt, run_configurations,
    run_episode, run_experiment, sweep_configurations,
)
from mvp_sim.geometry import Viewpoint
from mvp_sim.results import (
    LogFormatError, attempts_jsonl, export_paths, metrics_from_records, read_attempts, results_csv,
)
from mvp_sim.scene import generate_scene


def cfg_with(**overrides):
    return SimConfig().with_overrides(overrides).validate()


def policy(name, cfg, gamma=None):
    ctrl = cfg.controller
    if gamma is not None:
        ctrl = type(ctrl)(**{**ctrl.__dict__, "gamma": gamma})
    return make_policy(name, ctrl, cfg.camera)


def attempt(name, n_objects=6, seed=3, gamma=None, cfg=None):
    cfg = cfg or SimConfig()
    scene = generate_scene(n_objects, seed, cfg.scene)
    return run_attempt(scene, policy(name, cfg, gamma), cfg, episode_rng(seed))


# single attempts

def test_straight_descent_takes_thirty_steps():
    rec = attempt("single-view")
    assert rec.n_steps == 30 and rec.n_viewpoints == 1
    assert rec.duration == pytest.approx(30 * 0.1 + 5.6)


def test_fixed_spiral_views():
    for n in (25, 50):
        rec = attempt(f"fixed-{n}")
        assert rec.n_viewpoints == n and len(rec.trajectory) == n


@pytest.mark.parametrize("name,gamma", [("mvp", 0.0), ("mvp", 0.3), ("mvp", 0.7), ("no-exploration", None)])
def test_trajectory_feasibility(name, gamma):
    cfg = SimConfig()
    c = cfg.controller
    rec = attempt(name, n_objects=10, seed=11, gamma=gamma, cfg=cfg)
    traj = rec.trajectory
    assert traj[0] == Viewpoint(0.15, 0.15, c.z_max)
    assert rec.n_viewpoints == rec.n_steps == len(traj)
    assert rec.n_steps <= c.max_steps
    for a, b in zip(traj, traj[1:]):
        assert c.z_min <= b.z < a.z <= c.z_max
        assert math.dist(a.as_list(), b.as_list()) == pytest.approx(c.speed * c.dt, abs=1e-9)
    assert rec.duration >= (c.z_max - c.z_min) / c.speed + cfg.experiment.t_overhead - 1e-9


def test_duration_floor_for_all_policies():
    cfg = SimConfig()
    floor = (cfg.controller.z_max - cfg.controller.z_min) / cfg.controller.speed + cfg.experiment.t_overhead
    for name in ("single-view", "fixed-25", "fixed-50", "no-exploration", "mvp"):
        assert attempt(name).duration >= floor - 1e-9


def test_success_removes_an_object():
    cfg = SimConfig()
    scene = generate_scene(1, 0, cfg.scene)
    rng = episode_rng(0)
    for _ in range(10):
        rec = run_attempt(scene, policy("mvp", cfg, 0.3), cfg, rng)
        if rec.success:
            assert scene.n_remaining == 0
            return
        assert scene.n_remaining == 1
    pytest.fail("ten attempts on a single object never succeeded")


# episodes

def test_episode_determinism():
    cfg = SimConfig()
    a = run_episode(4, 7, policy("mvp", cfg, 0.2), cfg)
    b = run_episode(4, 7, policy("mvp", cfg, 0.2), cfg)
    assert a == b


def test_episode_accounting():
    cfg = SimConfig()
    ep = run_episode(5, 2, policy("no-exploration", cfg), cfg)
    assert ep.objects_removed == sum(a.success for a in ep.attempts) <= ep.objects_start
    if ep.terminated_by == "emptied":
        assert ep.objects_removed == 5
    else:
        assert len(ep.attempts) == 10
    assert [a.objects_present for a in ep.attempts] == sorted((a.objects_present for a in ep.attempts), reverse=True)


def test_all_failures_stop_at_attempt_cap():
    cfg = cfg_with(**{"grasp.position": 0.0, "grasp.width": 0.0})
    ep = run_episode(3, 1, policy("single-view", cfg), cfg)
    assert ep.terminated_by == "attempt-cap"
    assert len(ep.attempts) == 6 and ep.objects_removed == 0


def test_single_object_success_first_try():
    cfg = SimConfig()
    for seed in range(20):
        ep = run_episode(1, seed, policy("mvp", cfg, 0.5), cfg)
        if ep.attempts[0].success:
            assert len(ep.attempts) == 1 and ep.terminated_by == "emptied"
            return
    pytest.fail("no single-object episode succeeded on the first attempt")


def test_zero_objects_rejected():
    cfg = SimConfig()
    with pytest.raises(ValueError):
        run_episode(0, 0, policy("mvp", cfg), cfg)


# metrics

def rec(success, duration, views=1):
    return AttemptRecord("mvp", 0.0, [], views, 0, None, success, duration, 1)


def test_compute_metrics_examples():
    m = compute_metrics([rec(True, 10.0)])
    assert (m.success_rate, m.mpph, m.total_attempts, m.failures) == (1.0, 360.0, 1, 0)
    m = compute_metrics([rec(True, 8.0, 4), rec(False, 12.0, 2)])
    assert m.success_rate == 0.5 and m.mean_time == 10.0 and m.mean_viewpoints == 3.0
    assert m.mpph == pytest.approx(180.0)
    with pytest.raises(ValueError):
        compute_metrics([])


@pytest.mark.parametrize("rate,time,published", [(0.80, 10.5, 273), (0.79, 9.2, 308)])
def test_mpph_against_published(rate, time, published):
    assert abs(mpph(rate, time) - published) <= 2


# experiments

def small_cfg(**kw):
    base = {"experiment.objects": 2, "experiment.runs": 2, "experiment.baseline_runs": 1, "experiment.seed": 5}
    base.update(kw)
    return cfg_with(**base)


def test_sweep_has_thirteen_rows():
    cfg = SimConfig()
    configs = sweep_configurations(cfg)
    assert len(configs) == 13
    assert [c.gamma for c in configs[:9]] == [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
    assert [c.policy for c in configs[9:]] == ["single-view", "no-exploration", "fixed-25", "fixed-50"]
    assert all(c.runs == 7 for c in configs[:9]) and all(c.runs == 5 for c in configs[9:])


def test_run_experiment_rows_independent_of_order():
    cfg = SimConfig()
    a = run_experiment("mvp", [0.1, 0.6], 1, 2, 9, cfg, workers=1)
    b = run_experiment("mvp", [0.6, 0.1], 1, 2, 9, cfg, workers=1)
    assert a[0].metrics == b[1].metrics and a[1].metrics == b[0].metrics
    assert [e.seed for e in a[0].episodes] == [9]


def test_baseline_experiment_single_row():
    rows = run_experiment("single-view", [0.0, 0.5], 2, 1, 0, SimConfig(), workers=1)
    assert len(rows) == 1 and rows[0].gamma is None
    assert rows[0].metrics.mean_viewpoints == 1.0


def test_parallel_matches_serial():
    cfg = small_cfg()
    configs = [Configuration("mvp", 0.2, 2), Configuration("fixed-25", None, 1)]
    serial = run_configurations(configs, cfg, workers=1)
    parallel = run_configurations(configs, cfg, workers=2)
    assert results_csv(serial) == results_csv(parallel)
    assert attempts_jsonl(serial) == attempts_jsonl(parallel)


# serialized outputs

def test_metrics_recomputed_from_log_match():
    cfg = small_cfg()
    rows = run_configurations([Configuration("mvp", 0.0, 2), Configuration("no-exploration", None, 1)], cfg, 1)
    records = list(read_attempts(attempts_jsonl(rows).splitlines()))
    for row in rows:
        mine = [r for r in records if r["policy"] == row.policy and r["gamma"] == row.gamma]
        assert metrics_from_records(mine) == row.metrics


def test_results_csv_layout():
    rows = run_configurations([Configuration("single-view", None, 1)], small_cfg(), 1)
    lines = results_csv(rows).splitlines()
    assert lines[0] == "policy,gamma,total_attempts,failures,mean_viewpoints,success_rate,mean_time_s,mpph"
    assert lines[1].startswith("single-view,,")


def test_export_paths_groups_vertices():
    rows = run_configurations([Configuration("fixed-50", None, 1), Configuration("mvp", 0.7, 1)], small_cfg(), 1)
    out = io.StringIO()
    n = export_paths(attempts_jsonl(rows).splitlines(), out)
    lines = out.getvalue().splitlines()
    assert lines[0] == "policy,gamma,run,attempt,vertex,x,y,z"
    assert len(lines) == n + 1
    fixed = [l for l in lines[1:] if l.startswith("fixed-50,")]
    attempts = {tuple(l.split(",")[2:4]) for l in fixed}
    assert len(fixed) == 50 * len(attempts)


def test_export_paths_empty_and_malformed():
    out = io.StringIO()
    assert export_paths([], out) == 0 and out.getvalue() == ""
    good = '{"run":0,"attempt":0,"policy":"mvp","gamma":0.1,"success":true,"duration_s":9.0,' \
           '"n_viewpoints":2,"trajectory":[[0.1,0.1,0.5],[0.1,0.1,0.49]]}'
    with pytest.raises(LogFormatError) as err:
        export_paths([good, "", "{not json"], io.StringIO())
    assert err.value.line_no == 3
    with pytest.raises(LogFormatError) as err:
        export_paths([good, good.replace('"trajectory"', '"path"')], io.StringIO())
    assert err.value.line_no == 2


def test_bounding_box_shrinks_with_gamma():
    """Paths at high exploration cost stay closer to the start than at low cost."""
    cfg = small_cfg(**{"experiment.objects": 20, "experiment.runs": 2})
    rows = run_configurations([Configuration("mvp", 0.1, 2), Configuration("mvp", 0.7, 2)], cfg, 1)

    def mean_extent(row):
        ext = []
        for a in row.attempts:
            xy = np.array([[v.x, v.y] for v in a.trajectory])
            ext.append(np.ptp(xy, axis=0).sum())
        return float(np.mean(ext))

    assert mean_extent(rows[1]) < mean_extent(rows[0])
