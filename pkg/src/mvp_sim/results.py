"""Serialization of experiment rows: metrics CSV, per-attempt JSONL and path export."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, TextIO

from mvp_sim.engine import ExperimentRow, Metrics, mpph
from mvp_sim.errors import MVPSimError

RESULT_COLUMNS = ("policy", "gamma", "total_attempts", "failures", "mean_viewpoints",
                  "success_rate", "mean_time_s", "mpph")
PATH_COLUMNS = ("policy", "gamma", "run", "attempt", "vertex", "x", "y", "z")


class LogFormatError(MVPSimError):
    """A malformed line in an attempts log."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


def _num(x: float) -> str:
    # repr round-trips exactly and does not depend on locale
    return repr(float(x))


def _gamma(g: Optional[float]) -> str:
    return "" if g is None else _num(g)


def results_csv(rows: Sequence[ExperimentRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        m = r.metrics
        w.writerow([r.policy, _gamma(r.gamma), m.total_attempts, m.failures, _num(m.mean_viewpoints),
                    _num(m.success_rate), _num(m.mean_time), _num(m.mpph)])
    return buf.getvalue()


def attempt_records(rows: Sequence[ExperimentRow]) -> Iterator[dict]:
    for r in rows:
        for run, ep in enumerate(r.episodes):
            for i, a in enumerate(ep.attempts):
                yield {
                    "run": run,
                    "attempt": i,
                    "policy": r.policy,
                    "gamma": r.gamma,
                    "seed": ep.seed,
                    "success": a.success,
                    "duration_s": a.duration,
                    "n_viewpoints": a.n_viewpoints,
                    "objects_present": a.objects_present,
                    "trajectory": [v.as_list() for v in a.trajectory],
                }


def attempts_jsonl(rows: Sequence[ExperimentRow]) -> str:
    return "".join(json.dumps(rec, separators=(",", ":")) + "\n" for rec in attempt_records(rows))


def write_outputs(out_dir: Path, rows: Sequence[ExperimentRow], config: dict) -> None:
    """Write results.csv, attempts.jsonl and effective_config.json into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(results_csv(rows))
    (out_dir / "attempts.jsonl").write_text(attempts_jsonl(rows))
    (out_dir / "effective_config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


_REQUIRED = {"run": int, "attempt": int, "policy": str, "success": bool,
             "duration_s": (int, float), "n_viewpoints": int, "trajectory": list}


def read_attempts(lines: Iterable[str]) -> Iterator[dict]:
    """Parse an attempts log, raising :class:`LogFormatError` with the 1-based line number."""
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogFormatError(n, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise LogFormatError(n, "expected a JSON object")
        for key, typ in _REQUIRED.items():
            if key not in rec:
                raise LogFormatError(n, f"missing field {key!r}")
            if not isinstance(rec[key], typ) or (typ is int and isinstance(rec[key], bool)):
                raise LogFormatError(n, f"field {key!r} has the wrong type")
        g = rec.get("gamma")
        if g is not None and (isinstance(g, bool) or not isinstance(g, (int, float))):
            raise LogFormatError(n, "field 'gamma' must be a number or null")
        for v in rec["trajectory"]:
            if (not isinstance(v, list) or len(v) != 3
                    or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in v)):
                raise LogFormatError(n, "trajectory vertices must be [x, y, z] numbers")
        yield rec


def metrics_from_records(records: Iterable[dict]) -> Metrics:
    """Recompute a metrics row from logged attempts (durations already include the overhead)."""
    recs = list(records)
    if not recs:
        raise ValueError("no attempts to compute metrics from")
    total = len(recs)
    failures = sum(not r["success"] for r in recs)
    rate = (total - failures) / total
    mean_time = sum(r["duration_s"] for r in recs) / total
    views = sum(r["n_viewpoints"] for r in recs) / total
    return Metrics(rate, mean_time, mpph(rate, mean_time), views, total, failures)


def export_paths(lines: Iterable[str], out: TextIO) -> int:
    """Write path vertices as a columnar CSV grouped by (policy, gamma); returns the vertex count."""
    groups: dict[tuple, list[dict]] = {}
    for rec in read_attempts(lines):
        groups.setdefault((rec["policy"], rec.get("gamma")), []).append(rec)
    if not groups:
        return 0
    w = csv.writer(out, lineterminator="\n")
    w.writerow(PATH_COLUMNS)
    n = 0
    for (policy, gamma), recs in groups.items():
        for rec in recs:
            for i, (x, y, z) in enumerate(rec["trajectory"]):
                w.writerow([policy, _gamma(gamma), rec["run"], rec["attempt"], i, _num(x), _num(y), _num(z)])
                n += 1
    return n


__all__ = ["RESULT_COLUMNS", "PATH_COLUMNS", "LogFormatError", "results_csv", "attempts_jsonl",
           "attempt_records", "write_outputs", "read_attempts", "metrics_from_records", "export_paths"]
