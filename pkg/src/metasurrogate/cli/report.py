"""Aggregate per-replicate JSONL record files into CSV summaries."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

from metasurrogate.errors import DataError

METRICS = ("scaled_min", "rmse", "episode_reward")
REPLICATE_SEP = "__rep"


def record_files(run_dir) -> dict:
    """``{method: [paths]}`` for every ``<method>__rep<k>.jsonl`` in ``run_dir``."""
    out = defaultdict(list)
    for path in sorted(Path(run_dir).glob(f"*{REPLICATE_SEP}*.jsonl")):
        method, _, rep = path.stem.rpartition(REPLICATE_SEP)
        if method and rep.isdigit():
            out[method].append(path)
    return dict(out)


def _metric(rec: dict) -> str:
    for m in METRICS:
        if m in rec:
            return m
    raise DataError(f"record has none of {METRICS}: {rec}")


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    n = len(values)
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))


def aggregate(paths) -> tuple[str, str, dict]:
    """Group one method's records by budget (if present) or iteration."""
    groups = defaultdict(list)
    metric = key_name = None
    for path in paths:
        for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
            metric = metric or _metric(rec)
            key_name = key_name or ("budget" if "budget" in rec else "iter")
            groups[rec[key_name]].append(float(rec[metric]))
    return metric, key_name, {k: mean_std(v) + (len(v),) for k, v in sorted(groups.items())}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)  # RFC-4180: CRLF line ends, minimal quoting
        w.writerow(header)
        w.writerows(rows)


def write_report(run_dir) -> Path:
    """Write ``summary.csv`` and ``series/<method>.csv``; returns the summary path.

    Budgeted runs (bandit) list every budget in the summary; iteration-indexed
    runs list their final iteration.
    """
    run_dir = Path(run_dir)
    files = record_files(run_dir)
    if not files:
        raise DataError(f"no <method>{REPLICATE_SEP}<k>.jsonl record files in {run_dir}")
    series_dir = run_dir / "series"
    series_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for method, paths in files.items():
        metric, key_name, stats = aggregate(paths)
        if metric is None:
            continue
        _write_csv(series_dir / f"{method}.csv", [key_name, "mean", "std", "n"],
                   [[k, m, s, n] for k, (m, s, n) in stats.items()])
        keys = list(stats) if key_name == "budget" else [max(stats)]
        summary.extend([method, metric, key_name, k, *stats[k]] for k in keys)
    if not summary:
        raise DataError(f"record files in {run_dir} are empty")
    out = run_dir / "summary.csv"
    _write_csv(out, ["method", "metric", "key", "value", "mean", "std", "n"], summary)
    return out
