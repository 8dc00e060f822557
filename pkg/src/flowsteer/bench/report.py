"""Benchmark reports: metric rows plus the full configuration that produced them."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np

from .metrics import quartiles


def _plain(obj):
    if is_dataclass(obj):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def config_hash(config):
    blob = json.dumps(_plain(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class BenchmarkReport:
    """Per-run metric rows for one experiment.  Every row carries the seed key that reproduces it."""

    experiment: str
    config: dict
    rows: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append(_plain(row))

    def select(self, **match):
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def values(self, metric, **match):
        return np.array([r[metric] for r in self.select(**match)], dtype=float)

    def summary(self, group_by, metrics):
        """Median and quartiles of each metric over repeats, grouped by ``group_by`` keys."""
        groups = {}
        for r in self.rows:
            key = tuple(r.get(k) for k in group_by)
            groups.setdefault(key, []).append(r)
        out = []
        for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
            rows = groups[key]
            entry = dict(zip(group_by, key))
            entry["n_runs"] = len(rows)
            for m in metrics:
                vals = [r[m] for r in rows if r.get(m) is not None]
                if vals:
                    q = quartiles(vals)
                    entry.update({f"{m}_median": q["median"], f"{m}_q1": q["q1"], f"{m}_q3": q["q3"],
                                  f"{m}_mean": float(np.mean(vals)), f"{m}_std": float(np.std(vals))})
            out.append(entry)
        return out

    def to_json(self, summary=None):
        extras = {k: v for k, v in self.extras.items() if not _is_timing(k)}
        return {
            "experiment": self.experiment,
            "config_hash": config_hash(self.config),
            "config": _plain(self.config),
            "summary": summary or [],
            "extras": _plain(extras),
            "rows": [{k: v for k, v in r.items() if not _is_timing(k)} for r in self.rows],
        }

    def write(self, out_dir, summary=None):
        """Write ``<experiment>.csv`` (wide rows), ``<experiment>_long.csv``, ``<experiment>.json``
        and ``<experiment>_timing.csv``.

        Wall-clock timings go only to the timing file, so the other three are
        byte-identical across reruns of the same config and seed.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = self.to_json()["rows"]
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
        with open(out / f"{self.experiment}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns)
            w.writeheader()
            w.writerows(rows)
        numeric = [c for c in columns if c not in ID_KEYS
                   and all(_is_number(r.get(c)) or r.get(c) is None for r in rows)]
        ids = [c for c in columns if c not in numeric]
        with open(out / f"{self.experiment}_long.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["experiment", "row", *ids, "metric", "value"])
            for i, r in enumerate(rows):
                for c in numeric:
                    if r.get(c) is not None:
                        w.writerow([self.experiment, i, *(r.get(k) for k in ids), c, r[c]])
        with open(out / f"{self.experiment}_timing.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["experiment", "item", "seconds"])
            for k, v in self.extras.items():
                if _is_timing(k):
                    w.writerow([self.experiment, k, v])
            for i, r in enumerate(self.rows):
                if "runtime_s" in r:
                    w.writerow([self.experiment, r.get("seed_key", i), r["runtime_s"]])
        (out / f"{self.experiment}.json").write_text(json.dumps(self.to_json(summary), indent=1) + "\n")
        return out


# numeric columns that identify a run rather than measure it
ID_KEYS = {"seed", "repeat", "dimension", "S"}


def _is_timing(key):
    return key == "runtime_s" or key.startswith("train_seconds")


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)
