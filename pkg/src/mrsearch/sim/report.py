"""Mission reports: a versioned JSON document and batch aggregation."""
from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

REPORT_VERSION = 1
SUMMARY_COLUMNS = ["policy", "seed", "SST", "coverage_efficiency", "pct_victims", "pruned_fraction"]


@dataclass
class MissionReport:
    meta: dict
    series: list  # [time s, explored m^2, covered m^2]
    detections: list
    events: list
    rounds: list
    metrics: dict
    version: int = REPORT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1, allow_nan=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MissionReport:
        data = json.loads(text)
        if data.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {data.get('version')!r}")
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> MissionReport:
        return cls.from_json(Path(path).read_text())

    def detection_times(self) -> list[float]:
        return [d["time"] for d in self.detections]

    def summary_row(self) -> dict:
        m = self.metrics
        return {"policy": self.meta["policy"], "seed": self.meta["seed"], "SST": m["SST"],
                "coverage_efficiency": m["coverage_efficiency"], "pct_victims": m["pct_victims"],
                "pruned_fraction": m["pruned_fraction"]}


def _mean_std(xs: list[float]) -> tuple[float, float]:
    if not xs:
        return math.nan, math.nan
    return statistics.fmean(xs), statistics.pstdev(xs)


def aggregate(reports: Iterable[MissionReport]) -> dict:
    """Mean and population standard deviation of the headline metrics."""
    reports = list(reports)
    out = {"runs": len(reports), "seeds": [r.meta["seed"] for r in reports]}
    for key in ("SST", "coverage_efficiency", "pct_victims", "pct_coverage", "pruned_fraction", "duration"):
        mu, sd = _mean_std([float(r.metrics[key]) for r in reports])
        out[key] = {"mean": mu, "std": sd}
    return out


def write_summary_csv(reports: Iterable[MissionReport], path) -> int:
    rows = sorted((r.summary_row() for r in reports), key=lambda r: (r["policy"], r["seed"]))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return len(rows)
