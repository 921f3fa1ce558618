"""Simulation report: JSON for machines, a one-row CSV for spreadsheets."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass, field

WALL_CLOCK_FIELD = "running_time_s"
AUTH_REASONS = ("Ok", "Untrusted", "BadSignature", "Expired", "WrongTarget", "NoPeer")


def latency_summary(values: list[int]) -> dict | None:
    if not values:
        return None
    ordered = sorted(values)
    p95 = ordered[max(0, math.ceil(0.95 * len(ordered)) - 1)]
    return {"median": statistics.median(ordered), "p95": p95, "max": ordered[-1]}


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    duration_ms: int
    auth: dict
    auth_log: list
    tx: dict
    messages: dict
    energy: dict
    chain: dict
    per_node: dict
    running_time_s: float = 0.0
    schema_version: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def probability_of_authentication(self) -> float | None:
        return self.auth["probability_of_authentication"]

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        data = asdict(self)
        if not include_wall_clock:
            data.pop(WALL_CLOCK_FIELD)
        return data

    def to_json(self, include_wall_clock: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_clock), sort_keys=True, indent=2) + "\n"

    def summary_row(self) -> dict:
        auth = self.auth
        row = {
            "scenario": self.scenario,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "auth_attempts": auth["attempts"],
            "auth_accepted": auth["accepted"],
            "probability_of_authentication": auth["probability_of_authentication"],
        }
        for reason in AUTH_REASONS[1:]:
            row[f"rejected_{reason}"] = auth["rejected_by_reason"].get(reason, 0)
        for name, summary in (("auth_latency", auth["latency_ms"]), ("tx_commit_latency", self.tx["commit_latency_ms"])):
            for stat in ("median", "p95", "max"):
                row[f"{name}_{stat}_ms"] = summary[stat] if summary else None
        row.update({f"tx_{k}": self.tx[k] for k in ("submitted", "committed", "rejected")})
        row.update(self.energy)
        row["max_height"] = max(self.chain["heights"].values(), default=0)
        row[WALL_CLOCK_FIELD] = self.running_time_s
        return row

    def to_csv(self) -> str:
        row = self.summary_row()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)


def diff_reports(a: dict, b: dict) -> list[str]:
    """Return dotted paths where two report dicts differ, ignoring wall-clock time."""
    diffs: list[str] = []

    def walk(x, y, path):
        if isinstance(x, dict) and isinstance(y, dict):
            for key in sorted(set(x) | set(y)):
                if key == WALL_CLOCK_FIELD and not path:
                    continue
                walk(x.get(key), y.get(key), path + [str(key)])
        elif x != y:
            diffs.append(".".join(path) or "<root>")

    walk(a, b, [])
    return diffs
