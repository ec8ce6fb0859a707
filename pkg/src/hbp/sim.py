"""Replaying a plan against a cost profile, and comparing plans."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import Plan
from .costmodel import Profiler
from .errors import InfeasibleError, ValidationError
from .metrics import MetricsReport, report
from .schedule import assign_runtime


@dataclass(frozen=True)
class IterationCost:
    group_index: int
    seconds: float
    compute: tuple[float, ...]
    comm: tuple[float, ...]
    idle: tuple[float, ...]


@dataclass
class SimReport:
    """Simulated wall-clock cost of a plan.  Covers compute and SP communication only."""

    total_seconds: float
    device_count: int
    per_iteration: list[IterationCost]
    metrics: MetricsReport
    switch_count: int
    corpus_key: tuple[tuple[int, int], ...] = field(repr=False, default=())

    @property
    def gpu_days(self) -> float:
        return self.total_seconds * self.device_count / 86400.0

    @property
    def idle_fraction(self) -> float:
        busy = sum(sum(c.compute) + sum(c.comm) for c in self.per_iteration)
        idle = sum(sum(c.idle) for c in self.per_iteration)
        return idle / (busy + idle) if busy + idle > 0 else 0.0

    def to_dict(self, traces: bool = False) -> dict:
        d = {
            "total_seconds": self.total_seconds,
            "gpu_days": self.gpu_days,
            "device_count": self.device_count,
            "iterations": len(self.per_iteration),
            "idle_fraction": self.idle_fraction,
            "switch_count": self.switch_count,
            "metrics": self.metrics.to_dict(traces),
        }
        if traces:
            d["per_iteration"] = [
                {
                    "group": c.group_index,
                    "seconds": c.seconds,
                    "compute": list(c.compute),
                    "comm": list(c.comm),
                    "idle": list(c.idle),
                }
                for c in self.per_iteration
            ]
        return d

    def to_json(self, traces: bool = False) -> str:
        return json.dumps(self.to_dict(traces), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        m = self.metrics
        rows = [
            ("iterations", f"{len(self.per_iteration)}"),
            ("total_seconds", f"{self.total_seconds:.3f}"),
            ("gpu_days", f"{self.gpu_days:.6f}"),
            ("idle_fraction", f"{self.idle_fraction:.4f}"),
            ("switches", f"{self.switch_count}"),
            ("dbr", f"{m.dbr:.4f}"),
            ("pr", f"{m.pr:.4f}"),
            ("abr", f"{m.abr:.4f}"),
            ("cr", f"{m.cr:.4f}"),
            ("ave_t", f"{m.ave_t:.1f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def simulate(plan: Plan, profile: Profiler, step_overhead: float = 0.0) -> SimReport:
    """Each step lasts as long as its slowest replica, plus ``step_overhead``."""
    if step_overhead < 0:
        raise ValidationError("step_overhead must be non-negative")
    costs: list[IterationCost] = []
    total = 0.0
    for k, it in enumerate(plan.iterations):
        cfg = plan.config_of(it)
        length = plan.groups[it.group_index].length
        try:
            parts = [profile.device_cost(b.packs, cfg, length) for b in it.device_batches]
        except InfeasibleError as exc:
            raise InfeasibleError(f"iteration {k} (group {length}, sp={cfg.sp}, ckpt={cfg.ckpt}): {exc}") from None
        busy = [c + m for c, m in parts]
        slowest = max(busy) if busy else 0.0
        costs.append(
            IterationCost(
                it.group_index,
                slowest + step_overhead,
                tuple(c for c, _ in parts),
                tuple(m for _, m in parts),
                tuple(slowest - b for b in busy),
            )
        )
        total += slowest + step_overhead
    return SimReport(total, plan.device_count, costs, report(plan), assign_runtime(plan).switch_count, plan.corpus_key())


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    total_seconds: float
    gpu_days: float
    speedup: float
    abr: float
    cr: float


def compare(reports: Mapping[str, SimReport], baseline: str | None = None) -> list[ComparisonRow]:
    """Speedup of every report over ``baseline`` (the first one by default), fastest last."""
    if len(reports) < 2:
        raise ValidationError("compare needs at least two reports")
    names = list(reports)
    base = names[0] if baseline is None else baseline
    if base not in reports:
        raise ValidationError(f"unknown baseline {base!r}")
    key = reports[base].corpus_key
    for n in names:
        if reports[n].corpus_key != key:
            raise ValidationError(f"plan {n!r} covers a different corpus than {base!r}")
    ref = reports[base].total_seconds
    rows = [
        ComparisonRow(
            n,
            r.total_seconds,
            r.gpu_days,
            ref / r.total_seconds if r.total_seconds > 0 else float("inf"),
            r.metrics.abr,
            r.metrics.cr,
        )
        for n, r in reports.items()
    ]
    return sorted(rows, key=lambda r: (r.speedup, names.index(r.name)))


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "total_seconds", "gpu_days", "speedup", "abr", "cr"])
    for r in rows:
        w.writerow([r.name, f"{r.total_seconds:.6f}", f"{r.gpu_days:.6f}", f"{r.speedup:.4f}", f"{r.abr:.6f}", f"{r.cr:.6f}"])
    return buf.getvalue()
