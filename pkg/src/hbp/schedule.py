"""Curriculum ordering, per-step runtime configs, and loss normalisation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .core import Iteration, Plan, RuntimeConfig
from .errors import ValidationError

Pattern = Literal["shuffle", "round_robin"]
LossMode = Literal["sum", "sample_mean", "token_mean", "ave_token"]
LOSS_MODES: tuple[str, ...] = ("sum", "sample_mean", "token_mean", "ave_token")

WARMUP_PRESETS = {"none": 0, "short": 100, "default": 500}


@dataclass(frozen=True)
class CurriculumSpec:
    """Short-only warmup steps, then the remaining steps mixed.

    ``short_group_cutoff`` is the first group index that counts as long; by
    default the first group that needs sequence parallelism.
    """

    warmup_iterations: int = 500
    short_group_cutoff: int | None = None
    pattern: Pattern = "shuffle"
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.warmup_iterations < 0:
            raise ValidationError("warmup_iterations must be >= 0")
        if self.pattern not in ("shuffle", "round_robin"):
            raise ValidationError(f"unknown curriculum pattern {self.pattern!r}")


def short_cutoff(plan: Plan, spec: CurriculumSpec) -> int:
    if spec.short_group_cutoff is not None:
        if not 0 <= spec.short_group_cutoff <= len(plan.groups):
            raise ValidationError(f"short_group_cutoff {spec.short_group_cutoff} out of range")
        return spec.short_group_cutoff
    for i, g in enumerate(plan.groups):
        if g.config.sp > 1:
            return i
    return len(plan.groups)


def _round_robin(iterations: list[Iteration]) -> list[Iteration]:
    queues: dict[int, list[Iteration]] = {}
    for it in iterations:
        queues.setdefault(it.group_index, []).append(it)
    order = sorted(queues)
    out: list[Iteration] = []
    k = 0
    while len(out) < len(iterations):
        q = queues[order[k % len(order)]]
        if q:
            out.append(q.pop(0))
        k += 1
    return out


def curriculum_order(plan: Plan, spec: CurriculumSpec) -> Plan:
    """Reorder steps: a random selection of short-group steps first, then the rest."""
    cut = short_cutoff(plan, spec)
    rng = np.random.default_rng(plan.seed if spec.seed is None else spec.seed)
    short = [k for k, it in enumerate(plan.iterations) if it.group_index < cut]
    if spec.warmup_iterations > len(short):
        raise ValidationError(
            f"warmup needs {spec.warmup_iterations} short-group iterations but the plan has {len(short)}"
        )
    picked = [short[k] for k in rng.permutation(len(short))[: spec.warmup_iterations]]
    chosen = set(picked)
    rest = [it for k, it in enumerate(plan.iterations) if k not in chosen]
    if spec.pattern == "shuffle":
        rest = [rest[k] for k in rng.permutation(len(rest))]
    else:
        rest = _round_robin(rest)
    ordered = [plan.iterations[k] for k in picked] + rest
    return Plan(plan.groups, tuple(ordered), plan.device_count, plan.seed, spec.warmup_iterations)


@dataclass(frozen=True)
class ScheduleEntry:
    index: int
    group_index: int
    length: int
    config: RuntimeConfig
    phase: Literal["warmup", "hybrid"]


@dataclass(frozen=True)
class RuntimeSchedule:
    entries: tuple[ScheduleEntry, ...]
    switch_count: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "group", "length", "sp", "ckpt", "phase"])
        for e in self.entries:
            w.writerow([e.index, e.group_index, e.length, e.config.sp, e.config.ckpt, e.phase])
        return buf.getvalue()


def assign_runtime(plan: Plan) -> RuntimeSchedule:
    """Map every step to its group's ``(sp, ckpt)`` and count config switches."""
    entries = []
    switches = 0
    prev: RuntimeConfig | None = None
    for k, it in enumerate(plan.iterations):
        g = plan.groups[it.group_index]
        if prev is not None and g.config != prev:
            switches += 1
        prev = g.config
        phase = "warmup" if k < plan.warmup_iterations else "hybrid"
        entries.append(ScheduleEntry(k, it.group_index, g.length, g.config, phase))
    return RuntimeSchedule(tuple(entries), switches)


# ── loss normalisation ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class LossBatch:
    """One DP rank's samples: summed token loss and loss-token count for each."""

    losses: tuple[float, ...]
    tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "losses", tuple(float(x) for x in self.losses))
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if len(self.losses) != len(self.tokens):
            raise ValidationError("losses and tokens must have equal length")
        if not self.losses:
            raise ValidationError("a rank needs at least one sample")
        if any(t < 1 for t in self.tokens):
            raise ValidationError("token counts must be >= 1")

    @property
    def size(self) -> int:
        return len(self.losses)


def normalize_loss(ranks: Sequence[LossBatch], mode: LossMode = "ave_token") -> tuple[list[float], float]:
    """Per-rank loss under ``mode`` and their mean (what gradient all-reduce averages).

    ``ave_token`` divides each rank's summed loss by ``B_l * T_ave`` where
    ``T_ave`` is the global mean of loss tokens per sample; with equal local
    batch sizes the mean of ranks is exactly ``sum(loss) / sum(tokens)``.
    """
    if mode not in LOSS_MODES:
        raise ValidationError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    if not ranks:
        raise ValidationError("need at least one rank")
    if mode == "sum":
        per = [math.fsum(r.losses) for r in ranks]
    elif mode == "sample_mean":
        per = [math.fsum(l / t for l, t in zip(r.losses, r.tokens)) / r.size for r in ranks]
    elif mode == "token_mean":
        per = [math.fsum(r.losses) / sum(r.tokens) for r in ranks]
    else:
        b_l = ranks[0].size
        if any(r.size != b_l for r in ranks):
            raise ValidationError("ave_token needs the same local batch size on every rank")
        b_g = b_l * len(ranks)
        t_total = sum(sum(r.tokens) for r in ranks)
        t_ave = t_total / b_g
        per = [math.fsum(r.losses) / (b_l * t_ave) for r in ranks]
    return per, math.fsum(per) / len(per)


def split_ranks(losses: Sequence[float], tokens: Sequence[int], local_batch: int) -> list[LossBatch]:
    """Consecutive chunks of ``local_batch`` samples, one per rank."""
    if local_batch < 1 or len(losses) % local_batch:
        raise ValidationError("sample count must be a positive multiple of local_batch")
    return [
        LossBatch(tuple(losses[i : i + local_batch]), tuple(tokens[i : i + local_batch]))
        for i in range(0, len(losses), local_batch)
    ]
