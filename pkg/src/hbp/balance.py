"""Hierarchical balanced packing and the plans built from it.

The pipeline per corpus is: split samples into length groups, then from the
longest group down pack each group, top its packs up with samples borrowed
from shorter groups, and batch the packs so every step's replicas carry
similar attention work.  Iteration order is shuffled last.
"""

from __future__ import annotations

import bisect
import json
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .core import (
    DeviceBatch,
    GroupConfig,
    HierarchicalGroups,
    Iteration,
    Pack,
    Plan,
    Sample,
    SampleSet,
)
from .errors import InfeasibleError, ParseError, ValidationError
from .packing import PackingStrategy, pack, random_batching, sorted_batching


def replicas(device_count: int, sp: int) -> int:
    """Data-parallel replicas when each one spans ``sp`` GPUs."""
    dp = device_count // sp
    if dp < 1:
        raise InfeasibleError(f"sp={sp} needs more than the {device_count} available devices")
    return dp


def group_data(samples: SampleSet | Sequence[Sample], groups: HierarchicalGroups) -> list[SampleSet]:
    """Partition by ``(l_{i-1}, l_i]`` with ``l_0 = 0``."""
    bounds = groups.lengths
    parts: list[list[Sample]] = [[] for _ in bounds]
    for s in samples:
        i = bisect.bisect_left(bounds, s.length)
        if i == len(bounds):
            raise ValidationError(
                f"sample {s.id} has length {s.length} > longest group {bounds[-1]}"
            )
        parts[i].append(s)
    return [SampleSet(tuple(p)) for p in parts]


class _Pool:
    """Samples of one group available for borrowing, largest first, ties by id."""

    def __init__(self, samples: Sequence[Sample]) -> None:
        # ascending by (length, -id): the last entry <= r is the longest fit
        # with the lowest id
        self._keys = sorted((s.length, -s.id) for s in samples)

    def __len__(self) -> int:
        return len(self._keys)

    def take_fit(self, residual: int) -> Sample | None:
        pos = bisect.bisect_right(self._keys, (residual, 1)) - 1
        if pos < 0:
            return None
        length, neg_id = self._keys.pop(pos)
        return Sample(-neg_id, length)

    def remaining(self) -> list[Sample]:
        return sorted((Sample(-n, l) for l, n in self._keys), key=lambda s: s.id)


def greedy_fill(packs: Sequence[Pack], smaller: Sequence[list[Sample]]) -> tuple[list[Pack], list[list[Sample]]]:
    """Top up each pack from shorter groups' pools.

    ``smaller`` lists the pools nearest group first, so index 0 is group
    ``i-1``.  Within a pool, samples are tried longest first (lowest id on
    ties).  Returns the filled packs and what is left of every pool.
    """
    pools = [_Pool(p) for p in smaller]
    out: list[Pack] = []
    for p in packs:
        residual = p.capacity - p.total
        added: list[Sample] = []
        for pool in pools:
            while residual > 0 and len(pool):
                s = pool.take_fit(residual)
                if s is None:
                    break
                added.append(s)
                residual -= s.length
            if residual == 0:
                break
        out.append(Pack(p.samples + tuple(added), p.capacity) if added else p)
    return out, [pool.remaining() for pool in pools]


def _spread(packs: Sequence[Pack], dp: int, capacity: int) -> list[list[Pack]] | None:
    """Re-pack a short final run onto ``dp`` replicas, evening out attention work.

    Samples go longest first to the replica with the least attention so far
    that still has room.  Returns ``None`` when some sample fits nowhere.
    """
    samples = sorted((s for p in packs for s in p.samples), key=lambda s: (-s.length, s.id))
    bins: list[list[Sample]] = [[] for _ in range(dp)]
    load = [0] * dp
    att = [0] * dp
    for s in samples:
        choice = None
        for k in range(dp):
            if load[k] + s.length <= capacity and (choice is None or att[k] < att[choice]):
                choice = k
        if choice is None:
            return None
        bins[choice].append(s)
        load[choice] += s.length
        att[choice] += s.length**2
    return [[Pack(tuple(b), capacity)] if b else [] for b in bins]


def _runs(ordered: Sequence[Pack], dp: int, group_index: int, sp: int, capacity: int, spread: bool) -> list[Iteration]:
    iterations: list[Iteration] = []
    full = len(ordered) - len(ordered) % dp
    for start in range(0, full, dp):
        chunk = ordered[start : start + dp]
        iterations.append(
            Iteration(group_index, tuple(DeviceBatch(k, (p,), sp) for k, p in enumerate(chunk)))
        )
    rest = list(ordered[full:])
    if rest:
        slots = _spread(rest, dp, capacity) if spread else None
        if slots is None:
            slots = [[p] for p in rest] + [[] for _ in range(dp - len(rest))]
        iterations.append(
            Iteration(group_index, tuple(DeviceBatch(k, tuple(s), sp) for k, s in enumerate(slots)))
        )
    return iterations


def balance_batching(
    packs: Sequence[Pack], device_count: int, group_index: int, group: GroupConfig
) -> list[Iteration]:
    """Sort packs by attention work (descending, ties by position) and take runs of replicas.

    A final run shorter than the replica count is re-spread over all replicas.
    """
    dp = replicas(device_count, group.config.sp)
    order = sorted(range(len(packs)), key=lambda k: (-packs[k].attention_complexity, k))
    return _runs([packs[k] for k in order], dp, group_index, group.config.sp, group.length, True)


def sequential_batching(
    packs: Sequence[Pack], device_count: int, group_index: int, group: GroupConfig
) -> list[Iteration]:
    """Runs of replicas in the order given; a short final run leaves replicas idle."""
    dp = replicas(device_count, group.config.sp)
    return _runs(list(packs), dp, group_index, group.config.sp, group.length, False)


def shuffled_batching(
    packs: Sequence[Pack], device_count: int, group_index: int, group: GroupConfig, seed: int = 0
) -> list[Iteration]:
    """What a plain data loader does: shuffle packs, then take runs of replicas."""
    rng = np.random.default_rng(seed)
    order = [packs[k] for k in rng.permutation(len(packs))]
    return sequential_batching(order, device_count, group_index, group)


def _shuffle(iterations: list[Iteration], seed: int) -> list[Iteration]:
    rng = np.random.default_rng(seed)
    return [iterations[k] for k in rng.permutation(len(iterations))]


def build_plan(
    samples: SampleSet | Sequence[Sample],
    groups: HierarchicalGroups,
    strategy: PackingStrategy | str = "isf",
    device_count: int = 8,
    seed: int = 0,
    *,
    balance: bool = True,
    fill: bool = True,
    shuffle: bool = True,
) -> Plan:
    """Pack, fill and batch every group from the longest down, then shuffle steps.

    With ``balance=False`` packs are batched in random order (the
    hierarchical-only baseline); ``fill=False`` skips borrowing from shorter
    groups.
    """
    parts = [list(p) for p in group_data(samples, groups)]
    n = len(groups)
    per_group: list[list[Iteration]] = [[] for _ in range(n)]
    for i in range(n - 1, -1, -1):
        g = groups[i]
        if not parts[i]:
            continue
        packs = list(pack(parts[i], g.length, strategy, seed=seed + 7919 * (i + 1)).packs)
        if fill and i > 0:
            smaller = [parts[j] for j in range(i - 1, -1, -1)]
            packs, left = greedy_fill(packs, smaller)
            for j, rest in zip(range(i - 1, -1, -1), left):
                parts[j] = rest
        if balance:
            per_group[i] = balance_batching(packs, device_count, i, g)
        else:
            per_group[i] = shuffled_batching(packs, device_count, i, g, seed=seed + i)
    iterations = [it for i in range(n - 1, -1, -1) for it in per_group[i]]
    if shuffle:
        iterations = _shuffle(iterations, seed)
    return Plan(groups, tuple(iterations), device_count, seed)


def build_naive_plan(
    samples: SampleSet | Sequence[Sample],
    group: GroupConfig,
    strategy: PackingStrategy | str = "isf",
    device_count: int = 8,
    seed: int = 0,
) -> Plan:
    """Single packing length for every sample, no balancing."""
    return build_plan(
        samples, HierarchicalGroups((group,)), strategy, device_count, seed, balance=False, fill=False
    )


def build_batching_plan(
    samples: SampleSet | Sequence[Sample],
    group: GroupConfig,
    mode: Literal["sorted", "random"] = "sorted",
    device_count: int = 8,
    seed: int = 0,
) -> Plan:
    """Padded batching baseline: no packing, each batch padded to its longest sample."""
    if mode == "sorted":
        packs = sorted_batching(samples, group.length)
    elif mode == "random":
        packs = random_batching(samples, token_budget=group.length, seed=seed)
    else:
        raise ValidationError(f"unknown batching mode {mode!r}")
    groups = HierarchicalGroups((group,))
    iterations = sequential_batching(packs, device_count, 0, group)
    return Plan(groups, tuple(_shuffle(iterations, seed)), device_count, seed)


# ── plan manifest ─────────────────────────────────────────────────────────────

PLAN_FORMAT = "hbp-plan"
PLAN_VERSION = 1


def plan_to_dict(plan: Plan) -> dict:
    from .autoselect import groups_to_dict

    samples = sorted(plan.samples(), key=lambda s: s.id)

    def pack_rec(p: Pack) -> dict:
        rec: dict = {"capacity": p.capacity, "ids": [s.id for s in p.samples]}
        if p.padded_to is not None:
            rec["padded_to"] = p.padded_to
        return rec

    return {
        "format": PLAN_FORMAT,
        "version": PLAN_VERSION,
        "device_count": plan.device_count,
        "seed": plan.seed,
        "warmup_iterations": plan.warmup_iterations,
        "groups": groups_to_dict(plan.groups),
        "samples": [[s.id, s.length] for s in samples],
        "iterations": [
            {
                "group": it.group_index,
                "devices": [
                    {"device": b.device_index, "sp": b.sp, "packs": [pack_rec(p) for p in b.packs]}
                    for b in it.device_batches
                ],
            }
            for it in plan.iterations
        ],
    }


def plan_from_dict(d: dict) -> Plan:
    from .autoselect import groups_from_dict

    if d.get("format") != PLAN_FORMAT:
        raise ValidationError("not a plan manifest")
    if d.get("version") != PLAN_VERSION:
        raise ValidationError(f"unsupported plan manifest version {d.get('version')!r}")
    try:
        table = {int(i): Sample(int(i), int(n)) for i, n in d["samples"]}
        iterations = []
        for it in d["iterations"]:
            batches = []
            for b in it["devices"]:
                packs = tuple(
                    Pack(tuple(table[i] for i in p["ids"]), int(p["capacity"]), p.get("padded_to"))
                    for p in b["packs"]
                )
                batches.append(DeviceBatch(int(b["device"]), packs, int(b["sp"])))
            iterations.append(Iteration(int(it["group"]), tuple(batches)))
        return Plan(
            groups_from_dict(d["groups"]),
            tuple(iterations),
            int(d["device_count"]),
            int(d.get("seed", 0)),
            int(d.get("warmup_iterations", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed plan manifest: {exc!r}") from None


def dump_plan(plan: Plan) -> str:
    return json.dumps(plan_to_dict(plan), sort_keys=True, separators=(",", ":")) + "\n"


def save_plan(plan: Plan, path: str | Path) -> None:
    Path(path).write_text(dump_plan(plan))


def load_plan(path: str | Path) -> Plan:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    return plan_from_dict(data)
