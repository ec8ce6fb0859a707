"""Choosing the hierarchical packing lengths and their runtime configs."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Sequence

from .core import GroupConfig, HierarchicalGroups, RuntimeConfig, format_tokens, parse_tokens
from .costmodel import Profiler, find_best_sp_ckpt
from .errors import InfeasibleError, ParseError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_LENGTHS: tuple[int, ...] = tuple(k * 1024 for k in (8, 16, 32, 64, 128))
DEFAULT_SP: tuple[int, ...] = (1, 2, 4, 8)


def _zero_comm_config(
    length: int, parent: RuntimeConfig, profile: Profiler, c_min: int, c_max: int | None
) -> RuntimeConfig:
    """sp=1 config for a level derived as ``parent_length // parent.sp``.

    Such a level holds as many tokens per GPU as its parent, so when the
    profiler has no opinion the parent's GC layer count is reused.
    """
    try:
        return RuntimeConfig(1, profile.choose_ckpt(length, 1, c_min, c_max))
    except InfeasibleError:
        return RuntimeConfig(1, parent.ckpt)


def select_groups(
    lengths: Sequence[int] = DEFAULT_LENGTHS,
    profile: Profiler | None = None,
    sp_candidates: Sequence[int] = DEFAULT_SP,
    c_min: int = 0,
    c_max: int | None = None,
) -> HierarchicalGroups:
    """Two-stage group search.

    Stage 1 profiles the best ``(sp, ckpt)`` for every candidate length and
    keeps the fastest one (``l_best``) plus the longest (``l_max``).  Stage 2
    adds the zero-communication levels ``l_best // sp_best`` and
    ``l_max // sp_max``; the second one only when it exceeds ``l_best``.
    Equal lengths collapse onto the lower-sp config.
    """
    if profile is None:
        from .costmodel import HardwareProfile

        profile = HardwareProfile()
    if not lengths:
        raise ValidationError("candidate lengths must not be empty")
    cands = list(lengths)
    if cands != sorted(cands) or len(set(cands)) != len(cands):
        raise ValidationError(f"candidate lengths must be strictly ascending: {cands}")

    times: list[float] = []
    found: list[tuple[int, RuntimeConfig]] = []
    failures: list[str] = []
    for l in cands:
        try:
            cfg = find_best_sp_ckpt(l, sp_candidates, profile, c_min, c_max)
        except InfeasibleError as exc:
            failures.append(str(exc))
            if l == cands[-1]:
                raise InfeasibleError(
                    f"longest candidate {format_tokens(l)} is infeasible; " + " | ".join(failures)
                ) from None
            logger.warning("skipping length %s: %s", format_tokens(l), exc)
            continue
        found.append((l, cfg))
        times.append(profile.profile_time(l, cfg))

    j = min(range(len(times)), key=lambda k: (times[k], k))
    l_best, s_best = found[j]
    l_max, s_max = found[-1]

    l1 = l_best // s_best.sp
    l2 = l_max // s_max.sp
    levels: list[GroupConfig] = [
        GroupConfig(l1, s_best if s_best.sp == 1 else _zero_comm_config(l1, s_best, profile, c_min, c_max)),
        GroupConfig(l_best, s_best),
    ]
    if l2 > l_best:
        z = s_max if s_max.sp == 1 else _zero_comm_config(l2, s_max, profile, c_min, c_max)
        levels.append(GroupConfig(l2, z))
    levels.append(GroupConfig(l_max, s_max))

    by_length: dict[int, GroupConfig] = {}
    for g in levels:
        cur = by_length.get(g.length)
        if cur is None or g.config.sp < cur.config.sp:
            by_length[g.length] = g
    groups = tuple(by_length[k] for k in sorted(by_length))
    return HierarchicalGroups(groups, l_best=l_best)


# ── manifest ──────────────────────────────────────────────────────────────────

MANIFEST_FORMAT = "hbp-groups"


def groups_to_dict(groups: HierarchicalGroups) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "l_best": groups.l_best,
        "groups": [
            {"length": g.length, "sp": g.config.sp, "ckpt": g.config.ckpt} for g in groups
        ],
    }


def groups_from_dict(d: dict) -> HierarchicalGroups:
    if d.get("format") != MANIFEST_FORMAT:
        raise ValidationError("not a groups manifest")
    try:
        triples = [(parse_tokens(g["length"]), int(g["sp"]), int(g["ckpt"])) for g in d["groups"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed groups manifest: {exc}") from None
    hg = HierarchicalGroups.from_triples(triples)
    return HierarchicalGroups(hg.groups, l_best=d.get("l_best"))


def save_groups(groups: HierarchicalGroups, path: str | Path) -> None:
    Path(path).write_text(json.dumps(groups_to_dict(groups), indent=2, sort_keys=True) + "\n")


def load_groups(path: str | Path) -> HierarchicalGroups:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    return groups_from_dict(data)
