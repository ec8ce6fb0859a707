"""Fixed-length packing heuristics and the padded batching baselines.

Every strategy takes samples in SampleSet order and a seed, and is a pure
function of those.  Ties always go to the lowest sample id, then the lowest
pack index.
"""

from __future__ import annotations

import bisect
import heapq
from dataclasses import dataclass, field
from typing import Any, Literal, Sequence

import numpy as np

from .core import Pack, Sample, SampleSet
from .errors import ValidationError

StrategyKind = Literal["random", "isf", "ffs", "ffd", "bfs", "spfhp"]
STRATEGIES: tuple[str, ...] = ("random", "isf", "ffs", "ffd", "bfs", "spfhp")


@dataclass(frozen=True)
class PackingStrategy:
    kind: StrategyKind = "isf"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.kind == "isf":
            if int(self.params.get("iterations", 8)) < 1:
                raise ValidationError("isf iterations must be >= 1")
            if not 0 < float(self.params.get("threshold", 0.98)) <= 1:
                raise ValidationError("isf threshold must lie in (0, 1]")


@dataclass(frozen=True)
class PackList:
    packs: tuple[Pack, ...]
    capacity: int
    leftover: tuple[Sample, ...] = ()

    def __len__(self) -> int:
        return len(self.packs)

    def to_text(self) -> str:
        """One line per pack: ``total<TAB>id,id,...``."""
        lines = [f"{p.total}\t" + ",".join(str(s.id) for s in p.samples) for p in self.packs]
        return "\n".join(lines) + ("\n" if lines else "")


def parse_packlist_text(text: str) -> list[tuple[int, list[int]]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        total, _, ids = line.partition("\t")
        try:
            out.append((int(total), [int(x) for x in ids.split(",") if x]))
        except ValueError:
            raise ValidationError(f"line {lineno}: malformed pack line {line!r}") from None
    return out


# ── bin primitives ────────────────────────────────────────────────────────────


class _FirstFitTree:
    """Max segment tree over pack residuals; finds the leftmost pack that fits."""

    def __init__(self, size: int) -> None:
        n = 1
        while n < max(size, 1):
            n *= 2
        self.n = n
        self.tree = [-1] * (2 * n)
        self.count = 0

    def _set(self, i: int, value: int) -> None:
        i += self.n
        self.tree[i] = value
        i //= 2
        while i:
            self.tree[i] = max(self.tree[2 * i], self.tree[2 * i + 1])
            i //= 2

    def open(self, residual: int) -> int:
        idx = self.count
        self.count += 1
        self._set(idx, residual)
        return idx

    def update(self, idx: int, residual: int) -> None:
        self._set(idx, residual)

    def find(self, need: int) -> int | None:
        if self.tree[1] < need:
            return None
        i = 1
        while i < self.n:
            i = 2 * i if self.tree[2 * i] >= need else 2 * i + 1
        return i - self.n


def _first_fit(order: Sequence[Sample], capacity: int) -> list[list[Sample]]:
    bins: list[list[Sample]] = []
    residual: list[int] = []
    tree = _FirstFitTree(len(order))
    for s in order:
        idx = tree.find(s.length)
        if idx is None:
            idx = tree.open(capacity)
            bins.append([])
            residual.append(capacity)
        bins[idx].append(s)
        residual[idx] -= s.length
        tree.update(idx, residual[idx])
    return bins


def _best_fit(order: Sequence[Sample], capacity: int) -> list[list[Sample]]:
    bins: list[list[Sample]] = []
    open_: list[tuple[int, int]] = []  # sorted (residual, bin index)
    for s in order:
        pos = bisect.bisect_left(open_, (s.length, -1))
        if pos < len(open_):
            res, idx = open_.pop(pos)
        else:
            res, idx = capacity, len(bins)
            bins.append([])
        bins[idx].append(s)
        res -= s.length
        if res > 0:
            bisect.insort(open_, (res, idx))
    return bins


def _next_fit(order: Sequence[Sample], capacity: int) -> list[list[Sample]]:
    bins: list[list[Sample]] = []
    cur: list[Sample] = []
    fill = 0
    for s in order:
        if cur and fill + s.length > capacity:
            bins.append(cur)
            cur, fill = [], 0
        cur.append(s)
        fill += s.length
    if cur:
        bins.append(cur)
    return bins


def _decreasing(samples: Sequence[Sample]) -> list[Sample]:
    return sorted(samples, key=lambda s: (-s.length, s.id))


def _shuffled(samples: Sequence[Sample], rng: np.random.Generator) -> list[Sample]:
    return [samples[i] for i in rng.permutation(len(samples))]


def _spfhp(
    samples: Sequence[Sample], capacity: int, max_per_pack: int | None = None
) -> list[list[Sample]]:
    """Shortest-pack-first histogram packing.

    Lengths are bucketed in a 1-token histogram and placed longest first,
    each into the open pack with the most room left.  If that pack cannot
    take the sample, no pack can, so a new one opens.
    """
    histogram: list[list[Sample]] = [[] for _ in range(capacity + 1)]
    for s in samples:
        histogram[s.length].append(s)
    bins: list[list[Sample]] = []
    heap: list[tuple[int, int]] = []  # (-residual, bin index)
    for length in range(capacity, 0, -1):
        bucket = histogram[length]
        if not bucket:
            continue
        bucket.sort(key=lambda s: s.id)
        for s in bucket:
            if heap and -heap[0][0] >= length:
                neg_res, idx = heapq.heappop(heap)
                res = -neg_res
            else:
                res, idx = capacity, len(bins)
                bins.append([])
            bins[idx].append(s)
            res -= length
            if res > 0 and (max_per_pack is None or len(bins[idx]) < max_per_pack):
                heapq.heappush(heap, (-res, idx))
    return bins


def _isf(
    samples: Sequence[Sample],
    capacity: int,
    rng: np.random.Generator,
    iterations: int = 8,
    threshold: float = 0.98,
) -> list[list[Sample]]:
    """Iterative sampling and filtering.

    Each round shuffles the pool, fills packs sequentially and keeps those at
    least ``threshold`` full; the rest return to the pool.  After every round
    the candidate answer "kept so far + FFD of the pool" is scored and the
    smallest one seen wins (earliest on ties), so more rounds never yield
    more packs.
    """
    pool = list(samples)
    kept: list[list[Sample]] = []
    best: list[list[Sample]] | None = None
    for _ in range(iterations):
        fresh = _next_fit(_shuffled(pool, rng), capacity)
        pool = []
        for b in fresh:
            if sum(s.length for s in b) >= threshold * capacity:
                kept.append(b)
            else:
                pool.extend(b)
        pool.sort(key=lambda s: s.id)
        candidate = kept + _first_fit(_decreasing(pool), capacity)
        if best is None or len(candidate) < len(best):
            best = candidate
        if not pool:
            break
    return best or []


def pack(
    samples: SampleSet | Sequence[Sample],
    capacity: int,
    strategy: PackingStrategy | str = "isf",
    seed: int = 0,
) -> PackList:
    """Pack samples into sequences of at most ``capacity`` tokens."""
    if isinstance(strategy, str):
        strategy = PackingStrategy(strategy)  # type: ignore[arg-type]
    items = list(samples)
    for s in items:
        if s.length > capacity:
            raise ValidationError(
                f"sample {s.id} has length {s.length} > capacity {capacity}"
            )
    rng = np.random.default_rng(seed)
    p = strategy.params
    kind = strategy.kind
    if kind == "random":
        bins = _next_fit(_shuffled(items, rng), capacity)
    elif kind == "ffs":
        bins = _first_fit(_shuffled(items, rng), capacity)
    elif kind == "ffd":
        bins = _first_fit(_decreasing(items), capacity)
    elif kind == "bfs":
        bins = _best_fit(_shuffled(items, rng), capacity)
    elif kind == "spfhp":
        limit = p.get("max_per_pack")
        bins = _spfhp(items, capacity, int(limit) if limit else None)
    else:
        bins = _isf(
            items,
            capacity,
            rng,
            iterations=int(p.get("iterations", 8)),
            threshold=float(p.get("threshold", 0.98)),
        )
    return PackList(tuple(Pack(tuple(b), capacity) for b in bins if b), capacity)


# ── padded batching baselines ─────────────────────────────────────────────────


def _padded(batch: list[Sample]) -> Pack:
    width = max(s.length for s in batch)
    return Pack(tuple(batch), capacity=width * len(batch), padded_to=width)


def sorted_batching(samples: SampleSet | Sequence[Sample], token_budget: int) -> list[Pack]:
    """Group length-sorted samples into padded batches of at most ``token_budget``.

    The local batch size changes from batch to batch: a batch grows while
    ``count * max_len`` stays within budget.
    """
    items = _decreasing(list(samples))
    if items and items[0].length > token_budget:
        raise ValidationError(
            f"sample {items[0].id} ({items[0].length} tokens) exceeds budget {token_budget}"
        )
    batches: list[Pack] = []
    cur: list[Sample] = []
    for s in items:
        # first sample in a batch is its longest
        if cur and (len(cur) + 1) * cur[0].length > token_budget:
            batches.append(_padded(cur))
            cur = []
        cur.append(s)
    if cur:
        batches.append(_padded(cur))
    return batches


def random_batching(
    samples: SampleSet | Sequence[Sample],
    batch_size: int | None = None,
    seed: int = 0,
    token_budget: int | None = None,
) -> list[Pack]:
    """Shuffle, then cut into padded batches.

    With ``batch_size`` every batch holds that many samples.  With
    ``token_budget`` a batch grows while its padded footprint stays within
    the budget, like :func:`sorted_batching` minus the sort.
    """
    if (batch_size is None) == (token_budget is None):
        raise ValidationError("give exactly one of batch_size and token_budget")
    items = _shuffled(list(samples), np.random.default_rng(seed))
    if batch_size is not None:
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        return [_padded(items[i : i + batch_size]) for i in range(0, len(items), batch_size)]
    assert token_budget is not None
    batches: list[Pack] = []
    cur: list[Sample] = []
    width = 0
    for s in items:
        if s.length > token_budget:
            raise ValidationError(f"sample {s.id} ({s.length} tokens) exceeds budget {token_budget}")
        w = max(width, s.length)
        if cur and (len(cur) + 1) * w > token_budget:
            batches.append(_padded(cur))
            cur, w = [], s.length
        cur.append(s)
        width = w
    if cur:
        batches.append(_padded(cur))
    return batches

