"""Data types shared across the pipeline.

Everything here is immutable once constructed.  Algorithms build plain lists
internally and freeze the result into these types at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .errors import ValidationError

KILO = 1024


def parse_tokens(text: str | int) -> int:
    """Parse a token count such as ``4096``, ``16K`` or ``1M`` (binary units)."""
    if isinstance(text, int):
        return text
    s = str(text).strip().upper()
    mult = 1
    if s.endswith("K"):
        mult, s = KILO, s[:-1]
    elif s.endswith("M"):
        mult, s = KILO * KILO, s[:-1]
    try:
        value = int(s) * mult
    except ValueError as exc:
        raise ValidationError(f"not a token count: {text!r}") from exc
    return value


def format_tokens(n: int) -> str:
    if n >= KILO and n % KILO == 0:
        return f"{n // KILO}K"
    return str(n)


@dataclass(frozen=True, slots=True)
class Sample:
    id: int
    length: int

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValidationError(f"sample id must be non-negative, got {self.id}")
        if self.length < 1:
            raise ValidationError(
                f"sample {self.id}: length must be >= 1, got {self.length}"
            )


@dataclass(frozen=True)
class SampleSet:
    samples: tuple[Sample, ...]
    source: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValidationError("sample ids must be unique within a SampleSet")

    @classmethod
    def from_lengths(cls, lengths: Iterable[int], source: str = "") -> SampleSet:
        return cls(tuple(Sample(i, int(n)) for i, n in enumerate(lengths)), source)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    @property
    def lengths(self) -> list[int]:
        return [s.length for s in self.samples]

    @property
    def total_tokens(self) -> int:
        return sum(s.length for s in self.samples)


@dataclass(frozen=True)
class Pack:
    """Samples concatenated into one sequence of at most ``capacity`` tokens.

    ``padded_to`` marks a padded batch instead of a packed sequence: every
    sample then occupies ``padded_to`` tokens of compute, and ``capacity`` is
    the padded footprint ``len(samples) * padded_to``.
    """

    samples: tuple[Sample, ...]
    capacity: int
    padded_to: int | None = None
    total: int = field(init=False)
    attention_complexity: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        total = sum(s.length for s in self.samples)
        if total > self.capacity:
            raise ValidationError(
                f"pack total {total} exceeds capacity {self.capacity}"
            )
        if self.padded_to is not None and any(
            s.length > self.padded_to for s in self.samples
        ):
            raise ValidationError("padded batch holds a sample longer than its pad")
        object.__setattr__(self, "total", total)
        object.__setattr__(
            self, "attention_complexity", sum(s.length**2 for s in self.samples)
        )

    @property
    def compute_tokens(self) -> int:
        """Tokens actually pushed through the model (padding included)."""
        if self.padded_to is None:
            return self.total
        return len(self.samples) * self.padded_to

    @property
    def compute_attention(self) -> int:
        if self.padded_to is None:
            return self.attention_complexity
        return len(self.samples) * self.padded_to**2

    @property
    def footprint(self) -> int:
        """Tokens resident at once, which is what sizes activation memory."""
        return self.capacity if self.padded_to is not None else self.total


@dataclass(frozen=True)
class DeviceBatch:
    """Work of one data-parallel replica in one iteration."""

    device_index: int
    packs: tuple[Pack, ...]
    sp: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "packs", tuple(self.packs))

    @property
    def tokens(self) -> int:
        return sum(p.total for p in self.packs)

    @property
    def attention(self) -> int:
        return sum(p.attention_complexity for p in self.packs)

    @property
    def comm_tokens(self) -> int:
        return self.tokens if self.sp > 1 else 0


@dataclass(frozen=True, slots=True)
class RuntimeConfig:
    sp: int = 1
    ckpt: int = 0

    def __post_init__(self) -> None:
        if self.sp < 1 or self.sp & (self.sp - 1):
            raise ValidationError(f"sp must be a power of two >= 1, got {self.sp}")
        if self.ckpt < 0:
            raise ValidationError(f"ckpt must be >= 0, got {self.ckpt}")


@dataclass(frozen=True, slots=True)
class GroupConfig:
    length: int
    config: RuntimeConfig

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValidationError(f"group length must be >= 1, got {self.length}")


@dataclass(frozen=True)
class HierarchicalGroups:
    groups: tuple[GroupConfig, ...]
    l_best: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise ValidationError("at least one packing group is required")
        lengths = [g.length for g in self.groups]
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValidationError(f"group lengths must strictly increase: {lengths}")
        if self.l_best is None:
            object.__setattr__(self, "l_best", lengths[-1])

    @classmethod
    def from_triples(cls, triples: Sequence[tuple[int, int, int]]) -> HierarchicalGroups:
        return cls(tuple(GroupConfig(l, RuntimeConfig(sp, ck)) for l, sp, ck in triples))

    @property
    def l_max(self) -> int:
        return self.groups[-1].length

    @property
    def lengths(self) -> list[int]:
        return [g.length for g in self.groups]

    def __len__(self) -> int:
        return len(self.groups)

    def __getitem__(self, i: int) -> GroupConfig:
        return self.groups[i]


@dataclass(frozen=True)
class Iteration:
    group_index: int
    device_batches: tuple[DeviceBatch, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "device_batches", tuple(self.device_batches))


@dataclass(frozen=True)
class Plan:
    """A complete training schedule: which packs every replica runs each step."""

    groups: HierarchicalGroups
    iterations: tuple[Iteration, ...]
    device_count: int
    seed: int = 0
    warmup_iterations: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "iterations", tuple(self.iterations))
        if self.device_count < 1:
            raise ValidationError("device_count must be >= 1")
        for k, it in enumerate(self.iterations):
            if not 0 <= it.group_index < len(self.groups):
                raise ValidationError(f"iteration {k}: bad group index {it.group_index}")

    def config_of(self, iteration: Iteration) -> RuntimeConfig:
        return self.groups[iteration.group_index].config

    def samples(self) -> list[Sample]:
        return [
            s
            for it in self.iterations
            for b in it.device_batches
            for p in b.packs
            for s in p.samples
        ]

    def packs(self) -> list[Pack]:
        return [p for it in self.iterations for b in it.device_batches for p in b.packs]

    def corpus_key(self) -> tuple[tuple[int, int], ...]:
        """Sorted (id, length) pairs; equal keys mean the same corpus."""
        return tuple(sorted((s.id, s.length) for s in self.samples()))
