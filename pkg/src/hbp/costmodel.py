"""Analytic stand-in for GPU profiling, and the SP/GC search built on top of it.

Two profilers share one interface:

* :class:`HardwareProfile` evaluates a closed-form time and memory model.
* :class:`TableProfile` replays measured ``(length, sp, ckpt)`` rows.

Every time is per GPU.  A pack of ``T`` tokens run at SP degree ``sp`` puts
``T / sp`` tokens on each GPU of its replica.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

from .core import Pack, RuntimeConfig, parse_tokens
from .errors import InfeasibleError, OutOfMemoryError, ParseError, ValidationError

GB = 1e9


@runtime_checkable
class Profiler(Protocol):
    layer_count: int

    def profile_memory(self, length: int, config: RuntimeConfig) -> float:
        """Remaining device memory in bytes (negative means OOM)."""

    def profile_time(self, length: int, config: RuntimeConfig) -> float:
        """Seconds for one profiling iteration at packing length ``length``."""

    def choose_ckpt(self, length: int, sp: int, c_min: int = 0, c_max: int | None = None) -> int:
        """GC layer count to run ``length`` at SP degree ``sp``."""

    def device_cost(
        self, packs: Sequence[Pack], config: RuntimeConfig, length: int | None = None
    ) -> tuple[float, float]:
        """``(compute, comm)`` seconds for one replica's packs."""


@dataclass(frozen=True)
class HardwareProfile:
    """Closed-form cost model of one transformer training replica.

    Per GPU, with ``t = T / sp`` tokens and ``a = sum(s_i^2) / sp``::

        compute = (linear * t + attention * a) * (1 + gc_recompute * ckpt / layers)
        comm    = sp_comm * t * hops(sp)                      (sp > 1)
        memory  = base + t * (act * layers - gc_saving * ckpt)

    ``hops`` is ``log2(sp)`` inside a node; every doubling past
    ``gpus_per_node`` costs ``inter_node_comm_factor`` hops.

    Defaults mimic an 8B model on 80 GB devices: 32K tokens per GPU do not
    fit even with every layer checkpointed, and 32K packs run best at sp=8.
    """

    per_token_linear_cost: float = 1.2e-4
    per_token2_attention_cost: float = 1.2e-4 / (6 * 4096)
    sp_comm_cost: float = 2.5e-5
    gc_recompute_factor: float = 1.0 / 3.0
    layer_count: int = 32
    base_memory: float = 20 * GB
    per_token_activation_memory: float = 600_000.0
    gc_memory_saving_per_layer: float = 540_000.0
    device_memory: float = 80 * GB
    gpus_per_node: int = 8
    inter_node_comm_factor: float = 4.0
    profile_tokens_per_device: int = 16 * 1024

    def __post_init__(self) -> None:
        costs = (
            self.per_token_linear_cost,
            self.per_token2_attention_cost,
            self.sp_comm_cost,
            self.gc_recompute_factor,
            self.base_memory,
            self.per_token_activation_memory,
            self.gc_memory_saving_per_layer,
        )
        if any(c < 0 for c in costs):
            raise ValidationError("profile costs must be non-negative")
        if self.layer_count < 1:
            raise ValidationError("layer_count must be >= 1")
        if self.device_memory <= self.base_memory:
            raise ValidationError("device_memory must exceed base_memory")
        if self.gc_memory_saving_per_layer > self.per_token_activation_memory:
            raise ValidationError("a checkpointed layer cannot save more than it stores")
        if self.gpus_per_node < 1 or self.profile_tokens_per_device < 1:
            raise ValidationError("gpus_per_node and profile_tokens_per_device must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> HardwareProfile:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown profile constants: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> HardwareProfile:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    # ── model terms ──

    def _check(self, config: RuntimeConfig) -> None:
        if config.ckpt > self.layer_count:
            raise ValidationError(
                f"ckpt {config.ckpt} exceeds layer count {self.layer_count}"
            )

    def hops(self, sp: int) -> float:
        if sp <= 1:
            return 0.0
        intra = min(sp, self.gpus_per_node)
        hops = math.log2(intra)
        if sp > self.gpus_per_node:
            hops += self.inter_node_comm_factor * math.log2(sp / self.gpus_per_node)
        return hops

    def memory(self, footprint: int, config: RuntimeConfig) -> float:
        """Bytes used per GPU while a pack of ``footprint`` tokens is resident."""
        self._check(config)
        t = math.ceil(footprint / config.sp)
        per_token = (
            self.per_token_activation_memory * self.layer_count
            - self.gc_memory_saving_per_layer * config.ckpt
        )
        return self.base_memory + t * per_token

    def profile_memory(self, length: int, config: RuntimeConfig) -> float:
        return self.device_memory - self.memory(length, config)

    def _require_fit(self, footprint: int, config: RuntimeConfig) -> None:
        need = self.memory(footprint, config)
        if need > self.device_memory:
            raise OutOfMemoryError(
                need, self.device_memory, f"{footprint} tokens at sp={config.sp} ckpt={config.ckpt}"
            )

    def _split(self, tokens: float, attention: float, config: RuntimeConfig) -> tuple[float, float]:
        sp = config.sp
        gc = 1.0 + self.gc_recompute_factor * config.ckpt / self.layer_count
        compute = (
            self.per_token_linear_cost * tokens + self.per_token2_attention_cost * attention
        ) / sp * gc
        comm = self.sp_comm_cost * tokens / sp * self.hops(sp)
        return compute, comm

    def device_cost(
        self, packs: Sequence[Pack], config: RuntimeConfig, length: int | None = None
    ) -> tuple[float, float]:
        if not packs:
            return 0.0, 0.0
        self._require_fit(max(p.footprint for p in packs), config)
        tokens = sum(p.compute_tokens for p in packs)
        attention = sum(p.compute_attention for p in packs)
        return self._split(tokens, attention, config)

    def profile_time(self, length: int, config: RuntimeConfig) -> float:
        """Time to push a fixed per-GPU token budget through full ``length`` packs.

        The budget (``profile_tokens_per_device``) makes iterations at
        different lengths comparable, the way fixed global batch sizes do in
        real profiling runs.  Packs are modelled as one full-length sequence.
        """
        self._require_fit(length, config)
        compute, comm = self._split(length, float(length) ** 2, config)
        passes = self.profile_tokens_per_device * config.sp / length
        return (compute + comm) * passes

    def choose_ckpt(self, length: int, sp: int, c_min: int = 0, c_max: int | None = None) -> int:
        return greedy_profile_ckpt(length, sp, self, c_min, c_max)

    def min_ckpt(self, length: int, sp: int) -> int | None:
        """Exact smallest GC layer count that fits, or ``None`` if none does."""
        for c in range(self.layer_count + 1):
            if self.memory(length, RuntimeConfig(sp, c)) <= self.device_memory:
                return c
        return None


@dataclass(frozen=True)
class ProfileRow:
    length: int
    sp: int
    ckpt: int
    memory_bytes: float | None  # None marks an OOM measurement
    iter_seconds: float | None

    @property
    def oom(self) -> bool:
        return self.memory_bytes is None or self.iter_seconds is None


def _optional_float(text: str) -> float | None:
    t = text.strip()
    if t in ("", "-", "OOM", "oom", "nan"):
        return None
    return float(t)


class TableProfile:
    """Measured rows keyed by ``(length, sp, ckpt)``.

    A ``(length, sp)`` pair that was never measured is treated as unavailable.
    The GC layer count for a pair is the smallest measured, non-OOM one,
    since each table row records the minimum GC that still fit.
    """

    def __init__(
        self,
        rows: Iterable[ProfileRow],
        device_memory: float = 80 * GB,
        layer_count: int = 32,
        source: str = "",
    ) -> None:
        self.rows: dict[tuple[int, int, int], ProfileRow] = {}
        for r in rows:
            self.rows[(r.length, r.sp, r.ckpt)] = r
        self.device_memory = device_memory
        self.layer_count = layer_count
        self.source = source

    @classmethod
    def load(
        cls, path: str | Path, device_memory: float = 80 * GB, layer_count: int = 32
    ) -> TableProfile:
        path = Path(path)
        text = path.read_text().splitlines()
        reader = csv.DictReader(text)
        need = {"length", "sp", "ckpt", "memory_bytes", "iter_seconds"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise ParseError(f"{path}: header must contain {sorted(need)}", 1)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            rec = {k.strip(): (v or "") for k, v in rec.items() if k}
            try:
                rows.append(
                    ProfileRow(
                        length=parse_tokens(rec["length"]),
                        sp=int(rec["sp"]),
                        ckpt=int(rec["ckpt"]),
                        memory_bytes=_optional_float(rec["memory_bytes"]),
                        iter_seconds=_optional_float(rec["iter_seconds"]),
                    )
                )
            except (ValueError, ValidationError) as exc:
                raise ParseError(f"{path}: {exc}", lineno) from None
        return cls(rows, device_memory, layer_count, str(path))

    def _row(self, length: int, config: RuntimeConfig) -> ProfileRow:
        row = self.rows.get((length, config.sp, config.ckpt))
        if row is None:
            raise InfeasibleError(
                f"no measurement for length={length} sp={config.sp} ckpt={config.ckpt}"
            )
        return row

    def profile_memory(self, length: int, config: RuntimeConfig) -> float:
        row = self._row(length, config)
        if row.memory_bytes is None:
            return -math.inf
        return self.device_memory - row.memory_bytes

    def profile_time(self, length: int, config: RuntimeConfig) -> float:
        row = self._row(length, config)
        if row.oom:
            raise OutOfMemoryError(
                math.inf, self.device_memory, f"length={length} sp={config.sp} ckpt={config.ckpt}"
            )
        assert row.iter_seconds is not None
        return row.iter_seconds

    def choose_ckpt(self, length: int, sp: int, c_min: int = 0, c_max: int | None = None) -> int:
        measured = sorted(c for (l, s, c) in self.rows if l == length and s == sp)
        if not measured:
            raise InfeasibleError(f"length={length} sp={sp} was never profiled")
        fits = [c for c in measured if not self.rows[(length, sp, c)].oom]
        if not fits:
            raise OutOfMemoryError(math.inf, self.device_memory, f"length={length} sp={sp}")
        return fits[0]

    def device_cost(
        self, packs: Sequence[Pack], config: RuntimeConfig, length: int | None = None
    ) -> tuple[float, float]:
        if not packs:
            return 0.0, 0.0
        total = 0.0
        for p in packs:
            total += self.profile_time(length or p.capacity, config)
        return total, 0.0


def load_profile(spec: str | None) -> Profiler:
    """``analytic``, ``analytic:<json>``, ``table:<csv>`` or a bare path."""
    if spec in (None, "", "analytic"):
        return HardwareProfile()
    kind, _, rest = spec.partition(":")
    if kind == "analytic" and rest:
        return HardwareProfile.load(rest)
    if kind == "table" and rest:
        return TableProfile.load(rest)
    path = Path(spec)
    if path.suffix == ".json":
        return HardwareProfile.load(path)
    if path.suffix == ".csv":
        return TableProfile.load(path)
    raise ValidationError(f"cannot interpret profile {spec!r}")


# ── operations ────────────────────────────────────────────────────────────────


def iter_time(
    packs: Sequence[Pack],
    config: RuntimeConfig,
    profile: Profiler,
    length: int | None = None,
) -> float:
    """Seconds one replica spends on ``packs`` under ``config``."""
    compute, comm = profile.device_cost(packs, config, length)
    return compute + comm


def ckpt_from_memory(m1r: float, m2r: float, c_min: int, c_max: int) -> int:
    """Extrapolate the GC layer count from two remaining-memory probes.

    ``m1r``/``m2r`` are the bytes left with ``c_min``/``c_max`` layers
    checkpointed.  The per-layer saving is their slope, and the result is the
    layer count at which the remaining memory reaches zero, rounded up and
    clamped to ``[0, c_max]``.
    """
    if c_max <= c_min:
        raise ValidationError("need c_min < c_max")
    m_ave = (m2r - m1r) / (c_max - c_min)
    if m_ave <= 0:
        raise ValidationError("GC does not reduce memory under this profile")
    c_o = c_max - m2r / m_ave
    if c_o > c_max + 1e-9:
        raise InfeasibleError(
            f"out of memory even with {c_max} GC layers (short by {-m2r:.4g} bytes)"
        )
    return max(0, min(c_max, math.ceil(c_o - 1e-9)))


def greedy_profile_ckpt(
    length: int, sp: int, profile: Profiler, c_min: int = 0, c_max: int | None = None
) -> int:
    """Two memory probes, at ``c_min`` and ``c_max`` GC layers, then extrapolate."""
    if c_max is None:
        c_max = profile.layer_count
    m1r = profile.profile_memory(length, RuntimeConfig(sp, c_min))
    m2r = profile.profile_memory(length, RuntimeConfig(sp, c_max))
    return ckpt_from_memory(m1r, m2r, c_min, c_max)


def find_best_sp_ckpt(
    length: int,
    sp_candidates: Sequence[int],
    profile: Profiler,
    c_min: int = 0,
    c_max: int | None = None,
) -> RuntimeConfig:
    """Fastest ``(sp, ckpt)`` for one packing length; ties go to the smaller sp."""
    if not sp_candidates:
        raise ValidationError("sp_candidates must not be empty")
    best: tuple[float, RuntimeConfig] | None = None
    failures: list[str] = []
    for sp in sorted(set(sp_candidates)):
        try:
            ckpt = profile.choose_ckpt(length, sp, c_min, c_max)
            cfg = RuntimeConfig(sp, ckpt)
            t = profile.profile_time(length, cfg)
        except InfeasibleError as exc:
            failures.append(f"sp={sp}: {exc}")
            continue
        if best is None or t < best[0]:
            best = (t, cfg)
    if best is None:
        raise InfeasibleError(
            f"no feasible configuration for length {length}: " + "; ".join(failures)
        )
    return best[1]


def profiling_overhead(
    lengths: Sequence[int],
    sp_candidates: Sequence[int],
    profile_iter: int,
    iteration_time: float,
    memory_lengths: Sequence[int] | None = None,
) -> float:
    """Seconds spent profiling: time probes per (length, sp) plus memory probes.

    ``memory_lengths`` defaults to ``lengths``.
    """
    seq = lengths if memory_lengths is None else memory_lengths
    if profile_iter < 1 or not lengths or not sp_candidates or not seq:
        raise ValidationError("profiling counts must all be >= 1")
    time_probes = len(lengths) * len(sp_candidates) * profile_iter
    memory_probes = len(seq) * profile_iter
    return (time_probes + memory_probes) * iteration_time
