"""Balance and efficiency ratios: DBR, PR, ABR, CR and Ave-T."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .core import DeviceBatch, Pack, Plan
from .errors import ValidationError


def _imbalance(values: Sequence[float], what: str) -> float:
    if not values:
        raise ValidationError(f"{what}: need at least one device")
    if any(v < 0 for v in values):
        raise ValidationError(f"{what}: values must be non-negative")
    peak = max(values)
    if peak <= 0:
        raise ValidationError(f"{what}: undefined when every device is empty")
    return sum(peak - v for v in values) / (peak * len(values))


def dbr_of(tokens: Sequence[float]) -> float:
    return _imbalance(tokens, "dbr")


def abr_of(attention: Sequence[float]) -> float:
    return _imbalance(attention, "abr")


def dbr(iteration: Sequence[DeviceBatch]) -> float:
    """Token imbalance across the devices of one iteration."""
    return dbr_of([b.tokens for b in iteration])


def abr(iteration: Sequence[DeviceBatch]) -> float:
    """Attention-work (sum of squared sub-sequence lengths) imbalance."""
    return abr_of([b.attention for b in iteration])


def pr(lengths: Sequence[int], t_max: int) -> float:
    """Padding fraction when every entry is padded to ``t_max``."""
    if not lengths:
        raise ValidationError("pr: need at least one entry")
    if t_max <= 0:
        raise ValidationError("pr: t_max must be positive")
    bad = [t for t in lengths if t > t_max]
    if bad:
        raise ValidationError(f"pr: length {bad[0]} exceeds t_max {t_max}")
    return sum(t_max - t for t in lengths) / (t_max * len(lengths))


def pack_pr(packs: Sequence[Pack]) -> float:
    """Wasted fraction over packs of possibly different capacities.

    Reduces to ``pr`` when every pack has the same capacity.
    """
    cap = sum(p.capacity for p in packs)
    if cap <= 0:
        raise ValidationError("pr: no capacity")
    return sum(p.capacity - p.total for p in packs) / cap


def cr(iterations: Sequence[Sequence[DeviceBatch]]) -> float:
    comm = sum(b.comm_tokens for it in iterations for b in it)
    total = sum(b.tokens for it in iterations for b in it)
    if total <= 0:
        raise ValidationError("cr: no tokens")
    return comm / total


def ave_t(iterations: Sequence[Sequence[DeviceBatch]]) -> float:
    """Mean tokens per device per iteration.

    The divisor is the number of device batches actually present, which is
    ``Iter_max * N`` whenever every iteration has ``N`` replicas.
    """
    if not iterations:
        raise ValidationError("ave_t: need at least one iteration")
    slots = sum(len(it) for it in iterations)
    return sum(b.tokens for it in iterations for b in it) / slots


@dataclass
class MetricsReport:
    dbr: float
    pr: float
    abr: float
    cr: float
    ave_t: float
    iterations: int
    per_iteration: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self, traces: bool = True) -> dict:
        d = asdict(self)
        d["per_iteration"] = [list(x) for x in self.per_iteration] if traces else []
        return d

    def to_json(self, traces: bool = True) -> str:
        return json.dumps(self.to_dict(traces), sort_keys=True, indent=2)

    def to_text(self) -> str:
        rows = [
            ("dbr", f"{self.dbr:.6f}"),
            ("pr", f"{self.pr:.6f}"),
            ("abr", f"{self.abr:.6f}"),
            ("cr", f"{self.cr:.6f}"),
            ("ave_t", f"{self.ave_t:.1f}"),
            ("iterations", str(self.iterations)),
        ]
        return "\n".join(f"{k}={v}" for k, v in rows) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        d = dict(d)
        d["per_iteration"] = [tuple(x) for x in d.get("per_iteration", [])]
        return cls(**d)


def report(plan: Plan) -> MetricsReport:
    """Aggregate every metric over a plan.

    DBR and ABR are computed per iteration and averaged; PR is taken over all
    packs; CR and Ave-T over the whole run.
    """
    its = [it.device_batches for it in plan.iterations]
    if not its:
        raise ValidationError("empty plan")
    trace = [(dbr(it), abr(it)) for it in its]
    n = len(trace)
    return MetricsReport(
        dbr=sum(t[0] for t in trace) / n,
        pr=pack_pr(plan.packs()),
        abr=sum(t[1] for t in trace) / n,
        cr=cr(its),
        ave_t=ave_t(its),
        iterations=n,
        per_iteration=trace,
    )
