"""Loading real length corpora and generating synthetic hybrid ones."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np

from .core import Sample, SampleSet
from .errors import ParseError, ValidationError

Format = Literal["jsonl", "csv", "raw-lengths"]
OverLengthPolicy = Literal["error", "truncate", "drop"]

FORMATS: tuple[str, ...] = ("jsonl", "csv", "raw-lengths")


def _positive_int(value: Any, line: int) -> int:
    if isinstance(value, bool):
        raise ParseError(f"length must be an integer, got {value!r}", line)
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(value, str):
        try:
            value = int(value.strip())
        except ValueError:
            raise ParseError(f"length must be an integer, got {value!r}", line) from None
    if not isinstance(value, int):
        raise ParseError(f"length must be an integer, got {value!r}", line)
    if value < 1:
        raise ValidationError(f"line {line}: length must be positive, got {value}")
    return value


def load_lengths(
    path: str | Path,
    format: Format = "jsonl",
    *,
    max_length: int | None = None,
    policy: OverLengthPolicy = "error",
) -> SampleSet:
    """Read one sample per record.

    Ids come from the record index unless a JSONL record carries its own
    ``"id"``.  Line numbers in errors are 1-based and count the CSV header.
    """
    path = Path(path)
    if format not in FORMATS:
        raise ValidationError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    text = path.read_text()
    samples: list[Sample] = []

    if format == "jsonl":
        for lineno, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict) or "length" not in rec:
                raise ParseError('record has no "length" field', lineno)
            sid = rec.get("id", len(samples))
            if not isinstance(sid, int) or isinstance(sid, bool) or sid < 0:
                raise ParseError(f"id must be a non-negative integer, got {sid!r}", lineno)
            samples.append(Sample(sid, _positive_int(rec["length"], lineno)))
    elif format == "csv":
        rows = csv.reader(text.splitlines())
        header = next(rows, None)
        if header is not None:
            header = [h.strip() for h in header]
            if "length" not in header:
                raise ParseError('CSV header has no "length" column', 1)
            col = header.index("length")
            for lineno, row in enumerate(rows, start=2):
                if not row or not any(c.strip() for c in row):
                    continue
                if col >= len(row):
                    raise ParseError("row is missing the length column", lineno)
                samples.append(Sample(len(samples), _positive_int(row[col], lineno)))
    else:
        for lineno, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            samples.append(Sample(len(samples), _positive_int(raw, lineno)))

    if not samples:
        raise ValidationError("empty corpus")
    out = SampleSet(tuple(samples), source=str(path))
    if max_length is not None:
        out = enforce_max_length(out, max_length, policy)
    return out


def enforce_max_length(
    samples: SampleSet, max_length: int, policy: OverLengthPolicy = "error"
) -> SampleSet:
    """Apply the over-length policy against the global maximum packing length."""
    over = [s for s in samples if s.length > max_length]
    if not over:
        return samples
    if policy == "error":
        ids = ", ".join(str(s.id) for s in over[:5])
        more = "" if len(over) <= 5 else f" (+{len(over) - 5} more)"
        raise ValidationError(
            f"{len(over)} samples exceed max length {max_length}: ids {ids}{more}"
        )
    if policy == "drop":
        kept = tuple(s for s in samples if s.length <= max_length)
    elif policy == "truncate":
        kept = tuple(Sample(s.id, min(s.length, max_length)) for s in samples)
    else:
        raise ValidationError(f"unknown over-length policy {policy!r}")
    if not kept:
        raise ValidationError("empty corpus")
    return SampleSet(kept, source=samples.source)


def dump_lengths(samples: SampleSet, path: str | Path, format: Format = "jsonl") -> None:
    path = Path(path)
    if format == "jsonl":
        lines = [json.dumps({"id": s.id, "length": s.length}) for s in samples]
    elif format == "csv":
        lines = ["id,length"] + [f"{s.id},{s.length}" for s in samples]
    elif format == "raw-lengths":
        lines = [str(s.length) for s in samples]
    else:
        raise ValidationError(f"unknown corpus format {format!r}")
    path.write_text("\n".join(lines) + "\n")


# ── synthetic corpora ─────────────────────────────────────────────────────────

_FAMILIES = {
    "constant": {"value"},
    "uniform": {"low", "high"},
    "lognormal": {"median", "sigma"},
}


@dataclass(frozen=True)
class LengthDist:
    """A length distribution; ``low``/``high`` clip the draws when present."""

    family: str
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        need = _FAMILIES.get(self.family)
        if need is None:
            raise ValidationError(
                f"unknown distribution {self.family!r}; expected one of {sorted(_FAMILIES)}"
            )
        missing = need - set(self.params)
        if missing:
            raise ValidationError(f"{self.family}: missing parameters {sorted(missing)}")
        p = self.params
        if self.family == "constant" and p["value"] < 1:
            raise ValidationError("constant: value must be >= 1")
        if self.family == "uniform" and not 1 <= p["low"] <= p["high"]:
            raise ValidationError("uniform: need 1 <= low <= high")
        if self.family == "lognormal" and (p["median"] <= 0 or p["sigma"] < 0):
            raise ValidationError("lognormal: need median > 0 and sigma >= 0")
        if "low" in p and "high" in p and p["low"] > p["high"]:
            raise ValidationError(f"{self.family}: low exceeds high")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.family == "constant":
            x = np.full(n, float(p["value"]))
        elif self.family == "uniform":
            x = rng.uniform(p["low"], p["high"] + 1, size=n)
        else:
            x = rng.lognormal(math.log(p["median"]), p["sigma"], size=n)
        x = np.floor(x)
        if "low" in p:
            x = np.maximum(x, p["low"])
        if "high" in p:
            x = np.minimum(x, p["high"])
        return np.maximum(x, 1).astype(np.int64)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LengthDist:
        d = dict(d)
        family = d.pop("family")
        return cls(family, {k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, **self.params}


@dataclass(frozen=True)
class SynthSpec:
    count: int
    short_dist: LengthDist
    long_fraction: float = 0.0
    long_dist: LengthDist | None = None
    max_length: int = 128 * 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValidationError("count must be >= 1")
        if not 0.0 <= self.long_fraction <= 1.0:
            raise ValidationError("long_fraction must lie in [0, 1]")
        if self.long_fraction > 0 and self.long_dist is None:
            raise ValidationError("long_fraction > 0 needs a long_dist")
        if self.max_length < 1:
            raise ValidationError("max_length must be >= 1")

    @property
    def long_count(self) -> int:
        return int(math.floor(self.count * self.long_fraction + 0.5))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SynthSpec:
        long_dist = d.get("long_dist")
        return cls(
            count=int(d["count"]),
            short_dist=LengthDist.from_dict(d["short_dist"]),
            long_fraction=float(d.get("long_fraction", 0.0)),
            long_dist=LengthDist.from_dict(long_dist) if long_dist else None,
            max_length=int(d.get("max_length", 128 * 1024)),
            seed=int(d.get("seed", 0)),
        )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["short_dist"] = self.short_dist.to_dict()
        d["long_dist"] = self.long_dist.to_dict() if self.long_dist else None
        return d


def synth_lengths(spec: SynthSpec) -> SampleSet:
    """Draw a hybrid corpus; exactly ``spec.long_count`` samples come from the long dist."""
    rng = np.random.default_rng(spec.seed)
    n_long = spec.long_count
    short = spec.short_dist.draw(rng, spec.count - n_long)
    long = spec.long_dist.draw(rng, n_long) if n_long else np.zeros(0, dtype=np.int64)
    lengths = np.concatenate([short, long])
    lengths = np.minimum(lengths, spec.max_length)
    lengths = lengths[rng.permutation(spec.count)]
    return SampleSet.from_lengths(lengths.tolist(), source=f"synth:seed={spec.seed}")


def hybrid_spec(
    count: int = 10_000,
    long_fraction: float = 0.02,
    seed: int = 0,
    max_length: int = 128 * 1024,
) -> SynthSpec:
    """Short instruction-style lengths mixed with a long-context tail.

    Short lengths follow a lognormal (median 2000) clipped to 16K; long ones
    are uniform over the top eighth of ``max_length``.
    """
    return SynthSpec(
        count=count,
        short_dist=LengthDist("lognormal", {"median": 2000, "sigma": 0.5, "low": 16, "high": 16 * 1024}),
        long_fraction=long_fraction,
        long_dist=LengthDist("uniform", {"low": max_length * 7 // 8, "high": max_length}),
        max_length=max_length,
        seed=seed,
    )


def sft_spec(count: int = 10_000, seed: int = 0, max_length: int = 128 * 1024) -> SynthSpec:
    """Short-only instruction-tuning lengths (lognormal, median 400, clipped to 16K)."""
    return SynthSpec(
        count=count,
        short_dist=LengthDist("lognormal", {"median": 400, "sigma": 1.0, "low": 16, "high": 16 * 1024}),
        max_length=max_length,
        seed=seed,
    )


SYNTH_PRESETS = {"hybrid": hybrid_spec, "sft": sft_spec}


def load_synth_spec(source: str, seed: int | None = None) -> SynthSpec:
    """A preset name (``hybrid``, ``sft``, optionally ``name:count``) or a JSON file.

    ``seed``, when given, replaces whatever seed the source specifies.
    """
    name, _, count = source.partition(":")
    if name in SYNTH_PRESETS:
        kwargs = {"count": int(count)} if count else {}
        spec = SYNTH_PRESETS[name](**kwargs)
    else:
        path = Path(source)
        try:
            spec = SynthSpec.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: malformed synth spec ({exc})") from None
    if seed is not None:
        spec = SynthSpec(spec.count, spec.short_dist, spec.long_fraction, spec.long_dist, spec.max_length, seed)
    return spec
