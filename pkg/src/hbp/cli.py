"""``hbp`` command line: one subcommand per pipeline stage.

    hbp select-groups --profile table:prof.csv --out groups.json
    hbp pack --synth hybrid --groups groups.json --devices 32 --out run/
    hbp schedule --plan run/plan.json --warmup-iters 100 --out run/
    hbp simulate --plan run/plan.json --json
    hbp compare naive=a/plan.json hbp=b/plan.json --out cmp.csv
    hbp metrics --plan run/plan.json

Exit codes: 0 success, 2 invalid input, 3 infeasible, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import autoselect, balance, ingest, metrics, schedule, sim
from .core import SampleSet, format_tokens, parse_tokens
from .costmodel import Profiler, load_profile
from .errors import InfeasibleError, ValidationError
from .packing import STRATEGIES

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
PROFILE_DIR_ENV = "HBP_PROFILE_DIR"
BUILTIN_PROFILES = Path(__file__).parent / "profiles"
PLAN_MODES = ("hbp", "hier", "naive", "sorted", "random")

log = logging.getLogger("hbp")


def _int_list(text: str) -> list[int]:
    try:
        return [parse_tokens(x) for x in text.split(",") if x.strip()]
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def resolve_profile(spec: str | None) -> Profiler:
    """Named profiles are looked up in ``$HBP_PROFILE_DIR`` and then the built-in set."""
    if spec and ":" not in spec and os.sep not in spec and spec != "analytic":
        stem = spec.removesuffix(".csv").removesuffix(".json")
        dirs = [Path(d) for d in os.environ.get(PROFILE_DIR_ENV, "").split(os.pathsep) if d]
        for d in dirs + [BUILTIN_PROFILES]:
            for ext in (".csv", ".json"):
                cand = d / (stem + ext)
                if cand.is_file():
                    return load_profile(str(cand))
    return load_profile(spec)


def _load_corpus(args: argparse.Namespace) -> SampleSet:
    if args.corpus:
        return ingest.load_lengths(
            args.corpus, args.format, max_length=args.max_length, policy=args.length_policy
        )
    spec = ingest.load_synth_spec(args.synth, seed=args.seed)
    out = ingest.synth_lengths(spec)
    if args.max_length is not None:
        out = ingest.enforce_max_length(out, args.max_length, args.length_policy)
    return out


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ── subcommands ───────────────────────────────────────────────────────────────


def cmd_select_groups(args: argparse.Namespace) -> int:
    profile = resolve_profile(args.profile)
    groups = autoselect.select_groups(args.lengths, profile, args.sp, args.c_min, args.c_max)
    autoselect.save_groups(groups, args.out)
    if args.json:
        sys.stdout.write(json.dumps(autoselect.groups_to_dict(groups), sort_keys=True) + "\n")
    else:
        for g in groups:
            print(f"{format_tokens(g.length)}\tsp={g.config.sp}\tckpt={g.config.ckpt}")
    return EXIT_OK


def cmd_pack(args: argparse.Namespace) -> int:
    groups = autoselect.load_groups(args.groups)
    samples = _load_corpus(args)
    if args.mode in ("hbp", "hier"):
        plan = balance.build_plan(
            samples, groups, args.strategy, args.devices, args.seed, balance=args.mode == "hbp"
        )
    elif args.mode == "naive":
        plan = balance.build_naive_plan(samples, groups[-1], args.strategy, args.devices, args.seed)
    else:
        plan = balance.build_batching_plan(samples, groups[-1], args.mode, args.devices, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    balance.save_plan(plan, out / "plan.json")
    rep = metrics.report(plan)
    (out / "metrics.json").write_text(rep.to_json(traces=False) + "\n")
    sys.stdout.write(rep.to_json(traces=False) + "\n" if args.json else rep.to_text())
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    plan = balance.load_plan(args.plan)
    spec = schedule.CurriculumSpec(
        warmup_iterations=args.warmup_iters,
        short_group_cutoff=args.short_cutoff,
        pattern=args.pattern,
        seed=args.seed,
    )
    ordered = schedule.curriculum_order(plan, spec)
    rs = schedule.assign_runtime(ordered)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    balance.save_plan(ordered, out / "plan.json")
    (out / "schedule.csv").write_text(rs.to_csv())
    summary = {
        "iterations": len(rs.entries),
        "warmup_iterations": ordered.warmup_iterations,
        "switch_count": rs.switch_count,
    }
    if args.json:
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    else:
        sys.stdout.write("".join(f"{k}={v}\n" for k, v in summary.items()))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    plan = balance.load_plan(args.plan)
    rep = sim.simulate(plan, resolve_profile(args.profile), args.step_overhead)
    _emit(rep.to_json(traces=args.traces) if args.json else rep.to_table(), args.out)
    return EXIT_OK


def _named_plans(items: Sequence[str]) -> dict[str, str]:
    named: dict[str, str] = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).parent.name or item, item
        if name in named:
            raise ValidationError(f"duplicate plan name {name!r}")
        named[name] = path
    return named


def cmd_compare(args: argparse.Namespace) -> int:
    profile = resolve_profile(args.profile)
    reports = {
        name: sim.simulate(balance.load_plan(path), profile, args.step_overhead)
        for name, path in _named_plans(args.plans).items()
    }
    rows = sim.compare(reports, args.baseline)
    if args.json:
        text = json.dumps([r.__dict__ for r in rows], sort_keys=True, indent=2) + "\n"
    else:
        text = sim.comparison_csv(rows)
    _emit(text, args.out)
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    rep = metrics.report(balance.load_plan(args.plan))
    _emit(rep.to_json(traces=args.traces) + "\n" if args.json else rep.to_text(), args.out)
    return EXIT_OK


# ── parser ────────────────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hbp", description="Hierarchical balance packing planner")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, out_required: bool = False) -> None:
        sp.add_argument("--seed", type=int, default=0, help="single source of randomness")
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        sp.add_argument("--out", required=out_required)

    s = sub.add_parser("select-groups", help="choose packing lengths with their sp/ckpt")
    s.add_argument("--lengths", type=_int_list, default=list(autoselect.DEFAULT_LENGTHS))
    s.add_argument("--sp", type=_int_list, default=list(autoselect.DEFAULT_SP))
    s.add_argument("--profile", default="analytic")
    s.add_argument("--c-min", type=int, default=0)
    s.add_argument("--c-max", type=int, default=None)
    common(s, out_required=True)
    s.set_defaults(func=cmd_select_groups)

    s = sub.add_parser("pack", help="build a plan manifest and its metrics")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus", help="length corpus file")
    src.add_argument("--synth", help="synthetic preset (hybrid, sft, name:count) or spec JSON")
    s.add_argument("--format", choices=ingest.FORMATS, default="jsonl")
    s.add_argument("--max-length", type=parse_tokens, default=None)
    s.add_argument("--length-policy", choices=("error", "truncate", "drop"), default="error")
    s.add_argument("--groups", required=True, help="groups manifest from select-groups")
    s.add_argument("--strategy", choices=STRATEGIES, default="isf")
    s.add_argument("--mode", choices=PLAN_MODES, default="hbp")
    s.add_argument("--devices", type=int, default=8)
    common(s, out_required=True)
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("schedule", help="curriculum order and per-step runtime configs")
    s.add_argument("--plan", required=True)
    s.add_argument("--warmup-iters", type=int, default=500)
    s.add_argument("--short-cutoff", type=int, default=None)
    s.add_argument("--pattern", choices=("shuffle", "round_robin"), default="shuffle")
    common(s, out_required=True)
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("simulate", help="replay a plan against a cost profile")
    s.add_argument("--plan", required=True)
    s.add_argument("--profile", default="analytic")
    s.add_argument("--step-overhead", type=float, default=0.0)
    s.add_argument("--traces", action="store_true", help="include per-iteration detail")
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="speedups between plans over the same corpus")
    s.add_argument("plans", nargs="+", help="plan manifests, optionally name=path")
    s.add_argument("--baseline", default=None)
    s.add_argument("--profile", default="analytic")
    s.add_argument("--step-overhead", type=float, default=0.0)
    common(s)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("metrics", help="balance metrics of a plan")
    s.add_argument("--plan", required=True)
    s.add_argument("--traces", action="store_true")
    common(s)
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "devices", 1) < 1:
        parser.error("--devices must be >= 1")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"hbp: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValidationError as exc:
        print(f"hbp: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"hbp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
