"""Command-line front end.

Every stage is invocable on its own (`parse`, `profile`, `rank`, `optimize`,
`verify`, `bench`, `gen`) and `pipeline` chains them end-to-end, writing a
deterministic artifact tree. Wall-clock timings go to stderr only so that
everything written to stdout or disk is reproducible byte for byte.

Exit codes: 0 success, 1 a retained rewrite failed its final whole-block
verification, 2 parse/validation/runtime fault in the input, 3 backend or
configuration problem.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from . import figures
from .bench import collect_metrics, compare_reports, render_report
from .corpus import GeneratorConfig, generate, preset_config, write_ground_truth
from .cost import (
    DEFAULT_WEIGHTS,
    CostReport,
    WeightTable,
    profile_program,
    rank_statements,
    ranking_to_tsv,
)
from .errors import ConfigError, InterpError, LiftError, ParseError, ReplayMissError, ValidationError
from .ir import Program
from .rewrite import BackendConfig, optimize_program
from .text import parse_program, print_program, print_stmt_body
from .verify import VerifyPolicy, verify_rewrite

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    input: str = ""
    out: str = ""
    weights: WeightTable = DEFAULT_WEIGHTS
    backend: BackendConfig = field(default_factory=BackendConfig)
    k: int = 10
    runs: int = 100
    trials: int = 64
    seed: int = 0
    format: str = "table"


_BACKEND_KEYS = {
    "kind": "kind",
    "endpoint": "endpoint",
    "model": "model_name",
    "api_key_env": "api_key_env",
    "max_parallel": "max_parallel",
    "timeout": "timeout",
    "replay": "replay_path",
}
_TOP_KEYS = {"weights", "backend", "k", "runs", "trials", "seed", "format"}


def _load_config_file(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err}") from err
    except ValueError as err:
        raise ConfigError(f"config file is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "api_key" in doc.get("backend", {}):
        raise ConfigError(
            "config files must not carry API keys; export the key in the "
            "environment variable named by backend.api_key_env instead"
        )
    return doc


def _weights_from(doc: dict) -> WeightTable:
    overrides = doc.get("weights", {})
    if not isinstance(overrides, dict):
        raise ConfigError("weights must be a JSON object of weight-name: integer")
    known = {f.name for f in fields(WeightTable)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown weight names: {sorted(unknown)}")
    return replace(DEFAULT_WEIGHTS, **{k: int(v) for k, v in overrides.items()})


def _backend_from(doc: dict, args: argparse.Namespace) -> BackendConfig:
    section = doc.get("backend", {})
    if not isinstance(section, dict):
        raise ConfigError("backend must be a JSON object")
    unknown = set(section) - set(_BACKEND_KEYS)
    if unknown:
        raise ConfigError(f"unknown backend config keys: {sorted(unknown)}")
    kwargs = {_BACKEND_KEYS[k]: v for k, v in section.items()}
    cfg = BackendConfig(**kwargs)
    # CLI flags override the file
    if getattr(args, "backend", None):
        cfg = replace(cfg, kind=args.backend)
    if getattr(args, "endpoint", None):
        cfg = replace(cfg, endpoint=args.endpoint)
    if getattr(args, "model", None):
        cfg = replace(cfg, model_name=args.model)
    if getattr(args, "replay", None):
        cfg = replace(cfg, replay_path=args.replay)
    return cfg


def _run_config(args: argparse.Namespace) -> RunConfig:
    doc = _load_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = RunConfig(weights=_weights_from(doc), backend=_backend_from(doc, args))
    for name in ("k", "runs", "trials", "seed", "format"):
        if name in doc:
            setattr(cfg, name, type(getattr(cfg, name))(doc[name]))
    flag_map = {"k": "top", "runs": "runs", "trials": "trials", "seed": "seed", "format": "format"}
    for name, flag in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.input = getattr(args, "input", "") or ""
    cfg.out = getattr(args, "out", "") or ""
    return cfg


def _read_program(path: str) -> Program:
    text = Path(path).read_text(encoding="utf-8")
    return parse_program(text, name=Path(path).stem)


# -- subcommands


def cmd_parse(args: argparse.Namespace) -> int:
    sys.stdout.write(print_program(_read_program(args.input)))
    return 0


def _profile_lines(report: CostReport) -> str:
    lines = ["# addr\tstatic\tdyn_mean\tflags"]
    for b in report.blocks:
        flag = "opaque" if b.opaque else "-"
        lines.append(f"0x{b.addr:x}\t{b.static_cost}\t{b.dyn_cost_mean:.6f}\t{flag}")
    return "".join(ln + "\n" for ln in lines)


def _profile_json(report: CostReport) -> str:
    doc = {
        "runs": report.runs,
        "seed": report.seed,
        "blocks": [
            {
                "addr": f"0x{b.addr:x}",
                "static_cost": b.static_cost,
                "dyn_cost_mean": b.dyn_cost_mean,
                "opaque": b.opaque,
            }
            for b in report.blocks
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def cmd_profile(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    program = _read_program(args.input)
    report = profile_program(program, runs=cfg.runs, seed=cfg.seed, weights=cfg.weights)
    sys.stdout.write(_profile_lines(report))
    wall = sum(b.wall_mean for b in report.blocks)
    print(f"wall: {wall * 1e6:.1f} us mean per full pass", file=sys.stderr)
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    program = _read_program(args.input)
    ranking = rank_statements(program, weights=cfg.weights, k=cfg.k)
    sys.stdout.write(ranking_to_tsv(ranking, program))
    return 0


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    program = _read_program(args.input)
    policy = VerifyPolicy(trials=cfg.trials, seed=cfg.seed)
    optimized, rlog = optimize_program(
        program, k=cfg.k, cfg=cfg.backend, weights=cfg.weights, policy=policy
    )
    log_text = json.dumps(rlog.as_json_dict(), sort_keys=True, indent=2) + "\n"
    if cfg.out:
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "optimized.vir").write_text(print_program(optimized), encoding="utf-8")
        (outdir / "rewrite_log.json").write_text(log_text, encoding="utf-8")
    else:
        sys.stdout.write(print_program(optimized))
    print(
        f"candidates={len(rlog.entries)} retained={rlog.retained_count}",
        file=sys.stderr,
    )
    return 1 if rlog.any_final_mismatch else 0


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    left = _read_program(args.original)
    right = _read_program(args.optimized)
    policy = VerifyPolicy(trials=cfg.trials, seed=cfg.seed, memory_image=args.memory_image)
    rc = 0
    for addr in sorted(set(left.blocks) | set(right.blocks)):
        if addr not in left.blocks or addr not in right.blocks:
            side = args.optimized if addr not in right.blocks else args.original
            print(f"0x{addr:x}\tMissing\tblock absent from {side}")
            rc = 1
            continue
        verdict = verify_rewrite(left.blocks[addr], right.blocks[addr], policy)
        detail = verdict.first_divergence or verdict.reason
        line = f"0x{addr:x}\t{verdict.kind.value}"
        if detail:
            line += f"\t{detail}"
        print(line)
        if not verdict.accepted:
            rc = 1
    return rc


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    before = _read_program(args.original)
    after = _read_program(args.optimized)
    comparison = compare_reports(
        before.name,
        collect_metrics(before, runs=cfg.runs, seed=cfg.seed, weights=cfg.weights),
        collect_metrics(after, runs=cfg.runs, seed=cfg.seed, weights=cfg.weights),
    )
    sys.stdout.write(render_report(comparison, cfg.format))
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    if args.preset:
        cfg = preset_config(args.preset, seed=args.seed or 0)
        if args.blocks or args.stmts or args.rate is not None:
            raise ConfigError("--preset does not combine with --blocks/--stmts/--rate")
    else:
        if not (args.blocks and args.stmts and args.rate is not None):
            raise ConfigError("gen needs either --preset or all of --blocks/--stmts/--rate")
        cfg = GeneratorConfig(
            blocks=args.blocks,
            stmts_per_block=args.stmts,
            redundancy_rate=args.rate,
            seed=args.seed or 0,
            exits=args.exits,
        )
    program, truth = generate(cfg)
    name = args.name or cfg.preset or "corpus"
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    vir_path = outdir / f"{name}.vir"
    truth_path = outdir / f"{name}.truth.tsv"
    vir_path.write_text(print_program(program), encoding="utf-8")
    write_ground_truth(str(truth_path), truth)
    print(f"{vir_path}\n{truth_path}")
    return 0


def run_pipeline(cfg: RunConfig) -> int:
    """parse -> profile -> rank -> optimize -> bench -> report.

    Artifacts land in cfg.out only after the input has parsed and every
    stage has run; a malformed input therefore writes nothing.
    """
    if not cfg.out:
        raise ConfigError("pipeline requires --out DIR")
    program = _read_program(cfg.input)

    t0 = time.perf_counter()
    profile = profile_program(program, runs=cfg.runs, seed=cfg.seed, weights=cfg.weights)
    t_profile = time.perf_counter()

    policy = VerifyPolicy(trials=cfg.trials, seed=cfg.seed)
    optimized, rlog = optimize_program(
        program, k=cfg.k, cfg=cfg.backend, weights=cfg.weights, policy=policy
    )
    t_optimize = time.perf_counter()

    comparison = compare_reports(
        program.name,
        collect_metrics(program, runs=cfg.runs, seed=cfg.seed, weights=cfg.weights),
        collect_metrics(optimized, runs=cfg.runs, seed=cfg.seed, weights=cfg.weights),
    )
    t_bench = time.perf_counter()

    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    texts = {
        "optimized.vir": print_program(optimized),
        "rewrite_log.json": json.dumps(rlog.as_json_dict(), sort_keys=True, indent=2) + "\n",
        "report.json": render_report(comparison, "structured"),
        "report.txt": render_report(comparison, "table"),
        "profile.json": _profile_json(profile),
        "ranking.tsv": ranking_to_tsv(profile.ranking, program),
    }
    for filename, text in texts.items():
        (outdir / filename).write_text(text, encoding="utf-8")
    figures.profile_figure(profile, str(outdir / "profile.png"))
    figures.comparison_figure(comparison, str(outdir / "report.png"))

    sys.stdout.write(render_report(comparison, cfg.format))
    print(
        "wall: profile {:.3f}s optimize {:.3f}s bench {:.3f}s".format(
            t_profile - t0, t_optimize - t_profile, t_bench - t_optimize
        ),
        file=sys.stderr,
    )
    if rlog.any_final_mismatch:
        print("final whole-block verification mismatched; block(s) reverted", file=sys.stderr)
        return 1
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    return run_pipeline(_run_config(args))


# -- argument plumbing


def _add_run_flags(p: argparse.ArgumentParser, *names: str) -> None:
    if "top" in names:
        p.add_argument("--top", type=int, metavar="K", help="how many ranked statements to take")
    if "runs" in names:
        p.add_argument("--runs", type=int, metavar="N", help="profiling runs per block")
    if "trials" in names:
        p.add_argument("--trials", type=int, metavar="R", help="differential trials per rewrite")
    p.add_argument("--seed", type=int, metavar="S", help="base seed for all derived streams")
    p.add_argument("--config", metavar="FILE", help="JSON config file")
    if "format" in names:
        p.add_argument("--format", choices=("table", "structured"), help="report format")
    if "backend" in names:
        p.add_argument("--backend", choices=("rule", "llm", "replay"), help="rewrite backend")
        p.add_argument("--endpoint", metavar="URL", help="chat-completion endpoint for --backend llm")
        p.add_argument("--model", metavar="NAME", help="model name for --backend llm")
        p.add_argument("--replay", metavar="FILE", help="response transcript for --backend replay")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liftir",
        description="Profile, rewrite, verify, and benchmark textual IR super-blocks.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log details to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse and canonically reprint a program")
    p.add_argument("input")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("profile", help="per-block mean execution cost")
    p.add_argument("input")
    _add_run_flags(p, "runs")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("rank", help="costliest statements program-wide")
    p.add_argument("input")
    _add_run_flags(p, "top")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("optimize", help="rewrite the top-K statements with verification")
    p.add_argument("input")
    p.add_argument("--out", metavar="DIR", help="write optimized.vir and rewrite_log.json here")
    _add_run_flags(p, "top", "trials", "backend")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("verify", help="check two programs block by block")
    p.add_argument("original")
    p.add_argument("optimized")
    p.add_argument(
        "--memory-image",
        action="store_true",
        help="compare final memory images instead of ordered write lists",
    )
    _add_run_flags(p, "trials")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="before/after metrics report")
    p.add_argument("original")
    p.add_argument("optimized")
    _add_run_flags(p, "runs", "format")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="generate a synthetic corpus with ground truth")
    p.add_argument("--preset", help="named corpus shape")
    p.add_argument("--blocks", type=int, help="block count")
    p.add_argument("--stmts", type=int, help="statements per block")
    p.add_argument("--rate", type=float, help="injected redundancy rate")
    p.add_argument("--exits", type=int, default=1, help="side exits per block")
    p.add_argument("--name", help="basename for the emitted files")
    p.add_argument("--out", metavar="DIR", help="output directory (default .)")
    p.add_argument("--seed", type=int, help="generator seed")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pipeline", help="profile, optimize, verify, and report end-to-end")
    p.add_argument("input")
    p.add_argument("--out", metavar="DIR", required=True, help="artifact directory")
    _add_run_flags(p, "top", "runs", "trials", "backend", "format")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, ReplayMissError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (ParseError, ValidationError, InterpError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except LiftError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
