"""Command-line entry point: run scenarios, verify acceptance checks, inspect automata."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from collections import Counter
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .config import SCENARIOS, ConfigError, ScenarioConfig, describe_keys, load
from .kvcache import ContractViolation
from .sam import SamCapacityError, SuffixAutomaton

OUT_DIR_ENV = "AGENTINFER_OUT_DIR"
DEFAULT_OUT_DIR = "agentinfer-out"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CONTRACT = 0, 1, 2, 3

log = logging.getLogger("agentinfer")


# -- config resolution -------------------------------------------------------------


def resolve_config(ref: str) -> Path:
    """A config file path, or the name of a bundled preset."""
    p = Path(ref)
    if p.is_file():
        return p
    preset = resources.files("agentinfer.presets").joinpath(f"{ref}.yaml")
    if preset.is_file():
        return Path(str(preset))
    from .sim.scenarios import preset_names

    raise ConfigError("", f"no config file or preset named {ref!r} (presets: {', '.join(preset_names())})")


def out_dir_for(cfg: ScenarioConfig, flag: str | None) -> Path:
    return Path(flag or cfg.output.dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)


# -- run -------------------------------------------------------------------------------


def _write_json(path: Path, data: Any) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _write_variants(reports: dict, out: Path, stem: str) -> list[Path]:
    paths: list[Path] = []
    for name, rep in reports.items():
        paths += rep.write(out, f"{stem}_{name.lstrip('+')}")
    summary = {name: rep.summary() for name, rep in reports.items()}
    paths.append(_write_json(out / f"{stem}_summary.json", summary))
    return paths


def _sched_summary(reports: dict, cfg: ScenarioConfig) -> list[str]:
    from .sim.scenarios import lambda_trace

    hit = {p: r.hit_rate for p, r in reports.items()}
    e2e = {p: r.mean("e2e") for p, r in reports.items()}
    trace = lambda_trace(reports["agentsched"], cfg.sched.lambda_max)
    yes = lambda b: "yes" if b else "no"  # noqa: E731
    return [
        "policy       hit_rate  mean_e2e",
        *(f"{p:<12} {hit[p]:8.3f}  {e2e[p]:8.3f}" for p in reports),
        f"hit ordering agentsched > fcfs > sjf: {yes(hit['agentsched'] > hit['fcfs'] > hit['sjf'])}",
        f"agentsched mean E2E < fcfs: {yes(e2e['agentsched'] < e2e['fcfs'])}",
        f"sjf mean E2E <= fcfs: {yes(e2e['sjf'] <= e2e['fcfs'])}",
        f"long share of admissions, low/high price: {trace.long_share_low:.3f}/{trace.long_share_high:.3f} "
        f"({yes(trace.ordered)})",
    ]


def run_config(cfg: ScenarioConfig, out: Path) -> tuple[list[Path], list[str]]:
    """Simulate one scenario and write its reports; returns written paths and summary lines."""
    from .sim import scenarios as sc

    seed = cfg.seed
    stem = cfg.output.stem or f"{cfg.scenario}_seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    if cfg.scenario == "single":
        rep = sc.run_scenario(cfg, seed)
        paths = rep.write(out, stem)
        lines = [f"{k}: {v}" for k, v in rep.summary().items()]
    elif cfg.scenario == "ote_sweep":
        pts = sc.scenario_ote_vs_context(cfg, seed)
        cols = ("context_len", "ote_sam", "shr_sam", "ote_memory", "shr_memory")
        rows = [",".join(cols)] + [
            f"{p.context_len},{p.ote_sam:.6f},{p.shr_sam:.6f},{p.ote_memory:.6f},{p.shr_memory:.6f}" for p in pts
        ]
        paths = [out / f"{stem}.csv", out / f"{stem}.json"]
        paths[0].write_text("\n".join(rows) + "\n")
        _write_json(paths[1], [dict(zip(cols, (p.context_len, p.ote_sam, p.shr_sam, p.ote_memory, p.shr_memory))) for p in pts])
        lines = rows
    else:
        run = {
            "sched_compare": sc.scenario_sched_compare,
            "sam_async": sc.scenario_sam_async,
            "collab": sc.scenario_collab,
            "compress": sc.scenario_compress,
            "composite": sc.scenario_composite,
        }[cfg.scenario]
        reports = run(cfg, seed)
        paths = _write_variants(reports, out, stem)
        if cfg.scenario == "sched_compare":
            lines = _sched_summary(reports, cfg)
            (out / f"{stem}_ordering.txt").write_text("\n".join(lines) + "\n")
            paths.append(out / f"{stem}_ordering.txt")
        else:
            for name, rep in reports.items():
                s = rep.summary()
                lines.append(
                    f"{name:<12} qps={s['qps']:.5f} mean_e2e={s['mean_e2e']:.3f} mean_ttft={s['mean_ttft']:.3f} "
                    f"hit_rate={s['hit_rate']:.3f} ote={s['ote']:.3f}"
                )
    return paths, lines


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load(resolve_config(args.config), args.set, args.seed)
    out = out_dir_for(cfg, args.out_dir)
    t = time.perf_counter()
    paths, lines = run_config(cfg, out)
    for line in lines:
        print(line)
    for p in paths:
        print(f"wrote {p}")
    log.info("scenario %s seed %d finished in %.1fs", cfg.scenario, cfg.seed, time.perf_counter() - t)
    return EXIT_OK


# -- verify ---------------------------------------------------------------------------


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_all

    verdicts = []
    for v in run_all(args.only or None):
        print(v.line(), flush=True)
        verdicts.append(v)
    failed = [v.number for v in verdicts if not v.passed]
    print(f"{len(verdicts) - len(failed)}/{len(verdicts)} checks passed" + (f"; failed: {failed}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


# -- sam inspection ---------------------------------------------------------------------------


def read_tokens(text: str) -> list[int]:
    try:
        return [int(t) for t in re.split(r"[\s,]+", text.strip()) if t]
    except ValueError as exc:
        raise ConfigError("", f"token lists must be integers: {exc}") from None


def _build_sam(files: Sequence[str], max_states: int | None) -> tuple[SuffixAutomaton, float]:
    sam = SuffixAutomaton(max_states=max_states)
    t = time.perf_counter()
    for f in files:
        try:
            text = Path(f).read_text()
        except OSError as exc:
            raise ConfigError("", f"cannot read token file {f}: {exc.strerror}") from None
        sam.add_document(read_tokens(text))
    return sam, time.perf_counter() - t


def cmd_sam(args: argparse.Namespace) -> int:
    try:
        sam, secs = _build_sam(args.files, args.max_states)
    except SamCapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    transitions = sum(len(d) for d in sam.next)
    n = len(sam.corpus)
    if args.sam_cmd == "build":
        print(f"documents: {len(args.files)}")
        print(f"tokens (with separators): {n}")
        print(f"states: {sam.num_states}")
        print(f"transitions: {transitions}")
        print(f"build time: {secs:.4f}s")
    elif args.sam_cmd == "stats":
        degrees = Counter(len(d) for d in sam.next)
        print(f"states: {sam.num_states} (bound {max(1, 2 * n - 1)})")
        print(f"transitions: {transitions}")
        print(f"longest state: {max(sam.length)}")
        print(f"distinct substrings: {sam.count_accepted() - 1}")
        print("out-degree histogram: " + " ".join(f"{d}:{c}" for d, c in sorted(degrees.items())))
    else:
        cur = sam.cursor()
        for tok in read_tokens(args.query):
            cur = sam.advance(cur, tok)
            if args.trace:
                print(f"token {tok}: match_len={cur.match_len} state={cur.state}")
        draft, used = sam.draft_with_len(cur, args.k, args.min_match)
        print(f"match_len: {cur.match_len}")
        print(f"draft ({used}-token match): {' '.join(map(str, draft)) if draft else '(none)'}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------------


def _keys_epilog() -> str:
    rows = [f"  {k} = {json.dumps(v)}" for k, v in describe_keys()]
    return (
        "config keys (override with --set key=value):\n"
        + "\n".join(rows)
        + f"\n\nscenarios: {', '.join(SCENARIOS)}\n"
        + f"output directory: --out-dir, else output.dir, else ${OUT_DIR_ENV}, else ./{DEFAULT_OUT_DIR}\n"
        + "exit codes: 0 ok, 1 check failed, 2 config error, 3 contract violation"
    )


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    p.add_argument(
        "--set", action="append", default=d([]), metavar="KEY=VALUE", help="override a config key (repeatable)"
    )
    p.add_argument("--out-dir", default=d(None), help=f"report directory (default: output.dir, then ${OUT_DIR_ENV}, then ./{DEFAULT_OUT_DIR})")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False), help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="agentinfer",
        description="Simulate agent-serving scenarios and check their properties.",
        epilog=_keys_epilog(),
        formatter_class=fmt,
        parents=[_global_flags(False)],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    shared = [_global_flags(True)]

    run = sub.add_parser("run", help="run a scenario config or bundled preset", parents=shared, epilog=_keys_epilog(), formatter_class=fmt)
    run.add_argument("config", help="YAML config path or preset name")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the acceptance checks on the bundled presets", parents=shared)
    ver.add_argument("--only", type=int, action="append", metavar="N", help="run only check N (repeatable)")
    ver.set_defaults(func=cmd_verify)

    sam = sub.add_parser("sam", help="inspect suffix automata built from token files", parents=shared)
    sam_sub = sam.add_subparsers(dest="sam_cmd", required=True)
    for name, text in (("build", "build and report size"), ("stats", "state statistics"), ("draft", "match a query and draft")):
        sp = sam_sub.add_parser(name, help=text, parents=shared)
        sp.add_argument("files", nargs="+", help="token files (integers separated by whitespace or commas); one document each")
        sp.add_argument("--max-states", type=int, default=None)
        if name == "draft":
            sp.add_argument("--query", required=True, help="query tokens, e.g. '3 4 5'")
            sp.add_argument("-k", type=int, default=4, help="draft length")
            sp.add_argument("--min-match", type=int, default=1)
            sp.add_argument("--trace", action="store_true", help="print the match length after every query token")
        sp.set_defaults(func=cmd_sam)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
