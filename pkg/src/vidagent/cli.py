"""Command-line entry point: ``vidagent ingest | ask | ablate``.

Exit codes:
  0  success
  1  input file missing, unreadable or malformed
  2  backend configuration error (no credentials, bad cassette, bad flags)
  3  the search produced no answer
  4  backend failure during a session (provider error, transport, cassette miss)

Settings come from flags first, then the JSON file given by ``--config``, then
environment variables. stdout carries only the answer or report; logs go to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .aggregator import aggregate
from .backend import ChatBackend, OpenAIChatBackend, RecordReplayBackend
from .errors import BackendConfigError, BackendError, CorruptCassette, NoVotes
from .memory import DEFAULT_TAU, MemoryTypeSelection, TaskMemory, ingest_file, select_memory_type
from .planner import POLICIES, Limits, RewardConfig, run
from .toolkit import default_registry, load_registry

logger = logging.getLogger("vidagent")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_NO_ANSWER, EXIT_BACKEND = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError("config file must hold a JSON object")
    config["_dir"] = str(Path(path).resolve().parent)
    return config


def _pick(flag, config: dict, section: str, key: str, default):
    if flag is not None:
        return flag
    return config.get(section, {}).get(key, default)


def make_backend(args, config: dict) -> ChatBackend:
    """Live client, optionally wrapped in a cassette; replay needs no credentials."""
    if (args.record or args.replay) and not args.cassette:
        raise UsageError("--record/--replay need --cassette PATH")
    if args.record and args.replay:
        raise UsageError("--record and --replay are mutually exclusive")
    if args.cassette and args.replay:
        return RecordReplayBackend(None, args.cassette, "replay")
    section = config.get("backend", {})
    live = OpenAIChatBackend(
        api_key=section.get("api_key"),
        base_url=section.get("base_url"),
        model=section.get("model"),
        timeout=float(section.get("timeout", 60.0)),
        retries=int(section.get("retries", 2)),
    )
    if args.cassette:
        return RecordReplayBackend(live, args.cassette, "record")
    return live


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON settings file (backend, registry, limits, defaults)")
    p.add_argument("--cassette", help="request/response log for offline, repeatable sessions")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--record", action="store_true", help="call the live backend and append to the cassette")
    mode.add_argument("--replay", action="store_true", help="serve every completion from the cassette")


# --------------------------------------------------------------------------
# ingest

def cmd_ingest(args) -> int:
    path = Path(args.records_path)
    if not path.is_file():
        print(f"error: cannot read records file {path}", file=sys.stderr)
        return EXIT_INPUT
    config = load_config(args.config)
    tau = _pick(args.tau, config, "memory", "tau", DEFAULT_TAU)
    if args.memory == "auto":
        if not args.question:
            raise UsageError("--question is required unless --memory is given")
        selection = select_memory_type(args.question, make_backend(args, config))
    else:
        selection = MemoryTypeSelection.from_label({"space": "space-dominant", "time": "time-dominant"}.get(args.memory, args.memory))
    try:
        memory = ingest_file(path, selection, float(tau), args.video_id)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: cannot read records file {path}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    memory.save(args.out)
    logger.info("memory (%s) written to %s; %d record(s) rejected", selection.label, args.out, memory.rejected)
    for table, count in memory.row_counts().items():
        print(f"{table}: {count}")
    return EXIT_OK


# --------------------------------------------------------------------------
# ask

def cmd_ask(args) -> int:
    config = load_config(args.config)
    if not Path(args.memory_path).is_file():
        print(f"error: memory store {args.memory_path} not found", file=sys.stderr)
        return EXIT_INPUT
    memory = TaskMemory.load(args.memory_path)
    registry_path = args.registry or config.get("registry")
    if registry_path and not Path(registry_path).is_absolute() and not args.registry:
        registry_path = str(Path(config["_dir"]) / registry_path)
    registry = load_registry(registry_path) if registry_path else default_registry()

    n = int(_pick(args.n, config, "ask", "n", 2))
    reward = RewardConfig(
        alpha=float(_pick(args.alpha, config, "ask", "alpha", 1.0)),
        beta=float(_pick(args.beta, config, "ask", "beta", 0.5)),
        n_iterations=n,
    )
    policy = _pick(args.policy, config, "ask", "policy", "mcts")
    seed = int(_pick(args.seed, config, "ask", "seed", 0))
    lim = config.get("limits", {})
    limits = Limits(
        max_depth=int(_pick(args.max_depth, config, "limits", "max_depth", 8)),
        max_children=lim.get("max_children"),
        parse_retries=int(lim.get("parse_retries", 2)),
    )
    choices = [c.strip() for c in args.choices.split(",") if c.strip()] if args.choices else None
    mode = args.aggregate or ("vote" if choices else "summarize")
    if mode == "vote" and not choices:
        raise UsageError("--aggregate vote needs --choices")

    backend = make_backend(args, config)
    video = args.video or memory.video_id
    try:
        result = run(args.question, video, memory, registry, backend, reward, policy, seed, limits)
        if not result.answers:
            print("error: the search finished without a non-failure answer", file=sys.stderr)
            final = None
        else:
            final = aggregate(result.answers, args.question, backend, mode, choices)
    except NoVotes as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_ANSWER
    if args.trace_out:
        trace = result.trace()
        trace["aggregate"] = mode
        trace["final_answer"] = final
        Path(args.trace_out).write_text(json.dumps(trace, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                                        encoding="utf-8")
    if final is None:
        return EXIT_NO_ANSWER
    print(final)
    return EXIT_OK


# --------------------------------------------------------------------------
# ablate

def parse_seeds(text: str) -> list[int]:
    """``"0-49"``, ``"1,2,5"`` or a mix such as ``"0-9,20"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep:
            if int(hi) < int(lo):
                raise UsageError(f"empty seed range {part!r}")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise UsageError("no seeds given")
    return seeds


def cmd_ablate(args) -> int:
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    unknown = [p for p in policies if p not in POLICIES]
    if unknown or not policies:
        raise UsageError(f"unknown policies {unknown}; choose from {', '.join(POLICIES)}")
    if args.width < 2 or args.depth < 1 or args.n < 1 or not 0.0 <= args.failure_ratio < 1.0:
        raise UsageError("need width >= 2, depth >= 1, n >= 1 and failure ratio in [0, 1)")
    report = harness.ablate(parse_seeds(args.seeds), args.width, args.depth, args.n, policies,
                            args.failure_ratio, args.alpha, args.beta)
    logger.info("ablation finished in %.2f s", report["_elapsed"])
    text = harness.report_json(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(harness.report_table(report) if args.table else text)
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidagent", description="Video question answering over symbolic memory.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a memory store from extraction records (JSON Lines)")
    p.add_argument("records_path")
    p.add_argument("--question", help="question used to choose the memory type")
    p.add_argument("--out", required=True, help="memory store file to write")
    p.add_argument("--memory", choices=["auto", "both", "space", "time"], default="auto")
    p.add_argument("--tau", type=float, help=f"caption similarity threshold for clips (default {DEFAULT_TAU})")
    p.add_argument("--video-id", help="video identifier stored with the memory (default: file stem)")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("ask", help="answer a question with the tree-search planner")
    p.add_argument("memory_path")
    p.add_argument("question")
    p.add_argument("--video", help="video reference passed to tools (default: the memory's video id)")
    p.add_argument("--n", type=int, help="planner iterations (default 2)")
    p.add_argument("--alpha", type=float, help="base reward (default 1)")
    p.add_argument("--beta", type=float, help="reward decay rate (default 0.5)")
    p.add_argument("--policy", choices=POLICIES, help="node selection policy (default mcts)")
    p.add_argument("--seed", type=int, help="selection RNG seed (default 0)")
    p.add_argument("--max-depth", type=int, help="longest chain in tool calls (default 8)")
    p.add_argument("--aggregate", choices=["vote", "summarize"])
    p.add_argument("--choices", help="comma-separated choice labels, e.g. A,B,C,D,E")
    p.add_argument("--registry", help="JSON tool registry (default: the six sub-task tools)")
    p.add_argument("--trace-out", help="write the search trace JSON here")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("ablate", help="compare selection policies on seeded synthetic tasks")
    p.add_argument("--seeds", default="0-49")
    p.add_argument("--width", type=int, default=3)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--policies", default=",".join(POLICIES))
    p.add_argument("--failure-ratio", type=float, default=0.67)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--table", action="store_true", help="print a plain-text table instead of JSON")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendConfigError, CorruptCassette) as exc:
        print(f"error: backend configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        # config file or registry problems surface here
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if not isinstance(exc, FileNotFoundError) else EXIT_INPUT
    except BackendError as exc:
        print(f"error: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
