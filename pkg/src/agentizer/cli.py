"""Command-line entry point: agentize, serve, ask, route, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from agentizer.errors import (
    AgentizerError,
    DownstreamFailure,
    LivelockDetected,
    MalformedSuite,
    PreconditionError,
    RetriesExhausted,
)
from agentizer.graph import ResourceCaps, RunLimits

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("agentizer")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # Sub-parsers suppress defaults so flags given before the subcommand survive.
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--planner", choices=("scripted", "llm"), default=default("scripted"),
                        help="planner backend (default: scripted)")
    parser.add_argument("--plan-file", type=Path, default=default(None),
                        help="scripted plan file (default: <repo>/agentize-plan.json)")
    parser.add_argument("--max-steps", type=int, default=default(200), help="step budget per session")
    parser.add_argument("--max-retries", type=int, default=default(10), help="trajectory retry cap")
    parser.add_argument("--workspace", type=Path, default=default(None),
                        help="workspace directory (default: the repository itself)")
    parser.add_argument("--seed", default=default("0"), help="seed for deterministic ids")
    parser.add_argument("--parallel", type=int, default=default(1), help="parallel workers")
    parser.add_argument("--report", type=Path, default=default(None), help="machine-readable report path")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    parser = argparse.ArgumentParser(prog="agentizer", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("agentize", parents=[common], help="agentize a repository")
    p.add_argument("repo", type=Path)
    p.add_argument("--endpoint", default=None, help="endpoint to advertise in the agent card")

    p = sub.add_parser("serve", parents=[common], help="serve a finished workspace as an agent")
    p.add_argument("served", type=Path, metavar="workspace")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--host", default="127.0.0.1")

    p = sub.add_parser("ask", parents=[common], help="answer a usage question from the knowledge base")
    p.add_argument("served", type=Path, metavar="workspace")
    p.add_argument("query")

    p = sub.add_parser("route", parents=[common], help="compose agents to solve a task")
    p.add_argument("--cards", required=True, help="comma-separated agent base or card URLs")
    p.add_argument("--input", action="append", default=[], metavar="NAME=VALUE", help="task input (repeatable)")
    p.add_argument("task")

    p = sub.add_parser("bench", parents=[common], help="run a benchmark suite")
    p.add_argument("suite", type=Path)
    return parser


def _limits(args) -> RunLimits:
    return RunLimits(max_steps=args.max_steps, max_retries=args.max_retries)


def cmd_agentize(args) -> int:
    from agentizer.a2a.card import DEFAULT_ENDPOINT
    from agentizer.pipeline import agentize

    out = agentize(args.repo, workspace=args.workspace, planner=args.planner, plan_file=args.plan_file,
                   limits=_limits(args), caps=ResourceCaps(parallelism=args.parallel), seed=args.seed,
                   endpoint=args.endpoint or DEFAULT_ENDPOINT)
    res = out.result
    mode = "re-verified" if res.reverified else f"finished after {res.retries} retries"
    print(f"{out.workspace}: {mode}; gate {len(res.report.outcomes())} cases passed")
    print(f"agent card: {out.card.agent_name} with skills {', '.join(s.id for s in out.card.skills)}")
    if args.report:
        _dump(args.report, {"workspace": str(out.workspace), "status": res.env.status.value,
                            "retries": res.retries, "reverified": res.reverified,
                            "gate": res.report.to_dict(), "card": out.card.to_dict()})
    return EXIT_OK


def _served_workspace(args):
    from agentizer.a2a.card import card_path, load_card
    from agentizer.pipeline import load_env, make_planner
    from agentizer.tools import make_toolbox

    ws = args.workspace or args.served
    if not card_path(ws).is_file():
        raise PreconditionError(f"{ws} has no agent card; run `agentizer agentize` first")
    env = load_env(ws)
    try:
        planner = make_planner(args.planner, args.plan_file, ws)
    except PreconditionError:
        planner = None
    return load_card(card_path(ws)), env, make_toolbox(ws, planner=planner)


def cmd_serve(args) -> int:
    from agentizer.a2a.service import AgentService

    card, env, toolbox = _served_workspace(args)
    service = AgentService(card, env, toolbox, host=args.host, port=args.port)
    print(f"serving {service.card.agent_name} at {service.base_url}", flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_ask(args) -> int:
    from agentizer.knowledge import UsageKB, answer_query, kb_path

    ws = args.workspace or args.served
    path = kb_path(ws)
    if not path.is_file():
        raise PreconditionError(f"{ws} has no usage knowledge base; run `agentizer agentize` first")
    hit = answer_query(UsageKB.load(path), args.query)
    if hit is None:
        print("not found")
        return EXIT_FAILED
    print(hit.answer)
    if hit.invocation:
        print(f"\n$ {hit.invocation}")
    return EXIT_OK


def _parse_inputs(pairs: list[str]) -> dict[str, str]:
    inputs = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise PreconditionError(f"--input expects NAME=VALUE, got {pair!r}")
        inputs[name] = value
    return inputs


def cmd_route(args) -> int:
    from agentizer.a2a.router import route
    from agentizer.a2a.service import fetch_card
    from agentizer.planner import ScriptedPlanner

    urls = [u.strip() for u in args.cards.split(",") if u.strip()]
    cards = []
    for url in urls:
        try:
            cards.append(fetch_card(url))
        except OSError as exc:
            log.warning("skipping unreachable agent %s: %s", url, exc)
    planner = None
    if args.plan_file:
        planner = ScriptedPlanner.from_file(args.plan_file)
    elif args.planner == "llm":
        from agentizer.planner import LLMPlanner

        planner = LLMPlanner.from_env()
    try:
        plan, final = route(args.task, cards, planner, inputs=_parse_inputs(args.input))
    except DownstreamFailure as exc:
        print(f"route failed at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(json.dumps({"plan": plan.to_dict(), "response": final.to_dict()}, indent=2))
    if args.report:
        _dump(args.report, {"plan": plan.to_dict(), "response": final.to_dict()})
    return EXIT_OK


def cmd_bench(args) -> int:
    from agentizer.bench import run_suite

    report = run_suite(args.suite, planner=args.planner, work_dir=args.workspace, limits=_limits(args),
                       parallel=args.parallel, seed=args.seed)
    print(report.table())
    if args.report:
        report.write(args.report)
    return EXIT_OK


def _dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


COMMANDS = {"agentize": cmd_agentize, "serve": cmd_serve, "ask": cmd_ask, "route": cmd_route, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (PreconditionError, MalformedSuite) as exc:
        print(f"agentizer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RetriesExhausted, LivelockDetected) as exc:
        print(f"agentizer: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except AgentizerError as exc:
        print(f"agentizer: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
