"""Operator entry points.

Exit codes: 0 success, 2 input or validation error, 3 integrity or
divergence error.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from . import telemetry
from .errors import DivergenceError, IntegrityError, SimError
from .model import (
    MasterCaseList,
    case_list_from_json,
    default_case_list,
    validate_case_list,
)
from .scenario import (
    Mode,
    Pose,
    QUOTA_COMBOS,
    Scenario,
    export_actor_briefs,
    generate_actor_scenario,
    generate_virtual_scenario,
    load_scenario,
    save_scenario,
    scenario_violations,
)
from .server import DEFAULT_PORT, MciServer, default_port

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTEGRITY = 3


def _load_case_list(path: str | None) -> MasterCaseList:
    if path is None:
        return default_case_list()
    return case_list_from_json(Path(path).read_text(encoding="utf-8"))


def _validated_case_list(path: str | None) -> MasterCaseList:
    case_list = _load_case_list(path)
    report = validate_case_list(case_list)
    if not report.ok:
        print(report, file=sys.stderr)
        raise SystemExit(EXIT_INPUT)
    return case_list


def cmd_serve(args: argparse.Namespace) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    case_list = _validated_case_list(args.case_list)
    server = MciServer(case_list, args.log_dir)

    async def run() -> None:
        await server.start(port=args.port)
        print(f"listening on :{server.port}", flush=True)
        await server.serve_forever()

    try:
        asyncio.run(run())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _load_layout(path: str) -> list[Pose]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, list):
        raise SimError("layout file must be a JSON array of poses")
    poses = []
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict):
            raise SimError(f"layout[{i}]: expected object")
        try:
            poses.append(
                Pose(
                    x=float(entry["x"]),
                    y=float(entry.get("y", 0.0)),
                    z=float(entry["z"]),
                    yaw_deg=float(entry.get("yaw_deg", 0.0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SimError(f"layout[{i}]: bad pose: {exc}") from None
    return poses


def _summary(scenario: Scenario, case_list: MasterCaseList) -> str:
    histogram = Counter(
        case_list.by_id(inst.case_id).ground_truth.value for inst in scenario.instances
    )
    categories = " ".join(f"{k}:{histogram[k]}" for k in ("black", "grey", "red", "yellow", "green"))
    if scenario.mode is Mode.VIRTUAL:
        combos = [(i.demographics.race, i.demographics.gender) for i in scenario.instances]
        quota = "satisfied" if all(
            (c.race, c.gender) in combos for c in QUOTA_COMBOS
        ) else "NOT satisfied"
        extra = f"quota {quota}"
    else:
        visible = {str(inst.visible).lower() for inst in scenario.instances}
        extra = f"visible: {', '.join(sorted(visible))}"
    return f"{len(scenario.instances)} patients, categories {categories}, {extra}"


def cmd_gen(args: argparse.Namespace) -> int:
    case_list = _validated_case_list(args.case_list)
    mode = Mode(args.mode)
    if mode is Mode.VIRTUAL:
        if args.layout:
            print("--layout applies to actor mode only", file=sys.stderr)
            return EXIT_INPUT
        scenario = generate_virtual_scenario(case_list, args.seed)
    else:
        layout = _load_layout(args.layout) if args.layout else None
        scenario = generate_actor_scenario(case_list, args.seed, layout=layout)
    problems = scenario_violations(scenario, case_list)
    if problems:  # defensive: generators are property-tested to never hit this
        for problem in problems:
            print(problem, file=sys.stderr)
        return EXIT_INPUT
    save_scenario(scenario, args.out)
    print(f"{scenario.scenario_id} -> {args.out}: {_summary(scenario, case_list)}")
    if args.briefs:
        if mode is not Mode.ACTOR:
            print("--briefs applies to actor mode only", file=sys.stderr)
            return EXIT_INPUT
        Path(args.briefs).write_text(export_actor_briefs(scenario, case_list), encoding="utf-8")
        print(f"actor briefs -> {args.briefs}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    case_list = _load_case_list(args.path)
    report = validate_case_list(case_list)
    if report.ok:
        print(f"valid ({len(case_list.cases)} cases, version {case_list.version})")
        return EXIT_OK
    print(report)
    return EXIT_INPUT


def _replay(args: argparse.Namespace) -> telemetry.SessionRecord:
    case_list = _validated_case_list(args.case_list)
    loaded = load_scenario(args.scenario, case_list)
    for warning in loaded.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return telemetry.replay(args.log, loaded.scenario, case_list)


def cmd_replay(args: argparse.Namespace) -> int:
    record = _replay(args)
    print(f"identical ({len(record.events)} events)")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    record = _replay(args)
    case_list = _validated_case_list(args.case_list)
    loaded = load_scenario(args.scenario, case_list)
    report = telemetry.score(record, loaded.scenario, case_list)
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(
        f"accuracy {report.accuracy:.2f}, overtriage {report.overtriage_count}, "
        f"undertriage {report.undertriage_count} -> {args.out}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mci-sim",
        description="Mass-casualty triage training simulation: server, scenario "
        "tools, log replay, and scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the session server")
    serve.add_argument("--port", type=int, default=default_port(),
                       help=f"listen port (default {DEFAULT_PORT}, env MCI_SIM_PORT)")
    serve.add_argument("--case-list", help="case list JSON (default: built-in)")
    serve.add_argument("--log-dir", default="logs", help="session log directory")
    serve.set_defaults(func=cmd_serve)

    gen = sub.add_parser("gen", help="generate a scenario")
    gen.add_argument("--mode", choices=["virtual", "actor"], required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True, help="output scenario JSON path")
    gen.add_argument("--layout", help="actor mode: JSON array of 20 poses")
    gen.add_argument("--briefs", help="actor mode: write printable actor briefs here")
    gen.add_argument("--case-list", help="case list JSON (default: built-in)")
    gen.set_defaults(func=cmd_gen)

    validate = sub.add_parser("validate", help="validate a case list file")
    validate.add_argument("path")
    validate.set_defaults(func=cmd_validate)

    replay = sub.add_parser("replay", help="verify a session log replays identically")
    replay.add_argument("log")
    replay.add_argument("--scenario", required=True)
    replay.add_argument("--case-list", help="case list JSON (default: built-in)")
    replay.set_defaults(func=cmd_replay)

    report = sub.add_parser("report", help="replay a log and write its triage report")
    report.add_argument("log")
    report.add_argument("--scenario", required=True)
    report.add_argument("--out", default="report.json")
    report.add_argument("--case-list", help="case list JSON (default: built-in)")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DivergenceError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
