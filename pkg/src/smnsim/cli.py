"""Command-line front end.

Subcommands::

    smnsim simulate --topology FILE --scenario FILE [--seed N] --out DIR
    smnsim tree parse FILE --depth N --degree D
    smnsim tree serialize FILE --depth N --degree D
    smnsim correlate --events FILE [--config FILE]
    smnsim statemachine trace --conditions T1,T3,...

Exit status: 0 on success, 1 when a run violates an invariant or the input
data is invalid, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys

from .addressing import AddressError, TreeShape
from .config import ConfigError, load_scenario, load_topology
from .device_model import DeviceState, DeviceStatus, TransferCondition, step
from .device_tree import TreeError, build_tree
from .event_pipeline import EventLineError, parse_event_line
from .simulator import InvariantViolation, Simulation, run_correlate


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smnsim")
    sub = parser.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", help="run a scenario against a topology")
    sim.add_argument("--topology", required=True)
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--out", required=True, help="directory for report files")
    sim.add_argument("--debug", action="store_true", help="check invariants every tick")
    sim.add_argument("--threaded", action="store_true", help="one worker per node")

    tree = sub.add_parser("tree", help="embedding structure utilities")
    tree_sub = tree.add_subparsers(dest="tree_cmd", required=True)
    for name in ("parse", "serialize"):
        t = tree_sub.add_parser(name)
        t.add_argument("file")
        t.add_argument("--depth", type=int, required=True)
        t.add_argument("--degree", type=int, required=True)

    cor = sub.add_parser("correlate", help="run correlation over an event file")
    cor.add_argument("--events", required=True)
    cor.add_argument("--config", default=None, help="topology file for pipeline settings")
    cor.add_argument("--depth", type=int, default=4)
    cor.add_argument("--degree", type=int, default=9)

    sm = sub.add_parser("statemachine", help="device state machine utilities")
    sm_sub = sm.add_subparsers(dest="sm_cmd", required=True)
    trace = sm_sub.add_parser("trace")
    trace.add_argument("--conditions", required=True, help="comma list, e.g. T1,T3,T7,T8")

    return parser


def _cmd_simulate(args) -> int:
    topology = load_topology(args.topology)
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    sim = Simulation(topology, scenario, debug=args.debug, threaded=args.threaded)
    report = sim.run()
    report.write(args.out)
    print(f"wrote report files to {args.out}")
    return 0


def _cmd_tree(args) -> int:
    shape = TreeShape(depth=args.depth, max_degree=args.degree)
    with open(args.file, encoding="utf-8") as fh:
        text = fh.read().strip()
    tree = build_tree(text, shape)
    if args.tree_cmd == "serialize":
        print(tree.serialize())
    else:
        for node in tree.nodes():
            print(f"{node.address} {node.state.value}")
    return 0


def _cmd_correlate(args) -> int:
    if args.config:
        topology = load_topology(args.config)
        shape, settings, assets = topology.shape, topology.pipeline, topology.assets
    else:
        shape = TreeShape(depth=args.depth, max_degree=args.degree)
        settings = assets = None
    events = []
    with open(args.events, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(parse_event_line(line, shape))
    for line in run_correlate(events, settings, assets):
        print(line)
    return 0


def _cmd_statemachine(args) -> int:
    status = DeviceStatus(state=DeviceState.NET_DOWN)
    sequence = [status.state.value]
    for name in args.conditions.split(","):
        name = name.strip()
        try:
            cond = TransferCondition(name)
        except ValueError:
            print(f"unknown condition {name!r}", file=sys.stderr)
            return 2
        status, _ = step(status, cond)
        sequence.append(status.state.value)
    print(" ".join(sequence))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.cmd == "simulate":
            return _cmd_simulate(args)
        if args.cmd == "tree":
            return _cmd_tree(args)
        if args.cmd == "correlate":
            return _cmd_correlate(args)
        if args.cmd == "statemachine":
            return _cmd_statemachine(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 1
    except (TreeError, AddressError, EventLineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
