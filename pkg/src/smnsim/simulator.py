"""Deterministic scenario runner.

One tick is one global delivery step. Per tick the harness applies scenario
directives, lets every node drain its mailbox and act (in address order, or
concurrently in threaded mode with the same merge order), injects the
collected outbound frames, replays the root's change sets onto the console
mirror, and advances the network one hop. Identical inputs and seed give
byte-identical reports.
"""

from __future__ import annotations

import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .addressing import NodeAddress
from .config import ConfigError, ScenarioScript, TopologyConfig
from .device_model import DeviceDescriptor, DeviceKind
from .device_tree import AddressedDeviceTree, build_tree
from .emergency_response import CounterplanStore, ResponseError
from .event_pipeline import AssetDb, NormalizedEvent, RawDeviceEvent, validate
from .messaging import Frame, LinkTable, SimNetwork
from .node_runtime import DeviceAgent, PipelineSettings, SmnNode
from .session_correlation import CorrelationConfig, CorrelationEngine, format_session_line


class InvariantViolation(Exception):
    pass


@dataclass
class RunReport:
    """Everything a run leaves behind, as plain newline-delimited text."""

    sessions: list[str] = field(default_factory=list)
    tree_text: str = ""
    mirror_text: str = ""
    node_lines: list[str] = field(default_factory=list)
    case_lines: list[str] = field(default_factory=list)
    dead_letters: list[str] = field(default_factory=list)

    def files(self) -> dict[str, str]:
        def block(lines: list[str]) -> str:
            return "\n".join(lines) + "\n" if lines else ""

        return {
            "sessions.txt": block(self.sessions),
            "tree.txt": self.tree_text + "\n",
            "mirror.txt": self.mirror_text + "\n",
            "nodes.txt": block(self.node_lines),
            "cases.txt": block(self.case_lines),
            "deadletters.txt": block(self.dead_letters),
        }

    def write(self, outdir: str) -> None:
        os.makedirs(outdir, exist_ok=True)
        for name, content in self.files().items():
            with open(os.path.join(outdir, name), "w", encoding="utf-8") as fh:
                fh.write(content)


@dataclass
class _LossWindow:
    src: NodeAddress
    dst: NodeAddress
    start: int
    end: int
    rate: float


class Simulation:
    def __init__(
        self,
        topology: TopologyConfig,
        scenario: ScenarioScript,
        debug: bool = False,
        threaded: bool = False,
    ) -> None:
        self.topology = topology
        self.scenario = scenario
        self.debug = debug
        self.threaded = threaded
        self.shape = topology.shape
        self.rng = random.Random(scenario.seed)
        self._tick = 0
        self.loss_windows: list[_LossWindow] = []

        counterplans = CounterplanStore()
        if topology.counterplan_dir:
            counterplans = CounterplanStore.load_dir(topology.counterplan_dir)

        self.smns: dict[NodeAddress, SmnNode] = {}
        self.agents: dict[NodeAddress, DeviceAgent] = {}
        for addr, decl in topology.nodes.items():
            if decl.kind is DeviceKind.SMN:
                self.smns[addr] = SmnNode(
                    address=addr,
                    shape=self.shape,
                    parent=addr.parent(),
                    settings=topology.pipeline,
                    hb=decl.hb,
                    assets=topology.assets,
                    counterplans=counterplans,
                    label=decl.label,
                )
            else:
                descriptor = DeviceDescriptor(
                    address=addr,
                    kind=decl.kind,
                    name=decl.label,
                    endpoint_ip=decl.ip,
                    asset_value=decl.asset_value,
                    vulnerability_ids=decl.vulnerability_ids,
                )
                self.agents[addr] = DeviceAgent(
                    descriptor=descriptor,
                    shape=self.shape,
                    parent=addr.parent(),
                    hb=decl.hb,
                    settings=topology.pipeline,
                    filter_rules=topology.filter_rules,
                    mapping=topology.mapping,
                )
        for addr, decl in topology.nodes.items():
            parent = addr.parent()
            if parent is not None:
                self.smns[parent].add_child(addr, decl.kind, decl.label, decl.hb)

        self.order = sorted(topology.nodes, key=lambda a: a.segments)
        self.links = LinkTable.from_addresses(list(topology.nodes))
        self.network = SimNetwork(self.links, loss_hook=self._lossy)
        self.root = self.smns[topology.root]
        self.mirror = AddressedDeviceTree(
            shape=self.shape,
            root=build_tree(self.root.virtual_view.serialize(), self.shape).root,
        )
        self.handles: dict[str, tuple[NodeAddress, str]] = {}
        self.collected: list[str] = []
        self._by_tick: dict[int, list] = {}
        for d in scenario.directives:
            self._by_tick.setdefault(d.tick, []).append(d)
        self._validate_directives()

    # -- setup helpers -----------------------------------------------------

    def _validate_directives(self) -> None:
        for d in self.scenario.directives:
            if d.op == "emit":
                addr = self._addr(d.args["device"], d.line_no)
                if addr not in self.agents:
                    raise ConfigError(f"emit target {addr} is not a device", d.line_no)
            elif d.op in ("silence", "abnormal"):
                self._addr(d.args["node"], d.line_no)
            elif d.op == "command":
                self._addr(d.args["target"], d.line_no)
            elif d.op == "inject-loss":
                self._addr(d.args["from"], d.line_no)
                self._addr(d.args["to"], d.line_no)
            elif d.op == "respond":
                if d.args["action"] == "launch" and "owner" not in d.args:
                    raise ConfigError("respond launch needs owner=", d.line_no)

    def _addr(self, text: str, line_no: int | None = None) -> NodeAddress:
        try:
            addr = NodeAddress.parse(text, self.shape)
        except Exception as exc:
            raise ConfigError(f"bad address {text!r}: {exc}", line_no) from exc
        if addr not in self.topology.nodes:
            raise ConfigError(f"unknown node {text}", line_no)
        return addr

    def _lossy(self, frame: Frame, at: NodeAddress, hop: NodeAddress) -> bool:
        for w in self.loss_windows:
            if w.src == at and w.dst == hop and w.start <= self._tick < w.end:
                if w.rate >= 1.0 or self.rng.random() < w.rate:
                    return True
        return False

    # -- directives --------------------------------------------------------

    def _apply_directives(self, tick: int, outbound: list[Frame]) -> None:
        for d in self._by_tick.get(tick, []):
            if d.op == "emit":
                self._do_emit(d, tick)
            elif d.op == "silence":
                node = self._addr(d.args["node"])
                until = int(d.args["until"])
                if node in self.agents:
                    self.agents[node].silence(tick, until)
                else:
                    self._silence_smn(node, tick, until)
            elif d.op == "abnormal":
                node = self._addr(d.args["node"])
                if node in self.agents:
                    self.agents[node].mark_abnormal(tick, int(d.args["until"]))
            elif d.op == "command":
                target = self._addr(d.args["target"])
                _, frames = self.root.dispatch_command(
                    target, d.args["kind"], "scripted", tick
                )
                outbound.extend(frames)
            elif d.op == "respond":
                self._do_respond(d, tick, outbound)
            elif d.op == "inject-loss":
                self.loss_windows.append(
                    _LossWindow(
                        src=self._addr(d.args["from"]),
                        dst=self._addr(d.args["to"]),
                        start=tick,
                        end=int(d.args["until"]),
                        rate=float(d.args["rate"]),
                    )
                )

    def _do_emit(self, d, tick: int) -> None:
        agent = self.agents[self._addr(d.args["device"])]
        src_ip, src_port = _split_endpoint(d.args["src"])
        dst_ip, dst_port = _split_endpoint(d.args["dst"])
        agent.inject(
            RawDeviceEvent(
                device_address=agent.address,
                device_kind=agent.descriptor.kind,
                native_class=d.args["class"],
                timestamp=tick,
                src_ip=src_ip,
                src_port=src_port,
                dst_ip=dst_ip,
                dst_port=dst_port,
                severity=int(d.args.get("sev", "1")),
                detail=d.args.get("detail", ""),
            )
        )

    def _silence_smn(self, node: NodeAddress, start: int, end: int) -> None:
        self.smns[node].silence(start, end)

    def _do_respond(self, d, tick: int, outbound: list[Frame]) -> None:
        action = d.args["action"]
        handle = d.args["handle"]
        try:
            if action == "launch":
                owner = self._addr(d.args["owner"], d.line_no)
                case = self.smns[owner].respond_launch(tick)
                self.handles[handle] = (owner, case.case_id)
                return
            owner, case_id = self.handles[handle]
            owner_node = self.smns[owner]
            if action == "escalate":
                outbound.extend(owner_node.respond_escalate(case_id, tick))
            elif action == "enlist":
                targets = [
                    self._addr(t, d.line_no) for t in d.args["targets"].split(",")
                ]
                case = owner_node.cases[case_id]
                actor = case.coordinator if case.coordinator is not None else owner
                actor_node = self.smns[actor]
                outbound.extend(actor_node.respond_enlist(case_id, targets, tick))
            elif action == "advance":
                actor = self._addr(d.args.get("actor", str(owner)), d.line_no)
                note = d.args.get("note", "")
                outbound.extend(
                    self.smns[actor].respond_advance(case_id, note, tick)
                )
            else:
                raise ConfigError(f"unknown respond action {action!r}", d.line_no)
        except KeyError:
            raise ConfigError(f"unknown case handle {handle!r}", d.line_no) from None
        except ResponseError as exc:
            self.root._log(tick, "RESPOND-ERROR", str(exc))

    # -- the loop ----------------------------------------------------------

    def _process_node(self, addr: NodeAddress, tick: int) -> list[Frame]:
        node = self.smns.get(addr) or self.agents[addr]
        out: list[Frame] = []
        while True:
            frame = self.network.poll(addr)
            if frame is None:
                break
            out.extend(node.on_frame(frame, tick))
        if addr in self.smns:
            smn = self.smns[addr]
            ticked = smn.on_tick(tick)
            if smn.silenced(tick):
                return []
            out.extend(ticked)
        else:
            out.extend(self.agents[addr].step(tick))
        return out

    def run(self) -> RunReport:
        end_tick = self.scenario.last_tick + self.scenario.drain
        executor = (
            ThreadPoolExecutor(max_workers=max(1, len(self.order)))
            if self.threaded
            else None
        )
        try:
            for tick in range(end_tick + 1):
                self._tick = tick
                outbound: list[Frame] = []
                self._apply_directives(tick, outbound)
                if executor is not None:
                    futures = [
                        executor.submit(self._process_node, addr, tick)
                        for addr in self.order
                    ]
                    for future in futures:
                        outbound.extend(future.result())
                else:
                    for addr in self.order:
                        outbound.extend(self._process_node(addr, tick))
                for addr in self.order:
                    node = self.smns.get(addr) or self.agents[addr]
                    self.collected.extend(node.drain_lines())
                for frame in outbound:
                    self.network.send(frame)
                for changes in self.root.drain_changesets():
                    self.mirror.apply_changeset(changes)
                if self.debug:
                    self._check_mirror()
                for addr in self.smns:
                    if addr != self.root.address:
                        self.smns[addr].drain_changesets()
                self.network.step()
                if self.debug:
                    self._check_invariants()
        finally:
            if executor is not None:
                executor.shutdown(wait=True)
        return self._report()

    def _check_mirror(self) -> None:
        have = self.mirror.serialize()
        want = self.root.virtual_view.serialize()
        if have != want:
            raise InvariantViolation(f"mirror diverged:\n  {have}\n  {want}")

    def _check_invariants(self) -> None:
        try:
            for smn in self.smns.values():
                smn.virtual_view.validate()
            self.mirror.validate()
        except Exception as exc:
            raise InvariantViolation(str(exc)) from exc
        for smn in self.smns.values():
            engine = smn.engine
            accounted = (
                smn.events_dropped + engine.joined_events + engine.independent_events
            )
            if accounted != smn.events_received:
                raise InvariantViolation(
                    f"{smn.address}: {smn.events_received} events in, {accounted} accounted"
                )

    def _report(self) -> RunReport:
        sessions = list(self.root.session_lines)
        for alert in self.root.engine.store.alerts:
            if alert.status is SessionStatus.OPEN:
                sessions.append(format_session_line(self.root.engine.snapshot(alert)))
        return RunReport(
            sessions=sessions,
            tree_text=self.root.virtual_view.serialize(),
            mirror_text=self.mirror.serialize(),
            node_lines=[l for l in self.collected if l.startswith("NODE ")],
            case_lines=[l for l in self.collected if l.startswith("CASE ")],
            dead_letters=[dl.line() for dl in self.network.dead_letters],
        )


def _split_endpoint(text: str) -> tuple[str, int]:
    ip, _, port = text.partition(":")
    return ip, int(port) if port else 0


def run(topology: TopologyConfig, scenario: ScenarioScript, **kwargs) -> RunReport:
    return Simulation(topology, scenario, **kwargs).run()


def run_correlate(
    events: list[NormalizedEvent],
    settings: PipelineSettings | None = None,
    assets=None,
) -> list[str]:
    """Standalone pipeline + correlation over an event list; returns the
    session lines (ended alerts in emission order, then still-open ones)."""
    settings = settings or PipelineSettings()
    assets = assets or AssetDb()
    engine = CorrelationEngine(
        "cli", CorrelationConfig(grace=settings.grace, connect_ttl=settings.connect_ttl)
    )
    lines: list[str] = []
    for ev in events:
        now = ev.create_time
        engine.sweep(now)
        kept = validate([ev], assets, settings.validation_threshold)
        if not kept:
            continue
        for action in engine.on_event(kept[0][0], now):
            if action.kind == "ending":
                lines.append(format_session_line(action.record))
    for alert in engine.store.alerts:
        if alert.status is SessionStatus.OPEN:
            lines.append(format_session_line(engine.snapshot(alert)))
    return lines
