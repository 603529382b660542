"""Management-node kernel and simulated device agent.

A management node keeps a live tree of its subordinates (devices and child
management nodes alike), drives their state machines from heartbeat traffic,
pushes device events through validation, clustering and session correlation,
splices child topology reports into its own view, and executes or forwards
commands. A device agent mirrors the managed-device side: it emits
heartbeats and scripted events (filtered, normalized and aggregated before
leaving the device) and answers policy and vulnerability commands.

Everything a node does is visible as log lines:

    NODE <addr> <tick> <action> <detail>
    CASE <case-id> <tick> <actor> <action>

which the scenario harness collects into golden-comparable reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import emergency_response as er
from .addressing import AddressError, NodeAddress, TreeShape
from .device_model import (
    DeviceDescriptor,
    DeviceKind,
    DeviceState,
    DeviceStatus,
    TransferCondition,
    initial_status,
    step,
)
from .device_tree import (
    AddressedDeviceTree,
    ChangeSet,
    DeviceNodeRecord,
    TreeError,
)
from .emergency_response import (
    CounterplanStore,
    ResponseCase,
    ResponseError,
    NotCoordinator,
    TargetOutsideSubtree,
)
from .event_pipeline import (
    AssetDb,
    ClassificationMap,
    ConnectionMarker,
    EventLineError,
    FilterRule,
    CrossDeviceAggregator,
    Normalizer,
    RawDeviceEvent,
    SimilarityWeights,
    aggregate_single_device,
    filter_event,
    format_event_line,
    parse_event_line,
    validate,
)
from .messaging import Frame, FrameBuilder, MsgType
from .session_correlation import (
    CorrelationConfig,
    CorrelationEngine,
    SessionRecord,
    format_session_line,
)

_T = TransferCondition


class TargetNotInSubtree(Exception):
    pass


@dataclass
class HeartbeatConfig:
    """Cadence of liveness traffic and when silence counts as loss.

    The state-package timeout is the shorter one so a silent node first
    degrades to unreachable and only then to network-down.
    """

    network_test_interval: int = 5
    state_pkg_interval: int = 8
    network_test_timeout: int = 30
    state_pkg_timeout: int = 20

    def __post_init__(self) -> None:
        if self.network_test_timeout <= self.network_test_interval:
            raise ValueError("network test timeout must exceed its interval")
        if self.state_pkg_timeout <= self.state_pkg_interval:
            raise ValueError("state package timeout must exceed its interval")


@dataclass
class PipelineSettings:
    """Node-level tunables for event handling and reporting."""

    validation_threshold: int = 5
    weights: SimilarityWeights = SimilarityWeights()
    merge_threshold: float = 0.7
    horizon: int = 300
    window_ticks: int = 10
    portscan_threshold: int = 10
    grace: int = 60
    connect_ttl: int = 600
    report_interval: int = 50
    command_delay: int = 3


@dataclass
class ChildRecord:
    """What a management node tracks per direct subordinate."""

    address: NodeAddress
    kind: DeviceKind
    label: str
    hb: HeartbeatConfig
    status: DeviceStatus = field(default_factory=initial_status)
    net_deadline: int = 0
    pkg_deadline: int = 0


@dataclass
class CoordinationEntry:
    """A case escalated to this node for coordination."""

    owner: NodeAddress
    classification: str
    containment: str


_COMMAND_CONDS = {
    "policy": (_T.T9, _T.T10),
    "vulnerability": (_T.T11, _T.T12),
}


class SmnNode:
    """One security management node."""

    def __init__(
        self,
        address: NodeAddress,
        shape: TreeShape,
        parent: NodeAddress | None,
        settings: PipelineSettings | None = None,
        hb: HeartbeatConfig | None = None,
        assets: AssetDb | None = None,
        counterplans: CounterplanStore | None = None,
        label: str = "",
    ) -> None:
        self.address = address
        self.shape = shape
        self.parent = parent
        self.settings = settings or PipelineSettings()
        self.hb = hb or HeartbeatConfig()
        self.builder = FrameBuilder(address)
        self.virtual_view = AddressedDeviceTree(
            shape=shape,
            root=DeviceNodeRecord(
                address=address,
                state=DeviceState.RUNNING_OK,
                kind=DeviceKind.SMN,
                label=label,
            ),
        )
        self.children: dict[NodeAddress, ChildRecord] = {}
        self.status = DeviceStatus(DeviceState.RUNNING_OK)
        s = self.settings
        self.engine = CorrelationEngine(
            str(address), CorrelationConfig(grace=s.grace, connect_ttl=s.connect_ttl)
        )
        self.aggregator = CrossDeviceAggregator(s.weights, s.merge_threshold, s.horizon)
        self.assets = assets or AssetDb()
        self.counterplans = counterplans or CounterplanStore()
        self.cases: dict[str, ResponseCase] = {}
        self.coordinated: dict[str, CoordinationEntry] = {}
        self.case_counter = 0
        self.pending_commands: dict[str, str] = {}
        self.command_counter = 0
        self.lines: list[str] = []
        self.changesets: list[ChangeSet] = []
        self.session_lines: list[str] = []
        self.last_record: SessionRecord | None = None
        self.events_received = 0  # non-marker events
        self.markers_received = 0
        self.events_dropped = 0
        self.silences: list[tuple[int, int]] = []

    # -- bookkeeping -------------------------------------------------------

    def silence(self, start: int, end: int) -> None:
        self.silences.append((start, end))

    def silenced(self, now: int) -> bool:
        return any(start <= now < end for start, end in self.silences)

    def add_child(
        self,
        address: NodeAddress,
        kind: DeviceKind,
        label: str = "",
        hb: HeartbeatConfig | None = None,
    ) -> None:
        hb = hb or HeartbeatConfig()
        record = ChildRecord(address=address, kind=kind, label=label, hb=hb)
        record.net_deadline = hb.network_test_timeout
        record.pkg_deadline = hb.state_pkg_timeout
        self.children[address] = record
        self.virtual_view.add_device(
            DeviceNodeRecord(
                address=address,
                state=record.status.state,
                kind=kind,
                label=label,
            )
        )

    def _log(self, now: int, action: str, detail: str = "") -> None:
        line = f"NODE {self.address} {now} {action}"
        if detail:
            line += f" {detail}"
        self.lines.append(line)

    def _case_line(self, case_id: str, now: int, actor: object, action: str) -> None:
        self.lines.append(er.format_case_line(case_id, now, str(actor), action))

    def drain_lines(self) -> list[str]:
        lines, self.lines = self.lines, []
        return lines

    def drain_changesets(self) -> list[ChangeSet]:
        out, self.changesets = self.changesets, []
        return out

    def _apply_child_cond(
        self, child: ChildRecord, cond: TransferCondition, now: int
    ) -> bool:
        old = child.status.state
        child.status, applied = step(child.status, cond)
        if not applied or child.status.state is old:
            return False
        self._log(
            now,
            "STATE",
            f"{child.address} {cond.value} {old.value}->{child.status.state.value}",
        )
        rec = self.virtual_view.set_state(child.address, child.status.state)
        self.changesets.append((rec,))
        return True

    def _apply_self_cond(self, cond: TransferCondition, now: int) -> None:
        old = self.status.state
        self.status, applied = step(self.status, cond)
        if not applied or self.status.state is old:
            return
        self._log(
            now, "STATE", f"{self.address} {cond.value} {old.value}->{self.status.state.value}"
        )
        rec = self.virtual_view.set_state(self.address, self.status.state)
        self.changesets.append((rec,))

    def _emit_report(self, now: int) -> list[Frame]:
        if self.parent is None:
            return []
        self._log(now, "REPORT", "")
        return [
            self.builder.build(
                MsgType.TOPOLOGY_REPORT, self.parent, now, self.virtual_view.serialize()
            )
        ]

    # -- frame handling ----------------------------------------------------

    def on_frame(self, frame: Frame, now: int) -> list[Frame]:
        mt = frame.msg_type
        if mt in (
            MsgType.NETWORK_TEST,
            MsgType.DEVICE_STATE_PKG,
            MsgType.DEVICE_EVENT,
            MsgType.TOPOLOGY_REPORT,
            MsgType.SESSION_ALERT,
        ):
            child = self.children.get(frame.src)
            if child is None:
                self._log(now, "UNKNOWN", f"{frame.src} {mt.name}")
                return []
            if mt is MsgType.NETWORK_TEST:
                self._apply_child_cond(child, _T.T1, now)
                child.net_deadline = now + child.hb.network_test_timeout
                return []
            if mt is MsgType.DEVICE_STATE_PKG:
                self._apply_child_cond(child, _T.T3, now)
                abnormal = frame.text() == "abnormal"
                self._apply_child_cond(child, _T.T5 if abnormal else _T.T6, now)
                child.pkg_deadline = now + child.hb.state_pkg_timeout
                return []
            if mt is MsgType.DEVICE_EVENT:
                return self._on_device_event(child, frame, now)
            if mt is MsgType.TOPOLOGY_REPORT:
                return self._on_topology_report(child, frame, now)
            return self._on_session_alert(frame, now)
        if mt is MsgType.COMMAND:
            return self._on_command(frame, now)
        if mt is MsgType.COMMAND_ACK:
            cmd_id = frame.text()
            if cmd_id in self.pending_commands:
                self.pending_commands[cmd_id] = "acked"
                self._log(now, "ACK", f"{cmd_id} {frame.src}")
            return []
        if mt is MsgType.RESPONSE_COORD:
            return self._on_response_coord(frame, now)
        self._log(now, "UNKNOWN", f"{frame.src} {mt.name}")
        return []

    def _on_device_event(self, child: ChildRecord, frame: Frame, now: int) -> list[Frame]:
        self._apply_child_cond(child, _T.T7, now)
        out: list[Frame] = []
        try:
            ev = parse_event_line(frame.text(), self.shape)
        except EventLineError as exc:
            self._log(now, "BADEVENT", str(exc))
            self._apply_child_cond(child, _T.T8, now)
            return out
        if ev.connection_marker is ConnectionMarker.NONE:
            self.events_received += 1
        else:
            self.markers_received += 1
        kept = validate([ev], self.assets, self.settings.validation_threshold)
        if not kept:
            self.events_dropped += 1
            self._log(now, "DROP", ev.event_id)
        else:
            ev, score = kept[0]
            self.aggregator.add(ev, score)
            for action in self.engine.on_event(ev, now):
                self.last_record = action.record
                if action.kind == "ending":
                    line = format_session_line(action.record)
                    self.session_lines.append(line)
                    self._log(now, "ALERT", action.record.session_id)
                    if self.parent is not None:
                        out.append(
                            self.builder.build(MsgType.SESSION_ALERT, self.parent, now, line)
                        )
        self._apply_child_cond(child, _T.T8, now)
        return out

    def _on_topology_report(self, child: ChildRecord, frame: Frame, now: int) -> list[Frame]:
        try:
            changes = self.virtual_view.assemble(frame.text())
        except (TreeError, AddressError) as exc:
            self._log(now, "BADREPORT", f"{frame.src} {exc}")
            return []
        self.changesets.append(changes)
        self._log(now, "ASSEMBLE", str(frame.src))
        return self._emit_report(now)

    def _on_session_alert(self, frame: Frame, now: int) -> list[Frame]:
        line = frame.text()
        self.session_lines.append(line)
        if self.parent is None:
            return []
        return [self.builder.build(MsgType.SESSION_ALERT, self.parent, now, line)]

    def _on_command(self, frame: Frame, now: int) -> list[Frame]:
        head, _, _body = frame.text().partition("\n")
        kind, _, cmd_id = head.partition(" ")
        conds = _COMMAND_CONDS.get(kind)
        if conds is not None:
            cond_in, cond_out = conds
            self._apply_self_cond(cond_in, now)
            # command bodies are opaque; execution is immediate for a
            # management node
            self._apply_self_cond(cond_out, now)
        self._log(now, "CMD", f"{cmd_id} {kind}")
        return [self.builder.build(MsgType.COMMAND_ACK, frame.src, now, cmd_id)]

    # -- commands ----------------------------------------------------------

    def dispatch_command(
        self, target: NodeAddress, kind: str, body: str, now: int
    ) -> tuple[str, list[Frame]]:
        if not self.address.is_ancestor(target):
            raise TargetNotInSubtree(f"{target} not below {self.address}")
        self.command_counter += 1
        cmd_id = f"{self.address}!{self.command_counter}"
        self.pending_commands[cmd_id] = "sent"
        self._log(now, "COMMAND", f"{cmd_id} {kind} {target}")
        frame = self.builder.build(
            MsgType.COMMAND, target, now, f"{kind} {cmd_id}\n{body}"
        )
        return cmd_id, [frame]

    # -- emergency response ------------------------------------------------

    def respond_launch(self, now: int, trigger: SessionRecord | None = None) -> ResponseCase:
        record = trigger or self.last_record
        if record is None:
            raise ResponseError(f"{self.address} has no alert to respond to")
        self.case_counter += 1
        case_id = f"{self.address}#c{self.case_counter}"
        case = er.launch(
            record.session_id,
            record.top_classification,
            self.counterplans,
            self.address,
            case_id,
            now,
        )
        self.cases[case_id] = case
        self._case_line(case_id, now, self.address, "launch")
        return case

    def respond_escalate(self, case_id: str, now: int) -> list[Frame]:
        case = self.cases[case_id]
        coordinator = er.escalate(case, now)
        self._case_line(case_id, now, self.address, "escalate")
        payload = (
            f"escalate {case_id} {self.address} {case.classification}\n"
            f"{case.plan.containment}"
        )
        return [self.builder.build(MsgType.RESPONSE_COORD, coordinator, now, payload)]

    def respond_enlist(
        self, case_id: str, targets: list[NodeAddress], now: int
    ) -> list[Frame]:
        entry = self.coordinated.get(case_id)
        if entry is None:
            raise NotCoordinator(f"{self.address} does not coordinate {case_id}")
        for target in targets:
            if not self.address.is_ancestor(target):
                raise TargetOutsideSubtree(f"{target} not below {self.address}")
        self._log(now, "ENLIST", f"{case_id} {','.join(str(t) for t in targets)}")
        frames = []
        for target in targets:
            frames.append(
                self.builder.build(
                    MsgType.RESPONSE_COORD,
                    target,
                    now,
                    f"advisory {case_id} {entry.owner}\n{entry.containment}",
                )
            )
        targets_text = ",".join(str(t) for t in targets)
        frames.append(
            self.builder.build(
                MsgType.RESPONSE_COORD,
                entry.owner,
                now,
                f"enlisted {case_id} {targets_text}",
            )
        )
        return frames

    def respond_advance(self, case_id: str, note: str, now: int) -> list[Frame]:
        case = self.cases.get(case_id)
        if case is not None:
            self._advance_local(case, self.address, note, now)
            return []
        entry = self.coordinated.get(case_id)
        if entry is not None:
            return [
                self.builder.build(
                    MsgType.RESPONSE_COORD,
                    entry.owner,
                    now,
                    f"advance {case_id} {self.address} {note}",
                )
            ]
        self._log(now, "RESPOND-ERROR", f"unknown case {case_id}")
        return []

    def _advance_local(
        self, case: ResponseCase, actor: NodeAddress, note: str, now: int
    ) -> None:
        try:
            er.advance(case, actor, now, note)
            self._case_line(case.case_id, now, actor, f"advance:{case.phase.value}")
        except ResponseError as exc:
            case.record(now, str(actor), "advance-rejected", str(exc))
            self._case_line(case.case_id, now, actor, "advance-rejected")

    def _on_response_coord(self, frame: Frame, now: int) -> list[Frame]:
        head, _, doc = frame.text().partition("\n")
        parts = head.split(" ")
        sub = parts[0]
        if sub == "escalate" and len(parts) >= 4:
            case_id, owner_text, classification = parts[1], parts[2], parts[3]
            self.coordinated[case_id] = CoordinationEntry(
                owner=NodeAddress.parse(owner_text, self.shape),
                classification=classification,
                containment=doc,
            )
            self._log(now, "COORD", case_id)
            return []
        if sub == "advisory" and len(parts) >= 3:
            case_id, owner_text = parts[1], parts[2]
            self._log(now, "ADVISORY", case_id)
            owner = NodeAddress.parse(owner_text, self.shape)
            return [
                self.builder.build(
                    MsgType.RESPONSE_COORD, owner, now, f"confirm {case_id} {self.address}"
                )
            ]
        if sub == "confirm" and len(parts) >= 3:
            case_id, participant_text = parts[1], parts[2]
            case = self.cases.get(case_id)
            if case is not None:
                participant = NodeAddress.parse(participant_text, self.shape)
                er.confirm(case, participant, now)
                self._case_line(case_id, now, participant, "confirm")
            return []
        if sub == "enlisted" and len(parts) >= 3:
            case_id, targets_text = parts[1], parts[2]
            case = self.cases.get(case_id)
            if case is not None:
                targets = [
                    NodeAddress.parse(t, self.shape) for t in targets_text.split(",")
                ]
                try:
                    added = er.enlist(case, frame.src, targets, now)
                except ResponseError as exc:
                    self._log(now, "RESPOND-ERROR", str(exc))
                    return []
                for target in added:
                    self._case_line(case_id, now, frame.src, f"enlist:{target}")
            return []
        if sub == "advance" and len(parts) >= 3:
            case_id, actor_text = parts[1], parts[2]
            note = " ".join(parts[3:])
            case = self.cases.get(case_id)
            if case is not None:
                self._advance_local(case, NodeAddress.parse(actor_text, self.shape), note, now)
            return []
        self._log(now, "RESPOND-ERROR", f"bad coordination message {head!r}")
        return []

    # -- clock -------------------------------------------------------------

    def on_tick(self, now: int) -> list[Frame]:
        out: list[Frame] = []
        for child in sorted(self.children.values(), key=lambda c: c.address.segments):
            if now >= child.pkg_deadline:
                self._apply_child_cond(child, _T.T4, now)
                child.pkg_deadline = now + child.hb.state_pkg_timeout
            if now >= child.net_deadline:
                changed = self._apply_child_cond(child, _T.T2, now)
                child.net_deadline = now + child.hb.network_test_timeout
                if (
                    changed
                    and child.status.state is DeviceState.NET_DOWN
                    and child.kind is DeviceKind.SMN
                ):
                    changes = self.virtual_view.disassemble(
                        child.address, DeviceState.NET_DOWN
                    )
                    self.changesets.append(changes)
                    self._log(now, "DISASSEMBLE", str(child.address))
                    out.extend(self._emit_report(now))
        if self.parent is not None:
            if now % self.hb.network_test_interval == 0:
                out.append(self.builder.build(MsgType.NETWORK_TEST, self.parent, now))
            if now % self.hb.state_pkg_interval == 0:
                out.append(
                    self.builder.build(MsgType.DEVICE_STATE_PKG, self.parent, now, "normal")
                )
            if now % self.settings.report_interval == 0:
                out.extend(self._emit_report(now))
        self.engine.sweep(now)
        return out


@dataclass
class ScheduledEvent:
    at: int
    raw: RawDeviceEvent


class DeviceAgent:
    """Simulated managed device: heartbeats, scripted events, command acks."""

    def __init__(
        self,
        descriptor: DeviceDescriptor,
        shape: TreeShape,
        parent: NodeAddress,
        hb: HeartbeatConfig | None = None,
        settings: PipelineSettings | None = None,
        filter_rules: list[FilterRule] | None = None,
        mapping: ClassificationMap | None = None,
    ) -> None:
        self.descriptor = descriptor
        self.address = descriptor.address
        self.shape = shape
        self.parent = parent
        self.hb = hb or HeartbeatConfig()
        self.settings = settings or PipelineSettings()
        self.filter_rules = filter_rules or []
        self.normalizer = Normalizer(mapping or ClassificationMap())
        self.builder = FrameBuilder(self.address)
        self.status = DeviceStatus(DeviceState.RUNNING_OK)
        self.buffer: list[RawDeviceEvent] = []
        self.silences: list[tuple[int, int]] = []
        self.abnormal_windows: list[tuple[int, int]] = []
        self.pending_acks: list[tuple[int, str, TransferCondition, NodeAddress]] = []
        self.lines: list[str] = []

    def _log(self, now: int, action: str, detail: str = "") -> None:
        line = f"NODE {self.address} {now} {action}"
        if detail:
            line += f" {detail}"
        self.lines.append(line)

    def drain_lines(self) -> list[str]:
        lines, self.lines = self.lines, []
        return lines

    def silence(self, start: int, end: int) -> None:
        self.silences.append((start, end))

    def mark_abnormal(self, start: int, end: int) -> None:
        self.abnormal_windows.append((start, end))

    def inject(self, raw: RawDeviceEvent) -> None:
        self.buffer.append(raw)

    def _in_window(self, windows: list[tuple[int, int]], now: int) -> bool:
        return any(start <= now < end for start, end in windows)

    def _apply_cond(self, cond: TransferCondition, now: int) -> None:
        old = self.status.state
        self.status, applied = step(self.status, cond)
        if applied and self.status.state is not old:
            self._log(
                now,
                "STATE",
                f"{self.address} {cond.value} {old.value}->{self.status.state.value}",
            )

    def on_frame(self, frame: Frame, now: int) -> list[Frame]:
        if frame.msg_type is not MsgType.COMMAND:
            return []
        head, _, _body = frame.text().partition("\n")
        kind, _, cmd_id = head.partition(" ")
        conds = _COMMAND_CONDS.get(kind)
        if conds is None:
            return [self.builder.build(MsgType.COMMAND_ACK, frame.src, now, cmd_id)]
        cond_in, cond_out = conds
        self._apply_cond(cond_in, now)
        self.pending_acks.append(
            (now + self.settings.command_delay, cmd_id, cond_out, frame.src)
        )
        return []

    def step(self, now: int) -> list[Frame]:
        if self._in_window(self.silences, now):
            return []
        out: list[Frame] = []
        still: list[tuple[int, str, TransferCondition, NodeAddress]] = []
        for due, cmd_id, cond_out, reply_to in self.pending_acks:
            if due <= now:
                self._apply_cond(cond_out, now)
                self._log(now, "CMD", f"{cmd_id} done")
                out.append(self.builder.build(MsgType.COMMAND_ACK, reply_to, now, cmd_id))
            else:
                still.append((due, cmd_id, cond_out, reply_to))
        self.pending_acks = still
        if now % self.hb.network_test_interval == 0:
            out.append(self.builder.build(MsgType.NETWORK_TEST, self.parent, now))
        if now % self.hb.state_pkg_interval == 0:
            abnormal = self._in_window(self.abnormal_windows, now)
            out.append(
                self.builder.build(
                    MsgType.DEVICE_STATE_PKG,
                    self.parent,
                    now,
                    "abnormal" if abnormal else "normal",
                )
            )
        if now % self.settings.window_ticks == 0 and self.buffer:
            ready = [e for e in self.buffer if e.timestamp < now]
            if ready:
                self.buffer = [e for e in self.buffer if e.timestamp >= now]
                out.extend(self._flush(ready, now))
        return out

    def _flush(self, ready: list[RawDeviceEvent], now: int) -> list[Frame]:
        kept = [e for e in ready if filter_event(e, self.filter_rules)]
        kept.sort(key=lambda e: e.timestamp)
        normalized = [self.normalizer.normalize(e) for e in kept]
        aggregated = aggregate_single_device(
            normalized, self.settings.window_ticks, self.settings.portscan_threshold
        )
        frames = []
        for ev in aggregated:
            self.descriptor.latest_events.append(ev)
            frames.append(
                self.builder.build(
                    MsgType.DEVICE_EVENT, self.parent, now, format_event_line(ev)
                )
            )
        return frames
