"""Topology and scenario file parsing.

Both formats are plain line-oriented text so runs diff cleanly. A topology
file opens with a ``[tree]`` section fixing depth and degree, then declares
nodes and tunables::

    [tree]
    depth = 3
    degree = 4

    [node 1.0.0]
    kind = SMN

    [node 1.1.1]
    kind = Firewall
    ip = 10.0.1.1
    asset_value = 3
    vulnerabilities = CVE-7

A scenario file is a time-ordered directive list::

    seed = 7
    drain = 150
    at 20 emit 1.1.1 class=fw.connect src=10.0.0.9:4242 dst=10.0.1.5:80 sev=1
    at 100 silence 1.1.0 until 200
    at 40 command policy 1.1.1
    at 90 respond launch w1 owner=1.1.0
    at 30 inject-loss 1.1.0->1.0.0 until 80 rate=1.0
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .addressing import AddressError, NodeAddress, TreeShape
from .device_model import DeviceKind
from .event_pipeline import (
    AssetDb,
    AssetRecord,
    ClassificationMap,
    FilterRule,
    SimilarityWeights,
)
from .node_runtime import HeartbeatConfig, PipelineSettings


class ConfigError(Exception):
    def __init__(self, message: str, line_no: int | None = None) -> None:
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


_KIND_BY_NAME = {k.value: k for k in DeviceKind}

_HB_KEYS = (
    "network_test_interval",
    "state_pkg_interval",
    "network_test_timeout",
    "state_pkg_timeout",
)


@dataclass
class NodeDecl:
    address: NodeAddress
    kind: DeviceKind
    label: str = ""
    ip: str = ""
    asset_value: int = 1
    vulnerability_ids: frozenset[str] = frozenset()
    hb: HeartbeatConfig = field(default_factory=HeartbeatConfig)


@dataclass
class TopologyConfig:
    shape: TreeShape
    nodes: dict[NodeAddress, NodeDecl]
    root: NodeAddress
    pipeline: PipelineSettings
    filter_rules: list[FilterRule]
    mapping: ClassificationMap
    assets: AssetDb
    counterplan_dir: str | None = None


def _split_kv(line: str, line_no: int) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"expected 'key = value', got {line!r}", line_no)
    key, _, value = line.partition("=")
    return key.strip(), value.strip()


def _int(value: str, line_no: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"not an integer: {value!r}", line_no) from None


def _float(value: str, line_no: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"not a number: {value!r}", line_no) from None


def _vuln_set(text: str) -> frozenset[str]:
    return frozenset(v.strip() for v in text.split(",") if v.strip())


def _parse_filter_rule(value: str, line_no: int) -> FilterRule:
    kind = native = src = dst = None
    for token in value.split():
        k, _, v = token.partition("=")
        if k == "kind":
            kind = _KIND_BY_NAME.get(v)
            if kind is None:
                raise ConfigError(f"unknown device kind {v!r}", line_no)
        elif k == "class":
            native = v
        elif k == "src":
            src = v
        elif k == "dst":
            dst = v
        else:
            raise ConfigError(f"unknown filter field {k!r}", line_no)
    return FilterRule(device_kind=kind, native_class=native, src_ip=src, dst_ip=dst)


def parse_topology(text: str, base_dir: str = ".") -> TopologyConfig:
    shape: TreeShape | None = None
    depth = degree = None
    hb_defaults: dict[str, int] = {}
    pipeline_kv: dict[str, str] = {}
    node_sections: list[tuple[str, dict[str, str], int]] = []
    filter_rules: list[FilterRule] = []
    mapping_rules: dict[tuple[DeviceKind, str], str] = {}
    strict_classes = False
    asset_entries: dict[str, tuple[int, frozenset[str]]] = {}
    class_vulns: dict[str, frozenset[str]] = {}
    counterplan_dir: str | None = None

    section = ""
    current_node: dict[str, str] | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section.startswith("node "):
                current_node = {}
                node_sections.append((section[len("node ") :].strip(), current_node, line_no))
            else:
                current_node = None
            continue
        key, value = _split_kv(line, line_no)
        if section == "tree":
            if key == "depth":
                depth = _int(value, line_no)
            elif key == "degree":
                degree = _int(value, line_no)
            else:
                raise ConfigError(f"unknown tree key {key!r}", line_no)
        elif section == "heartbeat":
            if key not in _HB_KEYS:
                raise ConfigError(f"unknown heartbeat key {key!r}", line_no)
            hb_defaults[key] = _int(value, line_no)
        elif section == "pipeline":
            pipeline_kv[key] = value
        elif section.startswith("node "):
            assert current_node is not None
            current_node[key] = value
        elif section == "filter":
            if key != "drop":
                raise ConfigError(f"unknown filter key {key!r}", line_no)
            filter_rules.append(_parse_filter_rule(value, line_no))
        elif section == "classify":
            if key == "strict":
                strict_classes = value.lower() in ("1", "true", "yes")
                continue
            parts = key.split()
            if len(parts) != 2:
                raise ConfigError(f"expected '<Kind> <native> = <class>'", line_no)
            kind = _KIND_BY_NAME.get(parts[0])
            if kind is None:
                raise ConfigError(f"unknown device kind {parts[0]!r}", line_no)
            mapping_rules[(kind, parts[1])] = value
        elif section == "assets":
            fields = value.split(None, 1)
            asset_value = _int(fields[0], line_no)
            vulns = _vuln_set(fields[1]) if len(fields) > 1 else frozenset()
            asset_entries[key] = (asset_value, vulns)
        elif section == "vulnmap":
            class_vulns[key] = _vuln_set(value)
        elif section == "counterplans":
            if key != "dir":
                raise ConfigError(f"unknown counterplans key {key!r}", line_no)
            counterplan_dir = os.path.join(base_dir, value)
        else:
            raise ConfigError(f"key outside any known section: {line!r}", line_no)

    if depth is None or degree is None:
        raise ConfigError("[tree] section with depth and degree is required")
    shape = TreeShape(depth=depth, max_degree=degree)

    pipeline = _build_pipeline(pipeline_kv)
    nodes: dict[NodeAddress, NodeDecl] = {}
    for addr_text, kv, line_no in node_sections:
        try:
            address = NodeAddress.parse(addr_text, shape)
        except AddressError as exc:
            raise ConfigError(f"bad node address {addr_text!r}: {exc}", line_no) from exc
        if address in nodes:
            raise ConfigError(f"node {addr_text} declared twice", line_no)
        kind_name = kv.get("kind", "")
        kind = _KIND_BY_NAME.get(kind_name)
        if kind is None:
            raise ConfigError(f"node {addr_text}: unknown kind {kind_name!r}", line_no)
        hb_kv = dict(hb_defaults)
        for hb_key in _HB_KEYS:
            if hb_key in kv:
                hb_kv[hb_key] = _int(kv[hb_key], line_no)
        try:
            hb = HeartbeatConfig(**hb_kv)
        except ValueError as exc:
            raise ConfigError(f"node {addr_text}: {exc}", line_no) from exc
        nodes[address] = NodeDecl(
            address=address,
            kind=kind,
            label=kv.get("label", ""),
            ip=kv.get("ip", ""),
            asset_value=_int(kv.get("asset_value", "1"), line_no),
            vulnerability_ids=_vuln_set(kv.get("vulnerabilities", "")),
            hb=hb,
        )

    roots = [a for a in nodes if a.level == 1]
    if len(roots) != 1:
        raise ConfigError(f"expected exactly one root node, found {len(roots)}")
    root = roots[0]
    if nodes[root].kind is not DeviceKind.SMN:
        raise ConfigError(f"root {root} must be a management node")
    for addr, decl in nodes.items():
        parent = addr.parent()
        if parent is None:
            continue
        if parent not in nodes:
            raise ConfigError(f"node {addr} declared without its parent {parent}")
        if nodes[parent].kind is not DeviceKind.SMN:
            raise ConfigError(f"parent of {addr} is not a management node")

    assets = AssetDb(class_vulns=class_vulns)
    for decl in nodes.values():
        if decl.ip:
            assets.records[decl.ip] = AssetRecord(
                ip=decl.ip,
                asset_value=decl.asset_value,
                vulnerability_ids=decl.vulnerability_ids,
            )
    for ip, (asset_value, vulns) in asset_entries.items():
        assets.records[ip] = AssetRecord(
            ip=ip, asset_value=asset_value, vulnerability_ids=vulns
        )

    return TopologyConfig(
        shape=shape,
        nodes=nodes,
        root=root,
        pipeline=pipeline,
        filter_rules=filter_rules,
        mapping=ClassificationMap(rules=mapping_rules, strict=strict_classes),
        assets=assets,
        counterplan_dir=counterplan_dir,
    )


_PIPELINE_INT_KEYS = {
    "validation_threshold",
    "time_horizon",
    "window_ticks",
    "portscan_threshold",
    "grace",
    "connect_ttl",
    "report_interval",
    "command_delay",
}


def _build_pipeline(kv: dict[str, str]) -> PipelineSettings:
    settings = PipelineSettings()
    for key, value in kv.items():
        if key == "similarity_weights":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 5:
                raise ConfigError("similarity_weights needs 5 comma-separated values")
            settings.weights = SimilarityWeights(*(float(p) for p in parts))
        elif key == "merge_threshold":
            settings.merge_threshold = float(value)
        elif key == "time_horizon":
            settings.horizon = int(value)
        elif key in _PIPELINE_INT_KEYS:
            setattr(settings, key, int(value))
        else:
            raise ConfigError(f"unknown pipeline key {key!r}")
    return settings


def load_topology(path: str) -> TopologyConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_topology(fh.read(), base_dir=os.path.dirname(path) or ".")


# ---------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class Directive:
    tick: int
    op: str
    args: dict[str, str]
    line_no: int


@dataclass
class ScenarioScript:
    seed: int = 0
    drain: int = 120
    directives: list[Directive] = field(default_factory=list)

    @property
    def last_tick(self) -> int:
        return self.directives[-1].tick if self.directives else 0


_DIRECTIVE_OPS = {"emit", "silence", "abnormal", "command", "respond", "inject-loss"}


def parse_scenario(text: str) -> ScenarioScript:
    script = ScenarioScript()
    last_tick = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not line.startswith("at "):
            key, value = _split_kv(line, line_no)
            if key == "seed":
                script.seed = _int(value, line_no)
            elif key == "drain":
                script.drain = _int(value, line_no)
            else:
                raise ConfigError(f"unknown scenario key {key!r}", line_no)
            continue
        parts = line.split()
        tick = _int(parts[1], line_no)
        if tick < last_tick:
            raise ConfigError("directives must be time-ordered", line_no)
        last_tick = tick
        op = parts[2] if len(parts) > 2 else ""
        if op not in _DIRECTIVE_OPS:
            raise ConfigError(f"unknown directive {op!r}", line_no)
        args = _parse_directive_args(op, parts[3:], line_no)
        script.directives.append(Directive(tick=tick, op=op, args=args, line_no=line_no))
    return script


def _parse_directive_args(op: str, rest: list[str], line_no: int) -> dict[str, str]:
    args: dict[str, str] = {}
    if op == "emit":
        if not rest:
            raise ConfigError("emit needs a device address", line_no)
        args["device"] = rest[0]
        for token in rest[1:]:
            k, _, v = token.partition("=")
            if k not in ("class", "src", "dst", "sev", "detail"):
                raise ConfigError(f"unknown emit field {k!r}", line_no)
            args[k] = v
        for required in ("class", "src", "dst"):
            if required not in args:
                raise ConfigError(f"emit missing {required}=", line_no)
    elif op in ("silence", "abnormal"):
        if len(rest) != 3 or rest[1] != "until":
            raise ConfigError(f"{op} form: {op} <node> until <tick>", line_no)
        args["node"] = rest[0]
        args["until"] = rest[2]
    elif op == "command":
        if len(rest) != 2:
            raise ConfigError("command form: command <kind> <target>", line_no)
        args["kind"] = rest[0]
        args["target"] = rest[1]
    elif op == "respond":
        if len(rest) < 2:
            raise ConfigError("respond form: respond <action> <handle> [k=v...]", line_no)
        args["action"] = rest[0]
        args["handle"] = rest[1]
        for token in rest[2:]:
            k, _, v = token.partition("=")
            args[k] = v
    elif op == "inject-loss":
        if len(rest) < 3 or "->" not in rest[0] or rest[1] != "until":
            raise ConfigError(
                "inject-loss form: inject-loss <from>-><to> until <tick> [rate=R]",
                line_no,
            )
        src, _, dst = rest[0].partition("->")
        args["from"] = src
        args["to"] = dst
        args["until"] = rest[2]
        args["rate"] = "1.0"
        for token in rest[3:]:
            k, _, v = token.partition("=")
            if k != "rate":
                raise ConfigError(f"unknown inject-loss field {k!r}", line_no)
            args["rate"] = v
    return args


def load_scenario(path: str) -> ScenarioScript:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
