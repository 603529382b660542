"""The addressed device tree and its textual embedding structure.

A tree of device records, each holding an address and a state, is what a
management node computes on (the virtual view) and what the console displays
(the user view). Trees travel between views and between management levels as
a bracketed text form::

    node = '[' address ':' state-code { ':' node } ']'

with no whitespace anywhere. Parsing and serialization are exact inverses
over canonical text, which is what makes subtree splicing between levels
testable byte-for-byte.

Mutations produce ChangeSets; replaying a ChangeSet against a mirror copy
keeps user view and virtual view structurally equal. Subtree splicing
(assemble) and pruning (disassemble) ship the affected subtree in embedding
form, so the mirror runs the very same algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .addressing import AddressError, NodeAddress, TreeShape
from .device_model import DeviceKind, DeviceState


class TreeError(Exception):
    """Base class for device-tree failures."""


class EmbeddingSyntaxError(TreeError):
    def __init__(self, message: str, pos: int) -> None:
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class AddressInconsistent(TreeError):
    pass


class DuplicateChild(TreeError):
    pass


class ParentMissing(TreeError):
    pass


class ParentNotSMN(TreeError):
    pass


class DuplicateAddress(TreeError):
    pass


class NotFound(TreeError):
    pass


class CannotDeleteRoot(TreeError):
    pass


class AssemblingNodeMissing(TreeError):
    pass


class StaleChangeSet(TreeError):
    pass


_STATE_BY_CODE = {s.value: s for s in DeviceState}


@dataclass(eq=False)
class DeviceNodeRecord:
    """One node of an addressed device tree.

    ``kind`` is None for nodes learned from the wire: the embedding text
    carries only address and state, so a leaf's kind is not locally known.
    Nodes with children are always management nodes.
    """

    address: NodeAddress
    state: DeviceState
    kind: DeviceKind | None = None
    label: str = ""
    children: list["DeviceNodeRecord"] = field(default_factory=list)
    _index: dict[int, "DeviceNodeRecord"] = field(default_factory=dict, repr=False)

    @property
    def segment(self) -> int:
        """This node's number under its parent."""
        return self.address.segments[self.address.level - 1]

    def attach(self, child: "DeviceNodeRecord") -> None:
        self.children.append(child)
        self._index[child.segment] = child

    def detach(self, child: "DeviceNodeRecord") -> None:
        self.children.remove(child)
        del self._index[child.segment]

    def replace_child(self, old: "DeviceNodeRecord", new: "DeviceNodeRecord") -> None:
        self.children[self.children.index(old)] = new
        del self._index[old.segment]
        self._index[new.segment] = new

    def reindex(self) -> None:
        self._index = {c.segment: c for c in self.children}


@dataclass(frozen=True)
class ChangeRecord:
    """One replayable mutation of a device tree."""

    op: str  # full | assemble | disassemble | add | update | delete
    address: NodeAddress | None = None
    state: DeviceState | None = None
    kind: DeviceKind | None = None
    label: str = ""
    embedding: str | None = None


ChangeSet = tuple[ChangeRecord, ...]


def serialize_node(node: DeviceNodeRecord) -> str:
    parts = [f"[{node.address}:{node.state.value}"]
    for child in node.children:
        parts.append(":")
        parts.append(serialize_node(child))
    parts.append("]")
    return "".join(parts)


def structurally_equal(a: DeviceNodeRecord, b: DeviceNodeRecord) -> bool:
    """Equality over addresses, states and child order; kind and label are
    display attributes not carried by the embedding text."""
    if a.address != b.address or a.state != b.state:
        return False
    if len(a.children) != len(b.children):
        return False
    return all(structurally_equal(x, y) for x, y in zip(a.children, b.children))


def _parse_node(text: str, pos: int, shape: TreeShape) -> tuple[DeviceNodeRecord, int]:
    if pos >= len(text) or text[pos] != "[":
        raise EmbeddingSyntaxError("expected '['", pos)
    pos += 1
    colon = text.find(":", pos)
    if colon < 0:
        raise EmbeddingSyntaxError("expected ':' after address", pos)
    addr_text = text[pos:colon]
    try:
        address = NodeAddress.parse(addr_text, shape)
    except AddressError as exc:
        raise EmbeddingSyntaxError(f"bad address {addr_text!r}: {exc}", pos) from exc
    pos = colon + 1
    end = pos
    while end < len(text) and text[end] not in ":]":
        end += 1
    if end >= len(text):
        raise EmbeddingSyntaxError("unterminated node", pos)
    state_code = text[pos:end]
    state = _STATE_BY_CODE.get(state_code)
    if state is None:
        raise EmbeddingSyntaxError(f"unknown state code {state_code!r}", pos)
    pos = end
    node = DeviceNodeRecord(address=address, state=state)
    while pos < len(text) and text[pos] == ":":
        child, pos = _parse_node(text, pos + 1, shape)
        if child.address.parent() != address:
            raise AddressInconsistent(
                f"{child.address} is not a tree child of {address}"
            )
        if child.segment in node._index:
            raise DuplicateChild(f"duplicate child {child.address} under {address}")
        node.attach(child)
    if pos >= len(text) or text[pos] != "]":
        raise EmbeddingSyntaxError("expected ']'", pos)
    if node.children:
        node.kind = DeviceKind.SMN
    return node, pos + 1


def build_tree(embedding: str, shape: TreeShape) -> "AddressedDeviceTree":
    """Parse embedding text into a tree. Inverse of :meth:`AddressedDeviceTree.serialize`."""
    root, end = _parse_node(embedding, 0, shape)
    if end != len(embedding):
        raise EmbeddingSyntaxError("trailing characters after root node", end)
    return AddressedDeviceTree(shape=shape, root=root)


@dataclass
class AddressedDeviceTree:
    """A device tree addressable by segment descent.

    The root may sit at any level: a management node's own view is rooted at
    itself, while the system-wide view is rooted at the level-1 node.
    """

    shape: TreeShape
    root: DeviceNodeRecord

    def serialize(self) -> str:
        return serialize_node(self.root)

    def nodes(self) -> list[DeviceNodeRecord]:
        """All nodes in serialization (depth-first, child order) order."""
        out: list[DeviceNodeRecord] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(node.children))
        return out

    def addresses(self) -> set[NodeAddress]:
        return {n.address for n in self.nodes()}

    def find(self, addr: NodeAddress) -> DeviceNodeRecord | None:
        node, _ = self.find_instrumented(addr)
        return node

    def find_instrumented(
        self, addr: NodeAddress, scan: bool = False
    ) -> tuple[DeviceNodeRecord | None, int]:
        """Segment descent with a visit counter.

        With indexed children each level costs one visit; with ``scan`` the
        children list is searched linearly, costing up to the tree degree
        per level.
        """
        root_level = self.root.address.level
        target_level = addr.level
        visits = 1
        if addr.segments[:root_level] != self.root.address.segments[:root_level]:
            return None, visits
        node = self.root
        if target_level < root_level:
            return None, visits
        for lvl in range(root_level, target_level):
            seg = addr.segments[lvl]
            if scan:
                nxt = None
                for child in node.children:
                    visits += 1
                    if child.segment == seg:
                        nxt = child
                        break
            else:
                nxt = node._index.get(seg)
                visits += 1 if nxt is not None else 0
            if nxt is None:
                return None, visits
            node = nxt
        return node, visits

    def add_device(self, record: DeviceNodeRecord) -> ChangeRecord:
        parent_addr = record.address.parent()
        if parent_addr is None:
            raise ParentMissing(f"{record.address} has no parent address")
        parent = self.find(parent_addr)
        if parent is None:
            raise ParentMissing(f"parent {parent_addr} not in tree")
        if parent.kind is None:
            # wire-learned leaf gaining a child: that proves it is a
            # management node
            parent.kind = DeviceKind.SMN
        elif parent.kind is not DeviceKind.SMN:
            raise ParentNotSMN(f"parent {parent_addr} is not a management node")
        if record.segment in parent._index:
            raise DuplicateAddress(f"{record.address} already present")
        parent.attach(record)
        return ChangeRecord(
            op="add",
            address=record.address,
            state=record.state,
            kind=record.kind,
            label=record.label,
        )

    def delete_device(self, addr: NodeAddress) -> ChangeRecord:
        if addr == self.root.address:
            raise CannotDeleteRoot(f"{addr} is the tree root")
        node = self.find(addr)
        if node is None:
            raise NotFound(f"{addr} not in tree")
        parent = self.find(addr.parent())
        assert parent is not None
        parent.detach(node)
        return ChangeRecord(op="delete", address=addr)

    def set_state(self, addr: NodeAddress, state: DeviceState) -> ChangeRecord:
        node = self.find(addr)
        if node is None:
            raise NotFound(f"{addr} not in tree")
        node.state = state
        return ChangeRecord(op="update", address=addr, state=state)

    def assemble(self, embedding: str) -> ChangeSet:
        """Splice a reported subtree over its stub in this tree.

        The subtree root's address names the assembling node, which must
        already exist; the incoming subtree takes the stub's position in its
        parent's child list, so repeated report/splice cycles keep the
        serialization stable.
        """
        subtree = build_tree(embedding, self.shape)
        new_root = subtree.root
        assembling = self.find(new_root.address)
        if assembling is None:
            raise AssemblingNodeMissing(f"{new_root.address} not in main tree")
        # Wire-built nodes carry no kind; keep what the stub knew.
        if new_root.kind is None:
            new_root.kind = assembling.kind
        if not new_root.label:
            new_root.label = assembling.label
        if assembling is self.root:
            self.root = new_root
        else:
            parent = self.find(new_root.address.parent())
            assert parent is not None
            parent.replace_child(assembling, new_root)
        return (ChangeRecord(op="assemble", embedding=serialize_node(new_root)),)

    def disassemble(self, addr: NodeAddress, offline_state: DeviceState) -> ChangeSet:
        """Mark a silent node offline and drop its whole subtree, keeping the
        node itself as a stub."""
        node = self.find(addr)
        if node is None:
            raise NotFound(f"{addr} not in tree")
        node.state = offline_state
        node.children.clear()
        node._index.clear()
        return (ChangeRecord(op="disassemble", address=addr, state=offline_state),)

    def full_snapshot(self) -> ChangeSet:
        return (ChangeRecord(op="full", embedding=self.serialize()),)

    def apply_changeset(self, changes: ChangeSet) -> None:
        """Replay changes produced against another copy of this tree."""
        for rec in changes:
            try:
                self._apply_one(rec)
            except (TreeError, AddressError) as exc:
                if isinstance(exc, StaleChangeSet):
                    raise
                raise StaleChangeSet(f"cannot apply {rec.op}: {exc}") from exc

    def _apply_one(self, rec: ChangeRecord) -> None:
        if rec.op == "full":
            assert rec.embedding is not None
            self.root = build_tree(rec.embedding, self.shape).root
        elif rec.op == "assemble":
            assert rec.embedding is not None
            self.assemble(rec.embedding)
        elif rec.op == "disassemble":
            assert rec.address is not None and rec.state is not None
            self.disassemble(rec.address, rec.state)
        elif rec.op == "add":
            assert rec.address is not None and rec.state is not None
            self.add_device(
                DeviceNodeRecord(
                    address=rec.address, state=rec.state, kind=rec.kind, label=rec.label
                )
            )
        elif rec.op == "update":
            assert rec.address is not None and rec.state is not None
            self.set_state(rec.address, rec.state)
        elif rec.op == "delete":
            assert rec.address is not None
            self.delete_device(rec.address)
        else:
            raise StaleChangeSet(f"unknown change op {rec.op!r}")

    def validate(self) -> None:
        """Check every structural invariant; raises TreeError on violation."""
        seen: set[NodeAddress] = set()
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.address in seen:
                raise DuplicateAddress(f"{node.address} appears twice")
            seen.add(node.address)
            if node.children and node.kind is not DeviceKind.SMN:
                raise ParentNotSMN(f"{node.address} has children but kind {node.kind}")
            segs = set()
            for child in node.children:
                if child.address.parent() != node.address:
                    raise AddressInconsistent(
                        f"{child.address} filed under {node.address}"
                    )
                if child.segment in segs:
                    raise DuplicateChild(f"duplicate segment under {node.address}")
                segs.add(child.segment)
                if node._index.get(child.segment) is not child:
                    raise TreeError(f"child index stale under {node.address}")
            if len(node._index) != len(node.children):
                raise TreeError(f"child index size mismatch under {node.address}")
            stack.extend(node.children)
