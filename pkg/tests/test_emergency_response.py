import pytest

from smnsim.addressing import NodeAddress, TreeShape
from smnsim.emergency_response import (
    DEFAULT_PLAN,
    AlreadyClosed,
    Counterplan,
    CounterplanStore,
    NoParent,
    NotAuthorized,
    NotCoordinator,
    ParticipantsUnconfirmed,
    ResponsePhase,
    TargetOutsideSubtree,
    advance,
    confirm,
    enlist,
    escalate,
    launch,
)

SHAPE = TreeShape(depth=3, max_degree=4)
ROOT = NodeAddress.parse("1.0.0", SHAPE)
OWNER = NodeAddress.parse("1.1.0", SHAPE)
SIBLING = NodeAddress.parse("1.2.0", SHAPE)
OUTSIDER = NodeAddress.parse("1.1.1", SHAPE)


def plan(cls):
    return Counterplan(
        event_class=cls,
        identification=f"identify {cls}",
        containment=f"contain {cls}",
        eradication=f"eradicate {cls}",
        recovery=f"recover {cls}",
    )


def store():
    return CounterplanStore({"dos": plan("dos"), "dos.synflood": plan("dos.synflood")})


def fresh_case(classification="dos.synflood"):
    return launch("alert-1", classification, store(), OWNER, "1.1.0#c1", now=10)


# -- counterplan resolution ------------------------------------------------------


def test_longest_prefix_resolution():
    assert store().resolve("dos.smurf").event_class == "dos"


def test_exact_match_beats_prefix():
    assert store().resolve("dos.synflood").event_class == "dos.synflood"


def test_default_plan_for_unknown_class():
    assert store().resolve("weird.thing") is DEFAULT_PLAN


def test_prefix_matches_whole_segments_only():
    # "dos" must not match "dosser.x"
    assert store().resolve("dosser.x") is DEFAULT_PLAN


def test_plan_dir_round_trip(tmp_path):
    text = (
        "== identification ==\nlook\n"
        "== containment ==\nblock\n"
        "== eradication ==\nclean\n"
        "== recovery ==\nrestore\n"
    )
    (tmp_path / "worm.plan").write_text(text)
    loaded = CounterplanStore.load_dir(str(tmp_path))
    p = loaded.resolve("worm.blaster")
    assert (p.identification, p.containment, p.eradication, p.recovery) == (
        "look",
        "block",
        "clean",
        "restore",
    )


# -- launch / advance -------------------------------------------------------------


def test_launch_starts_in_identification():
    case = fresh_case()
    assert case.phase is ResponsePhase.IDENTIFICATION
    assert case.plan.event_class == "dos.synflood"
    actions = [a for _, _, a, _ in case.log]
    assert actions == ["launch", "plan-resolved"]


def test_advance_walks_phases_in_order():
    case = fresh_case()
    seen = [case.phase]
    for t in range(11, 15):
        advance(case, OWNER, t)
        seen.append(case.phase)
    assert seen == list(ResponsePhase)
    with pytest.raises(AlreadyClosed):
        advance(case, OWNER, 15)


def test_advance_rejects_unrelated_actor():
    case = fresh_case()
    with pytest.raises(NotAuthorized):
        advance(case, SIBLING, 11)


def test_advance_by_coordinator_after_escalation():
    case = fresh_case()
    escalate(case, 11)
    advance(case, ROOT, 12)
    assert case.phase is ResponsePhase.CONTAINMENT


def test_containment_gate_blocks_until_confirms():
    case = fresh_case()
    escalate(case, 11)
    advance(case, OWNER, 12)  # -> Containment
    enlist(case, ROOT, [SIBLING], 13)
    with pytest.raises(ParticipantsUnconfirmed):
        advance(case, OWNER, 14)
    confirm(case, SIBLING, 15)
    advance(case, OWNER, 16)
    assert case.phase is ResponsePhase.ERADICATION


# -- escalate / enlist --------------------------------------------------------------


def test_escalate_sets_parent_coordinator():
    case = fresh_case()
    assert escalate(case, 11) == ROOT
    assert case.coordinator == ROOT


def test_escalate_at_root_rejected():
    case = launch("alert-1", "dos", store(), ROOT, "1.0.0#c1", now=10)
    with pytest.raises(NoParent):
        escalate(case, 11)


def test_escalate_idempotent():
    case = fresh_case()
    escalate(case, 11)
    escalate(case, 12)
    assert case.coordinator == ROOT
    assert sum(1 for _, _, a, _ in case.log if a == "escalate") == 1


def test_enlist_requires_coordinator():
    case = fresh_case()
    with pytest.raises(NotCoordinator):
        enlist(case, ROOT, [SIBLING], 11)
    escalate(case, 11)
    with pytest.raises(NotCoordinator):
        enlist(case, OWNER, [SIBLING], 12)


def test_enlist_rejects_target_outside_subtree():
    case = fresh_case()
    escalate(case, 11)
    outside = NodeAddress.parse("1.1.0", SHAPE)  # not strictly below itself
    with pytest.raises(TargetOutsideSubtree):
        enlist(case, ROOT, [ROOT], 12)


def test_enlist_adds_participants_once():
    case = fresh_case()
    escalate(case, 11)
    assert enlist(case, ROOT, [SIBLING], 12) == [SIBLING]
    assert enlist(case, ROOT, [SIBLING], 13) == []
    assert case.participants == {SIBLING}


# -- invariants ----------------------------------------------------------------------


def test_phase_log_is_monotone_prefix():
    case = fresh_case()
    escalate(case, 11)
    for t in range(12, 16):
        advance(case, OWNER if t % 2 else ROOT, t)
    phases = [d for _, _, a, d in case.log if a == "advance"]
    expected = [p.value for p in list(ResponsePhase)[1:]]
    assert phases == expected


def test_every_advance_actor_was_authorized():
    case = fresh_case()
    escalate(case, 11)
    for t in range(12, 16):
        advance(case, ROOT, t)
    for _, actor, action, _ in case.log:
        if action == "advance":
            assert actor in (str(OWNER), str(ROOT))
