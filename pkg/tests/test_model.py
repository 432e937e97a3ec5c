import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentizer import ids
from agentizer.errors import IllegalTransition, PreconditionError
from agentizer.model import (
    LEGAL_TRANSITIONS,
    CompletionCheck,
    Context,
    ContextItem,
    ContextKind,
    EnvState,
    EnvStatus,
    Goal,
    GoalOrigin,
    Node,
    NodeState,
    Operation,
    context_merge,
    transition_state,
)
from agentizer.runlog import RunLog

TEXT_KINDS = [k for k in ContextKind if k is not ContextKind.ARTIFACT_PATH]

items = st.builds(ContextItem, st.sampled_from(TEXT_KINDS), st.text(min_size=1, max_size=12))
item_lists = st.lists(items, max_size=12)


def goal(text="do it", **kw):
    return Goal(ids.derive("goal", text), text, **kw)


def test_goal_rejects_empty_text():
    with pytest.raises(PreconditionError):
        Goal("goal-1", "   ")


def test_goal_round_trip_keeps_after_and_check():
    g = goal(inputs=("a.txt",), check=CompletionCheck("artifact-exists", "a.txt"), after=("first",))
    assert Goal.from_dict(json.loads(json.dumps(g.to_dict()))) == g


def test_artifact_path_item_must_exist(tmp_path):
    with pytest.raises(PreconditionError):
        ContextItem(ContextKind.ARTIFACT_PATH, str(tmp_path / "missing"))
    (tmp_path / "here").write_text("x")
    assert ContextItem(ContextKind.ARTIFACT_PATH, str(tmp_path / "here")).payload.endswith("here")


def test_merge_with_empty_increment_returns_base():
    base = Context((ContextItem(ContextKind.COMMAND, "ls"),))
    assert context_merge(base, []) is base


@given(item_lists, item_lists)
def test_merge_is_order_preserving_set_union(a, b):
    merged = Context(tuple(a)).merge(b)
    keys = [i.key for i in merged]
    assert len(keys) == len(set(keys))
    assert set(keys) == {i.key for i in a} | {i.key for i in b}
    # base items keep their positions at the front
    base_keys = [i.key for i in Context(tuple(a))]
    assert keys[: len(base_keys)] == base_keys


@given(item_lists, item_lists, item_lists)
def test_merge_is_associative_on_content(a, b, c):
    left = Context(tuple(a)).merge(b).merge(c)
    right = Context(tuple(a)).merge(list(Context(tuple(b)).merge(c)))
    assert [i.key for i in left] == [i.key for i in right]


@given(item_lists)
def test_merge_is_idempotent(a):
    ctx = Context(tuple(a))
    assert ctx.merge(a).digest() == ctx.digest()


@given(item_lists)
def test_context_round_trip(a):
    ctx = Context(tuple(a))
    assert Context.from_dict(json.loads(json.dumps(ctx.to_dict()))) == ctx


def test_pending_node_cannot_carry_operation():
    with pytest.raises(PreconditionError):
        Node("n", goal(), operation=Operation("think"))


def test_done_node_needs_operation():
    with pytest.raises(PreconditionError):
        Node("n", goal(), state=NodeState.DONE)


def test_node_weight_and_demands_are_checked():
    with pytest.raises(PreconditionError):
        Node("n", goal(), weight=0)
    with pytest.raises(PreconditionError):
        Node("n", goal(), resource_demands={"gpu": -1})


@settings(max_examples=200)
@given(st.lists(st.sampled_from(list(NodeState)), max_size=8))
def test_transitions_follow_the_legal_relation(path):
    node = Node("n", goal())
    log = RunLog()
    for target in path:
        legal = (node.state, target) in LEGAL_TRANSITIONS
        before = node.state
        if legal:
            if target is NodeState.DONE:
                node.operation = Operation("think")
            transition_state(node, target, log)
            assert node.state is target
        else:
            with pytest.raises(IllegalTransition):
                transition_state(node, target, log)
            assert node.state is before
    # every recorded event matches a legal edge
    for ev in log:
        assert (NodeState(ev["detail"]["from"]), NodeState(ev["detail"]["to"])) in LEGAL_TRANSITIONS


def test_failed_to_pending_clears_operation():
    node = Node("n", goal())
    transition_state(node, NodeState.RUNNING)
    node.operation = Operation("think")
    transition_state(node, NodeState.FAILED)
    transition_state(node, NodeState.PENDING)
    assert node.operation is None and node.followups == []


def test_env_finishes_only_with_passing_report(tmp_path):
    env = EnvState(tmp_path)

    class Report:
        passed = False

    with pytest.raises(PreconditionError):
        env.mark_finished(Report())
    Report.passed = True
    env.mark_finished(Report())
    assert env.status is EnvStatus.FINISHED


def test_env_relpath_and_round_trip(tmp_path):
    env = EnvState(tmp_path, ["file:a"], ["g1"])
    assert env.relpath(tmp_path / "x" / "y") == "x/y"
    assert EnvState.from_dict(env.to_dict()) == env


def test_ids_are_deterministic_and_slugs_ascii():
    assert ids.derive("node", "p", 1) == ids.derive("node", "p", 1)
    assert ids.derive("node", "p", 1) != ids.derive("node", "p", 2)
    assert ids.root_goal_id("0") != ids.root_goal_id("1")
    assert ids.slug("Stylize Image!") == "stylize-image"
    assert ids.slug("ünïcode") == "n-code"
    assert ids.slug("!!!") == "item"


def test_goal_origin_values():
    assert {o.value for o in GoalOrigin} == {"repo-root", "todo-derived", "validation", "knowledge"}
