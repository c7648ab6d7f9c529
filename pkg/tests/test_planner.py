import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import planner_context, toy_planner, video_llm
from vidagent.backend import FunctionBackend, ScriptedBackend
from vidagent.errors import MissingPlaceholder, ParseFailure, SearchExhausted, ToolExecutionError
from vidagent.planner import (
    FAILURE,
    NONFAILURE,
    PLACEHOLDERS,
    Limits,
    PlannerTree,
    RewardConfig,
    Session,
    backpropagate,
    execute_chain,
    expand_branch,
    parse_completion,
    render_planner_prompt,
    run,
    select_node,
    selection_probabilities,
    softmax,
    validate_transcript,
)
from vidagent.planner.prompt import EXPANSION_HEADER, expansion_prompt
from vidagent.toolkit import ToolRegistry, ToolSpec, default_registry

CTX = {name: f"<{name}>" for name in PLACEHOLDERS} | {"expansion_prompt": ""}


def chain(tree, depth, outcome=NONFAILURE):
    node = tree.root
    for i in range(depth):
        node = tree.add_child(node.id, 1, thought=f"t{i}", action="VideoWhat", action_input=f"v#{i}")
    node.outcome = outcome
    return node


def toy_registry(names, failing=()):
    registry = ToolRegistry()
    for name in names:
        def handler(inv, ctx, name=name):
            if name in failing:
                raise ToolExecutionError(f"{name} crashed")
            return f"{name} says {inv.sub_question}"
        registry.register(ToolSpec(name, f"{name} tool, input <video>#<question>"), handler)
    return registry


# -- prompt --------------------------------------------------------------------------

def test_render_substitutes_every_placeholder():
    text = render_planner_prompt(CTX)
    for name in PLACEHOLDERS:
        if name != "expansion_prompt":
            assert f"<{name}>" in text
        assert "{" + name + "}" not in text
    assert EXPANSION_HEADER not in text
    assert render_planner_prompt(CTX) == text


def test_render_missing_placeholder():
    ctx = dict(CTX)
    del ctx["ancestor_history"]
    with pytest.raises(MissingPlaceholder):
        render_planner_prompt(ctx)


def test_render_leaves_braces_in_values_alone():
    text = render_planner_prompt(CTX | {"input_question": "what is {agent_scratchpad}?"})
    assert "what is {agent_scratchpad}?" in text


def test_expansion_prompt_lists_children():
    assert expansion_prompt([]) == ""
    text = expansion_prompt([("look", "VideoWhat", "v#q1"), ("count", "VideoCount", "v#q2")])
    assert text.startswith(EXPANSION_HEADER)
    assert "1. Thought: look | Action: VideoWhat | Action Input: v#q1" in text
    assert "2. Thought: count | Action: VideoCount | Action Input: v#q2" in text


# -- completions and transcripts ------------------------------------------------------------

def test_parse_completion_step_and_final():
    step = parse_completion("Thought: I need a count\nAction: VideoCount\nAction Input: v.mp4#How many?\n")
    assert (step.thought, step.action, step.action_input, step.is_final) == ("I need a count", "VideoCount", "v.mp4#How many?", False)
    final = parse_completion("Thought: I now know the final answer\nFinal Answer: 3")
    assert final.is_final and final.final == "3"


@pytest.mark.parametrize("text", ["Thought: hmm", "Action: X", "Thought: x\nFinal Answer:   ", "Action:\nAction Input: y"])
def test_parse_completion_failures(text):
    with pytest.raises(ParseFailure):
        parse_completion(text)


def test_validate_transcript():
    good = ("Thought: a\nAction: VideoWhat\nAction Input: v#q\nObservation: line one\nline two\n"
            "Thought: b\nFinal Answer: 3\n")
    blocks = validate_transcript(good)
    assert blocks[0]["observation"] == "line one\nline two" and blocks[1]["final_answer"] == "3"
    for bad in ["Action: X\n", "Thought: a\nAction: X\nObservation: y\n",
                "Thought: a\nFinal Answer: 1\nThought: b\nFinal Answer: 2\n"]:
        with pytest.raises(ParseFailure):
            validate_transcript(bad)


# -- back-propagation ----------------------------------------------------------------------

def test_backprop_closed_form_depth_three():
    tree = PlannerTree("q")
    leaf = chain(tree, 3)
    backpropagate(tree, leaf.id, RewardConfig(1.0, 0.5))
    assert leaf.reward == 1.0
    assert [tree[i].reward for i in (2, 1, 0)] == pytest.approx([1.0, math.exp(-0.5), math.exp(-1.0)], abs=1e-12)


def test_backprop_failure_and_no_decay():
    tree = PlannerTree("q")
    leaf = chain(tree, 4, FAILURE)
    backpropagate(tree, leaf.id, RewardConfig(2.0, 0.0))
    assert [n.reward for n in tree] == [-2.0] * 5


def test_backprop_huge_beta_only_reaches_parent():
    tree = PlannerTree("q")
    leaf = chain(tree, 4, FAILURE)
    backpropagate(tree, leaf.id, RewardConfig(1.0, 1e8))
    assert tree[3].reward == -1.0
    assert all(abs(tree[i].reward) < 1e-300 for i in (0, 1, 2))


def test_backprop_is_local_and_logged():
    tree = PlannerTree("q")
    first = chain(tree, 2)
    backpropagate(tree, first.id, RewardConfig(), iteration=1)
    side = tree.add_child(0, 2, thought="other", action="VideoWhen", action_input="v#w", outcome=FAILURE)
    before = {n.id: n.reward for n in tree}
    backpropagate(tree, side.id, RewardConfig(), iteration=2)
    changed = {n.id for n in tree if n.reward != before[n.id]}
    assert changed == {0, side.id}
    assert tree[0].reward_history == [(1, math.exp(-0.5)), (2, -1.0)]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.floats(0.01, 5), st.floats(0, 4), st.booleans())
def test_backprop_decay_monotone(depth, alpha, beta, success):
    tree = PlannerTree("q")
    leaf = chain(tree, depth, NONFAILURE if success else FAILURE)
    backpropagate(tree, leaf.id, RewardConfig(alpha, beta))
    mags = [abs(n.reward) for n in reversed(tree.path(leaf.id)[:-1])]  # d = 1, 2, ...
    for near, far in zip(mags, mags[1:]):
        assert far <= near
        if beta > 1e-3:  # smaller decay rates round to exactly 1 in double precision
            assert far < near
    assert mags[0] == pytest.approx(alpha)


# -- selection ---------------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_softmax_normalized_and_monotone(values):
    p = softmax(values)
    assert abs(p.sum() - 1.0) < 1e-12
    # the highest-reward node gets the largest probability (ties allowed at float resolution)
    assert p[int(np.argmax(values))] == p.max()


def test_softmax_closed_form():
    assert softmax([1.0, -1.0])[0] == pytest.approx(math.e / (math.e + math.exp(-1)), abs=1e-15)


def _two_branch_tree(ra, rb):
    tree = PlannerTree("q")
    a = tree.add_child(0, 1, thought="a", action="A", action_input="v#a")
    b = tree.add_child(0, 1, thought="b", action="B", action_input="v#b")
    a.reward, b.reward = ra, rb
    tree.root.reward = float("nan")  # the root is full below, so it is never a candidate
    return tree, a, b


def test_policies():
    tree, a, b = _two_branch_tree(-1.0, 0.5)
    rng = np.random.default_rng(0)
    assert select_node(tree, "dfs", rng, 2, 8) == b.id
    with pytest.raises(SearchExhausted):
        select_node(tree, "root", rng, 2, 8)
    assert {select_node(tree, "uniform", rng, 2, 8) for _ in range(50)} == {a.id, b.id}
    fresh = PlannerTree("q")
    for policy in ("mcts", "dfs", "root", "uniform"):
        assert select_node(fresh, policy, rng, 3, 8) == 0
    with pytest.raises(ValueError):
        select_node(fresh, "best", rng, 3, 8)


def test_reward_guided_avoidance():
    tree, a, b = _two_branch_tree(-1.0, 0.5)
    rng = np.random.default_rng(1)
    picks = [select_node(tree, "mcts", rng, 2, 8) for _ in range(2000)]
    assert picks.count(b.id) / len(picks) > 0.5
    assert selection_probabilities([a, b])[1] == pytest.approx(1 / (1 + math.exp(-1.5)))


def test_leaves_and_depth_cap_not_selectable():
    tree = PlannerTree("q")
    leaf = chain(tree, 2)
    rng = np.random.default_rng(0)
    assert select_node(tree, "dfs", rng, 3, 8) == 1
    assert leaf.id != select_node(tree, "dfs", rng, 3, 1)
    tree.root.children += [99, 98]  # pretend the root is full
    with pytest.raises(SearchExhausted):
        select_node(tree, "dfs", rng, 3, 1)


# -- expansion and chains ----------------------------------------------------------------------------

def test_expand_adds_distinct_sibling():
    session = Session("What happens?", "v.mp4", default_registry(), ScriptedBackend(
        ["Thought: time\nAction: VideoWhen\nAction Input: v.mp4#When does it happen?"]))
    session.tree.add_child(0, 1, thought="look", action="VideoWhat", action_input="v.mp4#What is it?")
    child = expand_branch(session, 0, 2)
    assert (child.action, child.parent) == ("VideoWhen", 0)
    prompt = session.backend.requests[0].turns[0][1]
    assert EXPANSION_HEADER in prompt and "Action: VideoWhat | Action Input: v.mp4#What is it?" in prompt


def test_expand_duplicate_becomes_failure_leaf():
    dup = "Thought: look\nAction: VideoWhat\nAction Input: v.mp4#What is it?"
    session = Session("What happens?", "v.mp4", default_registry(), ScriptedBackend([dup] * 3))
    session.tree.add_child(0, 1, thought="look", action="VideoWhat", action_input="v.mp4#What is it?")
    child = expand_branch(session, 0, 2)
    assert child.outcome == FAILURE and "DuplicateAction" in child.error
    assert session.backend.remaining == 0
    backpropagate(session.tree, child.id, RewardConfig())
    assert session.tree.root.reward == -1.0
    session.tree.check()


def test_first_expansion_has_no_expansion_section():
    backend = ScriptedBackend(["Thought: t\nFinal Answer: nothing to do"])
    session = Session("Q?", "v.mp4", default_registry(), backend)
    expand_branch(session, 0, 1)
    assert EXPANSION_HEADER not in backend.requests[0].turns[0][1]


def test_chain_count_then_answer(fixture_memories):
    memory = fixture_memories["street"]
    backend = ScriptedBackend([
        "Thought: count people\nAction: VideoCount\nAction Input: street.mp4#How many people are there?",
        "SQL: SELECT COUNT(*) FROM instances WHERE category = 'person'",
        "There are 3 people.",
        "Thought: I now know the final answer\nFinal Answer: 3",
    ])
    session = Session("How many people cross?", "street.mp4", default_registry(), backend, memory)
    start = expand_branch(session, 0, 1)
    leaf = execute_chain(session, start.id, 1)
    assert (leaf.outcome, leaf.final_answer, leaf.depth) == (NONFAILURE, "3", 2)
    assert start.observation == "There are 3 people."
    # the scratchpad of the answering call holds the step and its observation, no expansion text
    last_prompt = backend.requests[-1].turns[0][1]
    assert last_prompt.endswith("Observation: There are 3 people.\n") and EXPANSION_HEADER not in last_prompt


def test_chain_hits_depth_cap():
    registry = toy_registry(["Probe"])
    backend = FunctionBackend(lambda r: "Thought: again\nAction: Probe\nAction Input: v#more")
    session = Session("Q?", "v", registry, backend, limits=Limits(max_depth=3))
    leaf = execute_chain(session, expand_branch(session, 0).id)
    assert leaf.outcome == FAILURE and leaf.depth == 3 and "max_depth" in leaf.error


def test_chain_unknown_tool_after_retries():
    backend = ScriptedBackend(["Thought: a\nAction: Probe\nAction Input: v#q"]
                              + ["Thought: b\nAction: Nope\nAction Input: v#q"] * 3)
    session = Session("Q?", "v", toy_registry(["Probe"]), backend)
    leaf = execute_chain(session, expand_branch(session, 0).id)
    assert leaf.outcome == FAILURE and leaf.depth == 2
    assert leaf.observation.startswith("UnknownTool") and leaf.action == "Nope"
    validate_transcript(session.tree.transcript(leaf.id))


def test_chain_tool_error_is_failure():
    backend = ScriptedBackend(["Thought: a\nAction: Probe\nAction Input: v#q"])
    session = Session("Q?", "v", toy_registry(["Probe"], failing={"Probe"}), backend)
    leaf = execute_chain(session, expand_branch(session, 0).id)
    assert leaf.outcome == FAILURE and leaf.depth == 1 and "crashed" in leaf.observation


# -- full runs -------------------------------------------------------------------------------------------

def test_n1_is_the_greedy_chain_for_every_policy(fixture_memories):
    traces = set()
    for policy in ("mcts", "dfs", "root", "uniform"):
        result = run("How many dogs are there?", "park.mp4", fixture_memories["park"], default_registry(),
                     FunctionBackend(video_llm), RewardConfig(n_iterations=1), policy, seed=3)
        trace = result.trace()
        trace["config"].pop("policy")
        traces.add(repr(trace))
        assert [a.text for a in result.answers] == ["2"]
    assert len(traces) == 1


def test_four_iterations_one_failing_branch():
    tools = ["T0", "T1", "T2", "T3"]
    for policy, seed in [("root", 0), ("mcts", 0), ("mcts", 5), ("uniform", 2), ("dfs", 0)]:
        result = run("Q?", "v.mp4", None, toy_registry(tools, failing={"T0"}), FunctionBackend(toy_planner(tools)),
                     RewardConfig(n_iterations=4), policy, seed)
        assert 1 <= len(result.answers) <= 4
        assert len(result.tree.leaves()) == 4
        result.tree.check()
        for answer in result.answers:
            validate_transcript(answer.transcript)
    root_run = run("Q?", "v.mp4", None, toy_registry(tools, failing={"T0"}), FunctionBackend(toy_planner(tools)),
                   RewardConfig(n_iterations=4), "root", 0)
    assert [a.text for a in root_run.answers] == ["T1 says step 0", "T2 says step 0", "T3 says step 0"]


def test_run_is_deterministic(fixture_memories):
    def once():
        return run("How many people are there?", "kitchen.mp4", fixture_memories["kitchen"], default_registry(),
                   FunctionBackend(video_llm), RewardConfig(n_iterations=4), "mcts", seed=11).trace_json()

    assert once() == once()


def test_node_count_grows_by_chain_length():
    tools = ["T0", "T1"]
    result = run("Q?", "v.mp4", None, toy_registry(tools), FunctionBackend(toy_planner(tools)),
                 RewardConfig(n_iterations=3), "root", 0)
    sizes = [len([n for n in result.tree if n.iteration == it]) for it in (1, 2, 3)]
    assert sizes[:2] == [2, 2]
    assert len(result.tree) == 1 + sum(sizes)


def test_run_stops_when_exhausted():
    tools = ["T0"]
    result = run("Q?", "v.mp4", None, toy_registry(tools), FunctionBackend(toy_planner(tools)),
                 RewardConfig(n_iterations=5), "root", 0)
    assert result.iterations[-1] == {"iteration": 2, "exhausted": True}
    assert len(result.answers) == 1


def test_path_reward_and_trace_schema(fixture_memories):
    result = run("How many people are there?", "kitchen.mp4", fixture_memories["kitchen"], default_registry(),
                 FunctionBackend(video_llm), RewardConfig(n_iterations=2), "mcts", seed=0)
    trace = result.trace()
    assert set(trace) == {"question", "video", "config", "iterations", "nodes", "answers"}
    assert trace["config"] == {"alpha": 1.0, "beta": 0.5, "n": 2, "seed": 0, "policy": "mcts"}
    node = trace["nodes"][1]
    assert {"id", "parent", "thought", "action", "action_input", "observation", "outcome", "reward_history"} <= set(node)
    for a in result.answers:
        assert a.path_reward == pytest.approx(sum(result.tree[n["id"]].reward for n in a.path))


def test_prompt_context_helper_sees_expansion():
    session = Session("Q?", "v.mp4", toy_registry(["A"]), ScriptedBackend())
    prompt = session.prompt("", "", expansion_prompt([("x", "A", "v.mp4#1")]))
    assert planner_context(prompt)[2] == {("A", "v.mp4#1")}
