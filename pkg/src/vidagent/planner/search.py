"""The four-phase tree search: select, expand, execute a chain, back-propagate."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..backend import ChatBackend, ChatRequest
from ..errors import (
    BackendError,
    DuplicateAction,
    MissingSeparator,
    ParseFailure,
    SearchExhausted,
    UnknownTool,
)
from ..toolkit.grammar import parse_invocation
from ..toolkit.registry import ToolContext, ToolRegistry, registry_descriptions, tool_names
from .prompt import PLANNER_SYSTEM, expansion_prompt, render_planner_prompt
from .react import FINAL_ACTION, STOP, Step, parse_completion
from .selection import select_node
from .tree import FAILURE, NONFAILURE, OPEN, Limits, PlannerTree, RewardConfig, TreeNode, backpropagate

logger = logging.getLogger(__name__)

_RECOVERABLE = (ParseFailure, UnknownTool, MissingSeparator, DuplicateAction)


@dataclass
class Answer:
    text: str
    leaf_id: int
    path: list[dict]
    transcript: str
    iteration: int
    path_reward: float = 0.0


@dataclass
class Session:
    """Everything one planning session needs; the tree is private to it."""

    question: str
    video_ref: str
    registry: ToolRegistry
    backend: ChatBackend
    memory: object = None
    limits: Limits = field(default_factory=Limits)
    tree: PlannerTree = None

    def __post_init__(self):
        if self.tree is None:
            self.tree = PlannerTree(self.question)
        self._descriptions = registry_descriptions(self.registry)
        self._names = tool_names(self.registry)
        self.ctx = ToolContext(memory=self.memory, backend=self.backend)

    @property
    def max_children(self) -> int:
        return self.limits.max_children or max(len(self.registry), 1)

    def prompt(self, ancestor_history: str, scratchpad: str, expansion: str) -> str:
        return render_planner_prompt({
            "video_filename": self.video_ref,
            "input_question": self.question,
            "tool_names": self._names,
            "tool_descriptions": self._descriptions,
            "agent_scratchpad": scratchpad,
            "ancestor_history": ancestor_history,
            "expansion_prompt": expansion,
        })

    def ask(self, turns: list[tuple[str, str]]) -> str:
        request = ChatRequest(PLANNER_SYSTEM, tuple(turns), temperature=0.0, stop_sequences=(STOP,))
        return self.backend.complete(request).text


def _feedback(text: str, exc: Exception) -> list[tuple[str, str]]:
    return [
        ("assistant", text),
        ("user", f"Observation: {type(exc).__name__}: {exc}\nFollow the required format and try again."),
    ]


def _parse_step(session: Session, text: str) -> Step:
    step = parse_completion(text)
    if not step.is_final:
        parse_invocation(step.action, step.action_input, session.registry)
    return step


def _step_fields(step: Step) -> dict:
    if step.is_final:
        return {"thought": step.thought, "final_answer": step.final, "outcome": NONFAILURE}
    return {"thought": step.thought, "action": step.action, "action_input": step.action_input}


def expand_branch(session: Session, node_id: int, iteration: int = 0) -> TreeNode:
    """Add one child to ``node_id`` whose tool call differs from every sibling's.

    On repeated parse failures or duplicates the attempt becomes a failure
    leaf so the negative reward reaches the tree.
    """
    tree = session.tree
    node = tree[node_id]
    siblings = [tree[c] for c in node.children]
    taken = {s.key() for s in siblings if s.key() is not None}
    expansion = expansion_prompt([s.triple() for s in siblings if s.key() is not None])
    turns = [("user", session.prompt(tree.transcript(node_id), "", expansion))]
    last_text, last_exc = "", None
    for _ in range(session.limits.parse_retries + 1):
        text = session.ask(turns)
        try:
            step = _parse_step(session, text)
            key = (FINAL_ACTION, step.final) if step.is_final else (step.action, step.action_input)
            if key in taken:
                raise DuplicateAction(f"{key[0]} with input {key[1]!r} was already explored here")
            return tree.add_child(node_id, iteration, **_step_fields(step))
        except _RECOVERABLE as exc:
            logger.info("expansion attempt rejected: %s", exc)
            last_text, last_exc = text, exc
            turns += _feedback(text, exc)
    return tree.add_child(
        node_id, iteration,
        thought=" ".join(last_text.split()),
        outcome=FAILURE,
        error=f"{type(last_exc).__name__}: {last_exc}",
    )


def _run_tool(session: Session, node: TreeNode) -> bool:
    inv = parse_invocation(node.action, node.action_input, session.registry)
    try:
        node.observation = session.registry.invoke(inv, session.ctx)
    except BackendError:
        raise
    except Exception as exc:  # tool failures end the chain
        node.observation = f"{type(exc).__name__}: {exc}"
        node.outcome = FAILURE
        node.error = f"tool error: {node.observation}"
        return False
    return True


def execute_chain(session: Session, start_id: int, iteration: int = 0) -> TreeNode:
    """Greedy ReAct steps from a freshly expanded node until a leaf is reached."""
    tree = session.tree
    start = tree[start_id]
    history = tree.transcript(start.parent) if start.parent is not None else ""
    node = start
    while True:
        if node.outcome != OPEN:
            return node
        if node.observation is None and not _run_tool(session, node):
            return node
        if node.depth >= session.limits.max_depth:
            node.outcome = FAILURE
            node.error = f"max_depth {session.limits.max_depth} reached without a final answer"
            return node
        turns = [("user", session.prompt(history, tree.transcript(node.id, start=start.parent), ""))]
        step, last_text, last_exc = None, "", None
        for _ in range(session.limits.parse_retries + 1):
            text = session.ask(turns)
            try:
                step = _parse_step(session, text)
                break
            except _RECOVERABLE as exc:
                last_text, last_exc = text, exc
                turns += _feedback(text, exc)
        if step is None:
            try:
                partial = parse_completion(last_text)
                fields = {"thought": partial.thought, "action": partial.action, "action_input": partial.action_input}
            except ParseFailure:
                fields = {"thought": " ".join(last_text.split())}
            err = f"{type(last_exc).__name__}: {last_exc}"
            return tree.add_child(node.id, iteration, observation=err, outcome=FAILURE, error=err, **fields)
        node = tree.add_child(node.id, iteration, **_step_fields(step))


@dataclass
class RunResult:
    answers: list[Answer]
    tree: PlannerTree
    iterations: list[dict]
    config: RewardConfig
    policy: str
    seed: int
    question: str
    video_ref: str
    api_calls: int = 0

    def trace(self) -> dict:
        return {
            "question": self.question,
            "video": self.video_ref,
            "config": {
                "alpha": self.config.alpha,
                "beta": self.config.beta,
                "n": self.config.n_iterations,
                "seed": self.seed,
                "policy": self.policy,
            },
            "iterations": self.iterations,
            "nodes": [n.to_dict() for n in self.tree],
            "answers": [
                {
                    "text": a.text,
                    "leaf_id": a.leaf_id,
                    "iteration": a.iteration,
                    "path_reward": a.path_reward,
                    "transcript": a.transcript,
                }
                for a in self.answers
            ],
        }

    def trace_json(self) -> str:
        return json.dumps(self.trace(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def run(
    question: str,
    video_ref: str,
    memory,
    registry: ToolRegistry,
    backend: ChatBackend,
    config: RewardConfig = RewardConfig(),
    policy: str = "mcts",
    seed: int = 0,
    limits: Optional[Limits] = None,
) -> RunResult:
    """Run ``config.n_iterations`` select/expand/execute/back-propagate rounds.

    Returns the non-failure answers in iteration order together with the tree.
    """
    if not len(registry):
        raise ValueError("registry must contain at least one tool")
    session = Session(question, video_ref, registry, backend, memory, limits or Limits())
    tree = session.tree
    rng = np.random.default_rng(seed)
    calls_before = backend.usage.calls
    answers: list[Answer] = []
    log: list[dict] = []
    for it in range(1, config.n_iterations + 1):
        try:
            selected = select_node(tree, policy, rng, session.max_children, session.limits.max_depth)
        except SearchExhausted as exc:
            logger.info("search exhausted at iteration %d: %s", it, exc)
            log.append({"iteration": it, "exhausted": True})
            break
        child = expand_branch(session, selected, it)
        leaf = child if child.outcome != OPEN else execute_chain(session, child.id, it)
        backpropagate(tree, leaf.id, config, it)
        log.append({
            "iteration": it,
            "selected": selected,
            "expanded": child.id,
            "leaf": leaf.id,
            "outcome": leaf.outcome,
        })
        if leaf.outcome == NONFAILURE:
            path = [n.to_dict() for n in tree.path(leaf.id)[1:]]
            answers.append(Answer(leaf.final_answer, leaf.id, path, tree.transcript(leaf.id), it))
    for a in answers:
        a.path_reward = sum(n.reward for n in tree.path(a.leaf_id)[1:])
    return RunResult(answers, tree, log, config, policy, seed, question, video_ref,
                     api_calls=backend.usage.calls - calls_before)
