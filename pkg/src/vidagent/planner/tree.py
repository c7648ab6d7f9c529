"""Search tree of ReAct steps and the reward back-propagation rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .react import FINAL_ACTION, format_final, format_step

OPEN, FAILURE, NONFAILURE = "open", "failure", "nonfailure"


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 1.0
    beta: float = 0.5
    n_iterations: int = 2

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")


@dataclass(frozen=True)
class Limits:
    max_depth: int = 8
    max_children: Optional[int] = None  # None: number of registered tools
    parse_retries: int = 2

    def __post_init__(self):
        if self.max_depth < 1 or self.parse_retries < 0:
            raise ValueError("max_depth must be >= 1 and parse_retries >= 0")
        if self.max_children is not None and self.max_children < 1:
            raise ValueError("max_children must be >= 1")


@dataclass
class TreeNode:
    id: int
    parent: Optional[int]
    depth: int
    thought: str = ""
    action: str = ""
    action_input: str = ""
    observation: Optional[str] = None
    final_answer: Optional[str] = None
    outcome: str = OPEN
    error: Optional[str] = None
    reward: float = 0.0
    reward_history: list[tuple[int, float]] = field(default_factory=list)
    children: list[int] = field(default_factory=list)
    iteration: int = 0
    question: Optional[str] = None  # root only

    @property
    def is_root(self) -> bool:
        return self.parent is None

    @property
    def is_leaf(self) -> bool:
        return self.outcome != OPEN

    def key(self) -> tuple[str, str] | None:
        """Identity used for sibling distinctness; None for nodes without a tool call."""
        if self.final_answer is not None:
            return (FINAL_ACTION, self.final_answer)
        if self.action:
            return (self.action, self.action_input)
        return None

    def triple(self) -> tuple[str, str, str]:
        if self.final_answer is not None:
            return (self.thought, FINAL_ACTION, self.final_answer)
        return (self.thought, self.action, self.action_input)

    def render(self) -> str:
        if self.is_root:
            return ""
        if self.final_answer is not None:
            return format_final(self.thought, self.final_answer)
        if not self.action:
            return ""
        return format_step(self.thought, self.action, self.action_input, self.observation)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "depth": self.depth,
            "children": list(self.children),
            "thought": self.thought,
            "action": self.action,
            "action_input": self.action_input,
            "observation": self.observation,
            "final_answer": self.final_answer,
            "outcome": self.outcome,
            "error": self.error,
            "reward": self.reward,
            "reward_history": [list(h) for h in self.reward_history],
            "iteration": self.iteration,
            "question": self.question,
        }


class PlannerTree:
    def __init__(self, question: str):
        self.nodes: list[TreeNode] = [TreeNode(0, None, 0, question=question)]

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def __getitem__(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[TreeNode]:
        return iter(self.nodes)

    def add_child(self, parent_id: int, iteration: int, **fields) -> TreeNode:
        parent = self.nodes[parent_id]
        node = TreeNode(len(self.nodes), parent_id, parent.depth + 1, iteration=iteration, **fields)
        self.nodes.append(node)
        parent.children.append(node.id)
        return node

    def path(self, node_id: int) -> list[TreeNode]:
        """Nodes from the root to ``node_id`` inclusive."""
        out = []
        node: Optional[TreeNode] = self.nodes[node_id]
        while node is not None:
            out.append(node)
            node = None if node.parent is None else self.nodes[node.parent]
        return out[::-1]

    def distance(self, ancestor_id: int, node_id: int) -> int:
        """Edge count from ``node_id`` up to ``ancestor_id``."""
        d = 0
        node = self.nodes[node_id]
        while node.id != ancestor_id:
            if node.parent is None:
                raise ValueError(f"{ancestor_id} is not an ancestor of {node_id}")
            node = self.nodes[node.parent]
            d += 1
        return d

    def transcript(self, node_id: int, start: int = 0) -> str:
        """ReAct text of the path below ``start`` down to ``node_id``."""
        path = self.path(node_id)
        return "".join(n.render() for n in path if n.depth > self.nodes[start].depth)

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def check(self) -> None:
        """Assert structural invariants (parent/child consistency, sibling distinctness)."""
        for node in self.nodes:
            if node.parent is not None:
                assert node.id in self.nodes[node.parent].children
                assert node.depth == self.nodes[node.parent].depth + 1
            keys = [self.nodes[c].key() for c in node.children]
            keys = [k for k in keys if k is not None]
            assert len(keys) == len(set(keys)), f"duplicate children under node {node.id}"
            for c in node.children:
                assert self.nodes[c].parent == node.id


def leaf_reward(outcome: str, alpha: float) -> float:
    if outcome == NONFAILURE:
        return alpha
    if outcome == FAILURE:
        return -alpha
    raise ValueError(f"leaf outcome must be failure or nonfailure, got {outcome!r}")


def backpropagate(tree: PlannerTree, leaf_id: int, config: RewardConfig, iteration: int = 0) -> None:
    """Assign the leaf reward and add its decayed share to every ancestor.

    The leaf gets ``+alpha`` (non-failure) or ``-alpha`` (failure); an ancestor
    at ``d`` edges from the leaf receives ``leaf_reward * exp(beta * (1 - d))``.
    """
    leaf = tree[leaf_id]
    r_leaf = leaf_reward(leaf.outcome, config.alpha)
    leaf.reward = r_leaf
    leaf.reward_history.append((iteration, r_leaf))
    d = 0
    node = leaf
    while node.parent is not None:
        node = tree[node.parent]
        d += 1
        delta = r_leaf * math.exp(config.beta * (1 - d))
        node.reward += delta
        node.reward_history.append((iteration, delta))
