"""Node-selection policies: reward softmax (mcts) and the dfs/root/uniform baselines."""

from __future__ import annotations

import numpy as np

from ..errors import SearchExhausted
from .tree import OPEN, PlannerTree, TreeNode

POLICIES = ("mcts", "dfs", "root", "uniform")


def is_expandable(node: TreeNode, max_children: int, max_depth: int) -> bool:
    # leaves (finished chains) never get children; depth cap keeps chains bounded
    return node.outcome == OPEN and len(node.children) < max_children and node.depth < max_depth


def expandable_nodes(tree: PlannerTree, max_children: int, max_depth: int) -> list[TreeNode]:
    return [n for n in tree if is_expandable(n, max_children, max_depth)]


def softmax(values) -> np.ndarray:
    r = np.asarray(values, dtype=float)
    z = np.exp(r - r.max())
    return z / z.sum()


def selection_probabilities(nodes: list[TreeNode]) -> np.ndarray:
    return softmax([n.reward for n in nodes])


def select_node(tree: PlannerTree, policy: str, rng: np.random.Generator,
                max_children: int, max_depth: int) -> int:
    """Pick the node to expand next.

    Only the root exists before the first expansion, so every policy returns it
    on the first iteration.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    candidates = expandable_nodes(tree, max_children, max_depth)
    if not candidates:
        raise SearchExhausted("no expandable node left")
    if policy == "root":
        if candidates[0].id != 0:
            raise SearchExhausted("root has no room for another child")
        return 0
    if policy == "dfs":
        return max(candidates, key=lambda n: (n.depth, n.id)).id
    if policy == "uniform":
        return candidates[int(rng.integers(len(candidates)))].id
    p = selection_probabilities(candidates)
    return candidates[int(rng.choice(len(candidates), p=p))].id
