"""Tree-search planner over ReAct tool-calling steps."""

from .prompt import PLACEHOLDERS, PLANNER_TEMPLATE, expansion_prompt, render_planner_prompt
from .react import Step, parse_completion, validate_transcript
from .search import Answer, RunResult, Session, execute_chain, expand_branch, run
from .selection import POLICIES, expandable_nodes, select_node, selection_probabilities, softmax
from .tree import (
    FAILURE,
    NONFAILURE,
    OPEN,
    Limits,
    PlannerTree,
    RewardConfig,
    TreeNode,
    backpropagate,
)

__all__ = [
    "Answer",
    "FAILURE",
    "Limits",
    "NONFAILURE",
    "OPEN",
    "PLACEHOLDERS",
    "PLANNER_TEMPLATE",
    "POLICIES",
    "PlannerTree",
    "RewardConfig",
    "RunResult",
    "Session",
    "Step",
    "TreeNode",
    "backpropagate",
    "execute_chain",
    "expand_branch",
    "expandable_nodes",
    "expansion_prompt",
    "parse_completion",
    "render_planner_prompt",
    "run",
    "select_node",
    "selection_probabilities",
    "softmax",
    "validate_transcript",
]
