"""Synthetic multiple-choice tasks for comparing node-selection policies offline.

A task is a tree of tool choices. The scripted "model" ranks the tools at
every context and, at temperature 0, always takes its top-ranked untried tool;
whether a complete tool sequence ends in the correct label, a wrong label or
an execution error is fixed by the seeded task. Mistakes are made locally:
every (context, tool) edge is bad with a fixed probability, so a single
greedy chain fails about ``failure_ratio`` of the time.
"""

from __future__ import annotations

import json
import random
import re
import time
from dataclasses import dataclass, field
from typing import Sequence

from .aggregator import vote
from .backend import ChatRequest, FunctionBackend
from .errors import NoVotes, ToolExecutionError
from .planner.prompt import EXPANSION_HEADER
from .planner.search import run
from .planner.selection import POLICIES
from .planner.tree import Limits, RewardConfig
from .toolkit.grammar import ToolInvocation
from .toolkit.registry import ToolContext, ToolRegistry, ToolSpec

LABELS = ("A", "B", "C", "D", "E")
VIDEO = "synthetic.mp4"
# share of bad edges that surface as an execution error rather than a wrong answer
ERROR_SHARE = 0.7

_STEP = re.compile(r"^Action: (\S+)\nAction Input: (.*)$", re.MULTILINE)
_TRIED = re.compile(r"\| Action: (.+?) \| Action Input: (.*)$", re.MULTILINE)


@dataclass
class SyntheticTask:
    seed: int
    width: int
    depth: int
    failure_ratio: float
    correct_label: str
    tool_graph: dict[tuple[int, ...], tuple[int, ...]]  # context -> tool ranking
    success_paths: frozenset[tuple[int, ...]]
    distractor_paths: frozenset[tuple[int, ...]]  # end in an execution error
    wrong_answers: dict[tuple[int, ...], str] = field(default_factory=dict)  # path -> wrong label

    @property
    def tools(self) -> list[str]:
        return [f"Probe{i}" for i in range(self.width)]

    @property
    def question(self) -> str:
        return f"Synthetic task {self.seed}: which option ({', '.join(LABELS)}) is correct?"

    def outcome(self, path: tuple[int, ...]) -> str:
        if path in self.success_paths:
            return "correct"
        if path in self.distractor_paths:
            return "error"
        return "wrong"


def generate_task(seed: int, width: int = 3, depth: int = 2, failure_ratio: float = 0.67) -> SyntheticTask:
    """Deterministic task; the greedy first chain fails with probability about ``failure_ratio``."""
    if width < 2 or depth < 1:
        raise ValueError("width must be >= 2 and depth >= 1")
    if not 0.0 <= failure_ratio < 1.0:
        raise ValueError("failure_ratio must lie in [0, 1)")
    rng = random.Random(f"task:{seed}:{width}:{depth}:{failure_ratio}")
    correct = rng.choice(LABELS)
    # per-edge mistake rate such that a depth-long chain is clean with prob 1 - ratio
    edge_bad = 1.0 - (1.0 - failure_ratio) ** (1.0 / depth)

    graph: dict[tuple[int, ...], tuple[int, ...]] = {}
    bad_edges: set[tuple[int, ...]] = set()
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(depth):
        nxt = []
        for ctx in frontier:
            ranking = list(range(width))
            rng.shuffle(ranking)
            graph[ctx] = tuple(ranking)
            for tool in range(width):
                edge = ctx + (tool,)
                if rng.random() < edge_bad:
                    bad_edges.add(edge)
                nxt.append(edge)
        frontier = nxt

    success, errors, wrong = set(), set(), {}
    for path in frontier:
        if not any(path[:k] in bad_edges for k in range(1, depth + 1)):
            success.add(path)
        elif rng.random() < ERROR_SHARE:
            errors.add(path)
        else:
            wrong[path] = rng.choice([lb for lb in LABELS if lb != correct])
    if not success:
        # keep the task solvable: repair one uniformly chosen full path
        path = rng.choice(sorted(frontier))
        success.add(path)
        errors.discard(path)
        wrong.pop(path, None)
    return SyntheticTask(seed, width, depth, failure_ratio, correct, graph,
                         frozenset(success), frozenset(errors), wrong)


# --------------------------------------------------------------------------
# scripted model and tools

def _tool_index(name: str) -> int:
    return int(name[len("Probe"):])


def _input_for(path: tuple[int, ...]) -> str:
    return f"{VIDEO}#step {len(path)} via {'-'.join(map(str, path))}"


def _context(request: ChatRequest) -> tuple[tuple[int, ...], set[tuple[str, str]]]:
    prompt = request.turns[0][1]
    body = prompt[prompt.rindex("\nQuestion: ") + 1:]
    head, _, rest = body.partition(EXPANSION_HEADER)
    tried = set(_TRIED.findall(rest)) if rest else set()
    steps = _STEP.findall(head) + (_STEP.findall(rest) if rest else [])
    return tuple(_tool_index(a) for a, _ in steps), tried


def scripted_model(task: SyntheticTask):
    """Temperature-0 stand-in for the planner LLM.

    It takes its top-ranked untried tool at every context. Once the chain is
    complete it answers; if that answer was already explored from this point,
    it double-checks with another tool first. The extra evidence agrees with
    the chain it extends, so the repeated answer is the same label.
    """

    def respond(request: ChatRequest) -> str:
        path, tried = _context(request)
        if len(path) >= task.depth:
            base = path[:task.depth]
            label = task.correct_label if task.outcome(base) == "correct" else task.wrong_answers[base]
            if ("Final Answer", label) not in tried:
                return f"Thought: The evidence points to option {label}.\nFinal Answer: {label}"
            ranking = task.tool_graph[base[:-1]]
        else:
            ranking = task.tool_graph[path]
        for tool in ranking:
            name = f"Probe{tool}"
            inp = _input_for(path + (tool,))
            if (name, inp) not in tried:
                return f"Thought: I should check with {name}.\nAction: {name}\nAction Input: {inp}"
        # nothing untried left: repeat the favourite (rejected as a duplicate)
        tool = ranking[0]
        return f"Thought: I should check with Probe{tool}.\nAction: Probe{tool}\nAction Input: {_input_for(path + (tool,))}"

    return respond


def task_registry(task: SyntheticTask) -> ToolRegistry:
    registry = ToolRegistry()

    def handler(inv: ToolInvocation, ctx: ToolContext) -> str:
        m = re.search(r"via ([\d-]+)$", inv.sub_question)
        path = tuple(int(x) for x in m.group(1).split("-"))
        if len(path) == task.depth and path in task.distractor_paths:
            raise ToolExecutionError(f"{inv.tool_name} crashed on this input")
        return f"{inv.tool_name} returned evidence #{sum(path) + 7 * len(path)}"

    for name in task.tools:
        registry.register(ToolSpec(name, f"Synthetic probe {name}. Input: <video>#<question>", "subtask"), handler)
    return registry


# --------------------------------------------------------------------------
# evaluation

@dataclass
class TaskRun:
    policy: str
    seed: int
    success: bool
    label: str | None
    answers: int
    api_calls: int
    first_success: int | None
    transcripts: list[str]


def run_task(task: SyntheticTask, policy: str, config: RewardConfig, seed: int | None = None,
             limits: Limits | None = None):
    backend = FunctionBackend(scripted_model(task))
    result = run(task.question, VIDEO, None, task_registry(task), backend, config, policy,
                 task.seed if seed is None else seed, limits or Limits())
    try:
        label = vote(result.answers, LABELS)
    except NoVotes:
        label = None
    first = next((a.iteration for a in result.answers if a.text.strip() == task.correct_label), None)
    return TaskRun(policy, task.seed, label == task.correct_label, label, len(result.answers),
                   result.api_calls, first, [a.transcript for a in result.answers]), result


def evaluate(policies: Sequence[str], tasks: Sequence[SyntheticTask], config: RewardConfig,
             limits: Limits | None = None) -> dict:
    """Per-policy success rate, mean iterations to first correct answer, mean API calls."""
    if not tasks:
        raise ValueError("need at least one task")
    rows = {}
    runs: dict[str, list[TaskRun]] = {}
    for policy in policies:
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        task_runs = [run_task(t, policy, config, limits=limits)[0] for t in tasks]
        runs[policy] = task_runs
        firsts = [r.first_success for r in task_runs if r.first_success is not None]
        rows[policy] = {
            "success_rate": sum(r.success for r in task_runs) / len(task_runs),
            "mean_iterations_to_first_success": (sum(firsts) / len(firsts)) if firsts else None,
            "mean_api_calls": sum(r.api_calls for r in task_runs) / len(task_runs),
            "mean_answers": sum(r.answers for r in task_runs) / len(task_runs),
        }
    return {
        "config": {"alpha": config.alpha, "beta": config.beta, "n": config.n_iterations},
        "tasks": {
            "count": len(tasks),
            "seeds": [t.seed for t in tasks],
            "width": tasks[0].width,
            "depth": tasks[0].depth,
            "failure_ratio": tasks[0].failure_ratio,
        },
        "policies": rows,
        "_runs": runs,
    }


def report_json(report: dict) -> str:
    public = {k: v for k, v in report.items() if not k.startswith("_")}
    return json.dumps(public, indent=2, sort_keys=True) + "\n"


def report_table(report: dict) -> str:
    lines = [f"{'policy':<8} {'success':>8} {'iters->1st':>11} {'api calls':>10} {'answers':>8}"]
    for policy, row in report["policies"].items():
        it = row["mean_iterations_to_first_success"]
        lines.append(
            f"{policy:<8} {row['success_rate']:>8.3f} {('-' if it is None else f'{it:.2f}'):>11} "
            f"{row['mean_api_calls']:>10.2f} {row['mean_answers']:>8.2f}"
        )
    return "\n".join(lines) + "\n"


def ablate(seeds: Sequence[int], width: int = 3, depth: int = 2, n: int = 4,
           policies: Sequence[str] = POLICIES, failure_ratio: float = 0.67,
           alpha: float = 1.0, beta: float = 0.5) -> dict:
    tasks = [generate_task(s, width, depth, failure_ratio) for s in seeds]
    start = time.perf_counter()
    report = evaluate(policies, tasks, RewardConfig(alpha, beta, n))
    report["_elapsed"] = time.perf_counter() - start
    return report
