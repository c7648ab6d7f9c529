"""Turning several candidate answers into one: voting or LLM summarization."""

from __future__ import annotations

import math
import re
from collections import defaultdict
from typing import Mapping, Optional, Sequence

from .backend import ChatBackend, ChatRequest
from .errors import NoAnswers, NoVotes
from .planner.search import Answer

SUMMARY_SYSTEM = (
    "Several independent reasoning paths answered the same question about a video. "
    "Combine them into one informative final answer. Prefer points that several paths agree on."
)


def map_choice(text: str, choices: Sequence[str], choice_texts: Optional[Mapping[str, str]] = None) -> Optional[str]:
    """Map a free-text answer to a choice label, or None to abstain.

    Order of checks: the whole answer is a label (``"b"``, ``"(B)"``, ``"B."``);
    the first standalone label in the text (single-letter labels must be
    uppercase there, so the article "a" never votes); the first choice whose
    text occurs in the answer.
    """
    labels = list(choices)
    bare = text.strip().strip("().:;,!?'\" ").lower()
    for label in labels:
        if bare == label.lower():
            return label
    best: tuple[int, str] | None = None
    for label in labels:
        flags = 0 if len(label) == 1 else re.IGNORECASE
        m = re.search(rf"(?<![\w]){re.escape(label)}(?![\w])", text, flags)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), label)
    if best is not None:
        return best[1]
    if choice_texts:
        lowered = text.lower()
        for label in labels:
            body = choice_texts.get(label)
            if body and body.lower() in lowered:
                return label
    return None


def vote(answers: Sequence[Answer], choices: Sequence[str],
         choice_texts: Optional[Mapping[str, str]] = None) -> str:
    """Majority label; ties go to the larger summed path reward, then the earliest
    iteration, then the label listed first in ``choices``."""
    if not choices:
        raise ValueError("choices must be non-empty")
    count: dict[str, int] = defaultdict(int)
    rewards: dict[str, list[float]] = defaultdict(list)
    first: dict[str, int] = {}
    for a in answers:
        label = map_choice(a.text, choices, choice_texts)
        if label is None:
            continue
        count[label] += 1
        rewards[label].append(a.path_reward)
        first[label] = min(first.get(label, a.iteration), a.iteration)
    if not count:
        raise NoVotes("no answer could be mapped to a choice")
    # fsum keeps the reward total independent of answer order
    reward = {lb: math.fsum(r) for lb, r in rewards.items()}
    position = {lb: i for i, lb in enumerate(choices)}
    return max(count, key=lambda lb: (count[lb], reward[lb], -first[lb], -position[lb]))


def summarize(answers: Sequence[Answer], question: str, backend: ChatBackend) -> str:
    if not answers:
        raise NoAnswers("nothing to summarize")
    if len(answers) == 1:
        return answers[0].text
    listing = "\n".join(
        f"Answer {i} (path length {len(a.path)}): {a.text}" for i, a in enumerate(answers, 1)
    )
    request = ChatRequest.single(SUMMARY_SYSTEM, f"Question: {question}\n\n{listing}\n\nFinal answer:")
    return backend.complete(request).text


def aggregate(answers: Sequence[Answer], question: str, backend: Optional[ChatBackend] = None,
              mode: str = "summarize", choices: Optional[Sequence[str]] = None,
              choice_texts: Optional[Mapping[str, str]] = None) -> str:
    """``vote`` when choices are given (falling back to summarize on NoVotes), else summarize."""
    if mode == "vote":
        if not choices:
            raise ValueError("vote needs choices")
        try:
            return vote(answers, choices, choice_texts)
        except NoVotes:
            if backend is None:
                raise
    return summarize(answers, question, backend)
