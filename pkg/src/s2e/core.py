"""Domain-neutral types, seeding, and trace containers.

All randomness in the package flows through :class:`RunSeed` and
:func:`derive_stream`, which hash a parent seed with a textual label into a
child seed.  Generators are counter-based (Philox) so parallel episode
generation reproduces bit-exactly regardless of scheduling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np


class DomainId(Enum):
    CONNECT4 = "connect4"
    LUNAR_LANDER = "lunar_lander"


@dataclass(frozen=True)
class RunSeed:
    seed: int

    def __post_init__(self) -> None:
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed))


def derive_stream(seed: RunSeed, label: str) -> RunSeed:
    """Deterministic child seed for a named stream."""
    if not label:
        raise ValueError("label must be non-empty")
    h = hashlib.sha256(seed.seed.to_bytes(8, "little") + label.encode("utf-8"))
    return RunSeed(int.from_bytes(h.digest()[:8], "little"))


@dataclass(frozen=True)
class ContextInfo:
    game_over: bool
    current_player: Optional[int] = None  # 1 or 2; Connect 4 only (the mover)


@dataclass(frozen=True)
class Transition:
    domain: DomainId
    s_prev: Any
    action: Any
    s_curr: Any
    ctx: ContextInfo


@dataclass
class TraceStep:
    transition: Transition
    concept_set: Any  # concepts.ConceptSet
    explanation: Any  # concepts.Explanation
    base_reward: float
    shaped_reward: float


@dataclass
class RolloutTrace:
    domain: DomainId
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


def _states_equal(a: Any, b: Any) -> bool:
    eq = a == b
    if isinstance(eq, np.ndarray):
        return bool(eq.all())
    return bool(eq)


def chain_validate(trace: RolloutTrace) -> bool:
    """True iff consecutive transitions chain and all domains match."""
    if not trace.steps:
        raise ValueError("trace must be non-empty")
    for step in trace.steps:
        if step.transition.domain is not trace.domain:
            return False
    for prev, nxt in zip(trace.steps, trace.steps[1:]):
        if not _states_equal(prev.transition.s_curr, nxt.transition.s_prev):
            return False
    return True
