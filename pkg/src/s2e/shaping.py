"""Concept-conditioned reward shaping and the per-step reward score.

Connect 4 concepts carry constants summed over the set.  Lander continuous
concepts (POS, VEL, TILT) shape through potential differences so their
episode sum telescopes to the endpoint potentials; legs pay out once on
first contact, fuel charges the engine actually fired, and L pays out at
termination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from . import concepts
from .concepts import ConceptSet
from .core import DomainId, RolloutTrace, Transition
from .errors import EmptyTrace, RetrievalUnavailable, UnknownSet

C4_VALUES = {"3IR": 1.0, "3IR_BL": 0.0, "CD": 1.0, "BW": 5.0, "W": 10.0, "NULL": 0.0}
LL_LEG_VALUE = 10.0
LL_MAIN_FUEL_COST = -0.3
LL_SIDE_FUEL_COST = -0.03
LL_LAND_VALUE = 100.0
LL_POTENTIAL_SCALE = -100.0


@dataclass(frozen=True)
class ShapingTable:
    domain: DomainId
    c4_values: dict = field(default_factory=lambda: dict(C4_VALUES))
    leg_value: float = LL_LEG_VALUE
    main_fuel_cost: float = LL_MAIN_FUEL_COST
    side_fuel_cost: float = LL_SIDE_FUEL_COST
    land_value: float = LL_LAND_VALUE
    potential_scale: float = LL_POTENTIAL_SCALE

    def to_json(self) -> dict:
        return {
            "domain": self.domain.value,
            "c4_values": dict(self.c4_values),
            "leg_value": self.leg_value,
            "main_fuel_cost": self.main_fuel_cost,
            "side_fuel_cost": self.side_fuel_cost,
            "land_value": self.land_value,
            "potential_scale": self.potential_scale,
        }


def default_table(domain: DomainId) -> ShapingTable:
    return ShapingTable(domain)


def pos_potential(s, table: ShapingTable) -> float:
    return table.potential_scale * math.hypot(s.pos_x, s.pos_y)


def vel_potential(s, table: ShapingTable) -> float:
    return table.potential_scale * math.hypot(s.vel_x, s.vel_y)


def tilt_potential(s, table: ShapingTable) -> float:
    return table.potential_scale * abs(s.angle)


def shape_c4(c: ConceptSet, table: ShapingTable) -> float:
    """Sum of the member constants."""
    cat = concepts.template_catalog(DomainId.CONNECT4)
    if c not in cat:
        raise UnknownSet(f"{c.label()} not in the Connect 4 catalog")
    return sum(table.c4_values[m] for m in c.members)


def shape_lander(t: Transition, c: ConceptSet, table: ShapingTable) -> float:
    cat = concepts.template_catalog(DomainId.LUNAR_LANDER)
    if c not in cat:
        raise UnknownSet(f"{c.label()} not in the lander catalog")
    prev, curr = t.s_prev, t.s_curr
    total = 0.0
    if "POS" in c:
        total += pos_potential(curr, table) - pos_potential(prev, table)
    if "VEL" in c:
        total += vel_potential(curr, table) - vel_potential(prev, table)
    if "TILT" in c:
        total += tilt_potential(curr, table) - tilt_potential(prev, table)
    if "LLEG" in c and curr.left_contact and not prev.left_contact:
        total += table.leg_value
    if "RLEG" in c and curr.right_contact and not prev.right_contact:
        total += table.leg_value
    if "MF" in c or "SF" in c:
        # the penalty follows the engine actually fired this step, not the
        # fuel the template says the move conserves
        if curr.main_fired:
            total += table.main_fuel_cost
        elif curr.side_fired:
            total += table.side_fuel_cost
    if "L" in c:
        total += table.land_value
    return total


def shape(t: Transition, c: ConceptSet, table: ShapingTable) -> float:
    if t.domain is DomainId.CONNECT4:
        return shape_c4(c, table)
    return shape_lander(t, c, table)


@dataclass(frozen=True)
class ShapingSource:
    """Where the concept set for a transition comes from.

    ``none`` leaves the base reward untouched.  ``expert`` asks the labeler.
    ``s2e`` takes the rank-1 retrieval against a catalog index.
    """

    tag: str  # "none" | "expert" | "s2e"
    model: Optional[object] = None
    index: Optional[object] = None

    def __post_init__(self) -> None:
        if self.tag not in ("none", "expert", "s2e"):
            raise ValueError(f"unknown shaping source {self.tag!r}")
        if self.tag == "s2e" and (self.model is None or self.index is None):
            raise RetrievalUnavailable("s2e source needs a model and an index")


def _expert_set(t: Transition) -> ConceptSet:
    if t.domain is DomainId.CONNECT4:
        return concepts.label_connect4(t)
    from . import lander

    outcome = lander._outcome(t.s_curr, lander.DEFAULT_CONFIG)
    return concepts.label_lander(t, outcome)


def shaped_reward(
    t: Transition,
    base: float,
    source: ShapingSource,
    table: Optional[ShapingTable] = None,
) -> tuple[float, Optional[ConceptSet]]:
    """Base reward plus the source's concept payout, and the set used."""
    if source.tag == "none":
        return base, None
    table = table or default_table(t.domain)
    if source.tag == "expert":
        cs = _expert_set(t)
    else:
        from . import retrieval

        result = retrieval.retrieve(source.index, source.model, t, 1)
        cs = result.ranked[0][0]
    if cs.members == ("NULL",):
        return base, cs
    return base + shape(t, cs, table), cs


def ats(trace: RolloutTrace, table: Optional[ShapingTable] = None) -> float:
    """Mean expert-shaped concept reward per step of the trace."""
    if not trace.steps:
        raise EmptyTrace("trace must be non-empty")
    table = table or default_table(trace.domain)
    total = 0.0
    for step in trace.steps:
        cs = step.concept_set or _expert_set(step.transition)
        total += shape(step.transition, cs, table)
    return total / len(trace.steps)
