"""Ground-truth concept labeling and templated explanation rendering.

Connect 4 concepts: W, BW, 3IR, 3IR_BL, CD, NULL.
Lunar lander concepts: POS, VEL, TILT, LLEG, RLEG, MF, SF, L.

Each domain has a closed catalog of concept sets (9 and 13 respectively),
each mapping to one fixed explanation template.  Labelers are pure functions
of the transition, never of value estimates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources as importlib_resources
from typing import Iterable, Union

from . import connect4, lander
from .core import DomainId, Transition
from .errors import DomainMismatch, NotInCatalog, UnknownSet
from .lander import LanderAction, LanderOutcome

Concept = str
ActionId = Union[int, LanderAction]

CONCEPT_ORDER = {
    DomainId.CONNECT4: ("W", "BW", "3IR", "3IR_BL", "CD", "NULL"),
    DomainId.LUNAR_LANDER: ("POS", "VEL", "TILT", "LLEG", "RLEG", "MF", "SF", "L"),
}

# priority used to resolve rule combinations that fall outside the catalog
_C4_DROP_ORDER = ("3IR_BL", "CD", "3IR", "BW")

# checksum of the canonical template serialization; guards bit-stable text
TEMPLATES_SHA256 = None  # filled at import after first load


@dataclass(frozen=True)
class ConceptSet:
    domain: DomainId
    members: tuple[Concept, ...]

    def __post_init__(self) -> None:
        order = CONCEPT_ORDER[self.domain]
        canon = tuple(c for c in order if c in self.members)
        if canon != self.members or len(set(self.members)) != len(self.members):
            object.__setattr__(self, "members", canon)

    @classmethod
    def of(cls, domain: DomainId, members: Iterable[Concept]) -> "ConceptSet":
        order = CONCEPT_ORDER[domain]
        mem = set(members)
        unknown = mem - set(order)
        if unknown:
            raise NotInCatalog(f"unknown concepts {sorted(unknown)} for {domain}")
        return cls(domain, tuple(c for c in order if c in mem))

    def __contains__(self, concept: Concept) -> bool:
        return concept in self.members

    def label(self) -> str:
        return "{" + ",".join(self.members) + "}"


@dataclass(frozen=True)
class Explanation:
    action_phrase: str
    body: str
    full_text: str
    concept_set: ConceptSet


class TemplateCatalog:
    """Fixed concept-set -> template body mapping for one domain."""

    def __init__(self, domain: DomainId, entries: list[dict]):
        self.domain = domain
        self.sets: list[ConceptSet] = []
        self._bodies: dict[tuple[Concept, ...], str] = {}
        self._bound_actions: dict[tuple[Concept, ...], str] = {}
        for entry in entries:
            cs = ConceptSet.of(domain, entry["concepts"])
            self.sets.append(cs)
            self._bodies[cs.members] = entry["body"]
            if "action_phrase" in entry:
                self._bound_actions[cs.members] = entry["action_phrase"]

    def __contains__(self, cs: ConceptSet) -> bool:
        return cs.members in self._bodies

    def body(self, cs: ConceptSet) -> str:
        try:
            return self._bodies[cs.members]
        except KeyError:
            raise UnknownSet(f"{cs.label()} not in {self.domain.value} catalog")

    def bound_action_phrase(self, cs: ConceptSet) -> str:
        """The action phrase the template is bound to (lander only)."""
        return self._bound_actions[cs.members]

    def index_of(self, cs: ConceptSet) -> int:
        try:
            return self.sets.index(cs)
        except ValueError:
            raise UnknownSet(f"{cs.label()} not in {self.domain.value} catalog")


def _load_catalogs() -> dict[DomainId, TemplateCatalog]:
    global TEMPLATES_SHA256
    raw = importlib_resources.files("s2e.resources").joinpath("templates.json").read_text()
    TEMPLATES_SHA256 = hashlib.sha256(raw.encode("utf-8")).hexdigest()
    data = json.loads(raw)
    return {
        DomainId.CONNECT4: TemplateCatalog(DomainId.CONNECT4, data["connect4"]),
        DomainId.LUNAR_LANDER: TemplateCatalog(DomainId.LUNAR_LANDER, data["lunar_lander"]),
    }


_CATALOGS = _load_catalogs()


def template_catalog(domain: DomainId) -> TemplateCatalog:
    return _CATALOGS[domain]


def catalog(domain: DomainId) -> list[ConceptSet]:
    """The domain's concept sets in fixed canonical (retrieval-class) order."""
    return list(_CATALOGS[domain].sets)


# --------------------------------------------------------------------------
# Labelers
# --------------------------------------------------------------------------

def label_connect4(t: Transition) -> ConceptSet:
    if t.domain is not DomainId.CONNECT4:
        raise DomainMismatch("expected a Connect 4 transition")
    r, c, player = connect4.played_cell(t.s_prev, t.s_curr)
    if t.ctx.current_player is not None and t.ctx.current_player != player:
        raise NotInCatalog("ctx.current_player does not match the mover")
    win, block, open3, blocked3 = connect4.label_flags(t.s_curr.grid, r, c, player)
    if win:
        return ConceptSet.of(DomainId.CONNECT4, ["W"])
    members = set()
    if block:
        members.add("BW")
    if open3:
        members.add("3IR")
    elif blocked3:
        members.add("3IR_BL")
    if c == connect4.CENTER_COLUMN - 1:
        members.add("CD")
    if not members:
        return ConceptSet.of(DomainId.CONNECT4, ["NULL"])
    cs = ConceptSet.of(DomainId.CONNECT4, members)
    cat = _CATALOGS[DomainId.CONNECT4]
    for concept in _C4_DROP_ORDER:
        if cs in cat:
            return cs
        if concept in cs:
            members.discard(concept)
            cs = ConceptSet.of(DomainId.CONNECT4, members) if members else ConceptSet.of(DomainId.CONNECT4, ["NULL"])
    if cs not in cat:
        raise NotInCatalog(f"unresolvable combination {cs.label()}")
    return cs


def label_lander(t: Transition, outcome: LanderOutcome) -> ConceptSet:
    if t.domain is not DomainId.LUNAR_LANDER:
        raise DomainMismatch("expected a lander transition")
    if outcome is LanderOutcome.LANDED:
        return ConceptSet.of(DomainId.LUNAR_LANDER, ["L"])
    members = {"POS", "VEL", "TILT"}
    s = t.s_curr
    if s.left_contact:
        members.add("LLEG")
    if s.right_contact:
        members.add("RLEG")
    if t.action is LanderAction.FIRE_MAIN:
        members.add("SF")
    elif t.action in (LanderAction.FIRE_LEFT, LanderAction.FIRE_RIGHT):
        members.add("MF")
    cs = ConceptSet.of(DomainId.LUNAR_LANDER, members)
    assert cs in _CATALOGS[DomainId.LUNAR_LANDER], cs.label()
    return cs


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

def action_phrase(domain: DomainId, action: ActionId) -> str:
    if domain is DomainId.CONNECT4:
        return f"Play column {int(action)}"
    if action is LanderAction.FIRE_MAIN:
        return "Fire main engine"
    if action in (LanderAction.FIRE_LEFT, LanderAction.FIRE_RIGHT):
        return "Fire side engine"
    return "Do nothing"


def render(action: ActionId, cs: ConceptSet, cat: TemplateCatalog | None = None) -> Explanation:
    cat = cat or _CATALOGS[cs.domain]
    body = cat.body(cs)
    prefix = action_phrase(cs.domain, action)
    return Explanation(
        action_phrase=prefix,
        body=body,
        full_text=f"{prefix} {body}",
        concept_set=cs,
    )
