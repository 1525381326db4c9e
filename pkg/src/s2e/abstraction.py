"""Deployment-time explanation abstraction.

Two reducers over rollout traces: information filtering (drop continuous
concepts whose state reading sits inside an expert-chosen dead zone) and
temporal grouping (collapse periodic (action, concept-set) runs into one
sentence).  Filtering is lander-only; Connect 4 explanations are short
enough to present as-is.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from . import concepts
from .concepts import ConceptSet
from .core import DomainId, RolloutTrace, TraceStep, Transition
from .errors import DomainMismatch, EmptyTrace, UnrenderablePattern
from .lander import LanderAction

MODES = ("raw", "inf", "teg", "inf_teg")


@dataclass(frozen=True)
class InFThresholds:
    pos_x_limit: float = 0.15
    tilt_upper: float = 0.01
    tilt_lower: float = -0.05

    def __post_init__(self) -> None:
        if self.pos_x_limit <= 0:
            raise ValueError("pos_x_limit must be positive")
        if self.tilt_lower >= self.tilt_upper:
            raise ValueError("tilt_lower must be below tilt_upper")

    def to_json(self) -> dict:
        return {
            "pos_x_limit": self.pos_x_limit,
            "tilt_upper": self.tilt_upper,
            "tilt_lower": self.tilt_lower,
        }


DEFAULT_THRESHOLDS = InFThresholds()

PatternPhase = tuple[object, ConceptSet]  # (action, concept set)


@dataclass(frozen=True)
class GroupedSegment:
    start: int
    n: int
    p: int
    pattern: tuple[PatternPhase, ...]
    text: str

    def __post_init__(self) -> None:
        if self.n < 2 or self.n < 2 * self.p:
            raise ValueError("segment must cover at least two full periods")


@dataclass(frozen=True)
class PresentationUnit:
    kind: str  # "step" | "group"
    start: int
    n: int
    text: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "start": self.start, "n": self.n, "text": self.text}


# --------------------------------------------------------------------------
# Information filtering
# --------------------------------------------------------------------------

def inf_filter(t: Transition, c: ConceptSet, th: InFThresholds = DEFAULT_THRESHOLDS) -> ConceptSet:
    """Drop POS/TILT members whose state reading sits inside the dead zone.

    VEL is always retained, so the result never goes empty; discrete members
    (legs, fuel, landing) pass through unchanged.
    """
    if t.domain is not DomainId.LUNAR_LANDER or c.domain is not DomainId.LUNAR_LANDER:
        raise DomainMismatch("information filtering applies to the lander only")
    s = t.s_curr
    members = set(c.members)
    if "POS" in members and abs(s.pos_x) <= th.pos_x_limit:
        members.discard("POS")
    if "TILT" in members and th.tilt_lower <= s.angle <= th.tilt_upper:
        members.discard("TILT")
    return ConceptSet.of(DomainId.LUNAR_LANDER, members)


def sensitivity_sweep(
    traces: Sequence[RolloutTrace],
    concept: str,
    grid: Sequence[float],
) -> list[tuple[float, float]]:
    """(threshold, filtered fraction) per grid value, over steps carrying the concept.

    Each grid value g stands for a symmetric dead zone of half-width g, open
    at its boundary: a step is counted as filtered iff its reading sits
    strictly inside the zone.  A zero-width zone therefore filters nothing,
    even for states resting exactly at the origin.
    """
    if concept not in ("POS", "TILT"):
        raise ValueError("sweep is defined for POS and TILT")
    if list(grid) != sorted(grid):
        raise ValueError("grid must be monotone non-decreasing")
    steps = [st for tr in traces for st in tr.steps if concept in st.concept_set]
    if not steps:
        raise EmptyTrace("no trace steps carry the concept")
    readings = [
        st.transition.s_curr.pos_x if concept == "POS" else st.transition.s_curr.angle
        for st in steps
    ]
    curve = []
    for g in grid:
        dropped = sum(1 for r in readings if abs(r) < g)
        curve.append((float(g), dropped / len(steps)))
    return curve


# --------------------------------------------------------------------------
# Temporal grouping
# --------------------------------------------------------------------------

def _phases(steps: Sequence[TraceStep]) -> list[PatternPhase]:
    return [(st.transition.action, st.concept_set) for st in steps]


def teg_group(
    steps: Sequence[TraceStep],
    p_max: int = 2,
    phases: Optional[Sequence[PatternPhase]] = None,
) -> tuple[list[GroupedSegment], list[int]]:
    """Greedy left-to-right periodic-run detection.

    Returns (segments, ungrouped step indices); together they partition the
    step range.  A run must repeat its (action, concept set) pattern exactly,
    with period p <= p_max, over at least two full periods.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    ph = list(phases) if phases is not None else _phases(steps)
    segments: list[GroupedSegment] = []
    ungrouped: list[int] = []
    i = 0
    while i < len(ph):
        best_len, best_p = 0, 0
        for p in range(1, p_max + 1):
            j = i + p
            while j < len(ph) and ph[j] == ph[j - p]:
                j += 1
            length = ((j - i) // p) * p  # whole periods only
            if length >= 2 * p and length > best_len:
                best_len, best_p = length, p
        if best_p:
            pattern = tuple(ph[i:i + best_p])
            text = _try_render(i, best_len, best_p, pattern)
            if text is not None:
                segments.append(GroupedSegment(i, best_len, best_p, pattern, text))
                i += best_len
                continue
        ungrouped.append(i)
        i += 1
    return segments, ungrouped


_P1_PHRASES = {
    LanderAction.FIRE_MAIN: "keep firing the main engine",
    LanderAction.FIRE_LEFT: "keep firing the left engine",
    LanderAction.FIRE_RIGHT: "keep firing the right engine",
    LanderAction.NOOP: "do nothing",
}

_CLAUSES = {
    "POS": "move the lander closer to the center",
    "VEL": "decrease lander speed",
    "TILT": "decrease tilt",
    "LLEG": "keep left leg contact",
    "RLEG": "keep right leg contact",
    "MF": "conserve main fuel",
    "SF": "conserve side fuel",
    "L": "land",
}


def _shared_clause(pattern: Iterable[PatternPhase]) -> str:
    sets = [set(cs.members) for _, cs in pattern]
    shared = set.intersection(*sets) if sets else set()
    if not shared:
        return ""
    order = concepts.CONCEPT_ORDER[DomainId.LUNAR_LANDER]
    return " and ".join(_CLAUSES[c] for c in order if c in shared)


def render_grouped(seg: GroupedSegment) -> str:
    head = f"For the next {seg.n} steps, "
    clause = _shared_clause(seg.pattern)
    if seg.p == 1:
        action = seg.pattern[0][0]
        phrase = _P1_PHRASES.get(action)
        if phrase is None:
            raise UnrenderablePattern(f"no repeated-action phrase for {action!r}")
        if action is LanderAction.NOOP:
            tail = f" because it helps {clause}" if clause else ""
        else:
            tail = f" to {clause}" if clause else ""
        return head + phrase + tail
    if seg.p == 2:
        actions = {seg.pattern[0][0], seg.pattern[1][0]}
        if actions != {LanderAction.FIRE_LEFT, LanderAction.FIRE_RIGHT}:
            raise UnrenderablePattern("period-2 phrasing exists only for left/right alternation")
        tail = f" to {clause}" if clause else ""
        return head + "alternate firing left and right engine" + tail
    raise UnrenderablePattern(f"no phrasing for period {seg.p}")


def _try_render(start: int, n: int, p: int, pattern: tuple[PatternPhase, ...]) -> Optional[str]:
    try:
        return render_grouped(GroupedSegment(start, n, p, pattern, ""))
    except UnrenderablePattern:
        return None


# --------------------------------------------------------------------------
# Combined entry point
# --------------------------------------------------------------------------

def abstract(
    trace: RolloutTrace,
    mode: str,
    th: InFThresholds = DEFAULT_THRESHOLDS,
    p_max: int = 2,
) -> list[PresentationUnit]:
    """Per-step presentation units under one abstraction mode.

    Filtering runs before grouping in combined mode, so dead-zone members do
    not break up otherwise-repeating patterns.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    use_inf = mode in ("inf", "inf_teg")
    use_teg = mode in ("teg", "inf_teg")
    if use_inf and trace.domain is not DomainId.LUNAR_LANDER:
        raise DomainMismatch("filtering modes apply to the lander only")

    sets = [st.concept_set for st in trace.steps]
    texts = [st.explanation.full_text for st in trace.steps]
    if use_inf:
        sets = [inf_filter(st.transition, cs, th) for st, cs in zip(trace.steps, sets)]
        texts = [
            _render_filtered(st.transition.action, cs)
            for st, cs in zip(trace.steps, sets)
        ]

    if not use_teg or trace.domain is DomainId.CONNECT4:
        return [PresentationUnit("step", i, 1, texts[i]) for i in range(len(texts))]

    phases = [(st.transition.action, cs) for st, cs in zip(trace.steps, sets)]
    segments, ungrouped = teg_group(trace.steps, p_max, phases=phases)
    units = [PresentationUnit("group", s.start, s.n, s.text) for s in segments]
    units += [PresentationUnit("step", i, 1, texts[i]) for i in ungrouped]
    units.sort(key=lambda u: u.start)
    return units


def _render_filtered(action, cs: ConceptSet) -> str:
    """Free-form sentence for a possibly off-catalog filtered set."""
    cat = concepts.template_catalog(DomainId.LUNAR_LANDER)
    if cs in cat:
        return concepts.render(action, cs).full_text
    phrase = concepts.action_phrase(DomainId.LUNAR_LANDER, action)
    order = concepts.CONCEPT_ORDER[DomainId.LUNAR_LANDER]
    clause = " and ".join(_CLAUSES[c] for c in order if c in cs)
    if not clause:
        return f"{phrase}."
    return f"{phrase} because it helps {clause}."
