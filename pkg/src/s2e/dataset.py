"""Aligned/misaligned training corpora: generation, splitting, persistence.

An aligned sample pairs a transition with the explanation the labeler
produces for it (y = 0).  Misaligned samples reuse the transition but swap
in a wrong catalog explanation under the same action prefix (y = 1).  Each
aligned sample and its z misaligned siblings share a group id so folds never
leak a transition across the split.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional

from . import concepts, connect4, lander
from .concepts import ConceptSet, Explanation
from .core import (
    ContextInfo, DomainId, RolloutTrace, RunSeed, TraceStep, Transition, derive_stream,
)
from .errors import (
    BadZ,
    DomainMismatch,
    IoError,
    PolicyUnavailable,
    SchemaVersionMismatch,
)
from .lander import LanderAction

SCHEMA_VERSION = 1

POLICIES = ("random", "scripted-heuristic", "checkpointed-agent", "mixture")


@dataclass(frozen=True)
class Sample:
    domain: DomainId
    s_prev: Any
    action: Any
    s_curr: Any
    ctx: ContextInfo
    explanation: Explanation
    y: int
    group: int


@dataclass(frozen=True)
class Provenance:
    policy: str
    seed: int
    episodes: int


@dataclass
class Corpus:
    domain: DomainId
    samples: list[Sample]
    z: int
    provenance: Provenance

    def __len__(self) -> int:
        return len(self.samples)

    def aligned(self) -> list[Sample]:
        return [s for s in self.samples if s.y == 0]

    def misaligned(self) -> list[Sample]:
        return [s for s in self.samples if s.y == 1]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    valid: float = 0.2
    test: float = 0.2

    def __post_init__(self) -> None:
        fr = (self.train, self.valid, self.test)
        if any(f < 0.0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")


# --------------------------------------------------------------------------
# Aligned collection
# --------------------------------------------------------------------------

def _c4_episode(policy: str, seed: RunSeed, group_start: int) -> list[Sample]:
    rng = seed.generator()
    board = connect4.new_game()
    out: list[Sample] = []
    group = group_start
    while not connect4.is_terminal(board):
        player = board.player_to_move
        if policy == "random":
            col = connect4.random_move(board, rng)
        else:
            col = connect4.heuristic_move(board, rng)
        nxt = connect4.apply(board, col, player)
        ctx = ContextInfo(game_over=connect4.is_terminal(nxt), current_player=player)
        t = Transition(DomainId.CONNECT4, board, col, nxt, ctx)
        cs = concepts.label_connect4(t)
        exp = concepts.render(col, cs)
        out.append(Sample(DomainId.CONNECT4, board, col, nxt, ctx, exp, 0, group))
        group += 1
        board = nxt
    return out


def _ll_episode(policy: str, seed: RunSeed, group_start: int) -> list[Sample]:
    rng = seed.generator()
    s = lander.reset(RunSeed(int(rng.integers(0, 2**63))))
    out: list[Sample] = []
    group = group_start
    actions = list(LanderAction)
    for _ in range(lander.DEFAULT_CONFIG.max_episode_steps):
        if policy == "random":
            a = actions[int(rng.integers(0, len(actions)))]
        else:
            a = lander.scripted_move(s)
        nxt, outcome = lander.step(s, a)
        ctx = ContextInfo(game_over=outcome.terminal)
        t = Transition(DomainId.LUNAR_LANDER, s, a, nxt, ctx)
        cs = concepts.label_lander(t, outcome)
        exp = concepts.render(a, cs)
        out.append(Sample(DomainId.LUNAR_LANDER, s, a, nxt, ctx, exp, 0, group))
        group += 1
        s = nxt
        if outcome.terminal:
            break
    return out


def collect_aligned(
    domain: DomainId,
    policy: str,
    episodes: int,
    seed: RunSeed,
    move_fn: Optional[Callable[[Any], Any]] = None,
) -> list[Sample]:
    """Roll out seeded episodes and label every transition (y = 0).

    ``mixture`` alternates seeded-random and scripted-heuristic episodes so
    rare concepts (wins, blocks, landings) appear at usable rates.  The
    ``checkpointed-agent`` policy needs a ``move_fn`` taking the current
    state, typically the greedy policy of a trained agent checkpoint.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if policy == "checkpointed-agent" and move_fn is None:
        raise PolicyUnavailable("checkpointed-agent needs a move_fn from a checkpoint")
    out: list[Sample] = []
    for ep in range(episodes):
        ep_seed = derive_stream(seed, f"episode/{ep}")
        ep_policy = policy
        if policy == "mixture":
            ep_policy = "random" if ep % 2 == 0 else "scripted-heuristic"
        if ep_policy == "checkpointed-agent":
            out.extend(_agent_episode(domain, move_fn, ep_seed, len(out)))
        elif domain is DomainId.CONNECT4:
            out.extend(_c4_episode(ep_policy, ep_seed, len(out)))
        else:
            out.extend(_ll_episode(ep_policy, ep_seed, len(out)))
    return out


def _agent_episode(domain, move_fn, seed, group_start) -> list[Sample]:
    if domain is DomainId.CONNECT4:
        rng = seed.generator()
        board = connect4.new_game()
        out = []
        group = group_start
        while not connect4.is_terminal(board):
            player = board.player_to_move
            col = move_fn(board)
            nxt = connect4.apply(board, col, player)
            ctx = ContextInfo(game_over=connect4.is_terminal(nxt), current_player=player)
            t = Transition(domain, board, col, nxt, ctx)
            cs = concepts.label_connect4(t)
            out.append(Sample(domain, board, col, nxt, ctx, concepts.render(col, cs), 0, group))
            group += 1
            board = nxt
        return out
    rng = seed.generator()
    s = lander.reset(RunSeed(int(rng.integers(0, 2**63))))
    out = []
    group = group_start
    for _ in range(lander.DEFAULT_CONFIG.max_episode_steps):
        a = move_fn(s)
        nxt, outcome = lander.step(s, a)
        ctx = ContextInfo(game_over=outcome.terminal)
        t = Transition(domain, s, a, nxt, ctx)
        cs = concepts.label_lander(t, outcome)
        out.append(Sample(domain, s, a, nxt, ctx, concepts.render(a, cs), 0, group))
        group += 1
        s = nxt
        if outcome.terminal:
            break
    return out


# --------------------------------------------------------------------------
# Misalignment
# --------------------------------------------------------------------------

def perturb_misaligned(aligned: list[Sample], z: int, seed: RunSeed) -> list[Sample]:
    """Per aligned sample, z wrong-catalog explanations under the same prefix."""
    if not aligned:
        return []
    domain = aligned[0].domain
    cat = concepts.template_catalog(domain)
    n_sets = len(cat.sets)
    if not (1 <= z <= n_sets - 1):
        raise BadZ(f"z must be in [1, {n_sets - 1}], got {z}")
    rng = seed.generator()
    out: list[Sample] = []
    for sample in aligned:
        true_idx = cat.index_of(sample.explanation.concept_set)
        others = [i for i in range(n_sets) if i != true_idx]
        if z == n_sets - 1:
            chosen = others
        else:
            picks = rng.choice(len(others), size=z, replace=False)
            chosen = [others[int(i)] for i in sorted(picks)]
        prefix = sample.explanation.action_phrase
        for idx in chosen:
            cs = cat.sets[idx]
            body = cat.body(cs)
            exp = Explanation(prefix, body, f"{prefix} {body}", cs)
            out.append(replace(sample, explanation=exp, y=1))
    return out


def balance_classes(aligned: list[Sample], cap: int) -> list[Sample]:
    """Cap each concept set's aligned samples, preserving collection order.

    Naturally collected corpora are dominated by a few frequent sets, which
    starves the rare ones during training.  Capping the dominant classes keeps
    every retained sample genuine while flattening the distribution.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if any(s.y != 0 for s in aligned):
        raise ValueError("balance_classes expects aligned samples only")
    counts: dict = {}
    out: list[Sample] = []
    for s in aligned:
        key = s.explanation.concept_set
        n = counts.get(key, 0)
        if n < cap:
            counts[key] = n + 1
            out.append(s)
    return out


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------

def split(corpus: Corpus, spec: SplitSpec, seed: RunSeed) -> tuple[Corpus, Corpus, Corpus]:
    """Partition by aligned group so siblings never straddle a fold."""
    groups = sorted({s.group for s in corpus.samples})
    order = seed.generator().permutation(len(groups))
    shuffled = [groups[int(i)] for i in order]
    n = len(shuffled)
    n_train = int(round(spec.train * n))
    n_valid = int(round(spec.valid * n))
    fold_of = {}
    for g in shuffled[:n_train]:
        fold_of[g] = 0
    for g in shuffled[n_train:n_train + n_valid]:
        fold_of[g] = 1
    for g in shuffled[n_train + n_valid:]:
        fold_of[g] = 2
    buckets: tuple[list[Sample], ...] = ([], [], [])
    for s in corpus.samples:
        buckets[fold_of[s.group]].append(s)
    return tuple(
        Corpus(corpus.domain, b, corpus.z, corpus.provenance) for b in buckets
    )


# --------------------------------------------------------------------------
# Persistence (.s2e.jsonl, optionally gzipped)
# --------------------------------------------------------------------------

def _state_to_json(domain: DomainId, state: Any) -> Any:
    return state.to_json()

def _state_from_json(domain: DomainId, obj: Any) -> Any:
    if domain is DomainId.CONNECT4:
        return connect4.Connect4Board.from_json(obj)
    return lander.LanderState.from_json(obj)


def _action_to_json(domain: DomainId, action: Any) -> Any:
    if domain is DomainId.CONNECT4:
        return int(action)
    return action.name

def _action_from_json(domain: DomainId, obj: Any) -> Any:
    if domain is DomainId.CONNECT4:
        return int(obj)
    return LanderAction[obj]


def _sample_to_json(s: Sample) -> dict:
    return {
        "group": s.group,
        "y": s.y,
        "s_prev": _state_to_json(s.domain, s.s_prev),
        "action": _action_to_json(s.domain, s.action),
        "s_curr": _state_to_json(s.domain, s.s_curr),
        "ctx": {"game_over": s.ctx.game_over, "current_player": s.ctx.current_player},
        "explanation": {
            "action_phrase": s.explanation.action_phrase,
            "body": s.explanation.body,
            "concepts": list(s.explanation.concept_set.members),
        },
    }


def _sample_from_json(domain: DomainId, obj: dict) -> Sample:
    cs = ConceptSet.of(domain, obj["explanation"]["concepts"])
    prefix = obj["explanation"]["action_phrase"]
    body = obj["explanation"]["body"]
    exp = Explanation(prefix, body, f"{prefix} {body}", cs)
    return Sample(
        domain=domain,
        s_prev=_state_from_json(domain, obj["s_prev"]),
        action=_action_from_json(domain, obj["action"]),
        s_curr=_state_from_json(domain, obj["s_curr"]),
        ctx=ContextInfo(obj["ctx"]["game_over"], obj["ctx"]["current_player"]),
        explanation=exp,
        y=int(obj["y"]),
        group=int(obj["group"]),
    )


def _open(path: str, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def save(corpus: Corpus, path: str) -> None:
    header = {
        "kind": "s2e-corpus",
        "schema": SCHEMA_VERSION,
        "domain": corpus.domain.value,
        "z": corpus.z,
        "policy": corpus.provenance.policy,
        "seed": corpus.provenance.seed,
        "episodes": corpus.provenance.episodes,
        "count": len(corpus.samples),
    }
    try:
        with _open(path, "w") as f:
            f.write(json.dumps(header) + "\n")
            for s in corpus.samples:
                f.write(json.dumps(_sample_to_json(s)) + "\n")
    except OSError as e:
        raise IoError(str(e)) from e


def load(path: str, expect_domain: Optional[DomainId] = None) -> Corpus:
    try:
        with _open(path, "r") as f:
            head_line = f.readline()
            if not head_line:
                raise SchemaVersionMismatch("empty corpus file")
            try:
                header = json.loads(head_line)
            except json.JSONDecodeError as e:
                raise SchemaVersionMismatch(f"bad header: {e}") from e
            if header.get("kind") != "s2e-corpus":
                raise SchemaVersionMismatch("not a corpus file")
            if header.get("schema") != SCHEMA_VERSION:
                raise SchemaVersionMismatch(f"schema {header.get('schema')} != {SCHEMA_VERSION}")
            domain = DomainId(header["domain"])
            if expect_domain is not None and domain is not expect_domain:
                raise DomainMismatch(f"corpus is {domain.value}, expected {expect_domain.value}")
            samples = []
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    samples.append(_sample_from_json(domain, json.loads(line)))
                except (json.JSONDecodeError, KeyError) as e:
                    raise SchemaVersionMismatch(f"bad sample record: {e}") from e
    except OSError as e:
        raise IoError(str(e)) from e
    if len(samples) != header["count"]:
        raise SchemaVersionMismatch(
            f"truncated corpus: header says {header['count']}, found {len(samples)}"
        )
    return Corpus(
        domain=domain,
        samples=samples,
        z=int(header["z"]),
        provenance=Provenance(header["policy"], int(header["seed"]), int(header["episodes"])),
    )


# --------------------------------------------------------------------------
# Rollout trace persistence (JSON, one trace per file)
# --------------------------------------------------------------------------

def trace_to_json(trace: RolloutTrace) -> dict:
    steps = []
    for st in trace.steps:
        t = st.transition
        steps.append({
            "s_prev": _state_to_json(trace.domain, t.s_prev),
            "action": _action_to_json(trace.domain, t.action),
            "s_curr": _state_to_json(trace.domain, t.s_curr),
            "ctx": {"game_over": t.ctx.game_over, "current_player": t.ctx.current_player},
            "concepts": list(st.concept_set.members),
            "explanation": {
                "action_phrase": st.explanation.action_phrase,
                "body": st.explanation.body,
            },
            "base_reward": st.base_reward,
            "shaped_reward": st.shaped_reward,
        })
    return {"kind": "s2e-trace", "schema": SCHEMA_VERSION,
            "domain": trace.domain.value, "steps": steps}


def trace_from_json(obj: dict) -> RolloutTrace:
    if obj.get("kind") != "s2e-trace" or obj.get("schema") != SCHEMA_VERSION:
        raise SchemaVersionMismatch("not a schema-1 trace record")
    domain = DomainId(obj["domain"])
    trace = RolloutTrace(domain)
    for rec in obj["steps"]:
        t = Transition(
            domain,
            _state_from_json(domain, rec["s_prev"]),
            _action_from_json(domain, rec["action"]),
            _state_from_json(domain, rec["s_curr"]),
            ContextInfo(rec["ctx"]["game_over"], rec["ctx"]["current_player"]),
        )
        cs = ConceptSet.of(domain, rec["concepts"])
        phrase = rec["explanation"]["action_phrase"]
        body = rec["explanation"]["body"]
        exp = Explanation(phrase, body, f"{phrase} {body}", cs)
        trace.steps.append(
            TraceStep(t, cs, exp, float(rec["base_reward"]), float(rec["shaped_reward"]))
        )
    return trace


def save_trace(trace: RolloutTrace, path: str) -> None:
    try:
        with _open(path, "w") as f:
            json.dump(trace_to_json(trace), f)
    except OSError as e:
        raise IoError(str(e)) from e


def load_trace(path: str) -> RolloutTrace:
    try:
        with _open(path, "r") as f:
            obj = json.load(f)
    except OSError as e:
        raise IoError(str(e)) from e
    except json.JSONDecodeError as e:
        raise SchemaVersionMismatch(f"bad trace file: {e}") from e
    return trace_from_json(obj)
