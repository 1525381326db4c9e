"""HTTP/JSON session service: live play, expert-rollout stepping, explanations.

Each session runs one study condition from creation to completion.  In study
mode the stage machine is practice -> pretest -> explanation -> posttest,
with fixed game quotas per stage; outside study mode the session stays in a
free stage where both play and expert stepping are allowed.

Sessions are snapshotted to disk on every mutation, so a restarted server
resumes mid-study.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional

from . import abstraction, agent, concepts, connect4, dataset, lander, retrieval, shaping
from .core import ContextInfo, DomainId, RolloutTrace, RunSeed, TraceStep, Transition, derive_stream
from .errors import IllegalColumn, S2EError
from .lander import LanderAction

CONDITIONS = (
    "none", "action", "value",
    "concept_raw", "concept_inf", "concept_teg", "concept_inf_teg",
)
_LL_ONLY_CONDITIONS = ("concept_inf", "concept_inf_teg")
_CONDITION_MODES = {
    "concept_raw": "raw",
    "concept_inf": "inf",
    "concept_teg": "teg",
    "concept_inf_teg": "inf_teg",
}

STAGES = ("practice", "pretest", "explanation", "posttest")
STAGE_QUOTAS = {
    DomainId.CONNECT4: {"practice": 2, "pretest": 3, "explanation": 3, "posttest": 3},
    DomainId.LUNAR_LANDER: {"practice": 2, "pretest": 3, "explanation": 1, "posttest": 3},
}
_PLAY_STAGES = ("practice", "pretest", "posttest", "free")


@dataclass
class ServiceConfig:
    data_dir: str = "."
    seed: int = 0
    c4_policy_path: Optional[str] = None
    ll_policy_path: Optional[str] = None
    c4_checkpoint_path: Optional[str] = None
    ll_checkpoint_path: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "data_dir": self.data_dir,
            "seed": self.seed,
            "c4_policy_path": self.c4_policy_path,
            "ll_policy_path": self.ll_policy_path,
            "c4_checkpoint_path": self.c4_checkpoint_path,
            "ll_checkpoint_path": self.ll_checkpoint_path,
        }


def _ll_outcome(s: lander.LanderState) -> lander.LanderOutcome:
    return lander._outcome(s, lander.DEFAULT_CONFIG)


@dataclass
class Session:
    id: str
    domain: DomainId
    condition: str
    study_mode: bool
    seed: int
    stage: str = "practice"
    games_done: int = 0
    scores: dict[str, list[float]] = field(default_factory=dict)
    # live human game
    board: Optional[connect4.Connect4Board] = None
    ll_state: Optional[lander.LanderState] = None
    ll_steps: int = 0
    trace: Optional[RolloutTrace] = None
    # precomputed expert rollout for the explanation/free stepping flow
    expert_trace: Optional[RolloutTrace] = None
    expert_units: Optional[list[dict]] = None
    expert_cursor: int = 0
    game_index: int = 0

    def game_seed(self) -> RunSeed:
        return derive_stream(RunSeed(self.seed), f"{self.stage}/game/{self.game_index}")


class SessionStore:
    """In-memory session map with per-session write locks and JSON snapshots."""

    def __init__(self, data_dir: str):
        self.dir = os.path.join(data_dir, "sessions")
        os.makedirs(self.dir, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self.locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        for name in sorted(os.listdir(self.dir)):
            if name.endswith(".json"):
                with open(os.path.join(self.dir, name)) as f:
                    sess = _session_from_json(json.load(f))
                self.sessions[sess.id] = sess
                self.locks[sess.id] = threading.Lock()

    def add(self, sess: Session) -> None:
        with self._global:
            self.sessions[sess.id] = sess
            self.locks[sess.id] = threading.Lock()
        self.persist(sess)

    def get(self, sid: str) -> Session:
        try:
            return self.sessions[sid]
        except KeyError:
            from fastapi import HTTPException
            raise HTTPException(404, f"no session {sid}")

    def lock(self, sid: str) -> threading.Lock:
        return self.locks[sid]

    def persist(self, sess: Session) -> None:
        path = os.path.join(self.dir, f"{sess.id}.json")
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(_session_to_json(sess), f)
        os.replace(tmp, path)


def _session_to_json(s: Session) -> dict:
    return {
        "id": s.id,
        "domain": s.domain.value,
        "condition": s.condition,
        "study_mode": s.study_mode,
        "seed": s.seed,
        "stage": s.stage,
        "games_done": s.games_done,
        "scores": s.scores,
        "board": s.board.to_json() if s.board is not None else None,
        "ll_state": s.ll_state.to_json() if s.ll_state is not None else None,
        "ll_steps": s.ll_steps,
        "trace": dataset.trace_to_json(s.trace) if s.trace is not None else None,
        "expert_trace": dataset.trace_to_json(s.expert_trace) if s.expert_trace else None,
        "expert_units": s.expert_units,
        "expert_cursor": s.expert_cursor,
        "game_index": s.game_index,
    }


def _session_from_json(obj: dict) -> Session:
    domain = DomainId(obj["domain"])
    return Session(
        id=obj["id"],
        domain=domain,
        condition=obj["condition"],
        study_mode=obj["study_mode"],
        seed=obj["seed"],
        stage=obj["stage"],
        games_done=obj["games_done"],
        scores={k: list(v) for k, v in obj["scores"].items()},
        board=connect4.Connect4Board.from_json(obj["board"]) if obj["board"] else None,
        ll_state=lander.LanderState.from_json(obj["ll_state"]) if obj["ll_state"] else None,
        ll_steps=obj["ll_steps"],
        trace=dataset.trace_from_json(obj["trace"]) if obj["trace"] else None,
        expert_trace=dataset.trace_from_json(obj["expert_trace"]) if obj["expert_trace"] else None,
        expert_units=obj["expert_units"],
        expert_cursor=obj["expert_cursor"],
        game_index=obj["game_index"],
    )


class Backend:
    """Per-domain policies and retrieval indexes behind the endpoints."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.policies: dict[DomainId, Optional[agent.Policy]] = {
            DomainId.CONNECT4: None, DomainId.LUNAR_LANDER: None,
        }
        if config.c4_policy_path:
            self.policies[DomainId.CONNECT4] = agent.load_policy(config.c4_policy_path)
        if config.ll_policy_path:
            self.policies[DomainId.LUNAR_LANDER] = agent.load_policy(config.ll_policy_path)
        self.models: dict[DomainId, Any] = {}
        self.indexes: dict[DomainId, retrieval.CatalogIndex] = {}
        from . import embedding
        for domain, path in (
            (DomainId.CONNECT4, config.c4_checkpoint_path),
            (DomainId.LUNAR_LANDER, config.ll_checkpoint_path),
        ):
            model = embedding.load_checkpoint(path, domain) if path \
                else retrieval.OracleEncoder(domain)
            self.models[domain] = model
            self.indexes[domain] = retrieval.build_index(model)

    # ---- expert actions -------------------------------------------------

    def expert_c4(self, board: connect4.Connect4Board, me: int, rng) -> int:
        pol = self.policies[DomainId.CONNECT4]
        if pol is not None:
            return pol.act_c4(board, me)
        return connect4.heuristic_move(board, rng)

    def expert_ll(self, s: lander.LanderState) -> LanderAction:
        pol = self.policies[DomainId.LUNAR_LANDER]
        if pol is not None:
            return pol.act_ll(s)
        return lander.scripted_move(s)

    # ---- expert rollout with retrieved explanations ---------------------

    def expert_rollout(self, sess: Session) -> tuple[RolloutTrace, list[dict]]:
        seed = sess.game_seed()
        if sess.domain is DomainId.CONNECT4:
            trace = self._rollout_c4(seed)
        else:
            trace = self._rollout_ll(seed)
        units = self._presentation_units(sess, trace)
        return trace, units

    def _rollout_c4(self, seed: RunSeed) -> RolloutTrace:
        rng = seed.generator()
        board = connect4.new_game()
        trace = RolloutTrace(DomainId.CONNECT4)
        expert = 1
        while not connect4.is_terminal(board):
            mover = board.player_to_move
            if mover == expert:
                col = self.expert_c4(board, expert, rng)
            else:
                col = connect4.heuristic_move(board, rng)
            nxt = connect4.apply(board, col, mover)
            if mover == expert:
                ctx = ContextInfo(connect4.is_terminal(nxt), current_player=mover)
                t = Transition(DomainId.CONNECT4, board, col, nxt, ctx)
                trace.steps.append(self._traced(t))
            board = nxt
        return trace

    def _rollout_ll(self, seed: RunSeed) -> RolloutTrace:
        s = lander.reset(seed)
        trace = RolloutTrace(DomainId.LUNAR_LANDER)
        for _ in range(lander.DEFAULT_CONFIG.max_episode_steps):
            a = self.expert_ll(s)
            nxt, outcome = lander.step(s, a)
            t = Transition(DomainId.LUNAR_LANDER, s, a, nxt, ContextInfo(outcome.terminal))
            trace.steps.append(self._traced(t))
            s = nxt
            if outcome.terminal:
                break
        return trace

    def _traced(self, t: Transition) -> TraceStep:
        """Trace step carrying the retrieved (not ground-truth) explanation."""
        index, model = self.indexes[t.domain], self.models[t.domain]
        result = retrieval.retrieve(index, model, t, k=1)
        cs = result.ranked[0][0]
        exp = index.explanations[index.sets.index(cs)]
        base = 0.0
        shaped = base + shaping.shape(t, cs, shaping.default_table(t.domain))
        return TraceStep(t, cs, exp, base, shaped)

    def _presentation_units(self, sess: Session, trace: RolloutTrace) -> list[dict]:
        mode = _CONDITION_MODES.get(sess.condition)
        if mode is None or not trace.steps:
            return [None] * len(trace.steps)
        units = abstraction.abstract(trace, mode)
        slots: list[Optional[dict]] = [None] * len(trace.steps)
        for u in units:
            slots[u.start] = u.to_json()
        return slots


# --------------------------------------------------------------------------
# Game-state helpers
# --------------------------------------------------------------------------

def _new_game(sess: Session) -> None:
    if sess.domain is DomainId.CONNECT4:
        sess.board = connect4.new_game()
        sess.ll_state = None
    else:
        sess.ll_state = lander.reset(sess.game_seed())
        sess.ll_steps = 0
        sess.board = None
    sess.trace = RolloutTrace(sess.domain)
    sess.expert_trace = None
    sess.expert_units = None
    sess.expert_cursor = 0


def _advance_after_game(sess: Session, score: float) -> None:
    sess.scores.setdefault(sess.stage, []).append(score)
    sess.games_done += 1
    sess.game_index += 1
    if sess.study_mode and sess.stage in STAGES:
        quota = STAGE_QUOTAS[sess.domain][sess.stage]
        if sess.games_done >= quota:
            idx = STAGES.index(sess.stage)
            sess.stage = STAGES[idx + 1] if idx + 1 < len(STAGES) else "free"
            sess.games_done = 0
    _new_game(sess)


def _state_json(sess: Session) -> Any:
    if sess.domain is DomainId.CONNECT4:
        return sess.board.to_json()
    return sess.ll_state.to_json()


def _c4_outcome_json(board: connect4.Connect4Board, human: int = 1) -> Optional[str]:
    player, draw = connect4.winner(board)
    if player is not None:
        return "win" if player == human else "loss"
    return "draw" if draw else None


# --------------------------------------------------------------------------
# FastAPI app
# --------------------------------------------------------------------------

def create_app(config: Optional[ServiceConfig] = None):
    from fastapi import Body, FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware

    config = config or ServiceConfig()
    backend = Backend(config)
    store = SessionStore(config.data_dir)
    app = FastAPI(title="s2e service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    app.state.store = store
    app.state.backend = backend

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/configz")
    def configz():
        return config.to_json()

    @app.post("/session", status_code=201)
    def create_session(body: dict = Body(...)):
        try:
            domain = DomainId(body["domain"])
        except (KeyError, ValueError):
            raise HTTPException(400, "unknown domain")
        condition = body.get("condition", "none")
        if condition not in CONDITIONS:
            raise HTTPException(400, f"condition must be one of {CONDITIONS}")
        if condition in _LL_ONLY_CONDITIONS and domain is DomainId.CONNECT4:
            raise HTTPException(400, f"{condition} applies to the lander only")
        if condition == "value" and backend.policies[domain] is None:
            raise HTTPException(400, "value condition needs a trained agent policy")
        study_mode = bool(body.get("study_mode", True))
        seed = int(body.get("seed", config.seed))
        sess = Session(
            id=uuid.uuid4().hex,
            domain=domain,
            condition=condition,
            study_mode=study_mode,
            seed=seed,
            stage="practice" if study_mode else "free",
        )
        _new_game(sess)
        store.add(sess)
        return {"session_id": sess.id}

    @app.post("/session/{sid}/move")
    def move(sid: str, body: dict = Body(...)):
        sess = store.get(sid)
        with store.lock(sid):
            if sess.stage not in _PLAY_STAGES:
                raise HTTPException(409, f"no human play in stage {sess.stage}")
            if sess.domain is DomainId.CONNECT4:
                resp = _c4_move(sess, backend, body)
            else:
                resp = _ll_move(sess, body)
            store.persist(sess)
            return resp

    @app.post("/session/{sid}/agent-step")
    def agent_step(sid: str):
        sess = store.get(sid)
        with store.lock(sid):
            if sess.stage not in ("explanation", "free"):
                raise HTTPException(409, f"no expert stepping in stage {sess.stage}")
            if sess.expert_trace is None:
                sess.expert_trace, sess.expert_units = backend.expert_rollout(sess)
                sess.expert_cursor = 0
            if sess.expert_cursor >= len(sess.expert_trace.steps):
                raise HTTPException(409, "expert rollout already finished")
            resp = _expert_step(sess, backend)
            store.persist(sess)
            return resp

    @app.get("/session/{sid}/score")
    def score(sid: str):
        sess = store.get(sid)
        return {
            "per_stage": {
                stage: {"games": games, "mean": sum(games) / len(games)}
                for stage, games in sess.scores.items() if games
            },
        }

    @app.get("/session/{sid}/state")
    def state(sid: str):
        sess = store.get(sid)
        return _session_to_json(sess)

    return app


def _record_human_step(sess: Session, t: Transition, outcome_for_label) -> float:
    if sess.domain is DomainId.CONNECT4:
        cs = concepts.label_connect4(t)
    else:
        cs = concepts.label_lander(t, outcome_for_label)
    exp = concepts.render(t.action, cs)
    shaped = shaping.shape(t, cs, shaping.default_table(sess.domain))
    sess.trace.steps.append(TraceStep(t, cs, exp, 0.0, shaped))
    return shaped


def _c4_move(sess: Session, backend: Backend, body: dict):
    from fastapi import HTTPException

    board = sess.board
    if connect4.is_terminal(board):
        raise HTTPException(409, "game is over")
    try:
        col = int(body["action"])
    except (KeyError, TypeError, ValueError):
        raise HTTPException(422, "action must be a column number")
    if col not in connect4.legal_actions(board):
        raise HTTPException(422, f"illegal column {col}")
    human = 1  # humans always move first
    after = connect4.apply(board, col, human)
    ctx = ContextInfo(connect4.is_terminal(after), current_player=human)
    t = Transition(DomainId.CONNECT4, board, col, after, ctx)
    step_reward = _record_human_step(sess, t, None)
    sess.board = after
    reply = None
    if not connect4.is_terminal(after):
        rng = derive_stream(sess.game_seed(), f"reply/{after.move_count}").generator()
        reply = backend.expert_c4(after, 2, rng)
        sess.board = connect4.apply(after, reply, 2)
    outcome = _c4_outcome_json(sess.board)
    resp = {
        "state": sess.board.to_json(),
        "outcome": outcome,
        "step_reward": step_reward,
        "agent_reply": reply,
    }
    if connect4.is_terminal(sess.board):
        _advance_after_game(sess, shaping.ats(sess.trace))
        resp["stage"] = sess.stage
    return resp


def _ll_move(sess: Session, body: dict):
    from fastapi import HTTPException

    s = sess.ll_state
    if _ll_outcome(s).terminal:
        raise HTTPException(409, "episode is over")
    try:
        action = LanderAction[body["action"]]
    except (KeyError, TypeError):
        raise HTTPException(422, "action must be a lander action name")
    nxt, outcome = lander.step(s, action)
    t = Transition(DomainId.LUNAR_LANDER, s, action, nxt, ContextInfo(outcome.terminal))
    step_reward = _record_human_step(sess, t, outcome)
    sess.ll_state = nxt
    sess.ll_steps += 1
    done = outcome.terminal or sess.ll_steps >= lander.DEFAULT_CONFIG.max_episode_steps
    resp = {
        "state": nxt.to_json(),
        "outcome": outcome.name,
        "step_reward": step_reward,
    }
    if done:
        _advance_after_game(sess, shaping.ats(sess.trace))
        resp["stage"] = sess.stage
    return resp


def _expert_step(sess: Session, backend: Backend):
    i = sess.expert_cursor
    step = sess.expert_trace.steps[i]
    t = step.transition
    resp: dict[str, Any] = {
        "step": i,
        "transition": {
            "s_prev": t.s_prev.to_json(),
            "action": dataset._action_to_json(sess.domain, t.action),
            "s_curr": t.s_curr.to_json(),
            "game_over": t.ctx.game_over,
        },
    }
    cond = sess.condition
    if cond == "action":
        resp["explanation"] = {
            "text": concepts.action_phrase(sess.domain, t.action),
        }
    elif cond == "value":
        pol = backend.policies[sess.domain]
        if sess.domain is DomainId.CONNECT4:
            values = pol.values_c4(t.s_prev, t.ctx.current_player or 1)
        else:
            values = pol.values_ll(t.s_prev)
        resp["explanation"] = {
            "text": concepts.action_phrase(sess.domain, t.action),
            "values": values,
        }
    elif cond in _CONDITION_MODES:
        unit = sess.expert_units[i]
        if unit is not None:
            resp["explanation"] = {"text": unit["text"], "span": unit["n"]}

    sess.expert_cursor += 1
    if sess.expert_cursor >= len(sess.expert_trace.steps):
        _advance_after_game(sess, shaping.ats(sess.expert_trace))
        resp["stage"] = sess.stage
        resp["rollout_done"] = True
    return resp
