"""Reference value-based agent used to compare shaping sources.

A deliberately small double-estimator Q-learner with replay.  The point is
not agent strength but a stable, fast harness in which the only difference
between runs is the shaping source, so step-to-threshold statistics isolate
the effect of concept rewards.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import concepts, connect4, lander, shaping, substrate
from .core import ContextInfo, DomainId, RolloutTrace, RunSeed, TraceStep, Transition, derive_stream
from .errors import DivergedValues
from .lander import LanderAction
from .shaping import ShapingSource, ShapingTable

C4_WIN_THRESHOLD = 0.80
LL_LAND_THRESHOLD = 0.60


@dataclass(frozen=True)
class AgentConfig:
    replay_capacity: int = 20_000
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    gamma: float = 0.99
    n_step: int = 4
    target_sync: int = 500
    learning_rate: float = 1e-3
    hidden: int = 64
    train_every: int = 2
    warmup: int = 500
    eval_interval: int = 2_000
    eval_episodes: int = 50
    seed: RunSeed = RunSeed(0)

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        for name in ("replay_capacity", "batch_size", "eps_decay_steps", "n_step",
                     "target_sync", "hidden", "train_every", "eval_interval",
                     "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class LearningCurve:
    domain: DomainId
    source: str
    seed: int
    points: list[dict] = field(default_factory=list)  # {step, win, mean_reward}

    def append(self, step: int, win: float, mean_reward: float) -> None:
        if self.points and step <= self.points[-1]["step"]:
            raise ValueError("env steps must be strictly increasing")
        self.points.append({"step": step, "win": win, "mean_reward": mean_reward})


class QNet:
    """Two-hidden-layer MLP Q-function on the substrate layers."""

    def __init__(self, seed: RunSeed, n_in: int, n_out: int, hidden: int):
        rng = seed.generator()
        self.l1 = substrate.Linear(rng, n_in, hidden)
        self.r1 = substrate.Relu()
        self.l2 = substrate.Linear(rng, hidden, hidden)
        self.r2 = substrate.Relu()
        self.l3 = substrate.Linear(rng, hidden, n_out)
        self._layers = (self.l1, self.l2, self.l3)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.r1.forward(self.l1.forward(x))
        h = self.r2.forward(self.l2.forward(h))
        return self.l3.forward(h)

    def backward(self, g: np.ndarray) -> None:
        g = self.l3.backward(g)
        g = self.l2.backward(self.r2.backward(g))
        self.l1.backward(self.r1.backward(g))

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, l in enumerate(self._layers):
            out[f"l{i}.W"] = l.W
            out[f"l{i}.b"] = l.b
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, l in enumerate(self._layers):
            out[f"l{i}.W"] = l.dW
            out[f"l{i}.b"] = l.db
        return out

    def zero_grads(self) -> None:
        for l in self._layers:
            l.zero_grads()

    def copy_from(self, other: "QNet") -> None:
        for mine, theirs in zip(self.params().values(), other.params().values()):
            mine[...] = theirs


# --------------------------------------------------------------------------
# Domain adapters: observation vectors, action spaces, env loops
# --------------------------------------------------------------------------

def _c4_obs(board: connect4.Connect4Board, me: int) -> np.ndarray:
    """Mover-relative board plane plus tactical column features.

    Raw cells alone make credit assignment needlessly hard for a small MLP,
    so the observation also exposes per-column threats: immediate wins for
    either side and columns whose drop hands the opponent a win on top.
    """
    grid = board.grid
    opp = 3 - me
    plane = (grid == me).astype(np.float64) - (grid == opp).astype(np.float64)
    legal = _c4_legal_mask(board)
    my_win = connect4.winning_columns(grid.copy(), me)
    opp_win = connect4.winning_columns(grid.copy(), opp)
    heights = connect4.column_heights(grid)
    poison = np.zeros(connect4.COLS, dtype=bool)
    for c in range(connect4.COLS):
        if not legal[c]:
            continue
        g = grid.copy()
        g[heights[c], c] = me
        poison[c] = bool(connect4.winning_columns(g, opp)[c]) and heights[c] + 1 < connect4.ROWS
    return np.concatenate([
        plane.reshape(-1),
        legal.astype(np.float64),
        my_win.astype(np.float64),
        opp_win.astype(np.float64),
        poison.astype(np.float64),
    ])


def _c4_legal_mask(board: connect4.Connect4Board) -> np.ndarray:
    mask = np.zeros(connect4.COLS, dtype=bool)
    for col in connect4.legal_actions(board):
        mask[col - 1] = True
    return mask


def _ll_obs(s: lander.LanderState) -> np.ndarray:
    return s.vector()


_LL_ACTIONS = tuple(LanderAction)


def obs_dim(domain: DomainId) -> int:
    if domain is DomainId.CONNECT4:
        return connect4.ROWS * connect4.COLS + 4 * connect4.COLS
    return 10


def n_actions(domain: DomainId) -> int:
    return connect4.COLS if domain is DomainId.CONNECT4 else len(_LL_ACTIONS)


class Policy:
    """Greedy wrapper over a trained Q-net."""

    def __init__(self, domain: DomainId, net: QNet):
        self.domain = domain
        self.net = net

    def act_c4(self, board: connect4.Connect4Board, me: int) -> int:
        q = self.net.forward(_c4_obs(board, me)[None])[0]
        mask = _c4_legal_mask(board)
        q = np.where(mask, q, -np.inf)
        return int(np.argmax(q)) + 1

    def act_ll(self, s: lander.LanderState) -> LanderAction:
        q = self.net.forward(_ll_obs(s)[None])[0]
        return _LL_ACTIONS[int(np.argmax(q))]

    def values_c4(self, board: connect4.Connect4Board, me: int) -> dict[str, Optional[float]]:
        q = self.net.forward(_c4_obs(board, me)[None])[0]
        mask = _c4_legal_mask(board)
        return {
            str(c + 1): (float(q[c]) if mask[c] else None)
            for c in range(connect4.COLS)
        }

    def values_ll(self, s: lander.LanderState) -> dict[str, float]:
        q = self.net.forward(_ll_obs(s)[None])[0]
        return {a.name: float(q[i]) for i, a in enumerate(_LL_ACTIONS)}


def save_policy(policy: Policy, path: str) -> None:
    arrays = {f"param/{k}": v for k, v in policy.net.params().items()}
    hidden = policy.net.l1.W.shape[1]
    np.savez(path, domain=policy.domain.value, hidden=hidden, **arrays)


def load_policy(path: str) -> Policy:
    with np.load(path, allow_pickle=False) as data:
        domain = DomainId(str(data["domain"]))
        hidden = int(data["hidden"])
        net = QNet(RunSeed(0), obs_dim(domain), n_actions(domain), hidden)
        for name, tensor in net.params().items():
            tensor[...] = data[f"param/{name}"]
    return Policy(domain, net)


# --------------------------------------------------------------------------
# Replay
# --------------------------------------------------------------------------

class Replay:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: list[tuple] = []
        self._next = 0

    def push(self, item: tuple) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, n: int) -> list[tuple]:
        idx = rng.integers(0, len(self.items), size=n)
        return [self.items[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self.items)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def _epsilon(cfg: AgentConfig, step: int) -> float:
    frac = min(1.0, step / cfg.eps_decay_steps)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def _c4_base_reward(board: connect4.Connect4Board, me: int) -> float:
    player, draw = connect4.winner(board)
    if player == me:
        return 1.0
    if player is not None:
        return -1.0
    return 0.0


def _ll_base_reward(outcome: lander.LanderOutcome) -> float:
    if outcome is lander.LanderOutcome.LANDED:
        return 100.0
    if outcome in (lander.LanderOutcome.CRASHED, lander.LanderOutcome.OUT_OF_BOUNDS):
        return -100.0
    return 0.0


def _maybe_shape(
    t: Transition, base: float, source: ShapingSource, table: Optional[ShapingTable],
    monitor=None,
) -> float:
    if source.tag == "none":
        return base
    r, cs = shaping.shaped_reward(t, base, source, table)
    if monitor is not None and cs is not None:
        true_set = shaping._expert_set(t)
        monitor.observe(t, true_set)
    return r


def train_agent(
    domain: DomainId,
    source: ShapingSource,
    config: AgentConfig,
    budget: int,
    table: Optional[ShapingTable] = None,
    monitor=None,
) -> tuple[Policy, LearningCurve]:
    """ε-greedy double-estimator TD learning under one shaping source."""
    n_in, n_out = obs_dim(domain), n_actions(domain)
    online = QNet(derive_stream(config.seed, "init"), n_in, n_out, config.hidden)
    target = QNet(derive_stream(config.seed, "init"), n_in, n_out, config.hidden)
    target.copy_from(online)
    opt = substrate.Adam(online.params(), lr=config.learning_rate)
    replay = Replay(config.replay_capacity)
    act_rng = derive_stream(config.seed, "actions").generator()
    replay_rng = derive_stream(config.seed, "replay").generator()
    policy = Policy(domain, online)
    curve = LearningCurve(domain, source.tag, config.seed.seed, [])

    if domain is DomainId.CONNECT4:
        stepper = _C4Stepper(config.seed)
    else:
        stepper = _LLStepper(config.seed)
    stepper.reset()

    pending: list[tuple] = []  # within-episode window for n-step returns

    def flush(done_now: bool) -> None:
        while pending and (done_now or len(pending) == config.n_step):
            _, _, _, last_next, last_done, last_mask = pending[-1]
            r_n = 0.0
            for k, item in enumerate(pending):
                r_n += (config.gamma ** k) * item[2]
            obs0, a0, *_ = pending[0]
            gamma_n = config.gamma ** len(pending)
            replay.push((obs0, a0, r_n, last_next, last_done, last_mask, gamma_n))
            pending.pop(0)

    step = 0
    while step < budget:
        eps = _epsilon(config, step)
        explore = bool(act_rng.random() < eps)
        rand_draw = act_rng.random()
        obs, action_idx, reward_base, t, next_obs, done, next_mask = stepper.advance(
            policy, explore, rand_draw
        )
        reward = _maybe_shape(t, reward_base, source, table, monitor)
        pending.append((obs, action_idx, reward, next_obs, done, next_mask))
        flush(done)
        step += 1
        if done:
            stepper.reset()
        if len(replay) >= config.warmup and step % config.train_every == 0:
            _train_step(online, target, opt, replay, replay_rng, config)
        if step % config.target_sync == 0:
            target.copy_from(online)
        if step % config.eval_interval == 0:
            win, mean_r, _ = evaluate(
                policy, domain, config.eval_episodes, derive_stream(config.seed, f"eval/{step}")
            )
            curve.append(step, win, mean_r)
    return policy, curve


def _train_step(online: QNet, target: QNet, opt, replay: Replay, rng, cfg: AgentConfig) -> None:
    batch = replay.sample(rng, cfg.batch_size)
    obs = np.stack([b[0] for b in batch])
    actions = np.array([b[1] for b in batch])
    rewards = np.array([b[2] for b in batch])
    next_obs = np.stack([b[3] for b in batch])
    done = np.array([b[4] for b in batch])
    masks = np.stack([b[5] for b in batch])
    gamma_n = np.array([b[6] for b in batch])

    q_next_online = online.forward(next_obs)
    q_next_online = np.where(masks, q_next_online, -np.inf)
    best_next = np.argmax(q_next_online, axis=1)
    q_next_target = target.forward(next_obs)
    bootstrap = q_next_target[np.arange(len(batch)), best_next]
    targets = rewards + np.where(done, 0.0, gamma_n * bootstrap)
    if not np.all(np.isfinite(targets)):
        raise DivergedValues("non-finite TD targets")

    online.zero_grads()
    q = online.forward(obs)
    picked = q[np.arange(len(batch)), actions]
    err = picked - targets
    if not np.all(np.isfinite(err)):
        raise DivergedValues("non-finite value estimates")
    g = np.zeros_like(q)
    # Huber-style gradient: clip the TD error so terminal rewards at the
    # shaping scale (up to 10) cannot destabilize the updates
    g[np.arange(len(batch)), actions] = 2.0 * np.clip(err, -1.0, 1.0) / len(batch)
    online.backward(g)
    opt.step(online.grads())


# --------------------------------------------------------------------------
# Environment steppers (agent-perspective transitions)
# --------------------------------------------------------------------------

class _C4Stepper:
    """Agent vs the fixed scripted opponent; agent side alternates per episode."""

    def __init__(self, seed: RunSeed):
        self._seed = seed
        self._episode = -1

    def reset(self) -> None:
        self._episode += 1
        self._rng = derive_stream(self._seed, f"env/{self._episode}").generator()
        self.board = connect4.new_game()
        self.me = 1  # the learner moves first, as in the study setup

    def advance(self, policy: Policy, explore: bool, rand_draw: float):
        board = self.board
        obs = _c4_obs(board, self.me)
        legal = sorted(connect4.legal_actions(board))
        if explore:
            col = legal[int(rand_draw * len(legal))]
        else:
            col = policy.act_c4(board, self.me)
        after_me = connect4.apply(board, col, self.me)
        ctx = ContextInfo(game_over=connect4.is_terminal(after_me), current_player=self.me)
        t = Transition(DomainId.CONNECT4, board, col, after_me, ctx)
        if connect4.is_terminal(after_me):
            self.board = after_me
            reward = _c4_base_reward(after_me, self.me)
            return obs, col - 1, reward, t, _c4_obs(after_me, self.me), True, _c4_legal_mask(after_me)
        opp = 3 - self.me
        opp_col = connect4.heuristic_move(after_me, self._rng)
        after_opp = connect4.apply(after_me, opp_col, opp)
        self.board = after_opp
        done = connect4.is_terminal(after_opp)
        reward = _c4_base_reward(after_opp, self.me) if done else 0.0
        return obs, col - 1, reward, t, _c4_obs(after_opp, self.me), done, _c4_legal_mask(after_opp)


class _LLStepper:
    def __init__(self, seed: RunSeed):
        self._seed = seed
        self._episode = -1

    def reset(self) -> None:
        self._episode += 1
        ep_seed = derive_stream(self._seed, f"env/{self._episode}")
        self.state = lander.reset(ep_seed)
        self.steps = 0

    def advance(self, policy: Policy, explore: bool, rand_draw: float):
        s = self.state
        obs = _ll_obs(s)
        if explore:
            a = _LL_ACTIONS[int(rand_draw * len(_LL_ACTIONS))]
        else:
            a = policy.act_ll(s)
        nxt, outcome = lander.step(s, a)
        self.state = nxt
        self.steps += 1
        done = outcome.terminal or self.steps >= lander.DEFAULT_CONFIG.max_episode_steps
        ctx = ContextInfo(game_over=outcome.terminal)
        t = Transition(DomainId.LUNAR_LANDER, s, a, nxt, ctx)
        reward = _ll_base_reward(outcome)
        mask = np.ones(len(_LL_ACTIONS), dtype=bool)
        return obs, _LL_ACTIONS.index(a), reward, t, _ll_obs(nxt), done, mask


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def evaluate(
    policy: Policy, domain: DomainId, episodes: int, seed: RunSeed
) -> tuple[float, float, list[RolloutTrace]]:
    """Greedy rollouts; win fraction, mean base reward, labeled traces."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    wins = 0
    rewards = []
    traces = []
    for ep in range(episodes):
        ep_seed = derive_stream(seed, f"ep/{ep}")
        if domain is DomainId.CONNECT4:
            win, total, trace = _eval_c4(policy, ep, ep_seed)
        else:
            win, total, trace = _eval_ll(policy, ep_seed)
        wins += int(win)
        rewards.append(total)
        traces.append(trace)
    return wins / episodes, float(np.mean(rewards)), traces


def _eval_c4(policy: Policy, episode: int, seed: RunSeed) -> tuple[bool, float, RolloutTrace]:
    rng = seed.generator()
    board = connect4.new_game()
    me = 1
    trace = RolloutTrace(DomainId.CONNECT4)
    total = 0.0
    while not connect4.is_terminal(board):
        mover = board.player_to_move
        if mover == me:
            col = policy.act_c4(board, me)
        else:
            col = connect4.heuristic_move(board, rng)
        nxt = connect4.apply(board, col, mover)
        ctx = ContextInfo(game_over=connect4.is_terminal(nxt), current_player=mover)
        t = Transition(DomainId.CONNECT4, board, col, nxt, ctx)
        if mover == me:
            cs = concepts.label_connect4(t)
            r = _c4_base_reward(nxt, me)
            total += r
            trace.steps.append(TraceStep(t, cs, concepts.render(col, cs), r, r))
        board = nxt
    player, _ = connect4.winner(board)
    return player == me, total, trace


def _eval_ll(policy: Policy, seed: RunSeed) -> tuple[bool, float, RolloutTrace]:
    s = lander.reset(seed)
    trace = RolloutTrace(DomainId.LUNAR_LANDER)
    total = 0.0
    outcome = lander.LanderOutcome.RUNNING
    for _ in range(lander.DEFAULT_CONFIG.max_episode_steps):
        a = policy.act_ll(s)
        nxt, outcome = lander.step(s, a)
        ctx = ContextInfo(game_over=outcome.terminal)
        t = Transition(DomainId.LUNAR_LANDER, s, a, nxt, ctx)
        cs = concepts.label_lander(t, outcome)
        r = _ll_base_reward(outcome)
        total += r
        trace.steps.append(TraceStep(t, cs, concepts.render(a, cs), r, r))
        s = nxt
        if outcome.terminal:
            break
    return outcome is lander.LanderOutcome.LANDED, total, trace


# --------------------------------------------------------------------------
# Source comparison
# --------------------------------------------------------------------------

def threshold_for(domain: DomainId) -> float:
    return C4_WIN_THRESHOLD if domain is DomainId.CONNECT4 else LL_LAND_THRESHOLD


def steps_to_threshold(curve: LearningCurve, threshold: float) -> Optional[int]:
    for p in curve.points:
        if p["win"] >= threshold:
            return p["step"]
    return None


def compare_sources(
    domain: DomainId,
    sources: dict[str, ShapingSource],
    seeds: list[RunSeed],
    budget: int,
    config: Optional[AgentConfig] = None,
    table: Optional[ShapingTable] = None,
) -> dict:
    """Per-source learning curves, medians, and step-to-threshold stats."""
    if len(sources) < 2 or len(seeds) < 3:
        raise ValueError("need >= 2 sources and >= 3 seeds")
    from .retrieval import InWildMonitor

    base_cfg = config or AgentConfig()
    threshold = threshold_for(domain)
    report: dict = {"domain": domain.value, "threshold": threshold, "sources": {}}
    for name, source in sources.items():
        curves = []
        tts = []
        recalls = []
        for seed in seeds:
            cfg = dataclasses.replace(base_cfg, seed=seed)
            monitor = None
            if source.tag == "s2e":
                monitor = InWildMonitor(source.index, source.model)
            _, curve = train_agent(domain, source, cfg, budget, table, monitor)
            curves.append(curve)
            tts.append(steps_to_threshold(curve, threshold))
            if monitor is not None:
                recalls.append(monitor.cumulative)
        finite = [t for t in tts if t is not None]
        median_tts = float(np.median([t if t is not None else np.inf for t in tts]))
        final_rewards = [c.points[-1]["mean_reward"] for c in curves if c.points]
        entry = {
            "curves": [c.points for c in curves],
            "steps_to_threshold": tts,
            "median_steps_to_threshold": median_tts,
            "censored": len(tts) - len(finite),
            "median_final_reward": float(np.median(final_rewards)) if final_rewards else None,
        }
        if recalls:
            entry["inwild_recall1"] = float(np.mean(recalls))
        report["sources"][name] = entry
    return report


def curves_to_csv(report: dict, path: str) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["source", "seed_index", "step", "win", "mean_reward"])
        for name, entry in report["sources"].items():
            for si, points in enumerate(entry["curves"]):
                for p in points:
                    w.writerow([name, si, p["step"], p["win"], p["mean_reward"]])


def save_report(report: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2)
