import numpy as np
import pytest

from s2e import concepts, connect4, lander
from s2e.core import ContextInfo, DomainId, RolloutTrace, RunSeed, TraceStep, Transition, derive_stream


def random_c4_transition(rng: np.random.Generator) -> Transition:
    """One legal mid-game Connect 4 transition from a random playout prefix."""
    while True:
        board = connect4.new_game()
        depth = int(rng.integers(0, 30))
        ok = True
        for _ in range(depth):
            if connect4.is_terminal(board):
                ok = False
                break
            board = connect4.apply(board, connect4.random_move(board, rng), board.player_to_move)
        if not ok or connect4.is_terminal(board):
            continue
        mover = board.player_to_move
        col = connect4.random_move(board, rng)
        nxt = connect4.apply(board, col, mover)
        ctx = ContextInfo(connect4.is_terminal(nxt), current_player=mover)
        return Transition(DomainId.CONNECT4, board, col, nxt, ctx)


def scripted_ll_trace(seed: int, policy="scripted") -> RolloutTrace:
    rng = RunSeed(seed).generator()
    s = lander.reset(RunSeed(seed))
    trace = RolloutTrace(DomainId.LUNAR_LANDER)
    for _ in range(lander.DEFAULT_CONFIG.max_episode_steps):
        if policy == "random":
            a = list(lander.LanderAction)[int(rng.integers(4))]
        else:
            a = lander.scripted_move(s)
        nxt, outcome = lander.step(s, a)
        t = Transition(DomainId.LUNAR_LANDER, s, a, nxt, ContextInfo(outcome.terminal))
        cs = concepts.label_lander(t, outcome)
        trace.steps.append(TraceStep(t, cs, concepts.render(a, cs), 0.0, 0.0))
        s = nxt
        if outcome.terminal:
            break
    return trace


@pytest.fixture(scope="session")
def ll_traces():
    return [scripted_ll_trace(i) for i in range(8)]


@pytest.fixture(scope="session")
def tiny_ll_corpus():
    from s2e import dataset

    aligned = dataset.collect_aligned(DomainId.LUNAR_LANDER, "mixture", 8, RunSeed(5))
    mis = dataset.perturb_misaligned(aligned, 5, RunSeed(5))
    return dataset.Corpus(DomainId.LUNAR_LANDER, aligned + mis, 5,
                          dataset.Provenance("mixture", 5, 8))


@pytest.fixture(scope="session")
def tiny_c4_corpus():
    from s2e import dataset

    aligned = dataset.collect_aligned(DomainId.CONNECT4, "mixture", 30, RunSeed(5))
    mis = dataset.perturb_misaligned(aligned, 8, RunSeed(5))
    return dataset.Corpus(DomainId.CONNECT4, aligned + mis, 8,
                          dataset.Provenance("mixture", 5, 30))
