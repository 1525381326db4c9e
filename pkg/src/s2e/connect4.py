"""Connect 4 game engine: 6x7 grid, gravity drops, four-in-a-row detection.

Board layout: ``grid[row, col]`` with row 0 at the bottom.  Cells hold 0
(empty), 1 (P1) or 2 (P2).  P1 always moves first; the side to move is
derived from ``move_count``.  Actions are columns 1..7.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import maybe_njit
from .errors import GameOver, IllegalColumn, WrongPlayer

ROWS = 6
COLS = 7
CENTER_COLUMN = 4  # 1-indexed


# --------------------------------------------------------------------------
# Hot kernels (numba-compiled unless S2E_NO_NUMBA is set)
# --------------------------------------------------------------------------

def _winner_scan(grid):
    """0 = no winner, else the winning player tag."""
    for r in range(ROWS):
        for c in range(COLS):
            p = grid[r, c]
            if p == 0:
                continue
            # east, north, north-east, north-west
            if c + 3 < COLS and grid[r, c + 1] == p and grid[r, c + 2] == p and grid[r, c + 3] == p:
                return p
            if r + 3 < ROWS:
                if grid[r + 1, c] == p and grid[r + 2, c] == p and grid[r + 3, c] == p:
                    return p
                if c + 3 < COLS and grid[r + 1, c + 1] == p and grid[r + 2, c + 2] == p and grid[r + 3, c + 3] == p:
                    return p
                if c - 3 >= 0 and grid[r + 1, c - 1] == p and grid[r + 2, c - 2] == p and grid[r + 3, c - 3] == p:
                    return p
    return 0


def _column_heights(grid):
    heights = np.zeros(COLS, dtype=np.int64)
    for c in range(COLS):
        h = 0
        while h < ROWS and grid[h, c] != 0:
            h += 1
        heights[c] = h
    return heights


def _winning_columns(grid, player):
    """Boolean mask over columns whose drop makes four-in-a-row for player."""
    out = np.zeros(COLS, dtype=np.bool_)
    for c in range(COLS):
        r = ROWS
        for h in range(ROWS):
            if grid[h, c] == 0:
                r = h
                break
        if r == ROWS:
            continue
        grid[r, c] = player
        win = False
        for d in range(4):
            if d == 0:
                dr, dc = 0, 1
            elif d == 1:
                dr, dc = 1, 0
            elif d == 2:
                dr, dc = 1, 1
            else:
                dr, dc = 1, -1
            n = 1
            rr, cc = r + dr, c + dc
            while 0 <= rr < ROWS and 0 <= cc < COLS and grid[rr, cc] == player:
                n += 1
                rr += dr
                cc += dc
            rr, cc = r - dr, c - dc
            while 0 <= rr < ROWS and 0 <= cc < COLS and grid[rr, cc] == player:
                n += 1
                rr -= dr
                cc -= dc
            if n >= 4:
                win = True
        grid[r, c] = 0
        out[c] = win
    return out


def _label_flags(grid, r, c, player):
    """Concept flags for the move that placed ``player`` at ``(r, c)``.

    ``grid`` is the post-move board.  Returns (win, block_win, open_three,
    blocked_three); open/blocked three are mutually exclusive, open wins.
    """
    opp = 3 - player
    win = False
    open3 = False
    any3 = False
    block = False
    for d in range(4):
        if d == 0:
            dr, dc = 0, 1
        elif d == 1:
            dr, dc = 1, 0
        elif d == 2:
            dr, dc = 1, 1
        else:
            dr, dc = 1, -1
        # maximal mover run through the played cell, plus its two end cells
        n = 1
        rr, cc = r + dr, c + dc
        while 0 <= rr < ROWS and 0 <= cc < COLS and grid[rr, cc] == player:
            n += 1
            rr += dr
            cc += dc
        e1r, e1c = rr, cc
        rr, cc = r - dr, c - dc
        while 0 <= rr < ROWS and 0 <= cc < COLS and grid[rr, cc] == player:
            n += 1
            rr -= dr
            cc -= dc
        e2r, e2c = rr, cc
        if n >= 4:
            win = True
        elif n == 3:
            any3 = True
            if 0 <= e1r < ROWS and 0 <= e1c < COLS and grid[e1r, e1c] == 0:
                open3 = True
            if 0 <= e2r < ROWS and 0 <= e2c < COLS and grid[e2r, e2c] == 0:
                open3 = True
        # block: the played cell would have completed an opponent four
        for off in range(-3, 1):
            count = 0
            ok = True
            for k in range(4):
                wr = r + (off + k) * dr
                wc = c + (off + k) * dc
                if wr < 0 or wr >= ROWS or wc < 0 or wc >= COLS:
                    ok = False
                    break
                if wr == r and wc == c:
                    continue
                if grid[wr, wc] == opp:
                    count += 1
                else:
                    ok = False
                    break
            if ok and count == 3:
                block = True
    blocked3 = any3 and not open3
    return win, block, open3, blocked3


winner_scan = maybe_njit(_winner_scan)
column_heights = maybe_njit(_column_heights)
winning_columns = maybe_njit(_winning_columns)
label_flags = maybe_njit(_label_flags)


# --------------------------------------------------------------------------
# Board type and rules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Connect4Board:
    grid: np.ndarray = field(default_factory=lambda: np.zeros((ROWS, COLS), dtype=np.int8))
    move_count: int = 0

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Connect4Board)
            and self.move_count == other.move_count
            and bool(np.array_equal(self.grid, other.grid))
        )

    @property
    def player_to_move(self) -> int:
        return 1 if self.move_count % 2 == 0 else 2

    def to_json(self) -> dict:
        return {"grid": self.grid.tolist(), "to_move": self.player_to_move}

    @classmethod
    def from_json(cls, obj: dict) -> "Connect4Board":
        grid = np.asarray(obj["grid"], dtype=np.int8)
        if grid.shape != (ROWS, COLS):
            raise ValueError(f"grid must be {ROWS}x{COLS}")
        return cls(grid=grid, move_count=int((grid != 0).sum()))


def new_game() -> Connect4Board:
    return Connect4Board()


def winner(board: Connect4Board) -> tuple[int | None, bool]:
    """(winning player or None, draw flag)."""
    w = int(winner_scan(board.grid))
    if w:
        return w, False
    return None, board.move_count == ROWS * COLS


def is_terminal(board: Connect4Board) -> bool:
    w, draw = winner(board)
    return w is not None or draw


def legal_actions(board: Connect4Board) -> set[int]:
    if is_terminal(board):
        return set()
    heights = column_heights(board.grid)
    return {c + 1 for c in range(COLS) if heights[c] < ROWS}


def apply(board: Connect4Board, column: int, player: int) -> Connect4Board:
    """Drop a token; returns the successor board."""
    if not 1 <= column <= COLS:
        raise IllegalColumn(f"column {column} out of range")
    if player != board.player_to_move:
        raise WrongPlayer(f"player {player} is not to move")
    if is_terminal(board):
        raise GameOver("board is terminal")
    c = column - 1
    row = int(column_heights(board.grid)[c])
    if row >= ROWS:
        raise IllegalColumn(f"column {column} is full")
    grid = board.grid.copy()
    grid[row, c] = player
    return Connect4Board(grid=grid, move_count=board.move_count + 1)


def played_cell(prev: Connect4Board, curr: Connect4Board) -> tuple[int, int, int]:
    """(row, col, player) of the single cell that differs between two boards."""
    diff = np.argwhere(prev.grid != curr.grid)
    if len(diff) != 1:
        raise ValueError("boards do not differ by exactly one move")
    r, c = int(diff[0][0]), int(diff[0][1])
    return r, c, int(curr.grid[r, c])


# --------------------------------------------------------------------------
# Policies
# --------------------------------------------------------------------------

def random_move(board: Connect4Board, rng: np.random.Generator) -> int:
    moves = sorted(legal_actions(board))
    return moves[int(rng.integers(len(moves)))]


def heuristic_move(board: Connect4Board, rng: np.random.Generator) -> int:
    """Win if possible, block an opponent win if necessary, else random."""
    player = board.player_to_move
    legal = sorted(legal_actions(board))
    if not legal:
        raise GameOver("no legal moves")
    wins = winning_columns(board.grid, player)
    own = [c for c in legal if wins[c - 1]]
    if own:
        return own[0]
    blocks = winning_columns(board.grid, 3 - player)
    blocking = [c for c in legal if blocks[c - 1]]
    if blocking:
        return blocking[0]
    return legal[int(rng.integers(len(legal)))]
