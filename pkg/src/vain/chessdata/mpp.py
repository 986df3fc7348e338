"""Next-moving-piece examples from replayed games.

Slot layout: White pieces in slots 0-15, Black in 16-31, each side ordered
K, Q, R(a), R(h), B(c), B(f), N(b), N(g), pawns a..h by starting square.
A piece keeps its slot for the whole game (a promoted pawn keeps the pawn's
slot with its new category); a captured piece leaves its slot empty.

Category numbers: 1-6 White P, R, N, B, Q, K; 7-12 Black in the same
order; 0 = absent.  Coordinates are 0-based (file, rank) from a1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .board import START_FEN, Board, SanError, square
from .pgn import PgnGame

N_SLOTS = 32
N_CATEGORIES = 12
ONEHOT_WIDTH = (N_CATEGORIES + 1) + 8 + 8      # 29
CATEGORY = {p: k + 1 for k, p in enumerate("PRNBQK")}
CATEGORY.update({p: k + 7 for k, p in enumerate("prnbqk")})

_HOME_ORDER = ("e1", "d1", "a1", "h1", "c1", "f1", "b1", "g1",
               "a2", "b2", "c2", "d2", "e2", "f2", "g2", "h2")


def _home_slots() -> dict[int, int]:
    slots = {}
    for k, name in enumerate(_HOME_ORDER):
        slots[square(name)] = k
        mirrored = name[0] + str(9 - int(name[1]))
        slots[square(mirrored)] = k + 16
    return slots


HOME_SLOTS = _home_slots()


@dataclass
class MppExample:
    slots: np.ndarray          # (32, 3) int: category, x, y
    label: int
    game: int = 0
    ply: int = 0

    @property
    def mask(self) -> np.ndarray:
        return self.slots[:, 0] > 0

    def to_json(self) -> str:
        return json.dumps({"slots": self.slots.tolist(), "label": int(self.label),
                           "game": int(self.game), "ply": int(self.ply)})

    @classmethod
    def from_json(cls, line: str) -> "MppExample":
        d = json.loads(line)
        return cls(np.array(d["slots"], dtype=np.int64), int(d["label"]),
                   int(d.get("game", 0)), int(d.get("ply", 0)))


class SlotTracker:
    """Follows piece identity (slot) through a game."""

    def __init__(self, board: Board):
        if board.fen().split()[0] != START_FEN.split()[0]:
            raise ValueError("slot tracking needs the standard initial position")
        self.by_square: dict[int, int] = dict(HOME_SLOTS)

    def features(self, board: Board) -> np.ndarray:
        out = np.zeros((N_SLOTS, 3), dtype=np.int64)
        for sq, slot in self.by_square.items():
            out[slot] = (CATEGORY[board.squares[sq]], sq % 8, sq // 8)
        return out

    def move(self, board: Board, mv) -> None:
        """Update slots for ``mv`` played in ``board`` (the position before it)."""
        captured = board.captured_square(mv)
        if captured is not None:
            self.by_square.pop(captured, None)
        if board.is_castle(mv):
            rook_src, rook_dst = ((mv.src + 3, mv.src + 1) if mv.dst > mv.src
                                  else (mv.src - 4, mv.src - 1))
            self.by_square[rook_dst] = self.by_square.pop(rook_src)
        self.by_square[mv.dst] = self.by_square.pop(mv.src)


@dataclass
class ReplayResult:
    examples: list = field(default_factory=list)
    final: Optional[Board] = None
    error: Optional[str] = None
    plies: int = 0


def replay(game: PgnGame, max_ply: int = 100) -> ReplayResult:
    """Replay a parsed game; one example per position before each of the first ``max_ply`` moves."""
    res = ReplayResult()
    if not game.ok:
        res.error = game.error
        return res
    fen = game.tags.get("FEN")
    if fen and fen.split()[0] != START_FEN.split()[0]:
        res.error = "non-standard start position"
        return res
    board = Board.initial()
    tracker = SlotTracker(board)
    try:
        for ply, san in enumerate(game.moves):
            mv = board.parse_san(san)
            if ply < max_ply:
                feats = tracker.features(board)
                label = tracker.by_square[mv.src]
                res.examples.append(MppExample(feats, label, game.index, ply))
            tracker.move(board, mv)
            board = board.push_unchecked(mv)
            res.plies = ply + 1
    except SanError as exc:
        res.error = f"ply {res.plies + 1}: {exc}"
        res.examples = []
    res.final = board
    return res


def extract_examples(game: PgnGame, max_ply: int = 100) -> list[MppExample]:
    res = replay(game, max_ply)
    if res.error:
        raise ValueError(res.error)
    return res.examples


def result_consistent(game: PgnGame, final: Board) -> bool:
    """False only when the final position is mate/stalemate and the result tag disagrees."""
    if final.is_checkmate():
        winner = "0-1" if final.turn == "w" else "1-0"
        return game.result in (winner, "*")
    if final.is_stalemate():
        return game.result in ("1/2-1/2", "*")
    return True


def encode_onehot(example: MppExample) -> np.ndarray:
    """Per slot: 13-way category (index 12 = absent), 8-way file, 8-way rank."""
    return onehot_slots(example.slots).reshape(-1)


def onehot_slots(slots: np.ndarray) -> np.ndarray:
    slots = np.asarray(slots)
    lead = slots.shape[:-2]
    out = np.zeros(lead + (N_SLOTS, ONEHOT_WIDTH))
    cat = slots[..., 0]
    present = cat > 0
    cat_idx = np.where(present, cat - 1, N_CATEGORIES)
    np.put_along_axis(out, cat_idx[..., None], 1.0, axis=-1)
    file_onehot = np.zeros(lead + (N_SLOTS, 8))
    rank_onehot = np.zeros(lead + (N_SLOTS, 8))
    np.put_along_axis(file_onehot, slots[..., 1:2], 1.0, axis=-1)
    np.put_along_axis(rank_onehot, slots[..., 2:3], 1.0, axis=-1)
    out[..., 13:21] = np.where(present[..., None], file_onehot, 0.0)
    out[..., 21:29] = np.where(present[..., None], rank_onehot, 0.0)
    return out


def stack_examples(examples: Iterable[MppExample]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(one-hot features (S, 32, 29), mask (S, 32), labels (S,), game ids (S,))."""
    ex = list(examples)
    slots = np.stack([e.slots for e in ex])
    return (onehot_slots(slots), slots[..., 0] > 0, np.array([e.label for e in ex]),
            np.array([e.game for e in ex]))


def iter_examples(games: Iterable[PgnGame], max_ply: int = 100,
                  stats: dict | None = None) -> Iterator[MppExample]:
    stats = stats if stats is not None else {}
    for key in ("games", "parsed", "discarded", "examples"):
        stats.setdefault(key, 0)
    stats.setdefault("diagnostics", [])
    for g in games:
        stats["games"] += 1
        res = replay(g, max_ply)
        if res.error:
            stats["discarded"] += 1
            stats["diagnostics"].append(f"game {g.index}: {res.error}")
            continue
        stats["parsed"] += 1
        stats["examples"] += len(res.examples)
        yield from res.examples


def write_examples(examples: Iterable[MppExample], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(e.to_json() + "\n")
            n += 1
    return n


def read_examples(path) -> list[MppExample]:
    with open(path, encoding="utf-8") as fh:
        return [MppExample.from_json(line) for line in fh if line.strip()]


def split_games(n_games: int, n_test: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random game-level split; returns (train game ids, test game ids)."""
    order = np.random.default_rng(seed).permutation(n_games)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def rand_expected_accuracy(mask: np.ndarray) -> float:
    """Accuracy of a uniform pick among present pieces, in expectation."""
    return float(np.mean(1.0 / mask.sum(axis=1)))


def rand_predict(mask: np.ndarray, seed: int = 0) -> np.ndarray:
    """One-hot 'probabilities' of a seeded uniform pick among present pieces."""
    rng = np.random.default_rng(seed)
    out = np.zeros(mask.shape)
    for k, row in enumerate(mask):
        out[k, rng.choice(np.nonzero(row)[0])] = 1.0
    return out
