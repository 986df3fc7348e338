"""Seeded one-ply self-play for building PGN corpora offline.

The move policy is a softmax over a cheap tactical score: material won,
pieces left hanging, checks, mates and a little development/centralization.
It is nowhere near master strength, but which piece moves next depends on
the other pieces (threats, captures, defence), which is what the
next-moving-piece task needs.
"""
from __future__ import annotations

import numpy as np

from .board import Board, Move
from .pgn import format_game

VALUE = {"p": 1.0, "n": 3.0, "b": 3.2, "r": 5.0, "q": 9.0, "k": 0.0}


def _hanging_loss(board: Board, color: str) -> float:
    """Largest value among ``color``'s attacked pieces that are poorly defended."""
    them = "b" if color == "w" else "w"
    own = str.isupper if color == "w" else str.islower
    worst = 0.0
    for sq, p in enumerate(board.squares):
        if p is None or not own(p) or p.lower() in "k":
            continue
        if board.is_attacked(sq, them):
            v = VALUE[p.lower()]
            loss = v if not board.is_attacked(sq, color) else max(0.0, v - 3.0)
            worst = max(worst, loss)
    return worst


def _centrality(sq: int) -> float:
    f, r = sq % 8, sq // 8
    return -(abs(f - 3.5) + abs(r - 3.5)) / 7.0


def score_moves(board: Board, moves: list[Move]) -> np.ndarray:
    us = board.turn
    scores = np.zeros(len(moves))
    for k, mv in enumerate(moves):
        p = board.squares[mv.src].lower()
        cap = board.captured_square(mv)
        gain = VALUE[board.squares[cap].lower()] if cap is not None else 0.0
        if mv.promotion:
            gain += VALUE[mv.promotion] - 1.0
        after = board.push_unchecked(mv)
        s = gain - 0.9 * _hanging_loss(after, us)
        if after.in_check():
            s += 1000.0 if not after.legal_moves() else 0.3
        s += 0.3 * (_centrality(mv.dst) - _centrality(mv.src)) * (p != "k")
        back_rank = 0 if us == "w" else 7
        if p in "nb" and mv.src // 8 == back_rank:
            s += 0.25
        if p == "k" and not board.is_castle(mv) and board.ply < 60:
            s -= 0.4
        if board.is_castle(mv):
            s += 0.5
        scores[k] = s
    return scores


def material(board: Board) -> float:
    total = 0.0
    for p in board.squares:
        if p is not None:
            total += VALUE[p.lower()] * (1 if p.isupper() else -1)
    return total


def play_game(seed: int, max_plies: int = 160, temperature: float = 0.6) -> tuple[list[str], str]:
    rng = np.random.default_rng(seed)
    board = Board.initial()
    sans: list[str] = []
    result = "1/2-1/2"
    seen: dict[str, int] = {}
    while True:
        moves = board.legal_moves()
        if not moves:
            result = ("0-1" if board.turn == "w" else "1-0") if board.in_check() else "1/2-1/2"
            break
        if board.halfmove >= 100 or board.insufficient_material():
            break
        key = " ".join(board.fen().split()[:4])
        seen[key] = seen.get(key, 0) + 1
        if seen[key] >= 3:
            break
        if len(sans) >= max_plies:
            diff = material(board)
            result = "1-0" if diff >= 3 else "0-1" if diff <= -3 else "1/2-1/2"
            break
        z = score_moves(board, moves) / temperature
        z -= z.max()
        prob = np.exp(z)
        prob /= prob.sum()
        mv = moves[rng.choice(len(moves), p=prob)]
        sans.append(board.san(mv, moves))
        board = board.push_unchecked(mv)
    return sans, result


def generate_pgn(n_games: int, seed: int = 0, max_plies: int = 160) -> str:
    seeds = np.random.SeedSequence(seed).generate_state(n_games)
    chunks = []
    for k, s in enumerate(seeds):
        sans, result = play_game(int(s), max_plies)
        tags = {"Event": "vain self-play", "Site": "offline", "Date": "2026.01.01",
                "Round": str(k + 1), "White": "selfplay", "Black": "selfplay",
                "Result": result, "PlyCount": str(len(sans))}
        chunks.append(format_game(tags, sans, result))
    return "\n".join(chunks)
