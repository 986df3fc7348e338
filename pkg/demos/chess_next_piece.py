"""Chess: parse PGN, extract next-moving-piece examples, score the Rand baseline.

Run from the repository root:  python demos/chess_next_piece.py
"""
from pathlib import Path

import numpy as np

from vain.chessdata import mpp
from vain.chessdata.board import Board, perft
from vain.chessdata.pgn import read_pgn

# Move generation sanity: perft from the start position.
print("perft 1..3:", [perft(Board.initial(), d) for d in (1, 2, 3)])

games = read_pgn(Path(__file__).parents[1] / "data" / "chess" / "selfplay-50.pgn")
stats = {}
examples = list(mpp.iter_examples(games, max_ply=100, stats=stats))
print("games", stats["games"], "parsed", stats["parsed"], "examples", stats["examples"])

# One example: 32 slots, present pieces one-hot encoded, label = slot that moves.
ex = examples[0]
feats = mpp.encode_onehot(ex)
print("first position: pieces", int(ex.mask.sum()), "label slot", ex.label,
      "feature block", feats.shape)

# Rand picks a present piece uniformly; its accuracy is about 1 / mean piece count.
_, mask, labels, _ = mpp.stack_examples(examples)
picks = mpp.rand_predict(mask, seed=0)
print("Rand accuracy", round(float(np.mean(np.argmax(picks, 1) == labels)), 4),
      "expected", round(mpp.rand_expected_accuracy(mask), 4),
      "1/mean pieces", round(1 / mask.sum(1).mean(), 4))
