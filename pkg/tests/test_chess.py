from pathlib import Path

import numpy as np
import pytest

from vain.chessdata.board import Board, IllegalMoveError, Move, SanError, apply_san, perft, square
from vain.chessdata.mpp import (HOME_SLOTS, N_SLOTS, ONEHOT_WIDTH, MppExample, encode_onehot,
                                extract_examples, iter_examples, rand_expected_accuracy,
                                rand_predict, read_examples, replay, result_consistent,
                                split_games, stack_examples, write_examples)
from vain.chessdata.pgn import format_game, parse_pgn, read_pgn
from vain.chessdata.selfplay import play_game

DATA = Path(__file__).parent / "data"
REAL = sorted(DATA.glob("*.pgn"))


def read_perft_suite(path):
    """Parse an EPD-like perft file: 'id', 'epd', 'perft <depth> <nodes>' lines."""
    cases, cur = [], None
    for line in Path(path).read_text().splitlines():
        key, _, rest = line.partition(" ")
        if key == "id":
            cur = {"id": rest, "fen": None, "perft": {}}
            cases.append(cur)
        elif key == "epd":
            fields = rest.split()
            cur["fen"] = " ".join(fields[:4] + ["0", "1"])
        elif key == "perft":
            d, n = rest.split()
            cur["perft"][int(d)] = int(n)
    return [c for c in cases if _standard_castling(c["fen"])]


def _standard_castling(fen):
    """Drop Chess960 setups: a castling right whose king or rook is off its home square."""
    b = Board.from_fen(fen)
    home = {"K": ("e1", "h1", "K", "R"), "Q": ("e1", "a1", "K", "R"),
            "k": ("e8", "h8", "k", "r"), "q": ("e8", "a8", "k", "r")}
    for right in fen.split()[2].replace("-", ""):
        king_sq, rook_sq, king, rook = home[right]
        if b.squares[square(king_sq)] != king or b.squares[square(rook_sq)] != rook:
            return False
    return True


class TestMoveGeneration:
    def test_initial_twenty(self):
        assert len(Board.initial().legal_moves()) == 20

    @pytest.mark.parametrize("depth,nodes", [(1, 20), (2, 400), (3, 8902)])
    def test_perft_initial(self, depth, nodes):
        assert perft(Board.initial(), depth) == nodes

    @pytest.mark.parametrize("case", read_perft_suite(DATA / "tricky.perft"), ids=lambda c: c["id"])
    def test_perft_suite(self, case):
        board = Board.from_fen(case["fen"])
        for depth, nodes in sorted(case["perft"].items()):
            if nodes > 20_000:
                break
            assert perft(board, depth) == nodes

    def test_stalemate(self):
        b = Board.from_fen("7k/5Q2/6K1/8/8/8/8/8 b - - 0 1")
        assert b.legal_moves() == [] and not b.in_check()
        assert b.is_stalemate() and not b.is_checkmate()

    def test_checkmate(self):
        b = Board.initial()
        for san in ("f3", "e5", "g4", "Qh4#"):
            b, _ = apply_san(b, san)
        assert b.is_checkmate()

    def test_fen_roundtrip(self):
        fen = "r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 0 1"
        assert Board.from_fen(fen).fen() == fen

    def test_push_illegal(self):
        with pytest.raises(IllegalMoveError):
            Board.initial().push(Move(square("e2"), square("e5")))

    def test_en_passant_and_promotion(self):
        b = Board.from_fen("8/1P6/8/3pP3/8/8/8/k1K5 w - d6 0 1")
        sans = {b.san(m) for m in b.legal_moves()}
        assert {"exd6", "b8=Q", "b8=N"} <= sans
        after, origin = apply_san(b, "exd6")
        assert origin == square("e5") and after.squares[square("d5")] is None


class TestSan:
    def test_e4(self):
        b, origin = apply_san(Board.initial(), "e4")
        assert origin == square("e2") and b.squares[square("e4")] == "P"
        assert b.squares[square("e2")] is None

    def test_nf3(self):
        b, origin = apply_san(Board.initial(), "Nf3")
        assert origin == square("g1") and b.squares[square("f3")] == "N"

    def test_rook_disambiguation(self):
        b = Board.from_fen("6k1/8/8/8/8/8/8/R4RK1 w - - 0 1")
        with pytest.raises(SanError):
            b.parse_san("Rd1")
        _, origin = apply_san(b, "Rad1")
        assert origin == square("a1")
        _, origin = apply_san(b, "Rfd1")
        assert origin == square("f1")
        assert b.san(b.parse_san("Rad1")) == "Rad1"

    def test_illegal(self):
        with pytest.raises(SanError):
            Board.initial().parse_san("e5")
        with pytest.raises(SanError):
            Board.initial().parse_san("Ke2")

    def test_castling_forms(self):
        b = Board.from_fen("r3k2r/8/8/8/8/8/8/R3K2R w KQkq - 0 1")
        for san in ("O-O", "0-0", "O-O-O"):
            assert b.is_castle(b.parse_san(san))
        assert b.san(b.parse_san("O-O")) == "O-O"

    def test_san_generation_roundtrip(self):
        b = Board.initial()
        for san in ("e4", "d5", "exd5", "Qxd5", "Nc3", "Qa5", "d4", "c6", "Nf3", "Bg4"):
            mv = b.parse_san(san)
            assert b.san(mv) == san
            b = b.push(mv)


class TestPgn:
    def test_simple(self):
        (g,) = parse_pgn("1. e4 e5 1-0")
        assert g.moves == ["e4", "e5"] and g.result == "1-0" and g.ok

    def test_comments_and_nags(self):
        (g,) = parse_pgn("1. e4 {best} $1 e5 ; rest of line\n2. Nf3!? *")
        assert g.moves == ["e4", "e5", "Nf3"]

    def test_variations_skipped(self):
        (g,) = parse_pgn("1. e4 (1. d4 d5 (1... Nf6)) 1... e5 2. Nf3 1/2-1/2")
        assert g.moves == ["e4", "e5", "Nf3"]

    def test_glued_move_numbers_and_tags(self):
        text = '[Event "x"]\n[White "A \\"B\\""]\n\n1.e4 e5 2.Nf3 0-1\n'
        (g,) = parse_pgn(text)
        assert g.moves == ["e4", "e5", "Nf3"] and g.tags["White"] == 'A "B"'

    def test_malformed_game_does_not_stop_parser(self):
        text = "1. e4 e5 1-0\n\n1. e4 Zz9 1-0\n\n1. d4 d5 0-1\n"
        games = parse_pgn(text)
        assert [g.ok for g in games] == [True, False, True]
        assert games[1].error

    def test_null_move_game_discarded(self):
        games = read_pgn(DATA / "anastasian-lewis.pgn")
        stats = {}
        assert list(iter_examples(games, stats=stats)) == []
        assert stats["discarded"] == 1 and stats["diagnostics"]

    def test_format_roundtrip(self):
        sans, result = play_game(3, max_plies=40)
        text = format_game({"Event": "t", "Result": result}, sans, result)
        (g,) = parse_pgn(text)
        assert g.moves == sans and g.result == result

    @pytest.mark.parametrize("path", REAL, ids=lambda p: p.stem)
    def test_real_games_parse_is_total(self, path):
        games = read_pgn(path)
        stats = {}
        list(iter_examples(games, stats=stats))
        assert stats["parsed"] + stats["discarded"] == stats["games"] == len(games)

    def test_real_games_replay_legal(self):
        games = read_pgn(DATA / "kasparov-deep-blue-1997.pgn")
        assert len(games) == 6
        for g in games:
            res = replay(g, max_ply=10_000)
            assert res.error is None and res.plies == len(g.moves)
            assert result_consistent(g, res.final)

    def test_mate_result_consistency(self):
        (g,) = read_pgn(DATA / "molinari-bordais-1979.pgn")
        res = replay(g)
        assert res.final.is_checkmate() and result_consistent(g, res.final)
        g.result = "1-0"
        assert not result_consistent(g, res.final)


class TestMpp:
    def test_first_example(self):
        (g,) = parse_pgn("1. e4 e5 2. Nf3 Nc6 3. Bc4 *")
        ex = extract_examples(g)
        assert ex[0].label == HOME_SLOTS[square("e2")] == 12
        assert ex[1].label == HOME_SLOTS[square("e7")] == 28
        assert ex[2].label == 7 and ex[3].label == 22
        assert (ex[0].slots[0] == (6, 4, 0)).all()       # white king on e1
        assert (ex[0].slots[16] == (12, 4, 7)).all()     # black king on e8

    def test_castling_labels_king_and_moves_rook(self):
        (g,) = parse_pgn("1. e4 e5 2. Nf3 Nc6 3. Bc4 Bc5 4. O-O Nf6 *")
        ex = extract_examples(g)
        assert ex[6].label == 0
        after = ex[7].slots
        assert tuple(after[0, 1:]) == (6, 0) and tuple(after[3, 1:]) == (5, 0)

    def test_capture_empties_slot_and_promotion_keeps_slot(self):
        (g,) = parse_pgn("1. e4 d5 2. exd5 c6 3. dxc6 Nf6 4. cxb7 Nbd7 5. bxa8=Q *")
        ex = extract_examples(g)
        assert ex[3].slots[27, 0] == 0 and ex[3].mask.sum() == 31
        final = replay(g)
        assert final.error is None
        # follow one more step to see the promoted piece in the pawn's slot
        (g2,) = parse_pgn("1. e4 d5 2. exd5 c6 3. dxc6 Nf6 4. cxb7 Nbd7 5. bxa8=Q e6 *")
        last = extract_examples(g2)[-1].slots
        assert tuple(last[12]) == (5, 0, 7)
        assert last[18, 0] == 0                           # the a8 rook is gone

    def test_label_invariants_on_real_games(self):
        games = read_pgn(DATA / "kasparov-deep-blue-1997.pgn")
        for g in games:
            for k, e in enumerate(extract_examples(g)):
                assert e.slots[e.label, 0] != 0
                white_to_move = k % 2 == 0
                assert (e.slots[e.label, 0] <= 6) == white_to_move

    def test_cap_at_100(self):
        sans, _ = play_game(2, max_plies=160)
        assert len(sans) > 100
        (g,) = parse_pgn(format_game({}, sans, "*"))
        ex = extract_examples(g)
        assert len(ex) == 100 and ex[-1].ply == 99
        assert len(extract_examples(g, max_ply=20)) == 20

    def test_onehot(self):
        (g,) = parse_pgn("1. e4 d5 2. exd5 Nf6 *")
        ex = extract_examples(g)
        v0 = encode_onehot(ex[0])
        assert v0.shape == (N_SLOTS * ONEHOT_WIDTH,) == (928,)
        assert v0.sum() == 32 * 3
        v2 = encode_onehot(ex[3]).reshape(32, 29)
        empty = v2[27]
        assert empty.sum() == 1 and empty[12] == 1
        feats, mask, labels, games = stack_examples(ex)
        assert feats.shape == (4, 32, 29) and mask[3].sum() == 31
        np.testing.assert_array_equal(feats[0].reshape(-1), v0)

    def test_example_file_roundtrip(self, tmp_path):
        games = read_pgn(DATA / "molinari-bordais-1979.pgn")
        ex = list(iter_examples(games))
        path = tmp_path / "mpp.ndjson"
        assert write_examples(ex, path) == 10
        back = read_examples(path)
        assert [e.label for e in back] == [e.label for e in ex]
        np.testing.assert_array_equal(back[4].slots, ex[4].slots)

    def test_rand_baseline(self):
        mask = np.zeros((2, 32), bool)
        mask[0, :4] = True
        mask[1, :2] = True
        assert rand_expected_accuracy(mask) == pytest.approx((0.25 + 0.5) / 2)
        pick = rand_predict(mask, seed=0)
        assert (pick.sum(axis=1) == 1).all() and not pick[~mask].any()

    def test_split_games(self):
        tr, te = split_games(100, 10, seed=3)
        assert len(te) == 10 and not set(tr) & set(te) and len(tr) + len(te) == 100
        assert (split_games(100, 10, seed=3)[1] == te).all()

    def test_example_from_json_roundtrip(self):
        e = MppExample(np.arange(96).reshape(32, 3) % 8, 5, game=2, ply=7)
        back = MppExample.from_json(e.to_json())
        assert back.label == 5 and back.game == 2 and back.ply == 7
        np.testing.assert_array_equal(back.slots, e.slots)


def test_selfplay_deterministic():
    assert play_game(7, max_plies=30) == play_game(7, max_plies=30)
