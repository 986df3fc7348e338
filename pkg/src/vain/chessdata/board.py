"""Chess position, legal move generation and SAN.

Squares are 0..63 with a1 = 0, b1 = 1, ..., h8 = 63 (file = sq % 8,
rank = sq // 8).  Pieces are FEN letters, uppercase for White.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Optional

START_FEN = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"
FILES = "abcdefgh"

KNIGHT_STEPS = ((1, 2), (2, 1), (2, -1), (1, -2), (-1, -2), (-2, -1), (-2, 1), (-1, 2))
KING_STEPS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))
ROOK_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))
BISHOP_DIRS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


class IllegalMoveError(ValueError):
    pass


class SanError(ValueError):
    pass


def square(name: str) -> int:
    return FILES.index(name[0]) + 8 * (int(name[1]) - 1)


def square_name(sq: int) -> str:
    return FILES[sq % 8] + str(sq // 8 + 1)


def _build_rays():
    def walk(sq, steps, slide):
        out = []
        f0, r0 = sq % 8, sq // 8
        for df, dr in steps:
            ray = []
            f, r = f0 + df, r0 + dr
            while 0 <= f < 8 and 0 <= r < 8:
                ray.append(f + 8 * r)
                if not slide:
                    break
                f, r = f + df, r + dr
            if ray:
                out.append(tuple(ray))
        return tuple(out)

    knight = tuple(tuple(r[0] for r in walk(s, KNIGHT_STEPS, False)) for s in range(64))
    king = tuple(tuple(r[0] for r in walk(s, KING_STEPS, False)) for s in range(64))
    rook = tuple(walk(s, ROOK_DIRS, True) for s in range(64))
    bishop = tuple(walk(s, BISHOP_DIRS, True) for s in range(64))
    return knight, king, rook, bishop


KNIGHT, KING, ROOK_RAYS, BISHOP_RAYS = _build_rays()


class Move(NamedTuple):
    src: int
    dst: int
    promotion: Optional[str] = None   # lowercase piece letter

    def uci(self) -> str:
        return square_name(self.src) + square_name(self.dst) + (self.promotion or "")


def color_of(piece: str) -> str:
    return "w" if piece.isupper() else "b"


@dataclass
class Board:
    squares: list
    turn: str = "w"
    castling: str = "KQkq"
    ep: Optional[int] = None
    halfmove: int = 0
    fullmove: int = 1

    # construction -------------------------------------------------------
    @classmethod
    def initial(cls) -> "Board":
        return cls.from_fen(START_FEN)

    @classmethod
    def from_fen(cls, fen: str) -> "Board":
        parts = fen.split()
        if len(parts) < 4:
            raise ValueError(f"bad FEN: {fen!r}")
        rows = parts[0].split("/")
        if len(rows) != 8:
            raise ValueError(f"bad FEN board: {parts[0]!r}")
        squares: list = [None] * 64
        for i, row in enumerate(rows):
            rank = 7 - i
            f = 0
            for ch in row:
                if ch.isdigit():
                    f += int(ch)
                elif ch in "pnbrqkPNBRQK":
                    if f > 7:
                        raise ValueError(f"bad FEN row: {row!r}")
                    squares[f + 8 * rank] = ch
                    f += 1
                else:
                    raise ValueError(f"bad FEN piece {ch!r}")
            if f != 8:
                raise ValueError(f"bad FEN row: {row!r}")
        castling = "" if parts[2] == "-" else parts[2]
        ep = None if parts[3] == "-" else square(parts[3])
        half = int(parts[4]) if len(parts) > 4 else 0
        full = int(parts[5]) if len(parts) > 5 else 1
        board = cls(squares, parts[1], castling, ep, half, full)
        for color in "wb":
            if sum(1 for p in squares if p == ("K" if color == "w" else "k")) != 1:
                raise ValueError("each side needs exactly one king")
        return board

    def fen(self) -> str:
        rows = []
        for rank in range(7, -1, -1):
            row, empty = "", 0
            for f in range(8):
                p = self.squares[f + 8 * rank]
                if p is None:
                    empty += 1
                else:
                    row += (str(empty) if empty else "") + p
                    empty = 0
            rows.append(row + (str(empty) if empty else ""))
        ep = square_name(self.ep) if self.ep is not None else "-"
        return f"{'/'.join(rows)} {self.turn} {self.castling or '-'} {ep} {self.halfmove} {self.fullmove}"

    def copy(self) -> "Board":
        return Board(self.squares[:], self.turn, self.castling, self.ep, self.halfmove, self.fullmove)

    @property
    def ply(self) -> int:
        return 2 * (self.fullmove - 1) + (self.turn == "b")

    def king_square(self, color: str) -> int:
        return self.squares.index("K" if color == "w" else "k")

    # attacks ------------------------------------------------------------
    def is_attacked(self, sq: int, by: str) -> bool:
        s = self.squares
        white = by == "w"
        pawn, knight, king = ("P", "N", "K") if white else ("p", "n", "k")
        rq = ("R", "Q") if white else ("r", "q")
        bq = ("B", "Q") if white else ("b", "q")
        f, r = sq % 8, sq // 8
        pr = r - 1 if white else r + 1
        if 0 <= pr < 8:
            for pf in (f - 1, f + 1):
                if 0 <= pf < 8 and s[pf + 8 * pr] == pawn:
                    return True
        for t in KNIGHT[sq]:
            if s[t] == knight:
                return True
        for t in KING[sq]:
            if s[t] == king:
                return True
        for ray in ROOK_RAYS[sq]:
            for t in ray:
                if s[t] is not None:
                    if s[t] in rq:
                        return True
                    break
        for ray in BISHOP_RAYS[sq]:
            for t in ray:
                if s[t] is not None:
                    if s[t] in bq:
                        return True
                    break
        return False

    def in_check(self, color: str | None = None) -> bool:
        color = color or self.turn
        return self.is_attacked(self.king_square(color), "b" if color == "w" else "w")

    # move generation ----------------------------------------------------
    def pseudo_moves(self) -> list[Move]:
        s = self.squares
        us = self.turn
        them = "b" if us == "w" else "w"
        own = str.isupper if us == "w" else str.islower
        moves: list[Move] = []
        for sq, p in enumerate(s):
            if p is None or not own(p):
                continue
            kind = p.lower()
            if kind == "p":
                self._pawn_moves(sq, us, moves)
            elif kind == "n" or kind == "k":
                for t in (KNIGHT if kind == "n" else KING)[sq]:
                    q = s[t]
                    if q is None or not own(q):
                        moves.append(Move(sq, t))
            else:
                rays = ()
                if kind in "rq":
                    rays += ROOK_RAYS[sq]
                if kind in "bq":
                    rays += BISHOP_RAYS[sq]
                for ray in rays:
                    for t in ray:
                        q = s[t]
                        if q is None:
                            moves.append(Move(sq, t))
                        else:
                            if not own(q):
                                moves.append(Move(sq, t))
                            break
        self._castle_moves(us, them, moves)
        return moves

    def _pawn_moves(self, sq: int, us: str, moves: list) -> None:
        s = self.squares
        f, r = sq % 8, sq // 8
        step, start, last = (8, 1, 7) if us == "w" else (-8, 6, 0)
        enemy = str.islower if us == "w" else str.isupper

        def add(t):
            if t // 8 == last:
                for promo in "qrbn":
                    moves.append(Move(sq, t, promo))
            else:
                moves.append(Move(sq, t))

        t = sq + step
        if 0 <= t < 64 and s[t] is None:
            add(t)
            if r == start and s[t + step] is None:
                moves.append(Move(sq, t + step))
        for df in (-1, 1):
            if 0 <= f + df < 8:
                t = sq + step + df
                if 0 <= t < 64 and ((s[t] is not None and enemy(s[t])) or t == self.ep):
                    add(t)

    def _castle_moves(self, us: str, them: str, moves: list) -> None:
        s = self.squares
        if us == "w":
            k, rights = 4, (("K", 7, (5, 6), (5, 6)), ("Q", 0, (1, 2, 3), (3, 2)))
            king, rook = "K", "R"
        else:
            k, rights = 60, (("k", 63, (61, 62), (61, 62)), ("q", 56, (57, 58, 59), (59, 58)))
            king, rook = "k", "r"
        if s[k] != king:
            return
        for flag, rook_sq, empty, safe in rights:
            if flag not in self.castling or s[rook_sq] != rook:
                continue
            if any(s[x] is not None for x in empty):
                continue
            if self.is_attacked(k, them) or any(self.is_attacked(x, them) for x in safe):
                continue
            moves.append(Move(k, safe[-1]))

    def is_legal_after(self, move: Move) -> bool:
        b = self.copy()
        b._apply(move)
        return not b.in_check(self.turn)

    def legal_moves(self) -> list[Move]:
        return [m for m in self.pseudo_moves() if self.is_legal_after(m)]

    def is_castle(self, move: Move) -> bool:
        p = self.squares[move.src]
        return p is not None and p.lower() == "k" and abs(move.dst - move.src) == 2

    def is_en_passant(self, move: Move) -> bool:
        p = self.squares[move.src]
        return (p is not None and p.lower() == "p" and move.dst == self.ep
                and move.src % 8 != move.dst % 8)

    def captured_square(self, move: Move) -> Optional[int]:
        if self.is_en_passant(move):
            return move.dst - 8 if self.turn == "w" else move.dst + 8
        return move.dst if self.squares[move.dst] is not None else None

    def _apply(self, move: Move) -> None:
        s = self.squares
        p = s[move.src]
        if p is None:
            raise IllegalMoveError(f"no piece on {square_name(move.src)}")
        kind = p.lower()
        capture = self.captured_square(move)
        if capture is not None and capture != move.dst:
            s[capture] = None
        if self.is_castle(move):
            if move.dst > move.src:
                s[move.src + 1], s[move.src + 3] = s[move.src + 3], None
            else:
                s[move.src - 1], s[move.src - 4] = s[move.src - 4], None
        s[move.dst] = p
        s[move.src] = None
        if move.promotion:
            s[move.dst] = move.promotion.upper() if self.turn == "w" else move.promotion
        self.ep = None
        if kind == "p" and abs(move.dst - move.src) == 16:
            self.ep = (move.src + move.dst) // 2
        rights = self.castling
        for sq, flags in ((4, "KQ"), (60, "kq"), (0, "Q"), (7, "K"), (56, "q"), (63, "k")):
            if move.src == sq or move.dst == sq:
                rights = "".join(c for c in rights if c not in flags)
        self.castling = rights
        self.halfmove = 0 if (kind == "p" or capture is not None) else self.halfmove + 1
        if self.turn == "b":
            self.fullmove += 1
        self.turn = "b" if self.turn == "w" else "w"

    def push(self, move: Move) -> "Board":
        """Return the position after a legal move."""
        if move not in self.legal_moves():
            raise IllegalMoveError(f"illegal move {move.uci()} in {self.fen()}")
        b = self.copy()
        b._apply(move)
        return b

    def push_unchecked(self, move: Move) -> "Board":
        b = self.copy()
        b._apply(move)
        return b

    # game state -----------------------------------------------------------
    def is_checkmate(self) -> bool:
        return self.in_check() and not self.legal_moves()

    def is_stalemate(self) -> bool:
        return not self.in_check() and not self.legal_moves()

    def insufficient_material(self) -> bool:
        rest = sorted(p.lower() for p in self.squares if p is not None and p.lower() != "k")
        return rest in ([], ["b"], ["n"])

    # SAN -------------------------------------------------------------------
    def san(self, move: Move, legal: list[Move] | None = None) -> str:
        legal = self.legal_moves() if legal is None else legal
        p = self.squares[move.src]
        kind = p.lower()
        if self.is_castle(move):
            text = "O-O" if move.dst > move.src else "O-O-O"
        else:
            capture = self.captured_square(move) is not None
            if kind == "p":
                text = (FILES[move.src % 8] + "x" if capture else "") + square_name(move.dst)
                if move.promotion:
                    text += "=" + move.promotion.upper()
            else:
                rivals = [m for m in legal if m.dst == move.dst and m.src != move.src
                          and self.squares[m.src] == p]
                dis = ""
                if rivals:
                    if all(m.src % 8 != move.src % 8 for m in rivals):
                        dis = FILES[move.src % 8]
                    elif all(m.src // 8 != move.src // 8 for m in rivals):
                        dis = str(move.src // 8 + 1)
                    else:
                        dis = square_name(move.src)
                text = kind.upper() + dis + ("x" if capture else "") + square_name(move.dst)
        after = self.push_unchecked(move)
        if after.in_check():
            text += "#" if not after.legal_moves() else "+"
        return text

    def parse_san(self, san: str) -> Move:
        """Resolve a SAN token to the unique legal move it denotes."""
        token = _SAN_STRIP.sub("", san)
        legal = self.legal_moves()
        if token in ("O-O", "0-0", "O-O-O", "0-0-0"):
            long = token.count("-") == 2
            k = self.king_square(self.turn)
            for m in legal:
                if m.src == k and self.is_castle(m) and ((m.dst < m.src) == long):
                    return m
            raise SanError(f"castling {san!r} not legal in {self.fen()}")
        m = _SAN_RE.fullmatch(token)
        if not m:
            raise SanError(f"unparseable SAN {san!r}")
        piece, dfile, drank, _, dest, promo = m.groups()
        piece = (piece or "P").lower()
        dst = square(dest)
        promo = promo.lower() if promo else None
        cands = []
        for mv in legal:
            p = self.squares[mv.src]
            if mv.dst != dst or p.lower() != piece:
                continue
            if dfile and FILES[mv.src % 8] != dfile:
                continue
            if drank and str(mv.src // 8 + 1) != drank:
                continue
            if (mv.promotion or None) != promo:
                continue
            cands.append(mv)
        if len(cands) != 1:
            kind = "ambiguous" if cands else "illegal"
            raise SanError(f"{kind} SAN {san!r} in {self.fen()}")
        return cands[0]


_SAN_STRIP = re.compile(r"[+#!?]+$|e\.p\.$")
_SAN_RE = re.compile(r"([NBRQK])?([a-h])?([1-8])?(x)?([a-h][1-8])(?:=?([NBRQnbrq]))?")


def perft(board: Board, depth: int) -> int:
    if depth == 0:
        return 1
    moves = board.legal_moves()
    if depth == 1:
        return len(moves)
    return sum(perft(board.push_unchecked(m), depth - 1) for m in moves)


def apply_san(board: Board, san: str) -> tuple[Board, int]:
    """Play a SAN move; returns the new board and the origin square."""
    move = board.parse_san(san)
    return board.push_unchecked(move), move.src
