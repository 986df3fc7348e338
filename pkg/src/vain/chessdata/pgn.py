"""PGN export-format reader.

Comments, NAGs and move numbers are dropped and variations are skipped.
A game that cannot be tokenized is returned with ``error`` set so callers
can count it as discarded instead of aborting the whole file.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional

RESULTS = ("1-0", "0-1", "1/2-1/2", "*")

_TAG = re.compile(r'^\[\s*(\w+)\s+"((?:[^"\\]|\\.)*)"\s*\]\s*$')
_TOKEN = re.compile(
    r"""\{[^}]*\}?            # brace comment (possibly unterminated)
      | ;[^\n]*               # rest-of-line comment
      | \$\d+                 # NAG
      | \(|\)                 # variation delimiters
      | 1-0|0-1|1/2-1/2|\*    # results
      | \d+\.(?:\.\.)?        # move number
      | [^\s(){};$]+          # SAN-ish token
    """, re.VERBOSE)
_MOVE_NUMBER_PREFIX = re.compile(r"^\d+\.+")
_SAN_TOKEN = re.compile(r"^(?:[NBRQK]?[a-h]?[1-8]?x?[a-h][1-8](?:=?[NBRQ])?|O-O(?:-O)?|0-0(?:-0)?)[+#]?[!?]*$")


@dataclass
class PgnGame:
    tags: dict = field(default_factory=dict)
    moves: list = field(default_factory=list)
    result: str = "*"
    error: Optional[str] = None
    index: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None


def _split_games(text: str) -> Iterator[tuple[list[str], str]]:
    tags: list[str] = []
    body: list[str] = []
    for raw in text.splitlines():
        line = raw.strip().lstrip("﻿")
        if line.startswith("%"):
            continue
        if line.startswith("["):
            if body:
                yield tags, "\n".join(body)
                tags, body = [], []
            tags.append(line)
        elif line:
            body.append(line)
            # a result token closes the game even when the next one has no tags
            if line.split()[-1] in RESULTS:
                yield tags, "\n".join(body)
                tags, body = [], []
    if tags or body:
        yield tags, "\n".join(body)


def _parse_movetext(body: str) -> tuple[list[str], str]:
    moves: list[str] = []
    result = None
    depth = 0
    pos = 0
    for m in _TOKEN.finditer(body):
        gap = body[pos:m.start()]
        if gap.strip():
            raise ValueError(f"unexpected text {gap.strip()!r}")
        pos = m.end()
        tok = m.group(0)
        if tok.startswith("{"):
            if not tok.endswith("}"):
                raise ValueError("unterminated comment")
            continue
        if tok.startswith(";") or tok.startswith("$"):
            continue
        if tok == "(":
            depth += 1
            continue
        if tok == ")":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced ')'")
            continue
        if depth:
            continue
        if tok in RESULTS:
            if result is not None:
                raise ValueError("text after result")
            result = tok
            continue
        if result is not None:
            raise ValueError("text after result")
        tok = _MOVE_NUMBER_PREFIX.sub("", tok).rstrip("!?")
        if not tok:
            continue
        if not _SAN_TOKEN.match(tok):
            raise ValueError(f"bad move token {tok!r}")
        moves.append(tok)
    if body[pos:].strip():
        raise ValueError(f"unexpected text {body[pos:].strip()!r}")
    if depth:
        raise ValueError("unbalanced '('")
    return moves, result or "*"


def parse_pgn(text: str) -> list[PgnGame]:
    """Every game in ``text``; malformed ones carry an ``error`` message."""
    games = []
    for k, (tag_lines, body) in enumerate(_split_games(text)):
        game = PgnGame(index=k)
        try:
            for line in tag_lines:
                m = _TAG.match(line)
                if not m:
                    raise ValueError(f"bad tag line {line!r}")
                game.tags[m.group(1)] = m.group(2).replace('\\"', '"')
            game.moves, game.result = _parse_movetext(body)
            tag_result = game.tags.get("Result")
            if tag_result in RESULTS and game.result == "*" and not body.strip().endswith("*"):
                game.result = tag_result
        except ValueError as exc:
            game.error = str(exc)
        games.append(game)
    return games


def read_pgn(path) -> list[PgnGame]:
    with open(path, encoding="utf-8-sig", errors="replace") as fh:
        return parse_pgn(fh.read())


def format_game(tags: dict, moves: list[str], result: str, width: int = 79) -> str:
    head = "".join(f'[{k} "{v}"]\n' for k, v in tags.items())
    words = []
    for i, san in enumerate(moves):
        words.append(f"{i // 2 + 1}. {san}" if i % 2 == 0 else san)
    words.append(result)
    lines, line = [], ""
    for w in words:
        if line and len(line) + 1 + len(w) > width:
            lines.append(line)
            line = w
        else:
            line = f"{line} {w}" if line else w
    lines.append(line)
    return head + "\n" + "\n".join(lines) + "\n"
