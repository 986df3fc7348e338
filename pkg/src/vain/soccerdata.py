"""Player-tracking ingestion and multi-horizon position prediction.

Input is the SVPP (ZXY sensor) CSV layout, one row per player sample::

    timestamp, tag_id, x_pos, y_pos, heading, direction, energy, speed, total_distance

with an optional header row.  Positions are field metres, heading radians,
speed m/s.  The 20 Hz streams are put on a shared 2 Hz clock, and each
example holds every player present at time T together with their positions
at T+0.5 s, ..., T+4.0 s.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

COLUMNS = ("timestamp", "tag_id", "x_pos", "y_pos", "heading", "direction", "energy", "speed",
           "total_distance")
FIELD = (105.0, 68.0)
HORIZONS = tuple(0.5 * k for k in range(1, 9))
FRAME_DT = 0.5
JUMP_LIMIT = 12.0
_EPOCH = datetime(1970, 1, 1)

# paper split name -> SVPP file stem
SPLITS = {
    "1103a": "2013-11-03_tromso_stromsgodset_first",
    "1103b": "2013-11-03_tromso_stromsgodset_second",
    "1107a": "2013-11-07_tromso_anzhi_first",
    "1107b": "2013-11-07_tromso_anzhi_second",
}
EXCLUDED = ("1107b",)


class LayoutError(ValueError):
    """The file does not look like the SVPP column layout."""


@dataclass
class PlayerSample:
    timestamp: float
    player_id: int
    x: float
    y: float
    heading: float
    speed: float
    direction: float = 0.0
    energy: float = 0.0
    total_distance: float = 0.0


@dataclass
class Streams:
    """Samples keyed by player id, each list sorted by time."""

    players: dict = field(default_factory=dict)
    rows: int = 0
    skipped: int = 0
    label: str = ""

    @property
    def parsed(self) -> int:
        return sum(len(v) for v in self.players.values())


def parse_timestamp(text: str) -> float:
    text = text.strip().strip("'\"")
    try:
        return float(text)
    except ValueError:
        return (datetime.fromisoformat(text) - _EPOCH).total_seconds()


def format_timestamp(t: float) -> str:
    return (_EPOCH + timedelta(seconds=t)).strftime("%Y-%m-%d %H:%M:%S.%f")


def _looks_like_header(row: Sequence[str]) -> bool:
    return any(c.strip().strip("'\"").lower() in COLUMNS for c in row)


def load_svpp(paths: Iterable[str | Path] | str | Path, label: str = "") -> Streams:
    """Parse SVPP CSV files into per-player streams; malformed rows are counted and skipped."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    out = Streams(label=label)
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        rows = [r for r in rows if any(c.strip() for c in r)]
        if not rows:
            continue
        index = {name: k for k, name in enumerate(COLUMNS)}
        if _looks_like_header(rows[0]):
            names = [c.strip().strip("'\"").lower() for c in rows[0]]
            missing = [c for c in ("timestamp", "tag_id", "x_pos", "y_pos") if c not in names]
            if missing:
                raise LayoutError(f"{path}: missing columns {missing}")
            index = {name: names.index(name) for name in COLUMNS if name in names}
            rows = rows[1:]
        elif len(rows[0]) != len(COLUMNS):
            raise LayoutError(f"{path}: expected {len(COLUMNS)} columns, got {len(rows[0])}")

        def num(row, key, default=0.0):
            return float(row[index[key]]) if key in index else default

        for row in rows:
            out.rows += 1
            try:
                s = PlayerSample(parse_timestamp(row[index["timestamp"]]), int(float(row[index["tag_id"]])),
                                 num(row, "x_pos"), num(row, "y_pos"), num(row, "heading"),
                                 num(row, "speed"), num(row, "direction"), num(row, "energy"),
                                 num(row, "total_distance"))
                if not all(map(math.isfinite, (s.timestamp, s.x, s.y, s.heading, s.speed))):
                    raise ValueError("non-finite value")
            except (ValueError, IndexError):
                out.skipped += 1
                continue
            out.players.setdefault(s.player_id, []).append(s)
    for samples in out.players.values():
        samples.sort(key=lambda s: s.timestamp)
    return out


def write_svpp(path: str | Path, samples: Iterable[PlayerSample], header: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(COLUMNS)
        for s in samples:
            w.writerow([format_timestamp(s.timestamp), s.player_id, repr(s.x), repr(s.y),
                        repr(s.heading), repr(s.direction), repr(s.energy), repr(s.speed),
                        repr(s.total_distance)])


@dataclass
class FrameSet:
    """Players on a shared clock.  ``present[k, p]`` marks a sample at ``times[k]``."""

    times: np.ndarray          # (K,)
    player_ids: np.ndarray     # (P,)
    positions: np.ndarray      # (K, P, 2)
    heading: np.ndarray        # (K, P)
    speed: np.ndarray          # (K, P)
    present: np.ndarray        # (K, P) bool
    valid: np.ndarray          # (K,) bool, False for dropped frames
    label: str = ""
    direction: Optional[np.ndarray] = None   # (K, P) direction of travel, radians

    def __len__(self) -> int:
        return len(self.times)


def resample(streams: Streams, period: float = FRAME_DT, rate_in: float = 20.0) -> FrameSet:
    """Put every player on a common clock with the given period (default 2 Hz)."""
    ids = np.array(sorted(streams.players))
    if ids.size == 0:
        return FrameSet(np.zeros(0), ids, np.zeros((0, 0, 2)), np.zeros((0, 0)), np.zeros((0, 0)),
                        np.zeros((0, 0), bool), np.zeros(0, bool), streams.label, np.zeros((0, 0)))
    t0 = min(s[0].timestamp for s in streams.players.values())
    t1 = max(s[-1].timestamp for s in streams.players.values())
    tol = 0.5 / rate_in
    n = int(math.floor((t1 - t0) / period + 1e-9)) + 1
    times = t0 + period * np.arange(n)
    pos = np.zeros((n, len(ids), 2))
    head = np.zeros((n, len(ids)))
    spd = np.zeros((n, len(ids)))
    dirn = np.zeros((n, len(ids)))
    present = np.zeros((n, len(ids)), bool)
    for p, pid in enumerate(ids):
        samples = streams.players[pid]
        ts = np.array([s.timestamp for s in samples])
        k = np.rint((ts - t0) / period).astype(int)
        on_grid = np.abs(ts - (t0 + period * k)) <= tol
        for j in np.nonzero(on_grid)[0]:
            if present[k[j], p]:
                continue
            s = samples[j]
            pos[k[j], p] = (s.x, s.y)
            head[k[j], p] = s.heading
            spd[k[j], p] = s.speed
            dirn[k[j], p] = s.direction
            present[k[j], p] = True
    return FrameSet(times, ids, pos, head, spd, present, present.any(axis=1), streams.label, dirn)


def resample_2hz(streams: Streams) -> FrameSet:
    return resample(streams, FRAME_DT)


def filter_anomalies(frames: FrameSet, jump_limit: float = JUMP_LIMIT,
                     exclude: Sequence[str] = EXCLUDED) -> FrameSet:
    """Invalidate excluded match halves and frames after a > jump_limit metre jump."""
    valid = frames.valid.copy()
    if frames.label in exclude:
        valid[:] = False
    if len(frames) > 1:
        both = frames.present[1:] & frames.present[:-1]
        step = np.linalg.norm(frames.positions[1:] - frames.positions[:-1], axis=-1)
        jump = (np.where(both, step, 0.0) > jump_limit).any(axis=1)
        valid[1:] &= ~jump
    return FrameSet(frames.times, frames.player_ids, frames.positions, frames.heading,
                    frames.speed, frames.present, valid, frames.label, frames.direction)


@dataclass
class SoccerExamples:
    """Padded per-player examples.

    ``raw`` columns: x, y, vx, vy, cos(heading), sin(heading), speed.
    ``targets``: absolute positions at the 8 horizons, flattened (x1, y1, ..., x8, y8).
    """

    raw: np.ndarray          # (S, P, 7)
    mask: np.ndarray         # (S, P)
    targets: np.ndarray      # (S, P, 16)
    times: np.ndarray        # (S,)
    player_ids: np.ndarray   # (P,)
    label: str = ""

    def __len__(self) -> int:
        return len(self.raw)

    @property
    def positions(self) -> np.ndarray:
        return self.raw[..., :2]

    @property
    def velocities(self) -> np.ndarray:
        return self.raw[..., 2:4]

    def displacement_targets(self) -> np.ndarray:
        return self.targets - np.tile(self.positions, len(HORIZONS))

    def features(self) -> np.ndarray:
        """Learning features: centred/scaled position, velocity, heading, speed."""
        f = self.raw.copy()
        f[..., 0] = f[..., 0] / FIELD[0] - 0.5
        f[..., 1] = f[..., 1] / FIELD[1] - 0.5
        f[..., 2:4] /= 5.0
        f[..., 6] /= 5.0
        return np.where(self.mask[..., None], f, 0.0)

    def subset(self, idx) -> "SoccerExamples":
        idx = np.asarray(idx)
        return SoccerExamples(self.raw[idx], self.mask[idx], self.targets[idx], self.times[idx],
                              self.player_ids, self.label)


def _complete(frames: FrameSet, regular: np.ndarray, lo: int, hi: int, who: np.ndarray) -> bool:
    """Frames lo..hi (inclusive) are valid, 0.5 s apart and hold exactly ``who``."""
    if lo < 0 or hi >= len(frames):
        return False
    return (frames.valid[lo:hi + 1].all() and regular[lo:hi].all()
            and (frames.present[lo:hi + 1] == who).all())


def build_examples(frames: FrameSet, horizons: int = len(HORIZONS)) -> SoccerExamples:
    """Examples at every T whose next ``horizons`` frames carry the same players.

    Velocity is the backward difference to the previous frame; when that
    frame is missing or incomplete the sensor's speed along its direction of
    travel is used instead.
    """
    K, P = frames.present.shape if frames.present.size else (len(frames), 0)
    raws, masks, targets, times = [], [], [], []
    step = np.diff(frames.times)
    regular = np.abs(step - FRAME_DT) < 1e-6 if len(step) else np.zeros(0, bool)
    direction = frames.direction if frames.direction is not None else frames.heading
    for k in range(K - horizons):
        who = frames.present[k]
        if not who.any() or not _complete(frames, regular, k, k + horizons, who):
            continue
        pos = frames.positions[k]
        if _complete(frames, regular, k - 1, k, who):
            vel = (pos - frames.positions[k - 1]) / FRAME_DT
        else:
            d = direction[k]
            vel = frames.speed[k][:, None] * np.stack([np.cos(d), np.sin(d)], axis=1)
        h = frames.heading[k]
        raw = np.concatenate([pos, vel, np.cos(h)[:, None], np.sin(h)[:, None],
                              frames.speed[k][:, None]], axis=1)
        tgt = np.concatenate([frames.positions[k + j] for j in range(1, horizons + 1)], axis=1)
        raws.append(np.where(who[:, None], raw, 0.0))
        masks.append(who)
        targets.append(np.where(who[:, None], tgt, 0.0))
        times.append(frames.times[k])
    if not raws:
        return SoccerExamples(np.zeros((0, P, 7)), np.zeros((0, P), bool),
                              np.zeros((0, P, 2 * horizons)), np.zeros(0), frames.player_ids,
                              frames.label)
    return SoccerExamples(np.array(raws), np.array(masks), np.array(targets), np.array(times),
                          frames.player_ids, frames.label)


def load_split(paths, label: str, jump_limit: float = JUMP_LIMIT,
               exclude: Sequence[str] = EXCLUDED) -> SoccerExamples:
    frames = filter_anomalies(resample_2hz(load_svpp(paths, label)), jump_limit, exclude)
    return build_examples(frames)


def concat(parts: Sequence[SoccerExamples]) -> SoccerExamples:
    """Stack example sets, padding the player axis to the widest set."""
    P = max(p.raw.shape[1] for p in parts)

    def pad(a):
        w = [(0, 0)] * a.ndim
        w[1] = (0, P - a.shape[1])
        return np.pad(a, w)

    return SoccerExamples(np.concatenate([pad(p.raw) for p in parts]),
                          np.concatenate([pad(p.mask) for p in parts]),
                          np.concatenate([pad(p.targets) for p in parts]),
                          np.concatenate([p.times for p in parts]),
                          np.arange(P), "+".join(p.label for p in parts))


# baselines --------------------------------------------------------------------

BASELINES = ("STATIC", "PALV", "PALAF", "PAD")


@dataclass
class LinearDisplacement:
    """Least-squares map from per-player features (plus bias) to the 16 displacements."""

    coef: Optional[np.ndarray] = None

    def fit(self, ex: SoccerExamples) -> "LinearDisplacement":
        X = _design(ex.features()[ex.mask])
        Y = ex.displacement_targets()[ex.mask]
        self.coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
        return self

    def predict(self, ex: SoccerExamples) -> np.ndarray:
        if self.coef is None:
            raise RuntimeError("PALAF model is not fitted")
        out = np.zeros(ex.targets.shape)
        out[ex.mask] = _design(ex.features()[ex.mask]) @ self.coef
        return out


def _design(f: np.ndarray) -> np.ndarray:
    return np.concatenate([f, np.ones((len(f), 1))], axis=1)


def baseline_predict(ex: SoccerExamples, kind: str, fitted=None) -> np.ndarray:
    """Absolute positions (S, P, 16) at each horizon."""
    kind = kind.upper()
    here = np.tile(ex.positions, len(HORIZONS))
    if kind == "STATIC":
        disp = np.zeros_like(here)
    elif kind == "PALV":
        disp = np.concatenate([ex.velocities * h for h in HORIZONS], axis=-1)
    elif kind in ("PALAF", "PAD"):
        if fitted is None:
            raise RuntimeError(f"{kind} needs a fitted model")
        disp = fitted.predict(ex)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return np.where(ex.mask[..., None], here + disp, 0.0)


def horizon_errors(pred: np.ndarray, ex: SoccerExamples) -> np.ndarray:
    """Mean Euclidean error (metres) per horizon over active players."""
    p = pred[ex.mask].reshape(-1, len(HORIZONS), 2)
    t = ex.targets[ex.mask].reshape(-1, len(HORIZONS), 2)
    return np.linalg.norm(p - t, axis=-1).mean(axis=0)


def leave_one_out(names: Sequence[str]) -> list[tuple[list[str], str]]:
    return [([n for n in names if n != held], held) for held in names]


# synthetic data -----------------------------------------------------------------


def synthetic_samples(n_players: int = 10, seconds: float = 60.0, rate: float = 20.0,
                      seed: int = 0, mode: str = "constant", t0: float = 1383501600.0
                      ) -> list[PlayerSample]:
    """20 Hz samples for tests.

    ``constant``: straight lines at constant velocity.  ``team``: players
    drift toward a shared moving point plus a personal offset, which makes
    neighbours' motion informative.
    """
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate))
    ts = [(_EPOCH + timedelta(seconds=t0) + timedelta(microseconds=round(k * 1e6 / rate)) - _EPOCH
           ).total_seconds() for k in range(n)]
    pos = rng.uniform((20, 10), (85, 58), size=(n_players, 2))
    if mode == "constant":
        vel = rng.uniform(-3, 3, size=(n_players, 2))
        track = pos[None] + vel[None] * (np.arange(n) / rate)[:, None, None]
        vels = np.broadcast_to(vel, track.shape)
    elif mode == "team":
        offsets = rng.normal(0, 10, size=(n_players, 2))
        focus = np.array([52.5, 34.0])
        focus_v = rng.normal(0, 2, size=2)
        track = np.zeros((n, n_players, 2))
        vels = np.zeros_like(track)
        v = np.zeros((n_players, 2))
        for k in range(n):
            if k % int(rate * 4) == 0:
                focus_v = rng.normal(0, 3, size=2)
            focus = np.clip(focus + focus_v / rate, (15, 10), (90, 58))
            goal = focus + offsets
            v = 0.9 * v + 0.1 * np.clip(goal - pos, -6, 6)
            pos = pos + v / rate
            track[k], vels[k] = pos, v
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = []
    for k, t in enumerate(ts):
        for p in range(n_players):
            vx, vy = vels[k, p]
            theta = float(math.atan2(vy, vx))
            out.append(PlayerSample(t, 100 + p, float(track[k, p, 0]), float(track[k, p, 1]),
                                    theta, float(math.hypot(vx, vy)), direction=theta))
    return out


def write_examples(ex: SoccerExamples, path: str | Path) -> int:
    """Newline-delimited JSON: header line, then one record per example."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "vain-soccer", "version": 1, "label": ex.label,
                             "horizons": list(HORIZONS)}) + "\n")
        for k in range(len(ex)):
            players = []
            for p in np.nonzero(ex.mask[k])[0]:
                x, y, vx, vy, c, s, spd = map(float, ex.raw[k, p])
                players.append({"id": int(ex.player_ids[p]), "x": x, "y": y, "vx": vx, "vy": vy,
                                "heading": math.atan2(s, c), "speed": spd,
                                "targets": ex.targets[k, p].reshape(-1, 2).tolist()})
            fh.write(json.dumps({"t": float(ex.times[k]), "players": players}) + "\n")
    return len(ex)
