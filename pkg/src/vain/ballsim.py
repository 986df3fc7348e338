"""Equal-mass elastic balls in a square box.

One ``step`` moves every ball ballistically, reflects wall crossings, then
resolves each overlapping pair once: an approaching pair exchanges the
velocity components along the line of centres, and every overlapping pair is
pushed apart symmetrically to touching distance.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterator

import numpy as np

FORMAT = "vain-balls"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BallConfig:
    box_size: float = 10.0
    radius: float = 0.25
    n_balls: int = 8
    v0: float = 3.0
    dt: float = 0.1
    max_packing: float = 0.3

    def validate(self) -> None:
        if self.n_balls < 1:
            raise ValueError("n_balls must be >= 1")
        if self.radius <= 0 or self.box_size <= 2 * self.radius:
            raise ValueError("box must be wider than one ball")
        if self.dt <= 0 or self.v0 < 0:
            raise ValueError("dt must be > 0 and v0 >= 0")
        if self.n_balls * math.pi * self.radius ** 2 > self.max_packing * self.box_size ** 2:
            raise ValueError("packing fraction above limit; use fewer or smaller balls")


PAPER_CONFIG = BallConfig(n_balls=50)


@dataclass
class BallWorld:
    config: BallConfig
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0
    wall_hits: int = 0
    ball_hits: int = 0

    def copy(self) -> "BallWorld":
        return BallWorld(self.config, self.positions.copy(), self.velocities.copy(), self.time,
                         self.wall_hits, self.ball_hits)

    def kinetic_energy(self) -> float:
        return 0.5 * float((self.velocities ** 2).sum())

    def momentum(self) -> np.ndarray:
        return self.velocities.sum(axis=0)


def init_world(config: BallConfig = BallConfig(), seed: int | np.random.SeedSequence = 0,
               max_tries: int = 10_000) -> BallWorld:
    config.validate()
    rng = np.random.default_rng(seed)
    L, r = config.box_size, config.radius
    pos = np.zeros((config.n_balls, 2))
    for k in range(config.n_balls):
        for _ in range(max_tries):
            p = rng.uniform(r, L - r, size=2)
            if k == 0 or (np.hypot(*(pos[:k] - p).T) >= 2 * r).all():
                pos[k] = p
                break
        else:
            raise RuntimeError(f"could not place ball {k} without overlap after {max_tries} tries")
    vel = rng.uniform(-config.v0, config.v0, size=(config.n_balls, 2))
    return BallWorld(config, pos, vel)


def _reflect_walls(world: BallWorld) -> None:
    L, r = world.config.box_size, world.config.radius
    p, v = world.positions, world.velocities
    low = p < r
    high = p > L - r
    p[low] = 2 * r - p[low]
    v[low] = np.abs(v[low])
    p[high] = 2 * (L - r) - p[high]
    v[high] = -np.abs(v[high])
    world.wall_hits += int(low.sum() + high.sum())


def _resolve_pairs(world: BallWorld) -> None:
    r2 = 2 * world.config.radius
    p, v = world.positions, world.velocities
    n = len(p)
    for i in range(n - 1):
        d = p[i + 1:] - p[i]
        dist = np.hypot(d[:, 0], d[:, 1])
        for k in np.nonzero(dist < r2)[0]:
            j = i + 1 + k
            delta = p[j] - p[i]
            dist_ij = math.hypot(delta[0], delta[1])
            if dist_ij == 0.0:
                normal = np.array([1.0, 0.0])
            else:
                normal = delta / dist_ij
            closing = float(np.dot(v[j] - v[i], normal))
            if closing < 0:
                # equal masses: swap the normal components
                v[i] += closing * normal
                v[j] -= closing * normal
                world.ball_hits += 1
            push = 0.5 * (r2 - dist_ij) * normal
            p[i] -= push
            p[j] += push
    L, r = world.config.box_size, world.config.radius
    np.clip(p, r, L - r, out=p)


def step(world: BallWorld, dt: float | None = None) -> BallWorld:
    """Advance one time step; returns a new world."""
    dt = world.config.dt if dt is None else dt
    out = world.copy()
    out.positions += out.velocities * dt
    _reflect_walls(out)
    _resolve_pairs(out)
    out.time += dt
    return out


@dataclass
class BallDataset:
    """Stacked (state, next-step delta) samples.

    ``states`` and ``deltas`` are (S, n, 4) arrays with columns
    (x, y, vx, vy) and (dx, dy, dvx, dvy).
    """

    config: BallConfig
    seed: int
    states: np.ndarray
    deltas: np.ndarray
    traj: np.ndarray
    t: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    def subset(self, idx) -> "BallDataset":
        idx = np.asarray(idx)
        return BallDataset(self.config, self.seed, self.states[idx], self.deltas[idx],
                           self.traj[idx], self.t[idx], dict(self.meta))

    def features(self, position_unit: float | None = None) -> np.ndarray:
        """States scaled for learning: positions / L, velocities / v0.

        With ``position_unit`` positions are instead measured from the box
        centre in that unit (e.g. the radius), which puts contact distances
        at order one.
        """
        c = self.config
        v = c.v0 or 1.0
        if position_unit is None:
            return self.states / np.array([c.box_size, c.box_size, v, v])
        f = self.states.copy()
        f[..., :2] = (f[..., :2] - c.box_size / 2) / position_unit
        f[..., 2:] /= v
        return f


def rollout(world: BallWorld, steps: int) -> tuple[np.ndarray, np.ndarray]:
    states = np.zeros((steps, world.config.n_balls, 4))
    deltas = np.zeros_like(states)
    for t in range(steps):
        nxt = step(world)
        states[t, :, :2], states[t, :, 2:] = world.positions, world.velocities
        deltas[t, :, :2] = nxt.positions - world.positions
        deltas[t, :, 2:] = nxt.velocities - world.velocities
        world = nxt
    return states, deltas


def trajectory_seeds(seed: int, n_trajectories: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_trajectories)


def generate_dataset(config: BallConfig = BallConfig(), n_trajectories: int = 500,
                     steps_per_traj: int = 100, seed: int = 0) -> BallDataset:
    config.validate()
    states, deltas, traj, ts = [], [], [], []
    for k, ss in enumerate(trajectory_seeds(seed, n_trajectories)):
        s, d = rollout(init_world(config, ss), steps_per_traj)
        states.append(s)
        deltas.append(d)
        traj.append(np.full(steps_per_traj, k))
        ts.append(np.arange(steps_per_traj))
    return BallDataset(config, seed, np.concatenate(states), np.concatenate(deltas),
                       np.concatenate(traj), np.concatenate(ts),
                       {"n_trajectories": n_trajectories, "steps_per_traj": steps_per_traj})


def split_by_trajectory(ds: BallDataset, test_fraction: float = 0.2, seed: int = 0
                        ) -> tuple[BallDataset, BallDataset]:
    ids = np.unique(ds.traj)
    rng = np.random.default_rng(seed)
    rng.shuffle(ids)
    n_test = max(1, int(round(test_fraction * len(ids)))) if len(ids) > 1 else 0
    test_ids = set(ids[:n_test].tolist())
    is_test = np.array([t in test_ids for t in ds.traj])
    return ds.subset(np.nonzero(~is_test)[0]), ds.subset(np.nonzero(is_test)[0])


# baselines ------------------------------------------------------------------


def predict_vel0(ds: BallDataset) -> np.ndarray:
    """No motion, no velocity change."""
    return np.zeros_like(ds.deltas)


def predict_vel_const(ds: BallDataset) -> np.ndarray:
    """Constant velocity: displacement v*dt, no velocity change."""
    pred = np.zeros_like(ds.deltas)
    pred[..., :2] = ds.states[..., 2:] * ds.config.dt
    return pred


def rms(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(target)) ** 2)))


# file format ------------------------------------------------------------------

_KEYS = ("x", "y", "vx", "vy", "dx", "dy", "dvx", "dvy")


def write_dataset(ds: BallDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": FORMAT, "version": FORMAT_VERSION, "config": asdict(ds.config),
                  "seed": ds.seed, **ds.meta}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s, d, k, t in zip(ds.states, ds.deltas, ds.traj, ds.t):
            balls = [dict(zip(_KEYS, map(float, np.concatenate([si, di])))) for si, di in zip(s, d)]
            fh.write(json.dumps({"traj": int(k), "t": int(t), "balls": balls}) + "\n")


def _records(fh: IO[str]) -> Iterator[dict]:
    for line in fh:
        line = line.strip()
        if line:
            yield json.loads(line)


def read_dataset(path: str | Path) -> BallDataset:
    with open(path, encoding="utf-8") as fh:
        it = _records(fh)
        header = next(it)
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        config = BallConfig(**header["config"])
        states, deltas, traj, ts = [], [], [], []
        for rec in it:
            arr = np.array([[b[k] for k in _KEYS] for b in rec["balls"]])
            states.append(arr[:, :4])
            deltas.append(arr[:, 4:])
            traj.append(rec.get("traj", 0))
            ts.append(rec["t"])
    meta = {k: v for k, v in header.items() if k not in ("format", "version", "config", "seed")}
    n = config.n_balls
    return BallDataset(config, header["seed"],
                       np.array(states).reshape(-1, n, 4), np.array(deltas).reshape(-1, n, 4),
                       np.array(traj, dtype=int), np.array(ts, dtype=int), meta)
