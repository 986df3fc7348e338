"""Named experiment presets and the comparison tables they produce.

``run_experiment(name)`` builds the preset's data, runs every method of the
comparison and returns a JSON-ready report.  Reports hold no timings or
host details, so a rerun with the same seed gives identical bytes.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import ballsim, checkpoint, soccerdata
from .chessdata import mpp
from .chessdata.pgn import read_pgn
from .models import Model, ModelSpec, count_encoder_evals
from .trainer import DatasetRequired, TaskData, TrainConfig, config_hash, train

log = logging.getLogger(__name__)

REPO_DATA = Path(__file__).resolve().parents[2] / "data"

FICS_STEPS = (
    "Download a year of standard-rated games from https://www.ficsgames.org/download.html "
    "(PGN export), e.g. ficsgamesdb_2016_standard2000_nomovetimes_*.pgn.bz2",
    "Decompress it and take the first 10000 games (or all, the runner samples 10000)",
    "Run: vain train --preset chess-mpp --set data.pgn=/path/to/games.pgn",
)
SVPP_STEPS = (
    "Download the ZXY sensor CSVs of both Tromso IL matches from the SVPP site "
    "(https://datasets.simula.no/alfheim/), 2013-11-03 and 2013-11-07",
    "Place the first/second-half files in one directory named after soccerdata.SPLITS, e.g. "
    "2013-11-03_tromso_stromsgodset_first.csv",
    "Run: vain train --preset soccer-loo --set data.svpp_dir=/path/to/dir",
)


@dataclass
class Preset:
    name: str
    task: str
    methods: tuple
    data: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    per_method: dict = field(default_factory=dict)
    description: str = ""

    def tree(self) -> dict:
        return {"preset": self.name, "task": self.task, "methods": list(self.methods),
                "data": copy.deepcopy(self.data), "model": copy.deepcopy(self.model),
                "train": copy.deepcopy(self.train), "per_method": copy.deepcopy(self.per_method)}


BALL_MODEL = {"enc_hidden": [64, 64], "enc_out": 64, "comm_dim": 64, "attn_dim": 10,
              "dec_hidden": [64, 64], "pair_hidden": [64, 64], "kernel": "unnormalized",
              "aggregation": "sum"}
CHESS_MODEL = {"enc_hidden": [64, 64], "enc_out": 64, "comm_dim": 64, "attn_dim": 10,
               "dec_hidden": [64, 64], "pair_hidden": [16, 16], "batchnorm": True}
SOCCER_MODEL = {"enc_hidden": [256, 256], "enc_out": 128, "comm_dim": 128, "attn_dim": 10,
                "dec_hidden": [256, 256], "pair_hidden": [256, 256], "aggregation": "mean"}

PRESETS = {
    "balls-desk": Preset(
        "balls-desk", "balls", ("VEL0", "VEL-CONST", "COMMNET", "IN", "VAIN"),
        data={"n_balls": 8, "v0": 3.0, "box_size": 5.0, "radius": 0.5, "position_unit": 0.5,
              "train_traj": 200, "test_traj": 50, "steps": 100},
        model=BALL_MODEL, train={"epochs": 60, "batch_size": 64, "lr": 1e-3,
                                 "lr_halving_period": 20},
        description="8 balls in a 5 m box, 20k training frames, width 64"),
    "balls-paper": Preset(
        "balls-paper", "balls", ("VEL0", "VEL-CONST", "COMMNET", "IN", "VAIN"),
        data={"n_balls": 50, "v0": 3.0, "train_traj": 400, "test_traj": 100, "steps": 100},
        model=dict(BALL_MODEL, enc_hidden=[256, 256, 256], enc_out=128, comm_dim=128,
                   dec_hidden=[256, 256, 256], pair_hidden=[64, 64, 64]),
        train={"epochs": 60, "batch_size": 64, "lr": 1e-3, "lr_halving_period": 10},
        description="50 balls, paper-width networks"),
    "chess-mpp": Preset(
        "chess-mpp", "chess", ("RAND", "FC", "SMAX", "ONE_HOP_FC", "COMMNET", "IN", "VAIN"),
        data={"pgn": None, "n_games": 10000, "n_test": 1000, "max_ply": 100},
        model=CHESS_MODEL, train={"epochs": 30, "batch_size": 64, "lr": 1e-3,
                                  "lr_halving_period": 10, "metric": "accuracy"},
        description="FICS 10k games, 9k/1k split"),
    "chess-desk": Preset(
        "chess-desk", "chess", ("RAND", "SMAX", "COMMNET", "VAIN"),
        data={"pgn": str(REPO_DATA / "chess" / "selfplay-500.pgn"), "n_games": 500,
              "n_test": 50, "max_ply": 100},
        model=CHESS_MODEL, train={"epochs": 10, "batch_size": 64, "lr": 1e-3,
                                  "lr_halving_period": 10, "metric": "accuracy"},
        description="bundled 500-game corpus, 10 epochs"),
    "soccer-loo": Preset(
        "soccer-loo", "soccer", ("STATIC", "PALV", "PALAF", "PAD", "IN", "COMMNET", "VAIN"),
        data={"svpp_dir": None, "splits": ["1103a", "1103b", "1107a"]},
        model=SOCCER_MODEL, train={"epochs": 30, "batch_size": 64, "lr": 1e-3,
                                   "lr_halving_period": 10, "metric": "euclid"},
        per_method={"IN": {"batchnorm": True}},
        description="SVPP leave-one-out over three match halves"),
    "soccer-synthetic": Preset(
        "soccer-synthetic", "soccer", ("STATIC", "PALV", "PALAF", "PAD", "IN", "COMMNET", "VAIN"),
        data={"synthetic": True, "splits": ["syn-a", "syn-b", "syn-c"], "n_players": 11,
              "seconds": 300.0},
        model=dict(SOCCER_MODEL, enc_hidden=[64, 64], enc_out=32, comm_dim=32,
                   dec_hidden=[64, 64], pair_hidden=[64, 64]),
        train={"epochs": 10, "batch_size": 32, "lr": 1e-3, "lr_halving_period": 10,
               "metric": "euclid"},
        per_method={"IN": {"batchnorm": True}},
        description="synthetic team motion, exercises the soccer pipeline offline"),
}


# --------------------------------------------------------------------------
# task data


def ball_task(ds: ballsim.BallDataset, id_offset: int = 0,
              position_unit: float | None = None) -> TaskData:
    ids = (ds.traj.astype(np.int64) + id_offset) * 100_000 + ds.t
    return TaskData(ds.features(position_unit), np.ones(ds.states.shape[:2], bool), targets=ds.deltas, ids=ids)


def chess_task(examples: list) -> TaskData:
    feats, mask, labels, games = mpp.stack_examples(examples)
    ids = np.array([e.game * 1000 + e.ply for e in examples])
    return TaskData(feats, mask, labels=labels, ids=ids)


def soccer_task(ex: soccerdata.SoccerExamples, tag: int = 0) -> TaskData:
    ids = tag * 10**9 + np.arange(len(ex))
    return TaskData(ex.features(), ex.mask, targets=ex.displacement_targets(), ids=ids)


# --------------------------------------------------------------------------
# runners


@dataclass
class MethodResult:
    method: str
    metrics: dict
    model: Optional[Model] = None
    target_scale: Optional[np.ndarray] = None


def _spec(tree: dict, arch: str, n_features: int, **kw) -> ModelSpec:
    fields = dict(tree["model"])
    fields.update(tree.get("per_method", {}).get(arch, {}))
    fields.update(kw)
    for k in ("enc_hidden", "dec_hidden", "pair_hidden"):
        if k in fields:
            fields[k] = tuple(fields[k])
    return ModelSpec(arch, n_features, seed=tree["seed"], **fields)


def _train_cfg(tree: dict) -> TrainConfig:
    return TrainConfig(seed=tree["seed"], task=tree["task"].upper(), **tree["train"])


def _fit(spec: ModelSpec, tr: TaskData, te: TaskData, cfg: TrainConfig, n_agents: int):
    model = Model(spec)
    res = train(model, tr, te, cfg)
    m = res.metrics
    out = {"best": m.best_metric, "best_epoch": m.best_epoch, "final": m.final_metric,
           "test_curve": [v if not isinstance(v, dict) else v["mean"] for v in m.test_metric],
           "encoder_evals_per_frame": dict(zip(("comm", "pair"),
                                               count_encoder_evals(spec.arch, n_agents)))}
    return model, res, out


def _balls(tree: dict, on_result: Callable) -> dict:
    d = tree["data"]
    cfg = ballsim.BallConfig(n_balls=d["n_balls"], v0=d["v0"], radius=d.get("radius", 0.25),
                             box_size=d.get("box_size", 10.0), dt=d.get("dt", 0.1))
    seed = tree["seed"]
    train_ds = ballsim.generate_dataset(cfg, d["train_traj"], d["steps"], seed=seed)
    test_ds = ballsim.generate_dataset(cfg, d["test_traj"], d["steps"], seed=seed + 10_000)
    unit = d.get("position_unit")
    tr = ball_task(train_ds, position_unit=unit)
    te = ball_task(test_ds, id_offset=d["train_traj"], position_unit=unit)
    rows = {}
    for method in tree["methods"]:
        if method == "VEL0":
            rows[method] = {"rms": ballsim.rms(ballsim.predict_vel0(test_ds), test_ds.deltas)}
        elif method == "VEL-CONST":
            rows[method] = {"rms": ballsim.rms(ballsim.predict_vel_const(test_ds), test_ds.deltas)}
        else:
            spec = _spec(tree, method, 4, out_dim=4)
            model, res, out = _fit(spec, tr, te, _train_cfg(tree), cfg.n_balls)
            rows[method] = {"rms": out.pop("best"), **out}
            on_result(method, model, res.target_scale)
        log.info("%s: %s", method, rows[method])
    return {"metric": "rms", "rows": rows,
            "data": {"train_frames": len(tr), "test_frames": len(te)}}


def _chess(tree: dict, on_result: Callable) -> dict:
    d = tree["data"]
    if not d.get("pgn") or not Path(d["pgn"]).exists():
        raise DatasetRequired("chess-mpp needs a FICS PGN corpus:\n  " + "\n  ".join(FICS_STEPS))
    games = read_pgn(d["pgn"])
    if d.get("n_games") and len(games) > d["n_games"]:
        keep = np.sort(np.random.default_rng(tree["seed"]).choice(len(games), d["n_games"],
                                                                   replace=False))
        games = [games[k] for k in keep]
    for k, g in enumerate(games):
        g.index = k
    stats: dict = {}
    examples = list(mpp.iter_examples(games, d.get("max_ply", 100), stats))
    train_ids, test_ids = mpp.split_games(len(games), d["n_test"], tree["seed"])
    test_set = set(test_ids.tolist())
    tr = chess_task([e for e in examples if e.game not in test_set])
    te = chess_task([e for e in examples if e.game in test_set])
    rows = {}
    for method in tree["methods"]:
        if method == "RAND":
            picks = mpp.rand_predict(te.mask, tree["seed"])
            rows[method] = {"accuracy": float(np.mean(np.argmax(picks, 1) == te.labels)),
                            "expected": mpp.rand_expected_accuracy(te.mask)}
        else:
            spec = _spec(tree, method, mpp.ONEHOT_WIDTH, head="softmax", n_slots=mpp.N_SLOTS)
            model, res, out = _fit(spec, tr, te, _train_cfg(tree), mpp.N_SLOTS)
            rows[method] = {"accuracy": out.pop("best"), **out}
            on_result(method, model, None)
        log.info("%s: %s", method, rows[method])
    return {"metric": "accuracy", "rows": rows,
            "data": {"games": stats["games"], "parsed": stats["parsed"],
                     "discarded": stats["discarded"], "train_examples": len(tr),
                     "test_examples": len(te), "mean_pieces": float(te.mask.sum(1).mean())}}


def _soccer_splits(tree: dict) -> dict:
    d = tree["data"]
    if d.get("synthetic"):
        out = {}
        for k, name in enumerate(d["splits"]):
            samples = soccerdata.synthetic_samples(d["n_players"], d["seconds"], seed=tree["seed"] + k,
                                                   mode="team")
            streams = soccerdata.Streams(label=name)
            for s in samples:
                streams.players.setdefault(s.player_id, []).append(s)
            frames = soccerdata.filter_anomalies(soccerdata.resample_2hz(streams))
            out[name] = soccerdata.build_examples(frames)
        return out
    root = d.get("svpp_dir")
    if not root or not Path(root).is_dir():
        raise DatasetRequired("soccer-loo needs the SVPP sensor logs:\n  " + "\n  ".join(SVPP_STEPS))
    out = {}
    for name in d["splits"]:
        stem = soccerdata.SPLITS[name]
        files = sorted(Path(root).glob(stem + "*.csv"))
        if not files:
            raise DatasetRequired(f"missing SVPP file {stem}.csv in {root}:\n  "
                                  + "\n  ".join(SVPP_STEPS))
        out[name] = soccerdata.load_split(files, name)
    return out


def _soccer(tree: dict, on_result: Callable) -> dict:
    splits = _soccer_splits(tree)
    names = list(splits)
    tags = {n: k for k, n in enumerate(names)}
    rows: dict = {m: {} for m in tree["methods"]}
    for train_names, held in soccerdata.leave_one_out(names):
        train_ex = soccerdata.concat([splits[n] for n in train_names])
        test_ex = splits[held]
        P = max(train_ex.raw.shape[1], test_ex.raw.shape[1])
        train_ex, test_ex = (soccerdata.concat([e]) if e.raw.shape[1] == P else _pad(e, P)
                             for e in (train_ex, test_ex))
        for method in tree["methods"]:
            if method in ("STATIC", "PALV"):
                err = soccerdata.horizon_errors(soccerdata.baseline_predict(test_ex, method), test_ex)
            elif method == "PALAF":
                fitted = soccerdata.LinearDisplacement().fit(train_ex)
                err = soccerdata.horizon_errors(
                    soccerdata.baseline_predict(test_ex, method, fitted), test_ex)
            else:
                tr = soccer_task(train_ex, 1 + tags[train_names[0]])
                te = soccer_task(test_ex, 100 + tags[held])
                if method == "PAD":
                    spec = ModelSpec("MLP", tr.features.shape[-1], out_dim=16, dec_hidden=(256, 256),
                                     seed=tree["seed"])
                else:
                    spec = _spec(tree, method, tr.features.shape[-1], out_dim=16)
                model, res, out = _fit(spec, tr, te, _train_cfg(tree), int(te.mask.sum(1).max()))
                pred = _predict_positions(model, te, res.target_scale, test_ex)
                err = soccerdata.horizon_errors(pred, test_ex)
                on_result(f"{method}-{held}", model, res.target_scale)
            rows[method][held] = {"per_horizon": [float(x) for x in err], "mean": float(err.mean())}
            log.info("%s held-out %s: %.3f", method, held, err.mean())
    for method, per in rows.items():
        per["mean"] = float(np.mean([per[n]["mean"] for n in names]))
    return {"metric": "euclid", "horizons": list(soccerdata.HORIZONS), "rows": rows,
            "data": {n: len(splits[n]) for n in names}}


def _pad(ex: soccerdata.SoccerExamples, P: int) -> soccerdata.SoccerExamples:
    w = P - ex.raw.shape[1]
    return soccerdata.SoccerExamples(np.pad(ex.raw, ((0, 0), (0, w), (0, 0))),
                                     np.pad(ex.mask, ((0, 0), (0, w))),
                                     np.pad(ex.targets, ((0, 0), (0, w), (0, 0))), ex.times,
                                     np.arange(P), ex.label)


def _predict_positions(model, te: TaskData, scale, ex: soccerdata.SoccerExamples) -> np.ndarray:
    from .trainer import predict
    disp = predict(model, te, 512, scale)
    here = np.tile(ex.positions, len(soccerdata.HORIZONS))
    return np.where(ex.mask[..., None], here + disp, 0.0)


RUNNERS = {"balls": _balls, "chess": _chess, "soccer": _soccer}


def resolve(name: str, overrides: dict | None = None, seed: int | None = None) -> dict:
    from .config import merge
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    tree = PRESETS[name].tree()
    tree["seed"] = 0
    if overrides:
        tree = merge(tree, overrides)
    if seed is not None:
        tree["seed"] = seed
    tree["methods"] = [m.upper() for m in tree["methods"]]
    return tree


def run_experiment(name: str, overrides: dict | None = None, seed: int | None = None,
                   out_dir: str | Path | None = None) -> dict:
    """Run every method of a preset; optionally write checkpoints and report to ``out_dir``."""
    tree = resolve(name, overrides, seed)
    saved = {}

    def on_result(label, model, scale):
        if out_dir is None:
            return
        path = Path(out_dir) / f"{label.lower()}.ckpt"
        extra = {"preset": name, "method": label, "task": tree["task"]}
        if tree["data"].get("position_unit") is not None:
            extra["position_unit"] = tree["data"]["position_unit"]
        checkpoint.save(path, model, scale, extra=extra)
        saved[label] = path.name

    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    table = RUNNERS[tree["task"]](tree, on_result)
    report = {
        "preset": name,
        "task": tree["task"],
        "seed": tree["seed"],
        "config_hash": config_hash(tree),
        "config": tree,
        "methods": tree["methods"],
        "table": table,
        "encoder_evals": _eval_counts(tree, table),
        "checkpoints": saved,
    }
    if out_dir is not None:
        (Path(out_dir) / "report.json").write_text(dumps(report))
    return report


def _eval_counts(tree: dict, table: dict) -> dict:
    n = {"balls": tree["data"].get("n_balls"), "chess": mpp.N_SLOTS}.get(tree["task"])
    out = {}
    for m in tree["methods"]:
        if m in ("VAIN", "COMMNET", "IN", "ONE_HOP_FC") and n:
            comm, pair = count_encoder_evals(m, n)
            out[m] = {"n_agents": n, "comm": comm, "pair": pair}
    return out


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
