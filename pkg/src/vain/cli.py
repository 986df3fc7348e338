"""Command-line entry point: ``vain <command> [flags]``.

Commands write machine-readable files plus a ``manifest.json`` into
their output directory and print a short human summary on stdout.

Exit codes: 0 success, 2 configuration/usage error, 3 data error
(missing/unreadable input, dataset required), 4 training divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import ballsim, checkpoint, config as cfgmod, experiments, soccerdata
from .chessdata import mpp
from .chessdata.pgn import read_pgn
from .models import ARCHS, Model, ModelSpec, count_encoder_evals
from .trainer import DatasetRequired, DivergenceError, TaskData, evaluate_classification, \
    evaluate_regression

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("vain")


class DataError(RuntimeError):
    """Input files missing, unreadable or of the wrong kind."""


# --------------------------------------------------------------------------
# manifest


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, resolved: dict,
                   inputs: list, outputs: list) -> Path:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in ("func",)}
    manifest = {
        "command": command,
        "flags": flags,
        "config_path": flags.get("config"),
        "config": resolved,
        "seed": resolved.get("seed", flags.get("seed")),
        "inputs": [{"path": str(p), "sha256": _sha256(Path(p))} for p in inputs
                   if Path(p).is_file()],
        "outputs": [{"path": Path(p).name, "sha256": _sha256(Path(p))} for p in outputs],
        "build": _git_describe(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _require_files(paths) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        if not p.is_file():
            raise DataError(f"input not found: {p}")
        out.append(p)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_gen_balls(args) -> int:
    if args.n_balls < 1 or args.traj < 1 or args.steps < 1 or args.v0 < 0:
        raise cfgmod.ConfigError("--n-balls, --traj and --steps must be >= 1 and --v0 >= 0")
    config = ballsim.BallConfig(box_size=args.box, radius=args.radius, n_balls=args.n_balls,
                                v0=args.v0, dt=args.dt)
    try:
        config.validate()
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from exc
    ds = ballsim.generate_dataset(config, args.traj, args.steps, seed=args.seed)
    out = _out_dir(args.out)
    path = out / "balls.ndjson"
    ballsim.write_dataset(ds, path)
    write_manifest(out, "gen-balls", args, {"seed": args.seed, "ball_config": config.__dict__},
                   [], [path])
    print(f"wrote {len(ds)} frames x {config.n_balls} balls to {path}")
    return EXIT_OK


def cmd_prep_chess(args) -> int:
    paths = _require_files(args.pgn)
    games = []
    for p in paths:
        games.extend(read_pgn(p))
    for k, g in enumerate(games):
        g.index = k
    stats: dict = {}
    out = _out_dir(args.out)
    path = out / "mpp.ndjson"
    n = mpp.write_examples(mpp.iter_examples(games, args.max_ply, stats), path)
    stats_path = out / "stats.json"
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "prep-chess", args, {"max_ply": args.max_ply}, paths, [path, stats_path])
    print(f"games {stats['games']}  parsed {stats['parsed']}  discarded {stats['discarded']}  "
          f"examples {n}")
    for line in stats["diagnostics"][:10]:
        print("  " + line)
    return EXIT_OK


def cmd_prep_soccer(args) -> int:
    paths = _require_files(args.csv)
    try:
        ex = soccerdata.load_split(paths, args.label, args.jump_limit)
    except soccerdata.LayoutError as exc:
        raise DataError(str(exc)) from exc
    out = _out_dir(args.out)
    path = out / f"soccer-{args.label or 'examples'}.ndjson"
    soccerdata.write_examples(ex, path)
    write_manifest(out, "prep-soccer", args, {"label": args.label,
                                              "jump_limit": args.jump_limit}, paths, [path])
    print(f"{len(ex)} examples, up to {int(ex.mask.sum(1).max()) if len(ex) else 0} players "
          f"-> {path}")
    return EXIT_OK


def _resolved_tree(args) -> tuple[str, dict]:
    tree = cfgmod.load(args.config)
    preset = args.preset or tree.pop("preset", None)
    tree.pop("preset", None)
    if preset is None:
        raise cfgmod.ConfigError("no preset: pass --preset or set 'preset:' in the config file")
    tree = cfgmod.apply_overrides(tree, args.set)
    if args.methods:
        tree["methods"] = [m.strip().upper() for m in args.methods.split(",") if m.strip()]
    if args.epochs is not None:
        tree.setdefault("train", {})["epochs"] = args.epochs
    return preset, tree


def cmd_train(args) -> int:
    preset, tree = _resolved_tree(args)
    if preset not in experiments.PRESETS:
        raise cfgmod.ConfigError(f"unknown preset {preset!r}; choose from "
                                 f"{sorted(experiments.PRESETS)}")
    try:
        resolved = experiments.resolve(preset, tree, args.seed)
        for m in resolved["methods"]:
            if m not in ARCHS and m not in ("VEL0", "VEL-CONST", "RAND", "STATIC", "PALV",
                                            "PALAF", "PAD"):
                raise cfgmod.ConfigError(f"unknown method {m!r}")
    except (KeyError, TypeError) as exc:
        raise cfgmod.ConfigError(str(exc)) from exc
    out = _out_dir(args.out)
    try:
        report = experiments.run_experiment(preset, tree, args.seed, out)
    except TypeError as exc:
        raise cfgmod.ConfigError(f"bad configuration: {exc}") from exc
    outputs = [out / "report.json"] + [out / p for p in report["checkpoints"].values()]
    inputs = [args.config] if args.config else []
    write_manifest(out, "train", args, report["config"], inputs, outputs)
    _print_table(report)
    return EXIT_OK


def _print_table(report: dict) -> None:
    table = report["table"]
    metric = table["metric"]
    print(f"preset {report['preset']}  seed {report['seed']}  config {report['config_hash']}")
    for method, row in table["rows"].items():
        value = row["mean"] if metric == "euclid" else row[metric]
        print(f"  {method:<12} {metric} {value:.4f}")


def load_task_file(path: Path, position_unit: float | None = None) -> tuple[str, TaskData]:
    """Read a prepared dataset file (balls, chess MPP or soccer examples)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a newline-delimited JSON dataset") from exc
    if head.get("format") == ballsim.FORMAT:
        ds = ballsim.read_dataset(path)
        return "balls", experiments.ball_task(ds, position_unit=position_unit)
    if head.get("format") == "vain-soccer":
        return "soccer", _read_soccer(path)
    if "slots" in head:
        return "chess", experiments.chess_task(mpp.read_examples(path))
    raise DataError(f"{path}: unrecognized dataset format")


def _read_soccer(path: Path) -> TaskData:
    lines = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    recs = [json.loads(l) for l in lines if l.strip()]
    ids = sorted({p["id"] for r in recs for p in r["players"]})
    col = {pid: k for k, pid in enumerate(ids)}
    S, P = len(recs), len(ids)
    raw = np.zeros((S, P, 7))
    mask = np.zeros((S, P), bool)
    targets = np.zeros((S, P, 16))
    for s, r in enumerate(recs):
        for p in r["players"]:
            k = col[p["id"]]
            raw[s, k] = (p["x"], p["y"], p["vx"], p["vy"], np.cos(p["heading"]),
                         np.sin(p["heading"]), p["speed"])
            targets[s, k] = np.ravel(p["targets"])
            mask[s, k] = True
    ex = soccerdata.SoccerExamples(raw, mask, targets, np.array([r["t"] for r in recs]),
                                   np.array(ids))
    return experiments.soccer_task(ex)


def cmd_eval(args) -> int:
    ckpt, data_path = _require_files([args.checkpoint, args.data])
    try:
        model, header = checkpoint.load(ckpt)
    except checkpoint.CheckpointError as exc:
        raise DataError(f"{ckpt}: {exc}") from exc
    task, data = load_task_file(data_path, header["extra"].get("position_unit"))
    if data.features.shape[-1] != model.spec.n_features:
        raise DataError(f"{data_path}: {data.features.shape[-1]} features, checkpoint expects "
                        f"{model.spec.n_features}")
    scale = header.get("target_scale")
    scale = None if scale is None else np.array(scale)
    if data.is_classification:
        result = {"accuracy": evaluate_classification(model, data)}
    elif task == "soccer":
        result = evaluate_regression(model, data, "euclid", scale)
    else:
        result = {"rms": evaluate_regression(model, data, "rms", scale)}
    report = {"checkpoint": ckpt.name, "data": data_path.name, "task": task,
              "arch": model.spec.arch, "examples": len(data), "result": result}
    out = _out_dir(args.out)
    path = out / "eval.json"
    path.write_text(experiments.dumps(report))
    write_manifest(out, "eval", args, {"spec": model.spec.to_dict()}, [ckpt, data_path], [path])
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_attention(args) -> int:
    ckpt, data_path = _require_files([args.checkpoint, args.data])
    try:
        model, header = checkpoint.load(ckpt)
    except checkpoint.CheckpointError as exc:
        raise DataError(f"{ckpt}: {exc}") from exc
    if model.spec.arch != "VAIN":
        raise cfgmod.ConfigError(f"checkpoint is {model.spec.arch}; attention maps need VAIN")
    task, data = load_task_file(data_path, header["extra"].get("position_unit"))
    frames = [int(f) for f in args.frames.split(",")] if args.frames else [0]
    out = _out_dir(args.out)
    dumps, outputs = [], []
    for f in frames:
        if not 0 <= f < len(data):
            raise cfgmod.ConfigError(f"frame {f} out of range (0..{len(data) - 1})")
        dump = attention_dump(model, data.features[f], data.mask[f], task)
        dump["frame"] = f
        dumps.append(dump)
        if args.svg:
            svg_path = out / f"attention-{f}.svg"
            svg_path.write_text(attention_svg(dump, args.target))
            outputs.append(svg_path)
    path = out / "attention.json"
    path.write_text(json.dumps({"frames": dumps}, indent=1, sort_keys=True) + "\n")
    outputs.insert(0, path)
    write_manifest(out, "attention", args, {"frames": frames}, [ckpt, data_path], outputs)
    print(f"wrote {len(dumps)} attention map(s) to {out}")
    return EXIT_OK


def attention_dump(model: Model, features: np.ndarray, mask: np.ndarray, task: str = "") -> dict:
    """Attention weights among the active agents of one frame."""
    model.eval()
    out = model.forward(features, mask)
    active = np.nonzero(mask)[0]
    w = out.attention[np.ix_(active, active)]
    agents = []
    for k in active:
        f = features[k]
        if task == "chess":
            cat = int(np.argmax(f[:13])) + 1
            agents.append({"slot": int(k), "category": cat, "x": float(np.argmax(f[13:21])),
                           "y": float(np.argmax(f[21:29])), "vx": 0.0, "vy": 0.0})
        else:
            agents.append({"slot": int(k), "x": float(f[0]), "y": float(f[1]),
                           "vx": float(f[2]), "vy": float(f[3])})
    return {"agents": agents, "w": w.tolist()}


def attention_svg(dump: dict, target: int = 0, size: int = 400) -> str:
    """Scatter of agents; brightness follows w[target, j], arrows follow velocity."""
    agents = dump["agents"]
    w = np.array(dump["w"])
    xs = np.array([a["x"] for a in agents])
    ys = np.array([a["y"] for a in agents])
    lo = min(xs.min(), ys.min())
    hi = max(xs.max(), ys.max())
    span = hi - lo if hi > lo else 1.0
    pad = 30

    def px(v):
        return pad + (v - lo) / span * (size - 2 * pad)

    row = w[target] if len(w) else np.zeros(0)
    peak = row.max() if row.size and row.max() > 0 else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white" stroke="black"/>']
    for j, a in enumerate(agents):
        cx, cy = px(a["x"]), size - px(a["y"])
        if j == target:
            fill = "rgb(0,0,255)"
        else:
            g = int(round(255 * (1 - row[j] / peak)))
            fill = f"rgb({g},255,{g})" if g < 255 else "rgb(235,255,235)"
        parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="8" fill="{fill}" stroke="black" '
                     f'data-slot="{a["slot"]}" data-weight="{0.0 if j == target else row[j]:.6f}"/>')
        vx, vy = a.get("vx", 0.0), a.get("vy", 0.0)
        if vx or vy:
            ex, ey = cx + 20 * vx, cy - 20 * vy
            parts.append(f'<line x1="{cx:.1f}" y1="{cy:.1f}" x2="{ex:.1f}" y2="{ey:.1f}" '
                         f'stroke="black" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)
    rows = []
    for n in sizes:
        x = rng.normal(size=(args.batch, n, 4))
        for arch in ("VAIN", "COMMNET", "IN"):
            m = Model(ModelSpec(arch, 4, out_dim=4, seed=args.seed))
            m.eval()
            m.forward(x[:1])
            m.reset_counters()
            t0 = time.perf_counter()
            m.forward(x)
            dt = time.perf_counter() - t0
            comm, pair = count_encoder_evals(arch, n)
            got = (m.counters["comm_evals"] // args.batch, m.counters["pair_evals"] // args.batch)
            if got != (comm, pair):
                print(f"counter mismatch for {arch} n={n}: {got} != {(comm, pair)}")
                return EXIT_DATA
            rows.append({"arch": arch, "n": n, "comm_evals": comm, "pair_evals": pair,
                         "ms_per_frame": 1000 * dt / args.batch})
            print(f"{arch:<8} n={n:<4} comm={comm:<5} pair={pair:<7} "
                  f"{1000 * dt / args.batch:8.3f} ms/frame")
    if args.out:
        out = _out_dir(args.out)
        path = out / "bench.json"
        path.write_text(json.dumps({"rows": rows}, indent=2) + "\n")
        write_manifest(out, "bench", args, {"sizes": sizes}, [], [path])
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vain", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-balls", help="simulate bouncing balls")
    g.add_argument("--n-balls", type=int, default=8)
    g.add_argument("--v0", type=float, default=3.0)
    g.add_argument("--box", type=float, default=10.0)
    g.add_argument("--radius", type=float, default=0.25)
    g.add_argument("--dt", type=float, default=0.1)
    g.add_argument("--traj", type=int, default=500)
    g.add_argument("--steps", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_balls)

    c = sub.add_parser("prep-chess", help="PGN -> next-moving-piece examples")
    c.add_argument("pgn", nargs="+")
    c.add_argument("--max-ply", type=int, default=100)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_prep_chess)

    s = sub.add_parser("prep-soccer", help="SVPP CSV -> 8-horizon examples")
    s.add_argument("csv", nargs="+")
    s.add_argument("--label", default="")
    s.add_argument("--jump-limit", type=float, default=soccerdata.JUMP_LIMIT)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prep_soccer)

    t = sub.add_parser("train", help="run a preset comparison")
    t.add_argument("--preset", choices=sorted(experiments.PRESETS))
    t.add_argument("--config", help="YAML config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. train.epochs=5")
    t.add_argument("--methods", help="comma-separated subset of methods")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a prepared dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("attention", help="dump VAIN attention maps")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--frames", default="0", help="comma-separated frame indices")
    a.add_argument("--target", type=int, default=0, help="agent highlighted in the SVG")
    a.add_argument("--svg", action="store_true")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attention)

    b = sub.add_parser("bench", help="encoder-evaluation counts and forward timing")
    b.add_argument("--sizes", default="2,8,32")
    b.add_argument("--batch", type=int, default=16)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DatasetRequired, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
