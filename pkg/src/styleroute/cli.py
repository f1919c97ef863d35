"""Command line: synth, train, enhance, evaluate, ablate, route-viz.

Every command writes a ``manifest.json`` next to its outputs. Errors exit
nonzero with a single ``error[<category>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import json
import logging
import shutil
import subprocess
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import DatasetError, Dataset, _index_dir, load_dataset, read_image, save_dataset, write_image
from .losses import ExtractorUnavailable, LossWeights
from .metrics import evaluate_images
from .model import ModelConfig
from .synth import make_synthetic_dataset, tier_of
from .trainer import (
    CheckpointError, TrainConfig, TrainingDiverged, enhance_batch, load_checkpoint, save_checkpoint, train,
)

log = logging.getLogger("styleroute")

EXIT_CODES = {"usage": 2, "config": 3, "data": 4, "checkpoint": 5, "io": 6, "training": 7, "internal": 1}


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


# -- shared plumbing -------------------------------------------------------------

def _code_version():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now():
    return _dt.datetime.now(tz=_dt.timezone.utc).isoformat()


def write_manifest(out_dir, command, config, seed, outputs, started):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "code_version": _code_version(),
        "started": started,
        "finished": _now(),
        "outputs": sorted(str(p) for p in outputs),
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


def _prepare_out(out, force, inputs=()):
    out = Path(out)
    for src in inputs:
        if src is None:
            continue
        src = Path(src).resolve()
        if out.resolve() == src or out.resolve() in src.parents:
            raise CliError("io", f"output directory {out} would overwrite input {src}")
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CliError("io", f"output directory {out} is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolution(text):
    parts = str(text).lower().replace("x", ",").split(",")
    vals = [int(p) for p in parts if p.strip()]
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"bad resolution {text!r}; use N or HxW")
    return tuple(vals)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write_csv(path, rows, columns=None):
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _pretty(rows):
    if not rows:
        return "(empty)"
    cols = list(rows[0].keys())
    fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)  # noqa: E731
    widths = [max(len(c), *(len(fmt(r[c])) for r in rows)) for c in cols]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(fmt(r[c]).rjust(w) for c, w in zip(cols, widths)) for r in rows]
    return "\n".join(lines)


# -- configuration -------------------------------------------------------------------

WEIGHT_FLAGS = [f.name for f in fields(LossWeights)]
TRAIN_FLAGS = {
    "phase1_steps": int, "phase2_steps": int, "pseudo_label_start_fraction": float,
    "learning_rate": float, "batch_size": int, "seed": int, "K": int, "extractor": str,
    "extractor_layer": int, "internal_depth": int,
}
MODEL_FLAGS = {f.name: f.type for f in fields(ModelConfig)}


def read_config(path):
    """INI file with optional [train], [weights] and [model] sections."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        if not cp.read(path):
            raise CliError("config", f"config file not found: {path}")
    except configparser.Error as exc:
        raise CliError("config", f"cannot parse {path}: {exc}") from None
    out = {"train": {}, "weights": {}, "model": {}}
    for section in cp.sections():
        if section not in out:
            raise CliError("config", f"unknown config section [{section}]")
        for key, value in cp[section].items():
            out[section][key] = value
    return out


def _coerce(kind, key, value):
    table = {"train": TRAIN_FLAGS, "weights": dict.fromkeys(WEIGHT_FLAGS, float), "model": MODEL_FLAGS}[kind]
    if key not in table:
        raise CliError("config", f"unknown {kind} key {key!r}")
    typ = table[key]
    typ = {"int": int, "float": float, "str": str}.get(typ, typ) if isinstance(typ, str) else typ
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise CliError("config", f"{kind}.{key}: cannot convert {value!r} to {typ.__name__}") from None


def build_train_config(args) -> TrainConfig:
    file_cfg = read_config(args.config) if getattr(args, "config", None) else {"train": {}, "weights": {}, "model": {}}
    train_kw = {k: _coerce("train", k, v) for k, v in file_cfg["train"].items()}
    weight_kw = {k: _coerce("weights", k, v) for k, v in file_cfg["weights"].items()}
    model_kw = {k: _coerce("model", k, v) for k, v in file_cfg["model"].items()}
    for k in TRAIN_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            train_kw[k] = v
    for k in WEIGHT_FLAGS:
        v = getattr(args, k, None)
        if v is not None:
            weight_kw[k] = v
    try:
        return TrainConfig(**train_kw, weights=LossWeights(**weight_kw), model=ModelConfig(**model_kw))
    except (TypeError, ValueError) as exc:
        raise CliError("config", f"invalid configuration: {exc}") from None


def _add_train_flags(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--k", dest="K", type=int, help="maximum enhancement iterations K (default 2)")
    p.add_argument("--seed", type=int)
    p.add_argument("--phase1-steps", dest="phase1_steps", type=int)
    p.add_argument("--phase2-steps", dest="phase2_steps", type=int)
    p.add_argument("--pseudo-label-start-fraction", dest="pseudo_label_start_fraction", type=float)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--extractor", choices=["random", "vgg19"])
    p.add_argument("--extractor-layer", dest="extractor_layer", type=int)
    p.add_argument("--internal-depth", dest="internal_depth", type=int)
    for name in WEIGHT_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    p.add_argument("--resolution", type=_resolution, default=(64, 64), help="working resolution N or HxW")


def _load(root, resolution, split="train"):
    try:
        return load_dataset(root, resolution, split)
    except DatasetError as exc:
        raise CliError("data", str(exc)) from None


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise CliError("checkpoint", str(exc)) from None


# -- commands --------------------------------------------------------------------

def cmd_synth(args):
    started = _now()
    out = _prepare_out(args.out, args.force)
    n_total = args.n + args.holdout
    ds = make_synthetic_dataset(None, n_total, args.tiers, seed=args.seed, resolution=args.resolution)
    outputs = []
    rows = []
    splits = [("train", range(args.n)), ("test", range(args.n, n_total))] if args.holdout else [("", range(n_total))]
    for split, idx in splits:
        sub = ds.subset(list(idx), split or "train")
        root = out / split if split else out
        save_dataset(sub, root)
        outputs += [root / "input", root / "gt"]
        for name in sub.names:
            rows.append({"name": name, "tier": tier_of(name), "severity": ds.meta["severity"][name],
                         "split": split or "train"})
    _write_csv(out / "tiers.csv", rows, ["name", "tier", "severity", "split"])
    outputs.append(out / "tiers.csv")
    config = {"n": args.n, "holdout": args.holdout, "tiers": args.tiers, "seed": args.seed,
              "resolution": list(args.resolution)}
    write_manifest(out, "synth", config, args.seed, outputs, started)
    print(f"wrote {n_total} pairs to {out}")


def _progress(every):
    def cb(phase, step, row):
        if every and step % every == 0:
            log.info("phase %d step %d total %.5f", phase, step, row["total"])
    return cb


def cmd_train(args):
    started = _now()
    config = build_train_config(args)
    ds = _load(args.data, args.resolution)
    out = _prepare_out(args.out, args.force, [args.data])
    try:
        ckpt = train(ds, config, progress=_progress(args.log_every))
    except TrainingDiverged as exc:
        raise CliError("training", str(exc)) from None
    except ExtractorUnavailable as exc:
        raise CliError("config", str(exc)) from None
    ck_path = out / "checkpoint.ckpt"
    save_checkpoint(ckpt, ck_path)
    cols = ["phase", "step", "recon_input", "recon_gt", "recon_enh", "style", "rep_dec", "w_recon", "route",
            "k_recon", "total"] + [f"kbar_{k}" for k in range(config.K + 1)]
    _write_csv(out / "train_log.csv", ckpt.log, cols)
    hist = [r for r in ckpt.log if r["phase"] == 2 and sum(r[f"kbar_{k}"] for k in range(config.K + 1))]
    totals = {f"kbar_{k}": int(sum(r[f"kbar_{k}"] for r in hist)) for k in range(config.K + 1)}
    _write_csv(out / "pseudo_labels.csv", [{"steps": len(hist), **totals}])
    outputs = [ck_path, out / "train_log.csv", out / "pseudo_labels.csv"]
    if args.plot:
        from .plotting import plot_training_log

        outputs.append(plot_training_log(ckpt.log, out / "train_loss.png"))
    write_manifest(out, "train", {**config.to_dict(), "resolution": list(args.resolution)}, config.seed,
                   outputs, started)
    print(f"checkpoint written to {ck_path}")


def _image_inputs(path, resolution):
    """A dataset root (with input/) or a flat directory of rasters -> (names, images, targets-or-None)."""
    path = Path(path)
    if (path / "input").is_dir() and (path / "gt").is_dir():
        ds = _load(path, resolution)
        return ds.names, list(ds.inputs()), list(ds.targets())
    src = path / "input" if (path / "input").is_dir() else path
    if not src.is_dir():
        raise CliError("data", f"not a directory: {src}")
    files = _index_dir(src)
    if not files:
        raise CliError("data", f"no images in {src}")
    try:
        imgs = [np.asarray(read_image(files[n], resolution)) for n in files]
    except DatasetError as exc:
        raise CliError("data", str(exc)) from None
    return list(files), imgs, None


def cmd_enhance(args):
    started = _now()
    ckpt = _load_ckpt(args.checkpoint)
    names, imgs, _ = _image_inputs(args.input, args.resolution)
    out = _prepare_out(args.out, args.force, [args.input, args.checkpoint])
    try:
        r = enhance_batch(np.stack(imgs), ckpt)
    except ValueError as exc:
        raise CliError("checkpoint", f"checkpoint/resolution mismatch: {exc}") from None
    K = ckpt.config.K
    (out / "images").mkdir()
    outputs = []
    for i, n in enumerate(names):
        p = out / "images" / f"{n}.png"
        write_image(r["output"][i], p)
        outputs.append(p)
    if args.dump_states:
        (out / "states").mkdir()
        for i, n in enumerate(names):
            for k in range(K + 1):
                p = out / "states" / f"{n}__state{k}.png"
                write_image(r["states"][i, k], p)
                outputs.append(p)
    rows = [{"name": n, **{f"w_{k}": float(r["weights"][i, k]) for k in range(K + 1)}} for i, n in enumerate(names)]
    _write_csv(out / "routing.csv", rows, ["name"] + [f"w_{k}" for k in range(K + 1)])
    outputs.append(out / "routing.csv")
    if args.plot:
        from .plotting import plot_routing_weights

        outputs.append(plot_routing_weights(names, r["weights"], out / "routing.png", [tier_of(n) for n in names]))
    write_manifest(out, "enhance", {"checkpoint": str(args.checkpoint), "K": K,
                                     "resolution": list(args.resolution)}, ckpt.config.seed, outputs, started)
    print(f"enhanced {len(names)} images into {out / 'images'}")


def _read_routing(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["name"]: [float(r[c]) for c in r if c.startswith("w_")] for r in rows}


def cmd_evaluate(args):
    started = _now()
    out = _prepare_out(args.out, args.force, [args.pred, args.gt, args.checkpoint, args.routing])
    if args.checkpoint:
        ckpt = _load_ckpt(args.checkpoint)
        ds = _load(args.gt, args.resolution, "test")
        r = enhance_batch(ds.inputs(), ckpt)
        names, preds, gts, weights = ds.names, list(r["output"]), list(ds.targets()), r["weights"]
    else:
        if not args.pred:
            raise CliError("usage", "evaluate needs --pred or --checkpoint")
        pred_files, gt_files = _index_dir(Path(args.pred)), _index_dir(_gt_dir(args.gt))
        missing = sorted(set(pred_files) ^ set(gt_files))
        if missing:
            raise CliError("data", "unmatched files: " + ", ".join(missing))
        names = sorted(pred_files)
        try:
            preds = [np.asarray(read_image(pred_files[n], args.resolution)) for n in names]
            gts = [np.asarray(read_image(gt_files[n], args.resolution)) for n in names]
        except DatasetError as exc:
            raise CliError("data", str(exc)) from None
        weights = None
        if args.routing:
            table = _read_routing(args.routing)
            weights = np.array([table[n] for n in names])
    report = evaluate_images(preds, gts, names, weights)
    report.to_csv(out / "metrics.csv")
    report.to_json(out / "metrics.json")
    print(report.pretty())
    write_manifest(out, "evaluate", {"pred": args.pred, "gt": args.gt, "checkpoint": args.checkpoint,
                                      "resolution": list(args.resolution)}, None,
                   [out / "metrics.csv", out / "metrics.json"], started)


def _gt_dir(path):
    path = Path(path)
    return path / "gt" if (path / "gt").is_dir() else path


def cmd_ablate(args):
    from .experiments import UnknownArm, check_arms, run_ablation, valid_arms

    started = _now()
    config = build_train_config(args)
    arms = args.arms.split(",") if args.arms else valid_arms(4, config.K)
    try:
        check_arms(arms, config.K)
    except UnknownArm as exc:
        raise CliError("usage", str(exc)) from None
    train_ds = _load(args.data, args.resolution)
    test_ds = _load(args.test, args.resolution, "test") if args.test else train_ds
    out = _prepare_out(args.out, args.force, [args.data, args.test])
    res = run_ablation(train_ds, test_ds, config, arms, progress=_progress(args.log_every))
    outputs = []
    for key, label in (("table2", "arm"), ("table3", "K"), ("table6", "strategy")):
        rows = res[key]
        if not rows:
            continue
        p = out / f"ablation_{key}.csv"
        _write_csv(p, rows)
        outputs.append(p)
        print(f"[{key}]\n{_pretty(rows)}\n")
        if args.plot:
            from .plotting import plot_table

            outputs.append(plot_table(rows, label, out / f"ablation_{key}.png"))
    arm_rows = [{"arm": a, **{k: v for k, v in m.items() if k != "weights"}} for a, m in res["rows"].items()]
    _write_csv(out / "ablation_arms.csv", arm_rows)
    outputs.append(out / "ablation_arms.csv")
    write_manifest(out, "ablate", {**config.to_dict(), "arms": arms, "resolution": list(args.resolution)},
                   config.seed, outputs, started)


def cmd_route_viz(args):
    from .experiments import approaching_fraction, routing_projections

    started = _now()
    ckpt = _load_ckpt(args.checkpoint)
    root = Path(args.data)
    if not (root / "gt").is_dir():
        raise CliError("data", f"route-viz requires ground truth: {root / 'gt'} not found")
    ds = _load(root, args.resolution, "test")
    out = _prepare_out(args.out, args.force, [args.data, args.checkpoint])
    coords, dists = routing_projections(ckpt, ds)
    K = ckpt.config.K
    labels = [str(k) for k in range(K + 1)] + ["gt"]
    cols = ["name"] + [f"{ax}_{lab}" for lab in labels for ax in ("x", "y")] + [f"dist_{k}" for k in range(K + 1)]
    rows = []
    for n, pts, d in zip(ds.names, coords, dists):
        row = {"name": n}
        for lab, (x, y) in zip(labels, pts):
            row[f"x_{lab}"], row[f"y_{lab}"] = float(x), float(y)
        row.update({f"dist_{k}": float(v) for k, v in enumerate(d)})
        rows.append(row)
    _write_csv(out / "route_coords.csv", rows, cols)
    outputs = [out / "route_coords.csv"]
    frac = approaching_fraction(dists, ds.names, "severe")
    print(f"severe-tier images approaching gt along k: {frac:.3f}")
    if args.plot:
        from .plotting import plot_route_trajectories

        outputs.append(plot_route_trajectories(coords, ds.names, out / "route_coords.png"))
    write_manifest(out, "route-viz", {"checkpoint": str(args.checkpoint), "K": K,
                                       "severe_approaching_fraction": frac}, ckpt.config.seed, outputs, started)


# -- entry point -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="styleroute", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic degraded/clean dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--holdout", type=int, default=0, help="extra pairs written under test/")
    s.add_argument("--tiers", type=_floats, default=[0.2, 0.8])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=_resolution, default=(64, 64))
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="two-phase training")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--force", action="store_true")
    t.add_argument("--plot", action="store_true", help="also render the loss curve")
    t.add_argument("--log-every", type=int, default=250)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enhance", help="routed enhancement with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--input", required=True, help="image directory or dataset root")
    e.add_argument("--out", required=True)
    e.add_argument("--dump-states", action="store_true", help="also write decode(C_k) for every k")
    e.add_argument("--plot", action="store_true")
    e.add_argument("--resolution", type=_resolution, default=(64, 64))
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_enhance)

    v = sub.add_parser("evaluate", help="PSNR/SSIM/UIQM/UCIQE report")
    v.add_argument("--pred", help="directory of predicted images")
    v.add_argument("--gt", required=True, help="gt directory or dataset root")
    v.add_argument("--checkpoint", help="enhance the dataset at --gt and score the outputs")
    v.add_argument("--routing", help="routing.csv to attach w_k columns")
    v.add_argument("--out", required=True)
    v.add_argument("--resolution", type=_resolution, default=(64, 64))
    v.add_argument("--force", action="store_true")
    v.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="train and compare ablation arms")
    a.add_argument("--data", required=True, help="training dataset root")
    a.add_argument("--test", help="held-out dataset root (defaults to --data)")
    a.add_argument("--arms", help="comma-separated arms (default: all)")
    a.add_argument("--out", required=True)
    a.add_argument("--force", action="store_true")
    a.add_argument("--plot", action="store_true")
    a.add_argument("--log-every", type=int, default=0)
    _add_train_flags(a)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("route-viz", help="2-D PCA coordinates of routing vectors")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True, help="dataset root with input/ and gt/")
    r.add_argument("--out", required=True)
    r.add_argument("--plot", action="store_true")
    r.add_argument("--resolution", type=_resolution, default=(64, 64))
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_route_viz)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        args.func(args)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
