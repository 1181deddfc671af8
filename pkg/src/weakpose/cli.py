"""Command-line front end: ``weakpose {synth,train,eval,calib}``.

Exit codes are part of the interface: 0 success, 2 usage or configuration
error, 3 numerical failure. Log verbosity comes from ``WEAKPOSE_LOG``
(a logging level name, default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .alignment import DegeneratePoseError, estimate_rotation
from .losses import LossWeights
from .metrics import METRIC_COLUMNS, _fmt, joint_errors
from .regressor import load_checkpoint, save_checkpoint
from .skeleton import Skeleton, default_skeleton
from .synth import CaptureConfig, generate_dataset, load_dataset, save_dataset
from .trainer import TrainConfig, evaluate, predict, train

log = logging.getLogger("weakpose")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    """Bad arguments, missing or malformed files."""


def _read_json(path, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{what} {p} is not valid JSON: {e}") from None


def _load_dataset(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"dataset not found: {p}")
    try:
        return load_dataset(p)
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read dataset {p}: {e}") from None


def _load_params(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    try:
        return load_checkpoint(p)
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read checkpoint {p}: {e}") from None


def _check_skeleton(params, ds, path) -> None:
    names = params.meta.get("joint_names")
    if params.n_joints != ds.skeleton.n_joints or (names is not None and list(names) != list(ds.skeleton.names)):
        raise UsageError(f"checkpoint {path} was trained on a different skeleton than the dataset")


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _figure_path(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}_{suffix}.png")


# --- synth -----------------------------------------------------------------

def cmd_synth(args) -> int:
    d = _read_json(args.config, "capture config") if args.config else {}
    try:
        cfg = CaptureConfig.from_dict(d)
        if args.seed is not None:
            cfg = CaptureConfig.from_dict({**cfg.to_dict(), "rng_seed": args.seed})
        skel = default_skeleton()
        if args.skeleton:
            skel = Skeleton.from_dict(_read_json(args.skeleton, "skeleton"))
        ds = generate_dataset(cfg, skel, [int(i) for i in args.labeled.split(",")])
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid capture config: {e}") from None
    save_dataset(ds, args.out, include_rotations=not args.no_rotations)
    n_lab_subj = len(ds.meta["labeled_subjects"])
    print(f"subjects: {cfg.n_subjects} ({n_lab_subj} labeled, {cfg.n_subjects - n_lab_subj} unlabeled)"
          f" + {cfg.validation_subjects} validation")
    print(f"labeled frames: {len(ds.labeled)}")
    print(f"unlabeled samples: {len(ds.unlabeled)} x {cfg.n_cameras} views")
    print(f"validation frames: {len(ds.validation)}")
    print(f"noise: {cfg.noise_sigma_mm:g} mm, cameras: {cfg.rotation_model}, seed: {cfg.rng_seed}")
    return EXIT_OK


# --- train -----------------------------------------------------------------

def build_train_config(args) -> TrainConfig:
    d = _read_json(args.config, "train config") if args.config else {}
    try:
        cfg = TrainConfig.from_dict(d)
        changes = {}
        if args.seed is not None:
            changes["rng_seed"] = args.seed
        if args.rotations:
            changes["rotations"] = args.rotations
        if args.distance:
            changes["distance"] = args.distance
        if args.iterations is not None:
            changes["iterations"] = args.iterations
        if args.mode == "baseline":
            changes["weights"] = LossWeights(0.0, cfg.weights.w_supervised, 0.0)
        return cfg.replace(**changes)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid train config: {e}") from None


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    cfg = build_train_config(args)
    if cfg.rotations == "known" and any(np.isnan(s.rotations).any() for s in ds.unlabeled):
        raise UsageError("dataset has no ground-truth rotations; use --rotations estimated")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        theta, tlog = train(ds, cfg)
    except ValueError as e:
        if isinstance(e, DegeneratePoseError):
            raise
        raise UsageError(str(e)) from None
    save_checkpoint(out / "checkpoint.json", theta, joint_names=list(ds.skeleton.names), mode=args.mode)
    (out / "train_log.csv").write_text(tlog.to_csv())
    (out / "pretrain_log.csv").write_text(tlog.pretrain.to_csv())
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    if not args.no_figures:
        from .plotting import validation_curves
        validation_curves({args.mode: tlog.val_curve()}, out / "validation_curve.png",
                          pretrain=tlog.pretrain.val_curve())
    it, v = tlog.val_curve()
    print(f"final validation NMPJPE {v[-1]:.2f} mm (min {v.min():.2f} at iteration {it[v.argmin()]})")
    return EXIT_OK


# --- eval ------------------------------------------------------------------

def _eval_samples(ds, split):
    samples = {"validation": ds.validation, "labeled": ds.labeled}[split]
    if not samples:
        raise UsageError(f"dataset has no {split} samples")
    return samples


def _oracle(samples):
    poses = np.stack([s.pose for s in samples])
    return lambda features: poses


def cmd_eval(args) -> int:
    ds = _load_dataset(args.data)
    samples = _eval_samples(ds, args.split)
    if args.oracle:
        model, label = _oracle(samples), "oracle"
    elif args.checkpoint:
        model, label = _load_params(args.checkpoint), args.checkpoint
        _check_skeleton(model, ds, args.checkpoint)
    else:
        raise UsageError("eval needs --checkpoint or --oracle")
    report = evaluate(model, samples, ds.skeleton)
    rows = [[label] + [_fmt(v) for v in report.as_row()]]
    if args.compare:
        other = _load_params(args.compare)
        _check_skeleton(other, ds, args.compare)
        rep2 = evaluate(other, samples, ds.skeleton)
        rows.append([args.compare] + [_fmt(v) for v in rep2.as_row()])
        delta = [a - b for a, b in zip(report.as_row(), rep2.as_row())]
        delta[-1] = report.n_samples
        rows.append(["delta"] + [_fmt(v) for v in delta])
    out = Path(args.out)
    _write_csv(out, ("model",) + METRIC_COLUMNS, rows)
    if not args.no_figures:
        from .plotting import per_joint_errors
        preds = predict(model, np.stack([s.features for s in samples]))
        errs = [joint_errors(p, s.pose) for p, s in zip(preds, samples)]
        per_joint_errors(errs, ds.skeleton.names, _figure_path(out, "per_joint"), label=Path(label).name)
    print(report.to_csv(), end="")
    return EXIT_OK


# --- calib -----------------------------------------------------------------

def geodesic_deg(r1, r2) -> float:
    """Angle of the relative rotation ``r1^T r2`` in degrees."""
    return float(np.degrees(Rotation.from_matrix(np.asarray(r1).T @ np.asarray(r2)).magnitude()))


def calibrate(ds, model=None, oracle_noise_mm: float = 0.0, seed: int = 0, normalize: str = "full"):
    """Per-view rotation estimates from predictions, plus errors where truth exists.

    ``model=None`` uses the ground-truth poses as predictions, optionally
    perturbed by isotropic Gaussian noise. Returns a list of row dicts.
    """
    if not ds.unlabeled:
        raise UsageError("dataset has no multi-view samples to calibrate")
    if ds.unlabeled[0].n_views < 2:
        raise UsageError("calibration needs at least two views per sample")
    rng = np.random.default_rng(seed)
    torso = ds.skeleton.torso_set
    rows = []
    for idx, s in enumerate(ds.unlabeled):
        if model is None:
            preds = s.poses + oracle_noise_mm * rng.standard_normal(s.poses.shape)
            preds = preds - preds[:, :, :1]
        else:
            preds = predict(model, s.features)
        for c in range(1, s.n_views):
            r = estimate_rotation(preds[c], preds[0], torso, normalize).rotation
            err = float("nan") if np.isnan(s.rotations[c]).any() else geodesic_deg(s.rotations[c], r)
            rows.append({"sample": idx, "subject": s.subject, "t": s.t, "camera": c,
                         "angle_error_deg": err, "rotation": r})
    return rows


def calib_stats(errors) -> dict:
    e = np.asarray(errors, dtype=float)
    return {"n": int(e.size), "mean_deg": float(e.mean()), "median_deg": float(np.median(e)),
            "max_deg": float(e.max())}


def cmd_calib(args) -> int:
    ds = _load_dataset(args.data)
    if args.oracle:
        model = None
    elif args.checkpoint:
        model = _load_params(args.checkpoint)
        _check_skeleton(model, ds, args.checkpoint)
    else:
        raise UsageError("calib needs --checkpoint or --oracle")
    rows = calibrate(ds, model, args.oracle_noise, args.seed, args.rotation_norm)
    out = Path(args.out)
    if args.dump:
        _write_csv(args.dump, ("sample", "subject", "t", "camera", "angle_error_deg")
                   + tuple(f"r{i}{j}" for i in range(3) for j in range(3)),
                   [[r["sample"], r["subject"], r["t"], r["camera"], repr(r["angle_error_deg"])]
                    + [repr(float(x)) for x in r["rotation"].ravel()] for r in rows])
    errors = [r["angle_error_deg"] for r in rows]
    if np.isnan(errors).any():
        print(f"estimated {len(rows)} rotations; dataset has no ground-truth rotations to compare")
        _write_csv(out, ("n",), [[len(rows)]])
        return EXIT_OK
    st = calib_stats(errors)
    _write_csv(out, tuple(st), [[_fmt(v) for v in st.values()]])
    if not args.no_figures:
        from .plotting import angle_error_histogram
        angle_error_histogram(errors, _figure_path(out, "angle_errors"))
    print(f"rotations: {st['n']}  mean {st['mean_deg']:.4f} deg  median {st['median_deg']:.4f} deg"
          f"  max {st['max_deg']:.4f} deg")
    return EXIT_OK


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakpose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic multi-view dataset")
    s.add_argument("--config", help="CaptureConfig JSON (defaults if omitted)")
    s.add_argument("--skeleton", help="skeleton JSON (built-in 17-joint skeleton if omitted)")
    s.add_argument("--seed", type=int, help="overrides rng_seed from the config")
    s.add_argument("--labeled", default="0", help="comma-separated labeled subject ids (default 0)")
    s.add_argument("--no-rotations", action="store_true", help="omit ground-truth rotations from the file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="pretrain and run weakly supervised training")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TrainConfig JSON (defaults if omitted)")
    t.add_argument("--mode", choices=("baseline", "weak"), default="weak")
    t.add_argument("--rotations", choices=("known", "estimated"))
    t.add_argument("--distance", choices=("se", "nse"))
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metric report for a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--oracle", action="store_true", help="use the labels as predictions")
    e.add_argument("--compare", help="second checkpoint; adds its row and a delta row")
    e.add_argument("--split", choices=("validation", "labeled"), default="validation")
    e.add_argument("--out", required=True, help="CSV path; figures are written next to it")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("calib", help="estimate camera rotations from predicted poses")
    c.add_argument("--data", required=True)
    c.add_argument("--checkpoint")
    c.add_argument("--oracle", action="store_true", help="use ground-truth poses as predictions")
    c.add_argument("--oracle-noise", type=float, default=0.0, help="Gaussian noise on oracle poses [mm]")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--rotation-norm", choices=("full", "torso"), default="full")
    c.add_argument("--out", required=True, help="CSV with summary statistics")
    c.add_argument("--dump", help="CSV with one row per estimated rotation")
    c.add_argument("--no-figures", action="store_true")
    c.set_defaults(func=cmd_calib)
    return p


def main(argv=None) -> int:
    level = os.environ.get("WEAKPOSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"weakpose {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, DegeneratePoseError, np.linalg.LinAlgError) as e:
        print(f"weakpose {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
