"""Command-line entry point: ``uqpen <subcommand>``.

Exit codes: 0 success, 1 usage/config error, 2 data or file-format error,
3 numeric or invalid-state error.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import calibration, report, uncertainty
from .config import ConfigError, ExperimentConfig, load_config
from .core import FormatError, InvalidStateError, RngStream
from .dataset import Dataset, FoldSplit, Hand, generate, load_csv, save_csv, split
from .model import load_checkpoint, save_checkpoint
from .posterior import EnsemblePredictor, SwagPredictor, build_posterior, load_posterior, save_posterior
from .training import default_workers, train, train_ensemble, train_swag, write_history_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# shared helpers


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "train_hand", None):
        overrides.append(f"eval.train_hand={args.train_hand}")
    if getattr(args, "eval_hand", None):
        overrides.append(f"eval.eval_hand={args.eval_hand}")
    return load_config(args.config, overrides, args.preset)


def _dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data.csv:
        return load_csv(cfg.data.csv)
    return generate(cfg.data)


def _sync_arch(cfg: ExperimentConfig, ds: Dataset) -> None:
    if cfg.arch.class_count != ds.class_count:
        cfg.arch.class_count = ds.class_count


def _folds(cfg: ExperimentConfig, ds: Dataset) -> FoldSplit:
    if cfg.split.manifest:
        fs = FoldSplit.load(cfg.split.manifest)
    else:
        fs = split(ds, cfg.split.mode, cfg.split.folds, cfg.split.seed)
    if cfg.split.fold >= fs.fold_count:
        raise ConfigError(f"split.fold {cfg.split.fold} out of range for {fs.fold_count} folds")
    return fs


def _select_hand(ds: Dataset, idx: np.ndarray, hand: str) -> np.ndarray:
    if hand == "both":
        return idx
    return idx[ds.hand_mask(hand)[idx]]


def _train_indices(cfg, ds) -> np.ndarray:
    fs = _folds(cfg, ds)
    idx = _select_hand(ds, fs.train(cfg.split.fold), cfg.eval.train_hand)
    if idx.size == 0:
        raise DataError(f"train hand selector {cfg.eval.train_hand!r} leaves no training samples")
    return idx


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.report.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if not out.parent.exists():
        raise DataError(f"output directory does not exist: {out.parent}")
    ds = generate(cfg.data)
    save_csv(ds, out)
    fs = split(ds, cfg.split.mode, cfg.split.folds, cfg.split.seed)
    fs.save(out.with_suffix(".splits.json"))
    n_r = int(ds.hand_mask(Hand.RIGHT).sum())
    print(f"n_U={len(ds)} right={n_r} left={len(ds) - n_r} classes={ds.class_count}")
    print(f"wrote {out} and {out.with_suffix('.splits.json')}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    _sync_arch(cfg, ds)
    idx = _train_indices(cfg, ds)
    out = _out_dir(args, cfg)
    params, history = train(cfg.arch, ds, idx, cfg.train)
    save_checkpoint(params, cfg.arch, out / "model.ckpt")
    write_history_csv(history, out / "history.csv")
    _write_config(cfg, out)
    print(f"trained on {idx.size} samples for {len(history)} epochs -> {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_swag_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    _sync_arch(cfg, ds)
    idx = _train_indices(cfg, ds)
    out = _out_dir(args, cfg)
    stats, swa, history = train_swag(cfg.arch, ds, idx, cfg.train, cfg.swag)
    post = build_posterior(stats, cfg.eval.swag_scale)
    save_posterior(post, cfg.arch, out / "swag.post")
    save_checkpoint(swa, cfg.arch, out / "swa.ckpt")
    write_history_csv(history, out / "history.csv")
    _write_config(cfg, out)
    print(f"SWAG: {stats.n_snapshots} snapshots, rank {post.rank} -> {out / 'swag.post'}")
    return EXIT_OK


def cmd_ensemble_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    _sync_arch(cfg, ds)
    idx = _train_indices(cfg, ds)
    out = _out_dir(args, cfg)
    workers = args.workers if args.workers is not None else default_workers()
    members, histories = train_ensemble(cfg.arch, ds, idx, cfg.train, cfg.ensemble, workers=workers)
    for i, (m, h) in enumerate(zip(members, histories)):
        save_checkpoint(m, cfg.arch, out / f"member_{i:02d}.ckpt")
        write_history_csv(h, out / f"history_{i:02d}.csv")
    _write_config(cfg, out)
    print(f"trained {len(members)} members -> {out}")
    return EXIT_OK


def _load_predictor(artifacts: Path, kind: str):
    if not artifacts.is_dir():
        raise DataError(f"artifact directory not found: {artifacts}")
    members = sorted(artifacts.glob("member_*.ckpt"))
    if kind == "auto":
        if (artifacts / "swag.post").exists():
            kind = "swag"
        elif members:
            kind = "ensemble"
        elif (artifacts / "model.ckpt").exists():
            kind = "single"
        else:
            raise DataError(f"no model artifacts (swag.post, member_*.ckpt, model.ckpt) in {artifacts}")
    if kind == "swag":
        arch, post = load_posterior(artifacts / "swag.post")
        return arch, SwagPredictor(arch, post), kind
    if kind == "ensemble":
        if not members:
            raise DataError(f"no member_*.ckpt files in {artifacts}")
        loaded = [load_checkpoint(p) for p in members]
        arch = loaded[0][0]
        if any(a != arch for a, _ in loaded):
            raise FormatError("ensemble members disagree on architecture")
        return arch, EnsemblePredictor(arch, [v for _, v in loaded]), kind
    arch, params = load_checkpoint(artifacts / "model.ckpt")
    return arch, EnsemblePredictor(arch, [params]), "single"


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ds = _dataset(cfg)
    arch, predictor, kind = _load_predictor(Path(args.artifacts), args.kind)
    if arch.class_count != ds.class_count:
        raise DataError(f"model has {arch.class_count} classes, data has {ds.class_count}")
    fs = _folds(cfg, ds)
    base = fs.test(cfg.split.fold) if cfg.eval.split == "test" else fs.train(cfg.split.fold)
    idx = _select_hand(ds, base, cfg.eval.eval_hand)
    if idx.size == 0:
        raise DataError(
            f"eval hand selector {cfg.eval.eval_hand!r} on the {cfg.eval.split} split leaves an empty test set"
        )
    rng = RngStream(cfg.eval.seed).split(7)
    rep = uncertainty.evaluate(predictor, ds, idx, cfg.eval.draws, rng)
    table = calibration.calibrate(rep.confidence, rep.correct, cfg.eval.bins)
    sweep = uncertainty.entropy_threshold_sweep(rep)

    out = Path(args.bundle or Path(cfg.report.out_dir) / "bundle")
    out.mkdir(parents=True, exist_ok=True)
    uncertainty.write_report(rep, out)
    uncertainty.write_sweep_csv(sweep, out / "entropy_sweep.csv")
    calibration.write_calibration_csv(table, out / "calibration.csv")
    calibration.write_summary_json(
        out / "summary.json", rep.accuracy, table.ece,
        float(rep.total_bits.mean()), float(rep.aleatoric_bits.mean()), float(rep.epistemic_bits.mean()),
    )
    meta = {
        "kind": kind, "n": rep.n, "train_hand": cfg.eval.train_hand, "eval_hand": cfg.eval.eval_hand,
        "split": cfg.eval.split, "fold": cfg.split.fold, "draws": cfg.eval.draws,
    }
    (out / "bundle.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(
        f"n={rep.n} accuracy={rep.accuracy:.4f} ece={table.ece:.4f} "
        f"mean_tu={rep.total_bits.mean():.4f} mean_au={rep.aleatoric_bits.mean():.4f} "
        f"mean_eu={rep.epistemic_bits.mean():.4f}"
    )
    return EXIT_OK


BUNDLE_FILES = (
    "per_sample.csv", "aleatoric.csv", "epistemic.csv", "confusion.csv", "per_class.csv",
    "calibration.csv", "entropy_sweep.csv", "summary.json",
)


def _read_sweep(path) -> list[uncertainty.SweepRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [
            uncertainty.SweepRow(float(r[0]), float(r[1]), float(r[2]), int(r[3]), int(r[4]))
            for r in reader if r
        ]


def cmd_report(args) -> int:
    bundle = Path(args.bundle)
    for name in BUNDLE_FILES:
        if not (bundle / name).exists():
            raise DataError(f"malformed bundle: missing {bundle / name}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        names, alea = uncertainty.read_matrix_csv(bundle / "aleatoric.csv")
        _, epis = uncertainty.read_matrix_csv(bundle / "epistemic.csv")
        _, conf = uncertainty.read_matrix_csv(bundle / "confusion.csv")
        table = calibration.read_calibration_csv(bundle / "calibration.csv")
        sweep = _read_sweep(bundle / "entropy_sweep.csv")
        _, per_class = uncertainty.read_matrix_csv(bundle / "per_class.csv")
    except (ValueError, IndexError, StopIteration) as exc:
        raise DataError(f"malformed bundle in {bundle}: {exc}") from None

    # one colour scale for all three heatmaps; confusion as a fraction
    conf_frac = conf / 100.0
    stack = np.concatenate([alea.ravel(), epis.ravel(), conf_frac.ravel()])
    vmin, vmax = float(stack.min()), float(stack.max())
    report.write_svg(report.heatmap_svg(alea, names, vmin, vmax, "Aleatoric uncertainty"), out / "aleatoric.svg")
    report.write_svg(report.heatmap_svg(epis, names, vmin, vmax, "Epistemic uncertainty"), out / "epistemic.svg")
    report.write_svg(report.heatmap_svg(conf_frac, names, vmin, vmax, "Confusion (fraction of true class)"),
                     out / "confusion.svg")
    report.write_svg(report.reliability_svg(calibration.reliability_data(table)), out / "reliability.svg")
    report.write_svg(report.per_class_bars_svg(per_class, names), out / "uncertainty_per_class.svg")
    top = sweep[-1].threshold if sweep else 1.0
    markers = [t for t in (1.0, 2.0) if t <= top] or [top / 2]
    report.write_svg(report.sweep_svg(sweep, markers), out / "entropy_sweep.svg")
    if out.resolve() != bundle.resolve():
        for name in BUNDLE_FILES:
            shutil.copyfile(bundle / name, out / name)
    print(f"wrote figures to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uqpen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, hands=False):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--preset", choices=("desk", "paper"), default="desk")
        if hands:
            p.add_argument("--train-hand", choices=("right", "both"))
            p.add_argument("--eval-hand", choices=("right", "left", "both"))

    p = sub.add_parser("gen", help="generate a synthetic dataset CSV and split manifest")
    common(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen)

    for name, func, help_ in (
        ("train", cmd_train, "train one network"),
        ("swag-train", cmd_swag_train, "train and collect a SWAG posterior"),
        ("ensemble-train", cmd_ensemble_train, "train a deep ensemble"),
    ):
        p = sub.add_parser(name, help=help_)
        common(p, hands=True)
        p.add_argument("--out", help="artifact directory (default: report.out_dir)")
        if name == "ensemble-train":
            p.add_argument("--workers", type=int, help="parallel members (default: UQPEN_THREADS or CPU count)")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="uncertainty and calibration report for trained artifacts")
    common(p, hands=True)
    p.add_argument("--artifacts", required=True, help="directory with model.ckpt, swag.post or member_*.ckpt")
    p.add_argument("--kind", choices=("auto", "single", "swag", "ensemble"), default="auto")
    p.add_argument("--bundle", help="output directory for the report bundle")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render SVG figures from a report bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"uqpen: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidStateError, FloatingPointError) as exc:
        print(f"uqpen: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, OSError, ValueError) as exc:
        print(f"uqpen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
