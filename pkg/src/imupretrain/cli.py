"""Command-line entry point.

Subcommands: preprocess, synth, pretrain, finetune, eval, search,
``mask preview`` and ``semantics dump``.  Every command is driven by one
sectioned key=value config file plus ``--set section.key=value`` overrides,
writes its outputs under ``data.out_dir`` and echoes the effective config
there.  Exit codes: 0 success, 1 validation error, 2 runtime/numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import imu_io, report, synth
from .config import ExperimentConfig
from .errors import (
    ConfigError,
    EmptyInputError,
    InsufficientDataError,
    ParseError,
    PipelineError,
    UpsamplingError,
)
from .masking import LEVELS, mask_period, mask_point, mask_sensor, mask_subperiod
from .nets.checkpoint import load_model, save_model
from .semantics import detect_key_points, detect_main_period, energy_series
from .trainer import evaluate, finetune, predict, pretrain, window_semantics
from .weight_search import (
    WeightVector,
    load_history,
    search,
    trial_to_dict,
)

_VALIDATION_ERRORS = (
    ConfigError,
    ParseError,
    EmptyInputError,
    InsufficientDataError,
    UpsamplingError,
)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    try:
        args.func(args)
        return 0
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imupretrain",
        description="Self-supervised IMU pre-training with semantic masking "
        "and GP-based weight search.",
    )
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("-c", "--config", default=None, help="config file (INI)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override one config value",
        )
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    p = sub.add_parser("preprocess", help="CSV + schema -> window containers")
    common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="generate synthetic labelled windows")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="masked-reconstruction pre-training")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a pre-trained backbone")
    common(p)
    p.add_argument("--scratch", action="store_true", help="skip the pre-trained backbone")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a fine-tuned model on the test split")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="GP search over pre-training weights")
    common(p)
    p.add_argument("--resume", action="store_true", help="continue from history.jsonl")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("mask", help="masking utilities")
    mask_sub = p.add_subparsers(dest="mask_command")
    mp = mask_sub.add_parser("preview", help="render one window's four masks")
    common(mp)
    mp.add_argument("--window", type=int, default=0, help="window index in train split")
    mp.add_argument("--seed", type=int, default=0, help="mask draw seed")
    mp.set_defaults(func=cmd_mask_preview)

    p = sub.add_parser("semantics", help="semantics utilities")
    sem_sub = p.add_subparsers(dest="semantics_command")
    sd = sem_sub.add_parser("dump", help="dump key points and period per window")
    common(sd)
    sd.add_argument("--split", default="train", choices=["train", "valid", "test"])
    sd.add_argument("--limit", type=int, default=0, help="max windows (0 = all)")
    sd.set_defaults(func=cmd_semantics_dump)

    return parser


def _load_cfg(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config, args.overrides)


def _accel_cols(manifest: dict) -> tuple[int, ...]:
    layout = manifest.get("channel_layout")
    if not layout:
        return (0, 1, 2)
    return tuple(i for i, (kind, _axis) in enumerate(layout) if kind == "accel")


def _layout_for_channels(n_channels: int) -> list[list[str]]:
    kinds = ["accel", "gyro", "mag"]
    layout = []
    for group in range(n_channels // 3):
        for axis in ("x", "y", "z"):
            layout.append([kinds[group % 3], axis])
    return layout


def _write_split(out_dir: Path, split, manifest_extra: dict) -> None:
    imu_io.write_windows(out_dir / "train.bin", split.train)
    imu_io.write_windows(out_dir / "valid.bin", split.valid)
    imu_io.write_windows(out_dir / "test.bin", split.test)
    l_win, d = split.train[0].values.shape
    manifest = {
        "l_win": l_win,
        "d": d,
        "counts": {
            "train": len(split.train),
            "valid": len(split.valid),
            "test": len(split.test),
        },
        "split_seed": split.seed,
        **manifest_extra,
    }
    imu_io.write_manifest(out_dir / "manifest.json", manifest)


def cmd_preprocess(args) -> None:
    cfg = _load_cfg(args)
    params = cfg.preprocess_params()
    schema = imu_io.load_schema(cfg.schema_path())
    recordings = imu_io.load_recordings(cfg.csv_path(), schema)
    windows = []
    for rec in recordings:
        rec = imu_io.normalize(rec)
        rec = imu_io.resample(rec, params["target_hz"])
        windows.extend(imu_io.slice_windows(rec, params["window_len"]))
    if not windows:
        raise EmptyInputError("preprocessing produced no windows")

    # remap labels to a contiguous 0..C-1 set
    raw_labels = sorted({w.label for w in windows if w.label is not None})
    label_map = {raw: i for i, raw in enumerate(raw_labels)}
    for w in windows:
        if w.label is not None:
            w.label = label_map[w.label]

    split = imu_io.split_dataset(windows, params["ratios"], params["split_seed"])
    out_dir = cfg.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_split(
        out_dir,
        split,
        {
            "source_csv": str(cfg.csv_path()),
            "channel_layout": [list(pair) for pair in schema.layout],
            "label_map": {str(k): v for k, v in label_map.items()},
            "ratios": list(params["ratios"]),
        },
    )
    cfg.echo(out_dir)
    (out_dir / "preprocess.config.ini").write_bytes((out_dir / "config.ini").read_bytes())
    print(f"wrote {len(windows)} windows to {out_dir} "
          f"({len(split.train)}/{len(split.valid)}/{len(split.test)} train/valid/test)")


def cmd_synth(args) -> None:
    cfg = _load_cfg(args)
    spec = cfg.synthetic_spec()
    params = cfg.preprocess_params()
    windows, true_periods = synth.generate(spec)
    split = imu_io.split_dataset(windows, params["ratios"], params["split_seed"])
    out_dir = cfg.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    imu_io.write_windows(out_dir / "windows.bin", windows)
    _write_split(
        out_dir,
        split,
        {
            "synthetic": True,
            "channel_layout": _layout_for_channels(spec.n_channels),
            "true_periods": true_periods,
            "ratios": list(params["ratios"]),
        },
    )
    cfg.echo(out_dir)
    (out_dir / "synth.config.ini").write_bytes((out_dir / "config.ini").read_bytes())
    print(f"wrote {len(windows)} synthetic windows to {out_dir}")


def cmd_pretrain(args) -> None:
    cfg = _load_cfg(args)
    out_dir = cfg.out_dir()
    manifest = imu_io.read_manifest(out_dir / "manifest.json")
    train = imu_io.read_windows(out_dir / "train.bin")
    encoder = cfg.encoder_config(input_dim=manifest["d"], max_len=manifest["l_win"])
    result = pretrain(
        train,
        cfg.loss_weights(),
        cfg.pretrain_config(),
        encoder=encoder,
        mask_cfg=cfg.mask_config(),
        accel_cols=_accel_cols(manifest),
        log_path=out_dir / "pretrain_log.jsonl",
    )
    save_model(out_dir / "backbone.ckpt", result.model)
    if not args.no_figures:
        report.save_loss_curves(result.trace, out_dir / "pretrain_loss.png")
    cfg.echo(out_dir)
    (out_dir / "pretrain.config.ini").write_bytes((out_dir / "config.ini").read_bytes())
    print(f"pre-trained {cfg.pretrain_config().epochs_pretrain} epochs; "
          f"final loss {result.trace[-1]['total']:.6f}" if result.trace else "no epochs run")


def cmd_finetune(args) -> None:
    cfg = _load_cfg(args)
    out_dir = cfg.out_dir()
    manifest = imu_io.read_manifest(out_dir / "manifest.json")
    train = imu_io.read_windows(out_dir / "train.bin")
    valid = imu_io.read_windows(out_dir / "valid.bin")
    params = cfg.preprocess_params()
    labelled = imu_io.subsample_labels(train, params["label_rate"], params["label_seed"])
    ft_cfg = cfg.finetune_config()
    if args.scratch:
        from .nets.model import init_params

        encoder = cfg.encoder_config(input_dim=manifest["d"], max_len=manifest["l_win"])
        backbone = init_params(encoder, seed=ft_cfg.seed)
    else:
        backbone = load_model(out_dir / "backbone.ckpt")
    result = finetune(
        backbone, labelled, valid, ft_cfg, log_path=out_dir / "finetune_log.jsonl"
    )
    save_model(out_dir / "model.ckpt", result.model)
    metrics = {
        "best_epoch": result.best_epoch,
        "n_labelled": len(labelled),
        "validation": result.metrics.to_dict(),
    }
    (out_dir / "finetune_metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    )
    if not args.no_figures and result.history:
        report.save_finetune_curves(result.history, out_dir / "finetune_curves.png")
    cfg.echo(out_dir)
    (out_dir / "finetune.config.ini").write_bytes((out_dir / "config.ini").read_bytes())
    print(f"fine-tuned on {len(labelled)} labelled windows; "
          f"best val accuracy {result.metrics.accuracy:.4f} (epoch {result.best_epoch})")


def cmd_eval(args) -> None:
    cfg = _load_cfg(args)
    out_dir = cfg.out_dir()
    test = imu_io.read_windows(out_dir / "test.bin")
    model = load_model(out_dir / "model.ckpt")
    metrics = evaluate(model, test)
    (out_dir / "eval_metrics.json").write_text(
        json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    y_true = np.array([w.label for w in test])
    y_pred = predict(model, test)
    with open(out_dir / "eval_predictions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "label", "prediction"])
        for i, (t, p) in enumerate(zip(y_true, y_pred)):
            writer.writerow([i, int(t), int(p)])
    if not args.no_figures:
        report.save_confusion_matrix(y_true, y_pred, out_dir / "eval_confusion.png")
    cfg.echo(out_dir)
    (out_dir / "eval.config.ini").write_bytes((out_dir / "config.ini").read_bytes())
    print(f"test accuracy {metrics.accuracy:.4f}, macro-F1 {metrics.macro_f1:.4f}")


def cmd_search(args) -> None:
    cfg = _load_cfg(args)
    out_dir = cfg.out_dir()
    manifest = imu_io.read_manifest(out_dir / "manifest.json")
    train = imu_io.read_windows(out_dir / "train.bin")
    valid = imu_io.read_windows(out_dir / "valid.bin")
    params = cfg.preprocess_params()
    labelled = imu_io.subsample_labels(train, params["label_rate"], params["label_seed"])
    encoder = cfg.encoder_config(input_dim=manifest["d"], max_len=manifest["l_win"])
    mask_cfg = cfg.mask_config()
    accel = _accel_cols(manifest)
    pre_cfg = cfg.pretrain_config()
    ft_cfg = cfg.finetune_config()

    def objective(weights: WeightVector) -> float:
        result = pretrain(
            train,
            weights_to_losses(weights),
            pre_cfg,
            encoder=encoder,
            mask_cfg=mask_cfg,
            accel_cols=accel,
        )
        ft = finetune(result.model, labelled, valid, ft_cfg)
        return getattr(ft.metrics, ft_cfg.best_metric)

    history_path = out_dir / "history.jsonl"
    prior = None
    if args.resume:
        if not history_path.exists():
            raise ConfigError(f"--resume given but {history_path} does not exist")
        prior = load_history(history_path)
    elif history_path.exists():
        history_path.unlink()

    result = search(objective, cfg.search_config(), history=prior, log_path=history_path)
    summary = {
        "best_weights": list(result.best.as_array()),
        "best_performance": max(t.performance for t in result.history),
        "n_trials": len(result.history),
        "trials": [trial_to_dict(t) for t in result.history],
    }
    (out_dir / "search_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    if not args.no_figures:
        report.save_search_curve([trial_to_dict(t) for t in result.history],
                                 out_dir / "search_curve.png")
    cfg.echo(out_dir)
    (out_dir / "search.config.ini").write_bytes((out_dir / "config.ini").read_bytes())
    print(f"search finished after {len(result.history)} trials; "
          f"best performance {summary['best_performance']:.4f} "
          f"at weights {np.round(result.best.as_array(), 4).tolist()}")


def weights_to_losses(weights: WeightVector):
    from .nets.losses import LossWeights

    return LossWeights(weights.w_se, weights.w_po, weights.w_sp, weights.w_pe)


def cmd_mask_preview(args) -> None:
    cfg = _load_cfg(args)
    out_dir = cfg.out_dir()
    manifest = imu_io.read_manifest(out_dir / "manifest.json")
    train = imu_io.read_windows(out_dir / "train.bin")
    if not 0 <= args.window < len(train):
        raise ConfigError(f"--window must be in [0, {len(train)}), got {args.window}")
    window = train[args.window]
    accel = _accel_cols(manifest)
    sems = window_semantics([window], accel)[0]
    mask_cfg = cfg.mask_config()
    masked = {
        "sensor": mask_sensor(window, mask_cfg, (args.seed, 0)),
        "point": mask_point(window, mask_cfg, (args.seed, 1)),
        "subperiod": mask_subperiod(window, sems.keypoints, (args.seed, 2), mask_cfg),
        "period": mask_period(window, sems.period, (args.seed, 3), mask_cfg),
    }
    preview_dir = out_dir / "mask_preview"
    preview_dir.mkdir(parents=True, exist_ok=True)
    for level, mw in masked.items():
        grid = mw.spec.bool_mask().astype(int)
        with open(preview_dir / f"mask_{level}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in grid:
                writer.writerow(row.tolist())
    if not args.no_figures:
        report.save_mask_preview(
            window.values,
            {level: mw.spec for level, mw in masked.items()},
            preview_dir / "preview.png",
        )
    print(f"wrote mask grids for window {args.window} to {preview_dir}")


def cmd_semantics_dump(args) -> None:
    cfg = _load_cfg(args)
    out_dir = cfg.out_dir()
    manifest = imu_io.read_manifest(out_dir / "manifest.json")
    windows = imu_io.read_windows(out_dir / f"{args.split}.bin")
    if args.limit:
        windows = windows[: args.limit]
    accel = _accel_cols(manifest)
    w, d = cfg.keypoint_params()
    rows = []
    first = None
    for i, window in enumerate(windows):
        e = energy_series(window, accel)
        kp = detect_key_points(e, w, d)
        try:
            period = detect_main_period(e)
            t_main, f_index = period.t_main, period.f_index
        except PipelineError:
            period, t_main, f_index = None, "", ""
        if first is None:
            first = (e, kp, period)
        rows.append(
            [
                i,
                "|".join(str(p) for p in kp.peaks),
                "|".join(str(v) for v in kp.valleys),
                t_main,
                f_index,
            ]
        )
    path = out_dir / f"semantics_{args.split}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "peaks", "valleys", "t_main", "f_index"])
        writer.writerows(rows)
    if not args.no_figures and first is not None:
        report.save_semantics_figure(*first, out_dir / f"semantics_{args.split}.png")
    print(f"wrote semantics of {len(rows)} windows to {path}")


if __name__ == "__main__":
    sys.exit(main())
