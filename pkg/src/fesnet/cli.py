"""Command-line entry point: train, evaluate, predict, gradcheck, params.

Every run echoes its effective configuration (defaults < config file <
flags) to the output directory so it can be replayed with --config. The
FESNET_THREADS environment variable caps BLAS worker threads; 1 gives
fully deterministic execution.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    DatasetError,
    DatasetSpec,
    Sample,
    load_dataset,
    prepare_sample,
    read_image,
    resize_image_bilinear,
    write_png,
)
from .gradcheck import run_gradcheck_suite
from .model import FesNet, count_parameters
from .report import (
    format_metric_table,
    save_loss_curve,
    save_metric_bars,
    write_metrics_kv,
    write_metrics_tsv,
)
from .train import TrainingAborted, evaluate, init_rng, train


class CliError(RuntimeError):
    pass


def _apply_thread_cap():
    raw = os.environ.get("FESNET_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"FESNET_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise CliError(f"FESNET_THREADS must be >= 1, got {n}")
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=n)


def _merged(args) -> dict:
    file_values = cfgmod.read_config(args.config) if getattr(args, "config", None) else None
    flags = {}
    for key in cfgmod.DEFAULTS:
        attr = {"batch_size": "batch", "crop_size": "crop"}.get(key, key)
        if hasattr(args, attr):
            flags[key] = getattr(args, attr)
    return cfgmod.merge(file_values, flags)


def _require(values: dict, *keys):
    for key in keys:
        if not values.get(key):
            raise CliError(f"missing required option --{key.replace('_', '-')}")


def _prepare_out_dir(path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and any(p.iterdir()) and not force:
        raise CliError(f"output directory {p} is not empty (pass --force to overwrite)")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_samples(values: dict):
    _require(values, "dataset", "root")
    root = Path(values["root"])
    if not root.is_dir():
        raise CliError(f"dataset root {root} is not a directory")
    return load_dataset(DatasetSpec(kind=values["dataset"], root=root))


def cmd_train(args) -> int:
    values = _merged(args)
    _require(values, "out")
    samples = _load_samples(values)
    out = _prepare_out_dir(values["out"], args.force)
    cfgmod.write_config(out / "effective.cfg", values)

    model = FesNet(cfgmod.arch_from(values), rng=init_rng(values["seed"]))
    train_cfg = cfgmod.train_config_from(values)
    final_ckpt, log = train(train_cfg, model, samples, out_dir=out)
    save_loss_curve(log.steps, out / "loss_curve.png")
    print(f"checkpoint: {final_ckpt}")
    print(f"loss log:   {out / 'loss_log.txt'}")
    return 0


def cmd_evaluate(args) -> int:
    values = _merged(args)
    _require(values, "checkpoint", "out")
    model, _ = load_checkpoint(values["checkpoint"])
    samples = _load_samples(values)
    out = _prepare_out_dir(values["out"], args.force)
    cfgmod.write_config(out / "effective.cfg", values)

    total, rows = evaluate(model.predict_probs, samples, out_dir=out,
                           split=values["split"], target_width=values["target_width"],
                           pad_multiple=values["pad_multiple"],
                           aggregate_mode=values["aggregate"])
    total_d = total.as_dict()
    table = format_metric_table(rows, total_d,
                                title=f"{values['dataset']} / {values['split']}",
                                aggregate_mode=values["aggregate"])
    (out / "metrics.txt").write_text(table)
    write_metrics_tsv(out / "metrics.tsv", rows, total_d, values["aggregate"])
    write_metrics_kv(out / "metrics_summary.txt", total_d,
                     extra={"dataset": values["dataset"], "split": values["split"],
                            "images": len(rows), "aggregate": values["aggregate"]})
    save_metric_bars(total_d, out / "metrics.png",
                     title=f"{values['dataset']} {values['split']}")
    print(table, end="")
    return 0


def cmd_predict(args) -> int:
    values = _merged(args)
    _require(values, "checkpoint", "out")
    if not args.image:
        raise CliError("missing required option --image")
    model, _ = load_checkpoint(values["checkpoint"])
    image = read_image(args.image)
    out = _prepare_out_dir(values["out"], args.force)

    h, w = image.shape[1:]
    sample = Sample(image=image, mask=np.zeros((h, w), np.uint8), roi=None,
                    id=Path(args.image).stem, split="test", orig_hw=(h, w))
    prepared = prepare_sample(sample, values["target_width"], values["pad_multiple"])
    probs = model.predict_probs(prepared.image)
    ch, cw = prepared.content_hw
    probs = probs[:, :ch, :cw]
    if (ch, cw) != (h, w):
        probs = resize_image_bilinear(probs.astype(np.float32), h, w)
    probs = np.clip(probs, 0.0, 1.0)
    mask = (probs.argmax(axis=0) * 255).astype(np.uint8)

    stem = Path(args.image).stem
    write_png(mask, out / f"{stem}_mask.png")
    np.save(out / f"{stem}_prob.npy", probs.astype(np.float32))
    print(f"mask:  {out / f'{stem}_mask.png'}")
    print(f"probs: {out / f'{stem}_prob.npy'}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck_suite()
    failed = 0
    for name, err, tol in results:
        ok = err < tol
        failed += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24s} max rel err {err:.3e}  (tol {tol:.0e})")
    return 1 if failed else 0


def cmd_params(args) -> int:
    values = _merged(args)
    model = FesNet(cfgmod.arch_from(values))
    pc = count_parameters(model)
    width = max(len(name) for name, _, _ in pc.rows)
    for name, shape, n in pc.rows:
        print(f"{name:<{width}s}  {str(shape):<18s} {n:>9,d}")
    print(f"{'total trainable':<{width}s}  {'':<18s} {pc.total:>9,d}")
    print(f"{'running statistics':<{width}s}  {'':<18s} {pc.running_stats:>9,d}")
    print(f"checkpoint size (float32): {pc.checkpoint_bytes() / 2**20:.2f} MiB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fesnet",
                                     description="Lightweight retinal vessel segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, model=False, training=False):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty output directory")
        p.add_argument("--seed", type=int)
        if data:
            p.add_argument("--dataset", choices=("drive", "stare", "chase", "hrf"))
            p.add_argument("--root", help="dataset root directory")
        if model:
            p.add_argument("--channels", help="comma-separated block widths, e.g. 16,32,64,128")
        if training:
            p.add_argument("--epochs", type=int)
            p.add_argument("--batch", type=int, help="batch size")
            p.add_argument("--crop", type=int, help="training crop size")
            p.add_argument("--lr0", type=float, help="starting learning rate")
            p.add_argument("--lr-decay", dest="lr_decay", type=float,
                           help="per-epoch learning-rate decay factor")
            p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
            p.add_argument("--eval-every", dest="eval_every", type=int)
            p.add_argument("--target-width", dest="target_width", type=int)

    p = sub.add_parser("train", help="train on a dataset")
    common(p, data=True, model=True, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    common(p, data=True)
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--aggregate", choices=("global", "mean"))
    p.add_argument("--target-width", dest="target_width", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="segment a single image")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--image", help="input image (png/ppm/pgm)")
    p.add_argument("--target-width", dest="target_width", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference checks for all layer types")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="print the trainable-parameter table")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--channels", help="comma-separated block widths")
    p.set_defaults(func=cmd_params)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except (CliError, cfgmod.ConfigError, DatasetError, CheckpointError,
            TrainingAborted, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
