"""Command-line entry point: ``scatseg <command> [flags]``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from .. import scenes
from ..errors import ConfigError, ScatError
from ..fewshot import (
    ABLATIONS,
    Episode,
    RunConfig,
    VariantSpec,
    build_episode,
    load_config,
    predict,
)
from ..geometry import PointCloud
from ..numcore import load_checkpoint, save_checkpoint
from ..scat import ScatParams
from .runner import (
    build_data,
    evaluate,
    format_csv,
    pretrained_params,
    report_row,
    run_experiment,
    test_episodes,
    time_inference,
    train_variant,
)
from .svg import bar_chart, variant_means

log = logging.getLogger("scatseg")

COMMANDS = ("synth", "pretrain", "train", "eval", "ablate", "bench", "predict")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration")
    common.add_argument("--seed", type=int, help="override the config seed (and seed list)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--variant", help="model variant")
    common.add_argument("--way", type=int)
    common.add_argument("--shot", type=int)
    common.add_argument("--ckpt", help="SCATCKPT1 parameter file")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="scatseg", description="Few-shot point-cloud segmentation toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate synthetic scenes")
    p.add_argument("--n", type=int, help="number of scenes (default: n_train_scenes)")
    sub.add_parser("pretrain", parents=[common], help="pretrain the encoder")
    sub.add_parser("train", parents=[common], help="meta-train one variant")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on held-out classes")
    sub.add_parser("ablate", parents=[common], help="train and evaluate every configured variant")
    p = sub.add_parser("bench", parents=[common], help="time forward passes of variants")
    p.add_argument("--reps", type=int, default=5)
    p = sub.add_parser("predict", parents=[common], help="label one query cloud")
    p.add_argument("--query", help="PCLOUD query file (default: a sampled test block)")
    p.add_argument("--support", action="append", default=[],
                   help="PCLOUD support file whose label column is the 0/1 mask; repeat per shot")
    return ap


def _config(args) -> RunConfig:
    over = {"variant": args.variant, "way": args.way, "shot": args.shot}
    if args.seed is not None:
        over.update(seed=args.seed, seeds=())
    if args.config:
        return load_config(args.config, **over)
    try:
        return RunConfig(**{k: v for k, v in over.items() if v is not None})
    except ScatError as exc:
        raise ConfigError(str(exc)) from None


def save_params(params: ScatParams, path):
    save_checkpoint(path, {k: t.data for k, t in params.named().items()})


def load_params(path, cfg: RunConfig) -> ScatParams:
    if not path:
        raise ConfigError("--ckpt is required")
    try:
        arrays = load_checkpoint(path)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint {path} not found") from None
    try:
        return ScatParams.from_named(arrays, heads=cfg.heads, k=cfg.k_nn)
    except KeyError as exc:
        raise ScatError(f"checkpoint {path} lacks parameter {exc}") from None


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_report(rows, out: Path):
    (out / "report.csv").write_text(format_csv(rows))
    labels, values = variant_means(rows)
    (out / "report.svg").write_text(bar_chart(labels, values))


def cmd_synth(args, cfg):
    out = _out(args)
    n = args.n if args.n is not None else cfg.n_train_scenes
    for i, spec in enumerate(scenes.family_specs(cfg.family, n, cfg.seed)):
        scenes.write_scene_spec(spec, out / f"scene_{i:03d}.spec")
        scenes.write_cloud(scenes.generate_scene(spec), out / f"scene_{i:03d}.pcloud")
    print(f"wrote {n} scenes to {out}")


def cmd_pretrain(args, cfg):
    out = _out(args)
    data = build_data(cfg, cfg.seed)
    params = pretrained_params(cfg, data, cfg.seed)
    path = out / "pretrain.ckpt"
    save_params(params, path)
    print(path)


def cmd_train(args, cfg):
    out = _out(args)
    data = build_data(cfg, cfg.seed)
    base = load_params(args.ckpt, cfg) if args.ckpt else pretrained_params(cfg, data, cfg.seed)
    params, curve = train_variant(cfg, data, base, cfg.variant, cfg.seed)
    path = out / f"{cfg.variant}.ckpt"
    save_params(params, path)
    (out / f"{cfg.variant}_loss.csv").write_text(
        "iteration,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve)))
    print(path)


def cmd_eval(args, cfg):
    params = load_params(args.ckpt, cfg)
    out = _out(args)
    data = build_data(cfg, cfg.seed)
    episodes = test_episodes(data.test_pool, cfg, cfg.seed)
    rep = evaluate(params, episodes, cfg.variant, data.test_classes)
    rows = [report_row(rep, cfg, cfg.seed)]
    write_report(rows, out)
    sys.stdout.write(format_csv(rows))


def cmd_ablate(args, cfg):
    out = _out(args)
    if not cfg.variants and args.variant is None:
        cfg = RunConfig(**{**cfg.__dict__, "variants": ABLATIONS})

    def progress(row):
        log.info("%s seed %s: mean-IoU %s", row["variant"], row["seed"], row["mean_iou"])

    rows, _ = run_experiment(cfg, progress=progress)
    write_report(rows, out)
    sys.stdout.write(format_csv(rows))


def cmd_bench(args, cfg):
    out = _out(args)
    variants = cfg.variant_list if (cfg.variants or args.variant) else ["threecat", "full"]
    data = build_data(cfg, cfg.seed)
    params = load_params(args.ckpt, cfg) if args.ckpt else pretrained_params(cfg, data, cfg.seed)
    episodes = test_episodes(data.test_pool, cfg, cfg.seed, n=min(cfg.eval_episodes, 10))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "n_points", "reps", "sec_per_episode"])
    for v in variants:
        w.writerow([v, cfg.n_points, args.reps, f"{time_inference(params, v, episodes, args.reps):.6f}"])
    (out / "bench.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())


def _file_episode(args, cfg):
    query = scenes.read_cloud(args.query)
    supports, masks = [], []
    for path in args.support:
        pc = scenes.read_cloud(path)
        if pc.labels is None:
            raise ConfigError(f"support file {path} needs a mask in its label column")
        supports.append(PointCloud(pc.points))
        masks.append(pc.labels > 0)
    if not supports:
        raise ConfigError("--query needs at least one --support file")
    if query.points.shape[1] != supports[0].points.shape[1]:
        raise ConfigError("query and support clouds have different channel counts")
    labels = query.labels if query.labels is not None else np.zeros(query.n, dtype=np.int64)
    return Episode([1], [supports], [masks], PointCloud(query.points, labels), {}, cfg.seed)


def cmd_predict(args, cfg):
    params = load_params(args.ckpt, cfg)
    if args.query:
        ep = _file_episode(args, cfg)
    else:
        data = build_data(cfg, cfg.seed)
        ep = build_episode(data.test_pool, cfg.way, cfg.shot, cfg.seed)
    labels = predict(ep, params, VariantSpec(cfg.variant))
    sys.stdout.write(scenes.format_cloud(PointCloud(ep.query.points, labels)))


HANDLERS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "bench": cmd_bench, "predict": cmd_predict}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ScatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
