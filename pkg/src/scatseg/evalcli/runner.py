"""Evaluation loop, timing and the experiment pipeline."""
from __future__ import annotations

import csv
import io
import logging
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import scenes
from ..fewshot import (
    BlockPool,
    RunConfig,
    VariantSpec,
    _KnnCache,
    build_episode,
    build_pool,
    init_params,
    meta_train,
    pretrain_encoder,
    variant_forward,
)
from ..scat import ScatParams
from .metrics import SegReport, episode_to_global, mean_iou

log = logging.getLogger(__name__)

CSV_HEADER = ["variant", "way", "shot", "split", "mean_iou", "sec_per_episode", "seed"]


def n_threads():
    raw = os.environ.get("SCAT_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def episode_seeds(seed, n):
    return [int(s) for s in np.random.SeedSequence([seed, 7]).generate_state(n)]


def test_episodes(pool: BlockPool, cfg: RunConfig, seed, n=None):
    n = cfg.eval_episodes if n is None else n
    return [build_episode(pool, cfg.way, cfg.shot, s) for s in episode_seeds(seed, n)]


def evaluate(params: ScatParams, episodes, spec, classes, threads=None):
    """Forward-only evaluation over ``episodes``; returns a :class:`SegReport`.

    Episodes run in a thread pool over the frozen parameters; predictions are
    collected in episode order so the result does not depend on scheduling.
    """
    spec = spec if isinstance(spec, VariantSpec) else VariantSpec(spec)
    cache = _KnnCache(params.encoder.k)
    for ep in episodes:
        # prime the cache serially; lookups from workers are then read-only
        for pc in [ep.query] + [p for way in ep.supports for p in way]:
            cache(pc)

    def one(ep):
        t0 = time.perf_counter()
        logits = variant_forward(ep, params, spec, np.random.default_rng(ep.seed), cache=cache)
        pred = np.argmax(logits.data, axis=1)
        return pred, time.perf_counter() - t0

    threads = threads or n_threads()
    if threads > 1 and len(episodes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, episodes))
    else:
        results = [one(ep) for ep in episodes]
    preds, gts, times = [], [], []
    for ep, (pred, dt) in zip(episodes, results):
        preds.append(episode_to_global(pred, ep.ways))
        gts.append(episode_to_global(ep.query.labels, ep.ways))
        times.append(dt)
    per_class, miou = mean_iou(np.concatenate(preds), np.concatenate(gts), classes)
    return SegReport(per_class, miou, len(episodes), float(np.mean(times)) if times else float("nan"),
                     spec.kind)


def time_inference(params: ScatParams, spec, episodes, reps=5):
    """Median over ``reps`` of forward-only seconds per episode (one warm-up pass excluded)."""
    if reps < 3:
        raise ValueError("time_inference needs reps >= 3")
    spec = spec if isinstance(spec, VariantSpec) else VariantSpec(spec)

    def run():
        for ep in episodes:
            variant_forward(ep, params, spec, np.random.default_rng(ep.seed))

    run()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run()
        samples.append((time.perf_counter() - t0) / len(episodes))
    return statistics.median(samples)


@dataclass
class Data:
    train_pool: BlockPool
    test_pool: BlockPool
    train_classes: list
    test_classes: list


def build_data(cfg: RunConfig, seed) -> Data:
    train_cls, test_cls = scenes.class_split(cfg.family, cfg.split)
    train_scenes = scenes.family_scenes(cfg.family, cfg.n_train_scenes, [seed, 1])
    test_scenes = scenes.family_scenes(cfg.family, cfg.n_test_scenes, [seed, 2])
    train_pool = build_pool(train_scenes, train_cls, cfg.window, cfg.n_points, cfg.min_class_points, [seed, 3])
    test_pool = build_pool(test_scenes, test_cls, cfg.window, cfg.n_points, cfg.min_class_points, [seed, 4])
    return Data(train_pool, test_pool, train_cls, test_cls)


def pretrained_params(cfg: RunConfig, data: Data, seed) -> ScatParams:
    params = init_params(cfg, [seed, 5])
    if cfg.pretrain_steps:
        pretrain_encoder(data.train_pool, params.encoder, data.train_classes, cfg.pretrain_steps,
                         cfg.pretrain_batch, cfg.lr, [seed, 6])
    return params


def train_variant(cfg: RunConfig, data: Data, base: ScatParams, variant, seed):
    params = base.copy()
    curve = meta_train(data.train_pool, params, cfg, VariantSpec(variant), seed=[seed, 8],
                       classes=data.train_classes)
    return params, curve


def run_experiment(cfg: RunConfig, threads=None, progress=None):
    """Train and evaluate every (variant, seed) of ``cfg``; returns CSV rows + reports."""
    rows, reports = [], []
    for seed in cfg.seed_list:
        data = build_data(cfg, seed)
        base = pretrained_params(cfg, data, seed)
        episodes = test_episodes(data.test_pool, cfg, seed)
        for variant in cfg.variant_list:
            params, _ = train_variant(cfg, data, base, variant, seed)
            rep = evaluate(params, episodes, variant, data.test_classes, threads)
            rep.seeds = [seed]
            reports.append(rep)
            rows.append(report_row(rep, cfg, seed))
            if progress:
                progress(rows[-1])
    return rows, reports


def report_row(rep: SegReport, cfg: RunConfig, seed):
    return {"variant": rep.variant, "way": cfg.way, "shot": cfg.shot, "split": cfg.split,
            "mean_iou": f"{rep.mean_iou:.6f}", "sec_per_episode": f"{rep.wall_time_per_episode:.6f}",
            "seed": seed}


def format_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
