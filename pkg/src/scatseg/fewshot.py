"""Episodes, predictors (full model, ablations, 3CAT, ProtoNet) and training loops."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderParams, PretrainHead, encode, pretrain_step
from .errors import ConfigError, EmptySupportError, PoolError, VariantError
from .geometry import PointCloud, knn, sample_blocks
from .numcore import (
    Adam,
    Tape,
    concat_rows,
    cross_entropy,
    matmul,
    mean_rows,
    normalize_rows,
    scale,
    transpose,
)
from .scat import (
    FULL_PLAN,
    ScatParams,
    class_support,
    combine_ways,
    layered_forward,
    prototype_support,
)

log = logging.getLogger(__name__)

VARIANTS = ("full", "first_layer_only", "second_layer_only", "third_layer_only", "random_split",
            "prototype_kv", "no_skip", "single_head", "protonet", "threecat")
# the eight rows of the splitting and attention ablations
ABLATIONS = VARIANTS[:8]

PLANS = {
    "full": FULL_PLAN,
    "first_layer_only": ((0, "octant"),),
    "second_layer_only": ((1, "zhalf"),),
    "third_layer_only": ((2, "whole"),),
    "random_split": ((0, "random8"), (1, "random2"), (2, "whole")),
    "threecat": ((0, "whole"), (1, "whole"), (2, "whole")),
}


@dataclass(frozen=True)
class VariantSpec:
    kind: str = "full"

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise VariantError(f"unknown variant {self.kind!r}; expected one of {', '.join(VARIANTS)}")

    @property
    def plan(self):
        return PLANS.get(self.kind, FULL_PLAN)


# ---------------------------------------------------------------- pools & episodes

@dataclass
class BlockPool:
    """Sampled blocks and, per class, the ids of blocks rich in that class."""

    blocks: list
    by_class: dict

    @property
    def classes(self):
        return sorted(self.by_class)


def build_pool(scenes, classes, window=1.0, n_points=2048, min_class_points=200, seed=0):
    blocks = []
    seeds = np.random.SeedSequence(seed).generate_state(len(scenes))
    for scene, s in zip(scenes, seeds):
        blocks.extend(sample_blocks(scene, window, n_points, int(s)))
    by_class = {}
    for c in classes:
        by_class[c] = [i for i, b in enumerate(blocks) if int((b.labels == c).sum()) > min_class_points]
    return BlockPool(blocks, by_class)


@dataclass
class Episode:
    """One few-shot task. Query labels are 0 for background and w for way w."""

    ways: list
    supports: list          # per way: list of PointCloud
    masks: list             # per way: list of bool arrays
    query: PointCloud
    block_ids: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def way(self):
        return len(self.ways)

    @property
    def shot(self):
        return len(self.supports[0])


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def build_episode(pool: BlockPool, way=1, shot=1, seed=0, classes=None) -> Episode:
    """Sample ``way`` distinct classes, ``shot`` supports each and one query block.

    No block is used twice within an episode.
    """
    rng = _rng(seed)
    ep_seed = int(rng.integers(2 ** 31))
    candidates = sorted(classes if classes is not None else pool.classes)
    if way > len(candidates):
        raise PoolError(f"{way}-way episode needs {way} classes, pool has {len(candidates)}")
    chosen = [int(c) for c in rng.choice(candidates, size=way, replace=False)]
    for c in chosen:
        if len(pool.by_class.get(c, ())) < shot + 1:
            raise PoolError(f"class {c} has {len(pool.by_class.get(c, ()))} blocks, need {shot + 1}")
    used = set()
    supports, masks, ids = [], [], {"support": []}
    for c in chosen:
        free = [b for b in pool.by_class[c] if b not in used]
        if len(free) < shot:
            raise PoolError(f"class {c} runs out of distinct blocks")
        pick = [free[i] for i in rng.choice(len(free), size=shot, replace=False)]
        used.update(pick)
        ids["support"].append(pick)
        supports.append([pool.blocks[b] for b in pick])
        masks.append([pool.blocks[b].labels == c for b in pick])
    anchor = chosen[int(rng.integers(way))]
    free = [b for b in pool.by_class[anchor] if b not in used]
    if not free:
        raise PoolError(f"class {anchor} has no block left for the query")
    qid = free[int(rng.integers(len(free)))]
    ids["query"] = qid
    src = pool.blocks[qid]
    lab = np.zeros(src.n, dtype=np.int64)
    for w, c in enumerate(chosen, start=1):
        lab[src.labels == c] = w
    return Episode(chosen, supports, masks, PointCloud(src.points, lab), ids, ep_seed)


# ---------------------------------------------------------------- forward passes

class _KnnCache:
    """kNN tables keyed by xyz content, so recolored copies of a block share one."""

    def __init__(self, k):
        self.k = k
        self._tables = {}

    def __call__(self, pc):
        xyz = np.ascontiguousarray(pc.xyz)
        key = hash(xyz.tobytes())
        hit = self._tables.get(key)
        if hit is None or not np.array_equal(hit[0], xyz):
            hit = (xyz, knn(pc, self.k))
            self._tables[key] = hit
        return hit[1]


def encode_episode(episode: Episode, enc: EncoderParams, cache=None, neighbors=None):
    """Encoder features ``(f_q, [[f_s per shot] per way])`` with shared weights.

    ``neighbors`` (from :func:`episode_neighbors`) overrides kNN lookup, e.g.
    to reuse tables of the untransformed blocks for an augmented episode.
    """
    if neighbors is None:
        nbr = cache if cache is not None else (lambda pc: None)
        neighbors = episode_neighbors(episode, nbr)
    n_q, n_s = neighbors
    f_q = encode(episode.query, enc, n_q)
    f_s = [[encode(pc, enc, n) for pc, n in zip(way, nw)] for way, nw in zip(episode.supports, n_s)]
    return f_q, f_s


def protonet_logits(episode: Episode, enc: EncoderParams, temperature=40.0, feats=None, cache=None):
    """Scaled cosine similarity to ``[background, way_1, .., way_W]`` prototypes.

    Way prototypes average the masked support rows over all shots; the
    background prototype averages every unmasked support row of the episode.
    """
    f_q, f_s = feats if feats is not None else encode_episode(episode, enc, cache)
    protos = []
    bg_masks = [[~np.asarray(m, bool) for m in way] for way in episode.masks]
    flat_f = [f for way in f_s for f in way]
    flat_bg = [m for way in bg_masks for m in way]
    if any(m.any() for m in flat_bg):
        protos.append(mean_rows(class_support(flat_f, flat_bg).rows))
    else:
        # supports are all foreground: fall back to a zero background prototype
        protos.append(scale(mean_rows(flat_f[0]), 0.0))
    for feats_w, masks_w in zip(f_s, episode.masks):
        protos.append(mean_rows(class_support(feats_w, masks_w).rows))
    p = normalize_rows(concat_rows(protos))
    q = normalize_rows(f_q)
    return scale(matmul(q, transpose(p)), temperature)


def protonet_predict(episode: Episode, enc: EncoderParams):
    """Per-point argmax of cosine similarity; ties go to the lower index (background first)."""
    return np.argmax(protonet_logits(episode, enc, temperature=1.0).data, axis=1)


def variant_forward(episode: Episode, params: ScatParams, spec: VariantSpec, rng=None,
                    feats=None, cache=None, trace=None):
    """N_q x (W+1) logits of ``spec`` on ``episode``."""
    if not isinstance(spec, VariantSpec):
        spec = VariantSpec(spec)
    if spec.kind == "protonet":
        return protonet_logits(episode, params.encoder, feats=feats, cache=cache)
    f_q, f_s = feats if feats is not None else encode_episode(episode, params.encoder, cache)
    if spec.kind == "random_split" and rng is None:
        rng = np.random.default_rng(episode.seed)
    skip = spec.kind != "no_skip"
    heads = 1 if spec.kind == "single_head" else None
    per_way = []
    for feats_w, masks_w in zip(f_s, episode.masks):
        s = class_support(feats_w, masks_w)
        if spec.kind == "prototype_kv":
            s = prototype_support(s)
        logits, _ = layered_forward(episode.query.xyz, f_q, s, params, spec.plan, skip, heads, rng, trace)
        per_way.append(logits)
    return combine_ways(per_way)


def predict(episode, params, spec, rng=None, cache=None):
    return np.argmax(variant_forward(episode, params, spec, rng, cache=cache).data, axis=1)


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    way: int = 1
    shot: int = 1
    iterations: int = 2000
    lr: float = 1e-3
    decay_every: int = 5000
    seed: int = 0
    variant: str = "full"
    d_model: int = 32
    d_attn: int = 32
    heads: int = 4
    n_points: int = 512
    k_nn: int = 20
    window: float = 1.0
    # desk-scale pipeline controls
    variants: tuple = ()
    family: str = "rooms"
    split: str = "S0"
    d_head: int = 32
    encoder_width: int = 64
    min_class_points: int = 50
    n_train_scenes: int = 8
    n_test_scenes: int = 8
    pretrain_steps: int = 100
    pretrain_batch: int = 4
    eval_episodes: int = 100
    seeds: tuple = ()
    augment: bool = True

    def __post_init__(self):
        VariantSpec(self.variant)
        for v in self.variants:
            VariantSpec(v)
        if self.d_attn % self.heads:
            raise ConfigError(f"d_attn={self.d_attn} not divisible by heads={self.heads}")
        for name in ("way", "shot", "d_model", "d_attn", "heads", "n_points", "k_nn", "decay_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.iterations < 0 or self.lr <= 0 or self.window <= 0:
            raise ConfigError("iterations >= 0, lr > 0 and window > 0 are required")
        if self.k_nn >= self.n_points:
            raise ConfigError("k_nn must be smaller than n_points")

    @property
    def variant_list(self):
        return list(self.variants) or [self.variant]

    @property
    def seed_list(self):
        return list(self.seeds) or [self.seed]


_LIST_KEYS = {"variants": str, "seeds": int}


def _convert(key, text):
    f = {f.name: f for f in dataclasses.fields(RunConfig)}[key]
    if key in _LIST_KEYS:
        return tuple(_LIST_KEYS[key](v) for v in text.replace(",", " ").split())
    kind = type(f.default)
    if kind is bool:
        return text.lower() in ("1", "true", "yes")
    return kind(text) if kind is not int else int(text)


def parse_config(text, source="<config>", **overrides) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments); unknown keys are errors."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, val)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {val!r} for {key}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except VariantError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path), **overrides)


# ---------------------------------------------------------------- training

def lr_at(t, lr=1e-3, decay_every=5000):
    """Step schedule: halve every ``decay_every`` iterations."""
    return lr * 0.5 ** (t // decay_every)


def init_params(cfg: RunConfig, seed, in_channels=6) -> ScatParams:
    return ScatParams.init(in_channels, cfg.d_model, cfg.d_attn, cfg.heads, cfg.d_head, cfg.k_nn,
                           encoder_widths=(cfg.encoder_width,) * 3, rng=np.random.default_rng(seed))


def pretrain_encoder(pool: BlockPool, enc: EncoderParams, train_classes, steps, batch=4, lr=1e-3,
                     seed=0, cache=None):
    """Pointwise classification over train classes (+1 'other' class at index 0)."""
    rng = np.random.default_rng(seed)
    lookup = np.zeros(max(max(train_classes) + 1, max(int(b.labels.max()) for b in pool.blocks) + 1),
                      dtype=np.int64)
    for i, c in enumerate(sorted(train_classes), start=1):
        lookup[c] = i
    head = PretrainHead.init(enc.d_model, len(train_classes) + 1, rng=rng)
    params = dict(enc.named())
    params.update(head.named())
    opt = Adam(params, lr=lr)
    ids = sorted({b for c in train_classes for b in pool.by_class.get(c, ())})
    if not ids:
        raise PoolError("no training blocks for pretraining")
    cache = cache or _KnnCache(enc.k)
    losses = []
    for _ in range(steps):
        pick = [pool.blocks[ids[i]] for i in rng.choice(len(ids), size=min(batch, len(ids)), replace=False)]
        losses.append(pretrain_step(pick, enc, head, opt, lambda lab: lookup[lab],
                                    [cache(pc) for pc in pick]))
    return losses


def random_color_transform(rng, channels):
    """Random rotation (with possible reflection) of centred color channels."""
    q, r = np.linalg.qr(rng.normal(size=(channels, channels)))
    return q * np.sign(np.diag(r))


def augment_episode(episode: Episode, rng, geometric=True) -> Episode:
    """Apply one random color transform (and similarity transform of xyz) to every cloud.

    Support and query share the transforms, so matching across them still
    works while memorising absolute class colors or heights does not. The
    xyz transform is a z-rotation, a uniform scale and an optional mirror,
    all of which preserve nearest-neighbor order.
    """
    c = episode.query.points.shape[1] - 3
    mix = random_color_transform(rng, c) if c > 0 else None
    rot = np.eye(3)
    if geometric:
        a = rng.uniform(0.0, 2.0 * np.pi)
        rot = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
        if rng.uniform() < 0.5:
            rot[:, 0] = -rot[:, 0]
        rot = rot * rng.uniform(0.8, 1.25)

    def tf(pc):
        pts = pc.points.copy()
        pts[:, :3] = pts[:, :3] @ rot
        if mix is not None:
            pts[:, 3:] = (pts[:, 3:] - 0.5) @ mix + 0.5
        return PointCloud(pts, pc.labels)

    return dataclasses.replace(episode, query=tf(episode.query),
                               supports=[[tf(pc) for pc in way] for way in episode.supports])


def episode_neighbors(episode: Episode, cache):
    """kNN tables for the query and every support, in :func:`encode_episode` order."""
    return cache(episode.query), [[cache(pc) for pc in way] for way in episode.supports]


def meta_train(pool: BlockPool, params: ScatParams, cfg: RunConfig, spec=None, seed=None,
               classes=None, cache=None, callback=None):
    """Episodic training, one episode per Adam step. Returns the loss curve."""
    spec = VariantSpec(spec or cfg.variant) if not isinstance(spec, VariantSpec) else spec
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    named = params.named()
    if spec.kind == "protonet":
        named = params.encoder.named()
    opt = Adam(named, lr=cfg.lr)
    cache = cache or _KnnCache(params.encoder.k)
    curve = []
    for t in range(cfg.iterations):
        opt.set_lr(lr_at(t, cfg.lr, cfg.decay_every))
        episode = build_episode(pool, cfg.way, cfg.shot, rng, classes)
        neighbors = episode_neighbors(episode, cache)
        if cfg.augment:
            episode = augment_episode(episode, rng)
        opt.zero_grad()
        with Tape() as tape:
            feats = encode_episode(episode, params.encoder, neighbors=neighbors)
            logits = variant_forward(episode, params, spec, rng, feats=feats)
            loss = cross_entropy(logits, episode.query.labels)
            tape.backward(loss, list(named.values()))
        opt.step()
        curve.append(loss.item())
        if callback is not None:
            callback(t, curve[-1])
    return curve


def check_episode(episode: Episode):
    for w, masks in enumerate(episode.masks):
        if not any(np.asarray(m).any() for m in masks):
            raise EmptySupportError(f"way {w} has no foreground support points")
