"""Class-specific attention blocks and the stratified three-level network.

A query cloud is processed at three spatial scales: eight octants of its box,
then two z-halves, then the whole cloud. Every scale runs the same kind of
block (self-attention on the query rows, then cross-attention whose keys and
values come from the masked support rows), with one parameter set per scale
shared by all groups at that scale. The three scale outputs are summed and
fed to a pointwise two-layer head.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import SLOPE, EncoderParams, glorot
from .errors import DimensionError, EmptySupportError
from .geometry import (
    SplitAssignment,
    octant_split,
    random_split,
    reassemble,
    split_features,
    z_half_split,
)
from .numcore import (
    Tensor,
    add,
    add_bias,
    attention,
    concat_cols,
    concat_rows,
    gather_rows,
    leaky_relu,
    matmul,
    mean_rows,
    scale,
    slice_cols,
)

_BLOCK_KEYS = ("sa_q", "sa_k", "sa_v", "sa_o", "q", "k", "v", "o")


@dataclass
class CatBlockParams:
    """Weights of one class-specific attention block.

    ``sa_*`` belong to the self-attention stage over query rows; ``q``, ``k``,
    ``v`` (D x Da) and ``o`` (Da x D) to the cross-attention stage.
    """

    sa_q: Tensor
    sa_k: Tensor
    sa_v: Tensor
    sa_o: Tensor
    q: Tensor
    k: Tensor
    v: Tensor
    o: Tensor
    heads: int = 4

    def __post_init__(self):
        d_attn = self.q.shape[1]
        if d_attn % self.heads:
            raise DimensionError(f"attention width {d_attn} not divisible by {self.heads} heads")

    @classmethod
    def init(cls, d_model, d_attn, heads=4, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        ws = {}
        for key in _BLOCK_KEYS:
            shape = (d_attn, d_model) if key.endswith("o") else (d_model, d_attn)
            ws[key] = Tensor(glorot(rng, *shape), requires_grad=True)
        return cls(heads=heads, **ws)

    @property
    def d_model(self):
        return self.q.shape[0]

    @property
    def d_attn(self):
        return self.q.shape[1]

    def named(self, prefix):
        return {prefix + key: getattr(self, key) for key in _BLOCK_KEYS}

    @classmethod
    def from_named(cls, arrays, prefix, heads=4):
        return cls(heads=heads, **{key: Tensor(arrays[prefix + key], requires_grad=True)
                                   for key in _BLOCK_KEYS})


@dataclass
class ScatParams:
    encoder: EncoderParams
    layers: list
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor

    @classmethod
    def init(cls, in_channels=6, d_model=64, d_attn=64, heads=4, d_head=64, k=20,
             encoder_widths=None, n_out=2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        widths = encoder_widths or (d_model,) * 3
        enc = EncoderParams.init(in_channels, widths, d_model, k, rng)
        layers = [CatBlockParams.init(d_model, d_attn, heads, rng) for _ in range(3)]
        return cls(enc, layers,
                   Tensor(glorot(rng, d_model, d_head), requires_grad=True),
                   Tensor(np.zeros(d_head), requires_grad=True),
                   Tensor(glorot(rng, d_head, n_out), requires_grad=True),
                   Tensor(np.zeros(n_out), requires_grad=True))

    @property
    def heads(self):
        return self.layers[0].heads

    def named(self):
        out = dict(self.encoder.named("encoder."))
        for i, layer in enumerate(self.layers, start=1):
            out.update(layer.named(f"scat.layer{i}."))
        out.update({"scat.head.w1": self.head_w1, "scat.head.b1": self.head_b1,
                    "scat.head.w2": self.head_w2, "scat.head.b2": self.head_b2})
        return out

    @classmethod
    def from_named(cls, arrays, heads=4, k=20):
        t = lambda key: Tensor(arrays[key], requires_grad=True)  # noqa: E731
        enc = EncoderParams.from_named(arrays, "encoder.", k)
        layers = [CatBlockParams.from_named(arrays, f"scat.layer{i}.", heads) for i in (1, 2, 3)]
        return cls(enc, layers, t("scat.head.w1"), t("scat.head.b1"),
                   t("scat.head.w2"), t("scat.head.b2"))

    def copy(self):
        arrays = {name: p.data.copy() for name, p in self.named().items()}
        return ScatParams.from_named(arrays, self.heads, self.encoder.k)


@dataclass
class ClassSupport:
    """Masked support rows of one category, concatenated over shots."""

    rows: Tensor
    shot_boundaries: list = field(default_factory=list)

    @property
    def n_rows(self):
        return self.rows.shape[0]


def class_support(features, masks) -> ClassSupport:
    """Keep the rows whose mask is 1, shot by shot, and stack them.

    For a binary mask this equals multiplying by the mask and dropping the
    zeroed rows, so no attention weight lands on padding.
    """
    if len(features) != len(masks):
        raise DimensionError(f"{len(features)} feature sets for {len(masks)} masks")
    parts, bounds, total = [], [], 0
    for f, m in zip(features, masks):
        m = np.asarray(m).astype(bool).reshape(-1)
        if m.shape[0] != f.shape[0]:
            raise DimensionError(f"mask of length {m.shape[0]} for {f.shape[0]} support points")
        idx = np.flatnonzero(m)
        if idx.size:
            parts.append(gather_rows(f, idx) if idx.size != f.shape[0] else f)
        total += idx.size
        bounds.append(total)
    if total == 0:
        raise EmptySupportError("every support mask is empty")
    rows = parts[0] if len(parts) == 1 else concat_rows(parts)
    return ClassSupport(rows, bounds)


def prototype_support(support: ClassSupport) -> ClassSupport:
    """Average-pool the class rows into a single key/value row."""
    return ClassSupport(mean_rows(support.rows), [1])


@dataclass
class BlockTrace:
    """Intermediates of one block, for inspection and tests."""

    f_in: np.ndarray
    f_sa: np.ndarray
    cross: np.ndarray
    out: np.ndarray
    self_attn: np.ndarray
    cross_attn: np.ndarray
    layer: int
    group: int


def cat_block(f, s, p: CatBlockParams, skip=True, heads=None, trace=None, layer=0, group=0):
    """One class-specific attention block on query rows ``f`` (N_i x D).

    1. ``f_sa = f + MHA(f Wq', f Wk', f Wv') Wo'``   (self-attention)
    2. ``cross = MHA(f_sa Wq, s Wk, s Wv) Wo``       (keys/values from support)
    3. ``out = f_sa + cross``, or ``cross`` alone when ``skip`` is False.
    """
    rows = s.rows if isinstance(s, ClassSupport) else s
    heads = heads or p.heads
    if f.shape[1] != p.d_model or rows.shape[1] != p.d_model:
        raise DimensionError(f"block width {p.d_model} does not match query {f.shape} / support {rows.shape}")
    sa, a_self = attention(matmul(f, p.sa_q), matmul(f, p.sa_k), matmul(f, p.sa_v), heads,
                           return_weights=True)
    f_sa = add(f, matmul(sa, p.sa_o))
    cr, a_cross = attention(matmul(f_sa, p.q), matmul(rows, p.k), matmul(rows, p.v), heads,
                            return_weights=True)
    cross = matmul(cr, p.o)
    out = add(f_sa, cross) if skip else cross
    if trace is not None:
        trace.append(BlockTrace(np.asarray(f.data).copy(), f_sa.data.copy(), cross.data.copy(),
                                out.data.copy(), a_self, a_cross, layer, group))
    return out


# A level is (layer index into ScatParams.layers, splitter name).
FULL_PLAN = ((0, "octant"), (1, "zhalf"), (2, "whole"))


def make_split(kind, xyz, rng=None) -> SplitAssignment | None:
    if kind == "whole":
        return None
    if kind == "octant":
        return octant_split(xyz)
    if kind == "zhalf":
        return z_half_split(xyz)
    if kind in ("random8", "random2"):
        if rng is None:
            raise ValueError("random splitting needs an rng")
        return random_split(len(xyz), 8 if kind == "random8" else 2, rng)
    raise ValueError(f"unknown split {kind!r}")


def run_level(f, s, p: CatBlockParams, asg: SplitAssignment | None, skip=True, heads=None,
              trace=None, layer=0):
    """Apply one block per non-empty group of ``asg`` and put rows back in order."""
    if asg is None:
        return cat_block(f, s, p, skip, heads, trace, layer, 0)
    parts = split_features(f, asg)
    outs = [None if part is None else cat_block(part, s, p, skip, heads, trace, layer, g)
            for g, part in enumerate(parts)]
    live = [o for o in outs if o is not None]
    if len(live) == 1:
        # one group holds every point, already in original order
        return live[0]
    return reassemble(outs, asg)


def prediction_head(x, params: ScatParams):
    h = leaky_relu(add_bias(matmul(x, params.head_w1), params.head_b1), SLOPE)
    return add_bias(matmul(h, params.head_w2), params.head_b2)


def layered_forward(xyz, f_q, s, params: ScatParams, plan=FULL_PLAN, skip=True, heads=None,
                    rng=None, trace=None):
    """Run the levels of ``plan`` in sequence and sum their outputs into the head.

    Each level consumes the previous level's output. Returns ``(logits, Rs)``.
    """
    xyz = np.asarray(xyz)[:, :3]
    rs = []
    h = f_q
    for layer, kind in plan:
        asg = make_split(kind, xyz, rng)
        h = run_level(h, s, params.layers[layer], asg, skip, heads, trace, layer + 1)
        rs.append(h)
    total = rs[0]
    for r in rs[1:]:
        total = add(total, r)
    return prediction_head(total, params), rs


def stratified_forward(query, f_q, s, params: ScatParams, trace=None):
    """Octants -> z-halves -> whole cloud; returns ``(logits N x 2, [R1, R2, R3])``."""
    xyz = query.xyz if hasattr(query, "xyz") else query
    if f_q.shape[0] != len(xyz):
        raise DimensionError(f"{f_q.shape[0]} feature rows for {len(xyz)} query points")
    return layered_forward(xyz, f_q, s, params, FULL_PLAN, trace=trace)


def combine_ways(per_way):
    """Per-way (background, foreground) logits -> ``[mean background, fg_1..fg_W]``."""
    if len(per_way) == 1:
        return per_way[0]
    bg = slice_cols(per_way[0], 0, 1)
    for lg in per_way[1:]:
        bg = add(bg, slice_cols(lg, 0, 1))
    bg = scale(bg, 1.0 / len(per_way))
    return concat_cols([bg] + [slice_cols(lg, 1, 2) for lg in per_way])


def multiway_logits(query, f_q, supports, params: ScatParams, forward=None):
    """N x (W+1) logits, one stratified pass per way with that way's keys/values."""
    if not supports:
        raise DimensionError("need at least one way")
    forward = forward or (lambda s: stratified_forward(query, f_q, s, params)[0])
    return combine_ways([forward(s) for s in supports])


def predict_multiway(query, f_q, supports, params: ScatParams):
    """Per-point labels: 0 background, w for way w; ties resolve to the lower index."""
    logits = multiway_logits(query, f_q, supports, params)
    return np.argmax(logits.data, axis=1)
