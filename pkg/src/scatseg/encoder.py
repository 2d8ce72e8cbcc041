"""DGCNN-lite point encoder and its pretraining classifier.

The kNN graph is built once from xyz and reused by all three EdgeConv layers
(no dynamic graph recomputation).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelError, NeighborError
from .geometry import PointCloud, knn
from .numcore import (
    Adam,
    Tape,
    Tensor,
    add,
    add_bias,
    concat_cols,
    concat_rows,
    cross_entropy,
    leaky_relu,
    matmul,
    neighbor_max,
    scale,
    slice_rows,
)

SLOPE = 0.2


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class EncoderParams:
    """Three EdgeConv layers plus a linear projection to ``d_model`` channels.

    EdgeConv layer ``i`` holds a ``(2*d_in, d_out)`` weight acting on the edge
    feature ``[f_i, f_j - f_i]`` and a bias of length ``d_out``.
    """

    edge_w: list
    edge_b: list
    proj_w: Tensor
    proj_b: Tensor
    k: int = 20

    @classmethod
    def init(cls, in_channels, widths=(64, 64, 64), d_model=64, k=20, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if len(widths) != 3:
            raise ValueError("the encoder has exactly three EdgeConv layers")
        edge_w, edge_b = [], []
        d_in = in_channels
        for d_out in widths:
            edge_w.append(Tensor(glorot(rng, 2 * d_in, d_out), requires_grad=True))
            edge_b.append(Tensor(np.zeros(d_out), requires_grad=True))
            d_in = d_out
        proj_w = Tensor(glorot(rng, sum(widths), d_model), requires_grad=True)
        proj_b = Tensor(np.zeros(d_model), requires_grad=True)
        return cls(edge_w, edge_b, proj_w, proj_b, k)

    @property
    def d_model(self):
        return self.proj_w.shape[1]

    @property
    def in_channels(self):
        return self.edge_w[0].shape[0] // 2

    def named(self, prefix="encoder."):
        out = {}
        for i, (w, b) in enumerate(zip(self.edge_w, self.edge_b)):
            out[f"{prefix}edge{i}.w"] = w
            out[f"{prefix}edge{i}.b"] = b
        out[f"{prefix}proj.w"] = self.proj_w
        out[f"{prefix}proj.b"] = self.proj_b
        return out

    @classmethod
    def from_named(cls, arrays, prefix="encoder.", k=20):
        t = lambda key: Tensor(arrays[prefix + key], requires_grad=True)  # noqa: E731
        return cls([t(f"edge{i}.w") for i in range(3)], [t(f"edge{i}.b") for i in range(3)],
                   t("proj.w"), t("proj.b"), k)


def edgeconv_layer(features, neighbors, weight, bias, slope=SLOPE):
    """``out_i = max_j lrelu([f_i, f_j - f_i] @ W + b)``, max taken per channel.

    With ``W = [W_a; W_b]`` the edge response is ``f_i (W_a - W_b) + f_j W_b + b``.
    Leaky-ReLU is monotone, so the max over j moves inside it and only the
    ``f_j W_b`` term needs the neighbor max.
    """
    neighbors = np.asarray(neighbors, dtype=np.int64)
    n = features.shape[0]
    if neighbors.ndim != 2 or neighbors.shape[0] != n:
        raise NeighborError(f"neighbor table {neighbors.shape} does not match {n} points")
    if neighbors.size and (neighbors.min() < 0 or neighbors.max() >= n):
        raise NeighborError(f"neighbor index out of range [0, {n})")
    d_in = features.shape[1]
    w_center = slice_rows(weight, 0, d_in)
    w_edge = slice_rows(weight, d_in, 2 * d_in)
    center = add(matmul(features, w_center), scale(matmul(features, w_edge), -1.0))
    pooled = neighbor_max(matmul(features, w_edge), neighbors)
    return leaky_relu(add_bias(add(center, pooled), bias), slope)


def input_features(pc: PointCloud):
    """Per-cloud input channels: xyz relative to the box min corner, then the rest."""
    pts = pc.points.copy()
    pts[:, :3] -= pts[:, :3].min(axis=0)
    return pts


def encode(pc: PointCloud, params: EncoderParams, neighbors=None):
    """N x d_model features; pass ``neighbors`` to reuse a precomputed kNN table."""
    if neighbors is None:
        neighbors = knn(pc, params.k)
    h = Tensor._wrap(input_features(pc))
    outs = []
    for w, b in zip(params.edge_w, params.edge_b):
        h = edgeconv_layer(h, neighbors, w, b)
        outs.append(h)
    return add_bias(matmul(concat_cols(outs), params.proj_w), params.proj_b)


@dataclass
class PretrainHead:
    """Two pointwise linear layers d_model -> hidden -> n_classes."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d_model, n_classes, hidden=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(Tensor(glorot(rng, d_model, hidden), requires_grad=True),
                   Tensor(np.zeros(hidden), requires_grad=True),
                   Tensor(glorot(rng, hidden, n_classes), requires_grad=True),
                   Tensor(np.zeros(n_classes), requires_grad=True))

    def named(self, prefix="pretrain_head."):
        return {f"{prefix}w1": self.w1, f"{prefix}b1": self.b1,
                f"{prefix}w2": self.w2, f"{prefix}b2": self.b2}

    def __call__(self, feats):
        h = leaky_relu(add_bias(matmul(feats, self.w1), self.b1), SLOPE)
        return add_bias(matmul(h, self.w2), self.b2)


def pretrain_step(blocks, params: EncoderParams, head: PretrainHead, opt: Adam,
                  label_map=None, neighbors=None):
    """One Adam step of pointwise classification over a batch of labelled blocks.

    ``label_map`` turns raw labels into class indices (default: identity).
    Returns the batch loss as a float.
    """
    batch_logits, batch_labels = [], []
    opt.zero_grad()
    with Tape() as tape:
        for i, pc in enumerate(blocks):
            if pc.labels is None:
                raise LabelError("pretraining needs labelled blocks")
            nbr = None if neighbors is None else neighbors[i]
            batch_logits.append(head(encode(pc, params, nbr)))
            lab = pc.labels if label_map is None else label_map(pc.labels)
            batch_labels.append(lab)
        logits = concat_rows(batch_logits) if len(batch_logits) > 1 else batch_logits[0]
        loss = cross_entropy(logits, np.concatenate(batch_labels))
        tape.backward(loss, list(opt.params.values()))
    opt.step()
    return loss.item()
