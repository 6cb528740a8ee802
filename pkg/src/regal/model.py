"""Per-pixel features, a small trainable embedding, and a cosine-softmax classifier.

The classifier scores a pixel embedding e against per-class weight rows w_c by
softmax_c( cos(e, w_c) / tau ), so predictions are invariant to the scale of
both embeddings and class weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .dataio import UNDEF

FEATURE_DIM = 11
# feature layout per pixel: R, G, B, x/(W-1), y/(H-1),
# 5x5 window mean per channel (3), 5x5 window std per channel (3)

_NORM_FLOOR = 1e-12


class DegenerateDirectionError(ValueError):
    """A zero embedding or classifier row has no direction to compare."""


def featurize(image: np.ndarray) -> np.ndarray:
    """Handcrafted (H, W, 11) features; window statistics use edge clamping."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    xn = np.zeros(w) if w == 1 else np.arange(w) / (w - 1)
    yn = np.zeros(h) if h == 1 else np.arange(h) / (h - 1)
    coords = np.stack(np.meshgrid(xn, yn), axis=-1)
    mean = ndimage.uniform_filter(img, size=(5, 5, 1), mode="nearest")
    meansq = ndimage.uniform_filter(img * img, size=(5, 5, 1), mode="nearest")
    std = np.sqrt(np.clip(meansq - mean * mean, 0.0, None))
    return np.concatenate([img, coords, mean, std], axis=-1)


@dataclass
class ModelParams:
    """One hidden tanh layer (F->H), output affine (H->d), cosine classifier rows.

    w_cls has one row per class including the trailing undefined-class row, so
    class_count below is C + 1.
    """

    w_hidden: np.ndarray  # (H, F)
    b_hidden: np.ndarray  # (H,)
    w_out: np.ndarray  # (d, H)
    b_out: np.ndarray  # (d,)
    w_cls: np.ndarray  # (C', d)
    tau: float
    provenance: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be > 0")

    @property
    def feature_dim(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.w_out.shape[0]

    @property
    def class_count(self) -> int:
        return self.w_cls.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.w_hidden.copy(),
            self.b_hidden.copy(),
            self.w_out.copy(),
            self.b_out.copy(),
            self.w_cls.copy(),
            self.tau,
            self.provenance,
        )


def init_params(
    feature_dim: int,
    hidden_dim: int,
    embed_dim: int,
    class_count: int,
    tau: float,
    seed: int,
) -> ModelParams:
    """Seeded init: uniform weights scaled by 1/sqrt(fan_in), zero biases,
    unit-norm random classifier rows."""
    rng = np.random.default_rng(np.random.SeedSequence([0x1217, int(seed)]))
    w_hidden = rng.uniform(-1.0, 1.0, (hidden_dim, feature_dim)) / np.sqrt(feature_dim)
    w_out = rng.uniform(-1.0, 1.0, (embed_dim, hidden_dim)) / np.sqrt(hidden_dim)
    w_cls = rng.normal(size=(class_count, embed_dim))
    norms = np.linalg.norm(w_cls, axis=1)
    while (norms < 1e-6).any():  # vanishing draw; essentially unreachable
        redo = norms < 1e-6
        w_cls[redo] = rng.normal(size=(int(redo.sum()), embed_dim))
        norms = np.linalg.norm(w_cls, axis=1)
    w_cls /= norms[:, None]
    return ModelParams(
        w_hidden=w_hidden,
        b_hidden=np.zeros(hidden_dim),
        w_out=w_out,
        b_out=np.zeros(embed_dim),
        w_cls=w_cls,
        tau=tau,
    )


def embed(features: np.ndarray, params: ModelParams) -> np.ndarray:
    """tanh MLP embedding; preserves leading shape, last axis becomes d."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[-1] != params.feature_dim:
        raise ValueError(
            f"feature dim {feats.shape[-1]} does not match model {params.feature_dim}"
        )
    flat = feats.reshape(-1, params.feature_dim)
    hidden = np.tanh(flat @ params.w_hidden.T + params.b_hidden)
    out = hidden @ params.w_out.T + params.b_out
    return out.reshape(feats.shape[:-1] + (params.embed_dim,))


def predict_probs(embeddings: np.ndarray, params: ModelParams) -> np.ndarray:
    """Softmax over cos(e, w_c)/tau; rows sum to 1, entries strictly in (0, 1)."""
    emb = np.asarray(embeddings, dtype=np.float64).reshape(-1, params.embed_dim)
    e_norm = np.linalg.norm(emb, axis=1)
    w_norm = np.linalg.norm(params.w_cls, axis=1)
    if (e_norm == 0).any() or (w_norm == 0).any():
        raise DegenerateDirectionError("zero-norm embedding or classifier row")
    u = emb / np.maximum(e_norm, _NORM_FLOOR)[:, None]
    v = params.w_cls / np.maximum(w_norm, _NORM_FLOOR)[:, None]
    logits = (u @ v.T) / params.tau
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def predict_labels(features: np.ndarray, params: ModelParams) -> np.ndarray:
    """Flat per-pixel argmax class indices (undefined class = class_count - 1)."""
    probs = predict_probs(embed(features, params), params)
    return np.argmax(probs, axis=1)


def class_index(values, class_count: int) -> np.ndarray:
    """Map raw mask ids to classifier indices: UNDEF becomes index class_count."""
    arr = np.asarray(values, dtype=np.int64)
    return np.where(arr == UNDEF, class_count, arr)


def index_to_raw(indices, class_count: int) -> np.ndarray:
    """Inverse of class_index for writing masks back out."""
    arr = np.asarray(indices, dtype=np.int64)
    return np.where(arr >= class_count, UNDEF, arr)


# ---------------------------------------------------------------------------
# checkpoint format: little-endian float64 header (F, H, d, C', tau) followed
# by w_hidden, b_hidden, w_out, b_out, w_cls in row-major order.

def save_checkpoint(params: ModelParams, path) -> None:
    header = struct.pack(
        "<5d",
        float(params.feature_dim),
        float(params.hidden_dim),
        float(params.embed_dim),
        float(params.class_count),
        params.tau,
    )
    with open(path, "wb") as f:
        f.write(header)
        for arr in (params.w_hidden, params.b_hidden, params.w_out, params.b_out, params.w_cls):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = np.fromfile(path, dtype="<f8")
    if raw.size < 5:
        raise ValueError(f"truncated checkpoint: {path}")
    fdim, hdim, edim, cdim = (int(v) for v in raw[:5][:4])
    tau = float(raw[4])
    sizes = [hdim * fdim, hdim, edim * hdim, edim, cdim * edim]
    if raw.size != 5 + sum(sizes):
        raise ValueError(f"checkpoint size mismatch: {path}")
    chunks = np.split(raw[5:], np.cumsum(sizes)[:-1])
    return ModelParams(
        w_hidden=chunks[0].reshape(hdim, fdim),
        b_hidden=chunks[1],
        w_out=chunks[2].reshape(edim, hdim),
        b_out=chunks[3],
        w_cls=chunks[4].reshape(cdim, edim),
        tau=tau,
    )
