"""Region-label losses, their exact reverse-mode gradients, AdamW, and both
training stages.

Three terms make up the stage-1 objective:
  l_ce  pixel-wise cross entropy over regions labeled with a single class,
        averaged per region and then over regions;
  l_mp  merged-positive loss over multi-class regions: -log of the summed
        probability of the candidate classes, same nested averaging;
  l_pp  cross entropy at each candidate class's most confident pixel
        (the prototypical pixel), averaged over candidates then regions.
total = lam_ce * l_ce + lam_mp * l_mp + l_pp.

Prototypical-pixel selection is treated as a constant during differentiation
(stop-gradient through the argmax); everything else is differentiated exactly.
Stage 2 is plain pixel-wise cross entropy on pseudo labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import JsonlLogger
from .model import ModelParams, class_index
from .oracle import LabeledPool
from .superpixel import Partition

TRAINABLE = ("w_hidden", "b_hidden", "w_out", "b_out", "w_cls")

_NORM_FLOOR = 1e-12


class NumericalDivergenceError(ArithmeticError):
    """A loss term became non-finite."""


@dataclass(frozen=True)
class RegionSample:
    """Pixels of one labeled region with its candidate class indices (sorted)."""

    features: np.ndarray  # (n, F)
    classes: tuple[int, ...]

    @property
    def is_single(self) -> bool:
        return len(self.classes) == 1


@dataclass(frozen=True)
class LossBreakdown:
    l_ce: float
    l_mp: float
    l_pp: float
    total: float
    lam_ce: float
    lam_mp: float


@dataclass
class OptimizerState:
    """Decoupled-weight-decay Adam moments, one pair per trainable array."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float


@dataclass(frozen=True)
class TrainConfig:
    iters_stage1: int = 2000
    iters_stage2: int = 2000
    regions_per_batch: int = 32
    pixels_per_region: int = 64
    stage2_batch_pixels: int = 2048
    lr_stage1: float = 2e-3
    lr_stage2: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    lam_ce: float = 16.0
    lam_mp: float = 8.0
    use_mp: bool = True
    use_pp: bool = True
    log_steps: bool = False


# ---------------------------------------------------------------------------
# loss values (operate on per-region probability blocks)

def loss_ce(regions: list[tuple[np.ndarray, int]]) -> float:
    """Mean over regions of mean over pixels of -log P(y=c|x); empty -> 0."""
    if not regions:
        return 0.0
    return float(np.mean([np.mean(-np.log(probs[:, c])) for probs, c in regions]))


def loss_mp(regions: list[tuple[np.ndarray, tuple[int, ...]]]) -> float:
    """Mean over regions of mean over pixels of -log sum_{c in Y} P(y=c|x)."""
    if not regions:
        return 0.0
    vals = [np.mean(-np.log(probs[:, list(y)].sum(axis=1))) for probs, y in regions]
    return float(np.mean(vals))


def prototypical_pixels(probs: np.ndarray, classes: tuple[int, ...]) -> dict[int, int]:
    """Per candidate class, the pixel with the highest probability for it
    (ties to the lowest pixel index)."""
    return {c: int(np.argmax(probs[:, c])) for c in classes}


def loss_pp(regions: list[tuple[np.ndarray, tuple[int, ...]]]) -> float:
    """Mean over regions of (1/|Y|) sum_c -log P(y=c | prototypical pixel of c)."""
    if not regions:
        return 0.0
    vals = []
    for probs, y in regions:
        protos = prototypical_pixels(probs, y)
        vals.append(np.mean([-np.log(probs[protos[c], c]) for c in y]))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# forward/backward

def _forward(params: ModelParams, feats: np.ndarray):
    hidden = np.tanh(feats @ params.w_hidden.T + params.b_hidden)
    emb = hidden @ params.w_out.T + params.b_out
    e_norm = np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), _NORM_FLOOR)
    w_norm = np.maximum(np.linalg.norm(params.w_cls, axis=1, keepdims=True), _NORM_FLOOR)
    u = emb / e_norm
    v = params.w_cls / w_norm
    logits = (u @ v.T) / params.tau
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return hidden, u, v, e_norm, w_norm, p


def _backward(params: ModelParams, feats, hidden, u, v, e_norm, w_norm, g_logits):
    """Push d(total)/d(logits) back to every parameter; returns the grad dict."""
    g_cos = g_logits / params.tau
    g_u = g_cos @ v
    g_v = g_cos.T @ u
    # normalize-backprop: d(x/||x||) projects out the radial component
    g_emb = (g_u - (g_u * u).sum(axis=1, keepdims=True) * u) / e_norm
    g_wcls = (g_v - (g_v * v).sum(axis=1, keepdims=True) * v) / w_norm
    g_hidden = g_emb @ params.w_out
    g_z = g_hidden * (1.0 - hidden * hidden)
    return {
        "w_hidden": g_z.T @ feats,
        "b_hidden": g_z.sum(axis=0),
        "w_out": g_emb.T @ hidden,
        "b_out": g_emb.sum(axis=0),
        "w_cls": g_wcls,
    }


def total_loss_and_grad(
    params: ModelParams,
    batch: list[RegionSample],
    lam_ce: float,
    lam_mp: float,
    use_mp: bool = True,
    use_pp: bool = True,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Stage-1 objective and its exact gradient for one minibatch of regions.

    Disabled terms are reported as 0 and contribute no gradient.
    """
    if lam_ce <= 0 or lam_mp <= 0:
        raise ValueError("lam_ce and lam_mp must be > 0")
    if not batch:
        raise ValueError("empty batch")
    feats = np.concatenate([s.features for s in batch], axis=0)
    hidden, u, v, e_norm, w_norm, p = _forward(params, feats)

    slices = []
    start = 0
    for s in batch:
        stop = start + len(s.features)
        slices.append(slice(start, stop))
        start = stop

    singles = [(i, s.classes[0]) for i, s in enumerate(batch) if s.is_single]
    multis = [(i, s.classes) for i, s in enumerate(batch) if not s.is_single]

    l_ce = loss_ce([(p[slices[i]], c) for i, c in singles])
    l_mp = loss_mp([(p[slices[i]], y) for i, y in multis]) if use_mp else 0.0
    l_pp = loss_pp([(p[slices[i]], y) for i, y in multis]) if use_pp else 0.0

    for name, value in (("l_ce", l_ce), ("l_mp", l_mp), ("l_pp", l_pp)):
        if not math.isfinite(value):
            raise NumericalDivergenceError(f"non-finite loss term {name}")
    total = lam_ce * l_ce + lam_mp * l_mp + l_pp

    g_logits = np.zeros_like(p)
    for i, c in singles:
        sl = slices[i]
        n = sl.stop - sl.start
        scale = lam_ce / (len(singles) * n)
        g_logits[sl] += scale * p[sl]
        g_logits[sl.start : sl.stop, c] -= scale
    for i, y in multis:
        sl = slices[i]
        n = sl.stop - sl.start
        ycols = list(y)
        if use_mp:
            block = p[sl]
            q = block[:, ycols].sum(axis=1, keepdims=True)
            scale = lam_mp / (len(multis) * n)
            g_logits[sl] += scale * block
            g_logits[sl.start : sl.stop, ycols] -= scale * block[:, ycols] / q
        if use_pp:
            protos = prototypical_pixels(p[sl], y)
            scale = 1.0 / (len(multis) * len(y))
            for c in y:
                row = sl.start + protos[c]
                g_logits[row] += scale * p[row]
                g_logits[row, c] -= scale
    grads = _backward(params, feats, hidden, u, v, e_norm, w_norm, g_logits)
    return LossBreakdown(l_ce, l_mp, l_pp, total, lam_ce, lam_mp), grads


def ce_loss_and_grad(
    params: ModelParams, feats: np.ndarray, classes: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Plain pixel-wise cross entropy (stage 2); mean over the batch."""
    feats = np.asarray(feats, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    hidden, u, v, e_norm, w_norm, p = _forward(params, feats)
    n = len(classes)
    picked = p[np.arange(n), classes]
    loss = float(np.mean(-np.log(picked)))
    if not math.isfinite(loss):
        raise NumericalDivergenceError("non-finite loss term l_ce")
    g_logits = p / n
    g_logits[np.arange(n), classes] -= 1.0 / n
    grads = _backward(params, feats, hidden, u, v, e_norm, w_norm, g_logits)
    return loss, grads


# ---------------------------------------------------------------------------
# optimizer

def optimizer_init(
    params: ModelParams,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
) -> OptimizerState:
    zeros = {name: np.zeros_like(getattr(params, name)) for name in TRAINABLE}
    return OptimizerState(
        m=zeros,
        v={name: arr.copy() for name, arr in zeros.items()},
        step=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )


def adamw_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One decoupled-weight-decay Adam update; pure in both arguments."""
    t = state.step + 1
    new_m, new_v, new_fields = {}, {}, {}
    for name in TRAINABLE:
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p = getattr(params, name)
        new_fields[name] = p - state.lr * (
            m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p
        )
        new_m[name], new_v[name] = m, v
    new_params = ModelParams(
        tau=params.tau, provenance=params.provenance, **new_fields
    )
    new_state = replace(state, m=new_m, v=new_v, step=t)
    return new_params, new_state


# ---------------------------------------------------------------------------
# training loops

def _region_batch(
    entry_refs,
    pool: LabeledPool,
    features: list[np.ndarray],
    partitions: list[Partition],
    class_count: int,
    pixels_cap: int,
    rng: np.random.Generator,
) -> list[RegionSample]:
    batch = []
    for img, region in entry_refs:
        pixels = partitions[img].pixels_of[region]
        if len(pixels) > pixels_cap:
            pixels = pixels[np.sort(rng.choice(len(pixels), pixels_cap, replace=False))]
        raw = pool.entries[(img, region)].label.classes
        classes = tuple(int(c) for c in class_index(np.array(raw), class_count))
        batch.append(RegionSample(features[img][pixels], classes))
    return batch


def train_stage1(
    params: ModelParams,
    pool: LabeledPool,
    features: list[np.ndarray],
    partitions: list[Partition],
    class_count: int,
    cfg: TrainConfig,
    seed: int,
    log: JsonlLogger | None = None,
) -> ModelParams:
    """Minibatch training on the accumulated region labels; deterministic in seed."""
    if len(pool) == 0:
        raise ValueError("empty labeled pool")
    rng = np.random.default_rng(np.random.SeedSequence([0x57A6E1, int(seed)]))
    refs = list(pool.entries.keys())
    state = optimizer_init(
        params, cfg.lr_stage1, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay
    )
    for step in range(cfg.iters_stage1):
        if len(refs) <= cfg.regions_per_batch:
            chosen = refs
        else:
            idx = rng.choice(len(refs), cfg.regions_per_batch, replace=False)
            chosen = [refs[i] for i in idx]
        batch = _region_batch(
            chosen, pool, features, partitions, class_count, cfg.pixels_per_region, rng
        )
        breakdown, grads = total_loss_and_grad(
            params, batch, cfg.lam_ce, cfg.lam_mp, cfg.use_mp, cfg.use_pp
        )
        params, state = adamw_step(params, grads, state)
        if log is not None and cfg.log_steps:
            log.event(
                "stage1_step",
                step=step,
                l_ce=breakdown.l_ce,
                l_mp=breakdown.l_mp,
                l_pp=breakdown.l_pp,
                total=breakdown.total,
            )
    return params


def train_stage2(
    params: ModelParams,
    pseudo_feats: np.ndarray,
    pseudo_classes: np.ndarray,
    cfg: TrainConfig,
    seed: int,
    log: JsonlLogger | None = None,
) -> ModelParams:
    """Cross-entropy training on pixel-wise pseudo labels, continuing from the
    stage-1 parameters. Empty pseudo sets return the parameters unchanged."""
    n = len(pseudo_classes)
    if n == 0:
        if log is not None:
            log.event("stage2_skipped", reason="empty pseudo-label set")
        return params
    rng = np.random.default_rng(np.random.SeedSequence([0x57A6E2, int(seed)]))
    state = optimizer_init(
        params, cfg.lr_stage2, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay
    )
    batch = min(n, cfg.stage2_batch_pixels)
    for step in range(cfg.iters_stage2):
        sel = rng.integers(0, n, size=batch)
        loss, grads = ce_loss_and_grad(params, pseudo_feats[sel], pseudo_classes[sel])
        params, state = adamw_step(params, grads, state)
        if log is not None and cfg.log_steps:
            log.event("stage2_step", step=step, l_ce=loss, l_mp=0.0, l_pp=0.0, total=loss)
    return params
