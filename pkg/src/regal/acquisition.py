"""Region scoring and click-budgeted batch selection.

Per-pixel uncertainty is best-versus-second-best (BvSB): the ratio of the
second-highest to the highest class probability. The pixel-balanced scorer
discounts each pixel's uncertainty by the estimated dataset frequency of that
pixel's own top class, so uncertain regions of rare classes rank first:

    score(s) = (1/|s|) * sum_x  u(x) / (1 + nu * freq[top_class(x)])^2

The class-balanced baseline applies the same discount once per region using
the region's dominant predicted class instead of per pixel.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .oracle import LabeledPool, RegionRef, label_region
from .superpixel import Partition

SAMPLERS = ("random", "margin", "bvsb", "classbal", "pixbal")


class PoolExhaustedError(RuntimeError):
    """No unlabeled, eligible region is left to query."""


@dataclass(frozen=True)
class AcquisitionScore:
    ref: RegionRef
    score: float
    dominant: int | None  # predicted dominant class index; None before any model exists


@dataclass(frozen=True)
class PixelStats:
    """Per-pixel top-2 probabilities and the top class index for one image."""

    best: np.ndarray
    second: np.ndarray
    best_class: np.ndarray

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "PixelStats":
        top2 = np.partition(probs, -2, axis=1)[:, -2:]
        return cls(
            best=top2[:, 1],
            second=top2[:, 0],
            best_class=np.argmax(probs, axis=1),
        )


def bvsb(probs: np.ndarray) -> float:
    """Second-best over best probability for a single pixel; in [0, 1]."""
    if probs.shape[-1] < 2:
        raise ValueError("need at least two classes")
    top2 = np.partition(probs, -2)[-2:]
    return float(top2[0] / top2[1])


def estimate_class_distribution(probs: np.ndarray) -> np.ndarray:
    """Label distribution estimate: per-class mean predictive probability."""
    probs = np.asarray(probs)
    if probs.size == 0:
        raise ValueError("empty pixel set")
    return probs.mean(axis=0)


def score_pixbal(stats: PixelStats, pixels: np.ndarray, dist: np.ndarray, nu: float) -> float:
    if nu < 0:
        raise ValueError("nu must be >= 0")
    u = stats.second[pixels] / stats.best[pixels]
    weight = (1.0 + nu * dist[stats.best_class[pixels]]) ** 2
    return float(np.mean(u / weight))


def score_classbal(stats: PixelStats, pixels: np.ndarray, dist: np.ndarray, nu: float) -> float:
    if nu < 0:
        raise ValueError("nu must be >= 0")
    u = stats.second[pixels] / stats.best[pixels]
    dominant = predicted_dominant(stats, pixels)
    return float(np.mean(u) / (1.0 + nu * dist[dominant]) ** 2)


def score_margin(stats: PixelStats, pixels: np.ndarray) -> float:
    """Mean over pixels of 1 - (best - second best); 0 certain, 1 uniform."""
    return float(np.mean(1.0 - (stats.best[pixels] - stats.second[pixels])))


def score_bvsb(stats: PixelStats, pixels: np.ndarray) -> float:
    return float(np.mean(stats.second[pixels] / stats.best[pixels]))


def score_random(ref: RegionRef, round_index: int, seed: int) -> float:
    """Hash-derived uniform score in [0, 1); stable across platforms."""
    packed = struct.pack("<qqqq", seed, round_index, ref[0], ref[1])
    digest = hashlib.blake2b(packed, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def predicted_dominant(stats: PixelStats, pixels: np.ndarray) -> int:
    """Mode of per-pixel argmax classes; ties to the lowest class index."""
    counts = np.bincount(stats.best_class[pixels])
    return int(np.argmax(counts))


def score_regions(
    sampler: str,
    stats_per_image: list[PixelStats | None],
    partitions: list[Partition],
    unlabeled: list[RegionRef],
    dist: np.ndarray | None,
    nu: float,
    round_index: int,
    seed: int,
) -> list[AcquisitionScore]:
    """Score every unlabeled region. With no model yet (stats all None) the
    scores are random and no dominant-class prediction is attached."""
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}")
    out = []
    for ref in unlabeled:
        img, region = ref
        stats = stats_per_image[img] if stats_per_image is not None else None
        if stats is None:
            out.append(AcquisitionScore(ref, score_random(ref, round_index, seed), None))
            continue
        pixels = partitions[img].pixels_of[region]
        dominant = predicted_dominant(stats, pixels)
        if sampler == "random":
            score = score_random(ref, round_index, seed)
        elif sampler == "margin":
            score = score_margin(stats, pixels)
        elif sampler == "bvsb":
            score = score_bvsb(stats, pixels)
        elif sampler == "classbal":
            score = score_classbal(stats, pixels, dist, nu)
        else:
            score = score_pixbal(stats, pixels, dist, nu)
        out.append(AcquisitionScore(ref, score, dominant))
    return out


def select_batch(
    scores: list[AcquisitionScore],
    pool: LabeledPool,
    budget_clicks: int,
    mode: str,
    masks: list[np.ndarray],
    partitions: list[Partition],
    round_index: int,
    undefined_class: int | None = None,
) -> tuple[list[RegionRef], int, int]:
    """Query regions by descending score until the click budget is crossed.

    Regions whose predicted dominant class is the undefined class are skipped.
    The region that crosses the budget is kept; the overshoot is returned.
    Runs out of regions before the budget only when the pool is exhausted.
    """
    if budget_clicks < 1:
        raise ValueError("budget_clicks must be >= 1")
    eligible = [
        s
        for s in scores
        if s.ref not in pool
        and not (undefined_class is not None and s.dominant == undefined_class)
    ]
    if not eligible:
        raise PoolExhaustedError("pool exhausted: no unlabeled eligible region")
    eligible.sort(key=lambda s: (-s.score, s.ref))
    selected: list[RegionRef] = []
    clicks = 0
    for s in eligible:
        label, cost = label_region(s.ref, masks, partitions, mode)
        pool.add(s.ref, label, round_index)
        selected.append(s.ref)
        clicks += cost
        if clicks >= budget_clicks:
            break
    return selected, clicks, max(0, clicks - budget_clicks)


def write_scores_csv(scores: list[AcquisitionScore], path, class_count: int) -> None:
    """Audit dump: one row per scored region with its predicted dominant class."""
    from .model import index_to_raw

    lines = ["image,region,score,pred_dominant"]
    for s in scores:
        dom = "" if s.dominant is None else str(int(index_to_raw(s.dominant, class_count)))
        lines.append(f"{s.ref[0]},{s.ref[1]},{s.score:.6f},{dom}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
