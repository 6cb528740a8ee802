"""Pixel-wise pseudo labels from region labels.

Inside each labeled region, every candidate class gets a prototype: the
embedding at its most confident pixel. Pixels of the region are assigned the
class of their nearest prototype by cosine similarity (localization). Labels
then spread into adjacent unlabeled regions, but only to pixels whose cosine
to some prototype exceeds that class's threshold: the median cosine of the
pixels localized to the class (expansion). Pseudo labels are rebuilt from
scratch every round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, class_index, embed, index_to_raw, predict_probs
from .oracle import LabeledPool, RegionRef
from .superpixel import Partition

TAG_NONE, TAG_SINGLE, TAG_LOCALIZED, TAG_EXPANDED = 0, 1, 2, 3

_SRC_NONE = np.iinfo(np.int32).max  # sentinel beats no real region id in ties


@dataclass(frozen=True)
class RegionPrototypes:
    """Per labeled region: candidate class indices, their prototypical pixels
    (flat image indices), unit-norm prototype embeddings, and expansion
    thresholds (+inf for classes that won nothing during localization)."""

    ref: RegionRef
    classes: tuple[int, ...]
    pixel_indices: np.ndarray
    embeddings: np.ndarray  # (k, d), rows unit norm
    thresholds: np.ndarray  # (k,)


@dataclass
class PseudoLabelMap:
    """Per image: flat class index per pixel (-1 unlabeled), a source tag, and
    for expanded pixels the winning cosine and source region id."""

    class_of: list[np.ndarray]
    tag_of: list[np.ndarray]
    source_of: list[np.ndarray]
    score_of: list[np.ndarray]

    @classmethod
    def empty(cls, pixel_counts: list[int]) -> "PseudoLabelMap":
        return cls(
            class_of=[np.full(n, -1, dtype=np.int32) for n in pixel_counts],
            tag_of=[np.zeros(n, dtype=np.uint8) for n in pixel_counts],
            source_of=[np.full(n, _SRC_NONE, dtype=np.int32) for n in pixel_counts],
            score_of=[np.full(n, np.nan) for n in pixel_counts],
        )

    def localized_pixels(self) -> int:
        return int(sum((t == TAG_LOCALIZED).sum() for t in self.tag_of))

    def expanded_pixels(self) -> int:
        return int(sum((t == TAG_EXPANDED).sum() for t in self.tag_of))

    def labeled_pixels(self) -> int:
        return int(sum((t != TAG_NONE).sum() for t in self.tag_of))

    def training_set(self, features: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Gather (features, class indices) over every pseudo-labeled pixel."""
        xs, ys = [], []
        for img, tags in enumerate(self.tag_of):
            sel = np.flatnonzero(tags != TAG_NONE)
            xs.append(features[img][sel])
            ys.append(self.class_of[img][sel])
        return np.concatenate(xs, axis=0), np.concatenate(ys).astype(np.int64)


def localize(cosines: np.ndarray) -> np.ndarray:
    """Nearest-prototype assignment: per-row argmax over candidate columns,
    ties to the lowest class id (columns are in ascending class order)."""
    return np.argmax(cosines, axis=1)


def adaptive_thresholds(cosines: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """Per candidate class, the median cosine of the pixels assigned to it.

    Even-sized sets take the mean of the two middle values. A class that won
    no pixels gets +inf so it cannot expand.
    """
    k = cosines.shape[1]
    out = np.full(k, np.inf)
    for j in range(k):
        mine = cosines[assignment == j, j]
        if mine.size:
            out[j] = np.median(mine)
    return out


def expansion_candidates(
    cosines: np.ndarray, thresholds: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Relevance-gated assignment for pixels of an adjacent region.

    A pixel is relevant when its cosine to at least one prototype strictly
    exceeds that class's threshold; it then takes the passing class with the
    highest cosine. Returns (relevant mask, winning column, winning cosine).
    """
    passing = cosines > thresholds
    masked = np.where(passing, cosines, -np.inf)
    winner = np.argmax(masked, axis=1)
    rows = np.arange(len(cosines))
    return passing.any(axis=1), winner, masked[rows, winner]


def region_prototypes(
    ref: RegionRef,
    label_classes: tuple[int, ...],
    pixels: np.ndarray,
    probs: np.ndarray,
    unit_emb: np.ndarray,
    class_count: int,
) -> tuple[RegionPrototypes, np.ndarray, np.ndarray]:
    """Prototypes, localization, and thresholds for one labeled region.

    Returns (prototypes, per-pixel class indices, cosine matrix used).
    """
    classes = tuple(int(c) for c in class_index(np.array(label_classes), class_count))
    block = probs[pixels][:, classes]
    proto_local = np.argmax(block, axis=0)
    proto_pixels = pixels[proto_local]
    proto_emb = unit_emb[proto_pixels]
    cosines = unit_emb[pixels] @ proto_emb.T
    assignment = localize(cosines)
    thresholds = adaptive_thresholds(cosines, assignment)
    protos = RegionPrototypes(ref, classes, proto_pixels, proto_emb, thresholds)
    return protos, np.asarray(classes)[assignment], cosines


def build_pseudo_dataset(
    pool: LabeledPool,
    partitions: list[Partition],
    adjacency: list[list[np.ndarray]],
    params: ModelParams,
    features: list[np.ndarray],
    class_count: int,
    expand: bool = True,
) -> PseudoLabelMap:
    """Full pseudo-label map for the current round.

    Single-class regions keep their class everywhere; multi-class regions are
    localized; every labeled region proposes labels in adjacent unlabeled
    regions, and conflicting proposals resolve to the highest cosine (ties to
    the lowest source region id).
    """
    n_images = len(partitions)
    pixel_counts = [p.region_of.size for p in partitions]
    out = PseudoLabelMap.empty(pixel_counts)

    unit_emb: list[np.ndarray | None] = [None] * n_images
    probs: list[np.ndarray | None] = [None] * n_images
    touched = sorted({img for img, _ in pool.entries})
    for img in touched:
        e = embed(features[img], params)
        norms = np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
        unit_emb[img] = e / norms
        probs[img] = predict_probs(e, params)

    protos_by_region: list[RegionPrototypes] = []
    for (img, region), entry in pool.entries.items():
        pixels = partitions[img].pixels_of[region]
        if entry.label.is_single:
            cls = int(class_index(np.array(entry.label.classes), class_count)[0])
            out.class_of[img][pixels] = cls
            out.tag_of[img][pixels] = TAG_SINGLE
            if expand:
                protos, _, _ = region_prototypes(
                    (img, region), entry.label.classes, pixels,
                    probs[img], unit_emb[img], class_count,
                )
                protos_by_region.append(protos)
            continue
        protos, assigned, _ = region_prototypes(
            (img, region), entry.label.classes, pixels,
            probs[img], unit_emb[img], class_count,
        )
        out.class_of[img][pixels] = assigned
        out.tag_of[img][pixels] = TAG_LOCALIZED
        protos_by_region.append(protos)

    if expand:
        best_score = [np.full(n, -np.inf) for n in pixel_counts]
        for protos in protos_by_region:
            img, region = protos.ref
            for neighbor in adjacency[img][region]:
                neighbor = int(neighbor)
                if (img, neighbor) in pool:
                    continue
                pixels = partitions[img].pixels_of[neighbor]
                cosines = unit_emb[img][pixels] @ protos.embeddings.T
                relevant, winner, score = expansion_candidates(cosines, protos.thresholds)
                current_src = out.source_of[img][pixels]
                better = relevant & (
                    (score > best_score[img][pixels])
                    | ((score == best_score[img][pixels]) & (region < current_src))
                )
                if not better.any():
                    continue
                target = pixels[better]
                out.class_of[img][target] = np.asarray(protos.classes)[winner[better]]
                out.tag_of[img][target] = TAG_EXPANDED
                out.source_of[img][target] = region
                out.score_of[img][target] = score[better]
                best_score[img][target] = score[better]
    return out


def write_pseudo_pgm(
    pseudo: PseudoLabelMap,
    partitions: list[Partition],
    class_count: int,
    image_index: int,
    class_path,
    tag_path,
) -> None:
    """Debug dump: class-id PGM (255 = unlabeled or undefined) plus tag PGM."""
    from .dataio import write_pgm

    shape = partitions[image_index].region_of.shape
    cls = pseudo.class_of[image_index]
    raw = index_to_raw(np.where(cls < 0, class_count, cls), class_count)
    write_pgm(class_path, raw.reshape(shape).astype(np.uint8))
    write_pgm(tag_path, pseudo.tag_of[image_index].reshape(shape))
