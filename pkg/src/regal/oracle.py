"""Simulated annotator: region labels replayed from ground-truth masks.

Dominant mode returns the majority class of a region for one click.
Multi-class mode returns every class present in the region's interior,
ignoring classes that only appear on a 5x5-dilated band along the region
boundary, and costs one click per returned class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataio import UNDEF
from .superpixel import Partition

RegionRef = tuple[int, int]  # (image index, region id)

MODES = ("dominant", "multiclass")


class AlreadyLabeledError(ValueError):
    """A region was queried twice."""


@dataclass(frozen=True)
class MultiClassLabel:
    """Non-empty sorted set of class ids present in a region (may include UNDEF)."""

    classes: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 1:
            raise ValueError("a label needs at least one class")
        if list(self.classes) != sorted(set(self.classes)):
            raise ValueError("classes must be sorted and unique")

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def is_single(self) -> bool:
        return len(self.classes) == 1


@dataclass(frozen=True)
class PoolEntry:
    label: MultiClassLabel
    round_index: int


@dataclass
class LabeledPool:
    """Acquired region labels; a region can appear at most once."""

    entries: dict[RegionRef, PoolEntry] = field(default_factory=dict)

    def __contains__(self, ref: RegionRef) -> bool:
        return ref in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, ref: RegionRef, label: MultiClassLabel, round_index: int) -> None:
        if ref in self.entries:
            raise AlreadyLabeledError(f"already labeled: image {ref[0]} region {ref[1]}")
        self.entries[ref] = PoolEntry(label, round_index)

    def singles(self) -> list[tuple[RegionRef, PoolEntry]]:
        return [(r, e) for r, e in self.entries.items() if e.label.is_single]

    def multis(self) -> list[tuple[RegionRef, PoolEntry]]:
        return [(r, e) for r, e in self.entries.items() if not e.label.is_single]

    def click_cost(self) -> int:
        return sum(len(e.label) for e in self.entries.values())

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for (img, region), e in self.entries.items():
                rec = {
                    "image": img,
                    "region": region,
                    "classes": list(e.label.classes),
                    "round": e.round_index,
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "LabeledPool":
        pool = cls()
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            pool.add(
                (rec["image"], rec["region"]),
                MultiClassLabel(tuple(rec["classes"])),
                rec["round"],
            )
        return pool


def dominant_label(pixels: np.ndarray, mask: np.ndarray) -> int:
    """Majority class over the region; ties to the lowest id, UNDEF ordered last."""
    if len(pixels) == 0:
        raise ValueError("empty region")
    counts = np.bincount(mask.ravel()[pixels], minlength=256)
    present = np.flatnonzero(counts)
    return int(min(present, key=lambda c: (-counts[c], c == UNDEF, c)))


def multiclass_label(pixels: np.ndarray, mask: np.ndarray, partition: Partition) -> MultiClassLabel:
    """Classes present in the region after removing a dilated boundary band.

    Boundary pixels are region pixels 4-adjacent to another region or to the
    image edge; the band is their 5x5 binary dilation intersected with the
    region. When nothing survives, falls back to the dominant class.
    """
    if len(pixels) == 0:
        raise ValueError("empty region")
    h, w = mask.shape
    in_region = np.zeros(h * w, dtype=bool)
    in_region[pixels] = True
    in_region = in_region.reshape(h, w)
    padded = np.pad(in_region, 1)
    interior_nb = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    boundary = in_region & ~interior_nb
    band = ndimage.binary_dilation(boundary, structure=np.ones((5, 5), dtype=bool))
    core = in_region & ~band
    if core.any():
        classes = tuple(int(c) for c in np.unique(mask[core]))
    else:
        classes = (dominant_label(pixels, mask),)
    return MultiClassLabel(classes)


def label_region(
    ref: RegionRef,
    masks: list[np.ndarray],
    partitions: list[Partition],
    mode: str,
) -> tuple[MultiClassLabel, int]:
    """Label one region; returns (label, clicks). Dominant costs 1, multi costs |Y|."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    img, region = ref
    pixels = partitions[img].pixels_of[region]
    if mode == "dominant":
        label = MultiClassLabel((dominant_label(pixels, masks[img]),))
        return label, 1
    label = multiclass_label(pixels, masks[img], partitions[img])
    return label, len(label)


def query_batch(
    refs: list[RegionRef],
    masks: list[np.ndarray],
    partitions: list[Partition],
    mode: str,
    pool: LabeledPool,
    round_index: int,
) -> tuple[list[tuple[RegionRef, MultiClassLabel]], int]:
    """Label every region in order, inserting into the pool; returns entries and clicks."""
    for ref in refs:
        if ref in pool:
            raise AlreadyLabeledError(f"already labeled: image {ref[0]} region {ref[1]}")
    new_entries = []
    clicks = 0
    for ref in refs:
        label, cost = label_region(ref, masks, partitions, mode)
        pool.add(ref, label, round_index)
        new_entries.append((ref, label))
        clicks += cost
    return new_entries, clicks
