"""Partition images into connected regions (grid or SLIC) and build adjacency graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataio import write_pgm

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)  # 4-connectivity


@dataclass
class Partition:
    """Non-overlapping cover of an image by connected regions.

    region_of maps each pixel to its region id; pixels_of is the exact inverse
    (per-region sorted flat pixel indices).
    """

    region_of: np.ndarray  # (H, W) int32
    region_count: int
    pixels_of: list[np.ndarray] = field(repr=False)

    @property
    def height(self) -> int:
        return self.region_of.shape[0]

    @property
    def width(self) -> int:
        return self.region_of.shape[1]

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "Partition":
        """Compact arbitrary non-negative labels to 0..K-1, preserving label order."""
        labels = np.asarray(labels)
        uniq, compact = np.unique(labels, return_inverse=True)
        compact = compact.reshape(labels.shape).astype(np.int32)
        order = np.argsort(compact.ravel(), kind="stable")
        counts = np.bincount(compact.ravel(), minlength=len(uniq))
        pixels_of = list(np.split(order, np.cumsum(counts)[:-1]))
        return cls(region_of=compact, region_count=len(uniq), pixels_of=pixels_of)

    def validate(self) -> None:
        """Check cover, inverse-map consistency, and 4-connectivity of every region."""
        flat = self.region_of.ravel()
        assert flat.min() >= 0 and flat.max() < self.region_count
        assert sum(len(p) for p in self.pixels_of) == flat.size
        for rid, pixels in enumerate(self.pixels_of):
            assert len(pixels) > 0, f"region {rid} is empty"
            assert np.all(flat[pixels] == rid)
            assert np.all(np.diff(pixels) > 0), "pixel indices must be sorted"
            comp, ncomp = ndimage.label(self.region_of == rid, structure=_CROSS)
            assert ncomp == 1, f"region {rid} has {ncomp} connected components"


def grid_partition(image: np.ndarray, cell: int) -> Partition:
    """Axis-aligned cell x cell tiling; boundary cells truncated; row-major ids."""
    if cell < 1:
        raise ValueError("cell must be >= 1")
    h, w = np.asarray(image).shape[:2]
    cols = (np.arange(w) // cell).astype(np.int32)
    rows = (np.arange(h) // cell).astype(np.int32)
    ncols = cols[-1] + 1
    labels = rows[:, None] * ncols + cols[None, :]
    return Partition.from_labels(labels)


def _color_gradient(image: np.ndarray) -> np.ndarray:
    # squared forward/backward color difference, edges replicated
    g = np.zeros(image.shape[:2])
    dx = image[:, 2:] - image[:, :-2]
    dy = image[2:, :] - image[:-2, :]
    g[:, 1:-1] += (dx**2).sum(axis=-1)
    g[1:-1, :] += (dy**2).sum(axis=-1)
    return g


def slic_partition(
    image: np.ndarray,
    target_size: int,
    compactness: float = 10.0,
    iterations: int = 10,
    seed: int = 0,
) -> Partition:
    """SLIC clustering in RGB+xy with connectivity enforcement.

    Cluster centers start on a target_size grid, moved to the lowest-gradient
    pixel in a 3x3 window. Assignment uses color distance plus
    compactness * spatial distance / target_size within a +-target_size window
    per center. The algorithm is fully deterministic; `seed` is accepted for
    interface stability and unused.
    """
    if target_size < 2:
        raise ValueError("target_size must be >= 2")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if w < target_size or h < target_size:
        return Partition.from_labels(np.zeros((h, w), dtype=np.int32))

    step = target_size
    nx, ny = max(1, w // step), max(1, h // step)
    cxs = (np.arange(nx) + 0.5) * (w / nx)
    cys = (np.arange(ny) + 0.5) * (h / ny)

    grad = _color_gradient(img)
    centers_yx = np.empty((ny * nx, 2))
    for k, (cy, cx) in enumerate((y, x) for y in cys for x in cxs):
        py, px = int(cy), int(cx)
        y0, y1 = max(0, py - 1), min(h, py + 2)
        x0, x1 = max(0, px - 1), min(w, px + 2)
        window = grad[y0:y1, x0:x1]
        dy, dx = np.unravel_index(np.argmin(window), window.shape)
        centers_yx[k] = (y0 + dy, x0 + dx)
    centers_color = img[centers_yx[:, 0].astype(int), centers_yx[:, 1].astype(int)]

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.full((h, w), -1, dtype=np.int32)
    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        labels.fill(-1)
        for k in range(len(centers_yx)):
            cy, cx = centers_yx[k]
            y0, y1 = max(0, int(cy) - step), min(h, int(cy) + step + 1)
            x0, x1 = max(0, int(cx) - step), min(w, int(cx) + step + 1)
            d_color = np.sqrt(((img[y0:y1, x0:x1] - centers_color[k]) ** 2).sum(axis=-1))
            d_space = np.sqrt((yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2)
            dist = d_color + compactness * d_space / step
            closer = dist < best[y0:y1, x0:x1]
            best[y0:y1, x0:x1][closer] = dist[closer]
            labels[y0:y1, x0:x1][closer] = k
        if (labels < 0).any():
            # pixels outside every search window: nearest center spatially
            miss = np.flatnonzero(labels.ravel() < 0)
            my, mx = np.unravel_index(miss, (h, w))
            d2 = (my[:, None] - centers_yx[:, 0]) ** 2 + (mx[:, None] - centers_yx[:, 1]) ** 2
            labels.ravel()[miss] = np.argmin(d2, axis=1)
        for k in range(len(centers_yx)):
            sel = labels == k
            if sel.any():
                centers_yx[k] = (yy[sel].mean(), xx[sel].mean())
                centers_color[k] = img[sel].reshape(-1, 3).mean(axis=0)

    labels = _merge_orphans(labels)
    return Partition.from_labels(labels)


def _merge_orphans(labels: np.ndarray) -> np.ndarray:
    """Keep the largest component of each label; merge the rest into the adjacent
    region sharing the longest boundary (ties to the lowest region id)."""
    labels = labels.copy()
    h, w = labels.shape
    for _ in range(64):
        orphans = []
        for lab in np.unique(labels):
            comp, ncomp = ndimage.label(labels == lab, structure=_CROSS)
            if ncomp <= 1:
                continue
            comps = [np.flatnonzero(comp.ravel() == c + 1) for c in range(ncomp)]
            comps.sort(key=lambda p: (-len(p), p[0]))
            orphans.extend(comps[1:])
        if not orphans:
            return labels
        orphans.sort(key=lambda p: p[0])
        flat = labels.ravel()
        for pixels in orphans:
            own = flat[pixels[0]]
            ys, xs = np.unravel_index(pixels, (h, w))
            contacts = []
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = ys + dy, xs + dx
                ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
                neigh = labels[ny[ok], nx[ok]]
                contacts.append(neigh[neigh != own])
            values, counts = np.unique(np.concatenate(contacts), return_counts=True)
            if not len(values):
                continue  # absorbed by an earlier merge this sweep; recheck next sweep
            target = values[np.lexsort((values, -counts))[0]]
            flat[pixels] = target
    raise RuntimeError("connectivity enforcement did not converge")


def region_adjacency(partition: Partition) -> list[np.ndarray]:
    """Per-region sorted neighbor ids; regions are adjacent iff some pixel pair
    is 4-adjacent across the region border. Symmetric and irreflexive."""
    lab = partition.region_of
    pairs = []
    for a, b in ((lab[:, :-1], lab[:, 1:]), (lab[:-1, :], lab[1:, :])):
        diff = a != b
        pairs.append(np.stack([a[diff], b[diff]], axis=1))
    both = np.concatenate(pairs + [np.concatenate(pairs)[:, ::-1]])
    neighbors = [np.array([], dtype=np.int64) for _ in range(partition.region_count)]
    if len(both):
        both = both[np.lexsort((both[:, 1], both[:, 0]))]
        uniq = both[np.concatenate([[True], np.any(np.diff(both, axis=0) != 0, axis=1)])]
        split_at = np.searchsorted(uniq[:, 0], np.arange(partition.region_count + 1))
        for rid in range(partition.region_count):
            neighbors[rid] = uniq[split_at[rid] : split_at[rid + 1], 1].astype(np.int64)
    return neighbors


def write_partition_pgm(partition: Partition, path: str | Path) -> None:
    """Region-id dump as 16-bit PGM for visual debugging."""
    if partition.region_count > 65536:
        raise ValueError("too many regions for a 16-bit dump")
    write_pgm(path, partition.region_of.astype(np.uint16), maxval=65535)


def write_adjacency_jsonl(neighbors: list[np.ndarray], path: str | Path) -> None:
    with open(path, "w") as f:
        for rid, neigh in enumerate(neighbors):
            f.write(json.dumps({"region": rid, "neighbors": [int(n) for n in neigh]}) + "\n")
