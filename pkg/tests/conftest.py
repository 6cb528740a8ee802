"""Shared fixtures plus acceptance-criterion reporting.

Acceptance tests register one line per criterion; the lines are printed in a
dedicated terminal section at the end of the run regardless of capture mode.
"""

from __future__ import annotations

import numpy as np
import pytest

from regal import dataio, experiment, superpixel

_acceptance_lines: list[tuple[float, str, bool]] = []


def record_criterion(number: float, name: str, passed: bool) -> None:
    _acceptance_lines.append((number, name, passed))
    print(f"criterion {number:g} ({name}): {'PASS' if passed else 'FAIL'}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed in sorted(_acceptance_lines):
        terminalreporter.write_line(f"criterion {number:g} ({name}): {'PASS' if passed else 'FAIL'}")


@pytest.fixture
def quad_scene():
    """16x16 image of four solid-color quadrants with matching mask."""
    image = np.zeros((16, 16, 3))
    mask = np.zeros((16, 16), dtype=np.uint8)
    colors = [(0.9, 0.1, 0.1), (0.1, 0.9, 0.1), (0.1, 0.1, 0.9), (0.8, 0.8, 0.1)]
    for k, (ys, xs) in enumerate(((0, 0), (0, 8), (8, 0), (8, 8))):
        image[ys : ys + 8, xs : xs + 8] = colors[k]
        mask[ys : ys + 8, xs : xs + 8] = k
    return image, mask


@pytest.fixture
def tiny_config(tmp_path):
    return experiment.ExperimentConfig(
        rounds=2,
        budget=30,
        synth_train=3,
        synth_val=2,
        width=48,
        height=48,
        class_count=4,
        site_count=8,
        noise_std=0.04,
        class_skew=0.8,
        target_size=12,
        iters_stage1=40,
        iters_stage2=40,
        stage2_batch_pixels=512,
        out_dir=str(tmp_path / "run"),
    )


def random_voronoi_labels(rng: np.random.Generator, height: int, width: int, regions: int) -> np.ndarray:
    """Arbitrary (possibly disconnected) label image for adjacency testing."""
    sites = rng.uniform(0, 1, (regions, 2)) * [width, height]
    xs, ys = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    d2 = (xs.ravel()[:, None] - sites[:, 0]) ** 2 + (ys.ravel()[:, None] - sites[:, 1]) ** 2
    return np.argmin(d2, axis=1).reshape(height, width)


def brute_adjacency(region_of: np.ndarray) -> list[list[int]]:
    """O(pixels) scan over all 4-adjacent pixel pairs."""
    h, w = region_of.shape
    count = int(region_of.max()) + 1
    neigh: list[set[int]] = [set() for _ in range(count)]
    for y in range(h):
        for x in range(w):
            for dy, dx in ((0, 1), (1, 0)):
                ny, nx = y + dy, x + dx
                if ny < h and nx < w:
                    a, b = int(region_of[y, x]), int(region_of[ny, nx])
                    if a != b:
                        neigh[a].add(b)
                        neigh[b].add(a)
    return [sorted(s) for s in neigh]


def brute_dominant(pixels, mask) -> int:
    counts: dict[int, int] = {}
    for p in pixels:
        c = int(mask.ravel()[p])
        counts[c] = counts.get(c, 0) + 1
    ordered = sorted(counts, key=lambda c: (-counts[c], c == dataio.UNDEF, c))
    return ordered[0]


def brute_multiclass(pixels, mask, partition: superpixel.Partition) -> tuple[int, ...]:
    """Literal per-pixel boundary + 5x5 dilation evaluation."""
    h, w = mask.shape
    in_region = set(int(p) for p in pixels)
    boundary = []
    for p in in_region:
        y, x = divmod(p, w)
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w) or (ny * w + nx) not in in_region:
                boundary.append((y, x))
                break
    band = set()
    for by, bx in boundary:
        for dy in range(-2, 3):
            for dx in range(-2, 3):
                band.add((by + dy, bx + dx))
    core = [p for p in in_region if divmod(p, w) not in band]
    if core:
        return tuple(sorted({int(mask.ravel()[p]) for p in core}))
    return (brute_dominant(sorted(in_region), mask),)
