import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regal import dataio, superpixel
from regal.dataio import SyntheticSpec, generate_synthetic

from conftest import brute_adjacency, random_voronoi_labels


class TestGridPartition:
    def test_exact_tiling(self):
        part = superpixel.grid_partition(np.zeros((64, 64, 3)), 32)
        assert part.region_count == 4
        assert all(len(p) == 1024 for p in part.pixels_of)

    def test_truncated_boundary_cells(self):
        part = superpixel.grid_partition(np.zeros((64, 65, 3)), 32)
        assert part.region_count == 6
        # rightmost column of cells is one pixel wide
        right = [p for rid, p in enumerate(part.pixels_of) if rid % 3 == 2]
        assert all(len(p) == 32 for p in right)

    def test_degenerate_single_region(self):
        part = superpixel.grid_partition(np.zeros((10, 20, 3)), 64)
        assert part.region_count == 1
        assert len(part.pixels_of[0]) == 200

    def test_row_major_ids(self):
        part = superpixel.grid_partition(np.zeros((4, 4, 3)), 2)
        assert part.region_of[0, 0] == 0
        assert part.region_of[0, 3] == 1
        assert part.region_of[3, 0] == 2
        assert part.region_of[3, 3] == 3


class TestSlicPartition:
    def test_uniform_image_matches_reference(self):
        pytest.importorskip("skimage")
        from skimage.segmentation import slic as reference_slic

        image = np.full((64, 64, 3), 0.5)
        part = superpixel.slic_partition(image, target_size=16)
        assert part.region_count == 16
        areas = np.sort([len(p) for p in part.pixels_of])
        assert np.all(np.abs(areas - 256) <= 0.4 * 256)

        ref = reference_slic(image, n_segments=16, compactness=10.0, start_label=0)
        ref_areas = np.sort(np.bincount(ref.ravel()))
        assert len(ref_areas) == part.region_count
        assert np.max(np.abs(ref_areas - areas)) <= 0.4 * 256

    def test_invariants_on_noisy_image(self):
        rng = np.random.default_rng(3)
        image = rng.uniform(0, 1, (40, 56, 3))
        part = superpixel.slic_partition(image, target_size=10)
        part.validate()
        assert sum(len(p) for p in part.pixels_of) == 40 * 56

    def test_two_tone_boundary_recall(self):
        # low compactness lets color dominate; regions must respect the edge
        image = np.zeros((32, 32, 3))
        image[:, 16:] = 1.0
        part = superpixel.slic_partition(image, target_size=8, compactness=0.5)
        for pixels in part.pixels_of:
            cols = pixels % 32
            straddles = cols.min() <= 14 and cols.max() >= 17
            assert not straddles

    def test_smaller_than_target_single_region(self):
        part = superpixel.slic_partition(np.zeros((8, 8, 3)), target_size=16)
        assert part.region_count == 1

    def test_deterministic(self):
        image, _ = generate_synthetic(SyntheticSpec(48, 48, 4, 9), seed=7)
        a = superpixel.slic_partition(image, 12)
        b = superpixel.slic_partition(image, 12)
        assert np.array_equal(a.region_of, b.region_of)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            superpixel.slic_partition(np.zeros((8, 8, 3)), target_size=1)
        with pytest.raises(ValueError):
            superpixel.slic_partition(np.zeros((8, 8, 3)), target_size=4, iterations=0)


class TestAdjacency:
    def test_two_by_two_grid(self):
        part = superpixel.grid_partition(np.zeros((8, 8, 3)), 4)
        neighbors = superpixel.region_adjacency(part)
        assert [list(n) for n in neighbors] == [[1, 2], [0, 3], [0, 3], [1, 2]]

    def test_single_region(self):
        part = superpixel.grid_partition(np.zeros((8, 8, 3)), 16)
        assert [list(n) for n in superpixel.region_adjacency(part)] == [[]]

    def test_matches_brute_force_on_random_partition(self):
        rng = np.random.default_rng(11)
        labels = random_voronoi_labels(rng, 16, 16, 9)
        part = superpixel.Partition.from_labels(labels)
        got = [list(n) for n in superpixel.region_adjacency(part)]
        assert got == brute_adjacency(part.region_of)

    def test_symmetric_irreflexive(self):
        image, _ = generate_synthetic(SyntheticSpec(32, 32, 3, 6), seed=2)
        part = superpixel.slic_partition(image, 8)
        neighbors = superpixel.region_adjacency(part)
        for rid, neigh in enumerate(neighbors):
            assert rid not in neigh
            for other in neigh:
                assert rid in neighbors[other]


@given(seed=st.integers(0, 1000), width=st.integers(12, 40), height=st.integers(12, 40))
@settings(max_examples=20, deadline=None)
def test_partition_properties_random_images(seed, width, height):
    spec = SyntheticSpec(width, height, 3, 6, noise_std=0.08)
    image, _ = generate_synthetic(spec, seed)
    for part in (
        superpixel.grid_partition(image, 8),
        superpixel.slic_partition(image, 8),
    ):
        part.validate()
        assert sum(len(p) for p in part.pixels_of) == width * height
        neighbors = superpixel.region_adjacency(part)
        assert [list(n) for n in neighbors] == brute_adjacency(part.region_of)


def test_partition_pgm_dump(tmp_path):
    part = superpixel.grid_partition(np.zeros((8, 8, 3)), 4)
    path = tmp_path / "regions.pgm"
    superpixel.write_partition_pgm(part, path)
    back = dataio.read_pgm(path)
    assert np.array_equal(back, part.region_of)


def test_adjacency_jsonl_dump(tmp_path):
    part = superpixel.grid_partition(np.zeros((8, 8, 3)), 4)
    path = tmp_path / "adj.jsonl"
    superpixel.write_adjacency_jsonl(superpixel.region_adjacency(part), path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert records[0] == {"region": 0, "neighbors": [1, 2]}
    assert len(records) == 4
