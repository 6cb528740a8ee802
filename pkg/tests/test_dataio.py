import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regal import dataio
from regal.experiment import RoundReport


def make_report(round_index, cum_clicks, miou, per_class):
    return RoundReport(
        round_index=round_index,
        clicks=cum_clicks,
        cum_clicks=cum_clicks,
        overshoot=0,
        miou=miou,
        per_class_iou=np.asarray(per_class),
        stage1_loss=0.0,
        stage2_loss=0.0,
        localized_pixels=0,
        expanded_pixels=0,
    )


class TestNetpbm:
    def test_ppm_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (5, 7, 3))
        path = tmp_path / "a.ppm"
        dataio.write_ppm(path, img)
        back = dataio.read_ppm(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_mask_round_trip_exact(self, tmp_path):
        mask = np.array([[0, 1, 255], [3, 2, 0]], dtype=np.uint8)
        path = tmp_path / "m.pgm"
        dataio.write_pgm(path, mask)
        assert np.array_equal(dataio.read_pgm(path), mask)

    def test_pgm_16bit_round_trip(self, tmp_path):
        values = np.arange(12, dtype=np.uint16).reshape(3, 4) * 300
        path = tmp_path / "r.pgm"
        dataio.write_pgm(path, values, maxval=65535)
        assert np.array_equal(dataio.read_pgm(path), values)

    def test_header_comments_tolerated(self, tmp_path):
        path = tmp_path / "c.pgm"
        payload = bytes([1, 2, 3, 4, 5, 6])
        path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + payload)
        assert dataio.read_pgm(path).tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n4 4\n255\n\x00\x01")
        with pytest.raises(dataio.DataError):
            dataio.read_ppm(path)


class TestLoadDataset:
    def _write_pair(self, root, stem, img, mask, classes=6):
        (root / "images").mkdir(exist_ok=True)
        (root / "masks").mkdir(exist_ok=True)
        dataio.write_ppm(root / "images" / f"{stem}.ppm", img)
        dataio.write_pgm(root / "masks" / f"{stem}.pgm", mask)
        dataio.write_manifest(root / "masks", classes)

    def test_empty_directories(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        assert dataio.load_dataset(tmp_path / "images", tmp_path / "masks") == []

    def test_minimal_pair(self, tmp_path):
        img = np.zeros((4, 4, 3))
        mask = np.array([[0, 1]] * 2 + [[1, 0]] * 2, dtype=np.uint8).reshape(4, 2)
        mask = np.hstack([mask, mask])
        self._write_pair(tmp_path, "a", img, mask, classes=2)
        pairs = dataio.load_dataset(tmp_path / "images", tmp_path / "masks")
        assert len(pairs) == 1
        assert np.array_equal(pairs[0][1], mask)

    def test_undef_sentinel_loads(self, tmp_path):
        img = np.zeros((4, 4, 3))
        mask = np.full((4, 4), 255, dtype=np.uint8)
        mask[0, 0] = 3
        self._write_pair(tmp_path, "a", img, mask, classes=6)
        pairs = dataio.load_dataset(tmp_path / "images", tmp_path / "masks")
        assert (pairs[0][1] == dataio.UNDEF).sum() == 15

    def test_unpaired_file(self, tmp_path):
        img = np.zeros((4, 4, 3))
        mask = np.zeros((4, 4), dtype=np.uint8)
        self._write_pair(tmp_path, "a", img, mask)
        dataio.write_ppm(tmp_path / "images" / "b.ppm", img)
        with pytest.raises(dataio.DataError, match="unpaired file"):
            dataio.load_dataset(tmp_path / "images", tmp_path / "masks")

    def test_shape_mismatch(self, tmp_path):
        self._write_pair(tmp_path, "a", np.zeros((4, 4, 3)), np.zeros((4, 5), dtype=np.uint8))
        with pytest.raises(dataio.DataError, match="shape mismatch"):
            dataio.load_dataset(tmp_path / "images", tmp_path / "masks")

    def test_invalid_mask_id(self, tmp_path):
        mask = np.zeros((4, 4), dtype=np.uint8)
        mask[0, 0] = 200
        self._write_pair(tmp_path, "a", np.zeros((4, 4, 3)), mask, classes=6)
        with pytest.raises(dataio.DataError, match="invalid mask"):
            dataio.load_dataset(tmp_path / "images", tmp_path / "masks")

    def test_manifest_in_parent(self, tmp_path):
        img = np.zeros((4, 4, 3))
        mask = np.zeros((4, 4), dtype=np.uint8)
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        dataio.write_ppm(tmp_path / "images" / "a.ppm", img)
        dataio.write_pgm(tmp_path / "masks" / "a.pgm", mask)
        dataio.write_manifest(tmp_path, 4)
        assert len(dataio.load_dataset(tmp_path / "images", tmp_path / "masks")) == 1


class TestSynthetic:
    SPEC = dataio.SyntheticSpec(width=32, height=24, class_count=3, site_count=7, noise_std=0.05)

    def test_deterministic(self):
        a_img, a_mask = dataio.generate_synthetic(self.SPEC, 5)
        b_img, b_mask = dataio.generate_synthetic(self.SPEC, 5)
        assert a_img.tobytes() == b_img.tobytes()
        assert a_mask.tobytes() == b_mask.tobytes()

    def test_class_range(self):
        _, mask = dataio.generate_synthetic(self.SPEC, 1)
        assert set(np.unique(mask)) <= {0, 1, 2}

    def test_zero_noise_constant_cells(self):
        spec = dataio.SyntheticSpec(32, 24, 3, 7, noise_std=0.0)
        img, mask = dataio.generate_synthetic(spec, 2)
        for c in np.unique(mask):
            cell = img[mask == c]
            assert np.all(cell == cell[0])

    def test_no_undef(self):
        _, mask = dataio.generate_synthetic(self.SPEC, 3)
        assert dataio.UNDEF not in mask

    @given(
        width=st.integers(4, 40),
        height=st.integers(4, 40),
        class_count=st.integers(2, 5),
        extra_sites=st.integers(0, 6),
        seed=st.integers(0, 100),
    )
    @settings(max_examples=25, deadline=None)
    def test_mask_covers_every_pixel(self, width, height, class_count, extra_sites, seed):
        spec = dataio.SyntheticSpec(width, height, class_count, class_count + extra_sites)
        img, mask = dataio.generate_synthetic(spec, seed)
        assert mask.shape == (height, width)
        assert img.shape == (height, width, 3)
        assert mask.min() >= 0 and mask.max() < class_count
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_invalid_spec(self):
        with pytest.raises(dataio.DataError):
            dataio.SyntheticSpec(8, 8, class_count=4, site_count=3)


class TestResults:
    def test_row_count(self, tmp_path):
        reports = [make_report(i + 1, 10 * (i + 1), 0.5, [0.5, 0.5]) for i in range(5)]
        path = tmp_path / "r.csv"
        dataio.write_results(reports, path, class_count=2)
        assert len(path.read_text().splitlines()) == 6

    def test_fixed_decimals(self, tmp_path):
        path = tmp_path / "r.csv"
        dataio.write_results([make_report(1, 3, 0.7321, [0.7321])], path, class_count=1)
        row = path.read_text().splitlines()[1]
        assert row == "1,3,0.732100,0.732100"

    def test_byte_deterministic(self, tmp_path):
        reports = [make_report(1, 3, 1 / 3, [0.1, np.nan])]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        dataio.write_results(reports, a, 2)
        dataio.write_results(reports, b, 2)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(dataio.DataError):
            dataio.write_results([], tmp_path / "r.csv", 2)


def test_jsonl_logger(tmp_path):
    path = tmp_path / "log.jsonl"
    with dataio.JsonlLogger(path) as log:
        log.event("round_start", round=1, zeta=np.float64(0.25))
    record = json.loads(path.read_text().splitlines()[0])
    assert record == {"event": "round_start", "round": 1, "zeta": 0.25}


def test_jsonl_logger_null_path_is_noop():
    log = dataio.JsonlLogger(None)
    log.event("anything", value=1)
    log.close()
