"""Synthetic scene generation and portable file IO (PPM/PGM, CSV, JSON lines)."""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNDEF = 255  # mask sentinel: pixel outside the semantic classes
MAX_CLASSES = 254  # class ids must stay strictly below the UNDEF sentinel

MANIFEST_NAME = "manifest.txt"


class DataError(ValueError):
    """Malformed dataset, file, or generator specification."""


# ---------------------------------------------------------------------------
# netpbm (binary PPM/PGM)

def _read_tokens(data: bytes, count: int, offset: int) -> tuple[list[int], int]:
    # whitespace-separated integers, '#' starts a comment running to end of line
    tokens: list[int] = []
    i = offset
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i] in b" \t\r\n":
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        start = i
        while i < n and data[i] not in b" \t\r\n":
            i += 1
        if start == i:
            raise DataError("truncated netpbm header")
        try:
            tokens.append(int(data[start:i]))
        except ValueError as exc:
            raise DataError(f"bad netpbm header token {data[start:i]!r}") from exc
    return tokens, i + 1  # single whitespace byte terminates the header


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write an RGB image with channels in [0, 1] as binary 8-bit PPM (P6)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) image, got shape {img.shape}")
    h, w = img.shape[:2]
    quant = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(quant.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 image into a float (H, W, 3) array in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise DataError(f"not a binary PPM (P6) file: {path}")
    (w, h, maxval), offset = _read_tokens(data, 3, 2)
    if maxval != 255:
        raise DataError(f"unsupported PPM maxval {maxval}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=offset)
    if raw.size < w * h * 3:
        raise DataError(f"truncated PPM payload in {path}")
    return raw[: w * h * 3].reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path: str | Path, values: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-d integer array as binary PGM (P5); 16-bit when maxval > 255."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-d array, got shape {arr.shape}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise DataError("values out of range for requested maxval")
    h, w = arr.shape
    payload = arr.astype(">u2" if maxval > 255 else np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(payload.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary P5 file; returns uint8, or uint16 for 16-bit payloads."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise DataError(f"not a binary PGM (P5) file: {path}")
    (w, h, maxval), offset = _read_tokens(data, 3, 2)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    raw = np.frombuffer(data, dtype=dtype, offset=offset)
    if raw.size < w * h:
        raise DataError(f"truncated PGM payload in {path}")
    out = raw[: w * h].reshape(h, w)
    return out.astype(np.uint16) if maxval > 255 else out.copy()


# ---------------------------------------------------------------------------
# dataset directories

def validate_mask(mask: np.ndarray, class_count: int) -> None:
    values = np.unique(mask)
    bad = values[(values >= class_count) & (values != UNDEF)]
    if bad.size:
        raise DataError(f"invalid mask: ids {bad.tolist()} outside 0..{class_count - 1} + UNDEF")


def write_manifest(directory: str | Path, class_count: int) -> None:
    Path(directory, MANIFEST_NAME).write_text(f"classes={class_count}\n")


def read_manifest(directory: str | Path) -> int:
    """Class count from manifest.txt in `directory` or its parent."""
    directory = Path(directory)
    for candidate in (directory / MANIFEST_NAME, directory.parent / MANIFEST_NAME):
        if candidate.is_file():
            for line in candidate.read_text().splitlines():
                key, _, value = line.partition("=")
                if key.strip() == "classes":
                    try:
                        return int(value.strip())
                    except ValueError as exc:
                        raise DataError(f"bad manifest line {line!r}") from exc
            raise DataError(f"manifest without a classes= line: {candidate}")
    raise DataError(f"no {MANIFEST_NAME} found for {directory}")


def load_dataset(image_dir: str | Path, mask_dir: str | Path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Load (image, mask) pairs matched by filename stem, in lexicographic order.

    Masks are validated against the class count declared in the dataset manifest.
    """
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    for d in (image_dir, mask_dir):
        if not d.is_dir():
            raise DataError(f"missing directory: {d}")
    images = {p.stem: p for p in image_dir.iterdir() if p.suffix == ".ppm"}
    masks = {p.stem: p for p in mask_dir.iterdir() if p.suffix == ".pgm"}
    if not images and not masks:
        return []
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        raise DataError(f"unpaired file(s): {', '.join(unpaired)}")
    class_count = read_manifest(mask_dir)
    pairs = []
    for stem in sorted(images):
        img = read_ppm(images[stem])
        mask = read_pgm(masks[stem])
        if mask.shape != img.shape[:2]:
            raise DataError(
                f"shape mismatch for {stem}: image {img.shape[:2]} vs mask {mask.shape}"
            )
        validate_mask(mask, class_count)
        pairs.append((img, mask))
    return pairs


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass(frozen=True)
class SyntheticSpec:
    """Voronoi-mosaic scene: irregular cells, skewed class frequencies."""

    width: int
    height: int
    class_count: int
    site_count: int
    noise_std: float = 0.05
    class_frequency_skew: float = 0.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise DataError("width and height must be >= 1")
        if not 2 <= self.class_count <= MAX_CLASSES:
            raise DataError(f"class_count must be in 2..{MAX_CLASSES}")
        if self.site_count < self.class_count:
            raise DataError("site_count must be >= class_count")
        if self.noise_std < 0 or self.class_frequency_skew < 0:
            raise DataError("noise_std and class_frequency_skew must be >= 0")


def class_palette(class_count: int) -> np.ndarray:
    """Fixed, well-separated RGB color per class (hue-spaced, alternating value)."""
    colors = [
        colorsys.hsv_to_rgb(k / class_count, 0.8, 0.85 if k % 2 == 0 else 0.5)
        for k in range(class_count)
    ]
    return np.asarray(colors, dtype=np.float64)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (image, mask) pair for the given spec and seed.

    Sites are placed uniformly at random; each owns the pixels nearest to it
    (ties to the lowest site index). The first `class_count` sites take one
    class each so no class is structurally absent; the rest draw classes with
    probability proportional to (k+1)^-skew.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, int(seed)]))
    w, h, c = spec.width, spec.height, spec.class_count
    sites = rng.uniform(0.0, 1.0, (spec.site_count, 2)) * [w, h]
    weights = (np.arange(c, dtype=np.float64) + 1.0) ** -spec.class_frequency_skew
    weights /= weights.sum()
    site_class = np.concatenate(
        [np.arange(c), rng.choice(c, size=spec.site_count - c, p=weights)]
    ).astype(np.uint8)

    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    d2 = (xs.ravel()[:, None] - sites[:, 0]) ** 2 + (ys.ravel()[:, None] - sites[:, 1]) ** 2
    mask = site_class[np.argmin(d2, axis=1)].reshape(h, w)

    image = class_palette(c)[mask] + rng.normal(size=(h, w, 3)) * spec.noise_std
    return np.clip(image, 0.0, 1.0), mask


# ---------------------------------------------------------------------------
# run outputs

def write_results(reports, path: str | Path, class_count: int) -> None:
    """Round reports as CSV: round, cum_clicks, miou, then one IoU column per class."""
    reports = list(reports)
    if not reports:
        raise DataError("empty report sequence")
    header = "round,cum_clicks,miou," + ",".join(f"iou_{k}" for k in range(class_count))
    lines = [header]
    for r in reports:
        cells = [str(r.round_index), str(r.cum_clicks), f"{r.miou:.6f}"]
        cells += [f"{v:.6f}" for v in r.per_class_iou]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    raise TypeError(f"not JSON serializable: {type(value)}")


class JsonlLogger:
    """One JSON object per line; key order fixed for byte determinism."""

    def __init__(self, path: str | Path | None):
        self._f = open(path, "w") if path is not None else None

    def event(self, kind: str, **fields) -> None:
        if self._f is None:
            return
        record = {"event": kind, **fields}
        self._f.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")

    def close(self) -> None:
        if self._f is not None:
            self._f.close()
            self._f = None

    def __enter__(self) -> "JsonlLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
