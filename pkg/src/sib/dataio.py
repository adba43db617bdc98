"""Dataset ingestion (IDX digits, PGM face folders) and image export.

Loaders reject out-of-spec files instead of clamping; every loaded pixel
lands in [0, 1]. Directory traversal is explicitly sorted so output never
depends on filesystem iteration order.
"""

from __future__ import annotations

import gzip
import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, ValidationError
from .numcore import Rng
from .validation import check_matrix

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
ORL_WIDTH = 92
ORL_HEIGHT = 112
ORL_SUBJECTS = 40


@dataclass
class Dataset:
    images: np.ndarray                  # (n, d) float32 in [0, 1]
    labels: np.ndarray                  # (n,) int64
    class_count: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = check_matrix(self.images, "images", dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise DimensionError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.images.shape[0]} images"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise ValidationError(
                f"labels must lie in [0, {self.class_count}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _read_maybe_gzip(path: str) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def load_mnist(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair (plain or gzipped).

    Big-endian headers; pixels come out as float32 / 255.
    """
    img_raw = _read_maybe_gzip(images_path)
    if len(img_raw) < 16:
        raise DataError(f"{images_path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", img_raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataError(
            f"{images_path}: bad IDX image magic 0x{magic:08x}, "
            f"expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    expected = count * rows * cols
    body = img_raw[16:]
    if len(body) != expected:
        raise DataError(
            f"{images_path}: expected {expected} pixel bytes, got {len(body)}"
        )

    lbl_raw = _read_maybe_gzip(labels_path)
    if len(lbl_raw) < 8:
        raise DataError(f"{labels_path}: truncated IDX label header")
    lmagic, lcount = struct.unpack(">II", lbl_raw[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise DataError(
            f"{labels_path}: bad IDX label magic 0x{lmagic:08x}, "
            f"expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    if lcount != count:
        raise DataError(
            f"image/label counts differ: {count} images vs {lcount} labels"
        )
    lbody = lbl_raw[8:]
    if len(lbody) != lcount:
        raise DataError(
            f"{labels_path}: expected {lcount} label bytes, got {len(lbody)}"
        )

    images = np.frombuffer(body, dtype=np.uint8).reshape(count, rows * cols)
    labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    return Dataset(
        images=images.astype(np.float32) / 255.0,
        labels=labels,
        class_count=int(labels.max()) + 1 if labels.size else 0,
        provenance={"images": images_path, "labels": labels_path,
                    "format": "idx", "rows": rows, "cols": cols},
    )


# ---------------------------------------------------------------------------
# PGM / ORL faces
# ---------------------------------------------------------------------------

def read_pgm(path: str) -> tuple[int, int, int, np.ndarray]:
    """Read a binary (P5) PGM with maxval <= 255; returns (w, h, maxval, pixels)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P2":
        raise DataError(f"{path}: ASCII (P2) PGM is not supported, need binary P5")
    if data[:2] != b"P5":
        raise DataError(f"{path}: not a PGM file (magic {data[:2]!r})")

    # header tokens with '#' comments, then a single whitespace before raster
    pos = 2
    tokens: list[int] = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError as exc:
            raise DataError(f"{path}: bad PGM header token") from exc
    pos += 1  # the single whitespace byte after maxval
    width, height, maxval = tokens
    if not (0 < maxval <= 255):
        raise DataError(f"{path}: PGM maxval {maxval} out of supported range")
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise DataError(
            f"{path}: expected {width * height} raster bytes, got {len(raster)}"
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return width, height, maxval, pixels


def write_pgm(path: str, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise DimensionError(f"PGM pixels must be 2-D, got {pixels.shape}")
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


_SUBJECT_RE = re.compile(r"^s(\d+)$")


def load_orl(root_dir: str) -> Dataset:
    """Load the 40-subject face folder tree (s1..s40, ten 92x112 P5 files each)."""
    if not os.path.isdir(root_dir):
        raise DataError(f"{root_dir}: not a directory")
    subjects = {}
    for entry in os.listdir(root_dir):
        m = _SUBJECT_RE.match(entry)
        if m and os.path.isdir(os.path.join(root_dir, entry)):
            subjects[int(m.group(1))] = entry
    for sid in range(1, ORL_SUBJECTS + 1):
        if sid not in subjects:
            raise DataError(f"{root_dir}: missing subject directory s{sid}")

    images = []
    labels = []
    for sid in range(1, ORL_SUBJECTS + 1):
        subject_dir = os.path.join(root_dir, subjects[sid])
        files = sorted(
            (f for f in os.listdir(subject_dir) if f.lower().endswith(".pgm")),
            key=lambda f: (len(f), f),
        )
        if len(files) != 10:
            raise DataError(
                f"{subject_dir}: expected 10 PGM files, found {len(files)}"
            )
        for fname in files:
            path = os.path.join(subject_dir, fname)
            width, height, maxval, pixels = read_pgm(path)
            if (width, height) != (ORL_WIDTH, ORL_HEIGHT):
                raise DataError(
                    f"{path}: expected {ORL_WIDTH}x{ORL_HEIGHT}, "
                    f"got {width}x{height}"
                )
            images.append(pixels.reshape(-1).astype(np.float32) / maxval)
            labels.append(sid - 1)
    return Dataset(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        class_count=ORL_SUBJECTS,
        provenance={"root": root_dir, "format": "orl-pgm"},
    )


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def stratified_split(dataset: Dataset, test_per_class: int,
                     seed: int) -> tuple[Dataset, Dataset]:
    """Exactly test_per_class test rows per class; disjoint and exhaustive."""
    rng = Rng(seed)
    test_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for c in range(dataset.class_count):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) <= test_per_class:
            raise ValidationError(
                f"class {c} has {len(members)} samples, need more than "
                f"{test_per_class} to split"
            )
        perm = rng.stream("split", c).permutation(len(members))
        test_idx.append(members[perm[:test_per_class]])
        train_idx.append(members[perm[test_per_class:]])
    test_sel = np.sort(np.concatenate(test_idx))
    train_sel = np.sort(np.concatenate(train_idx))

    def subset(sel: np.ndarray) -> Dataset:
        prov = dict(dataset.provenance)
        prov.update({"split_seed": seed, "test_per_class": test_per_class})
        return Dataset(images=dataset.images[sel], labels=dataset.labels[sel],
                       class_count=dataset.class_count, provenance=prov)

    return subset(train_sel), subset(test_sel)


# ---------------------------------------------------------------------------
# reconstruction export
# ---------------------------------------------------------------------------

def write_image_grid(images: np.ndarray, width: int, height: int,
                     grid_cols: int, path: str) -> None:
    """Tile images into one PGM with 1-pixel white separators."""
    images = check_matrix(images, "images")
    n, d = images.shape
    if d != width * height:
        raise ValidationError(
            f"image dim {d} does not match {width}x{height}"
        )
    if images.min() < 0.0 or images.max() > 1.0:
        raise ValidationError("grid images must lie in [0, 1]")
    grid_cols = min(grid_cols, n)
    grid_rows = (n + grid_cols - 1) // grid_cols
    canvas = np.full(
        (grid_rows * height + grid_rows - 1, grid_cols * width + grid_cols - 1),
        255, dtype=np.uint8,
    )
    for i in range(n):
        r, c = divmod(i, grid_cols)
        tile = np.rint(images[i].reshape(height, width) * 255.0).astype(np.uint8)
        top = r * (height + 1)
        left = c * (width + 1)
        canvas[top:top + height, left:left + width] = tile
    # blank out unused trailing cells
    for i in range(n, grid_rows * grid_cols):
        r, c = divmod(i, grid_cols)
        top = r * (height + 1)
        left = c * (width + 1)
        canvas[top:top + height, left:left + width] = 0
    write_pgm(path, canvas)
