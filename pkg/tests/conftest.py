"""Shared fixtures: toy datasets, tiny trained victims, and data-file writers."""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np
import pytest
from sklearn.datasets import load_digits

from sib import AnnClassifier, SnnClassifier


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def make_blobs_unit(n_per_class: int = 60, d: int = 8, n_classes: int = 2,
                    seed: int = 0, spread: float = 0.06):
    """Linearly separable blobs squeezed into [0, 1]^d."""
    rs = np.random.RandomState(seed)
    centers = rs.uniform(0.2, 0.8, size=(n_classes, d))
    xs, ys = [], []
    for c in range(n_classes):
        pts = centers[c] + rs.normal(0.0, spread, size=(n_per_class, d))
        xs.append(np.clip(pts, 0.0, 1.0))
        ys.append(np.full(n_per_class, c))
    x = np.concatenate(xs).astype(np.float32)
    y = np.concatenate(ys).astype(np.int64)
    order = rs.permutation(len(y))
    return x[order], y[order]


@pytest.fixture(scope="session")
def digits_data():
    digits = load_digits()
    x = (digits.data / 16.0).astype(np.float32)
    y = digits.target.astype(np.int64)
    rs = np.random.RandomState(0)
    idx = rs.permutation(len(y))
    return x[idx[:1200]], y[idx[:1200]], x[idx[1200:]], y[idx[1200:]]


@pytest.fixture(scope="session")
def tiny_ann(digits_data):
    xtr, ytr, _, _ = digits_data
    return AnnClassifier(hidden_dim=64, epochs=8, batch_size=64, seed=1).fit(xtr, ytr)


@pytest.fixture(scope="session")
def tiny_snn(digits_data):
    xtr, ytr, _, _ = digits_data
    return SnnClassifier(hidden_dim=64, epochs=6, batch_size=64, steps=8,
                         seed=1).fit(xtr[:600], ytr[:600])


# ---------------------------------------------------------------------------
# on-disk dataset builders
# ---------------------------------------------------------------------------

def write_idx_pair(dirpath, images_u8: np.ndarray, labels_u8: np.ndarray,
                   rows: int, cols: int, gzipped: bool = False,
                   prefix: str = "train"):
    """Write a big-endian IDX image/label file pair; returns the two paths."""
    n = images_u8.shape[0]
    img_path = os.path.join(dirpath, f"{prefix}-images-idx3-ubyte")
    lbl_path = os.path.join(dirpath, f"{prefix}-labels-idx1-ubyte")
    img_blob = struct.pack(">IIII", 0x803, n, rows, cols) + images_u8.tobytes()
    lbl_blob = struct.pack(">II", 0x801, n) + labels_u8.tobytes()
    if gzipped:
        img_path += ".gz"
        lbl_path += ".gz"
        img_blob = gzip.compress(img_blob)
        lbl_blob = gzip.compress(lbl_blob)
    with open(img_path, "wb") as fh:
        fh.write(img_blob)
    with open(lbl_path, "wb") as fh:
        fh.write(lbl_blob)
    return img_path, lbl_path


def write_digits_idx(dirpath, x: np.ndarray, y: np.ndarray, prefix: str = "train"):
    """Serialize [0,1] digit rows as 8x8 IDX byte images."""
    imgs = np.rint(x * 255.0).astype(np.uint8)
    return write_idx_pair(dirpath, imgs, y.astype(np.uint8), 8, 8, prefix=prefix)


def write_orl_tree(root, rng_seed: int = 0, width: int = 92, height: int = 112):
    """Fabricate a well-formed 40-subject PGM face tree (noise images)."""
    rs = np.random.RandomState(rng_seed)
    os.makedirs(root, exist_ok=True)
    for sid in range(1, 41):
        subject = os.path.join(root, f"s{sid}")
        os.makedirs(subject, exist_ok=True)
        base = rs.randint(40, 200, size=(height, width)).astype(np.uint8)
        for i in range(1, 11):
            noisy = np.clip(
                base.astype(np.int32) + rs.randint(-20, 20, size=base.shape),
                0, 255,
            ).astype(np.uint8)
            path = os.path.join(subject, f"{i}.pgm")
            with open(path, "wb") as fh:
                fh.write(f"P5\n{width} {height}\n255\n".encode())
                fh.write(noisy.tobytes())
    return root


# ---------------------------------------------------------------------------
# oracle stubs
# ---------------------------------------------------------------------------

class CountingStubVictim:
    """Cheap probability source that counts every forward row it serves."""

    def __init__(self, input_dim: int = 6, num_classes: int = 4, seed: int = 0):
        self.n_features_in_ = input_dim
        self.classes_ = np.arange(num_classes)
        rs = np.random.RandomState(seed)
        self._w = rs.normal(size=(input_dim, num_classes))
        self.rows_served = 0
        self.calls = 0

    def oracle_probabilities(self, x, start_index: int = 0):
        self.rows_served += x.shape[0]
        self.calls += 1
        logits = x @ self._w
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
