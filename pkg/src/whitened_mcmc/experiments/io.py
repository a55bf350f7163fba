"""Data ingestion: IDX image/label files, PCA projection, synthetic clusters."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DomainError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_idx(path, magic, ndim):
    data = Path(path).read_bytes()
    head = 4 + 4 * ndim
    if len(data) < head:
        raise FormatError(f"{path}: truncated IDX header")
    got = struct.unpack(">I", data[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic number 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:head])
    expected = int(np.prod(dims))
    body = data[head:]
    if len(body) != expected:
        raise FormatError(f"{path}: header promises {expected} bytes of data, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def read_idx_images(path):
    """Raw uint8 array of shape (count, rows, cols)."""
    return _read_idx(path, IMAGE_MAGIC, 3)


def read_idx_labels(path):
    return _read_idx(path, LABEL_MAGIC, 1)


def write_idx_images(path, images):
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise DomainError("images must be a uint8 array of shape (count, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGE_MAGIC, *images.shape))
        fh.write(np.ascontiguousarray(images).tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.dtype != np.uint8:
        raise DomainError("labels must be a 1-D uint8 array")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def ingest_mnist_idx(images_path, labels_path):
    """Features in [0, 1]^(rows*cols) (intensity / 255) and integer labels."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise FormatError("digit labels must lie in 0..9")
    feats = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return feats, labels.astype(int)


def pca_project(features, d):
    """Scores on the top-d principal components of the centred data.

    Components come from the eigendecomposition of the sample covariance,
    ordered by decreasing eigenvalue; each is signed so that its
    largest-magnitude loading is positive.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise DomainError("features must be a 2-D array")
    n, p = X.shape
    if not (isinstance(d, (int, np.integer)) and 1 <= d <= min(n, p)):
        raise DomainError(f"d must be an integer in 1..{min(n, p)}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:d]
    comps = vecs[:, order]
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(d)])
    comps = comps * np.where(signs == 0, 1.0, signs)
    return Xc @ comps


def load_features(path):
    """Feature matrix from .npy or comma-separated text."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file {path} not found")
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def make_clusters(n, k, dim, separation, rng):
    """Gaussian blobs with unit spread and centres ``separation`` apart on a simplex.

    Class sizes differ by at most one; rows are shuffled.
    """
    if k < 2 or dim < k - 1:
        raise DomainError("need k >= 2 classes and dim >= k - 1")
    # regular simplex: standard basis vectors, plus one equidistant vertex if dim = k - 1
    if dim >= k:
        centres = np.eye(k, dim)
    else:
        extra = np.full((1, dim), (1.0 - np.sqrt(dim + 1.0)) / dim)
        centres = np.vstack([np.eye(dim), extra])
    centres = centres - centres.mean(axis=0)
    pair = np.linalg.norm(centres[0] - centres[1])
    centres *= separation / pair
    labels = np.arange(n) % k
    rng.shuffle(labels)
    X = centres[labels] + rng.standard_normal((n, dim))
    return X, labels
