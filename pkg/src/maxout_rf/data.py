"""Dataset loading, synthetic generators, and the internal dataset container."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError

NORMALIZATIONS = ("none", "unit_sphere", "scale_255")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DATASET_MAGIC = b"MAXOUTDS"
DATASET_VERSION = 1

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    """A dense ``N x d`` design matrix with optional integer labels."""

    X: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""
    normalization: str = "none"

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise InvalidArgumentError(f"X must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidArgumentError("X contains non-finite values")
        if self.normalization not in NORMALIZATIONS:
            raise InvalidArgumentError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "unit_sphere" and X.shape[0]:
            norms = np.linalg.norm(X, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-6:
                raise InvalidArgumentError("unit_sphere dataset has rows off the sphere")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        if self.labels is not None:
            y = np.array(self.labels, dtype=np.int64, copy=True)
            if y.shape != (X.shape[0],):
                raise InvalidArgumentError(
                    f"labels must have length {X.shape[0]}, got shape {y.shape}")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, index) -> "Dataset":
        y = None if self.labels is None else self.labels[index]
        return Dataset(self.X[index], y, self.name, self.normalization)


def normalize_rows(ds: Dataset) -> Dataset:
    """Project every row onto the unit sphere (zero rows are rejected)."""
    norms = np.linalg.norm(ds.X, axis=1)
    if np.any(norms == 0):
        raise InvalidArgumentError("cannot normalize a zero row")
    return Dataset(ds.X / norms[:, None], ds.labels, ds.name, "unit_sphere")


def holdout_indices(n: int, n_holdout: int, seed: int = 0):
    """Sorted ``(train_rows, holdout_rows)`` index arrays for a random split of ``n`` rows."""
    if not 0 < n_holdout < n:
        raise InvalidArgumentError(f"holdout size {n_holdout} must lie in (0, {n})")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_holdout:]), np.sort(perm[:n_holdout])


def holdout_split(ds: Dataset, n_holdout: int, seed: int = 0):
    """Random ``(train, holdout)`` split with ``n_holdout`` rows held out."""
    train, hold = holdout_indices(ds.n, n_holdout, seed)
    return ds.subset(train), ds.subset(hold)


# -- IDX -------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        gz = path.with_name(path.name + ".gz")
        if gz.exists():
            path = gz
        else:
            raise FileNotFoundError(path)
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def _parse_idx(data, magic, ndim, what):
    if len(data) < 4:
        raise FormatError(f"{what} file truncated in header", offset=len(data))
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise FormatError(f"bad {what} magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    if len(data) < 4 + 4 * ndim:
        raise FormatError(f"{what} file truncated in header", offset=len(data))
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    start = 4 + 4 * ndim
    expected = int(np.prod(dims, dtype=np.int64))
    if len(data) - start != expected:
        raise FormatError(
            f"{what} payload has {len(data) - start} bytes, header promises {expected}",
            offset=start + min(len(data) - start, expected))
    return np.frombuffer(data, dtype=np.uint8, offset=start).reshape(dims)


def load_idx(images_path, labels_path=None, name: str = "idx") -> Dataset:
    """Read an IDX image file (and optional label file), scaling pixels to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, "images")
    labels = None
    if labels_path is not None:
        labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, "labels")
        if labels.shape[0] != images.shape[0]:
            # Offset 4 is the item count field of the label file.
            raise FormatError(
                f"label count {labels.shape[0]} does not match image count {images.shape[0]}",
                offset=4)
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels, name, "scale_255")


def write_idx(images, labels, images_path, labels_path=None) -> None:
    """Write ``uint8`` images (N x rows x cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    if labels_path is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_mnist(data_dir, split: str = "train") -> Dataset:
    images, labels = MNIST_FILES[split]
    root = Path(data_dir)
    return load_idx(root / images, root / labels, name=f"mnist-{split}")


# -- delimited text ----------------------------------------------------------

def load_delimited(path, has_labels: bool = False, header: bool = False,
                   delimiter: str = ",", name: str | None = None) -> Dataset:
    """Comma-separated numeric rows; the first column is the label if ``has_labels``."""
    try:
        M = np.loadtxt(path, delimiter=delimiter, skiprows=1 if header else 0, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    name = name or Path(path).stem
    if has_labels:
        y = M[:, 0]
        if np.any(y != np.round(y)):
            raise FormatError(f"{path}: label column holds non-integers")
        return Dataset(M[:, 1:], y.astype(np.int64), name)
    return Dataset(M, None, name)


def save_delimited(ds: Dataset, path, header: bool = True) -> None:
    cols = [f"x{i + 1}" for i in range(ds.d)]
    M = ds.X
    if ds.labels is not None:
        cols = ["label"] + cols
        M = np.column_stack([ds.labels, ds.X])
    np.savetxt(path, M, delimiter=",", header=",".join(cols) if header else "",
               comments="", fmt="%.17g")


# -- internal container ---------------------------------------------------------

_DS_HEADER = struct.Struct("<8sHQQBB")


def save_dataset(ds: Dataset, path) -> None:
    """Binary container: magic, version, N, d, label flag, normalization, name, data."""
    name = ds.name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.n, ds.d,
                                ds.labels is not None, NORMALIZATIONS.index(ds.normalization)))
        f.write(struct.pack("<I", len(name)))
        f.write(name)
        f.write(ds.X.astype("<f8").tobytes())
        if ds.labels is not None:
            f.write(ds.labels.astype("<i8").tobytes())


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < _DS_HEADER.size + 4:
        raise FormatError("dataset container truncated in header", offset=len(data))
    magic, version, n, d, has_labels, norm = _DS_HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}", offset=0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", offset=8)
    if norm >= len(NORMALIZATIONS):
        raise FormatError(f"unknown normalization code {norm}", offset=_DS_HEADER.size - 1)
    pos = _DS_HEADER.size
    (nlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    name = data[pos:pos + nlen].decode("utf-8")
    pos += nlen
    need = 8 * n * d + (8 * n if has_labels else 0)
    if len(data) - pos != need:
        raise FormatError(f"expected {need} payload bytes, found {len(data) - pos}", offset=pos)
    X = np.frombuffer(data, dtype="<f8", count=n * d, offset=pos).reshape(n, d)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="<i8", count=n, offset=pos + 8 * n * d)
    return Dataset(X, labels, name, NORMALIZATIONS[norm])


# -- synthetic generators ---------------------------------------------------------

def gen_circle(n: int, seed: int = 0) -> Dataset:
    """``n`` points drawn uniformly on the unit circle."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    theta = np.random.default_rng(seed).uniform(0.0, 2 * np.pi, size=n)
    X = np.column_stack([np.cos(theta), np.sin(theta)])
    return Dataset(X, None, f"circle-{n}", "unit_sphere")


def gen_blobs(n_per_class: int, T: int, d: int, separation: float, seed: int = 0,
              noise: float = 1.0) -> Dataset:
    """Isotropic Gaussian classes whose centers are pairwise ``separation`` apart.

    Center ``k`` is ``separation / sqrt(2) * e_k``, so ``d >= T`` is required.
    Rows are shuffled; labels are ``0..T-1``.
    """
    if n_per_class < 1 or T < 2 or d < T:
        raise InvalidArgumentError(
            f"need n_per_class >= 1, T >= 2 and d >= T; got {n_per_class}, {T}, {d}")
    if separation < 0 or noise <= 0:
        raise InvalidArgumentError("separation must be >= 0 and noise > 0")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(T), n_per_class)
    centers = np.zeros((T, d))
    centers[np.arange(T), np.arange(T)] = separation / np.sqrt(2.0)
    X = centers[labels] + noise * rng.standard_normal((labels.size, d))
    perm = rng.permutation(labels.size)
    return Dataset(X[perm], labels[perm], f"blobs-{T}x{n_per_class}", "none")


def rotation_angles(n_angles: int) -> np.ndarray:
    """Angles (radians) used by :func:`gen_rotation_manifold`, in label order."""
    return np.linspace(-np.pi / 3, np.pi / 3, n_angles)


def gen_rotation_manifold(n_angles: int = 33, side: int = 24, seed: int = 0,
                          noise: float = 0.01) -> Dataset:
    """Images of an elongated Gaussian blob swung about the image center.

    Row ``i`` shows the blob at ``rotation_angles(n_angles)[i]``; rows are
    unit-normalized and labelled by angle index.  ``noise`` adds i.i.d.
    pixel noise relative to the blob's peak.
    """
    if n_angles < 2 or side < 4:
        raise InvalidArgumentError(f"need n_angles >= 2 and side >= 4, got {n_angles}, {side}")
    rng = np.random.default_rng(seed)
    coords = np.linspace(-1.0, 1.0, side)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    rows = []
    for theta in rotation_angles(n_angles):
        c, s = np.cos(theta), np.sin(theta)
        cx, cy = 0.45 * s, 0.45 * c
        # Coordinates along and across the radial direction.
        u = (xx - cx) * s + (yy - cy) * c
        v = -(xx - cx) * c + (yy - cy) * s
        img = np.exp(-0.5 * ((u / 0.35) ** 2 + (v / 0.12) ** 2))
        img = img + noise * rng.standard_normal(img.shape)
        rows.append(img.ravel())
    X = np.asarray(rows)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return Dataset(X, np.arange(n_angles), f"rotation-{n_angles}", "unit_sphere")
