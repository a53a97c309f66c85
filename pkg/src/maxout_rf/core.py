"""Random maxout feature maps and their q-ary hash codes.

A bank holds ``m`` maxout units, each made of ``q`` Gaussian projection
vectors in ``R^d``.  The feature map sends ``x`` to the vector of per-unit
maximum projections scaled by ``1/sqrt(m)``; the hash code keeps the index
of the maximizing projection instead of its value.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import FormatError, InvalidArgumentError

GENERATOR_ID = "philox4x64-ndtri-v1"
BANK_MAGIC = b"MAXOUTRF"
BANK_VERSION = 1

# Upper bound on m*q*d; anything above this cannot be held in memory anyway.
MAX_ENTRIES = 2**32
_U64_MAX = 2**64 - 1
_CHUNK_ROWS = 1024


def _check_dims(m, q, d):
    for name, value in (("m", m), ("q", q), ("d", d)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
        if value < 1:
            raise InvalidArgumentError(f"{name} must be >= 1, got {value}")
    if int(m) * int(q) * int(d) > MAX_ENTRIES:
        raise InvalidArgumentError(
            f"bank of size {m}x{q}x{d} exceeds {MAX_ENTRIES} entries")


def _check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InvalidArgumentError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) <= _U64_MAX:
        raise InvalidArgumentError(f"seed must fit in 64 unsigned bits, got {seed}")


def unit_weights(seed: int, unit: int, q: int, d: int) -> np.ndarray:
    """Regenerate the ``q x d`` projection block of a single maxout unit.

    The Philox key is ``(seed, unit)``; entry ``(j, k)`` is the inverse normal
    CDF of the 64-bit word at stream position ``j*d + k`` (counter block
    ``(j*d + k) // 4``).  Every entry therefore depends only on
    ``(seed, unit, j, k)``, never on generation order.
    """
    key = np.array([int(seed), int(unit)], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(q * d)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u).reshape(q, d)


@dataclass(frozen=True, eq=False)
class ProjectionBank:
    """Immutable ``m x q x d`` tensor of Gaussian projections.

    ``weights[l, j]`` is the j-th projection vector of unit ``l`` (unit-major
    layout, coordinates contiguous).
    """

    weights: np.ndarray
    seed: int = 0
    generator_id: str = GENERATOR_ID

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, order="C", copy=True)
        if w.ndim != 3:
            raise InvalidArgumentError(f"weights must be 3-D (m, q, d), got shape {w.shape}")
        _check_dims(*w.shape)
        if not np.all(np.isfinite(w)):
            raise InvalidArgumentError("weights contain non-finite entries")
        _check_seed(self.seed)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def q(self) -> int:
        return self.weights.shape[1]

    @property
    def d(self) -> int:
        return self.weights.shape[2]

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(f"{self.generator_id}|{self.seed}|{self.m}|{self.q}|{self.d}|".encode())
        h.update(self.weights.tobytes())
        return h.hexdigest()

    @cached_property
    def _flat(self) -> np.ndarray:
        return self.weights.reshape(self.m * self.q, self.d)


def sample_bank(m: int, q: int, d: int, seed: int) -> ProjectionBank:
    """Draw a bank of i.i.d. standard normal projections."""
    _check_dims(m, q, d)
    _check_seed(seed)
    weights = np.empty((m, q, d))
    for unit in range(m):
        weights[unit] = unit_weights(seed, unit, q, d)
    return ProjectionBank(weights, seed=int(seed), generator_id=GENERATOR_ID)


def _as_rows(bank, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.d:
        raise InvalidArgumentError(
            f"expected input with {bank.d} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("input contains non-finite values")
    return X


def _as_vector(bank, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != bank.d:
        raise InvalidArgumentError(f"expected a vector of length {bank.d}, got shape {x.shape}")
    return _as_rows(bank, x[None, :])


def projections(bank: ProjectionBank, X) -> np.ndarray:
    """Raw projections ``<w_j^l, x>`` for each row, shape ``(N, m, q)``."""
    X = _as_rows(bank, X)
    return _project(bank, X)


def _project(bank, X):
    n = X.shape[0]
    # A one-row product is dispatched to gemv, whose summation order differs
    # from gemm; padding keeps single-row and batched results bitwise equal.
    if n == 1:
        P = (np.vstack([X, X]) @ bank._flat.T)[:1]
    else:
        P = X @ bank._flat.T
    return P.reshape(n, bank.m, bank.q)


def featurize(bank: ProjectionBank, x) -> np.ndarray:
    """Maxout features of a single vector, scaled by ``1/sqrt(m)``."""
    X = _as_vector(bank, x)
    return _project(bank, X).max(axis=2)[0] / np.sqrt(bank.m)


def featurize_batch(bank: ProjectionBank, X, threads: int = 1,
                    chunk_rows: int = _CHUNK_ROWS) -> np.ndarray:
    """Row-wise :func:`featurize` for an ``N x d`` matrix.

    Rows are processed in chunks, optionally on a thread pool; the result is
    bitwise identical to a sequential loop over rows.
    """
    X = _as_rows(bank, X)
    n = X.shape[0]
    out = np.empty((n, bank.m))
    scale = np.sqrt(bank.m)
    chunk_rows = max(int(chunk_rows), 2)

    def work(start):
        stop = min(start + chunk_rows, n)
        out[start:stop] = _project(bank, X[start:stop]).max(axis=2) / scale

    starts = range(0, n, chunk_rows)
    if threads > 1 and n > chunk_rows:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return out


@dataclass(frozen=True, eq=False)
class HashCode:
    """Per-unit argmax indices, zero-based, for one input vector."""

    indices: np.ndarray
    bank_fingerprint: str = field(default="")

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, HashCode):
            return NotImplemented
        return (self.bank_fingerprint == other.bank_fingerprint
                and np.array_equal(self.indices, other.indices))


def hash_code(bank: ProjectionBank, x) -> HashCode:
    """Index of the maximizing projection in each unit (ties: smallest index)."""
    X = _as_vector(bank, x)
    idx = np.argmax(_project(bank, X), axis=2)[0]
    return HashCode(idx.astype(np.int64), bank.fingerprint)


def hash_codes_batch(bank: ProjectionBank, X) -> np.ndarray:
    """Hash codes of every row as an ``N x m`` integer matrix."""
    X = _as_rows(bank, X)
    out = np.empty((X.shape[0], bank.m), dtype=np.int64)
    for start in range(0, X.shape[0], _CHUNK_ROWS):
        stop = start + _CHUNK_ROWS
        out[start:stop] = np.argmax(_project(bank, X[start:stop]), axis=2)
    return out


def hamming_distance(a: HashCode, b: HashCode) -> float:
    """Fraction of units whose argmax indices differ."""
    if len(a) != len(b):
        raise InvalidArgumentError(f"hash codes differ in length: {len(a)} vs {len(b)}")
    if a.bank_fingerprint != b.bank_fingerprint:
        raise InvalidArgumentError("hash codes come from different banks")
    if len(a) == 0:
        raise InvalidArgumentError("empty hash codes")
    return float(np.count_nonzero(a.indices != b.indices)) / len(a)


_BANK_HEADER = struct.Struct("<8sHQQQQ")


def save_bank(bank: ProjectionBank, path) -> None:
    gid = bank.generator_id.encode("utf-8")
    with open(path, "wb") as f:
        f.write(_BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, bank.m, bank.q, bank.d, bank.seed))
        f.write(struct.pack("<I", len(gid)))
        f.write(gid)
        f.write(bank.weights.astype("<f8").tobytes())


def load_bank(path) -> ProjectionBank:
    data = Path(path).read_bytes()
    if len(data) < _BANK_HEADER.size + 4:
        raise FormatError("bank file truncated in header", offset=len(data))
    magic, version, m, q, d, seed = _BANK_HEADER.unpack_from(data, 0)
    if magic != BANK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {BANK_MAGIC!r}", offset=0)
    if version != BANK_VERSION:
        raise FormatError(f"unsupported bank format version {version}", offset=8)
    pos = _BANK_HEADER.size
    (glen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + glen > len(data):
        raise FormatError("generator id runs past end of file", offset=pos)
    generator_id = data[pos:pos + glen].decode("utf-8")
    pos += glen
    count = m * q * d
    if len(data) - pos != 8 * count:
        raise FormatError(
            f"expected {8 * count} weight bytes, found {len(data) - pos}", offset=pos)
    weights = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(m, q, d)
    return ProjectionBank(weights, seed=seed, generator_id=generator_id)
