"""Linear predictors on top of maxout features.

Two trainers are provided: closed-form multi-output ridge regression with
``+-1`` one-vs-rest targets, and mini-batch SGD for multinomial logistic
regression.  Both produce a :class:`LinearModel` scored as ``Z @ alpha + bias``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import FormatError, InvalidArgumentError, NumericalError

LOSS_KINDS = ("ridge", "multinomial_logistic")
MODEL_MAGIC = b"MAXOUTLM"
MODEL_VERSION = 1
LAMBDA_GRID = tuple(10.0**k for k in range(-6, 3))


@dataclass(frozen=True, eq=False)
class LinearModel:
    alpha: np.ndarray
    lam: float
    loss_kind: str
    classes: tuple
    bias: np.ndarray | None = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64, copy=True)
        if alpha.ndim != 2:
            raise InvalidArgumentError(f"alpha must be 2-D, got shape {alpha.shape}")
        if alpha.shape[1] != len(self.classes):
            raise InvalidArgumentError(
                f"alpha has {alpha.shape[1]} columns for {len(self.classes)} classes")
        if not np.all(np.isfinite(alpha)):
            raise NumericalError("model weights are not finite")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"unknown loss kind {self.loss_kind!r}")
        bias = np.zeros(alpha.shape[1]) if self.bias is None else np.array(self.bias, dtype=np.float64)
        if bias.shape != (alpha.shape[1],):
            raise InvalidArgumentError(f"bias must have length {alpha.shape[1]}")
        alpha.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "classes", tuple(self.classes))

    @property
    def n_features(self) -> int:
        return self.alpha.shape[0]

    def scores(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.n_features:
            raise InvalidArgumentError(
                f"expected features with {self.n_features} columns, got shape {Z.shape}")
        return Z @ self.alpha + self.bias


def one_vs_rest(labels, n_classes: int) -> np.ndarray:
    """``+1`` in the column of the true class, ``-1`` elsewhere."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise InvalidArgumentError("labels must be a non-empty vector")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise InvalidArgumentError(f"labels must lie in [0, {n_classes - 1}]")
    Y = -np.ones((labels.size, n_classes))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


# -- ridge ----------------------------------------------------------------------

def train_ridge(Z, Y, lam: float, classes=None) -> LinearModel:
    """Solve ``(Z^T Z + lam I) alpha = Z^T Y`` by Cholesky factorization."""
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Z.ndim != 2 or Z.shape[0] < 1 or Y.shape[0] != Z.shape[0]:
        raise InvalidArgumentError(f"incompatible shapes Z {Z.shape} and Y {Y.shape}")
    if not lam > 0:
        raise InvalidArgumentError(f"lambda must be > 0, got {lam}")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
        raise InvalidArgumentError("Z and Y must be finite")
    with np.errstate(over="ignore", invalid="ignore"):
        A = Z.T @ Z
        A[np.diag_indices_from(A)] += lam
        B = Z.T @ Y
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NumericalError("Gram matrix overflowed (condition estimate inf)")
    try:
        factor = linalg.cho_factor(A, lower=False, check_finite=False)
        alpha = linalg.cho_solve(factor, B, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            f"Cholesky factorization failed (condition estimate {np.linalg.cond(A):.3e})") from exc
    bnorm = np.linalg.norm(B)
    residual = np.linalg.norm(A @ alpha - B) / bnorm if bnorm > 0 else float(np.linalg.norm(A @ alpha))
    classes = tuple(range(Y.shape[1])) if classes is None else tuple(classes)
    meta = {"n_train": Z.shape[0], "relative_residual": float(residual)}
    return LinearModel(alpha, float(lam), "ridge", classes, training_meta=meta)


def ridge_path(Z, Y, lambdas):
    """Ridge solutions for several penalties from one eigendecomposition of ``Z^T Z``."""
    Z = np.asarray(Z, dtype=np.float64)
    s, V = np.linalg.eigh(Z.T @ Z)
    B = V.T @ (Z.T @ np.asarray(Y, dtype=np.float64))
    for lam in lambdas:
        yield lam, V @ (B / (s + lam)[:, None])


def select_lambda(Z_train, labels_train, Z_holdout, labels_holdout, n_classes: int,
                  grid=LAMBDA_GRID):
    """Pick the penalty with the lowest holdout error; ties go to the smaller penalty.

    Returns ``(best_lambda, {lambda: holdout_error})``.
    """
    Y = one_vs_rest(labels_train, n_classes)
    labels_holdout = np.asarray(labels_holdout)
    errors = {}
    for lam, alpha in ridge_path(Z_train, Y, grid):
        pred = np.argmax(np.asarray(Z_holdout) @ alpha, axis=1)
        errors[lam] = float(np.mean(pred != labels_holdout))
    best = min(errors, key=lambda lam: (errors[lam], lam))
    return best, errors


# -- multinomial logistic regression ------------------------------------------------

@dataclass(frozen=True)
class SGDConfig:
    """Mini-batch SGD settings; the step size after ``e`` epochs is ``lr0 / (1 + e / lr_t0)``."""

    epochs: int = 30
    batch_size: int = 64
    lr0: float = 0.5
    lr_t0: float = 5.0
    l2: float = 1e-4
    seed: int = 0

    def learning_rate(self, epoch: int) -> float:
        return self.lr0 / (1.0 + epoch / self.lr_t0)


def logistic_objective(W, b, Z, y, l2: float) -> float:
    """Mean cross-entropy plus ``l2 * ||W||^2`` (the bias is not penalized)."""
    S = Z @ W + b
    lse = logsumexp(S, axis=1)
    ce = np.mean(lse - S[np.arange(len(y)), y])
    return float(ce + l2 * np.sum(W * W))


def logistic_gradient(W, b, Z, y, l2: float):
    """Gradient of :func:`logistic_objective` with respect to ``(W, b)``."""
    S = Z @ W + b
    P = np.exp(S - logsumexp(S, axis=1, keepdims=True))
    P[np.arange(len(y)), y] -= 1.0
    P /= len(y)
    return Z.T @ P + 2.0 * l2 * W, P.sum(axis=0)


def _materialize(stream):
    if isinstance(stream, tuple) and len(stream) == 2:
        Z, y = stream
    else:
        rows = list(stream)
        if not rows:
            raise InvalidArgumentError("empty training stream")
        Z = np.stack([np.asarray(r[0], dtype=np.float64) for r in rows])
        y = np.array([r[1] for r in rows])
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise InvalidArgumentError("empty training stream")
    if y.shape != (Z.shape[0],):
        raise InvalidArgumentError(f"got {y.shape[0]} labels for {Z.shape[0]} rows")
    if not np.all(np.isfinite(Z)):
        raise InvalidArgumentError("features must be finite")
    return Z, y


def train_logistic_sgd(stream, T: int, config: SGDConfig = SGDConfig()) -> LinearModel:
    """Multinomial logistic regression by shuffled mini-batch SGD.

    ``stream`` is either a ``(Z, labels)`` pair or an iterable of
    ``(feature_vector, label)`` rows.  A constant bias is learned per class.
    ``training_meta["objective"]`` holds the full training objective before
    the first epoch and after each one.
    """
    Z, y = _materialize(stream)
    if y.min() < 0 or y.max() >= T:
        raise InvalidArgumentError(f"labels must lie in [0, {T - 1}]")
    missing = np.setdiff1d(np.arange(T), y)
    if missing.size:
        raise InvalidArgumentError(f"classes without examples: {missing.tolist()}")
    n, m = Z.shape
    W = np.zeros((m, T))
    b = np.zeros(T)
    rng = np.random.Generator(np.random.Philox(config.seed))
    history = [logistic_objective(W, b, Z, y, config.l2)]
    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        perm = rng.permutation(n)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                idx = perm[start:start + config.batch_size]
                gW, gb = logistic_gradient(W, b, Z[idx], y[idx], config.l2)
                W -= lr * gW
                b -= lr * gb
            obj = logistic_objective(W, b, Z, y, config.l2)
        if not math.isfinite(obj) or not np.all(np.isfinite(W)):
            raise NumericalError(f"SGD diverged in epoch {epoch + 1}")
        history.append(obj)
    monotone = all(after <= before * (1 + 1e-3) for before, after in zip(history, history[1:]))
    meta = {
        "epochs": config.epochs, "batch_size": config.batch_size, "lr0": config.lr0,
        "lr_t0": config.lr_t0, "seed": config.seed, "objective": history,
        "final_objective": history[-1], "objective_monotone": monotone,
    }
    return LinearModel(W, config.l2, "multinomial_logistic", tuple(range(T)), b, meta)


# -- prediction and evaluation ------------------------------------------------------

def predict(model: LinearModel, phi_x):
    """Scores ``alpha^T phi_x + bias`` and the top class (ties: first class)."""
    phi_x = np.asarray(phi_x, dtype=np.float64)
    if phi_x.ndim != 1:
        raise InvalidArgumentError(f"expected a feature vector, got shape {phi_x.shape}")
    scores = model.scores(phi_x[None, :])[0]
    return scores, model.classes[int(np.argmax(scores))]


def predict_batch(model: LinearModel, Z) -> np.ndarray:
    """Predicted class positions (indices into ``model.classes``) for every row."""
    return np.argmax(model.scores(Z), axis=1)


class Evaluation(NamedTuple):
    error_rate: float
    confusion: np.ndarray


def evaluate(model: LinearModel, Z_test, labels_test) -> Evaluation:
    """Error rate and confusion matrix (rows: true class, columns: predicted)."""
    labels_test = np.asarray(labels_test)
    if labels_test.size == 0:
        raise InvalidArgumentError("empty test set")
    index = {c: i for i, c in enumerate(model.classes)}
    try:
        truth = np.array([index[c] for c in labels_test.tolist()])
    except KeyError as exc:
        raise InvalidArgumentError(f"test label {exc.args[0]!r} is not a model class") from None
    pred = predict_batch(model, Z_test)
    T = len(model.classes)
    confusion = np.zeros((T, T), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    return Evaluation(float(np.mean(pred != truth)), confusion)


def confusion_to_csv(confusion, classes) -> str:
    lines = ["true\\pred," + ",".join(str(c) for c in classes)]
    for c, row in zip(classes, confusion):
        lines.append(f"{c}," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


# -- serialization ------------------------------------------------------------

_MODEL_HEADER = struct.Struct("<8sHBQQd")


def save_model(model: LinearModel, path) -> None:
    """Binary container: magic, version, loss kind, dims, lambda, classes, alpha, bias."""
    m, T = model.alpha.shape
    with open(path, "wb") as f:
        f.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, LOSS_KINDS.index(model.loss_kind),
                                   m, T, model.lam))
        f.write(np.asarray(model.classes, dtype="<i8").tobytes())
        f.write(model.alpha.astype("<f8").tobytes())
        f.write(model.bias.astype("<f8").tobytes())


def load_model(path) -> LinearModel:
    data = Path(path).read_bytes()
    if len(data) < _MODEL_HEADER.size:
        raise FormatError("model file truncated in header", offset=len(data))
    magic, version, kind, m, T, lam = _MODEL_HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}", offset=0)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", offset=8)
    if kind >= len(LOSS_KINDS):
        raise FormatError(f"unknown loss kind code {kind}", offset=10)
    pos = _MODEL_HEADER.size
    need = 8 * (T + m * T + T)
    if len(data) - pos != need:
        raise FormatError(f"expected {need} payload bytes, found {len(data) - pos}", offset=pos)
    classes = np.frombuffer(data, dtype="<i8", count=T, offset=pos).tolist()
    alpha = np.frombuffer(data, dtype="<f8", count=m * T, offset=pos + 8 * T).reshape(m, T)
    bias = np.frombuffer(data, dtype="<f8", count=T, offset=pos + 8 * T + 8 * m * T)
    return LinearModel(alpha, lam, LOSS_KINDS[kind], tuple(classes), bias)
