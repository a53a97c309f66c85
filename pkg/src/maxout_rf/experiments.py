"""End-to-end experiment pipelines shared by the CLI and the acceptance suite.

Each pipeline is a deterministic function of its arguments: the projection
bank is regenerated from ``(m, q, d, seed)`` and every random split or
shuffle takes an explicit seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import featurize_batch, sample_bank
from .data import Dataset, gen_blobs, holdout_indices
from .errors import InvalidArgumentError
from .linear import (
    LAMBDA_GRID,
    LinearModel,
    SGDConfig,
    evaluate,
    one_vs_rest,
    select_lambda,
    train_logistic_sgd,
    train_ridge,
)


@dataclass
class CellResult:
    """Outcome of one ``(m, q, seed)`` training run."""

    m: int
    q: int
    seed: int
    test_error: float
    model: LinearModel = field(repr=False)
    lam: float | None = None
    holdout_errors: dict = field(default_factory=dict)
    seconds: float = 0.0


def _n_classes(*datasets):
    return int(max(int(ds.labels.max()) for ds in datasets)) + 1


def _require_labels(*datasets):
    for ds in datasets:
        if ds.labels is None:
            raise InvalidArgumentError(f"dataset {ds.name!r} has no labels")


def ridge_cell(train: Dataset, test: Dataset, m: int, q: int, seed: int,
               n_holdout: int, holdout_seed: int = 0, grid=LAMBDA_GRID,
               threads: int = 1) -> CellResult:
    """Featurize, pick the ridge penalty on a holdout split, refit on all training rows.

    The training set is featurized once; the holdout split indexes into
    those features.  The final model is trained on every training row with
    the selected penalty and scored on ``test``.
    """
    _require_labels(train, test)
    start = time.perf_counter()
    T = _n_classes(train, test)
    bank = sample_bank(m, q, train.d, seed)
    Z = featurize_batch(bank, train.X, threads=threads)
    Z_test = featurize_batch(bank, test.X, threads=threads)
    fit_rows, hold_rows = holdout_indices(train.n, n_holdout, holdout_seed)
    lam, errors = select_lambda(Z[fit_rows], train.labels[fit_rows],
                                Z[hold_rows], train.labels[hold_rows], T, grid)
    model = train_ridge(Z, one_vs_rest(train.labels, T), lam)
    err = evaluate(model, Z_test, test.labels).error_rate
    return CellResult(m, q, seed, err, model, lam, errors, time.perf_counter() - start)


def logistic_cell(train: Dataset, test: Dataset, m: int, q: int, seed: int,
                  sgd: SGDConfig = SGDConfig(), threads: int = 1) -> CellResult:
    """Featurize and fit multinomial logistic regression by SGD; report test error."""
    _require_labels(train, test)
    start = time.perf_counter()
    T = _n_classes(train, test)
    bank = sample_bank(m, q, train.d, seed)
    Z = featurize_batch(bank, train.X, threads=threads)
    model = train_logistic_sgd((Z, train.labels), T, sgd)
    err = evaluate(model, featurize_batch(bank, test.X, threads=threads), test.labels).error_rate
    return CellResult(m, q, seed, err, model, None, {}, time.perf_counter() - start)


def sweep(train: Dataset, test: Dataset, ms, qs, seeds, model: str = "ridge",
          n_holdout: int = 10000, holdout_seed: int = 0, grid=LAMBDA_GRID,
          sgd: SGDConfig = SGDConfig(), threads: int = 1, progress=None):
    """Run every ``(m, q)`` cell over ``seeds``; returns ``{(m, q): [CellResult, ...]}``.

    Cells are visited in ascending ``(m, q)`` order.  ``progress`` is an
    optional callable receiving each finished :class:`CellResult`.
    """
    if not seeds:
        raise InvalidArgumentError("seed list must be nonempty")
    results = {}
    for m in sorted(ms):
        for q in sorted(qs):
            cell = []
            for seed in seeds:
                if model == "ridge":
                    res = ridge_cell(train, test, m, q, seed, n_holdout, holdout_seed, grid, threads)
                elif model == "logistic":
                    res = logistic_cell(train, test, m, q, seed,
                                        replace(sgd, seed=seed), threads)
                else:
                    raise InvalidArgumentError(f"unknown model kind {model!r}")
                cell.append(res)
                if progress is not None:
                    progress(res)
            results[(m, q)] = cell
    return results


def mean_std(values):
    """Mean and sample (n-1) standard deviation; the deviation is 0 for one value."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


# -- synthetic multiclass benchmark ------------------------------------------

BLOB_TASK = {"n_per_class": 400, "T": 10, "d": 100, "separation": 4.0,
             "train_seed": 100, "test_seed": 101}
BLOB_SGD = SGDConfig(epochs=30, batch_size=64, lr0=0.1, lr_t0=5.0, l2=1e-4)


def blob_task(**overrides):
    """Pinned 10-class Gaussian blob train/test pair used as a large-vocabulary stand-in."""
    params = {**BLOB_TASK, **overrides}
    args = (params["n_per_class"], params["T"], params["d"], params["separation"])
    return gen_blobs(*args, seed=params["train_seed"]), gen_blobs(*args, seed=params["test_seed"])


def risk_vs_m(train: Dataset, test: Dataset, ms, q: int, seeds, sgd: SGDConfig = BLOB_SGD,
              threads: int = 1):
    """Mean SGD-logistic test error for each feature count in ``ms``.

    An empirical stand-in for the excess-risk trend as the number of random
    features grows; returns ``{m: (mean_error, per_seed_errors)}``.
    """
    out = {}
    for m in ms:
        errs = [logistic_cell(train, test, m, q, s, replace(sgd, seed=s),
                              threads).test_error for s in seeds]
        out[m] = (float(np.mean(errs)), errs)
    return out
