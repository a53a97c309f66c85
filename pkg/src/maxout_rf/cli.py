"""``maxout-rf`` command-line entry point.

Every subcommand reads an optional flat config file (see
:mod:`maxout_rf.config`), writes its outputs into ``--out`` and ends with a
key-value ``report.txt`` that embeds the full config.  Exit codes: 0 success,
2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import Cell, ConfigError, ExperimentConfig, RunReport
from .core import featurize_batch, hash_codes_batch, load_bank, sample_bank, save_bank
from .data import (
    Dataset,
    gen_blobs,
    gen_circle,
    gen_rotation_manifold,
    load_dataset,
    load_delimited,
    load_mnist,
    normalize_rows,
    save_dataset,
)
from .embedding import distance_curve, fit_pca, transform
from .errors import FormatError, InvalidArgumentError, NumericalError
from .experiments import logistic_cell, ridge_cell, sweep
from .kernel import KernelModel, kappa_mc
from .linear import confusion_to_csv, evaluate, load_model, save_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("maxout_rf")


# -- helpers --------------------------------------------------------------

def _write(path: Path, text: str) -> None:
    """Write via a temporary file and rename so readers never see partial output."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _load_file(path: str) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    if p.suffix.lower() in (".csv", ".txt"):
        return load_delimited(p, has_labels=True, header=True)
    return load_dataset(p)


def load_inputs(cfg: ExperimentConfig):
    """``(train, test)`` datasets named by the config; ``test`` may be ``None``."""
    if cfg.dataset == "mnist":
        train, test = load_mnist(cfg.data_dir, "train"), load_mnist(cfg.data_dir, "test")
    elif cfg.dataset == "circle":
        train, test = gen_circle(cfg.n_points, cfg.data_seed), None
    elif cfg.dataset == "blobs":
        args = (cfg.n_per_class, cfg.classes, cfg.dim, cfg.separation)
        train = gen_blobs(*args, seed=cfg.data_seed)
        test = gen_blobs(*args, seed=cfg.data_seed + 1)
    elif cfg.dataset == "rotation":
        train, test = gen_rotation_manifold(cfg.n_angles, cfg.side, cfg.data_seed), None
    else:
        train = _load_file(cfg.train_path)
        test = _load_file(cfg.test_path) if cfg.test_path else None
    if cfg.normalization == "unit_sphere":
        train = normalize_rows(train)
        test = normalize_rows(test) if test is not None else None
    return train, test


def _bank_for(cfg, d):
    return sample_bank(cfg.single("m"), cfg.single("q"), d, cfg.single("seeds"))


# -- commands -------------------------------------------------------------

def cmd_featurize(cfg: ExperimentConfig, out: Path, args) -> RunReport:
    train, test = load_inputs(cfg)
    bank = _bank_for(cfg, train.d)
    save_bank(bank, out / "bank.bin")
    for split, ds in (("train", train), ("test", test)):
        if ds is None:
            continue
        Z = featurize_batch(bank, ds.X, threads=cfg.threads)
        save_dataset(Dataset(Z, ds.labels, f"{ds.name}-features"), out / f"features_{split}.bin")
    return RunReport("featurize", cfg, extra={"bank_fingerprint": bank.fingerprint})


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> RunReport:
    train, test = load_inputs(cfg)
    if train.labels is None:
        raise InvalidArgumentError(f"dataset {train.name!r} has no labels to train on")
    test = train if test is None else test
    m, q, seed = cfg.single("m"), cfg.single("q"), cfg.single("seeds")
    if cfg.model == "ridge":
        if cfg.holdout >= train.n:
            raise ConfigError(f"holdout {cfg.holdout} must be smaller than the "
                              f"{train.n} training rows", field_name="holdout")
        res = ridge_cell(train, test, m, q, seed, cfg.holdout, cfg.holdout_seed,
                         tuple(cfg.lambda_grid), cfg.threads)
    else:
        res = logistic_cell(train, test, m, q, seed, replace(cfg.sgd, seed=seed), cfg.threads)
    save_bank(sample_bank(m, q, train.d, seed), out / "bank.bin")
    save_model(res.model, out / "model.bin")
    cell = Cell(m, q, [seed], [res.test_error], [res.lam] if res.lam is not None else [])
    extra = {"model": cfg.model, "evaluated_on": "test" if test is not train else "train"}
    return RunReport("train", cfg, [cell], extra=extra)


def cmd_eval(cfg: ExperimentConfig, out: Path, args) -> RunReport:
    if not args.model or not args.bank:
        raise ConfigError("eval needs --model and --bank")
    model = load_model(args.model)
    bank = load_bank(args.bank)
    if args.data:
        ds = _load_file(args.data)
    else:
        train, test = load_inputs(cfg)
        ds = test if test is not None else train
    if ds.labels is None:
        raise InvalidArgumentError(f"dataset {ds.name!r} has no labels to evaluate against")
    if bank.m != model.n_features:
        raise InvalidArgumentError(
            f"bank has {bank.m} units but the model expects {model.n_features} features")
    ev = evaluate(model, featurize_batch(bank, ds.X, threads=cfg.threads), ds.labels)
    _write(out / "confusion.csv", confusion_to_csv(ev.confusion, model.classes))
    cell = Cell(bank.m, bank.q, [bank.seed], [ev.error_rate])
    return RunReport("eval", cfg, [cell], extra={"dataset": ds.name, "n": ds.n})


def cmd_kernel_probe(cfg: ExperimentConfig, out: Path, args) -> RunReport:
    rhos = np.linspace(-1.0, 1.0, cfg.kernel_rho_points)
    base_seed = cfg.seeds[0]
    rows = []
    for q in cfg.kernel_q:
        model = KernelModel.build(q)
        for i, rho in enumerate(rhos):
            rho = float(rho)
            kappa, se = kappa_mc(q, rho, cfg.kernel_samples, seed=base_seed * 1_000_003 + 1000 * q + i)
            d2 = model.sigma2 * (2.0 - 2.0 * rho * kappa)
            rows.append([q, repr(rho), repr(kappa), repr(se), repr(model.kappa_series(rho)),
                         repr(d2), repr(d2 / model.sigma2)])
    header = ["q", "rho", "kappa_mc", "kappa_stderr", "kappa_series",
              "expected_distance2", "expected_distance2_normalized"]
    _write(out / "kernel_probe.csv", _csv(header, rows))
    return RunReport("kernel-probe", cfg, extra={"rows": len(rows)})


def cmd_embed(cfg: ExperimentConfig, out: Path, args) -> RunReport:
    train, _ = load_inputs(cfg)
    bank = _bank_for(cfg, train.d)
    Z = featurize_batch(bank, train.X, threads=cfg.threads)
    pca = fit_pca(Z, cfg.pca_k)
    coords = transform(pca, Z)
    header = ["id"] + [f"coord_{j + 1}" for j in range(cfg.pca_k)]
    _write(out / "embedding.csv",
           _csv(header, [[i, *map(repr, row.tolist())] for i, row in enumerate(coords)]))
    extra = {"explained_variance": ", ".join(repr(float(v)) for v in pca.eigenvalues)}
    if cfg.curve:
        curve = distance_curve(bank, train.X)
        scale = math.sqrt(KernelModel.build(bank.q).sigma2)
        rows = [[repr(o), repr(e), repr(e / scale), bank.q, bank.m, bank.seed]
                for o, e in curve.tolist()]
        _write(out / "distance_curve.csv",
               _csv(["orig_dist", "embed_dist", "embed_dist_normalized", "q", "m", "seed"], rows))
        extra["curve_pairs"] = len(rows)
    return RunReport("embed", cfg, extra=extra)


def cmd_hash(cfg: ExperimentConfig, out: Path, args) -> RunReport:
    train, _ = load_inputs(cfg)
    bank = _bank_for(cfg, train.d)
    codes = hash_codes_batch(bank, train.X)
    header = ["id"] + [f"code_{j + 1}" for j in range(bank.m)]
    _write(out / "codes.csv", _csv(header, [[i, *row] for i, row in enumerate(codes.tolist())]))
    return RunReport("hash", cfg, extra={"bank_fingerprint": bank.fingerprint})


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> RunReport:
    train, test = load_inputs(cfg)
    if test is None:
        raise InvalidArgumentError(f"dataset {cfg.dataset!r} has no test split to sweep over")

    def progress(res):
        log.info("m=%d q=%d seed=%d test_error=%.4f (%.1fs)",
                 res.m, res.q, res.seed, res.test_error, res.seconds)

    results = sweep(train, test, cfg.m, cfg.q, cfg.seeds, cfg.model, cfg.holdout,
                    cfg.holdout_seed, tuple(cfg.lambda_grid), cfg.sgd, cfg.threads, progress)
    cells = [Cell(m, q, [r.seed for r in rs], [r.test_error for r in rs],
                  [r.lam for r in rs if r.lam is not None])
             for (m, q), rs in results.items()]
    report = RunReport("sweep", cfg, cells)
    _write(out / "grid.csv", report.grid_csv())
    _write(out / "seeds.csv", report.seeds_csv())
    return report


COMMANDS = {
    "featurize": (cmd_featurize, "sample a bank and write feature matrices"),
    "train": (cmd_train, "train a linear model on maxout features"),
    "eval": (cmd_eval, "evaluate a saved model and bank on a dataset"),
    "kernel-probe": (cmd_kernel_probe, "tabulate the collision kernel over a rho grid"),
    "embed": (cmd_embed, "PCA coordinates of featurized inputs, optionally a distance curve"),
    "hash": (cmd_hash, "write per-unit argmax codes"),
    "sweep": (cmd_sweep, "error-rate grid over m x q averaged over seeds"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="run with this single seed")
    common.add_argument("--out", type=Path, help="output directory (default: out_dir from config)")
    common.add_argument("--threads", type=int, help="worker threads for featurization")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field; may be repeated")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress progress logging")

    parser = argparse.ArgumentParser(prog="maxout-rf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "eval":
            p.add_argument("--model", type=Path, help="model file written by train")
            p.add_argument("--bank", type=Path, help="bank file written by train or featurize")
            p.add_argument("--data", help="labelled dataset container or CSV (default: config dataset)")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    """Config file values, then ``--set`` pairs, then the dedicated flags; later wins."""
    values = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        values.update(ExperimentConfig.parse_fields(text, source=str(args.config)))
    for item in args.set:
        values.update(ExperimentConfig.parse_fields(item, source=f"--set {item!r}"))
    if args.seed is not None:
        values["seeds"] = [args.seed]
    if args.threads is not None:
        values["threads"] = args.threads
    if args.out is not None:
        values["out_dir"] = str(args.out)
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    func = COMMANDS[args.command][0]

    def fail(code, exc):
        print(f"maxout-rf {args.command}: error: {exc}", file=sys.stderr)
        return code

    try:
        cfg = _resolve_config(args)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        report = func(cfg, out, args)
        report.wall_clock = time.perf_counter() - start
        _write(out / "report.txt", report.to_text())
    except ConfigError as exc:
        return fail(EXIT_CONFIG, exc)
    except NumericalError as exc:
        return fail(EXIT_NUMERICAL, exc)
    except (FormatError, InvalidArgumentError, OSError) as exc:
        return fail(EXIT_DATA, exc)
    for cell in report.cells:
        log.info("m=%d q=%d mean_error=%.4f std=%.4f", cell.m, cell.q, cell.mean, cell.std)
    log.info("wrote %s", out / "report.txt")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
