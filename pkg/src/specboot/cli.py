"""
Command-line entry point.

    specboot simulate mirror --seed 1 -o mirror.csv
    specboot fit mirror.csv --algorithm spectral-boot-em --G 2 -o out/
    specboot benchmark --kind mirror --algorithms boot-em spectral-boot-em --repeats 5 -o bench.csv

Exit codes: 0 success, 2 usage or invalid settings, 3 I/O or parse failure,
4 estimator failure (for ``benchmark``: at least one failed run).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from .algorithms import ALGORITHMS, BOOTSTRAPPED, FitResult, RunConfig, run
from .datagen import LabeledDataset, generate_cross_over, generate_mirror, separated_blobs

log = logging.getLogger("specboot")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_ESTIMATOR = 0, 2, 3, 4
JOBS_ENV = "SPECBOOT_JOBS"
FLOAT_FMT = "%.17g"

# RunConfig fields exposed as flags, with their argument types
_CONFIG_FLAGS = {
    "algorithm": str, "G": int, "eps": float, "eps_b": float, "dw_alpha": float,
    "dw_window": int, "min_bootstrap": int, "max_bootstrap": int, "seed": int,
    "init": str, "max_iter": int, "svd_method": str, "svd_full_threshold": int,
    "max_label_shift": float,
}


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- CSV I/O

def write_matrix(path, matrix, columns) -> None:
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, matrix, fmt=FLOAT_FMT, delimiter=",")


def read_matrix(path) -> tuple[np.ndarray, list[str]]:
    """Parse a numeric CSV with a header row; errors name the offending row."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise CLIError(f"{path}: empty file", EXIT_IO)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CLIError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}",
                    EXIT_IO)
            try:
                values = [float(v) for v in row]
            except ValueError:
                col = next(j for j, v in enumerate(row) if not _is_float(v))
                raise CLIError(
                    f"{path}: row {lineno}, column {col + 1} ({header[col]!r}): "
                    f"not a number: {row[col]!r}", EXIT_IO) from None
            if not all(np.isfinite(values)):
                raise CLIError(f"{path}: row {lineno} has non-finite values", EXIT_IO)
            rows.append(values)
    if not rows:
        raise CLIError(f"{path}: no data rows", EXIT_IO)
    return np.array(rows), header


def _is_float(text) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_labels(path, dataset: LabeledDataset) -> None:
    mask = dataset.special_mask
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label", "special"])
        for i, (lab, sp) in enumerate(zip(dataset.labels, mask)):
            w.writerow([i, int(lab), int(sp)])


def read_special_indices(path) -> list[int]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [int(r["index"]) for r in csv.DictReader(fh) if int(r["special"])]
    except (OSError, KeyError, ValueError) as exc:
        raise CLIError(f"cannot read labels file {path}: {exc}", EXIT_IO) from exc


def _labels_path(data_path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".labels.csv")


# ---------------------------------------------------------------- config

def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)  # JSON is valid YAML
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc.strerror}", EXIT_IO) from exc
    except yaml.YAMLError as exc:
        raise CLIError(f"cannot parse config {path}: {exc}", EXIT_IO) from exc
    raw = raw or {}
    if not isinstance(raw, dict):
        raise CLIError(f"config {path} must be a mapping", EXIT_IO)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise CLIError(f"config {path}: unknown keys {unknown}", EXIT_USAGE)
    return raw


def resolve_config(args, **overrides) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    settings = load_config_file(args.config) if args.config else {}
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    if getattr(args, "center", False):
        settings["center"] = True
    settings.update(overrides)
    try:
        return RunConfig(**settings)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid settings: {exc}", EXIT_USAGE) from exc


def _add_config_flags(parser, skip=()):
    parser.add_argument("--config", help="YAML or JSON file of run settings")
    for name, typ in _CONFIG_FLAGS.items():
        if name in skip:
            continue
        kwargs = {"type": typ, "default": None}
        if name == "algorithm":
            kwargs["choices"] = ALGORITHMS
        elif name == "init":
            kwargs["choices"] = ("kmeans", "random")
        elif name == "svd_method":
            kwargs["choices"] = ("auto", "full", "thin")
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, **kwargs)
    parser.add_argument("--center", action="store_true", default=None,
                        help="column-centre the data before the SVD")


# ---------------------------------------------------------------- simulate

def simulate_dataset(args) -> LabeledDataset:
    if args.kind == "mirror":
        return generate_mirror(args.n_per_group or 500, args.p or 150, seed=args.seed)
    if args.kind == "crossover":
        return generate_cross_over(args.n_per_group or 150, args.T, args.n_changers,
                                   seed=args.seed)
    return separated_blobs(args.n_per_group or 100, args.p or 10, args.groups,
                           args.separation, seed=args.seed)


def cmd_simulate(args) -> int:
    try:
        ds = simulate_dataset(args)
    except ValueError as exc:
        raise CLIError(f"invalid parameters: {exc}", EXIT_USAGE) from exc
    out = Path(args.output)
    labels_out = Path(args.labels_output) if args.labels_output else _labels_path(out)
    columns = [f"x{j + 1}" for j in range(ds.data.shape[1])]
    try:
        write_matrix(out, ds.data, columns)
        write_labels(labels_out, ds)
    except OSError as exc:
        raise CLIError(f"cannot write {exc.filename}: {exc.strerror}", EXIT_IO) from exc
    log.info("wrote %d x %d matrix to %s", *ds.data.shape, out)
    return EXIT_OK


# ---------------------------------------------------------------- fit

def _trace_rows(result: FitResult):
    """Long-format (iteration, series, value) rows."""
    if result.algorithm in BOOTSTRAPPED:
        for rec in result.trace:
            yield rec.iteration, "loglik", rec.loglik
            yield rec.iteration, "r_theta", rec.r_theta
            if np.isfinite(rec.dw_statistic):
                yield rec.iteration, "dw_statistic", rec.dw_statistic
    else:
        for it, ll in enumerate(result.trace, start=1):
            yield it, "loglik", ll


def _std_errors_dict(result: FitResult):
    se = result.std_errors
    if se is None:
        return None
    return {"weights": se.weights.tolist(), "means": se.means.tolist(),
            "covariances": se.covariances.tolist()}


def summarize(result: FitResult, config: RunConfig, n_features: int) -> dict:
    return {
        "algorithm": result.algorithm,
        "G": result.model.n_components,
        "n_observations": result.n_observations,
        "n_features": n_features,
        "log_likelihood": result.log_likelihood,
        "bic": result.bic,
        "estimation_space": result.estimation_space,
        "bic_note": ("BIC is only comparable between fits in the same "
                     f"estimation space ({result.estimation_space})"),
        "n_free_parameters": result.n_free_parameters,
        "converged": bool(result.converged),
        "bootstrap_iterations": result.bootstrap_iterations,
        "redraws": result.redraws,
        "svd_count": result.svd_count,
        "elapsed_seconds": result.elapsed_seconds,
        "std_errors": _std_errors_dict(result),
        "weights": result.model.weights.tolist(),
        "means": result.model.means.tolist(),
        "config": asdict(config),
    }


def write_fit_outputs(outdir, result: FitResult, config: RunConfig, n_features: int):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    G = result.model.n_components
    cols = [f"z{g + 1}" for g in range(G)]
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summarize(result, config, n_features), fh, indent=2)
        fh.write("\n")
    write_matrix(outdir / "memberships.csv", result.memberships, cols)
    if result.oob_memberships is not None:
        write_matrix(outdir / "oob_memberships.csv", result.oob_memberships, cols)
    with open(outdir / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "series", "value"])
        for it, series, value in _trace_rows(result):
            w.writerow([it, series, FLOAT_FMT % value])


def cmd_fit(args) -> int:
    config = resolve_config(args)
    data, _ = read_matrix(args.data)
    try:
        result = run(data, config)
    except Exception as exc:  # surfaced as an estimator failure, not a crash
        raise CLIError(f"{config.algorithm} failed: {type(exc).__name__}: {exc}",
                       EXIT_ESTIMATOR) from exc
    try:
        write_fit_outputs(args.output, result, config, data.shape[1])
    except OSError as exc:
        raise CLIError(f"cannot write {exc.filename}: {exc.strerror}", EXIT_IO) from exc
    log.info("%s: loglik %.6g, %s bootstrap iterations, %.2fs", result.algorithm,
             result.log_likelihood, result.bootstrap_iterations, result.elapsed_seconds)
    return EXIT_OK


# ---------------------------------------------------------------- benchmark

def benchmark_task(data, config: RunConfig, repeat: int, probes) -> dict:
    row = {"algorithm": config.algorithm, "repeat": repeat, "seed": config.seed}
    try:
        res = run(data, config)
    except Exception as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        status="ok", error="",
        elapsed_seconds=res.elapsed_seconds,
        bootstrap_iterations=res.bootstrap_iterations,
        log_likelihood=res.log_likelihood,
        estimation_space=res.estimation_space,
        converged=bool(res.converged),
    )
    for i in probes:
        for g in range(res.model.n_components):
            row[f"z{i}_{g + 1}"] = res.memberships[i, g]
            if res.oob_memberships is not None:
                row[f"oob{i}_{g + 1}"] = res.oob_memberships[i, g]
    return row


def _bench_data(args):
    if args.data:
        data, _ = read_matrix(args.data)
        probes = args.probe
        if probes is None:
            lp = Path(args.labels) if args.labels else _labels_path(args.data)
            probes = read_special_indices(lp) if lp.exists() else []
        return data, probes
    ds = (generate_mirror(seed=args.data_seed) if args.kind == "mirror"
          else generate_cross_over(seed=args.data_seed))
    return ds.data, (args.probe if args.probe is not None else ds.special_indices)


def _format(value):
    if isinstance(value, float):
        return FLOAT_FMT % value
    if value is None:
        return ""
    return value


def cmd_benchmark(args) -> int:
    if args.repeats < 1:
        raise CLIError("repeats must be at least 1", EXIT_USAGE)
    data, probes = _bench_data(args)
    if any(not 0 <= i < data.shape[0] for i in probes):
        raise CLIError("probe index out of range", EXIT_USAGE)
    base = resolve_config(args)
    tasks = [(base.with_(algorithm=alg, seed=base.seed + r), r + 1)
             for alg in args.algorithms for r in range(args.repeats)]

    jobs = args.jobs if args.jobs is not None else int(os.environ.get(JOBS_ENV, "1"))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(benchmark_task, data, cfg, r, probes) for cfg, r in tasks]
            rows = [f.result() for f in futures]  # submission order, not completion order
    else:
        rows = []
        for cfg, r in tasks:
            rows.append(benchmark_task(data, cfg, r, probes))
            log.info("%s run %d: %s", cfg.algorithm, r, rows[-1]["status"])

    columns = ["algorithm", "repeat", "seed", "status", "error", "elapsed_seconds",
               "bootstrap_iterations", "log_likelihood", "estimation_space", "converged"]
    for row in rows:
        columns += [k for k in row if k not in columns]
    try:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_format(row.get(c)) for c in columns])
    except OSError as exc:
        raise CLIError(f"cannot write {args.output}: {exc.strerror}", EXIT_IO) from exc
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d runs failed", failed, len(rows))
        return EXIT_ESTIMATOR
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specboot", description=__doc__.split("\n")[1])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a simulated dataset")
    sim.add_argument("kind", choices=("mirror", "crossover", "gmm"))
    sim.add_argument("-o", "--output", required=True)
    sim.add_argument("--labels-output", help="default: <output stem>.labels.csv")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--n-per-group", type=int, default=None)
    sim.add_argument("--p", type=int, default=None, help="number of columns")
    sim.add_argument("--T", type=int, default=41, help="crossover time points")
    sim.add_argument("--n-changers", type=int, default=3)
    sim.add_argument("--groups", type=int, default=3, help="gmm groups")
    sim.add_argument("--separation", type=float, default=10.0, help="gmm mean spacing")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit one estimator to a CSV matrix")
    fit.add_argument("data")
    fit.add_argument("-o", "--output", required=True, help="output directory")
    _add_config_flags(fit)
    fit.set_defaults(func=cmd_fit)

    bench = sub.add_parser("benchmark", help="repeat estimators over seeds")
    src = bench.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV matrix")
    src.add_argument("--kind", choices=("mirror", "crossover"))
    bench.add_argument("--data-seed", type=int, default=1)
    bench.add_argument("--labels", help="labels CSV giving probe rows")
    bench.add_argument("--probe", type=int, nargs="*", default=None,
                       help="row indices whose memberships are reported")
    bench.add_argument("--algorithms", nargs="+", choices=ALGORITHMS,
                       default=list(BOOTSTRAPPED))
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--jobs", type=int, default=None,
                       help=f"worker processes (default ${JOBS_ENV} or 1)")
    bench.add_argument("-o", "--output", required=True)
    _add_config_flags(bench, skip=("algorithm",))
    bench.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"specboot: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
