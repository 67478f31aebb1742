"""CSV schemas, run manifests and output-directory locking.

Every number written to CSV uses 9 significant digits (``%.9g``).
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .geometry import derive_batch
from .oracle import PARTITION_NAMES, LabeledDataset

FMT = "%.9g"

DESIGN_COLUMNS = ["d_core", "d_cap", "alpha", "d_nest", "d_clad", "gap"]
DATASET_COLUMNS = DESIGN_COLUMNS + ["cl_fund_db_km", "cl_ho1_db_km", "sr_db", "interesting", "partition"]
TRIAL_COLUMNS = [
    "n", "trial", "subset_seed", "partition_seed", "train_seed", "regressor",
    "train_rows", "regressor_train_rows", "tp", "fn", "fp", "tn", "fnr", "fpr", "s_n", "eta",
]
SIZE_COLUMNS = ["n", "trials", "fnr", "fpr", "mean_xi", "std_xi", "xi_trials", "pooled_fnr", "pooled_fpr"]
TOPK_COLUMNS = ["rank", "index"] + DESIGN_COLUMNS + ["cl_p_db_km"]
HIST_COLUMNS = ["bin_low", "bin_high", "count"]
CONFIRM_COLUMNS = ["rank"] + DESIGN_COLUMNS + ["cl_p_db_km", "cl_t_db_km", "sr_t_db", "delta_cl_p", "delta_cl_t"]
CURVE_COLUMNS = ["epoch", "train_loss", "val_loss"]


class SchemaError(ValueError):
    pass


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return FMT % float(v)


def write_rows(path: str | Path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_rows(path: str | Path, required) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or ())]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        return list(reader)


def design_rows(designs: np.ndarray):
    geom = derive_batch(designs)
    for i, row in enumerate(designs):
        yield [*row, geom["d_clad"][i], geom["gap"][i]]


def write_designs(path, designs: np.ndarray) -> Path:
    return write_rows(path, DESIGN_COLUMNS, design_rows(designs))


def read_designs(path) -> np.ndarray:
    rows = read_rows(path, DESIGN_COLUMNS[:4])
    return np.array([[float(r[c]) for c in DESIGN_COLUMNS[:4]] for r in rows]).reshape(-1, 4)


def write_dataset(path, ds: LabeledDataset) -> Path:
    interesting = ds.interesting
    sr = ds.sr

    def rows():
        for i, base in enumerate(design_rows(ds.designs)):
            part = PARTITION_NAMES[ds.partition[i]] if ds.partition[i] >= 0 else ""
            yield [*base, ds.cl_fund[i], ds.cl_ho1[i], sr[i], bool(interesting[i]), part]

    return write_rows(path, DATASET_COLUMNS, rows())


def read_dataset(path) -> LabeledDataset:
    rows = read_rows(path, DATASET_COLUMNS[:4] + ["cl_fund_db_km", "cl_ho1_db_km"])
    designs = np.array([[float(r[c]) for c in DATASET_COLUMNS[:4]] for r in rows]).reshape(-1, 4)
    cl_f = np.array([float(r["cl_fund_db_km"]) for r in rows])
    cl_h = np.array([float(r["cl_ho1_db_km"]) for r in rows])
    part = np.array(
        [PARTITION_NAMES.index(r["partition"]) if r.get("partition") else -1 for r in rows], dtype=np.int8
    )
    return LabeledDataset(designs, cl_f, cl_h, part)


def write_curves(path, curves) -> Path:
    return write_rows(path, CURVE_COLUMNS, curves)


def trial_row(r) -> list:
    c = r.confusion
    return [
        r.n, r.trial, r.subset_seed, r.partition_seed, r.train_seed, r.regressor,
        r.train_rows, r.regressor_train_rows, c.tp, c.fn, c.fp, c.tn, c.fnr, c.fpr, r.xi.size, r.eta,
    ]


def write_trials(path, reports) -> Path:
    return write_rows(path, TRIAL_COLUMNS, (trial_row(r) for r in sorted(reports, key=lambda r: (r.n, r.trial))))


def write_size_study(path, aggregates) -> Path:
    return write_rows(
        path, SIZE_COLUMNS,
        ([a.n, a.trials, a.fnr, a.fpr, a.mean_xi, a.std_xi, a.xi_trials, a.pooled_fnr, a.pooled_fpr]
         for a in aggregates),
    )


def write_kde(path, curve) -> Path:
    return write_rows(path, ["xi", "density"], zip(curve.x, curve.density))


def write_topk(path, result) -> Path:
    pool = result.pool

    def rows():
        for rank, base in enumerate(design_rows(pool.designs), start=1):
            yield [rank, pool.index[rank - 1], *base, pool.cl_p[rank - 1]]

    return write_rows(path, TOPK_COLUMNS, rows())


def read_topk(path):
    rows = read_rows(path, TOPK_COLUMNS)
    designs = np.array([[float(r[c]) for c in DESIGN_COLUMNS[:4]] for r in rows]).reshape(-1, 4)
    cl_p = np.array([float(r["cl_p_db_km"]) for r in rows])
    index = np.array([int(r["index"]) for r in rows], dtype=np.int64)
    return designs, cl_p, index


def write_histogram(path, counts, edges) -> Path:
    return write_rows(path, HIST_COLUMNS, zip(edges[:-1], edges[1:], counts))


def write_confirmation(path, report) -> Path:
    dp, dt = report.delta_cl_p, report.delta_cl_t

    def rows():
        for i, base in enumerate(design_rows(report.designs)):
            yield [i + 1, *base, report.cl_p[i], report.cl_t[i], report.sr_t[i], dp[i], dt[i]]

    return write_rows(path, CONFIRM_COLUMNS, rows())


def write_stats(path, stats: dict) -> Path:
    return write_rows(path, ["statistic", "value"], stats.items())


def read_stats(path) -> dict:
    return {r["statistic"]: r["value"] for r in read_rows(path, ["statistic", "value"])}


# manifests ---------------------------------------------------------------

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def versions() -> dict:
    return {
        "nanfopt": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "kernel_backend": kernels.backend.NAME,
    }


def write_manifest(directory, command: str, config_hash: str, seeds: dict,
                   inputs: dict, outputs: list, summary: dict | None = None) -> Path:
    directory = Path(directory)
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seeds": seeds,
        "inputs": {name: file_hash(p) for name, p in sorted(inputs.items())},
        "outputs": {str(Path(p).relative_to(directory)): file_hash(p) for p in sorted(map(Path, outputs))},
        "summary": summary or {},
        "versions": versions(),
    }
    path = directory / f"manifest_{command.replace('-', '_')}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(directory, command: str) -> dict:
    path = Path(directory) / f"manifest_{command.replace('-', '_')}.json"
    if not path.exists():
        raise FileNotFoundError(f"missing manifest: {path}")
    return json.loads(path.read_text())


class LockBusy(RuntimeError):
    pass


@contextmanager
def directory_lock(directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".nanf.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockBusy(f"{directory} is locked by another command (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)
