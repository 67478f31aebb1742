"""Ground-truth confinement loss and suppression ratio.

Two sources are supported: a table of externally solved designs (CSV) and a
deterministic analytic surrogate. The surrogate has no physical meaning; it
only gives the learning pipeline a smooth, multi-decade loss landscape to
work on when no solver data is available.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import Design, DerivedGeometry, derive_batch, derive_geometry

SR_THRESHOLD = 50.0
CL_CEILING = 1e3
HO1_CLAMP = 1e-3
KEY_DECIMALS = 6
WAVELENGTH_UM = 1.4

TRUTH_COLUMNS = ("d_core", "d_cap", "alpha", "d_nest", "cl_fund_db_km", "cl_ho1_db_km")


class OracleMiss(KeyError):
    """Design absent from the ground-truth table."""


@dataclass(frozen=True)
class GroundTruth:
    cl_fund: float
    cl_ho1: float

    def __post_init__(self):
        if not (self.cl_fund > 0 and self.cl_ho1 > 0):
            raise ValueError(f"losses must be positive: {self}")

    @property
    def sr(self) -> float:
        return self.cl_ho1 - self.cl_fund


@dataclass(frozen=True)
class SurrogateConstants:
    intercept: float = 1.2
    core_slope: float = 3.0
    core_ref: float = 20.0
    ratio_weight: float = 6.0
    ratio_center: float = 1.67
    nest_weight: float = 8.0
    nest_center: float = 0.60
    alpha_weight: float = 4.0
    alpha_center: float = 0.22
    gap_weight: float = 0.1
    gap_center: float = 4.5
    ripple: float = 0.5
    sr_peak: float = 115.0
    sr_nest_center: float = 0.62
    sr_nest_width: float = 0.30
    sr_alpha_center: float = 0.25
    sr_alpha_width: float = 0.35
    sr_offset: float = 5.0


def surrogate_batch(designs: np.ndarray, c: SurrogateConstants = SurrogateConstants()):
    """Return ``(cl_fund, cl_ho1)`` arrays for ``(N, 4)`` designs."""
    geom = derive_batch(designs)
    d_core, d_cap, alpha = designs[:, 0], designs[:, 1], designs[:, 2]
    rho = geom["nest_ratio"]
    delta = d_cap / d_core
    gap = geom["gap"]
    log_cl = (
        c.intercept
        - c.core_slope * np.log10(d_core / c.core_ref)
        + c.ratio_weight * (delta - c.ratio_center) ** 2
        + c.nest_weight * (rho - c.nest_center) ** 2
        + c.alpha_weight * (alpha - c.alpha_center) ** 2
        + c.gap_weight * (gap - c.gap_center) ** 2
        + c.ripple * np.sin(7 * rho) * np.sin(5 * alpha + 2 * delta)
    )
    cl_fund = 10.0 ** log_cl
    sr = (
        c.sr_peak
        * np.exp(-(((rho - c.sr_nest_center) / c.sr_nest_width) ** 2))
        * np.exp(-(((alpha - c.sr_alpha_center) / c.sr_alpha_width) ** 2))
        - c.sr_offset
    )
    cl_ho1 = cl_fund + sr
    cl_ho1 = np.where(cl_ho1 <= 0, HO1_CLAMP, cl_ho1)
    if not (np.all(np.isfinite(cl_fund)) and np.all(np.isfinite(cl_ho1))):
        raise FloatingPointError("surrogate produced a non-finite loss")
    return cl_fund, cl_ho1


def design_key(row) -> tuple[float, float, float, float]:
    return tuple(round(float(v), KEY_DECIMALS) for v in row[:4])


class Oracle:
    """Common interface: ``evaluate`` for one design, ``evaluate_batch`` for many."""

    mode = "abstract"

    def evaluate(self, d: Design) -> GroundTruth:
        cl_fund, cl_ho1 = self.evaluate_batch(np.array([d.as_tuple()]))
        return GroundTruth(float(cl_fund[0]), float(cl_ho1[0]))

    def evaluate_batch(self, designs: np.ndarray):
        raise NotImplementedError


@dataclass
class SurrogateOracle(Oracle):
    constants: SurrogateConstants = field(default_factory=SurrogateConstants)
    mode = "surrogate"

    def evaluate_batch(self, designs: np.ndarray):
        return surrogate_batch(np.asarray(designs, dtype=np.float64), self.constants)


class CsvOracle(Oracle):
    """Exact lookup in a ground-truth table keyed by designs rounded to 6 decimals."""

    mode = "csv"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.table: dict[tuple, tuple[float, float]] = {}
        with open(self.path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(TRUTH_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{self.path}: missing columns {sorted(missing)}")
            for row in reader:
                key = design_key([row[c] for c in TRUTH_COLUMNS[:4]])
                self.table[key] = (float(row["cl_fund_db_km"]), float(row["cl_ho1_db_km"]))

    def __len__(self):
        return len(self.table)

    def designs(self) -> np.ndarray:
        return np.array(sorted(self.table), dtype=np.float64).reshape(-1, 4)

    def evaluate_batch(self, designs: np.ndarray):
        out = np.empty((len(designs), 2))
        for i, row in enumerate(designs):
            key = design_key(row)
            try:
                out[i] = self.table[key]
            except KeyError:
                raise OracleMiss(f"design {key} not found in {self.path}") from None
        return out[:, 0].copy(), out[:, 1].copy()


def is_interesting(sr, cl_fund):
    """Single-mode (SR >= 50 dB) and CL below 1000 dB/km."""
    return np.logical_and(np.asarray(sr) >= SR_THRESHOLD, np.asarray(cl_fund) < CL_CEILING)


@dataclass(frozen=True)
class LabeledDesign:
    design: Design
    geom: DerivedGeometry
    truth: GroundTruth
    interesting: bool


def label(d: Design, t: GroundTruth) -> LabeledDesign:
    return LabeledDesign(d, derive_geometry(d), t, bool(is_interesting(t.sr, t.cl_fund)))


PARTITION_NAMES = ("train", "val", "test")


@dataclass
class LabeledDataset:
    """Column-oriented labeled designs.

    ``partition`` holds 0/1/2 for train/val/test, or -1 when unassigned.
    """

    designs: np.ndarray
    cl_fund: np.ndarray
    cl_ho1: np.ndarray
    partition: np.ndarray = None
    dropped: int = 0

    def __post_init__(self):
        self.designs = np.ascontiguousarray(self.designs, dtype=np.float64).reshape(-1, 4)
        self.cl_fund = np.asarray(self.cl_fund, dtype=np.float64)
        self.cl_ho1 = np.asarray(self.cl_ho1, dtype=np.float64)
        if self.partition is None:
            self.partition = np.full(len(self.designs), -1, dtype=np.int8)
        n = len(self.designs)
        if not (len(self.cl_fund) == len(self.cl_ho1) == len(self.partition) == n):
            raise ValueError("dataset columns have inconsistent lengths")

    def __len__(self):
        return len(self.designs)

    @property
    def sr(self) -> np.ndarray:
        return self.cl_ho1 - self.cl_fund

    @property
    def interesting(self) -> np.ndarray:
        return is_interesting(self.sr, self.cl_fund)

    def take(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.designs[idx], self.cl_fund[idx], self.cl_ho1[idx], self.partition[idx])

    def split(self, name: str) -> "LabeledDataset":
        return self.take(self.partition == PARTITION_NAMES.index(name))

    def record(self, i: int) -> LabeledDesign:
        return label(Design.from_row(self.designs[i]), GroundTruth(self.cl_fund[i], self.cl_ho1[i]))


def build_dataset(designs: Iterable[np.ndarray] | np.ndarray, oracle: Oracle, floor: float = 1.0) -> LabeledDataset:
    """Evaluate and label designs, dropping those with ``cl_fund < floor``."""
    if isinstance(designs, np.ndarray):
        chunks = [designs]
    else:
        chunks = list(designs)
    chunks = [np.asarray(c, dtype=np.float64).reshape(-1, 4) for c in chunks]
    all_designs = np.concatenate(chunks) if chunks else np.empty((0, 4))
    cl_fund, cl_ho1 = oracle.evaluate_batch(all_designs)
    keep = cl_fund >= floor
    ds = LabeledDataset(all_designs[keep], cl_fund[keep], cl_ho1[keep])
    ds.dropped = int((~keep).sum())
    return ds


def subsample(ds: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Uniform sample of ``n`` rows without replacement (original row order kept)."""
    if n > len(ds):
        raise ValueError(f"cannot draw {n} designs from a dataset of {len(ds)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(ds), size=n, replace=False))
    return ds.take(idx)


def partition(ds: LabeledDataset, seed: int) -> LabeledDataset:
    """Random 80/10/10 split; sizes floor(0.8n), floor(0.1n), remainder."""
    n = len(ds)
    if n < 10:
        raise ValueError(f"dataset of {n} designs is too small to partition (need >= 10)")
    n_train = (8 * n) // 10
    n_val = n // 10
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int8)
    labels[perm[:n_train]] = 0
    labels[perm[n_train:n_train + n_val]] = 1
    labels[perm[n_train + n_val:]] = 2
    out = ds.take(np.arange(n))
    out.partition = labels
    return out

