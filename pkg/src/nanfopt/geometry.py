"""NANF geometry: parameterization, derived dimensions, validity rules and
design-space enumeration/sampling.

Designs are handled one at a time through :class:`Design` or in bulk as
``(N, 4)`` float64 arrays with columns ``(d_core, d_cap, alpha, d_nest)``.
All lengths are in micrometres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from . import kernels

WALL = 1.11
WALL2 = 2 * WALL
SIN45 = math.sin(math.pi / 4)

COLUMNS = ("d_core", "d_cap", "alpha", "d_nest")
FEATURE_NAMES = ("d_clad", "d_core", "d_nest", "d_cap", "d_cap_unembedded", "gap")

# smallest acceptance rate tolerated by the random sampler before giving up
MIN_ACCEPTANCE = 1e-4
PAIRS_PER_BLOCK = 256


@dataclass(frozen=True, order=True)
class Design:
    d_core: float
    d_cap: float
    alpha: float
    d_nest: float

    def __post_init__(self):
        if not (self.d_core > 0 and self.d_cap > 0 and self.d_nest > 0):
            raise ValueError(f"diameters must be positive: {self}")
        if not 0.0 <= self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in [0, 0.5], got {self.alpha}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_core, self.d_cap, self.alpha, self.d_nest)

    @classmethod
    def from_row(cls, row) -> "Design":
        return cls(*(float(v) for v in row[:4]))


@dataclass(frozen=True)
class DerivedGeometry:
    d_clad: float
    gap: float
    air_space: float
    nest_ratio: float


def derive_geometry(d: Design) -> DerivedGeometry:
    one_minus = 1 - d.alpha
    return DerivedGeometry(
        d_clad=d.d_core + 2 * one_minus * (d.d_cap + WALL2),
        gap=SIN45 * d.d_core + (SIN45 - 1) * (d.d_cap + WALL2),
        air_space=one_minus * d.d_cap - d.d_nest - WALL * (1 + 2 * d.alpha),
        nest_ratio=d.d_nest / (one_minus * d.d_cap),
    )


def derive_batch(designs: np.ndarray) -> dict[str, np.ndarray]:
    """Vectorized :func:`derive_geometry`; same arithmetic, same order."""
    d_core, d_cap, alpha, d_nest = (designs[:, i] for i in range(4))
    one_minus = 1 - alpha
    return {
        "d_clad": d_core + 2 * one_minus * (d_cap + WALL2),
        "gap": SIN45 * d_core + (SIN45 - 1) * (d_cap + WALL2),
        "air_space": one_minus * d_cap - d_nest - WALL * (1 + 2 * alpha),
        "nest_ratio": d_nest / (one_minus * d_cap),
    }


@dataclass(frozen=True)
class Range:
    """Closed interval; ``step`` is required for grid axes only."""

    min: float
    max: float
    step: float | None = None

    def __post_init__(self):
        if self.min > self.max:
            raise ValueError(f"range min {self.min} exceeds max {self.max}")
        if self.step is not None and self.step <= 0:
            raise ValueError(f"range step must be positive, got {self.step}")

    def grid(self) -> np.ndarray:
        if self.step is None:
            raise ValueError("range has no step; cannot build a grid")
        count = int(math.floor((self.max - self.min) / self.step + 1e-9)) + 1
        # rounding keeps e.g. 0.15 from becoming 0.15000000000000002
        return np.round(self.min + self.step * np.arange(count), 10)


class Rejection(Enum):
    ACCEPTED = 0
    NEST_VS_CORE = 1  # d_nest <= (1-alpha) d_cap - d_core
    NEST_TOO_SMALL = 2  # d_nest <= f_min (1-alpha) d_cap
    GAP_OUT_OF_RANGE = 3
    NEST_TOUCHES = 4  # air space between nested capillaries <= 0


@dataclass(frozen=True)
class DesignSpaceSpec:
    d_core: Range
    d_cap: Range
    alpha: Range
    nest_fraction: Range
    g_min: float = 3.0
    g_max: float = 6.0
    gap_tol: float = 0.1
    f_min: float = 0.1
    f_max: float = 0.6

    def __post_init__(self):
        if self.g_min > self.g_max:
            raise ValueError("g_min exceeds g_max")
        if self.f_min > self.f_max:
            raise ValueError("f_min exceeds f_max")

    @property
    def gap_upper(self) -> float:
        return self.g_max + self.gap_tol

    def rule_constants(self) -> tuple[float, float, float, float, float]:
        return (SIN45, WALL, self.f_min, self.g_min, self.gap_upper)


def default_dataset_grid(gap_tol: float = 0.1) -> DesignSpaceSpec:
    """The training-set grid used for the ground-truth data set."""
    return DesignSpaceSpec(
        d_core=Range(20.0, 60.0, 1.0),
        d_cap=Range(25.8, 54.3, 0.5),
        alpha=Range(0.0, 0.5, 0.05),
        nest_fraction=Range(0.1, 0.6, 0.05),
        gap_tol=gap_tol,
    )


def default_search_space(fine: bool = True, gap_tol: float = 0.1) -> DesignSpaceSpec:
    """Random search domain; ``fine`` selects 0.02 steps (26x26 pairs), else
    0.05 steps (11x11 = 121 pairs)."""
    step = 0.02 if fine else 0.05
    return DesignSpaceSpec(
        d_core=Range(20.0, 31.0),
        d_cap=Range(25.8, 54.3),
        alpha=Range(0.0, 0.5, step),
        nest_fraction=Range(0.1, 0.6, step),
        gap_tol=gap_tol,
    )


def validate(d: Design, spec: DesignSpaceSpec) -> Rejection:
    """Return the first failing rule, or ``Rejection.ACCEPTED``."""
    geom = derive_geometry(d)
    one_minus = 1 - d.alpha
    if d.d_nest <= one_minus * d.d_cap - d.d_core:
        return Rejection.NEST_VS_CORE
    if d.d_nest <= spec.f_min * one_minus * d.d_cap:
        return Rejection.NEST_TOO_SMALL
    if geom.gap < spec.g_min or geom.gap > spec.gap_upper:
        return Rejection.GAP_OUT_OF_RANGE
    if geom.air_space <= 0:
        return Rejection.NEST_TOUCHES
    return Rejection.ACCEPTED


def validate_batch(designs: np.ndarray, spec: DesignSpaceSpec) -> np.ndarray:
    """Rejection codes (int8, 0 = accepted) for each row."""
    designs = np.ascontiguousarray(designs, dtype=np.float64)
    return kernels.backend.validate_codes(designs, *spec.rule_constants())


def featurize_batch(designs: np.ndarray) -> np.ndarray:
    designs = np.ascontiguousarray(designs, dtype=np.float64)
    return kernels.backend.featurize(designs, SIN45, WALL)


def expand_pairs(d_core: np.ndarray, d_cap: np.ndarray, spec: DesignSpaceSpec) -> np.ndarray:
    """Cross each (d_core, d_cap) pair with the (alpha, fraction) grid and keep
    valid designs, in pair order then lexicographic (alpha, fraction)."""
    return kernels.backend.expand_valid(
        np.ascontiguousarray(d_core, dtype=np.float64),
        np.ascontiguousarray(d_cap, dtype=np.float64),
        spec.alpha.grid(),
        spec.nest_fraction.grid(),
        *spec.rule_constants(),
    )


def enumerate_grid(spec: DesignSpaceSpec) -> np.ndarray:
    """All valid grid designs in lexicographic (d_core, d_cap, alpha, fraction) order."""
    cores, caps = spec.d_core.grid(), spec.d_cap.grid()
    pairs_core = np.repeat(cores, caps.size)
    pairs_cap = np.tile(caps, cores.size)
    return expand_pairs(pairs_core, pairs_cap, spec)


@dataclass
class SampleBlock:
    index: int
    designs: np.ndarray
    pairs_drawn: int


@dataclass
class SearchSampler:
    """Random (d_core, d_cap) pairs crossed with the (alpha, fraction) grid.

    Pairs come in fixed-size blocks; block ``b`` is drawn from a generator
    seeded with ``(seed, b)`` so any block can be regenerated on its own.
    """

    spec: DesignSpaceSpec
    seed: int
    pairs_per_block: int = PAIRS_PER_BLOCK
    _grid_size: int = field(init=False)

    def __post_init__(self):
        for name in ("d_core", "d_cap"):
            r = getattr(self.spec, name)
            if r.min <= 0:
                raise ValueError(f"{name} range must be positive")
        self._grid_size = self.spec.alpha.grid().size * self.spec.nest_fraction.grid().size

    def pairs(self, block: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, block])
        u = rng.random((self.pairs_per_block, 2))
        s = self.spec
        d_core = s.d_core.min + (s.d_core.max - s.d_core.min) * u[:, 0]
        d_cap = s.d_cap.min + (s.d_cap.max - s.d_cap.min) * u[:, 1]
        return d_core, d_cap

    def block(self, index: int) -> SampleBlock:
        d_core, d_cap = self.pairs(index)
        return SampleBlock(index, expand_pairs(d_core, d_cap, self.spec), d_core.size)

    def blocks(self, n_target: int, start: int = 0) -> Iterator[SampleBlock]:
        """Yield blocks (the last one truncated) until ``n_target`` designs."""
        produced = 0
        candidates = 0
        index = start
        while produced < n_target:
            blk = self.block(index)
            candidates += blk.pairs_drawn * self._grid_size
            if blk.designs.shape[0]:
                take = min(blk.designs.shape[0], n_target - produced)
                blk.designs = blk.designs[:take]
                produced += take
                yield blk
            if produced < n_target and candidates >= 1_000_000 and produced / candidates < MIN_ACCEPTANCE:
                raise RuntimeError(
                    f"acceptance rate {produced / candidates:.2e} below {MIN_ACCEPTANCE:g} "
                    f"after {candidates} candidates; design space is probably infeasible"
                )
            index += 1


def sample_search_space(spec: DesignSpaceSpec, n_target: int, seed: int) -> Iterator[np.ndarray]:
    """Stream valid designs (as array chunks) until ``n_target`` are produced."""
    for blk in SearchSampler(spec, seed).blocks(n_target):
        yield blk.designs
