"""Dense random search with a trained two-stage model.

The scan streams sampled designs through the classifier and regressor and
keeps only a bounded pool of the best predictions plus a histogram of all of
them. Optionally the predicted loss of every accepted design is retained (one
float per design, no geometry) for the search-size study.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import DesignSpaceSpec, SearchSampler, featurize_batch
from . import nn
from .oracle import LabeledDataset, Oracle, partition, subsample
from .pipeline import (
    TwoStageModel,
    delta_cl,
    regressor_hyperparams,
    std_best_k,
    train_two_stage,
    trial_seed,
)

log = logging.getLogger(__name__)

DEFAULT_POOL = 10_000
DEFAULT_CHUNK = 65_536
# log10(cl_p) histogram: 0.01-decade bins from 1e-3 to 1e5 dB/km plus open end bins
HIST_LOG_EDGES = np.round(np.linspace(-3.0, 5.0, 801), 10)


def hist_edges() -> np.ndarray:
    return np.concatenate(([0.0], 10.0 ** HIST_LOG_EDGES, [np.inf]))


def _hist_counts(log_cl: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(HIST_LOG_EDGES, log_cl, side="right")
    return np.bincount(idx, minlength=HIST_LOG_EDGES.size + 1).astype(np.int64)


def _rank_order(cl_p, designs, index) -> np.ndarray:
    # primary key cl_p, then the design tuple, then stream position
    return np.lexsort((index, designs[:, 3], designs[:, 2], designs[:, 1], designs[:, 0], cl_p))


@dataclass
class TopKPool:
    capacity: int
    designs: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    cl_p: np.ndarray = field(default_factory=lambda: np.empty(0))
    index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("pool capacity must be at least 1")

    def __len__(self):
        return self.cl_p.size

    def offer(self, designs: np.ndarray, cl_p: np.ndarray, index: np.ndarray) -> None:
        if len(self) >= self.capacity:
            keep = cl_p <= self.cl_p[-1]
            designs, cl_p, index = designs[keep], cl_p[keep], index[keep]
        if cl_p.size == 0:
            return
        d = np.concatenate((self.designs, designs))
        c = np.concatenate((self.cl_p, cl_p))
        i = np.concatenate((self.index, index))
        order = _rank_order(c, d, i)[: self.capacity]
        self.designs, self.cl_p, self.index = d[order], c[order], i[order]

    def merge(self, other: "TopKPool") -> None:
        self.offer(other.designs, other.cl_p, other.index)


@dataclass
class SearchResult:
    pool: TopKPool
    hist_counts: np.ndarray
    n_designs: int
    n_accepted: int
    seed: int
    predictions: np.ndarray | None = None  # cl_p of accepted designs in stream order

    @property
    def n_rejected(self) -> int:
        return self.n_designs - self.n_accepted

    @property
    def best_cl_p(self) -> float:
        return float(self.pool.cl_p[0])


def _predict_block(model: TwoStageModel, designs: np.ndarray, chunk: int):
    feats = featurize_batch(designs)
    accepted = model.accepts(feats, chunk)
    log_cl = model.regressor.logits(feats[accepted], chunk) if accepted.any() else np.empty(0)
    return accepted, log_cl


def scan(model: TwoStageModel, spec: DesignSpaceSpec, n_target: int, seed: int,
         pool_size: int = DEFAULT_POOL, threads: int = 1, chunk: int = DEFAULT_CHUNK,
         keep_predictions: bool = False) -> SearchResult:
    """Score ``n_target`` sampled designs; results do not depend on ``threads``
    or ``chunk``."""
    sampler = SearchSampler(spec, seed)
    pool = TopKPool(pool_size)
    counts = np.zeros(HIST_LOG_EDGES.size + 1, dtype=np.int64)
    kept = []
    position = 0
    n_accepted = 0

    def consume(designs, accepted, log_cl):
        nonlocal position, n_accepted
        idx = position + np.flatnonzero(accepted)
        position += designs.shape[0]
        n_accepted += log_cl.size
        cl_p = 10.0 ** log_cl
        counts[:] += _hist_counts(log_cl)
        pool.offer(designs[accepted], cl_p, idx.astype(np.int64))
        if keep_predictions:
            kept.append(cl_p)

    blocks = (b.designs for b in sampler.blocks(n_target))
    if threads <= 1:
        for designs in blocks:
            consume(designs, *_predict_block(model, designs, chunk))
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            wave = []
            for designs in blocks:
                wave.append(designs)
                if len(wave) == 2 * threads:
                    for d, out in zip(wave, ex.map(lambda d: _predict_block(model, d, chunk), wave)):
                        consume(d, *out)
                    wave = []
            for d, out in zip(wave, ex.map(lambda d: _predict_block(model, d, chunk), wave)):
                consume(d, *out)
    predictions = np.concatenate(kept) if keep_predictions and kept else (np.empty(0) if keep_predictions else None)
    log.info("scanned %d designs, %d accepted by the classifier", position, n_accepted)
    return SearchResult(pool, counts, position, n_accepted, seed, predictions)


@dataclass
class ConfirmationReport:
    designs: np.ndarray
    cl_p: np.ndarray
    cl_t: np.ndarray
    sr_t: np.ndarray

    @property
    def k(self) -> int:
        return self.cl_p.size

    @property
    def min_cl_t(self) -> float:
        return float(self.cl_t.min())

    @property
    def std_cl_p(self) -> float | None:
        return std_best_k(self.cl_p) if self.k >= 2 else None

    @property
    def std_cl_t(self) -> float | None:
        return std_best_k(self.cl_t) if self.k >= 2 else None

    @property
    def delta_cl_p(self) -> np.ndarray:
        return delta_cl(self.cl_p)

    @property
    def delta_cl_t(self) -> np.ndarray:
        return delta_cl(self.cl_t)


def select_top(result: SearchResult, k: int, min_distance: float = 0.0) -> np.ndarray:
    """Pool positions of the ``k`` best designs, optionally skipping designs
    closer than ``min_distance`` (Euclidean, raw parameters) to one already taken."""
    pool = result.pool
    if min_distance <= 0:
        if len(pool) < k:
            raise ValueError(f"pool holds {len(pool)} designs, fewer than k = {k}")
        return np.arange(k)
    chosen = []
    for i in range(len(pool)):
        d = pool.designs[i]
        if all(np.linalg.norm(d - pool.designs[j]) >= min_distance for j in chosen):
            chosen.append(i)
            if len(chosen) == k:
                return np.array(chosen)
    raise ValueError(f"only {len(chosen)} designs satisfy min_distance = {min_distance}")


def confirm_top_k(result: SearchResult, oracle: Oracle, k: int = 18, min_distance: float = 0.0) -> ConfirmationReport:
    sel = select_top(result, k, min_distance)
    designs = result.pool.designs[sel]
    cl_f, cl_h = oracle.evaluate_batch(designs)
    return ConfirmationReport(designs, result.pool.cl_p[sel].copy(), cl_f, cl_h - cl_f)


def subset_study(result: SearchResult, sizes, repeats: int = 50, seed: int = 0) -> dict[int, float]:
    """Average, over ``repeats`` uniform subsets of each size ``m``, of the best
    predicted loss in the subset. Subsets are drawn from the ranked
    (classifier-accepted) designs."""
    if result.predictions is None:
        raise ValueError("scan was run without keep_predictions; rerun the scan to study subsets")
    preds = result.predictions
    total = preds.size
    out = {}
    for m in sorted(int(s) for s in sizes):
        if m > total or m < 1:
            raise ValueError(f"subset size {m} outside [1, {total}]")
        if m == total:
            out[m] = float(preds.min())
            continue
        rng = np.random.default_rng([seed, m])
        minima = [preds[rng.choice(total, size=m, replace=False)].min() for _ in range(repeats)]
        out[m] = float(np.mean(minima))
    return out


@dataclass
class RealizationTrial:
    trial: int
    seed: int
    best_cl_p: float
    best_cl_t: float
    report: ConfirmationReport


@dataclass
class RealizationStudy:
    trials: list[RealizationTrial]

    @property
    def spread_cl_p(self) -> float:
        v = [t.best_cl_p for t in self.trials]
        return max(v) - min(v)

    @property
    def spread_cl_t(self) -> float:
        v = [t.best_cl_t for t in self.trials]
        return max(v) - min(v)

    @property
    def pooled_delta_cl_p(self) -> np.ndarray:
        return np.concatenate([t.report.delta_cl_p for t in self.trials])

    @property
    def pooled_delta_cl_t(self) -> np.ndarray:
        return np.concatenate([t.report.delta_cl_t for t in self.trials])


def realization_study(master: LabeledDataset, n: int, spec: DesignSpaceSpec, oracle: Oracle,
                      repeats: int = 20, k: int = 18, n_search: int = 1_000_000, seed: int = 0,
                      pool_size: int = DEFAULT_POOL, hp_cls: nn.Hyperparams = nn.CLASSIFIER,
                      hp_reg: nn.Hyperparams | None = None, threshold: float = 0.5,
                      search_seed: int | None = None, threads: int = 1) -> RealizationStudy:
    """Train ``repeats`` models on independent subsets of size ``n``, search
    with each and confirm its top ``k``. Trials are sorted by best prediction."""
    if n > len(master):
        raise ValueError(f"n = {n} exceeds master data set size {len(master)}")
    hp_reg = hp_reg or regressor_hyperparams(n)
    search_seed = seed if search_seed is None else search_seed
    trials = []
    for t in range(repeats):
        base = trial_seed(seed, n, t)
        ds = master if n == len(master) else subsample(master, n, trial_seed(base, 1))
        ds = partition(ds, trial_seed(base, 2))
        train_seed = trial_seed(base, 3) % 2**31
        run = train_two_stage(ds, hp_cls.with_seed(train_seed), hp_reg.with_seed(train_seed + 1), threshold)
        result = scan(run.model, spec, n_search, search_seed, pool_size, threads)
        rep = confirm_top_k(result, oracle, k)
        trials.append(RealizationTrial(t, base, float(rep.cl_p[0]), float(rep.cl_t[0]), rep))
        log.info("realization %d: cl_p(D1)=%.4g cl_t(D1)=%.4g", t, rep.cl_p[0], rep.cl_t[0])
    trials.sort(key=lambda r: (r.best_cl_p, r.trial))
    return RealizationStudy(trials)
