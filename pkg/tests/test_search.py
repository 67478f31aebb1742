import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanfopt import kernels
from nanfopt.geometry import featurize_batch, default_search_space, sample_search_space
from nanfopt.oracle import SurrogateOracle
from nanfopt.search import (
    HIST_LOG_EDGES,
    TopKPool,
    confirm_top_k,
    hist_edges,
    realization_study,
    scan,
    select_top,
    subset_study,
)

SPEC = default_search_space()


def full_sort_reference(model, n, seed):
    """Every design, every prediction, sorted in one go."""
    designs = np.concatenate(list(sample_search_space(SPEC, n, seed)))
    x = featurize_batch(designs)
    acc = model.accepts(x)
    cl = 10.0 ** model.regressor.logits(x[acc])
    idx = np.flatnonzero(acc)
    keyed = sorted(zip(cl, map(tuple, designs[acc]), idx))
    return keyed, cl


@pytest.fixture(scope="module")
def result(fast_model):
    return scan(fast_model, SPEC, 30_000, seed=4, pool_size=500, keep_predictions=True)


def test_pool_equals_full_sort(fast_model, result):
    keyed, cl = full_sort_reference(fast_model, 30_000, 4)
    want = keyed[:500]
    assert [c for c, _, _ in want] == list(result.pool.cl_p)
    assert [i for _, _, i in want] == list(result.pool.index)
    assert result.n_accepted == cl.size
    assert np.array_equal(np.sort(result.predictions), np.sort(cl))


def test_histogram_mass_and_edges(result):
    assert result.hist_counts.sum() == result.n_accepted
    e = hist_edges()
    assert e.size == result.hist_counts.size + 1 == 803
    assert e[0] == 0 and np.isinf(e[-1]) and e[1] == pytest.approx(1e-3)
    assert HIST_LOG_EDGES[1] - HIST_LOG_EDGES[0] == pytest.approx(0.01)


def test_histogram_bins_match_reference(result):
    counts = np.histogram(np.log10(result.predictions), bins=np.r_[-np.inf, HIST_LOG_EDGES, np.inf])[0]
    # reference uses half-open [a, b) bins except the last; compare away from exact edges
    assert abs(counts - result.hist_counts).sum() <= 2 * np.isin(np.log10(result.predictions), HIST_LOG_EDGES).sum()


def test_scan_threads_and_chunks_identical(fast_model, result):
    other = scan(fast_model, SPEC, 30_000, seed=4, pool_size=500, threads=4, chunk=1000, keep_predictions=True)
    assert np.array_equal(other.pool.cl_p, result.pool.cl_p)
    assert np.array_equal(other.pool.designs, result.pool.designs)
    assert np.array_equal(other.pool.index, result.pool.index)
    assert np.array_equal(other.hist_counts, result.hist_counts)
    assert np.array_equal(other.predictions, result.predictions)


def test_scan_same_seed_same_result(fast_model, result):
    again = scan(fast_model, SPEC, 30_000, seed=4, pool_size=500)
    assert np.array_equal(again.pool.cl_p, result.pool.cl_p)
    assert again.predictions is None


@pytest.mark.skipif("cython" not in kernels.available(), reason="compiled backend not built")
def test_scan_backend_independent(fast_model, result):
    before = kernels.backend
    try:
        kernels.use("numpy")
        slow = scan(fast_model, SPEC, 30_000, seed=4, pool_size=500)
    finally:
        kernels.backend = before
    assert np.array_equal(slow.pool.cl_p, result.pool.cl_p)
    assert np.array_equal(slow.hist_counts, result.hist_counts)


def test_pool_only_accepted_and_sorted(fast_model, result):
    assert np.all(np.diff(result.pool.cl_p) >= 0)
    assert fast_model.accepts(featurize_batch(result.pool.designs)).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.lists(st.integers(1, 40), min_size=1, max_size=8), st.integers(0, 1000))
def test_pool_merge_property(capacity, chunk_sizes, seed):
    rng = np.random.default_rng(seed)
    pool = TopKPool(capacity)
    all_d, all_c, all_i = [], [], []
    start = 0
    for size in chunk_sizes:
        d = rng.integers(0, 3, (size, 4)).astype(float)
        c = rng.integers(0, 5, size).astype(float)  # many ties
        i = np.arange(start, start + size)
        start += size
        pool.offer(d, c, i)
        all_d.append(d), all_c.append(c), all_i.append(i)
    d, c, i = np.concatenate(all_d), np.concatenate(all_c), np.concatenate(all_i)
    ref = sorted(zip(c, map(tuple, d), i))[:capacity]
    assert list(zip(pool.cl_p, map(tuple, pool.designs), pool.index)) == ref


def test_pool_capacity_invariant():
    with pytest.raises(ValueError):
        TopKPool(0)


# confirmation ------------------------------------------------------------------

def test_confirm_top_k(result):
    rep = confirm_top_k(result, SurrogateOracle(), k=18)
    assert rep.k == 18
    assert np.array_equal(rep.designs, result.pool.designs[:18])
    t = SurrogateOracle().evaluate_batch(rep.designs)
    assert np.array_equal(rep.cl_t, t[0])
    assert rep.min_cl_t == rep.cl_t.min()
    assert np.all(rep.delta_cl_p <= 0) and rep.delta_cl_p[0] == 0
    assert rep.std_cl_p >= 0


def test_confirm_single(result):
    rep = confirm_top_k(result, SurrogateOracle(), k=1)
    assert rep.k == 1 and list(rep.delta_cl_t) == [0.0] and rep.std_cl_t is None


def test_select_top_min_distance(result):
    idx = select_top(result, 5, min_distance=2.0)
    d = result.pool.designs[idx]
    for a in range(5):
        for b in range(a):
            assert np.linalg.norm(d[a] - d[b]) >= 2.0
    assert list(idx) == sorted(idx)
    with pytest.raises(ValueError):
        select_top(result, 10_000)


# subset study ------------------------------------------------------------------

def test_subset_study(result):
    total = result.predictions.size
    out = subset_study(result, [10, 100, 1000, total], repeats=50, seed=1)
    vals = [out[m] for m in sorted(out)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert out[total] == result.pool.cl_p[0]
    again = subset_study(result, [10, 100], repeats=50, seed=1)
    assert again[10] == out[10]


def test_subset_study_singletons_average_to_mean(result):
    p = result.predictions
    est = subset_study(result, [1], repeats=20_000, seed=2)[1]
    se = p.std() / np.sqrt(20_000)
    assert abs(est - p.mean()) < 4 * se


def test_subset_study_errors(result, fast_model):
    with pytest.raises(ValueError):
        subset_study(result, [result.predictions.size + 1])
    bare = scan(fast_model, SPEC, 1000, seed=1, pool_size=10)
    with pytest.raises(ValueError, match="keep_predictions"):
        subset_study(bare, [10])


# realization study ---------------------------------------------------------------

def test_realization_study(small_master, fast_hp):
    st_ = realization_study(small_master, 300, SPEC, SurrogateOracle(), repeats=3, k=4, n_search=3000,
                            seed=2, pool_size=50, hp_cls=fast_hp[0], hp_reg=fast_hp[1])
    best = [t.best_cl_p for t in st_.trials]
    assert best == sorted(best)
    assert len({t.seed for t in st_.trials}) == 3
    assert st_.pooled_delta_cl_p.size == 12 and np.all(st_.pooled_delta_cl_p <= 0)
    assert st_.spread_cl_p == max(best) - min(best)
    assert st_.spread_cl_t >= 0


# extrapolation -----------------------------------------------------------------

@pytest.mark.slow
def test_extrapolates_below_a_binding_floor(master):
    """With a floor that removes the best training designs, the confirmed
    minimum still lands below it and close to the surrogate's global minimum."""
    from nanfopt import nn
    from nanfopt.oracle import build_dataset, partition, subsample
    from nanfopt.pipeline import regressor_hyperparams, train_two_stage

    floor = 12.0
    ds = build_dataset(master.designs, SurrogateOracle(), floor)
    assert ds.dropped > 0 and ds.cl_fund.min() >= floor
    split = partition(subsample(ds, 2000, 0), 1)
    model = train_two_stage(split, nn.CLASSIFIER, regressor_hyperparams(2000)).model
    rep = confirm_top_k(scan(model, SPEC, 200_000, seed=0, pool_size=1000), SurrogateOracle(), k=18)
    assert rep.min_cl_t < floor
    assert rep.min_cl_t <= 2 * 7.851  # dense brute-force minimum over the search domain
