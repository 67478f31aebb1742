import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanfopt import kernels
from nanfopt.geometry import SIN45, WALL, default_dataset_grid, default_search_space
from nanfopt.nn import init_model

needs_compiled = pytest.mark.skipif(kernels.compiled is None, reason="compiled backend not built")


def random_designs(n, seed):
    rng = np.random.default_rng(seed)
    return np.ascontiguousarray(np.column_stack([
        rng.uniform(15, 65, n), rng.uniform(20, 60, n), rng.uniform(0, 0.5, n), rng.uniform(0.5, 40, n),
    ]))


@needs_compiled
def test_validate_codes_identical():
    d = random_designs(50_000, 1)
    consts = default_dataset_grid().rule_constants()
    assert np.array_equal(kernels.compiled.validate_codes(d, *consts), kernels.fallback.validate_codes(d, *consts))


@needs_compiled
def test_featurize_identical():
    d = random_designs(20_000, 2)
    assert np.array_equal(kernels.compiled.featurize(d, SIN45, WALL), kernels.fallback.featurize(d, SIN45, WALL))


@needs_compiled
def test_expand_valid_identical():
    spec = default_search_space()
    rng = np.random.default_rng(3)
    dc, dp = rng.uniform(20, 31, 500), rng.uniform(25.8, 54.3, 500)
    args = (dc, dp, spec.alpha.grid(), spec.nest_fraction.grid(), *spec.rule_constants())
    a, b = kernels.compiled.expand_valid(*args), kernels.fallback.expand_valid(*args)
    assert a.shape[0] > 0
    assert np.array_equal(a, b)


@needs_compiled
@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 300), st.integers(0, 2**31))
def test_mlp_logits_identical(h1, h2, rows, seed):
    m = init_model((6, h1, h2, 1), "linear", seed, out_bias=0.3)
    x = np.random.default_rng(seed).standard_normal((rows, 6))
    assert np.array_equal(
        kernels.compiled.mlp_logits(x, m.weights, m.biases),
        kernels.fallback.mlp_logits(x, m.weights, m.biases),
    )


@pytest.mark.parametrize("name", sorted(kernels.available()))
def test_mlp_rows_independent_of_batch(name):
    mod = kernels.available()[name]
    m = init_model((6, 130, 38, 1), "linear", 4)
    x = np.random.default_rng(0).standard_normal((301, 6))
    whole = mod.mlp_logits(x, m.weights, m.biases)
    parts = np.concatenate([mod.mlp_logits(np.ascontiguousarray(x[i:i + 7]), m.weights, m.biases)
                            for i in range(0, 301, 7)])
    single = np.array([mod.mlp_logits(np.ascontiguousarray(x[i:i + 1]), m.weights, m.biases)[0]
                       for i in range(301)])
    assert np.array_equal(whole, parts)
    assert np.array_equal(whole, single)


def test_use_switches_backend():
    before = kernels.backend
    try:
        kernels.use("numpy")
        assert kernels.backend is kernels.fallback
        with pytest.raises(ValueError):
            kernels.use("fortran")
    finally:
        kernels.backend = before


def test_env_forces_fallback():
    code = "from nanfopt import kernels; print(kernels.backend.NAME)"
    env = dict(os.environ, NANF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@needs_compiled
def test_compiled_is_default():
    env = {k: v for k, v in os.environ.items() if k != "NANF_PURE_PYTHON"}
    code = "from nanfopt import kernels; print(kernels.backend.NAME)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "cython"
