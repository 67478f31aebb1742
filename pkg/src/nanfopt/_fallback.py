"""Pure numpy implementations of the hot kernels.

Every expression mirrors ``_kernels.pyx`` operation for operation so both
backends return bit-identical arrays. Dense layers accumulate over the input
dimension one term at a time instead of calling BLAS, which keeps each row's
result independent of batch size and chunking.
"""
import numpy as np

NAME = "numpy"


def _rule_codes(d_core, d_cap, alpha, d_nest, sin45, wall, f_min, g_min, g_upper):
    wall2 = 2.0 * wall
    om = 1 - alpha
    gap = sin45 * d_core + (sin45 - 1) * (d_cap + wall2)
    air = om * d_cap - d_nest - wall * (1 + 2 * alpha)
    codes = np.zeros(d_core.shape, dtype=np.int8)
    codes[air <= 0] = 4
    codes[(gap < g_min) | (gap > g_upper)] = 3
    codes[d_nest <= f_min * om * d_cap] = 2
    codes[d_nest <= om * d_cap - d_core] = 1
    return codes


def validate_codes(designs, sin45, wall, f_min, g_min, g_upper):
    return _rule_codes(
        designs[:, 0], designs[:, 1], designs[:, 2], designs[:, 3],
        sin45, wall, f_min, g_min, g_upper,
    )


def featurize(designs, sin45, wall):
    wall2 = 2.0 * wall
    d_core, d_cap, alpha, d_nest = (designs[:, i] for i in range(4))
    om = 1 - alpha
    out = np.empty((designs.shape[0], 6))
    out[:, 0] = d_core + 2 * om * (d_cap + wall2)
    out[:, 1] = d_core
    out[:, 2] = d_nest
    out[:, 3] = d_cap
    out[:, 4] = d_cap * om
    out[:, 5] = sin45 * d_core + (sin45 - 1) * (d_cap + wall2)
    return out


def expand_valid(d_core, d_cap, alphas, fracs, sin45, wall, f_min, g_min, g_upper):
    n_a, n_f = alphas.size, fracs.size
    per_pair = n_a * n_f
    dc = np.repeat(d_core, per_pair)
    dp = np.repeat(d_cap, per_pair)
    a = np.tile(np.repeat(alphas, n_f), d_core.size)
    f = np.tile(fracs, n_a * d_core.size)
    dn = f * (1 - a) * dp
    keep = _rule_codes(dc, dp, a, dn, sin45, wall, f_min, g_min, g_upper) == 0
    return np.ascontiguousarray(np.column_stack((dc[keep], dp[keep], a[keep], dn[keep])))


def mlp_logits(x, weights, biases):
    h = x
    last = len(weights) - 1
    for layer, (w, b) in enumerate(zip(weights, biases)):
        out = np.empty((h.shape[0], w.shape[1]))
        out[:] = b
        for k in range(w.shape[0]):
            out += h[:, k:k + 1] * w[k]
        if layer < last:
            np.maximum(out, 0.0, out=out)
        h = out
    return h[:, 0].copy()
