"""Dense ReLU networks trained with full-batch Adam.

Training uses BLAS matrix products. Inference (:meth:`MlpModel.predict_batch`)
goes through the kernel backend, whose per-row results do not depend on how
the batch is chunked.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import Design, DerivedGeometry

HEADS = ("sigmoid", "linear")
# forward/backward arithmetic during training; master weights and Adam moments stay float64
TRAIN_DTYPE = np.float32
OBJECTIVES = {"bce": "sigmoid", "nmse": "linear"}
PROB_CLAMP = 1e-12

MAGIC = b"NANFMLP\x00"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class Hyperparams:
    hidden: tuple[int, int]
    lr: float
    epochs: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")

    def with_seed(self, seed: int) -> "Hyperparams":
        return Hyperparams(**{**asdict(self), "seed": seed})


CLASSIFIER = Hyperparams((70, 50), 1e-3, 5000, name="classifier")
REGRESSOR_1 = Hyperparams((128, 32), 1e-3, 5000, name="regressor_1")
REGRESSOR_2 = Hyperparams((130, 38), 1e-4, 10000, name="regressor_2")


def featurize(d: Design, geom: DerivedGeometry) -> np.ndarray:
    """[d_clad, d_core, d_nest, d_cap, d_cap*(1-alpha), gap]"""
    return np.array([geom.d_clad, d.d_core, d.d_nest, d.d_cap, d.d_cap * (1 - d.alpha), geom.gap])


def sigmoid(z):
    """Logistic function, overflow-free; keeps floating dtype of ``z``."""
    z = np.asarray(z)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_loss(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    p = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def nmse_loss(preds, targets) -> float:
    """Mean squared error normalized by the population variance of the targets."""
    y = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if y.shape != t.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {t.shape}")
    if t.size == 0:
        raise ValueError("nmse of an empty set")
    var = np.mean((t - t.mean()) ** 2)
    if not var > 0:
        raise ValueError("target variance is zero; NMSE undefined")
    return float(np.mean((t - y) ** 2) / var)


@dataclass
class MlpModel:
    head: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean: np.ndarray
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        self.std = np.ascontiguousarray(self.std, dtype=np.float64)
        sizes = self.sizes
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
        if sizes[-1] != 1:
            raise ValueError("output layer must have a single neuron")
        if self.mean.shape != (sizes[0],) or self.std.shape != (sizes[0],):
            raise ValueError("normalization statistics do not match the input size")
        if not np.all(self.std > 0):
            raise ValueError("normalization std entries must be positive")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def logits(self, xs: np.ndarray, chunk: int | None = None) -> np.ndarray:
        """Raw output neuron for raw (unnormalized) features."""
        xs = np.asarray(xs, dtype=np.float64).reshape(-1, self.sizes[0])
        if chunk is None or xs.shape[0] <= chunk:
            xn = np.ascontiguousarray(self.normalize(xs))
            return kernels.backend.mlp_logits(xn, self.weights, self.biases)
        parts = [self.logits(xs[i:i + chunk]) for i in range(0, xs.shape[0], chunk)]
        return np.concatenate(parts)

    def predict_batch(self, xs: np.ndarray, chunk: int | None = None) -> np.ndarray:
        """Probabilities (sigmoid head) or log10 loss (linear head)."""
        z = self.logits(xs, chunk)
        return sigmoid(z) if self.head == "sigmoid" else z

    def forward(self, x: np.ndarray) -> float:
        return float(self.predict_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.head,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.mean.copy(),
            self.std.copy(),
            json.loads(json.dumps(self.meta)),
        )


def init_model(sizes, head: str, seed: int, mean=None, std=None, out_bias: float = 0.0) -> MlpModel:
    """Glorot-uniform weights, zero biases (output bias set to ``out_bias``)."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    biases[-1][:] = out_bias
    n_in = sizes[0]
    return MlpModel(
        head,
        weights,
        biases,
        np.zeros(n_in) if mean is None else mean,
        np.ones(n_in) if std is None else std,
    )


def _forward_cache(weights, biases, xn):
    """Activations per layer (input first); the last entry is the raw output."""
    acts = [xn]
    h = xn
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w
        h += b
        if i < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    return acts


def _cast(arrays, dtype):
    return arrays if dtype is None else [a.astype(dtype) for a in arrays]


def loss_and_grads(model: MlpModel, xn: np.ndarray, target: np.ndarray, objective: str, dtype=None):
    """Loss and gradients (weights then biases) on already-normalized inputs.

    ``dtype`` casts the weights for the arithmetic (inputs are used as given).
    """
    weights = _cast(model.weights, dtype)
    acts = _forward_cache(weights, _cast(model.biases, dtype), xn)
    out = acts[-1][:, 0]
    n = out.shape[0]
    if objective == "bce":
        p = sigmoid(out)
        loss = bce_loss(p, target)
        delta = ((p - target) / n)[:, None]
    elif objective == "nmse":
        var = np.mean((target - target.mean()) ** 2)
        if not var > 0:
            raise ValueError("target variance is zero; NMSE undefined")
        resid = out - target
        loss = float(np.mean(resid**2) / var)
        delta = (2.0 * resid / (n * var))[:, None]
    else:
        raise ValueError(f"unknown objective {objective!r}")
    n_layers = len(model.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            # a single output column makes this an outer product; broadcasting beats BLAS there
            delta = delta * weights[i].T if delta.shape[1] == 1 else delta @ weights[i].T
            # ReLU derivative: activation > 0 exactly where the pre-activation is
            np.multiply(delta, acts[i] > 0, out=delta)
    return loss, gw + gb


def evaluate_loss(model: MlpModel, xn: np.ndarray, target: np.ndarray, objective: str, dtype=None) -> float:
    out = _forward_cache(_cast(model.weights, dtype), _cast(model.biases, dtype), xn)[-1][:, 0]
    if objective == "bce":
        return bce_loss(sigmoid(out), target)
    return nmse_loss(out, target)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam update of ``params``; returns the new state."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient lists differ in length")
    t = state.t + 1
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return AdamState(state.m, state.v, t)


@dataclass
class TrainResult:
    model: MlpModel
    train_loss: np.ndarray
    val_loss: np.ndarray
    best_epoch: int

    def curves(self) -> list[tuple[int, float, float]]:
        return [(i + 1, float(a), float(b)) for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss))]


def feature_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[~(std > 0)] = 1.0
    return mean, std


def train(x, y, hp: Hyperparams, objective: str, x_val, y_val, dtype=TRAIN_DTYPE) -> TrainResult:
    """Full-batch Adam for ``hp.epochs`` epochs; returns the weights with the
    lowest validation loss seen (losses are recorded before each update)."""
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if objective == "nmse":
        for name, t in (("training", y), ("validation", y_val)):
            if not np.var(t) > 0:
                raise ValueError(f"{name} target variance is zero; NMSE undefined")
    mean, std = feature_stats(x)
    sizes = (x.shape[1], *hp.hidden, 1)
    out_bias = float(y.mean()) if objective == "nmse" else 0.0
    model = init_model(sizes, OBJECTIVES[objective], hp.seed, mean, std, out_bias)
    xn = model.normalize(x).astype(dtype)
    xn_val = model.normalize(x_val).astype(dtype)
    y_work, y_val_work = y.astype(dtype), y_val.astype(dtype)
    params = model.params()
    state = AdamState.zeros_like(params)
    train_curve = np.empty(hp.epochs)
    val_curve = np.empty(hp.epochs)
    best = (math.inf, None, -1)
    # overflow is caught below as divergence; numpy's own warnings add nothing
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(hp.epochs):
            loss, grads = loss_and_grads(model, xn, y_work, objective, dtype)
            val = evaluate_loss(model, xn_val, y_val_work, objective, dtype)
            if not (math.isfinite(loss) and math.isfinite(val)):
                raise TrainingDiverged(epoch + 1, loss if not math.isfinite(loss) else val)
            train_curve[epoch] = loss
            val_curve[epoch] = val
            if val < best[0]:
                best = (val, [p.copy() for p in params], epoch + 1)
            state = adam_step(params, grads, state, hp.lr, hp.beta1, hp.beta2, hp.eps)
    n_layers = len(model.weights)
    best_params = best[1]
    result = MlpModel(
        model.head,
        best_params[:n_layers],
        best_params[n_layers:],
        mean,
        std,
        {
            "hyperparams": hp.name,
            "hidden": list(hp.hidden),
            "lr": hp.lr,
            "seed": hp.seed,
            "epochs_run": hp.epochs,
            "best_epoch": best[2],
            "best_val_loss": best[0],
            "final_train_loss": float(train_curve[-1]),
            "final_val_loss": float(val_curve[-1]),
            "objective": objective,
        },
    )
    return TrainResult(result, train_curve, val_curve, best[2])


# model files -------------------------------------------------------------

def dumps(m: MlpModel) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<IB", FORMAT_VERSION, HEADS.index(m.head)),
        struct.pack("<I", len(m.sizes)),
        struct.pack(f"<{len(m.sizes)}I", *m.sizes),
        m.mean.astype("<f8").tobytes(),
        m.std.astype("<f8").tobytes(),
    ]
    for w, b in zip(m.weights, m.biases):
        parts.append(w.astype("<f8").tobytes())
        parts.append(b.astype("<f8").tobytes())
    meta = json.dumps(m.meta, sort_keys=True, separators=(",", ":")).encode()
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(data: bytes, head: str | None = None) -> MlpModel:
    if len(data) < len(MAGIC) + 32 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic or truncated)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("model file is corrupt (checksum mismatch)")
    pos = len(MAGIC)
    version, head_code = struct.unpack_from("<IB", body, pos)
    pos += 5
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    file_head = HEADS[head_code]
    if head is not None and head != file_head:
        raise ModelFormatError(f"model head is {file_head!r}, expected {head!r}")
    (n_sizes,) = struct.unpack_from("<I", body, pos)
    pos += 4
    sizes = struct.unpack_from(f"<{n_sizes}I", body, pos)
    pos += 4 * n_sizes

    def take(count):
        nonlocal pos
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    mean = take(sizes[0])
    std = take(sizes[0])
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(take(a * b).reshape(a, b))
        biases.append(take(b))
    (meta_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    meta = json.loads(body[pos:pos + meta_len].decode())
    if pos + meta_len != len(body):
        raise ModelFormatError("model file has trailing bytes")
    return MlpModel(file_head, weights, biases, mean, std, meta)


def save(m: MlpModel, path: str | Path) -> None:
    Path(path).write_bytes(dumps(m))


def load(path: str | Path, head: str | None = None) -> MlpModel:
    return loads(Path(path).read_bytes(), head)
