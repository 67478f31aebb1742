"""Two-stage classifier/regressor model and its evaluation statistics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .geometry import featurize_batch
from .oracle import LabeledDataset, partition, subsample

log = logging.getLogger(__name__)

CL_CAP = 6.3
REGRESSOR_SWITCH_N = 9000
MIN_ADVISED_N = 1600
KDE_POINTS = 512


def regressor_hyperparams(n: int, switch_n: int = REGRESSOR_SWITCH_N,
                          large: nn.Hyperparams = nn.REGRESSOR_1,
                          small: nn.Hyperparams = nn.REGRESSOR_2) -> nn.Hyperparams:
    """Regressor 2 settings for ``n <= switch_n``, regressor 1 above."""
    return small if n <= switch_n else large


def trial_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class TwoStageModel:
    classifier: nn.MlpModel
    regressor: nn.MlpModel
    threshold: float = 0.5
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.classifier.head != "sigmoid" or self.regressor.head != "linear":
            raise ValueError("classifier needs a sigmoid head and regressor a linear head")

    @property
    def logit_threshold(self) -> float:
        return math.log(self.threshold / (1 - self.threshold))

    def accepts(self, features: np.ndarray, chunk: int | None = None) -> np.ndarray:
        # compare on the logit scale: exact and independent of the sigmoid implementation
        return self.classifier.logits(features, chunk) >= self.logit_threshold

    def predict_log_cl(self, features: np.ndarray, chunk: int | None = None) -> np.ndarray:
        """log10 of predicted loss; NaN where the classifier rejects the design."""
        features = np.asarray(features, dtype=np.float64).reshape(-1, 6)
        ok = self.accepts(features, chunk)
        out = np.full(features.shape[0], np.nan)
        if ok.any():
            out[ok] = self.regressor.logits(features[ok], chunk)
        return out

    def predict_cl(self, features: np.ndarray) -> np.ndarray:
        return 10.0 ** self.predict_log_cl(features)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.classifier.meta["threshold"] = self.threshold
        self.regressor.meta["provenance"] = self.provenance
        nn.save(self.classifier, directory / "classifier.nanfm")
        nn.save(self.regressor, directory / "regressor.nanfm")

    @classmethod
    def load(cls, directory: str | Path) -> "TwoStageModel":
        directory = Path(directory)
        clf = nn.load(directory / "classifier.nanfm", head="sigmoid")
        reg = nn.load(directory / "regressor.nanfm", head="linear")
        return cls(clf, reg, clf.meta.get("threshold", 0.5), reg.meta.get("provenance", {}))


@dataclass
class TwoStageTraining:
    model: TwoStageModel
    classifier_run: nn.TrainResult
    regressor_run: nn.TrainResult
    regressor_train_rows: int
    train_rows: int


def train_two_stage(ds: LabeledDataset, hp_cls: nn.Hyperparams, hp_reg: nn.Hyperparams,
                    threshold: float = 0.5, regressor_rows: str = "classifier") -> TwoStageTraining:
    """Train the classifier, freeze it, then fit the regressor on the train rows
    it accepts (``regressor_rows="truth"`` uses ground-truth labels instead)."""
    train_ds, val_ds = ds.split("train"), ds.split("val")
    if len(train_ds) == 0:
        raise ValueError("training split is empty")
    x_tr, x_va = featurize_batch(train_ds.designs), featurize_batch(val_ds.designs)
    y_tr = train_ds.interesting.astype(np.float64)
    y_va = val_ds.interesting.astype(np.float64)
    cls_run = nn.train(x_tr, y_tr, hp_cls, "bce", x_va, y_va)
    clf = cls_run.model
    logit_thr = math.log(threshold / (1 - threshold))
    if regressor_rows == "classifier":
        keep_tr = clf.logits(x_tr) >= logit_thr
        keep_va = clf.logits(x_va) >= logit_thr
    elif regressor_rows == "truth":
        keep_tr, keep_va = y_tr > 0, y_va > 0
    else:
        raise ValueError(f"unknown regressor_rows {regressor_rows!r}")
    if not keep_tr.any():
        raise ValueError("classifier accepts no training designs; regressor has nothing to fit")
    if not keep_va.any():
        raise ValueError("classifier accepts no validation designs; cannot select a checkpoint")
    reg_run = nn.train(
        x_tr[keep_tr], np.log10(train_ds.cl_fund[keep_tr]), hp_reg, "nmse",
        x_va[keep_va], np.log10(val_ds.cl_fund[keep_va]),
    )
    model = TwoStageModel(
        clf, reg_run.model, threshold,
        {"classifier": hp_cls.name, "regressor": hp_reg.name, "regressor_rows": regressor_rows},
    )
    return TwoStageTraining(model, cls_run, reg_run, int(keep_tr.sum()), len(train_ds))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def fnr(self) -> float | None:
        d = self.fn + self.tp
        return self.fn / d if d else None

    @property
    def fpr(self) -> float | None:
        d = self.fp + self.tn
        return self.fp / d if d else None


def confusion(predicted: np.ndarray, actual: np.ndarray) -> Confusion:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    return Confusion(
        tp=int(np.sum(predicted & actual)),
        fn=int(np.sum(~predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        tn=int(np.sum(~predicted & ~actual)),
    )


def classify(model: TwoStageModel, test: LabeledDataset) -> Confusion:
    return confusion(model.accepts(featurize_batch(test.designs)), test.interesting)


def relative_error(cl_true, cl_pred) -> np.ndarray:
    cl_true = np.asarray(cl_true, dtype=np.float64)
    return np.abs((cl_true - np.asarray(cl_pred, dtype=np.float64)) / cl_true)


def regressor_error(model: TwoStageModel, test: LabeledDataset, cl_cap: float = CL_CAP):
    """Relative errors over test designs with true loss <= ``cl_cap`` and their
    mean; the mean is None when no test design qualifies."""
    sel = test.cl_fund <= cl_cap
    if not sel.any():
        return np.empty(0), None
    cl_p = 10.0 ** model.regressor.logits(featurize_batch(test.designs[sel]))
    xi = relative_error(test.cl_fund[sel], cl_p)
    return xi, float(xi.mean())


@dataclass
class TrialReport:
    n: int
    trial: int
    subset_seed: int
    partition_seed: int
    train_seed: int
    confusion: Confusion
    xi: np.ndarray
    eta: float | None
    regressor: str
    regressor_train_rows: int
    train_rows: int
    classifier_curve: list = field(default_factory=list, repr=False)
    regressor_curve: list = field(default_factory=list, repr=False)

    @property
    def fnr(self):
        return self.confusion.fnr

    @property
    def fpr(self):
        return self.confusion.fpr


def run_trial(master: LabeledDataset, n: int, trial: int, subset_seed: int, partition_seed: int,
              train_seed: int, hp_cls: nn.Hyperparams = nn.CLASSIFIER,
              hp_reg: nn.Hyperparams | None = None, threshold: float = 0.5,
              regressor_rows: str = "classifier", cl_cap: float = CL_CAP):
    """Subsample (skipped when ``n`` is the full master), partition, train and
    evaluate on the test split. Returns ``(TrialReport, TwoStageTraining)``."""
    if n > len(master):
        raise ValueError(f"n = {n} exceeds master data set size {len(master)}")
    if n < MIN_ADVISED_N:
        log.warning("n = %d is below %d; small data sets tend to overfit or not converge", n, MIN_ADVISED_N)
    ds = master if n == len(master) else subsample(master, n, subset_seed)
    ds = partition(ds, partition_seed)
    hp_reg = hp_reg or regressor_hyperparams(n)
    run = train_two_stage(
        ds, hp_cls.with_seed(train_seed), hp_reg.with_seed(train_seed + 1), threshold, regressor_rows
    )
    test = ds.split("test")
    conf = classify(run.model, test)
    xi, eta = regressor_error(run.model, test, cl_cap)
    report = TrialReport(
        n, trial, subset_seed, partition_seed, train_seed, conf, xi, eta, hp_reg.name,
        run.regressor_train_rows, run.train_rows,
        run.classifier_run.curves(), run.regressor_run.curves(),
    )
    return report, run


@dataclass
class KdeCurve:
    x: np.ndarray
    density: np.ndarray
    bandwidth: float
    raw_mass: float  # trapezoid mass before renormalization onto the grid


def silverman_bandwidth(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    sd = samples.std(ddof=1)
    q75, q25 = np.percentile(samples, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * samples.size ** (-0.2)


def kde_density(samples, x, bandwidth: float) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    u = (np.asarray(x, dtype=np.float64)[:, None] - samples[None, :]) / bandwidth
    return np.exp(-0.5 * u * u).sum(axis=1) / (samples.size * bandwidth * math.sqrt(2 * math.pi))


def kde(samples, bandwidth: float | None = None, points: int = KDE_POINTS) -> KdeCurve:
    """Gaussian KDE on ``points`` abscissae spanning [0, 1.1 max], renormalized
    to unit trapezoid mass over that grid."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 2:
        raise ValueError("kde needs at least two samples")
    if np.all(samples == samples[0]):
        raise ValueError("all samples identical; bandwidth is degenerate")
    h = silverman_bandwidth(samples) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth is degenerate")
    x = np.linspace(0.0, samples.max() * 1.1, points)
    dens = kde_density(samples, x, h)
    mass = float(np.trapezoid(dens, x))
    return KdeCurve(x, dens / mass, h, mass)


@dataclass
class SizeAggregate:
    n: int
    trials: int
    fnr: float | None
    fpr: float | None
    mean_xi: float | None
    std_xi: float | None
    xi_trials: int
    pooled_fnr: float | None
    pooled_fpr: float | None
    kde: KdeCurve | None


@dataclass
class SizeStudyReport:
    trials: list[TrialReport]
    sizes: list[SizeAggregate]


def _mean_defined(values):
    vals = [v for v in values if v is not None]
    return (float(np.mean(vals)) if vals else None), vals


def aggregate(reports: list[TrialReport]) -> SizeAggregate:
    """Per-size aggregates: rates are the mean of per-trial rates; mean xi is
    the mean of per-trial eta over trials where it is defined."""
    n = reports[0].n
    fnr, _ = _mean_defined([r.fnr for r in reports])
    fpr, _ = _mean_defined([r.fpr for r in reports])
    mean_xi, etas = _mean_defined([r.eta for r in reports])
    std_xi = float(np.std(etas)) if etas else None
    total = Confusion(*(sum(getattr(r.confusion, f) for r in reports) for f in ("tp", "fn", "fp", "tn")))
    pooled = np.concatenate([r.xi for r in reports]) if reports else np.empty(0)
    curve = None
    if pooled.size >= 2 and not np.all(pooled == pooled[0]):
        curve = kde(pooled)
    return SizeAggregate(n, len(reports), fnr, fpr, mean_xi, std_xi, len(etas), total.fnr, total.fpr, curve)


def run_size_study(master: LabeledDataset, sizes, trials: int = 10, seed: int = 0,
                   seeds: list[int] | None = None, hp_reg_for=None, **trial_kwargs) -> SizeStudyReport:
    """For ``n == len(master)`` trials vary only the partition; otherwise each
    trial draws its own subset. ``seeds`` (one per trial) overrides the
    derived per-trial seeds; ``hp_reg_for(n)`` picks regressor settings."""
    sizes = sorted(int(n) for n in sizes)
    if sizes and sizes[-1] > len(master):
        raise ValueError(f"size {sizes[-1]} exceeds master data set size {len(master)}")
    if seeds is not None and len(seeds) != trials:
        raise ValueError("need one seed per trial")
    all_reports, aggregates = [], []
    for n in sizes:
        per_n = []
        for t in range(trials):
            base = seeds[t] if seeds is not None else trial_seed(seed, n, t)
            report, _ = run_trial(
                master, n, t,
                subset_seed=trial_seed(base, 1), partition_seed=trial_seed(base, 2),
                train_seed=trial_seed(base, 3) % 2**31,
                **({"hp_reg": hp_reg_for(n)} if hp_reg_for else {}), **trial_kwargs,
            )
            log.info("n=%d trial=%d fnr=%s fpr=%s eta=%s", n, t, report.fnr, report.fpr, report.eta)
            per_n.append(report)
        all_reports.extend(per_n)
        aggregates.append(aggregate(per_n))
    return SizeStudyReport(all_reports, aggregates)


def std_best_k(losses) -> float:
    """Sample standard deviation (divisor k - 1)."""
    x = np.asarray(losses, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two losses")
    return float(math.sqrt(np.sum((x - x.mean()) ** 2) / (x.size - 1)))


def delta_cl(losses) -> np.ndarray:
    """Loss of the first (best-predicted) design minus each design's loss."""
    x = np.asarray(losses, dtype=np.float64)
    return x[0] - x
