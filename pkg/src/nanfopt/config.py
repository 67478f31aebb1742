"""Run configuration: INI-style sections of flat ``key = value`` pairs.

Grid axes are written ``min:step:max``; continuous ranges ``min:max``.
Environment variables ``NANF_<SECTION>__<KEY>`` override file values, e.g.
``NANF_SEARCH__N_TARGET=100000``.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .geometry import DesignSpaceSpec, Range, default_dataset_grid, default_search_space
from .nn import CLASSIFIER, REGRESSOR_1, REGRESSOR_2, Hyperparams
from .oracle import CsvOracle, Oracle, SurrogateConstants, SurrogateOracle
from .pipeline import REGRESSOR_SWITCH_N

ENV_PREFIX = "NANF_"
# left out of the config hash: no influence on results, or a per-invocation
# choice that the producing command records in its own manifest
UNHASHED = {("run", "out"), ("run", "threads"), ("pipeline", "train_n")}


class ConfigError(ValueError):
    pass


def _fmt_range(r: Range) -> str:
    if r.step is None:
        return f"{r.min!r}:{r.max!r}"
    return f"{r.min!r}:{r.step!r}:{r.max!r}"


def _parse_range(text: str) -> Range:
    parts = [float(p) for p in text.split(":")]
    if len(parts) == 2:
        return Range(parts[0], parts[1])
    if len(parts) == 3:
        return Range(parts[0], parts[2], parts[1])
    raise ConfigError(f"bad range {text!r}; expected min:max or min:step:max")


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


@dataclass(frozen=True)
class OracleConfig:
    mode: str = "surrogate"
    csv_path: str = ""
    constants: SurrogateConstants = field(default_factory=SurrogateConstants)
    wavelength_um: float = 1.4

    def __post_init__(self):
        if self.mode not in ("surrogate", "csv"):
            raise ConfigError(f"oracle mode must be 'surrogate' or 'csv', got {self.mode!r}")
        if self.mode == "csv" and not self.csv_path:
            raise ConfigError("oracle mode 'csv' needs csv_path")

    def build(self) -> Oracle:
        if self.mode == "csv":
            return CsvOracle(self.csv_path)
        return SurrogateOracle(self.constants)


@dataclass(frozen=True)
class RunConfig:
    oracle: OracleConfig = field(default_factory=OracleConfig)
    dataset_grid: DesignSpaceSpec = field(default_factory=default_dataset_grid)
    search_space: DesignSpaceSpec = field(default_factory=default_search_space)
    dataset_source: str = "grid"
    floor: float = 1.0
    classifier: Hyperparams = CLASSIFIER
    regressor_1: Hyperparams = REGRESSOR_1
    regressor_2: Hyperparams = REGRESSOR_2
    regressor_switch_n: int = REGRESSOR_SWITCH_N
    threshold: float = 0.5
    regressor_rows: str = "classifier"
    cl_cap: float = 6.3
    sizes: tuple[int, ...] = (1819, 3000, 9000, 12732, 14550, 18188)
    trials: int = 10
    train_n: int = 2000
    n_target: int = 1_000_000
    pool_size: int = 10_000
    confirm_k: int = 18
    min_distance: float = 0.0
    subset_sizes: tuple[int, ...] = (1000, 10000, 100000, 300000, 600000)
    subset_repeats: int = 50
    realization_n: int = 1819
    realization_repeats: int = 20
    seed: int = 0
    threads: int = 1
    out: str = "runs/default"

    def __post_init__(self):
        if self.dataset_source not in ("grid", "table"):
            raise ConfigError("dataset source must be 'grid' or 'table'")
        if self.dataset_source == "table" and self.oracle.mode != "csv":
            raise ConfigError("dataset source 'table' requires the csv oracle")
        if self.regressor_rows not in ("classifier", "truth"):
            raise ConfigError("regressor_rows must be 'classifier' or 'truth'")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")

    def regressor_for(self, n: int) -> Hyperparams:
        return self.regressor_2 if n <= self.regressor_switch_n else self.regressor_1

    # serialization -------------------------------------------------------

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser(interpolation=None)
        o = self.oracle
        cp["oracle"] = {"mode": o.mode, "csv_path": o.csv_path, "wavelength_um": repr(o.wavelength_um)}
        cp["surrogate"] = {f.name: repr(getattr(o.constants, f.name)) for f in fields(SurrogateConstants)}
        for name in ("dataset_grid", "search_space"):
            s: DesignSpaceSpec = getattr(self, name)
            cp[name] = {
                "d_core": _fmt_range(s.d_core),
                "d_cap": _fmt_range(s.d_cap),
                "alpha": _fmt_range(s.alpha),
                "nest_fraction": _fmt_range(s.nest_fraction),
                "g_min": repr(s.g_min),
                "g_max": repr(s.g_max),
                "gap_tol": repr(s.gap_tol),
                "f_min": repr(s.f_min),
                "f_max": repr(s.f_max),
            }
        cp["dataset"] = {"source": self.dataset_source, "floor": repr(self.floor)}
        for name in ("classifier", "regressor_1", "regressor_2"):
            hp: Hyperparams = getattr(self, name)
            cp[name] = {
                "hidden": ", ".join(map(str, hp.hidden)),
                "lr": repr(hp.lr),
                "epochs": str(hp.epochs),
                "beta1": repr(hp.beta1),
                "beta2": repr(hp.beta2),
                "eps": repr(hp.eps),
            }
        cp["pipeline"] = {
            "threshold": repr(self.threshold),
            "regressor_switch_n": str(self.regressor_switch_n),
            "regressor_rows": self.regressor_rows,
            "cl_cap": repr(self.cl_cap),
            "train_n": str(self.train_n),
        }
        cp["study"] = {
            "sizes": ", ".join(map(str, self.sizes)),
            "trials": str(self.trials),
            "realization_n": str(self.realization_n),
            "realization_repeats": str(self.realization_repeats),
        }
        cp["search"] = {
            "n_target": str(self.n_target),
            "pool_size": str(self.pool_size),
            "confirm_k": str(self.confirm_k),
            "min_distance": repr(self.min_distance),
            "subset_sizes": ", ".join(map(str, self.subset_sizes)),
            "subset_repeats": str(self.subset_repeats),
        }
        cp["run"] = {"seed": str(self.seed), "threads": str(self.threads), "out": self.out}
        return cp

    def to_ini(self) -> str:
        buf = io.StringIO()
        self.to_parser().write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        cp = self.to_parser()
        for section, key in UNHASHED:
            cp.remove_option(section, key)
        buf = io.StringIO()
        cp.write(buf)
        return hashlib.sha256(buf.getvalue().encode()).hexdigest()

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser) -> "RunConfig":
        d = cls()

        def get(section, key, default, conv=str):
            if cp.has_option(section, key):
                raw = cp.get(section, key)
                try:
                    return conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
            return default

        consts = SurrogateConstants(**{
            f.name: get("surrogate", f.name, getattr(d.oracle.constants, f.name), float)
            for f in fields(SurrogateConstants)
        })
        oracle = OracleConfig(
            mode=get("oracle", "mode", d.oracle.mode),
            csv_path=get("oracle", "csv_path", d.oracle.csv_path),
            constants=consts,
            wavelength_um=get("oracle", "wavelength_um", d.oracle.wavelength_um, float),
        )

        def spec(section, default: DesignSpaceSpec) -> DesignSpaceSpec:
            return DesignSpaceSpec(
                d_core=get(section, "d_core", default.d_core, _parse_range),
                d_cap=get(section, "d_cap", default.d_cap, _parse_range),
                alpha=get(section, "alpha", default.alpha, _parse_range),
                nest_fraction=get(section, "nest_fraction", default.nest_fraction, _parse_range),
                g_min=get(section, "g_min", default.g_min, float),
                g_max=get(section, "g_max", default.g_max, float),
                gap_tol=get(section, "gap_tol", default.gap_tol, float),
                f_min=get(section, "f_min", default.f_min, float),
                f_max=get(section, "f_max", default.f_max, float),
            )

        def hyper(section, default: Hyperparams) -> Hyperparams:
            return replace(
                default,
                hidden=tuple(get(section, "hidden", list(default.hidden), _ints)),
                lr=get(section, "lr", default.lr, float),
                epochs=get(section, "epochs", default.epochs, int),
                beta1=get(section, "beta1", default.beta1, float),
                beta2=get(section, "beta2", default.beta2, float),
                eps=get(section, "eps", default.eps, float),
            )

        return cls(
            oracle=oracle,
            dataset_grid=spec("dataset_grid", d.dataset_grid),
            search_space=spec("search_space", d.search_space),
            dataset_source=get("dataset", "source", d.dataset_source),
            floor=get("dataset", "floor", d.floor, float),
            classifier=hyper("classifier", d.classifier),
            regressor_1=hyper("regressor_1", d.regressor_1),
            regressor_2=hyper("regressor_2", d.regressor_2),
            regressor_switch_n=get("pipeline", "regressor_switch_n", d.regressor_switch_n, int),
            threshold=get("pipeline", "threshold", d.threshold, float),
            regressor_rows=get("pipeline", "regressor_rows", d.regressor_rows),
            cl_cap=get("pipeline", "cl_cap", d.cl_cap, float),
            train_n=get("pipeline", "train_n", d.train_n, int),
            sizes=tuple(get("study", "sizes", list(d.sizes), _ints)),
            trials=get("study", "trials", d.trials, int),
            realization_n=get("study", "realization_n", d.realization_n, int),
            realization_repeats=get("study", "realization_repeats", d.realization_repeats, int),
            n_target=get("search", "n_target", d.n_target, int),
            pool_size=get("search", "pool_size", d.pool_size, int),
            confirm_k=get("search", "confirm_k", d.confirm_k, int),
            min_distance=get("search", "min_distance", d.min_distance, float),
            subset_sizes=tuple(get("search", "subset_sizes", list(d.subset_sizes), _ints)),
            subset_repeats=get("search", "subset_repeats", d.subset_repeats, int),
            seed=get("run", "seed", d.seed, int),
            threads=get("run", "threads", d.threads, int),
            out=get("run", "out", d.out),
        )

    @classmethod
    def from_ini(cls, text: str, env: dict | None = None) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        for name, value in (env or {}).items():
            if not name.startswith(ENV_PREFIX) or "__" not in name:
                continue
            section, key = name[len(ENV_PREFIX):].lower().split("__", 1)
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, key, value)
        return cls.from_parser(cp)

    @classmethod
    def load(cls, path: str | Path | None, env: dict | None = None) -> "RunConfig":
        env = dict(os.environ) if env is None else env
        text = "" if path is None else Path(path).read_text()
        cfg = cls.from_ini(text, env)
        if cfg.oracle.mode == "csv":
            csv_path = Path(cfg.oracle.csv_path)
            if not csv_path.is_absolute() and path is not None:
                csv_path = Path(path).parent / csv_path
            if not csv_path.exists():
                raise ConfigError(f"oracle csv_path does not exist: {csv_path}")
            cfg = replace(cfg, oracle=replace(cfg.oracle, csv_path=str(csv_path)))
        return cfg
