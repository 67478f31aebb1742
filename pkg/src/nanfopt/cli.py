"""``nanf`` command-line entry point.

All commands read one run config and write into one output directory::

    gen-dataset  -> dataset.csv
    train        -> models/, trial_report.csv, curves_*.csv
    study        -> size_*.csv, kde_n*.csv   or   realization*.csv
    search       -> topk.csv, histogram.csv, topk_exact.npy, predictions.npy
    confirm      -> confirmation.csv, confirmation_stats.csv, subset_study.csv
    report       -> report_summary.csv

Each command writes ``manifest_<command>.json``. Downstream commands refuse
inputs whose manifest was produced under a different config or whose files
changed since.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import nn, records
from .config import ConfigError, RunConfig
from .geometry import enumerate_grid
from .oracle import CsvOracle, OracleMiss, build_dataset
from .pipeline import TwoStageModel, run_size_study, run_trial, trial_seed
from .search import (
    SearchResult,
    TopKPool,
    confirm_top_k,
    hist_edges,
    realization_study,
    scan,
    subset_study,
)

log = logging.getLogger("nanfopt")

EXPECTED = {
    "gen-dataset": ["dataset.csv"],
    "train": ["models/classifier.nanfm", "models/regressor.nanfm", "trial_report.csv",
              "curves_classifier.csv", "curves_regressor.csv"],
    "study-size": ["size_trials.csv", "size_study.csv"],
    "study-realization": ["realization.csv", "realization_deltas.csv", "realization_stats.csv"],
    "search": ["topk.csv", "histogram.csv", "topk_exact.npy", "predictions.npy"],
    "confirm": ["confirmation.csv", "confirmation_stats.csv", "subset_study.csv"],
}
ORDER = ["gen-dataset", "train", "study-size", "study-realization", "search", "confirm"]


class CommandError(RuntimeError):
    pass


def _rel(out: Path, paths) -> list[Path]:
    return [out / p for p in paths]


def _check_outputs(out: Path, command: str, manifest: dict) -> None:
    for name, digest in manifest["outputs"].items():
        path = out / name
        if not path.exists():
            raise CommandError(f"{path} listed in the `{command}` manifest is missing")
        if records.file_hash(path) != digest:
            raise CommandError(f"{path} changed after `{command}` wrote it; rerun `{command}`")


def _upstream(out: Path, command: str, cfg_hash: str) -> dict:
    """Manifest of an upstream command, checked against the current config and disk."""
    try:
        m = records.read_manifest(out, command)
    except FileNotFoundError:
        raise CommandError(
            f"missing upstream artifact: run `nanf {command}` first (expected "
            f"{', '.join(str(out / f) for f in EXPECTED[command])})"
        ) from None
    if m["config_hash"] != cfg_hash:
        raise CommandError(
            f"manifest_{command.replace('-', '_')}.json was produced with a different config "
            f"({m['config_hash'][:12]} vs {cfg_hash[:12]}); rerun `nanf {command}`"
        )
    _check_outputs(out, command, m)
    return m


def _finish(out: Path, command: str, cfg: RunConfig, seeds: dict, inputs: list[str],
            outputs: list[Path], summary: dict | None = None) -> None:
    missing = [p for p in outputs if not p.exists()]
    if missing:
        raise CommandError(f"outputs not produced: {', '.join(map(str, missing))}")
    (out / "run_config.ini").write_text(cfg.to_ini())
    records.write_manifest(
        out, command, cfg.hash(), seeds,
        {name: out / name for name in inputs}, outputs, summary or {},
    )


# commands ----------------------------------------------------------------

def cmd_gen_dataset(cfg: RunConfig, out: Path, args) -> None:
    oracle = cfg.oracle.build()
    if cfg.dataset_source == "table":
        assert isinstance(oracle, CsvOracle)
        designs = oracle.designs()
    else:
        designs = enumerate_grid(cfg.dataset_grid)
    if designs.shape[0] == 0:
        raise CommandError("no valid designs: the dataset grid is empty after the validity rules")
    ds = build_dataset(designs, oracle, cfg.floor)
    if len(ds) == 0:
        raise CommandError(f"no valid designs: all {ds.dropped} designs fall below the floor {cfg.floor}")
    path = records.write_dataset(out / "dataset.csv", ds)
    summary = {"valid": int(designs.shape[0]), "dropped": ds.dropped, "rows": len(ds),
               "interesting": int(ds.interesting.sum())}
    print(f"valid {summary['valid']}  dropped {summary['dropped']}  "
          f"rows {summary['rows']}  interesting {summary['interesting']}")
    _finish(out, "gen-dataset", cfg, {}, [], [path], summary)


def _trial_seeds(cfg: RunConfig, n: int, trial: int) -> dict:
    base = trial_seed(cfg.seed, n, trial)
    return {"base": base, "subset": trial_seed(base, 1), "partition": trial_seed(base, 2),
            "train": trial_seed(base, 3) % 2**31}


def _load_master(out: Path, cfg: RunConfig):
    _upstream(out, "gen-dataset", cfg.hash())
    return records.read_dataset(out / "dataset.csv")


def cmd_train(cfg: RunConfig, out: Path, args) -> None:
    master = _load_master(out, cfg)
    n = cfg.train_n
    seeds = _trial_seeds(cfg, n, args.trial)
    hp_reg = cfg.regressor_for(n)
    report, run = run_trial(
        master, n, args.trial, seeds["subset"], seeds["partition"], seeds["train"],
        cfg.classifier, hp_reg, cfg.threshold, cfg.regressor_rows, cfg.cl_cap,
    )
    run.model.save(out / "models")
    outputs = _rel(out, EXPECTED["train"][:2])
    outputs.append(records.write_trials(out / "trial_report.csv", [report]))
    outputs.append(records.write_curves(out / "curves_classifier.csv", report.classifier_curve))
    outputs.append(records.write_curves(out / "curves_regressor.csv", report.regressor_curve))
    c = report.confusion
    print(f"n {n}  regressor {hp_reg.name}  fnr {records.fmt(c.fnr)}  fpr {records.fmt(c.fpr)}  "
          f"mean_xi {records.fmt(report.eta) or 'absent'} over {report.xi.size} designs")
    _finish(out, "train", cfg, seeds, ["dataset.csv"], outputs,
            {"n": n, "regressor": hp_reg.name, "fnr": c.fnr, "fpr": c.fpr, "eta": report.eta})


def cmd_study(cfg: RunConfig, out: Path, args) -> None:
    master = _load_master(out, cfg)
    outputs = []
    if args.kind == "size":
        rep = run_size_study(
            master, cfg.sizes, cfg.trials, cfg.seed,
            hp_cls=cfg.classifier, threshold=cfg.threshold,
            regressor_rows=cfg.regressor_rows, cl_cap=cfg.cl_cap,
            hp_reg_for=cfg.regressor_for,
        )
        outputs.append(records.write_trials(out / "size_trials.csv", rep.trials))
        outputs.append(records.write_size_study(out / "size_study.csv", rep.sizes))
        for agg in rep.sizes:
            if agg.kde is not None:
                outputs.append(records.write_kde(out / f"kde_n{agg.n}.csv", agg.kde))
        summary = {f"n{a.n}_{k}": getattr(a, k) for a in rep.sizes for k in ("fnr", "fpr", "mean_xi")}
        for a in rep.sizes:
            print(f"n {a.n}  fnr {records.fmt(a.fnr)}  fpr {records.fmt(a.fpr)}  "
                  f"mean_xi {records.fmt(a.mean_xi) or 'absent'} ({a.xi_trials}/{a.trials} trials)")
    else:
        study = realization_study(
            master, cfg.realization_n, cfg.search_space, cfg.oracle.build(),
            repeats=cfg.realization_repeats, k=cfg.confirm_k, n_search=cfg.n_target,
            seed=cfg.seed, pool_size=cfg.pool_size, hp_cls=cfg.classifier,
            hp_reg=cfg.regressor_for(cfg.realization_n), threshold=cfg.threshold,
            threads=cfg.threads,
        )
        outputs.append(records.write_rows(
            out / "realization.csv", ["order", "trial", "seed", "best_cl_p_db_km", "best_cl_t_db_km"],
            ([i + 1, t.trial, t.seed, t.best_cl_p, t.best_cl_t] for i, t in enumerate(study.trials)),
        ))
        outputs.append(records.write_rows(
            out / "realization_deltas.csv", ["trial", "rank", "delta_cl_p", "delta_cl_t"],
            ([t.trial, r + 1, p, q] for t in study.trials
             for r, (p, q) in enumerate(zip(t.report.delta_cl_p, t.report.delta_cl_t))),
        ))
        summary = {"spread_cl_p": study.spread_cl_p, "spread_cl_t": study.spread_cl_t}
        outputs.append(records.write_stats(out / "realization_stats.csv", summary))
        print(f"spread cl_p(D1) {records.fmt(study.spread_cl_p)}  spread cl_t(D1) {records.fmt(study.spread_cl_t)}")
    _finish(out, f"study-{args.kind}", cfg, {"seed": cfg.seed}, ["dataset.csv"], outputs, summary)


def cmd_search(cfg: RunConfig, out: Path, args) -> None:
    _upstream(out, "train", cfg.hash())
    model = TwoStageModel.load(out / "models")
    result = scan(model, cfg.search_space, cfg.n_target, cfg.seed, cfg.pool_size,
                  cfg.threads, keep_predictions=True)
    if len(result.pool) == 0:
        raise CommandError("the classifier rejected every sampled design; nothing to rank")
    pool = result.pool
    outputs = [
        records.write_topk(out / "topk.csv", result),
        records.write_histogram(out / "histogram.csv", result.hist_counts, hist_edges()),
    ]
    exact = np.column_stack((pool.designs, pool.cl_p, pool.index.astype(np.float64)))
    np.save(out / "topk_exact.npy", exact)
    np.save(out / "predictions.npy", result.predictions)
    outputs += _rel(out, ["topk_exact.npy", "predictions.npy"])
    summary = {"n_designs": result.n_designs, "n_accepted": result.n_accepted,
               "best_cl_p": result.best_cl_p}
    print(f"scanned {result.n_designs}  accepted {result.n_accepted}  best cl_p {records.fmt(result.best_cl_p)}")
    _finish(out, "search", cfg, {"search": cfg.seed},
            ["models/classifier.nanfm", "models/regressor.nanfm"], outputs, summary)


def _load_search(out: Path, cfg: RunConfig) -> SearchResult:
    m = _upstream(out, "search", cfg.hash())
    exact = np.load(out / "topk_exact.npy")
    pool = TopKPool(max(cfg.pool_size, exact.shape[0], 1))
    pool.designs = exact[:, :4].copy()
    pool.cl_p = exact[:, 4].copy()
    pool.index = exact[:, 5].astype(np.int64)
    s = m["summary"]
    return SearchResult(pool, np.empty(0, dtype=np.int64), s["n_designs"], s["n_accepted"],
                        cfg.seed, np.load(out / "predictions.npy"))


def cmd_confirm(cfg: RunConfig, out: Path, args) -> None:
    result = _load_search(out, cfg)
    rep = confirm_top_k(result, cfg.oracle.build(), cfg.confirm_k, cfg.min_distance)
    total = result.predictions.size
    sizes = sorted({m for m in cfg.subset_sizes if m < total} | {total})
    subsets = subset_study(result, sizes, cfg.subset_repeats, cfg.seed)
    stats = {
        "k": rep.k,
        "n_designs": result.n_designs,
        "n_accepted": result.n_accepted,
        "min_cl_p_db_km": float(rep.cl_p.min()),
        "min_cl_t_db_km": rep.min_cl_t,
        "argmin_cl_t_rank": int(np.argmin(rep.cl_t)) + 1,
        "std_cl_p": rep.std_cl_p,
        "std_cl_t": rep.std_cl_t,
    }
    outputs = [
        records.write_confirmation(out / "confirmation.csv", rep),
        records.write_stats(out / "confirmation_stats.csv", stats),
        records.write_rows(out / "subset_study.csv", ["m", "repeats", "mean_min_cl_p_db_km"],
                           ([m, 1 if m == total else cfg.subset_repeats, v] for m, v in subsets.items())),
    ]
    print(f"confirmed {rep.k}  min cl_p {records.fmt(stats['min_cl_p_db_km'])}  "
          f"min cl_t {records.fmt(rep.min_cl_t)}")
    _finish(out, "confirm", cfg, {"subset": cfg.seed},
            ["topk.csv", "topk_exact.npy", "predictions.npy"], outputs, stats)


def cmd_report(cfg: RunConfig, out: Path, args) -> None:
    cfg_hash = cfg.hash()
    found = sorted(out.glob("manifest_*.json")) if out.is_dir() else []
    if not found:
        lines = [f"  {c}: manifest_{c.replace('-', '_')}.json, " + ", ".join(EXPECTED[c]) for c in ORDER]
        raise CommandError(f"nothing to report in {out}; expected files:\n" + "\n".join(lines))
    rows = []
    for path in found:
        command = path.stem[len("manifest_"):].replace("_", "-")
        m = _upstream(out, command, cfg_hash)
        for name, digest in m["inputs"].items():
            if (out / name).exists() and records.file_hash(out / name) != digest:
                raise CommandError(f"{out / name} changed after `{command}` consumed it; rerun `{command}`")
        for key, value in sorted(m.get("summary", {}).items()):
            rows.append([command, key, value])
    p = records.write_rows(out / "report_summary.csv", ["command", "statistic", "value"], rows)
    for r in rows:
        print(f"{r[0]:<18} {r[1]:<20} {records.fmt(r[2])}")
    print(f"wrote {p}")


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "study": cmd_study,
    "search": cmd_search,
    "confirm": cmd_confirm,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config (INI); NANF_CONFIG if unset")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    common.add_argument("--threads", type=int, help="worker threads for the search scan")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="nanf", description="NANF design surrogate workflow", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-dataset", parents=[common], help="enumerate the grid and label it with the oracle")
    t = sub.add_parser("train", parents=[common], help="train one two-stage model and report on its test split")
    t.add_argument("--n", type=int, help="data set size (overrides [pipeline] train_n)")
    t.add_argument("--trial", type=int, default=0, help="trial index used to derive seeds")
    s = sub.add_parser("study", parents=[common], help="size study or realization study")
    s.add_argument("--kind", choices=("size", "realization"), default="size",
                   help="size: metrics versus data set size; realization: repeated train-and-search runs")
    sub.add_parser("search", parents=[common], help="scan the search space with the trained model")
    sub.add_parser("confirm", parents=[common], help="evaluate the best predictions with the oracle")
    sub.add_parser("report", parents=[common], help="verify manifests and collect summaries")
    return p


def resolve_config(args, env=None) -> RunConfig:
    env = dict(os.environ) if env is None else env
    path = args.config or (Path(env["NANF_CONFIG"]) if env.get("NANF_CONFIG") else None)
    # short global overrides; NANF_RUN__SEED style names are handled by the loader
    for short, key in (("NANF_SEED", "NANF_RUN__SEED"), ("NANF_OUT", "NANF_RUN__OUT"),
                       ("NANF_THREADS", "NANF_RUN__THREADS")):
        if short in env:
            env.setdefault(key, env[short])
    cfg = RunConfig.load(path, env)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out"] = str(args.out)
    if args.threads is not None:
        over["threads"] = args.threads
    if getattr(args, "n", None) is not None:
        over["train_n"] = args.n
    return replace(cfg, **over) if over else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        if args.command == "report":
            cmd_report(cfg, out, args)
            return 0
        with records.directory_lock(out):
            COMMANDS[args.command](cfg, out, args)
        return 0
    except nn.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CommandError, ConfigError, records.SchemaError, records.LockBusy, nn.ModelFormatError,
            OracleMiss, FileNotFoundError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
