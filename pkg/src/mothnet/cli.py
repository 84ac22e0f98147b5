"""``mothnet`` command-line front end.

Every command writes ``run.json`` (resolved config, seed, format version)
into ``--out`` next to its tables.  Tables are comma-separated with a header
row; floats are written with ``repr`` so reruns compare byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import ConfigError, RunConfig, parse_config
from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    emit_timecourses,
    instance_pools,
    knn_k,
    nearest_neighbor_baseline,
    run_stage_protocol,
    run_sweep,
)
from .network import generate_instance, load_instance, save_instance
from .sde import make_rng

COMMANDS = ("preprocess", "train", "evaluate", "sweep", "timecourse", "baseline")
INCOMPLETE_MARKER = "INCOMPLETE"
RESULT_COLUMNS = ["axis", "value", "instance", "seed", "baseline_softmax", "baseline_loglik",
                  "post_softmax", "post_loglik", "learning_focus", "snr", "knn"]

# Which figure's plot data a sweep axis produces.
FIGURE_FILES = {
    "n_train_per_class": "fig4_accuracy_vs_n.csv",
    "goal": "fig5_growth_rate.csv",
    "n_sniffs": "fig5_sniffs_noise.csv",
    "noise_amplitude_al": "fig5_sniffs_noise.csv",
    "sparsity": "fig6_sparsity.csv",
    "sparsity_fraction": "fig6_sparsity.csv",
}


class CommandError(RuntimeError):
    pass


# -- features --------------------------------------------------------------

def _raw_digest(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(paths):
        h.update(str(Path(p).name).encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def _raw_files(cfg: RunConfig) -> list[Path]:
    root = Path(cfg["data_dir"])
    if cfg["dataset"] == "omniglot":
        files = sorted(root.glob("*/*/*.png"))
    else:
        files = [p for p in sorted(root.glob("train-*-idx?-ubyte*"))]
    if not files:
        raise CommandError(f"no {cfg['dataset']} data under {root} (set run.data_dir)")
    return files


# omniglot has 20 drawings per character, so it gets its own defaults
OMNIGLOT_DEFAULTS = {"n_features": 200, "set_aside_per_class": 5}


def _dataset_setting(cfg: RunConfig, name: str):
    if cfg["dataset"] == "omniglot" and f"dataset.{name}" not in cfg.sources:
        return OMNIGLOT_DEFAULTS[name]
    return cfg[f"dataset.{name}"]


def feature_cache_key(cfg: RunConfig) -> str:
    """Content hash of the raw files and every preprocessing setting."""
    settings = {"dataset": cfg["dataset"], "format_version": ds.FORMAT_VERSION,
                **cfg.values["dataset"],
                **{k: _dataset_setting(cfg, k) for k in OMNIGLOT_DEFAULTS}}
    key = json.dumps(settings, sort_keys=True) + _raw_digest(_raw_files(cfg))
    return hashlib.sha256(key.encode()).hexdigest()[:20]


def _cache_dir(cfg: RunConfig) -> Path:
    return Path(cfg["cache_dir"] or Path(cfg["out"]) / "features")


def load_or_build_features(cfg: RunConfig, log=print) -> tuple[ds.FeatureDataset, Path]:
    key = feature_cache_key(cfg)
    path = _cache_dir(cfg) / f"features-{cfg['dataset']}-{key}.csv"
    if path.exists():
        log(f"feature cache hit: {path}")
        return ds.load_features(path), path
    if cfg["dataset"] == "omniglot":
        raw = ds.load_omniglot(cfg["data_dir"], cfg["max_characters"])
    else:
        raw = ds.find_mnist(cfg["data_dir"])
    data = ds.build_feature_dataset(raw, _dataset_setting(cfg, "n_features"),
                                    cfg["scaling_mode"], cfg["preprocess_seed"],
                                    _dataset_setting(cfg, "set_aside_per_class"))
    ds.save_features(data, path)
    log(f"features written: {path}")
    return data, path


# -- experiment plumbing ---------------------------------------------------------

def experiment_config(cfg: RunConfig, data: ds.FeatureDataset) -> ExperimentConfig:
    template = cfg.template()
    if template.n_features != data.n_features or template.n_classes != data.n_classes:
        template = replace(template, n_features=data.n_features, n_classes=data.n_classes)
    axis = cfg["sweep_axis"]
    return ExperimentConfig(
        template=template,
        n_train_per_class=cfg["n_train_per_class"],
        n_instances=cfg["n_instances"],
        classifier=cfg["classifier"],
        sweep_axis=(axis, list(cfg["sweep_values"])) if axis else None,
        master_seed=cfg["seed"],
        n_baseline=cfg["n_baseline"],
        n_validation=cfg["n_validation"],
        holdout=cfg["holdout"],
        knn_baseline=cfg["knn_baseline"],
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def result_rows(results: list[ExperimentResult]) -> list[dict]:
    rows = []
    for res in results:
        for i, r in enumerate(res.instances):
            rows.append({
                "axis": res.axis or "", "value": res.value, "instance": i, "seed": r.seed,
                "baseline_softmax": r.baseline_acc.get("softmax"),
                "baseline_loglik": r.baseline_acc.get("loglik"),
                "post_softmax": r.post_acc.get("softmax"),
                "post_loglik": r.post_acc.get("loglik"),
                "learning_focus": r.learning_focus, "snr": r.snr, "knn": r.knn_acc,
            })
    return rows


def summary_rows(rows: list[dict]) -> list[dict]:
    """Mean and sample std per sweep value, in first-seen order."""
    metrics = RESULT_COLUMNS[4:]
    out, order = [], []
    for row in rows:
        if row["value"] not in order:
            order.append(row["value"])
    for value in order:
        group = [r for r in rows if r["value"] == value]
        s = {"axis": group[0]["axis"], "value": value, "n_instances": len(group)}
        for m in metrics:
            v = np.array([np.nan if r[m] is None else r[m] for r in group], dtype=float)
            if np.all(np.isnan(v)):
                continue
            s[f"{m}_mean"] = float(np.nanmean(v))
            s[f"{m}_std"] = float(np.nanstd(v, ddof=1)) if np.sum(~np.isnan(v)) > 1 else 0.0
        out.append(s)
    return out


SUMMARY_COLUMNS = ["axis", "value", "n_instances"] + [
    f"{m}_{s}" for m in RESULT_COLUMNS[4:] for s in ("mean", "std")]


def figure_rows(axis: str | None, summary: list[dict]):
    """Plot-data table for the figure matching ``axis``, or ``None``."""
    if axis not in FIGURE_FILES:
        return None
    name = FIGURE_FILES[axis]
    if name.startswith("fig4"):
        cols = ["n_train_per_class", "post_loglik_mean", "post_loglik_std", "post_softmax_mean",
                "post_softmax_std", "knn_mean", "knn_std", "baseline_loglik_mean"]
    elif name.startswith("fig6"):
        cols = ["sparsity", "post_loglik_mean", "post_loglik_std", "learning_focus_mean",
                "learning_focus_std", "snr_mean", "snr_std"]
    else:
        cols = [axis, "post_loglik_mean", "post_loglik_std", "post_softmax_mean",
                "post_softmax_std", "baseline_loglik_mean"]
    rows = [{cols[0]: s["value"], **s} for s in summary]
    return name, cols, rows


def _write_confusions(path: Path, results: list[ExperimentResult]) -> None:
    rows = []
    for res in results:
        for i, r in enumerate(res.instances):
            for clf, cm in r.confusion.items():
                for t, p in zip(*np.nonzero(cm)):
                    rows.append({"value": res.value, "instance": i, "classifier": clf,
                                 "true": int(t), "predicted": int(p), "count": int(cm[t, p])})
    write_table(path, ["value", "instance", "classifier", "true", "predicted", "count"], rows)


# -- commands ----------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig, out: Path) -> int:
    """Build (or reuse) the cached feature table."""
    data, path = load_or_build_features(cfg)
    info = {"features": str(path), "n_samples": int(len(data.labels)),
            "n_features": data.n_features, "checksum": ds.feature_checksum(data)}
    (out / "preprocess.json").write_text(json.dumps(info, indent=2) + "\n")
    print(json.dumps(info))
    return 0


def _single_instance(cfg: RunConfig, data):
    config = experiment_config(cfg, data)
    seed = cfg["seed"]
    gen_ss, _, sim_ss = np.random.SeedSequence(seed).spawn(3)
    pools, holdout = instance_pools(data, config, seed)
    return config, seed, gen_ss, make_rng(sim_ss), pools, holdout


def cmd_train(cfg: RunConfig, out: Path) -> int:
    """Run the three stages on one moth and save it."""
    data, _ = load_or_build_features(cfg)
    config, seed, gen_ss, rng, pools, holdout = _single_instance(cfg, data)
    instance = generate_instance(config.template, gen_ss)
    instance.seed = seed
    result = run_stage_protocol(instance, pools, config, rng, holdout)
    result.seed = seed
    if config.n_train_per_class > 0:
        result.knn_acc = nearest_neighbor_baseline(pools.training, pools.validation)
    path = Path(cfg["instance_out"] or out / "instance.npz")
    save_instance(instance, path)
    rows = result_rows([ExperimentResult(None, "", [result])])
    write_table(out / "results.csv", RESULT_COLUMNS, rows)
    print(f"trained instance saved to {path}; post loglik accuracy "
          f"{result.post_acc.get('loglik', float('nan')):.3f}")
    return 0


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    """Score a saved moth on its validation (or holdout) pool."""
    from .classifiers import accuracy, fit_stats, loglik_predict, softmax_predict
    from .network import present_batch

    if not cfg["instance_in"]:
        raise CommandError("evaluate needs run.instance_in (a saved instance)")
    instance = load_instance(cfg["instance_in"])
    data, _ = load_or_build_features(cfg)
    config, seed, _, rng, pools, holdout = _single_instance(cfg, data)
    test = holdout or pools.validation
    E = present_batch(test.features, instance, 0.0, rng).responses
    stats = fit_stats(present_batch(pools.validation.features, instance, 0.0, rng).responses,
                      pools.validation.labels, instance.template.n_classes)
    row = {"seed": seed, "n_test": len(test.labels),
           "softmax": accuracy(softmax_predict(E)[0], test.labels),
           "loglik": accuracy(loglik_predict(E, stats)[0], test.labels)}
    write_table(out / "evaluation.csv", list(row), [row])
    print(json.dumps(row))
    return 0


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    """Run many moths per sweep value and write result tables."""
    data, _ = load_or_build_features(cfg)
    config = experiment_config(cfg, data)
    axis, values = config.sweep_axis if config.sweep_axis else (None, [None])
    results: list[ExperimentResult] = []
    marker = out / INCOMPLETE_MARKER
    if marker.exists():
        marker.unlink()
    try:
        for value in values:
            sub = replace(config, sweep_axis=(axis, [value]) if axis else None)
            results.extend(run_sweep(data, sub, workers=cfg["workers"]))
            _write_sweep_tables(out, axis, results)
    except Exception:
        _write_sweep_tables(out, axis, results)
        marker.write_text(traceback.format_exc())
        raise
    for res in results:
        print(f"{axis or 'point'}={res.value}: loglik {res.mean():.3f} +- {res.std():.3f}")
    return 0


def _write_sweep_tables(out: Path, axis, results) -> None:
    rows = result_rows(results)
    write_table(out / "results.csv", RESULT_COLUMNS, rows)
    summary = summary_rows(rows)
    write_table(out / "summary.csv", SUMMARY_COLUMNS, summary)
    _write_confusions(out / "confusion.csv", results)
    fig = figure_rows(axis, summary)
    if fig:
        name, cols, frows = fig
        write_table(out / name, cols, frows)


def cmd_timecourse(cfg: RunConfig, out: Path) -> int:
    """EN responses to the validation digits before and after training."""
    from .experiments import train_instance

    data, _ = load_or_build_features(cfg)
    config, seed, gen_ss, rng, pools, _ = _single_instance(cfg, data)
    naive = generate_instance(config.template, gen_ss)
    trained = naive.copy()
    train_instance(trained, pools.training, rng)
    rows = emit_timecourses(naive, trained, pools.validation, rng)
    write_table(out / "timecourses.csv",
                ["phase", "en_class", "position", "digit_class", "response"], rows)
    print(f"{len(rows)} timecourse rows written")
    return 0


def cmd_baseline(cfg: RunConfig, out: Path) -> int:
    """k-NN on the exact pools each moth of the configured sweep would see."""
    from .experiments import child_seed, config_for_value

    data, _ = load_or_build_features(cfg)
    config = experiment_config(cfg, data)
    axis, values = config.sweep_axis if config.sweep_axis else (None, [None])
    rows = []
    for value in values:
        sub = config_for_value(config, axis, value)
        for i in range(config.n_instances):
            seed = child_seed(config.master_seed, axis, value, i)
            pools, holdout = instance_pools(data, sub, seed)
            test = holdout or pools.validation
            rows.append({"axis": axis or "", "value": value, "instance": i, "seed": seed,
                         "k": knn_k(sub.n_train_per_class),
                         "knn": nearest_neighbor_baseline(pools.training, test)})
    write_table(out / "baseline.csv", ["axis", "value", "instance", "seed", "k", "knn"], rows)
    accs = np.array([r["knn"] for r in rows])
    print(f"k-NN accuracy {accs.mean():.3f} over {len(rows)} pools")
    return 0


HANDLERS = {
    "preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate,
    "sweep": cmd_sweep, "timecourse": cmd_timecourse, "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides", help="override one config key (repeatable)")
    common.add_argument("--workers", type=int, metavar="N", help="worker processes")
    common.add_argument("--dataset", choices=("mnist", "omniglot"))
    parser = argparse.ArgumentParser(prog="mothnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__doc__ and
                       HANDLERS[name].__doc__.splitlines()[0])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("run.seed: must be an unsigned 64-bit integer")
        cfg = parse_config(
            args.config,
            {"run.seed": args.seed, "run.out": args.out, "run.workers": args.workers,
             "run.dataset": args.dataset},
            args.overrides, command=args.command,
        )
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out)
        return HANDLERS[args.command](cfg, out)
    except (ConfigError, CommandError, FileNotFoundError) as exc:
        print(f"mothnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # keep partial outputs, report, fail
        print(f"mothnet {args.command}: failed: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
