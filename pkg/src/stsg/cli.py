"""Command-line entry points for the experiment pipeline.

Subcommands compose through files:

    synth    -> dataset directory (.rec files + manifest.txt)
    ingest   -> schema validation + dataset summary
    features -> feature-matrix file + targets file
    train    -> model file (+ held-out error on stdout)
    eval     -> error of a saved model on a feature file
    cv       -> cross-validation report table (one row per feature kind)
    curves   -> out-of-bag and validation error versus tree count
    report   -> merged plot-ready table from cv outputs

Every run is driven by a declarative JSON config plus --set overrides; each
artifact embeds the config hash, and a fixed seed makes all outputs
byte-identical across runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import baselines, dataset, features, forest, graph_wavelet
from .dataset import (
    DatasetError,
    GraphRecording,
    ScenarioSpec,
    SynthSpec,
    aggregate,
    extract_targets,
    ingest,
    read_targets,
    serialize_recording,
    synth_generate,
    write_targets,
)
from .features import (
    FeatureError,
    FeatureMatrix,
    Standardizer,
    StsgConfig,
    assemble_features,
    fit_standardizer,
    read_feature_matrix,
    stsg_moments,
    write_feature_matrix,
)
from .forest import (
    ForestError,
    RfConfig,
    cross_validate,
    evaluate,
    forest_from_json,
    forest_to_json,
    make_folds,
    oob_error,
    staged_validation_errors,
    train_rf,
)
from .graph_wavelet import GraphError, build_decomposition
from .scattering import ScatteringError

FEATURE_KINDS = ("stsg", "stft", "moments")

DEFAULT_CONFIG = {
    "seed": 0,
    "synth": {
        "gases": ["acetaldehyde", "butanol", "methanol"],
        "positions": [0, 1, 2, 3, 4, 5],
        "trials_per_cell": 20,
        "t_len": 512,
        "noise_level": 0.1,
        "boards": [5],
    },
    "scenario": {
        "task": "gas10",
        "aggregation": "single_board",
        "include_static": False,
        "include_location": False,
    },
    "stsg": {
        "graph_levels": 3,
        "overlap": "none",
        "filter_j": 5,
        "q1": 2,
        "q2": 1,
        "max_order": 2,
        "second_order": "increasing",
    },
    "stft": {"window": 64, "hop": 32},
    "rf": {
        "n_trees": 200,
        "max_depth": None,
        "min_leaf": None,
        "features_per_split": None,
        "pca_dim": None,
    },
    "cv_folds": 5,
    "holdout": 0.25,
    "standardize": False,
}

_PIPELINE_ERRORS = (DatasetError, FeatureError, ForestError, GraphError,
                    ScatteringError, OSError)


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _apply_override(cfg: dict, assignment: str) -> None:
    key, _, raw = assignment.partition("=")
    if not _:
        raise ValueError(f"override {assignment!r} is not KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def load_config(path: str | None, overrides: list[str],
                seed: int | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path:
        with open(path) as fh:
            cfg = _deep_merge(cfg, json.load(fh))
    for assignment in overrides:
        _apply_override(cfg, assignment)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _scenario(cfg: dict) -> ScenarioSpec:
    s = cfg["scenario"]
    return ScenarioSpec(s["task"], s["aggregation"],
                        bool(s.get("include_static", False)),
                        bool(s.get("include_location", False)))


def _synth_spec(cfg: dict) -> SynthSpec:
    s = cfg["synth"]
    return SynthSpec(
        gases=tuple(s["gases"]),
        position_indices=tuple(int(p) for p in s["positions"]),
        trials_per_cell=int(s["trials_per_cell"]),
        t_len=int(s["t_len"]),
        noise_level=float(s["noise_level"]),
        boards=tuple(int(b) for b in s.get("boards", [5])),
    )


def _rf_config(cfg: dict) -> RfConfig:
    r = cfg["rf"]
    return RfConfig(
        n_trees=int(r["n_trees"]),
        max_depth=r["max_depth"],
        min_leaf=r["min_leaf"],
        features_per_split=r["features_per_split"],
        pca_dim=r["pca_dim"],
        seed=int(cfg["seed"]),
    )


# ---------------------------------------------------------------------------
# dataset plumbing
# ---------------------------------------------------------------------------

def _recording_name(rec) -> str:
    return (f"{rec.gas_label}_p{rec.position_index}_b{rec.board_index}"
            f"_t{rec.trial}.rec")


def write_dataset(out_dir: Path, recordings) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for rec in recordings:
        name = _recording_name(rec)
        serialize_recording(out_dir / name, rec)
        names.append(name)
    names.sort()
    with open(out_dir / "manifest.txt", "w") as fh:
        for name in names:
            fh.write(name + "\n")
    return names


def load_dataset(data_dir: Path, jobs: int = 1) -> list:
    manifest = data_dir / "manifest.txt"
    if manifest.exists():
        names = [ln.strip() for ln in manifest.read_text().splitlines()
                 if ln.strip()]
    else:
        names = sorted(p.name for p in data_dir.glob("*.rec"))
    if not names:
        raise DatasetError(f"no recordings found in {data_dir}")
    paths = [data_dir / n for n in names]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(ingest, paths))
    return [ingest(p) for p in paths]


def group_and_aggregate(recordings, mode: str) -> list[GraphRecording]:
    """Group by (gas, position, trial) cell, aggregate each, keep order stable."""
    cells: dict[tuple, list] = {}
    for rec in recordings:
        cells.setdefault((rec.gas_label, rec.position_index, rec.trial),
                         []).append(rec)
    out: list[GraphRecording] = []
    for key in sorted(cells):
        boards = sorted(cells[key], key=lambda r: r.board_index)
        out.extend(aggregate(boards, mode))
    return out


def dataset_summary(recordings) -> str:
    counts: dict[tuple, int] = {}
    for rec in recordings:
        key = (rec.gas_label, rec.position_index, rec.heater_voltage,
               rec.airflow_rpm)
        counts[key] = counts.get(key, 0) + 1
    lines = ["gas position heater_voltage airflow_rpm count"]
    for key in sorted(counts):
        gas, pos, heat, rpm = key
        lines.append(f"{gas} {pos} {heat!r} {rpm!r} {counts[key]}")
    lines.append(f"total {len(recordings)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def _stsg_config(cfg: dict, graph) -> StsgConfig:
    s = cfg["stsg"]
    dec = build_decomposition(graph, int(s["graph_levels"]),
                              overlap=s.get("overlap", "none"))
    return StsgConfig(
        dec,
        filter_j=int(s["filter_j"]),
        q1=int(s["q1"]),
        q2=int(s["q2"]),
        max_order=int(s["max_order"]),
        second_order=s.get("second_order", "increasing"),
    )


def _stft_config(cfg: dict) -> baselines.StftConfig:
    s = cfg["stft"]
    return baselines.StftConfig(baselines.hann_window(int(s["window"])),
                                int(s["hop"]))


def extract_feature_matrix(grecs: list[GraphRecording], kind: str, cfg: dict,
                           jobs: int = 1) -> tuple[FeatureMatrix, list]:
    """Features plus targets for aggregated recordings, in input order."""
    if kind not in FEATURE_KINDS:
        raise FeatureError(f"unknown feature kind {kind!r}")
    scenario = _scenario(cfg)
    if kind == "stsg":
        stsg_cfg = _stsg_config(cfg, grecs[0].graph)

        def moments_of(grec):
            return stsg_moments(grec.samples, stsg_cfg)
    elif kind == "stft":
        stft_cfg = _stft_config(cfg)

        def moments_of(grec):
            return baselines.stft_features(grec.samples, stft_cfg)
    else:
        def moments_of(grec):
            return baselines.moment_features(grec.samples)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            base = list(pool.map(moments_of, grecs))
    else:
        base = [moments_of(g) for g in grecs]

    vectors = []
    for grec, fv in zip(grecs, base):
        vectors.append(assemble_features(
            fv,
            static=grec.static_block if scenario.include_static else None,
            location=grec.location_block if scenario.include_location else None,
            require_static=scenario.include_static,
            require_location=scenario.include_location,
        ))
    layout = vectors[0].layout
    matrix = FeatureMatrix(
        np.stack([v.values for v in vectors]), layout,
        meta=(
            ("config_hash", config_hash(cfg)),
            ("feature_kind", kind),
            ("task", scenario.task),
            ("aggregation", scenario.aggregation),
            ("second_order", cfg["stsg"].get("second_order", "increasing")),
            ("channel_order",
             "level-major folder-minor scaling-before-wavelet"),
            ("path_order", "order0,order1-ascending,order2-lexicographic"),
        ))
    targets = [extract_targets(g, scenario) for g in grecs]
    return matrix, targets


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

MODEL_FORMAT = "stsg-model v1"


def save_model(path, forest_obj, standardizer: Standardizer | None,
               holdout_idx, holdout_error: float, cfg_hash: str) -> None:
    obj = {
        "format": MODEL_FORMAT,
        "config_hash": cfg_hash,
        "standardizer": None if standardizer is None else {
            "mean": [float(v) for v in standardizer.mean],
            "scale": [float(v) for v in standardizer.scale],
            "block_len": standardizer.block_len,
        },
        "holdout_indices": [int(i) for i in holdout_idx],
        "holdout_error": float(holdout_error),
        "forest": json.loads(forest_to_json(forest_obj)),
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format") != MODEL_FORMAT:
        raise ForestError(f"unsupported model format {obj.get('format')!r}")
    std = None
    if obj["standardizer"] is not None:
        s = obj["standardizer"]
        std = Standardizer(np.array(s["mean"]), np.array(s["scale"]),
                           int(s["block_len"]))
    f = forest_from_json(json.dumps(obj["forest"]))
    return f, std, np.array(obj["holdout_indices"], dtype=int), \
        float(obj["holdout_error"]), obj["config_hash"]


def _task_of(targets) -> str:
    return "classify" if targets and isinstance(targets[0], str) else "regress"


def _targets_to_labels(task: str, targets):
    if task == "classify":
        return list(targets)
    return np.array([list(t) if isinstance(t, tuple) else [t]
                     for t in targets])


def _holdout_split(targets, task: str, fraction: float, seed: int):
    n = len(targets)
    n_folds = max(2, round(1.0 / fraction))
    folds = make_folds(targets if task == "classify"
                       else list(range(n)), n_folds,
                       task, seed)
    test_idx = folds[0]
    train_idx = np.setdiff1d(np.arange(n), test_idx)
    return train_idx, test_idx


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.set or [], args.seed)
    recs = synth_generate(_synth_spec(cfg), int(cfg["seed"]))
    names = write_dataset(Path(args.out), recs)
    print(f"wrote {len(names)} recordings to {args.out}")
    print(dataset_summary(recs))
    return 0


def cmd_ingest(args) -> int:
    recs = load_dataset(Path(args.data), jobs=args.jobs)
    print(dataset_summary(recs))
    return 0


def cmd_decomposition(args) -> int:
    """Print the folder decomposition the configured scenario would use."""
    cfg = load_config(args.config, args.set or [], args.seed)
    graph = dataset.board_column_graph() \
        if _scenario(cfg).aggregation == "board_column" \
        else dataset.single_board_graph()
    stsg_cfg = _stsg_config(cfg, graph)
    text = stsg_cfg.decomposition.to_text()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_features(args) -> int:
    cfg = load_config(args.config, args.set or [], args.seed)
    recs = load_dataset(Path(args.data), jobs=args.jobs)
    grecs = group_and_aggregate(recs, _scenario(cfg).aggregation)
    matrix, targets = extract_feature_matrix(grecs, args.feature, cfg,
                                             jobs=args.jobs)
    write_feature_matrix(args.out, matrix)
    write_targets(args.targets, _scenario(cfg).task, targets)
    print(f"wrote {matrix.values.shape[0]} x {matrix.values.shape[1]} "
          f"features ({args.feature}) to {args.out}")
    return 0


def _load_features_and_targets(feature_path, target_path):
    matrix = read_feature_matrix(feature_path)
    task_name, targets = read_targets(target_path)
    if len(targets) != matrix.values.shape[0]:
        raise FeatureError("feature and target files disagree on sample count")
    return matrix, task_name, targets


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or [], args.seed)
    matrix, _, targets = _load_features_and_targets(args.features, args.targets)
    task = _task_of(targets)
    labels = _targets_to_labels(task, targets)
    train_idx, test_idx = _holdout_split(
        targets, task, float(args.holdout
                             if args.holdout is not None
                             else cfg["holdout"]), int(cfg["seed"]))
    x = matrix.values
    std = None
    if cfg.get("standardize"):
        std = fit_standardizer(x[train_idx], matrix.pca_block_len)
    x_std = x if std is None else std.apply(x)
    rf_cfg = _rf_config(cfg)
    model = train_rf(x_std[train_idx],
                     [labels[i] for i in train_idx] if task == "classify"
                     else labels[train_idx],
                     rf_cfg, task=task, pca_len=matrix.pca_block_len,
                     n_jobs=args.jobs)
    err = evaluate(model, x_std[test_idx],
                   [labels[i] for i in test_idx] if task == "classify"
                   else labels[test_idx])
    save_model(args.model, model, std, test_idx, err, config_hash(cfg))
    print(f"held-out error: {err!r}")
    return 0


def cmd_eval(args) -> int:
    model, std, holdout_idx, _, _ = load_model(args.model)
    matrix, _, targets = _load_features_and_targets(args.features, args.targets)
    task = model.task
    labels = _targets_to_labels(task, targets)
    x = matrix.values if std is None else std.apply(matrix.values)
    idx = np.arange(x.shape[0]) if args.full else holdout_idx
    err = evaluate(model, x[idx],
                   [labels[i] for i in idx] if task == "classify"
                   else labels[idx])
    print(f"error: {err!r}")
    return 0


def _cv_one(matrix: FeatureMatrix, targets, cfg: dict,
            jobs: int = 1) -> forest.CvResult:
    task = _task_of(targets)
    labels = _targets_to_labels(task, targets)
    return cross_validate(matrix.values, labels, _rf_config(cfg),
                          k=int(cfg["cv_folds"]), task=task,
                          pca_len=matrix.pca_block_len,
                          standardize_block=bool(cfg.get("standardize")),
                          n_jobs=jobs)


def _report_lines(cfg: dict, scenario: ScenarioSpec,
                  rows: list[tuple[str, forest.CvResult]]) -> list[str]:
    lines = [
        "# stsg-report v1",
        f"# config_hash: {config_hash(cfg)}",
        f"# scenario: {scenario.task} {scenario.aggregation} "
        f"static={int(scenario.include_static)} "
        f"location={int(scenario.include_location)}",
        f"# second_order: {cfg['stsg'].get('second_order', 'increasing')}",
        "# columns: feature_kind mean_error std_error folds",
    ]
    for kind, res in rows:
        lines.append(f"{kind} {res.mean_error!r} {res.std_error!r} "
                     f"{len(res.fold_errors)}")
    return lines


def cmd_cv(args) -> int:
    cfg = load_config(args.config, args.set or [], args.seed)
    scenario = _scenario(cfg)
    rows = []
    if args.data:
        kinds = args.feature.split(",") if args.feature else list(FEATURE_KINDS)
        recs = load_dataset(Path(args.data), jobs=args.jobs)
        grecs = group_and_aggregate(recs, scenario.aggregation)
        for kind in kinds:
            matrix, targets = extract_feature_matrix(grecs, kind, cfg,
                                                     jobs=args.jobs)
            rows.append((kind, _cv_one(matrix, targets, cfg, jobs=args.jobs)))
    else:
        if not (args.features and args.targets):
            raise FeatureError("cv needs --data or --features/--targets")
        matrix, _, targets = _load_features_and_targets(args.features,
                                                        args.targets)
        kind = dict(matrix.meta).get("feature_kind", "features")
        rows.append((kind, _cv_one(matrix, targets, cfg, jobs=args.jobs)))
    lines = _report_lines(cfg, scenario, rows)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def cmd_curves(args) -> int:
    cfg = load_config(args.config, args.set or [], args.seed)
    matrix, _, targets = _load_features_and_targets(args.features, args.targets)
    task = _task_of(targets)
    labels = _targets_to_labels(task, targets)
    train_idx, test_idx = _holdout_split(targets, task,
                                         float(cfg["holdout"]),
                                         int(cfg["seed"]))
    x = matrix.values
    if cfg.get("standardize"):
        x_std = fit_standardizer(x[train_idx], matrix.pca_block_len).apply(x)
    else:
        x_std = x
    y_train = [labels[i] for i in train_idx] if task == "classify" \
        else labels[train_idx]
    y_test = [labels[i] for i in test_idx] if task == "classify" \
        else labels[test_idx]
    model = train_rf(x_std[train_idx], y_train, _rf_config(cfg), task=task,
                     pca_len=matrix.pca_block_len, n_jobs=args.jobs)
    oob = oob_error(model, x_std[train_idx], y_train)
    val = staged_validation_errors(model, x_std[test_idx], y_test)
    lines = [
        "# stsg-curves v1",
        f"# config_hash: {config_hash(cfg)}",
        f"# never_oob: {oob.never_oob}",
        "# columns: trees oob_error val_error",
    ]
    for m in range(model.n_trees):
        lines.append(f"{m + 1} {float(oob.errors[m])!r} {float(val[m])!r}")
    text = "\n".join(lines) + "\n"
    with open(args.out, "w") as fh:
        fh.write(text)
    print(f"wrote {model.n_trees} curve points to {args.out}")
    return 0


def cmd_report(args) -> int:
    lines = ["# stsg-report-merged v1"]
    for path in args.inputs:
        with open(path) as fh:
            content = fh.read().splitlines()
        header = {ln.split(": ")[0][2:]: ln.partition(": ")[2]
                  for ln in content if ln.startswith("# ") and ": " in ln}
        lines.append(f"# source: {path} config_hash={header.get('config_hash')}"
                     f" scenario={header.get('scenario')}")
        for ln in content:
            if not ln.startswith("#") and ln.strip():
                lines.append(ln)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="JSON experiment config")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config entry (dotted path)")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                     help="worker threads for ingestion / extraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stsg",
        description="Graph-Haar time-scattering features and random forests",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate recordings and summarize")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("decomposition",
                       help="print the scenario's folder decomposition")
    _add_common(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decomposition)

    p = sub.add_parser("features", help="extract a feature matrix")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--feature", required=True, choices=FEATURE_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--targets", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a forest with a held-out split")
    _add_common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--holdout", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--full", action="store_true",
                   help="evaluate on all rows instead of the stored holdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="cross-validate feature kinds")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--feature", help="comma-separated kinds (with --data)")
    p.add_argument("--features", help="feature-matrix file")
    p.add_argument("--targets", help="targets file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("curves", help="error versus tree count")
    _add_common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("report", help="merge cv reports into one table")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _PIPELINE_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
