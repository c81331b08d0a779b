"""Command-line workflow: simulate, preprocess, train, evaluate, explain,
transfer, predict, ensemble, ingest.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Environment overrides: COPRESENCE_SEED replaces any --seed value,
COPRESENCE_THREADS caps the BLAS thread pools.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(_fail(EXIT_USAGE, message))


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _env_seed(value: int) -> int:
    env = os.environ.get("COPRESENCE_SEED")
    return int(env) if env else value


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="copresence", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic CSI dataset from a scenario")
    p.add_argument("--scenario", required=True, help="scenario config path or bundled name")
    p.add_argument("--frames", type=int, required=True, help="frames per verifier-prover pair")
    p.add_argument("--seed", type=int, default=None, help="override scenario rng seed")
    p.add_argument("--noise-seed", type=int, default=None,
                   help="redraw frame noise/jitter, keeping the environment fixed")
    p.add_argument("--power-scale", type=float, default=None, help="override tx power scale")
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="measurements -> feature matrix")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--preset", required=True, choices=["2g4", "5g"])
    p.add_argument("--sanitize-phase", action="store_true")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--magnitude-only", action="store_true")
    g.add_argument("--phase-only", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a classifier on a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--preset", required=True, choices=["2g4", "5g"])
    p.add_argument("--epochs", type=int, default=None, help="default: 35 (2g4) / 25 (5g)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="stratified k-fold evaluation")
    p.add_argument("--features", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=123, help="fold shuffle seed")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True, help="report path; ROC points go to <out>.roc")
    p.add_argument("--svg", default=None, help="optional ROC plot (SVG)")

    p = sub.add_parser("explain", help="grow a penalized-hypothesis set")
    p.add_argument("--features", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1000.0)
    p.add_argument("--importance", type=float, default=0.10)
    p.add_argument("--auc-stop", type=float, default=0.85)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("transfer", help="retrain a frozen-representation model on new data")
    p.add_argument("--base", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="windowed decisions over a measurement stream")
    p.add_argument("--model", required=True)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--min-measurements", type=int, default=3)
    p.add_argument("--in", dest="infile", required=True, help="measurement file or '-' for stdin")

    p = sub.add_parser("ensemble", help="hypothesis-ensemble vote over a measurement stream")
    p.add_argument("--hypotheses", required=True, help="directory written by explain")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--auc-threshold", type=float, default=0.9)
    p.add_argument("--min-models", type=int, default=3)

    p = sub.add_parser("ingest", help="adapt an external CSI dump to the measurement format")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--mapping", required=True, help="YAML field-mapping config")
    p.add_argument("--out", required=True)

    return parser


def _default_epochs(preset: str, override: int | None) -> int:
    from .channel import PRESET_EPOCHS

    return override if override is not None else PRESET_EPOCHS[preset]


def _load_features(path: str):
    from .features import read_features

    return read_features(path)


def _cmd_simulate(args) -> int:
    from dataclasses import replace

    from .measurement import write_measurements
    from .simulate import generate_dataset, resolve_scenario

    spec = resolve_scenario(args.scenario)
    if args.seed is not None:
        spec = replace(spec, rng_seed=_env_seed(args.seed))
    elif os.environ.get("COPRESENCE_SEED"):
        spec = replace(spec, rng_seed=int(os.environ["COPRESENCE_SEED"]))
    if args.power_scale is not None:
        spec = replace(spec, tx_power_scale=args.power_scale)
    measurements = generate_dataset(spec, frames_per_pair=args.frames, noise_seed=args.noise_seed)
    write_measurements(measurements, args.out)
    print(f"wrote {len(measurements)} measurements to {args.out}")
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    from .features import (
        COLUMNS_BOTH,
        COLUMNS_MAGNITUDE,
        COLUMNS_PHASE,
        build_feature_matrix,
        write_features,
    )
    from .measurement import read_measurements

    measurements = read_measurements(args.infile)
    presets = {m.config.name for m in measurements}
    if presets != {args.preset}:
        raise ValueError(
            f"--preset {args.preset} does not match measurements in {args.infile} "
            f"(found {sorted(presets)})"
        )
    columns = COLUMNS_BOTH
    if args.magnitude_only:
        columns = COLUMNS_MAGNITUDE
    elif args.phase_only:
        columns = COLUMNS_PHASE
    fm = build_feature_matrix(measurements, columns=columns, sanitized_phase=args.sanitize_phase)
    write_features(fm, args.out)
    print(f"wrote {fm.n}x{fm.dim} feature matrix to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from . import network
    from .features import apply_scaling, fit_variance_scaling

    fm = _load_features(args.features)
    if fm.preset != args.preset:
        raise ValueError(f"--preset {args.preset} does not match feature file ({fm.preset})")
    seed = _env_seed(args.seed)
    cfg = network.TrainConfig(epochs=_default_epochs(args.preset, args.epochs), rng_seed=seed)
    stats = fit_variance_scaling(fm)
    scaled = apply_scaling(fm, stats)
    model = network.build_model(fm.dim, seed=seed)
    model, history = network.train(model, scaled.data, scaled.labels, cfg)
    network.save_model(model, args.out, pipeline_meta={
        "preset": fm.preset, "columns": fm.columns, "sanitized": fm.sanitized_phase,
        "norm_mu": stats.mu, "norm_sigma": stats.sigma,
    })
    print(f"trained {cfg.epochs} epochs, final loss {history[-1]:.6f}, model at {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from . import network
    from .evaluate import cross_validate, render_roc_svg, write_report, write_roc_points

    fm = _load_features(args.features)
    seed = _env_seed(args.seed)
    cfg = network.TrainConfig(epochs=_default_epochs(fm.preset, args.epochs), rng_seed=seed)
    report = cross_validate(fm, cfg, k=args.folds, fold_seed=seed)
    write_report(report, args.out)
    write_roc_points(report, str(args.out) + ".roc")
    if args.svg:
        render_roc_svg(report, args.svg)
    print(f"auc={report.auc:.4f} eer={report.eer:.4f} report at {args.out}")
    return EXIT_OK


def _cmd_explain(args) -> int:
    from . import network
    from .evaluate import stratified_folds
    from .explain import (
        RrrConfig,
        feature_importance,
        rrr_iterate,
        save_hypotheses,
        write_importance,
    )
    from .features import apply_scaling, fit_variance_scaling

    fm = _load_features(args.features)
    seed = _env_seed(args.seed)
    cfg = RrrConfig(lam=args.lam, importance_threshold=args.importance, auc_stop=args.auc_stop)
    train_cfg = network.TrainConfig(epochs=_default_epochs(fm.preset, args.epochs), rng_seed=seed)

    plan = stratified_folds(fm.labels, k=5, seed=123)
    train_idx, test_idx = plan.train_indices(0), plan.test_indices(0)
    train_fm = fm.rows(train_idx)
    stats = fit_variance_scaling(train_fm)
    x_train = apply_scaling(train_fm, stats).data
    x_test = apply_scaling(fm.rows(test_idx), stats).data

    hypotheses = rrr_iterate(
        x_train, fm.labels[train_idx], x_test, fm.labels[test_idx], cfg, train_cfg
    )
    out = Path(args.out)
    save_hypotheses(hypotheses, out, pipeline_meta={
        "preset": fm.preset, "columns": fm.columns, "sanitized": fm.sanitized_phase,
        "norm_mu": stats.mu, "norm_sigma": stats.sigma,
    })
    importance = feature_importance(hypotheses[0].model, x_train, cfg.ratio_threshold)
    write_importance(importance, out / "importance.txt")
    aucs = ", ".join(f"{h.auc:.3f}" for h in hypotheses)
    print(f"{len(hypotheses)} hypotheses (AUCs: {aucs}) in {out}")
    return EXIT_OK


def _cmd_transfer(args) -> int:
    from . import network
    from .features import apply_scaling, fit_variance_scaling
    from .transfer import transfer_train, write_transfer_report

    base, base_meta = network.load_model(args.base)
    fm = _load_features(args.features)
    if base_meta.get("preset") and base_meta["preset"] != fm.preset:
        raise ValueError(
            f"base model preset {base_meta['preset']} does not match features ({fm.preset})"
        )
    seed = _env_seed(args.seed)
    stats = fit_variance_scaling(fm)
    scaled = apply_scaling(fm, stats)
    cfg = network.TrainConfig(rng_seed=seed)
    model, report = transfer_train(base, scaled.data, scaled.labels, cfg, epochs=args.epochs)
    network.save_model(model, args.out, pipeline_meta={
        "preset": fm.preset, "columns": fm.columns, "sanitized": fm.sanitized_phase,
        "norm_mu": stats.mu, "norm_sigma": stats.sigma,
    })
    write_transfer_report(report, str(args.out) + ".report")
    print(
        f"transfer done: flop reduction {report.flop_reduction:.2f}x, "
        f"model at {args.out}"
    )
    return EXIT_OK


def _require_pipeline_meta(meta: dict, source: str):
    from .features import NormStats

    if "norm_mu" not in meta or "norm_sigma" not in meta:
        raise ValueError(f"{source} carries no normalization statistics")
    return NormStats(mu=meta["norm_mu"], sigma=meta["norm_sigma"]), meta


def _cmd_predict(args) -> int:
    from . import network
    from .features import COLUMNS_BOTH
    from .measurement import iter_measurements
    from .realtime import DecisionWindow, push

    model, meta = network.load_model(args.model)
    stats, meta = _require_pipeline_meta(meta, args.model)
    windows: dict[tuple[str, str], DecisionWindow] = {}

    def consume(fh):
        for m in iter_measurements(fh):
            key = (m.tx_id, m.rx_id)
            if key not in windows:
                windows[key] = DecisionWindow(
                    window_length=args.window,
                    min_measurements=args.min_measurements,
                    columns=meta.get("columns", COLUMNS_BOTH),
                    sanitized_phase=bool(meta.get("sanitized", False)),
                )
            decision = push(windows[key], m.timestamp, m, model, stats)
            if decision is not None:
                verdict = "copresent" if decision.copresent else "non-copresent"
                print(
                    f"timestamp={decision.timestamp!r} tx={m.tx_id} rx={m.rx_id} "
                    f"decision={verdict} votes={decision.votes_copresent}/{decision.votes_total}"
                )

    if args.infile == "-":
        consume(sys.stdin)
    else:
        with open(args.infile) as fh:
            consume(fh)
    return EXIT_OK


def _cmd_ensemble(args) -> int:
    from .explain import ensemble_vote, load_hypotheses
    from .features import COLUMNS_BOTH, build_feature_matrix
    from .measurement import read_measurements

    hypotheses, meta = load_hypotheses(args.hypotheses)
    stats, meta = _require_pipeline_meta(meta, args.hypotheses)
    measurements = read_measurements(args.infile)
    fm = build_feature_matrix(
        measurements,
        columns=meta.get("columns", COLUMNS_BOTH),
        sanitized_phase=bool(meta.get("sanitized", False)),
    )
    x = (fm.data - stats.mu) / stats.sigma
    labels = fm.labels if set(fm.labels) <= {0, 1} and len(set(fm.labels)) == 2 else None
    decisions, gate = ensemble_vote(
        hypotheses, x, probe_labels=labels,
        auc_threshold=args.auc_threshold, min_models=args.min_models,
    )
    print(
        f"gate: {gate.n_passing}/{len(hypotheses)} models with AUC >= {gate.auc_threshold!r} "
        f"-> {'PASS' if gate.passed else 'FAIL'}"
    )
    for m, d in zip(measurements, decisions):
        verdict = "copresent" if d else "non-copresent"
        print(f"timestamp={m.timestamp!r} tx={m.tx_id} rx={m.rx_id} decision={verdict}")
    return EXIT_OK


def _cmd_ingest(args) -> int:
    import yaml

    from .measurement import ingest_external, write_measurements

    with open(args.mapping) as fh:
        mapping = yaml.safe_load(fh)
    if not isinstance(mapping, dict):
        raise ValueError(f"mapping file {args.mapping} is not a mapping")
    measurements = ingest_external(args.infile, mapping)
    write_measurements(measurements, args.out)
    print(f"ingested {len(measurements)} measurements to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "transfer": _cmd_transfer,
    "predict": _cmd_predict,
    "ensemble": _cmd_ensemble,
    "ingest": _cmd_ingest,
}


def main(argv=None) -> int:
    threads = os.environ.get("COPRESENCE_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    from .explain import DegenerateBaselineError, ExplainError
    from .evaluate import MetricError
    from .features import FeatureError
    from .measurement import MeasurementFormatError
    from .network import ModelFormatError, NumericError
    from .realtime import StreamError
    from .simulate import ScenarioError

    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except (
        MeasurementFormatError, FeatureError, ScenarioError, ModelFormatError,
        MetricError, ExplainError, DegenerateBaselineError, StreamError,
        FileNotFoundError, IsADirectoryError, ValueError, KeyError,
    ) as exc:
        return _fail(EXIT_DATA, str(exc))


if __name__ == "__main__":
    sys.exit(main())
