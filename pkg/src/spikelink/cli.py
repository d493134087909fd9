"""Command-line interface.

Subcommands: prepare, train, eval, energy, ablate, sweep, report.
Primary results go to the output directory as JSON/CSV plus rendered
figures; ``--json`` additionally prints the main report to stdout.
Progress and diagnostics go to stderr. Exit codes: 0 on success, 1 on
runtime failure, 2 on input/configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import (
    DatasetError,
    EdgeSplit,
    GraphDataset,
    SplitError,
    load_dataset,
    split_edges,
)
from .data import build_normalized_operator, normalize_features
from .energy import EnergyModel, build_ledger, energy_report
from .metrics import MetricReport, auc, average_precision
from .model import ModelConfig, encode_graph, load_checkpoint, save_checkpoint
from .neurons import NeuronConfig
from .training import TrainConfig, TrainingDiverged, evaluate_pairs, run_seeds
from . import reporting
from .validation import validate

DEFAULT_SEEDS = [1, 2, 3, 4, 5]


class InputError(ValueError):
    """User-facing input/config problem (exit code 2)."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _out_dir(args, default_name: str) -> Path:
    if getattr(args, "out", None):
        root = Path(args.out)
    elif os.environ.get("SPIKELINK_OUT"):
        root = Path(os.environ["SPIKELINK_OUT"]) / default_name
    else:
        root = Path("runs") / default_name
    root.mkdir(parents=True, exist_ok=True)
    return root


def _load_dataset(path: str) -> GraphDataset:
    try:
        return load_dataset(path)
    except DatasetError as exc:
        raise InputError(str(exc)) from exc


def _default_manifest(dataset_dir: str, seed: int) -> Path:
    return Path(dataset_dir) / f"split_seed{seed}.json"


def _load_split(args, dataset: GraphDataset) -> EdgeSplit:
    path = Path(args.split) if args.split else _default_manifest(args.dataset, 1)
    if not path.is_file():
        raise InputError(
            f"split manifest not found: {path} (run `spikelink prepare {args.dataset}` first)"
        )
    manifest = json.loads(path.read_text())
    validate(manifest, "split_manifest")
    return EdgeSplit.from_manifest(manifest)


# -- configuration assembly ---------------------------------------------------


def _merge_config(args) -> dict:
    """File config (if any) merged with CLI overrides into a run-config dict."""
    cfg: dict = {"dataset": args.dataset, "model": {}, "train": {}, "energy": {}}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        file_cfg = json.loads(path.read_text())
        for key in ("model", "train", "energy"):
            cfg[key].update(file_cfg.get(key, {}))
        if "seeds" in file_cfg:
            cfg["seeds"] = list(file_cfg["seeds"])

    model_over = {
        "num_blocks": getattr(args, "blocks", None),
        "hidden_dim": getattr(args, "hidden_dim", None),
        "latent_dim": getattr(args, "latent_dim", None),
        "time_window": getattr(args, "time_window", None),
        "prior_pi": getattr(args, "pi", None),
        "dtype": getattr(args, "dtype", None),
    }
    if getattr(args, "no_skip", False):
        model_over["skip_connections"] = False
    if getattr(args, "coupled", False):
        model_over["decoupled"] = False
    neuron_over = {
        "tau": getattr(args, "tau", None),
        "v_th": getattr(args, "v_th", None),
        "tau_out": getattr(args, "tau_out", None),
        "surrogate_width": getattr(args, "surrogate_width", None),
    }
    neuron_over = {k: v for k, v in neuron_over.items() if v is not None}
    if neuron_over:
        merged_neuron = dict(cfg["model"].get("neuron", {}))
        merged_neuron.update(neuron_over)
        model_over["neuron"] = merged_neuron
    cfg["model"].update({k: v for k, v in model_over.items() if v is not None})

    train_over = {
        "learning_rate": getattr(args, "lr", None),
        "max_epochs": getattr(args, "epochs", None),
        "optimizer": getattr(args, "optimizer", None),
        "kl_weight": getattr(args, "kl_weight", None),
        "patience": getattr(args, "patience", None),
        "feature_mode": getattr(args, "feature_mode", None),
        "dense_pair_limit": getattr(args, "dense_pair_limit", None),
    }
    cfg["train"].update({k: v for k, v in train_over.items() if v is not None})

    if getattr(args, "seeds", None):
        cfg["seeds"] = [int(s) for s in args.seeds]
    cfg.setdefault("seeds", list(DEFAULT_SEEDS))
    return cfg


def _build_configs(cfg: dict) -> tuple[ModelConfig, TrainConfig, list[int], EnergyModel]:
    try:
        validate(cfg, "run_config")
    except Exception as exc:
        raise InputError(f"invalid run configuration: {exc}") from exc
    try:
        model_dict = dict(cfg.get("model", {}))
        neuron = NeuronConfig(**model_dict.pop("neuron", {}))
        model_cfg = ModelConfig(neuron=neuron, **model_dict)
        train_cfg = TrainConfig(**cfg.get("train", {}))
        energy_model = EnergyModel(
            **{k: v for k, v in cfg.get("energy", {}).items() if k != "mode"}
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid run configuration: {exc}") from exc
    return model_cfg, train_cfg, cfg["seeds"], energy_model


def _emit(report: dict, path: Path, args) -> None:
    path.write_text(json.dumps(report, indent=2) + "\n")
    _log(f"wrote {path}")
    if getattr(args, "json", False):
        print(json.dumps(report))


# -- subcommands ----------------------------------------------------------------


def cmd_prepare(args) -> int:
    dataset = _load_dataset(args.dataset)
    try:
        split = split_edges(dataset, tuple(args.ratios), seed=args.seed)
    except SplitError as exc:
        raise InputError(str(exc)) from exc
    manifest = split.to_manifest()
    validate(manifest, "split_manifest")
    path = Path(args.manifest) if args.manifest else _default_manifest(args.dataset, args.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = json.dumps(manifest, separators=(",", ":")) + "\n"
    path.write_text(tmp)
    _log(
        f"split {dataset.name}: train={len(split.train_pos)} test={len(split.test_pos)} "
        f"val={len(split.val_pos)} -> {path}"
    )
    if args.json:
        print(json.dumps({"manifest": str(path), **{k: len(v) for k, v in (
            ("train_pos", split.train_pos), ("test_pos", split.test_pos),
            ("val_pos", split.val_pos))}}))
    return 0


def cmd_train(args) -> int:
    dataset = _load_dataset(args.dataset)
    split = _load_split(args, dataset)
    cfg = _merge_config(args)
    model_cfg, train_cfg, seeds, _ = _build_configs(cfg)
    out = _out_dir(args, f"train-{dataset.name}")
    (out / "run_config.json").write_text(json.dumps(cfg, indent=2) + "\n")

    def progress(rec):
        if rec["epoch"] % 10 == 0 or rec["epoch"] == 1:
            _log(
                f"  epoch {rec['epoch']:4d}  total={rec['total']:.4f} "
                f"recon={rec['recon']:.4f} val_auc={rec['val_auc']:.4f}"
            )

    _log(f"training {dataset.name}: seeds={seeds}")
    report, results = run_seeds(
        dataset, split, model_cfg, train_cfg, seeds, log_dir=out, progress=progress
    )
    rows = []
    for s, res in zip(seeds, results):
        ckpt = out / f"checkpoint_seed{s}.npz"
        save_checkpoint(
            ckpt,
            model_cfg,
            res.params,
            meta={
                "dataset": dataset.name,
                "feature_mode": train_cfg.feature_mode,
                "train_seed": int(s),
                "split_seed": int(split.seed),
                "best_epoch": res.best_epoch,
            },
        )
        records = res.epoch_records
        reporting.plot_training_curves(records, out / f"train_seed{s}.png")
        reporting.plot_spike_rates(records, out / f"spike_rates_seed{s}.png")
        rows.append(
            [s, f"{res.test_auc:.6f}", f"{res.test_ap:.6f}", res.best_epoch,
             f"{res.best_val_auc:.6f}", f"{res.wall_time_s:.2f}"]
        )
        _log(
            f"seed {s}: test_auc={res.test_auc:.4f} test_ap={res.test_ap:.4f} "
            f"best_epoch={res.best_epoch} ({res.wall_time_s:.1f}s)"
        )
    reporting.write_csv(
        out / "summary.csv",
        ["seed", "test_auc", "test_ap", "best_epoch", "best_val_auc", "wall_s"],
        rows,
    )
    rep = report.to_json()
    validate(rep, "metric_report")
    reporting.plot_metric_report(rep, out / "metric_report.png")
    _emit(rep, out / "metric_report.json", args)
    _log(f"mean test AUC={report.auc_mean:.4f} +/- {report.auc_std:.4f}")
    return 0


def _restore_run(args, checkpoint_path: str):
    """Load a checkpoint and rebuild the evaluation context around it."""
    path = Path(checkpoint_path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    model_cfg, params, meta = load_checkpoint(path)
    dataset = _load_dataset(args.dataset)
    if params.encoder_weights[0].shape[0] != dataset.feature_dim:
        raise InputError(
            f"checkpoint/dataset mismatch: encoder expects "
            f"{params.encoder_weights[0].shape[0]} feature channels, dataset has "
            f"{dataset.feature_dim}"
        )
    split = _load_split(args, dataset)
    feature_mode = meta.get("feature_mode", "binarize")
    features01 = normalize_features(dataset, feature_mode)
    operator = build_normalized_operator(dataset.num_nodes, split.train_pos)
    seed = args.seed if args.seed is not None else meta.get("train_seed", 1)
    encoding = encode_graph(operator, features01, model_cfg, np.random.default_rng([seed, 1]))
    return dataset, split, model_cfg, params, operator, encoding, seed


def cmd_eval(args) -> int:
    dataset, split, model_cfg, params, operator, encoding, seed = _restore_run(
        args, args.checkpoint
    )
    test_pairs = np.concatenate([split.test_pos, split.test_neg])
    labels = np.concatenate([np.ones(len(split.test_pos)), np.zeros(len(split.test_neg))])
    scores, _ = evaluate_pairs(
        operator, encoding, params, model_cfg, test_pairs, np.random.default_rng([seed, 9])
    )
    out = _out_dir(args, f"eval-{dataset.name}")
    rep = {
        "dataset": dataset.name,
        "seeds": [int(seed)],
        "auc_values": [auc(scores[labels == 1], scores[labels == 0])],
        "ap_values": [average_precision(scores, labels)],
    }
    report = MetricReport(
        dataset=rep["dataset"], seeds=rep["seeds"],
        auc_values=rep["auc_values"], ap_values=rep["ap_values"],
    ).to_json()
    validate(report, "metric_report")
    _emit(report, out / "eval_report.json", args)
    return 0


def cmd_energy(args) -> int:
    dataset, split, model_cfg, params, operator, encoding, seed = _restore_run(
        args, args.checkpoint
    )
    test_pairs = np.concatenate([split.test_pos, split.test_neg])
    _, trace = evaluate_pairs(
        operator, encoding, params, model_cfg, test_pairs,
        np.random.default_rng([seed, 9]), record_wip_pairs=True,
    )
    ledger = build_ledger(trace, decoupled=model_cfg.decoupled)
    model = EnergyModel()
    out = _out_dir(args, f"energy-{dataset.name}")
    reports = {}
    for mode in ("exact", "paper-average"):
        rep = energy_report(ledger, model, mode=mode)
        validate(rep, "energy_report")
        reports[mode] = rep
    main_report = reports[args.mode]
    reporting.plot_energy_report(main_report, out / "energy_report.png")
    reporting.write_csv(
        out / "energy_per_layer.csv",
        ["layer", "n_ac", "n_mul"],
        [[e["layer"], e["n_ac"], e["n_mul"]] for e in main_report["per_layer"]],
    )
    (out / "energy_report_all_modes.json").write_text(
        json.dumps(reports, indent=2) + "\n"
    )
    _emit(main_report, out / "energy_report.json", args)
    per_link = main_report["per_link"]
    _log(
        f"per-link: n_ac={per_link['n_ac']:.3e} n_mul={per_link['n_mul']:.3e} "
        f"E_float={per_link['e_float_pJ']:.3e}pJ E_int={per_link['e_int_pJ']:.3e}pJ"
    )
    return 0


def _energy_for_result(result, split, model_cfg, energy_model, mode="exact") -> dict:
    test_pairs = np.concatenate([split.test_pos, split.test_neg])
    _, trace = evaluate_pairs(
        result.operator, result.encoding, result.params, model_cfg, test_pairs,
        np.random.default_rng([result.train_cfg.seed, 9]), record_wip_pairs=True,
    )
    ledger = build_ledger(trace, decoupled=model_cfg.decoupled)
    return energy_report(ledger, energy_model, mode=mode)


ABLATION_STUDIES = {
    "blocks": [
        ("one-block", {"num_blocks": 1}),
        ("two-block", {"num_blocks": 2, "skip_connections": True}),
    ],
    "skip": [
        ("two-block", {"num_blocks": 2, "skip_connections": True}),
        ("two-block-no-skip", {"num_blocks": 2, "skip_connections": False}),
    ],
    "decoupling": [
        ("decoupled", {"decoupled": True}),
        ("coupled", {"decoupled": False}),
    ],
}


def cmd_ablate(args) -> int:
    dataset = _load_dataset(args.dataset)
    split = _load_split(args, dataset)
    cfg = _merge_config(args)
    model_cfg, train_cfg, seeds, energy_model = _build_configs(cfg)
    variants = ABLATION_STUDIES[args.study]
    out = _out_dir(args, f"ablate-{args.study}-{dataset.name}")

    rows = []
    summary: dict = {"study": args.study, "dataset": dataset.name, "variants": {}}
    for variant_name, overrides in variants:
        v_cfg = ModelConfig.from_json({**model_cfg.to_json(), **overrides})
        _log(f"[{args.study}] variant={variant_name} seeds={seeds}")
        report, results = run_seeds(dataset, split, v_cfg, train_cfg, seeds)
        entry = {
            "auc_mean": report.auc_mean,
            "auc_std": report.auc_std,
            "ap_mean": report.ap_mean,
            "ap_std": report.ap_std,
        }
        for s, res in zip(seeds, results):
            row = {
                "variant": variant_name,
                "seed": int(s),
                "auc": res.test_auc,
                "ap": res.test_ap,
            }
            if args.study == "decoupling":
                erep = _energy_for_result(res, split, v_cfg, energy_model)
                row.update(
                    n_ac=erep["per_link"]["n_ac"],
                    n_mul=erep["per_link"]["n_mul"],
                    e_float_pJ=erep["per_link"]["e_float_pJ"],
                    e_int_pJ=erep["per_link"]["e_int_pJ"],
                )
            rows.append(row)
        if args.study == "decoupling":
            entry["e_float_pJ_mean"] = float(
                np.mean([r["e_float_pJ"] for r in rows if r["variant"] == variant_name])
            )
            entry["e_int_pJ_mean"] = float(
                np.mean([r["e_int_pJ"] for r in rows if r["variant"] == variant_name])
            )
        summary["variants"][variant_name] = entry

    names = [v for v, _ in variants]
    base, other = names[0], names[1]
    summary["auc_delta"] = (
        summary["variants"][base]["auc_mean"] - summary["variants"][other]["auc_mean"]
    )
    if args.study == "decoupling":
        dec, coup = summary["variants"]["decoupled"], summary["variants"]["coupled"]
        summary["e_float_ratio"] = coup["e_float_pJ_mean"] / dec["e_float_pJ_mean"]
        summary["e_int_ratio"] = coup["e_int_pJ_mean"] / dec["e_int_pJ_mean"]

    header = list(rows[0].keys())
    reporting.write_csv(
        out / f"ablation_{args.study}.csv", header, [[r[k] for k in header] for r in rows]
    )
    reporting.plot_ablation(rows, "auc", out / f"ablation_{args.study}.png")
    _emit(summary, out / f"ablation_{args.study}.json", args)
    return 0


def cmd_sweep(args) -> int:
    dataset = _load_dataset(args.dataset)
    split = _load_split(args, dataset)
    cfg = _merge_config(args)
    model_cfg, train_cfg, seeds, _ = _build_configs(cfg)
    if not args.values:
        raise InputError("sweep requires at least one value")
    out = _out_dir(args, f"sweep-{args.param}-{dataset.name}")

    rows = []
    for value in args.values:
        if args.param == "T":
            v_model = ModelConfig.from_json(
                {**model_cfg.to_json(), "time_window": int(value)}
            )
        else:  # v_th
            mj = model_cfg.to_json()
            mj["neuron"] = {**mj["neuron"], "v_th": float(value)}
            v_model = ModelConfig.from_json(mj)
        _log(f"[sweep {args.param}={value}] seeds={seeds}")
        _, results = run_seeds(dataset, split, v_model, train_cfg, seeds)
        for s, res in zip(seeds, results):
            rows.append(
                {
                    "param": args.param,
                    "value": float(value),
                    "seed": int(s),
                    "auc": res.test_auc,
                    "ap": res.test_ap,
                }
            )
    header = ["param", "value", "seed", "auc", "ap"]
    reporting.write_csv(
        out / f"sweep_{args.param}.csv", header, [[r[k] for k in header] for r in rows]
    )
    reporting.plot_sweep(rows, args.param, out / f"sweep_{args.param}.png")
    if args.json:
        print(json.dumps(rows))
    _log(f"sweep complete: {len(rows)} rows")
    return 0


def cmd_report(args) -> int:
    """Re-render figures and a summary from a run directory's artifacts."""
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise InputError(f"run directory not found: {run_dir}")
    summary: dict = {"run_dir": str(run_dir), "figures": []}
    for log in sorted(run_dir.glob("train_seed*.jsonl")):
        records = reporting.read_jsonl(log)
        if not records:
            continue
        for rec in records:
            validate(rec, "train_log_record")
        fig = reporting.plot_training_curves(records, run_dir / (log.stem + ".png"))
        summary["figures"].append(str(fig))
        fig = reporting.plot_spike_rates(
            records, run_dir / (log.stem.replace("train", "spike_rates") + ".png")
        )
        summary["figures"].append(str(fig))
    metric_path = run_dir / "metric_report.json"
    if metric_path.is_file():
        rep = json.loads(metric_path.read_text())
        validate(rep, "metric_report")
        fig = reporting.plot_metric_report(rep, run_dir / "metric_report.png")
        summary["figures"].append(str(fig))
        summary["metric_report"] = rep
    energy_path = run_dir / "energy_report.json"
    if energy_path.is_file():
        rep = json.loads(energy_path.read_text())
        validate(rep, "energy_report")
        fig = reporting.plot_energy_report(rep, run_dir / "energy_report.png")
        summary["figures"].append(str(fig))
        summary["energy_report"] = rep
    if not summary["figures"]:
        raise InputError(f"no renderable artifacts found under {run_dir}")
    if args.json:
        print(json.dumps(summary))
    _log(f"rendered {len(summary['figures'])} figures")
    return 0


# -- parser ----------------------------------------------------------------------


def _add_model_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration (flags override it)")
    p.add_argument("--seeds", nargs="+", type=int, help="training seeds (default 1..5)")
    g = p.add_argument_group("model overrides")
    g.add_argument("--blocks", type=int, choices=(1, 2), dest="blocks")
    g.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    g.add_argument("--latent-dim", type=int, dest="latent_dim")
    g.add_argument("-T", "--time-window", type=int, dest="time_window")
    g.add_argument("--v-th", type=float, dest="v_th")
    g.add_argument("--tau", type=float, dest="tau")
    g.add_argument("--tau-out", type=float, dest="tau_out")
    g.add_argument("--surrogate-width", type=float, dest="surrogate_width")
    g.add_argument("--pi", type=float, dest="pi", help="Bernoulli prior firing probability")
    g.add_argument("--no-skip", action="store_true", dest="no_skip")
    g.add_argument("--coupled", action="store_true", help="disable propagation/transformation decoupling")
    g.add_argument("--dtype", choices=("float32", "float64"))
    t = p.add_argument_group("training overrides")
    t.add_argument("--lr", type=float, dest="lr")
    t.add_argument("--epochs", type=int, dest="epochs")
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--kl-weight", type=float, dest="kl_weight")
    t.add_argument("--patience", type=int)
    t.add_argument("--feature-mode", choices=("binarize", "minmax-per-feature", "none"))
    t.add_argument("--dense-pair-limit", type=int, dest="dense_pair_limit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikelink",
        description="Spiking graph auto-encoder for link prediction with AC/MUL energy accounting.",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="assert fixed-seed reproducibility (runs are deterministic per seed; "
        "pin BLAS threads via OPENBLAS_NUM_THREADS=1 for bit-stable linear algebra)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a reproducible edge split")
    p.add_argument("dataset")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--ratios", nargs=3, type=float, default=[0.85, 0.10, 0.05],
                   metavar=("TRAIN", "TEST", "VAL"))
    p.add_argument("--manifest", help="output path (default <dataset>/split_seed<seed>.json)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train and aggregate metrics over seeds")
    p.add_argument("dataset")
    p.add_argument("--split", help="split manifest (default <dataset>/split_seed1.json)")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    _add_model_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--split")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("energy", help="operation-count and energy report for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--split")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("exact", "paper-average"), default="exact")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("ablate", help="paired configuration studies with shared seeds")
    p.add_argument("dataset")
    p.add_argument("--study", choices=tuple(ABLATION_STUDIES), required=True)
    p.add_argument("--split")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    _add_model_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="grid over a hyperparameter with shared seeds")
    p.add_argument("dataset")
    p.add_argument("--param", choices=("T", "v_th"), required=True)
    p.add_argument("--values", nargs="+", type=float, required=True)
    p.add_argument("--split")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    _add_model_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-render figures/summary from run artifacts")
    p.add_argument("run_dir")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _log(f"error: {exc}")
        return 2
    except (DatasetError, SplitError) as exc:
        _log(f"error: {exc}")
        return 2
    except TrainingDiverged as exc:
        _log(f"training diverged: {exc}")
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 1
        _log(f"failure: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
