"""Command-line front end.

Subcommands: project, propagate, adapt, evaluate, bench-synth. Flags mirror
the run-config field names in kebab-case; precedence is flags > --config
file > built-in defaults. Every error path emits one machine-readable JSON
object on stderr and exits 2 for input errors, 1 for computation errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .adapt import DEFAULT_LOGIT_SCALE
from .containers import (
    ClassCatalog,
    EmbeddingSet,
    LabelVector,
    load_container,
    save_container,
)
from .errors import EngineError, SelfTrainAborted, ValidationError
from .harness import SynthSpec, generate_synth, top1_accuracy
from .labelprop import knn_pseudo_labels, propagate_union
from .projection import Variant, alignment_stats, compute_text_basis, project
from .selftrain import Mode, RunConfig, run_reclip, zero_shot_predictions


class _JsonErrorParser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage_error", message)
        raise SystemExit(2)


def _emit_error(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


def _load_as(path, kind, what: str):
    obj = load_container(path)
    if not isinstance(obj, kind):
        raise ValidationError(
            f"{path} holds {type(obj).__name__}, expected {what}"
        )
    return obj


def _threads_default() -> int:
    raw = os.environ.get("RCLP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


RUN_CONFIG_DEFAULTS = {
    "lr": 1e-3,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "batch_size": None,  # resolved from the class count
    "max_iterations": 5000,
    "max_epochs": 50,
    "alpha": 0.99,
    "k": 20,
    "cg_tol": 1e-6,
    "cg_max_iter": 200,
    "logit_scale": DEFAULT_LOGIT_SCALE,
    "seed": 0,
    "mode": "transductive",
    "gamma": 1.0,
}


def _resolve(args, config: dict, key: str, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _load_config_file(args) -> dict:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}")
    if not isinstance(raw, dict):
        raise ValidationError("config file must hold a JSON object")
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def _build_run_config(args, config: dict, num_classes: int) -> RunConfig:
    values = {}
    for key, default in RUN_CONFIG_DEFAULTS.items():
        values[key] = _resolve(args, config, key, default)
    if values["batch_size"] is None:
        values["batch_size"] = RunConfig.default_batch_size(num_classes)
    values["mode"] = Mode(values["mode"])
    values["threads"] = _resolve(args, config, "threads", _threads_default())
    return RunConfig(**values)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: env RCLP_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--cg-tol", dest="cg_tol", type=float, default=None)
    p.add_argument("--cg-max-iter", dest="cg_max_iter", type=int, default=None)
    p.add_argument("--logit-scale", dest="logit_scale", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=["transductive", "inductive"], default=None)
    p.add_argument("--gamma", type=float, default=None)


def _log(args, message: str) -> None:
    if getattr(args, "verbose", False):
        sys.stderr.write(message + "\n")


def cmd_project(args) -> int:
    V = _load_as(args.embeddings, EmbeddingSet, "an embedding set")
    catalog = _load_as(args.catalog, ClassCatalog, "a class catalog")
    variant = Variant[args.variant]
    text = catalog.text_embeddings(args.templates)
    basis = compute_text_basis(text, variant)
    v_out = project(basis, V)
    t_out = project(basis, text)
    save_container(v_out, args.out)
    _log(args, f"wrote {v_out.rows} projected rows (rank {basis.rank}) to {args.out}")
    if args.basis_out:
        save_container(basis, args.basis_out)
    if args.labels:
        labels = _load_as(args.labels, LabelVector, "a label vector")
        stats = alignment_stats(v_out, t_out, labels)
        sys.stdout.write(json.dumps(stats.as_dict(), sort_keys=True) + "\n")
    return 0


def cmd_propagate(args) -> int:
    config = _load_config_file(args)
    V = _load_as(args.embeddings, EmbeddingSet, "an embedding set")
    catalog = _load_as(args.catalog, ClassCatalog, "a class catalog")
    alpha = _resolve(args, config, "alpha", RUN_CONFIG_DEFAULTS["alpha"])
    k = _resolve(args, config, "k", RUN_CONFIG_DEFAULTS["k"])
    cg_tol = _resolve(args, config, "cg_tol", RUN_CONFIG_DEFAULTS["cg_tol"])
    cg_max_iter = _resolve(args, config, "cg_max_iter", RUN_CONFIG_DEFAULTS["cg_max_iter"])
    gamma = _resolve(args, config, "gamma", RUN_CONFIG_DEFAULTS["gamma"])
    logit_scale = _resolve(args, config, "logit_scale", RUN_CONFIG_DEFAULTS["logit_scale"])
    threads = _resolve(args, config, "threads", _threads_default())

    text = catalog.text_embeddings(args.templates)
    variant = Variant[args.variant]
    basis = compute_text_basis(text, variant)
    t_hat = project(basis, text)
    v_hat = project(basis, V)
    pseudo = propagate_union(
        t_hat, v_hat, alpha=alpha, k=k, cg_tol=cg_tol, cg_max_iter=cg_max_iter,
        gamma=gamma, threads=threads, logit_scale=logit_scale,
        debug_dump=args.debug_dump,
    )
    save_container(LabelVector(pseudo.labels), args.out)

    summary = {
        "source": pseudo.source.value,
        "mean_confidence": float(np.mean(pseudo.confidence)),
        "alpha": alpha,
        "k": k,
        "variant": args.variant,
    }
    if args.labels:
        gt = _load_as(args.labels, LabelVector, "a label vector")
        summary["accuracy"] = top1_accuracy(LabelVector(pseudo.labels), gt)
    payload = json.dumps(summary, sort_keys=True) + "\n"
    sys.stdout.write(payload)
    if args.report:
        Path(args.report).write_text(payload)
    return 0


def cmd_adapt(args) -> int:
    config = _load_config_file(args)
    V = _load_as(args.embeddings, EmbeddingSet, "an embedding set")
    catalog = _load_as(args.catalog, ClassCatalog, "a class catalog")
    eval_labels = None
    if args.labels:
        eval_labels = _load_as(args.labels, LabelVector, "a label vector")
    cfg = _build_run_config(args, config, catalog.num_classes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def write_bundle(states, report):
        text_state, visual_state = states
        save_container(text_state.adapter, out_dir / "adapter_text.rclp")
        save_container(visual_state.adapter, out_dir / "adapter_visual.rclp")
        if text_state.basis is not None:
            save_container(text_state.basis, out_dir / "basis_text.rclp")
        if visual_state.basis is not None:
            save_container(visual_state.basis, out_dir / "basis_visual.rclp")
        if visual_state.centers is not None:
            save_container(visual_state.centers, out_dir / "centers_visual.rclp")
        (out_dir / "config.json").write_text(cfg.to_json())
        (out_dir / "report.json").write_text(report.to_json())
        report.write_csv(out_dir / "report.csv")

    try:
        states, report = run_reclip(V, catalog, cfg, eval_labels)
    except SelfTrainAborted as exc:
        if exc.states is not None and exc.partial_report is not None:
            write_bundle(exc.states, exc.partial_report)
        _emit_error(exc.code, str(exc))
        return 1
    write_bundle(states, report)
    _log(args, f"adaptation done; bundle in {out_dir}")
    sys.stdout.write(report.to_json())
    return 0


def cmd_evaluate(args) -> int:
    preds = _load_as(args.pred, LabelVector, "a label vector")
    gt = _load_as(args.gt, LabelVector, "a label vector")
    acc = top1_accuracy(preds, gt)
    sys.stdout.write(json.dumps({"top1_accuracy": acc}, sort_keys=True) + "\n")
    return 0


def cmd_bench_synth(args) -> int:
    config = _load_config_file(args)
    spec = SynthSpec(
        classes=_resolve(args, config, "classes", 10),
        per_class=_resolve(args, config, "per_class", 200),
        dims=_resolve(args, config, "dims", 64),
        sigma_v=_resolve(args, config, "sigma_v", 0.35),
        sigma_t=_resolve(args, config, "sigma_t", 0.05),
        delta=_resolve(args, config, "delta", 1.5),
        seed=_resolve(args, config, "seed", 7),
    )
    V, catalog, gt = generate_synth(spec)
    cfg = _build_run_config(args, config, spec.classes)
    if args.max_epochs is None and "max_epochs" not in config:
        cfg.max_epochs = 8  # benchmark default: short run
    cfg.seed = spec.seed

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.write_dataset:
        save_container(V, out_dir / "visual.rclp")
        save_container(catalog, out_dir / "catalog.rclp")
        save_container(gt, out_dir / "labels.rclp")

    zero_shot = top1_accuracy(zero_shot_predictions(V, catalog), gt)
    text = catalog.text_embeddings("multi")
    results = {"zero_shot_accuracy": zero_shot}
    for variant in (Variant.P0, Variant.P1, Variant.P2):
        basis = compute_text_basis(text, variant)
        t_hat = project(basis, text)
        v_hat = project(basis, V)
        pseudo = propagate_union(
            t_hat, v_hat, alpha=cfg.alpha, k=cfg.k, cg_tol=cfg.cg_tol,
            cg_max_iter=cfg.cg_max_iter, gamma=cfg.gamma, threads=cfg.threads,
            logit_scale=cfg.logit_scale,
        )
        results[f"labelprop_{variant.name}_accuracy"] = top1_accuracy(
            LabelVector(pseudo.labels), gt
        )
        if variant is Variant.P2:
            knn = knn_pseudo_labels(v_hat, t_hat)
            results["knn_P2_accuracy"] = top1_accuracy(LabelVector(knn.labels), gt)

    states, report = run_reclip(V, catalog, cfg, eval_labels=gt)
    results["bootstrap_pseudo_accuracy"] = report.bootstrap_pseudo_accuracy
    results["final_ensemble_accuracy"] = report.final_accuracy
    results["peak_ensemble_accuracy"] = report.peak_accuracy
    results["peak_epoch"] = report.peak_epoch
    results["spec"] = {
        "classes": spec.classes, "per_class": spec.per_class, "dims": spec.dims,
        "sigma_v": spec.sigma_v, "sigma_t": spec.sigma_t, "delta": spec.delta,
        "seed": spec.seed,
    }
    payload = json.dumps(results, sort_keys=True, indent=2) + "\n"
    (out_dir / "bench.json").write_text(payload)
    report.write_csv(out_dir / "report.csv")
    (out_dir / "report.json").write_text(report.to_json())
    sys.stdout.write(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _JsonErrorParser(prog="vlalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="project embeddings onto a text-span basis")
    _add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--variant", choices=["P0", "P1", "P2"], default="P2")
    p.add_argument("--templates", choices=["single", "multi"], default="single")
    p.add_argument("--labels", help="optional ground truth; prints alignment stats")
    p.add_argument("--out", required=True)
    p.add_argument("--basis-out", dest="basis_out")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("propagate", help="pseudo labels via graph label propagation")
    _add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--variant", choices=["P0", "P1", "P2"], default="P2")
    p.add_argument("--templates", choices=["single", "multi"], default="multi")
    p.add_argument("--labels", help="optional ground truth for accuracy reporting")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--cg-tol", dest="cg_tol", type=float, default=None)
    p.add_argument("--cg-max-iter", dest="cg_max_iter", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--logit-scale", dest="logit_scale", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--debug-dump", dest="debug_dump",
                   help="write the first image rows of the diffusion scores as text")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("adapt", help="run the two-branch self-training loop")
    _add_common(p)
    _add_run_config_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--labels", help="optional ground truth for per-epoch accuracy")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="top-1 accuracy of predictions vs ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench-synth", help="seeded synthetic misalignment benchmark")
    _add_common(p)
    _add_run_config_flags(p)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--per-class", dest="per_class", type=int, default=None)
    p.add_argument("--dims", type=int, default=None)
    p.add_argument("--sigma-v", dest="sigma_v", type=float, default=None)
    p.add_argument("--sigma-t", dest="sigma_t", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--write-dataset", dest="write_dataset", action="store_true")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_bench_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _emit_error("io_error", str(exc))
        return 2
    except EngineError as exc:
        _emit_error(exc.code, str(exc))
        return exc.exit_code
    except Exception as exc:  # keep stderr machine-readable even on bugs
        _emit_error("internal_error", f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
