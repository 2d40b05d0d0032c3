"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its runtime (run with -s or -v to see them).

Criteria:
  1. projection invariants on >= 100 random (m, d) configurations, < 10 s
  2. CG label propagation == dense-inverse oracle on >= 50 graphs, < 30 s
  3. adapter gradients match finite differences on >= 100 instances, < 30 s
  4. synthetic end-to-end: propagation beats zero-shot and self-training
     holds its bootstrap on >= 9/10 seeds, < 5 min
  5. bench-synth runs are byte-deterministic
"""

import time

import numpy as np
import pytest

from vlalign.adapt import (
    AffineAdapter,
    adapter_forward,
    backprop_to_adapter,
    ce_loss_and_grads,
    cosine_logits,
)
from vlalign.affinity import build_topk_affinity, normalize_symmetric
from vlalign.cli import main as cli_main
from vlalign.containers import EmbeddingSet, LabelVector
from vlalign.harness import REFERENCE_SPEC, SynthSpec, generate_synth, top1_accuracy
from vlalign.labelprop import (
    LabelSource,
    PseudoLabelSet,
    extract_pseudo_labels,
    propagate,
    propagate_union,
)
from vlalign.projection import Variant, compute_text_basis, project
from vlalign.selftrain import RunConfig, run_reclip, zero_shot_predictions

ACCEPTANCE_SEEDS = range(7, 17)


def report(name, ok, elapsed, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {name}: {status} in {elapsed:.1f}s{suffix}")


def unit_rows(data, prefix="r"):
    data = np.asarray(data, dtype=np.float64)
    data = data / np.linalg.norm(data, axis=1, keepdims=True)
    return EmbeddingSet(data, [f"{prefix}{i}" for i in range(len(data))], unit_norm=True)


def test_projection_invariant_suite():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    configs = 0
    ok = True
    try:
        while configs < 100:
            m = int(rng.integers(2, 24))
            d = int(rng.integers(m + 1, max(m + 2, 96)))
            T = unit_rows(rng.standard_normal((m, d)))
            X = unit_rows(rng.standard_normal((int(rng.integers(1, 12)), d)), prefix="x")
            full = compute_text_basis(T, Variant.P1)
            e1 = full.basis[:, 0]
            for variant in (Variant.P1, Variant.P2):
                basis = compute_text_basis(T, variant)
                # orthonormality
                gram = basis.basis.T @ basis.basis
                assert np.abs(gram - np.eye(basis.rank)).max() < 1e-6
                # idempotence
                once = project(basis, X)
                twice = project(basis, once)
                assert np.abs(twice.data - once.data).max() < 1e-6
                # residual orthogonality before renormalization
                f = rng.standard_normal(d)
                resid = f - basis.basis @ (basis.basis.T @ f)
                assert np.abs(basis.basis.T @ resid).max() < 1e-6
                if variant is Variant.P2:
                    t_hat = project(basis, T)
                    assert np.abs(t_hat.data @ e1).max() < 1e-6
            configs += 1
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"runtime {elapsed:.1f}s exceeds 10s budget"
    except AssertionError:
        report("projection-invariants", False, time.monotonic() - start)
        raise
    report("projection-invariants", True, elapsed, f"{configs} configurations")


def test_labelprop_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(777)
    graphs = 0
    try:
        while graphs < 50:
            n = int(rng.integers(6, 51))
            d = int(rng.integers(3, 9))
            m = int(rng.integers(2, min(6, n - 1) + 1))
            k = int(rng.integers(1, min(8, n - 1) + 1))
            alpha = float(rng.choice([0.5, 0.9, 0.99]))
            L = unit_rows(rng.standard_normal((n, d)))
            W = normalize_symmetric(build_topk_affinity(L, k))
            Z = propagate(W, m, alpha, cg_tol=1e-9, cg_max_iter=5000)
            # independent oracle: dense inverse
            Y = np.zeros((n, m))
            Y[:m, :m] = np.eye(m)
            Z_dense = np.linalg.solve(np.eye(n) - alpha * W.to_dense(), Y)
            assert np.abs(Z.scores - Z_dense).max() < 1e-5
            cg_labels = extract_pseudo_labels(Z, m)
            dense_labels = np.argmax(Z_dense[m:], axis=1)
            assert (cg_labels.labels == dense_labels).all()
            graphs += 1
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"runtime {elapsed:.1f}s exceeds 30s budget"
    except AssertionError:
        report("labelprop-oracle", False, time.monotonic() - start)
        raise
    report("labelprop-oracle", True, elapsed, f"{graphs} graphs")


def test_gradient_correctness():
    start = time.monotonic()
    rng = np.random.default_rng(31337)
    instances = 0
    worst = 0.0
    try:
        while instances < 100:
            n = int(rng.integers(2, 9))
            m = int(rng.integers(2, 5))
            d = int(rng.integers(3, 7))
            use_basis = bool(rng.integers(0, 2))
            adapted_axis = int(rng.integers(0, 2))
            X_rows = n if adapted_axis == 0 else m
            partner_rows = m if adapted_axis == 0 else n
            X = unit_rows(rng.standard_normal((X_rows, d)))
            partner = unit_rows(rng.standard_normal((partner_rows, d)), prefix="p")
            basis = None
            if use_basis:
                r = int(rng.integers(2, d + 1))
                q, _ = np.linalg.qr(rng.standard_normal((d, r)))
                from vlalign.projection import ProjectionBasis

                basis = ProjectionBasis(q, Variant.P1, d, m, r)
            adapter = AffineAdapter(
                1.0 + 0.3 * rng.standard_normal(d), 0.2 * rng.standard_normal(d)
            )
            scale = 10.0
            lab_rows = n
            num_classes = m
            lab = PseudoLabelSet(
                rng.integers(0, num_classes, lab_rows),
                np.ones(lab_rows),
                LabelSource.AGREED,
            )
            mask = np.ones(lab_rows, bool)

            def forward(gain, bias):
                out = adapter_forward(AffineAdapter(gain, bias), X)
                if basis is not None:
                    out = project(basis, out)
                if adapted_axis == 0:
                    logits = cosine_logits(out, partner, scale)
                else:
                    logits = cosine_logits(partner, out, scale)
                return ce_loss_and_grads(logits, lab, mask)

            _, dlogits = forward(adapter.gain, adapter.bias)
            dgain, dbias = backprop_to_adapter(
                adapter, X, dlogits, partner,
                scale=scale, adapted_axis=adapted_axis, basis=basis,
            )
            h = 1e-5
            for name, grad in (("gain", dgain), ("bias", dbias)):
                for j in range(d):
                    e = np.zeros(d)
                    e[j] = h
                    if name == "gain":
                        up = forward(adapter.gain + e, adapter.bias)[0]
                        dn = forward(adapter.gain - e, adapter.bias)[0]
                    else:
                        up = forward(adapter.gain, adapter.bias + e)[0]
                        dn = forward(adapter.gain, adapter.bias - e)[0]
                    fd = (up - dn) / (2 * h)
                    denom = max(abs(fd), abs(grad[j]))
                    if denom < 1e-7:
                        continue  # true-zero gradient: FD noise floor
                    rel = abs(fd - grad[j]) / denom
                    worst = max(worst, rel)
                    assert rel < 1e-4, f"rel error {rel:.2e} at instance {instances}"
            instances += 1
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"runtime {elapsed:.1f}s exceeds 30s budget"
    except AssertionError:
        report("gradient-correctness", False, time.monotonic() - start)
        raise
    report("gradient-correctness", True, elapsed, f"{instances} instances, worst rel {worst:.1e}")


def test_synthetic_end_to_end():
    start = time.monotonic()
    lp_wins = 0
    train_wins = 0
    agreement_logged = True
    try:
        for seed in ACCEPTANCE_SEEDS:
            spec = SynthSpec(
                classes=REFERENCE_SPEC.classes,
                per_class=REFERENCE_SPEC.per_class,
                dims=REFERENCE_SPEC.dims,
                sigma_v=REFERENCE_SPEC.sigma_v,
                sigma_t=REFERENCE_SPEC.sigma_t,
                delta=REFERENCE_SPEC.delta,
                seed=seed,
            )
            V, catalog, gt = generate_synth(spec)
            baseline = top1_accuracy(zero_shot_predictions(V, catalog), gt)

            text = catalog.text_embeddings("multi")
            basis = compute_text_basis(text, Variant.P2)
            pseudo = propagate_union(
                project(basis, text), project(basis, V), alpha=0.99, k=20
            )
            lp_acc = top1_accuracy(LabelVector(pseudo.labels), gt)
            if lp_acc > baseline:
                lp_wins += 1

            cfg = RunConfig(seed=seed, max_epochs=6)
            _, rep = run_reclip(V, catalog, cfg, eval_labels=gt)
            if rep.final_accuracy >= rep.bootstrap_pseudo_accuracy:
                train_wins += 1
            if not all(
                0.0 <= row.agreement_fraction <= 1.0 for row in rep.per_epoch
            ):
                agreement_logged = False
        elapsed = time.monotonic() - start
        assert lp_wins >= 9, f"label propagation beat zero-shot in only {lp_wins}/10 seeds"
        assert train_wins >= 9, f"final ensemble held bootstrap in only {train_wins}/10 seeds"
        assert agreement_logged
        assert elapsed < 300.0, f"runtime {elapsed:.1f}s exceeds 5min budget"
    except AssertionError:
        report("synthetic-end-to-end", False, time.monotonic() - start)
        raise
    report(
        "synthetic-end-to-end",
        True,
        elapsed,
        f"propagation wins {lp_wins}/10, training holds {train_wins}/10",
    )


def test_bench_synth_determinism(tmp_path, capsys):
    start = time.monotonic()
    args = [
        "bench-synth",
        "--classes", "6", "--per-class", "50", "--dims", "32",
        "--max-epochs", "2", "--batch-size", "32", "--k", "10", "--seed", "7",
    ]
    try:
        d1, d2 = tmp_path / "run1", tmp_path / "run2"
        assert cli_main(args + ["--out-dir", str(d1)]) == 0
        assert cli_main(args + ["--out-dir", str(d2)]) == 0
        capsys.readouterr()
        for name in ("bench.json", "report.json", "report.csv"):
            b1 = (d1 / name).read_bytes()
            b2 = (d2 / name).read_bytes()
            assert b1 == b2, f"{name} differs between identical runs"
        elapsed = time.monotonic() - start
    except AssertionError:
        report("bench-synth-determinism", False, time.monotonic() - start)
        raise
    report("bench-synth-determinism", True, elapsed)
