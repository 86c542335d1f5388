"""Acceptance gate: seven criteria, each timed against its runtime budget.

Each test prints one `[acceptance] criterion N (...): PASS/FAIL` line so a
plain pytest run doubles as the acceptance checklist.
"""

import json
import time
from contextlib import contextmanager

import numpy as np

from ctxrobust import (
    PerturbationSpec,
    accuracy_curve,
    apply_blur,
    apply_contrast,
    apply_haze,
    class_accuracy_curves,
    classify,
    min_adversarial_epsilon,
    propagate_bounds,
    robustness_interval,
    segment_from_haze,
    verify_haze,
)
from ctxrobust.cli import main

from synthnets import (
    bump_model,
    dense_layer_outputs_batch,
    flip_model,
    haze_grid_inputs,
    random_relu_net,
)

HAZE = PerturbationSpec(kind="haze")


@contextmanager
def criterion(capsys, number: int, name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        elapsed = time.perf_counter() - start
        with capsys.disabled():
            print(
                f"[acceptance] criterion {number} ({name}): FAIL "
                f"({elapsed:.2f}s, budget {budget_s:g}s)"
            )
        raise
    elapsed = time.perf_counter() - start
    verdict = "PASS" if elapsed < budget_s else "FAIL"
    with capsys.disabled():
        print(
            f"[acceptance] criterion {number} ({name}): {verdict} "
            f"({elapsed:.2f}s, budget {budget_s:g}s)"
        )
    assert elapsed < budget_s, (
        f"criterion {number} blew its runtime budget: {elapsed:.2f}s >= {budget_s:g}s"
    )


def _off_grid(eps_star: float, step: float = 1.0 / 512.0, margin: float = 1e-4) -> float:
    """Nudge a flip point away from the bisection's dyadic endpoints.

    Thresholds are stored in float32, which can move the realized flip by
    a few 1e-7; a flip point essentially on a probe value would make the
    containment check ambiguous at that scale.
    """
    frac = eps_star % step
    if min(frac, step - frac) < margin:
        eps_star += 3.0 * margin
    return eps_star


# ---------------------------------------------------------------------------
# 1. perturbation identities
# ---------------------------------------------------------------------------

def test_criterion_1_perturbation_identities(capsys):
    with criterion(capsys, 1, "perturbation identities", 1.0):
        rng = np.random.default_rng(101)
        for _ in range(100):
            x = rng.uniform(0.0, 1.0, size=(8, 8, 3)).astype(np.float32)
            h0 = apply_haze(x, 0.0)
            c0 = apply_contrast(x, 0.0)
            b0 = apply_blur(x, 0.0)
            assert np.array_equal(h0, x) and h0.dtype == np.float32
            assert np.array_equal(c0, x) and c0.dtype == np.float32
            assert np.max(np.abs(b0.astype(np.float64) - x)) <= 1e-6
            h1 = apply_haze(x, 1.0, color=(1.0, 1.0, 1.0))
            assert np.array_equal(h1, np.ones_like(x))


# ---------------------------------------------------------------------------
# 2. bisection contract
# ---------------------------------------------------------------------------

def test_criterion_2_bisection_contract(capsys):
    with criterion(capsys, 2, "bisection contract", 5.0):
        rng = np.random.default_rng(202)
        for _ in range(50):
            eps_star = _off_grid(float(rng.uniform(0.05, 0.95)))
            model, sample = flip_model(eps_star)
            r = robustness_interval(model, sample, HAZE, omega=0.002)
            assert r.status == "flip_found"
            assert r.eps_lower <= eps_star <= r.eps_upper
            assert r.eps_upper - r.eps_lower <= 0.002
            assert r.midpoint_probes == 9


# ---------------------------------------------------------------------------
# 3. verifier soundness oracle
# ---------------------------------------------------------------------------

def test_criterion_3_verifier_soundness(capsys):
    with criterion(capsys, 3, "verifier soundness oracle", 60.0):
        rng = np.random.default_rng(303)
        grid = np.linspace(0.0, 1.0, 10_001)
        outcomes = {"robust": 0, "counterexample": 0, "unknown": 0}
        for i in range(50):
            model, sample = random_relu_net(rng, f"sound-{i}")
            verdict = verify_haze(model, sample, p=1.0)
            outcomes[verdict.outcome] += 1
            if verdict.outcome == "robust":
                logits = dense_layer_outputs_batch(
                    model, haze_grid_inputs(sample.image, grid)
                )[-1]
                flips = np.flatnonzero(np.argmax(logits, axis=1) != sample.label)
                # batched matmul may resolve near-exact logit ties differently
                # from the scalar path; only the scalar classifier is binding
                for k in flips:
                    got = classify(model, apply_haze(sample.image, float(grid[k])))
                    assert got == sample.label, (
                        f"net {i}: robust verdict refuted at eps={grid[k]!r}"
                    )
            elif verdict.outcome == "counterexample":
                eps = verdict.counterexample_eps
                got = classify(model, apply_haze(sample.image, eps))
                assert got != sample.label, f"net {i}: counterexample at {eps} classifies fine"
        # the draw must actually exercise both decisive verdicts
        assert outcomes["robust"] >= 5 and outcomes["counterexample"] >= 5, outcomes


# ---------------------------------------------------------------------------
# 4. bound containment
# ---------------------------------------------------------------------------

def test_criterion_4_bound_containment(capsys):
    with criterion(capsys, 4, "bound containment", 30.0):
        rng = np.random.default_rng(404)
        for i in range(20):
            model, sample = random_relu_net(rng, f"bound-{i}")
            eps_values = np.sort(rng.uniform(0.0, 1.0, size=998))
            eps_values = np.concatenate(([0.0], eps_values, [1.0]))
            record: list = []
            propagate_bounds(model, segment_from_haze(sample.image), record=record)
            activations = dense_layer_outputs_batch(
                model, haze_grid_inputs(sample.image, eps_values)
            )
            assert len(record) == len(activations)
            for form, acts in zip(record, activations):
                a_l = form.a_l.reshape(-1)[None, :]
                b_l = form.b_l.reshape(-1)[None, :]
                a_u = form.a_u.reshape(-1)[None, :]
                b_u = form.b_u.reshape(-1)[None, :]
                e = eps_values[:, None]
                lower = a_l * e + b_l
                upper = a_u * e + b_u
                slack = 1e-6 + 1e-6 * np.abs(acts)
                assert np.all(lower <= acts + slack), f"net {i}: lower bound violated"
                assert np.all(upper >= acts - slack), f"net {i}: upper bound violated"


# ---------------------------------------------------------------------------
# 5. certified vs test-based severities
# ---------------------------------------------------------------------------

def test_criterion_5_certified_vs_tested(capsys):
    with criterion(capsys, 5, "early-flip detection vs bisection", 30.0):
        # non-monotone model: a short misclassification band well below the
        # flip that plain bisection converges to
        model, sample = bump_model()
        bound = min_adversarial_epsilon(model, sample, tol=0.002)
        tested = robustness_interval(model, sample, HAZE, omega=0.002)
        assert bound.status == "certified"
        assert bound.adversarial_at <= tested.eps_upper - 0.1, (
            f"certified {bound.adversarial_at} vs tested {tested.eps_upper}"
        )
        # monotone models: both methods land on the same severity
        rng = np.random.default_rng(505)
        for _ in range(30):
            eps_star = _off_grid(float(rng.uniform(0.05, 0.95)))
            m, s = flip_model(eps_star)
            b = min_adversarial_epsilon(m, s, tol=0.002)
            t = robustness_interval(m, s, HAZE, omega=0.002)
            assert b.status == "certified" and t.status == "flip_found"
            assert abs(b.adversarial_at - t.eps_upper) <= 0.002 + 1e-9, (
                f"eps_star={eps_star}: certified {b.adversarial_at} "
                f"vs tested {t.eps_upper}"
            )


# ---------------------------------------------------------------------------
# 6. reporting correctness
# ---------------------------------------------------------------------------

_RUN_MANIFESTS = {
    "eval_manifest.json",
    "verify_manifest.json",
    "report_manifest.json",
    "counterexample_manifest.json",
    "demo_manifest.json",
}


def _tree_bytes(root):
    """Relative path -> bytes for every report artifact, run manifests and
    PNGs excluded (timestamps and encoder state make them incomparable)."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in _RUN_MANIFESTS and p.suffix != ".png":
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_criterion_6_reporting_correctness(capsys, demo_suite, demo_models, demo_dataset, tmp_path):
    with criterion(capsys, 6, "reporting correctness", 10.0):
        grid = np.linspace(0.0, 1.0, 11)
        for model in demo_models:
            curve = accuracy_curve(model, demo_dataset, HAZE, eps_grid=grid)
            clean = sum(
                classify(model, s.image) == s.label for s in demo_dataset.samples
            ) / len(demo_dataset.samples)
            assert curve.accuracy[0] == clean
            per_class = class_accuracy_curves(model, demo_dataset, HAZE, eps_grid=grid)
            n = len(demo_dataset.samples)
            counts = {
                c.class_filter: sum(
                    1 for s in demo_dataset.samples if s.label == c.class_filter
                )
                for c in per_class
            }
            assert sum(counts.values()) == n  # every sample belongs to some curve
            recombined = sum(c.accuracy * counts[c.class_filter] for c in per_class)
            assert np.allclose(recombined, curve.accuracy * n, atol=1e-9)
            # both sides are integer sample counts
            assert np.allclose(recombined, np.rint(recombined), atol=1e-9)

        # byte determinism across reruns and worker counts
        models = [str(p) for p in demo_suite["model_manifests"]]
        data = str(demo_suite["data_manifest"])
        trees = []
        for tag, workers in (("w1", "1"), ("w3", "3")):
            eval_dir = tmp_path / f"eval_{tag}"
            rc = main(
                ["eval", "--models", *models, "--data", data,
                 "--out", str(eval_dir), "--workers", workers]
            )
            assert rc == 0
            report_dir = tmp_path / f"report_{tag}"
            rc = main(
                ["report", "--models", *models, "--data", data,
                 "--out", str(report_dir), "--grid", "11",
                 "--results", str(eval_dir / "results.csv"), "--no-figures"]
            )
            assert rc == 0
            tree = _tree_bytes(report_dir)
            tree["results.csv"] = (eval_dir / "results.csv").read_bytes()
            trees.append(tree)
        assert trees[0].keys() == trees[1].keys()
        for key in trees[0]:
            assert trees[0][key] == trees[1][key], f"artifact differs across workers: {key}"


# ---------------------------------------------------------------------------
# 7. end to end
# ---------------------------------------------------------------------------

def test_criterion_7_end_to_end(capsys, tmp_path):
    suite = tmp_path / "suite"
    assert main(["demo", "--out", str(suite), "--seed", "7"]) == 0
    models = [str(suite / "models" / "lin-proto.json"), str(suite / "models" / "conv-proto.json")]
    data = str(suite / "data" / "dataset.json")
    out = tmp_path / "run"
    with criterion(capsys, 7, "end-to-end toy suite", 10.0):
        assert main(["eval", "--models", *models, "--data", data, "--out", str(out)]) == 0
        assert main(["verify", "--models", *models, "--data", data, "--out", str(out)]) == 0
        assert (
            main(
                ["report", "--models", *models, "--data", data, "--out", str(out),
                 "--grid", "21",
                 "--results", str(out / "results.csv"),
                 "--certified", str(out / "certified.csv")]
            )
            == 0
        )
        assert (
            main(
                ["counterexample", "--models", *models, "--data", data,
                 "--out", str(out), "--results", str(out / "results.csv")]
            )
            == 0
        )

        results_lines = (out / "results.csv").read_text().splitlines()
        assert len(results_lines) == 41  # 2 models x 20 samples + header
        certified_lines = (out / "certified.csv").read_text().splitlines()
        assert len(certified_lines) == 41
        svg = (out / "model_curves.svg").read_text()
        assert svg.count("<polyline") == 2
        for mid in ("lin-proto", "conv-proto"):
            assert (out / f"class_curves_{mid}.csv").is_file()
            assert (out / f"comparison_{mid}.csv").is_file()
            assert (out / f"distribution_{mid}.csv").is_file()
        pairs = [
            p for p in out.glob("cex_*_original.ppm")
            if (out / p.name.replace("_original", "_perturbed")).is_file()
        ]
        assert pairs, "no counterexample PPM pair emitted"
        for name in ("eval", "verify", "report", "counterexample"):
            doc = json.loads((out / f"{name}_manifest.json").read_text())
            assert doc["command"] == name
            assert doc["artifact"] == "ctxrobust"
