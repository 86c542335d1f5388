"""Command-line entry point for reproducible robustness runs.

Subcommands: eval (test-based intervals for every model/sample pair),
verify (certified minimal adversarial haze severities), report (curves,
distributions, comparisons, figures), counterexample (misclassified image
pairs), demo (materialize the bundled toy suite).

Every run writes a JSON run-manifest with the artifact version, an
ISO-8601 timestamp, the full parameter block, and SHA-256 digests of all
input files. Standard output carries only data and written paths; all
diagnostics go to standard error.

Exit codes: 0 success; 1 configuration, loading, or missing-input errors;
2 evaluation errors (shape mismatches, inconsistent evidence); 3 a
certification query left an undecided gap wider than tol.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .certify import (
    CertificationGapError,
    CleanMisclassificationError,
    min_adversarial_epsilon,
    read_certified_csv,
    write_certified_csv,
)
from .demo import build_demo_suite
from .perturb import PerturbationSpec
from .reporting import (
    accuracy_curve,
    class_accuracy_curves,
    comparison_table,
    counterexample_strip,
    epsilon_distribution,
    uniform_grid,
    write_ppm,
    write_report,
)
from .search import (
    InconsistentEvidenceError,
    evaluate_dataset,
    generate_counterexample,
    read_results_csv,
    write_results_csv,
)
from .tensor_nn import (
    DatasetLoadError,
    ModelLoadError,
    NpyFormatError,
    ShapeMismatchError,
    classify,
    load_dataset,
    load_model,
)


class _ConfigError(Exception):
    pass


def _err(message: str) -> None:
    print(message, file=sys.stderr)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise _ConfigError(message)


def _parse_haze_color(text: str):
    parts = text.split(",")
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        values = ()
    _require(
        len(values) == 3 and all(0.0 <= v <= 1.0 for v in values),
        f"--haze-color must be three values in [0, 1] like 1,1,1, got {text!r}",
    )
    return values


def _build_spec(args) -> PerturbationSpec:
    color = _parse_haze_color(args.haze_color)
    _require(args.kd >= 1, f"--kd must be >= 1, got {args.kd}")
    _require(args.sigma_max > 0.0, f"--sigma-max must be positive, got {args.sigma_max}")
    return PerturbationSpec(
        kind=args.perturbation,
        haze_color=color,
        kernel_half_width=args.kd,
        sigma_max=args.sigma_max,
    )


def _check_workers(args) -> None:
    if args.workers is not None:
        _require(args.workers >= 1, f"--workers must be >= 1, got {args.workers}")


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_digests(model_paths, data_path) -> dict:
    """SHA-256 of every input file, manifests and the arrays they reference."""
    digests = {}
    for mp in model_paths or ():
        mp = Path(mp)
        digests[str(mp)] = _digest(mp)
        spec = json.loads(mp.read_text("utf-8"))
        for entry in spec.get("layers", []):
            for key in ("weights", "bias"):
                if key in entry:
                    ref = mp.parent / entry[key]
                    digests[str(ref)] = _digest(ref)
    if data_path is not None:
        dp = Path(data_path)
        digests[str(dp)] = _digest(dp)
        spec = json.loads(dp.read_text("utf-8"))
        for key in ("images", "labels"):
            ref = dp.parent / spec[key]
            digests[str(ref)] = _digest(ref)
    return digests


def _write_manifest(out_dir: Path, command: str, params: dict, inputs: dict) -> Path:
    manifest = {
        "artifact": "ctxrobust",
        "version": __version__,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "parameters": params,
        "inputs": inputs,
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_inputs(args):
    models = [load_model(p) for p in args.models]
    dataset = load_dataset(args.data)
    return models, dataset


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _select_samples(dataset, ids_csv: str | None, label: int | None):
    samples = list(dataset.samples)
    if ids_csv:
        wanted = ids_csv.split(",")
        known = {s.sample_id for s in samples}
        missing = [w for w in wanted if w not in known]
        _require(not missing, f"--samples names unknown ids: {','.join(missing)}")
        keep = set(wanted)
        samples = [s for s in samples if s.sample_id in keep]
    if label is not None:
        samples = [s for s in samples if s.label == label]
        _require(bool(samples), f"--label {label} matches no samples")
    return samples


def _print_paths(paths) -> None:
    for p in paths:
        print(p)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    spec = _build_spec(args)
    _require(0.0 < args.omega < 1.0, f"--omega must be in (0, 1), got {args.omega}")
    _check_workers(args)
    models, dataset = _load_inputs(args)
    out = _out_dir(args)
    _err(f"evaluating {len(models)} model(s) x {len(dataset.samples)} sample(s) under {spec.kind}")
    try:
        result_set = evaluate_dataset(models, dataset, spec, args.omega, args.workers)
    except (ShapeMismatchError, ValueError) as exc:
        _err(f"evaluation failed: {exc}")
        return 2
    results_path = out / "results.csv"
    write_results_csv(result_set, results_path)
    manifest = _write_manifest(
        out,
        "eval",
        {
            "models": [str(p) for p in args.models],
            "data": str(args.data),
            "perturbation": spec.kind,
            "haze_color": list(spec.haze_color),
            "kd": spec.kernel_half_width,
            "sigma_max": spec.sigma_max,
            "omega": args.omega,
            "workers": args.workers,
            "seed": args.seed,
        },
        _input_digests(args.models, args.data),
    )
    _print_paths([results_path, manifest])
    return 0


def cmd_verify(args) -> int:
    spec = _build_spec(args)
    _require(
        spec.kind == "haze",
        f"formal verification supports haze only, got --perturbation {spec.kind}",
    )
    _require(0.0 < args.tol < 1.0, f"--tol must be in (0, 1), got {args.tol}")
    _require(args.delta_min > 0.0, f"--delta-min must be positive, got {args.delta_min}")
    _require(0.0 < args.max_p <= 1.0, f"--max-p must be in (0, 1], got {args.max_p}")
    _require(args.limit is None or args.limit >= 1, f"--limit must be >= 1, got {args.limit}")
    models, dataset = _load_inputs(args)
    selected = _select_samples(dataset, args.samples, args.label)
    out = _out_dir(args)
    rows = []
    for model in models:
        certified = 0
        for sample in selected:
            correct = classify(model, sample.image) == sample.label
            if args.limit is not None:
                if not correct:
                    continue  # the limit counts correctly classified samples
                if certified >= args.limit:
                    break
            if not correct:
                rows.append((model.id, sample.sample_id, None))
                continue
            try:
                bound = min_adversarial_epsilon(
                    model, sample, spec.haze_color, args.tol, args.delta_min, args.max_p
                )
            except CertificationGapError as exc:
                _err(f"model {model.id!r}, sample {sample.sample_id!r}: {exc} "
                     f"(achieved gap {exc.gap:g})")
                return 3
            rows.append((model.id, sample.sample_id, bound))
            certified += 1
            _err(
                f"model {model.id!r} sample {sample.sample_id!r}: {bound.status} "
                f"robust_up_to={bound.robust_up_to:g}"
                + ("" if bound.adversarial_at is None else f" adversarial_at={bound.adversarial_at:g}")
            )
    certified_path = out / "certified.csv"
    write_certified_csv(rows, certified_path)
    manifest = _write_manifest(
        out,
        "verify",
        {
            "models": [str(p) for p in args.models],
            "data": str(args.data),
            "haze_color": list(spec.haze_color),
            "tol": args.tol,
            "delta_min": args.delta_min,
            "max_p": args.max_p,
            "samples": args.samples,
            "limit": args.limit,
            "label": args.label,
            "seed": args.seed,
        },
        _input_digests(args.models, args.data),
    )
    _print_paths([certified_path, manifest])
    return 0


def cmd_report(args) -> int:
    spec = _build_spec(args)
    _require(args.grid >= 2, f"--grid must be >= 2, got {args.grid}")
    _require(0.0 < args.tol < 1.0, f"--tol must be in (0, 1), got {args.tol}")
    _require(
        args.certified is None or args.results is not None,
        "--certified needs --results to compare against",
    )
    classes = None
    if args.classes:
        try:
            classes = [int(c) for c in args.classes.split(",")]
        except ValueError:
            raise _ConfigError(f"--classes must be comma-separated ints, got {args.classes!r}")
    models, dataset = _load_inputs(args)
    grid = uniform_grid(args.grid)
    out = _out_dir(args)
    curve_sets = {"model_curves": [accuracy_curve(m, dataset, spec, grid) for m in models]}
    for m in models:
        curves = class_accuracy_curves(m, dataset, spec, grid, classes)
        if curves:
            curve_sets[f"class_curves_{m.id}"] = curves
    distributions = []
    tables = {}
    paths = []
    if args.results:
        _require(Path(args.results).is_file(), f"results file not found: {args.results}")
        result_set = read_results_csv(args.results)
        for m in models:
            try:
                distributions.append(epsilon_distribution(result_set, m.id))
            except ValueError:
                _err(f"note: no result entries for model {m.id!r}; distribution skipped")
                continue
            paths.extend(
                counterexample_strip(m, dataset.samples, result_set, spec, out / f"strips_{m.id}")
            )
        if args.certified:
            _require(Path(args.certified).is_file(), f"certified file not found: {args.certified}")
            cert = read_certified_csv(args.certified)
            for m in models:
                certified_m = {sid: b for (mid, sid), b in cert.items() if mid == m.id}
                tested_m = {sid: iv for (mid, sid), iv in result_set.entries.items() if mid == m.id}
                common = set(certified_m) & set(tested_m)
                if not common:
                    _err(f"note: no overlapping samples for model {m.id!r}; comparison skipped")
                    continue
                tables[f"comparison_{m.id}"] = comparison_table(certified_m, tested_m, args.tol)
            _require(bool(tables), "--certified shares no (model, sample) keys with --results")
    paths = write_report(curve_sets, distributions, tables, out) + paths
    if not args.no_figures:
        from .figures import render_figures

        paths.extend(render_figures(curve_sets, distributions, out))
    manifest = _write_manifest(
        out,
        "report",
        {
            "models": [str(p) for p in args.models],
            "data": str(args.data),
            "perturbation": spec.kind,
            "haze_color": list(spec.haze_color),
            "kd": spec.kernel_half_width,
            "sigma_max": spec.sigma_max,
            "grid": args.grid,
            "tol": args.tol,
            "results": args.results and str(args.results),
            "certified": args.certified and str(args.certified),
            "classes": args.classes,
            "figures": not args.no_figures,
            "seed": args.seed,
        },
        _input_digests(args.models, args.data),
    )
    _print_paths(paths + [manifest])
    return 0


def cmd_counterexample(args) -> int:
    spec = _build_spec(args)
    _require(Path(args.results).is_file(), f"results file not found: {args.results}")
    models, dataset = _load_inputs(args)
    result_set = read_results_csv(args.results)
    selected = _select_samples(dataset, args.samples, None)
    out = _out_dir(args)
    paths = []
    manifest_rows = []
    found = 0
    for model in models:
        for sample in selected:
            key = (model.id, sample.sample_id)
            if key not in result_set.entries:
                _require(
                    not args.samples,
                    f"no result entry for model {model.id!r}, sample {sample.sample_id!r}",
                )
                continue
            found += 1
            interval = result_set.entries[key]
            cex = generate_counterexample(model, sample, interval, spec)
            stem = f"cex_{model.id}_{sample.sample_id}"
            original = f"{stem}_original.ppm"
            write_ppm(sample.image, out / original)
            paths.append(out / original)
            row = {
                "model_id": model.id,
                "sample_id": sample.sample_id,
                "status": interval.status,
                "true_label": sample.label,
                "original": original,
                "perturbed": None,
                "eps": None,
                "predicted_label": None,
                "note": "no counterexample",
            }
            if cex is not None:
                perturbed = f"{stem}_perturbed.ppm"
                write_ppm(cex.perturbed_image, out / perturbed)
                paths.append(out / perturbed)
                row.update(
                    {
                        "perturbed": perturbed,
                        "eps": cex.eps,
                        "predicted_label": cex.predicted_label,
                        "note": "",
                    }
                )
            manifest_rows.append(row)
    _require(found > 0, "results file has no entries for the given models and samples")
    listing = out / "counterexamples.json"
    listing.write_text(json.dumps(manifest_rows, indent=2, sort_keys=True) + "\n")
    paths.append(listing)
    manifest = _write_manifest(
        out,
        "counterexample",
        {
            "models": [str(p) for p in args.models],
            "data": str(args.data),
            "results": str(args.results),
            "perturbation": spec.kind,
            "haze_color": list(spec.haze_color),
            "kd": spec.kernel_half_width,
            "sigma_max": spec.sigma_max,
            "samples": args.samples,
            "seed": args.seed,
        },
        _input_digests(args.models, args.data),
    )
    _print_paths(paths + [manifest])
    return 0


def cmd_demo(args) -> int:
    out = _out_dir(args)
    suite = build_demo_suite(out, args.seed)
    produced = [str(p) for p in suite["model_manifests"]] + [str(suite["data_manifest"])]
    manifest = _write_manifest(
        out,
        "demo",
        {"seed": args.seed, "produced": produced},
        {},
    )
    _print_paths(suite["model_manifests"] + [suite["data_manifest"], manifest])
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_perturbation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--perturbation", choices=("haze", "contrast", "blur"), default="haze",
                   help="perturbation family (default haze)")
    p.add_argument("--haze-color", default="1,1,1", metavar="R,G,B",
                   help="haze target colour in [0,1] (default 1,1,1)")
    p.add_argument("--kd", type=int, default=2,
                   help="blur kernel half-width (default 2)")
    p.add_argument("--sigma-max", type=float, default=2.0,
                   help="blur sigma at full severity (default 2.0)")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory (default ./out)")
    p.add_argument("--seed", type=int, default=0, help="seed recorded in the run manifest")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default: executor's choice); results are worker-count invariant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxrobust",
        description="Measure and certify classifier robustness to haze, contrast, and blur.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="test-based robustness intervals for every model/sample")
    p_eval.add_argument("--models", nargs="+", required=True, help="model manifest JSON path(s)")
    p_eval.add_argument("--data", required=True, help="dataset manifest JSON path")
    p_eval.add_argument("--omega", type=float, default=0.002,
                        help="bisection termination width (default 0.002)")
    _add_perturbation_flags(p_eval)
    _add_common_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser("verify", help="certified minimal adversarial haze severity")
    p_verify.add_argument("--models", nargs="+", required=True)
    p_verify.add_argument("--data", required=True)
    p_verify.add_argument("--tol", type=float, default=0.002,
                          help="certified bracket width (default 0.002)")
    p_verify.add_argument("--delta-min", type=float, default=1e-6,
                          help="smallest subinterval before a region is set aside (default 1e-6)")
    p_verify.add_argument("--max-p", type=float, default=1.0,
                          help="verify severities in [0, max_p] (default 1.0)")
    p_verify.add_argument("--samples", default=None,
                          help="comma-separated sample ids (default: all)")
    p_verify.add_argument("--limit", type=int, default=None,
                          help="stop after this many correctly classified samples per model")
    p_verify.add_argument("--label", type=int, default=None, help="only samples with this label")
    _add_perturbation_flags(p_verify)
    _add_common_flags(p_verify)
    p_verify.set_defaults(func=cmd_verify)

    p_report = sub.add_parser("report", help="curves, distributions, comparisons, figures")
    p_report.add_argument("--models", nargs="+", required=True)
    p_report.add_argument("--data", required=True)
    p_report.add_argument("--grid", type=int, default=101,
                          help="severity grid points for curves (default 101)")
    p_report.add_argument("--tol", type=float, default=0.002,
                          help="agreement tolerance for comparisons (default 0.002)")
    p_report.add_argument("--results", default=None, help="results.csv from eval")
    p_report.add_argument("--certified", default=None, help="certified.csv from verify")
    p_report.add_argument("--classes", default=None, help="comma-separated class indices")
    p_report.add_argument("--no-figures", action="store_true", help="skip PNG figure rendering")
    _add_perturbation_flags(p_report)
    _add_common_flags(p_report)
    p_report.set_defaults(func=cmd_report)

    p_cex = sub.add_parser("counterexample", help="emit misclassified image pairs")
    p_cex.add_argument("--models", nargs="+", required=True)
    p_cex.add_argument("--data", required=True)
    p_cex.add_argument("--results", required=True, help="results.csv from eval")
    p_cex.add_argument("--samples", default=None, help="comma-separated sample ids (default: all)")
    _add_perturbation_flags(p_cex)
    _add_common_flags(p_cex)
    p_cex.set_defaults(func=cmd_counterexample)

    p_demo = sub.add_parser("demo", help="materialize the bundled demonstration suite")
    _add_common_flags(p_demo)
    p_demo.set_defaults(func=cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ConfigError as exc:
        _err(f"error: {exc}")
        return 1
    except (ModelLoadError, DatasetLoadError, NpyFormatError, FileNotFoundError) as exc:
        _err(f"error: {exc}")
        return 1
    except CertificationGapError as exc:
        _err(f"error: {exc}")
        return 3
    except (ShapeMismatchError, InconsistentEvidenceError, CleanMisclassificationError) as exc:
        _err(f"error: {exc}")
        return 2
    except OSError as exc:
        _err(f"error: {exc}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
