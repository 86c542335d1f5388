"""Analysis artifacts: accuracy-vs-eps curves, per-class severity
distributions, counterexample image strips, and certified-vs-tested
comparison tables, serialized as CSV, standalone SVG, and binary PPM.

Curves are computed by direct grid evaluation, never reconstructed from
bisection intervals: an interval certifies only its endpoints, and models
that recover at higher severities would corrupt interval-derived curves.

All emitters are deterministic: identical inputs produce byte-identical
files, and no file embeds absolute paths.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .certify import CertifiedBound
from .perturb import PerturbationSpec, perturb
from .search import (
    STATUS_FLIP_FOUND,
    STATUS_MISCLASSIFIED_AT_ZERO,
    STATUS_ROBUST_FULL_RANGE,
    ResultSet,
    RobustnessInterval,
)
from .tensor_nn import Dataset, Model, classify

CURVE_CSV_HEADER = ("eps", "accuracy")
CLASS_CURVE_CSV_HEADER = ("eps", "accuracy", "class")
DISTRIBUTION_CSV_HEADER = (
    "class", "min", "q1", "median", "q3", "max",
    "n_flip", "n_robust", "n_misclassified_at_zero",
)
COMPARISON_CSV_HEADER = ("sample_id", "certified_adversarial_at", "tested_eps_upper", "agree")

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def uniform_grid(points: int = 101) -> np.ndarray:
    """Evenly spaced severity grid over [0, 1] with exact endpoints."""
    if points < 2:
        raise ValueError(f"grid needs at least 2 points, got {points}")
    return np.linspace(0.0, 1.0, points)


@dataclass(frozen=True)
class AccuracyCurve:
    """Accuracy as a function of the severity eps for one model.

    class_filter marks a curve computed over one class's samples only.
    """

    model_id: str
    eps_grid: np.ndarray
    accuracy: np.ndarray
    class_filter: int | None = None

    def __post_init__(self):
        grid = np.asarray(self.eps_grid, dtype=np.float64)
        acc = np.asarray(self.accuracy, dtype=np.float64)
        if grid.ndim != 1 or grid.shape != acc.shape:
            raise ValueError("grid and accuracy must be 1-d and congruent")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0.0) or grid[-1] > 1.0:
            raise ValueError("grid must ascend strictly from 0 within [0, 1]")
        if np.any(acc < 0.0) or np.any(acc > 1.0):
            raise ValueError("accuracy values must lie in [0, 1]")

    @property
    def label(self) -> str:
        if self.class_filter is None:
            return self.model_id
        return f"{self.model_id} class {self.class_filter}"


def accuracy_curve(model: Model, dataset: Dataset, spec: PerturbationSpec, eps_grid=None) -> AccuracyCurve:
    """Fraction of correctly classified samples at each grid severity."""
    samples = dataset.samples
    if not samples:
        raise ValueError("empty dataset")
    grid = uniform_grid() if eps_grid is None else np.asarray(eps_grid, dtype=np.float64)
    counts = np.zeros(grid.shape[0], dtype=np.int64)
    for i, eps in enumerate(grid):
        counts[i] = sum(
            classify(model, perturb(s.image, float(eps), spec)) == s.label for s in samples
        )
    return AccuracyCurve(model.id, grid, counts / len(samples))


def class_accuracy_curves(
    model: Model,
    dataset: Dataset,
    spec: PerturbationSpec,
    eps_grid=None,
    classes=None,
) -> list[AccuracyCurve]:
    """One curve per class; classes without samples are skipped with a warning."""
    if classes is None:
        classes = range(model.num_classes)
    curves = []
    for c in classes:
        members = tuple(s for s in dataset.samples if s.label == c)
        if not members:
            warnings.warn(f"class {c} has no samples; skipped", stacklevel=2)
            continue
        sub = accuracy_curve(model, Dataset(samples=members), spec, eps_grid)
        curves.append(AccuracyCurve(model.id, sub.eps_grid, sub.accuracy, class_filter=int(c)))
    return curves


@dataclass(frozen=True)
class ClassEpsStats:
    """Five-number summary of flip severities for one class.

    The pool holds eps_upper of flip_found entries plus 0.0 for each
    clean-misclassified sample; robust samples are only counted. All five
    summary values are None when the pool is empty. Outliers are flip
    severities beyond the 1.5*IQR fences.
    """

    minimum: float | None
    q1: float | None
    median: float | None
    q3: float | None
    maximum: float | None
    outliers: tuple[float, ...]
    n_flip: int
    n_robust: int
    n_misclassified_at_zero: int

    def __post_init__(self):
        values = (self.minimum, self.q1, self.median, self.q3, self.maximum)
        if any(v is None for v in values):
            if any(v is not None for v in values):
                raise ValueError("summary values must be all set or all None")
        elif not (self.minimum <= self.q1 <= self.median <= self.q3 <= self.maximum):
            raise ValueError(f"summary out of order: {values}")


@dataclass(frozen=True)
class EpsDistribution:
    model_id: str
    per_class: dict[int, ClassEpsStats]


def epsilon_distribution(result_set: ResultSet, model_id: str) -> EpsDistribution:
    """Per-class severity statistics for one model's result entries.

    Quantiles use linear interpolation between order statistics; min and
    max are the data extremes.
    """
    entries = {
        sid: iv for (mid, sid), iv in result_set.entries.items() if mid == model_id
    }
    if not entries:
        raise ValueError(f"result set has no entries for model {model_id!r}")
    per_class: dict[int, ClassEpsStats] = {}
    for c in sorted({iv.true_label for iv in entries.values()}):
        ivs = [iv for iv in entries.values() if iv.true_label == c]
        flips = sorted(iv.eps_upper for iv in ivs if iv.status == STATUS_FLIP_FOUND)
        n_mis = sum(1 for iv in ivs if iv.status == STATUS_MISCLASSIFIED_AT_ZERO)
        n_robust = sum(1 for iv in ivs if iv.status == STATUS_ROBUST_FULL_RANGE)
        pool = flips + [0.0] * n_mis
        if pool:
            lo, q1, med, q3, hi = (float(v) for v in np.quantile(pool, (0.0, 0.25, 0.5, 0.75, 1.0)))
            fence = 1.5 * (q3 - q1)
            outliers = tuple(v for v in flips if v < q1 - fence or v > q3 + fence)
            per_class[c] = ClassEpsStats(lo, q1, med, q3, hi, outliers, len(flips), n_robust, n_mis)
        else:
            per_class[c] = ClassEpsStats(None, None, None, None, None, (), 0, n_robust, n_mis)
    return EpsDistribution(model_id=model_id, per_class=per_class)


@dataclass(frozen=True)
class ComparisonRow:
    """One sample's certified vs test-based adversarial severity.

    Either side is None when that method found no adversarial evidence
    (robust over the full range); clean misclassification counts as 0.0.
    """

    sample_id: str
    certified_adversarial_at: float | None
    tested_eps_upper: float | None
    agree: bool


def comparison_table(
    certified: dict[str, CertifiedBound | None],
    tested: dict[str, RobustnessInterval],
    tol: float = 0.002,
) -> list[ComparisonRow]:
    """Join certified bounds and test intervals on sample_id.

    Agreement: both robust, or both adversarial within tol (the bound's
    own tol when available).
    """
    keys = sorted(set(certified) & set(tested))
    if not keys:
        raise ValueError("certified and tested results share no sample ids")
    rows = []
    for sid in keys:
        bound = certified[sid]
        iv = tested[sid]
        cert_at = None
        row_tol = tol
        if bound is None:
            cert_at = 0.0  # misclassified with no perturbation applied
        elif bound.adversarial_at is not None:
            cert_at = bound.adversarial_at
            row_tol = bound.tol
        test_at = None if iv.status == STATUS_ROBUST_FULL_RANGE else iv.eps_upper
        if cert_at is None or test_at is None:
            agree = cert_at is None and test_at is None
        else:
            agree = abs(cert_at - test_at) <= row_tol
        rows.append(ComparisonRow(sid, cert_at, test_at, agree))
    return rows


# ---------------------------------------------------------------------------
# File emitters
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_ppm(image: np.ndarray, path) -> None:
    """Binary PPM (P6, maxval 255); 8-bit values are round(255*v).

    Single-channel images are replicated to grey RGB.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    h, w, _ = arr.shape
    data = np.rint(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def counterexample_strip(
    model: Model,
    samples,
    result_set: ResultSet,
    spec: PerturbationSpec,
    out_dir,
) -> list[Path]:
    """Per class: the first sample as-is plus the same sample perturbed at
    the class-average flip severity, as PPM files with a JSON manifest.

    Classes whose pool is empty (entirely robust) get the original image
    only, flagged "no counterexample" in the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with_entries = [s for s in samples if (model.id, s.sample_id) in result_set.entries]
    if not with_entries:
        raise ValueError(f"result set has no entries for model {model.id!r} on these samples")
    paths: list[Path] = []
    manifest = []
    for c in sorted({s.label for s in with_entries}):
        rep = next(s for s in with_entries if s.label == c)
        pool = []
        for s in with_entries:
            if s.label != c:
                continue
            iv = result_set.entries[(model.id, s.sample_id)]
            if iv.status == STATUS_FLIP_FOUND:
                pool.append(iv.eps_upper)
            elif iv.status == STATUS_MISCLASSIFIED_AT_ZERO:
                pool.append(0.0)
        original = f"strip_class{c}_original.ppm"
        write_ppm(rep.image, out_dir / original)
        paths.append(out_dir / original)
        entry = {
            "class": int(c),
            "sample_id": rep.sample_id,
            "original": original,
            "perturbed": None,
            "avg_eps_upper": None,
            "note": "no counterexample",
        }
        if pool:
            avg = float(np.mean(pool))
            perturbed = f"strip_class{c}_perturbed.ppm"
            write_ppm(perturb(rep.image, avg, spec), out_dir / perturbed)
            paths.append(out_dir / perturbed)
            entry.update({"perturbed": perturbed, "avg_eps_upper": avg, "note": ""})
        manifest.append(entry)
    manifest_path = out_dir / "strip_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    paths.append(manifest_path)
    return paths


def svg_line_chart(curves, title: str) -> str:
    """Standalone SVG line chart, axes fixed to [0, 1] x [0, 1].

    Pure string assembly with %.2f coordinates, hence byte-deterministic.
    """
    left, right, top, bottom = 70.0, 610.0, 50.0, 430.0

    def sx(t: float) -> float:
        return left + (right - left) * t

    def sy(a: float) -> float:
        return bottom - (bottom - top) * a

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 640 480">',
        '<rect x="0" y="0" width="640" height="480" fill="#ffffff"/>',
        f'<text x="320" y="28" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>',
    ]
    for i in range(6):
        t = i / 5.0
        x, y = sx(t), sy(t)
        parts.append(
            f'<line x1="{x:.2f}" y1="{top:.2f}" x2="{x:.2f}" y2="{bottom:.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{left:.2f}" y1="{y:.2f}" x2="{right:.2f}" y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{bottom + 18:.2f}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:.1f}</text>'
        )
        parts.append(
            f'<text x="{left - 8:.2f}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{t:.1f}</text>'
        )
    parts.append(
        f'<rect x="{left:.2f}" y="{top:.2f}" width="{right - left:.2f}" height="{bottom - top:.2f}" fill="none" stroke="#000000" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{(left + right) / 2:.2f}" y="465" text-anchor="middle" font-family="sans-serif" font-size="13">perturbation level</text>'
    )
    parts.append(
        f'<text x="18" y="{(top + bottom) / 2:.2f}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {(top + bottom) / 2:.2f})">accuracy</text>'
    )
    for k, curve in enumerate(curves):
        color = _PALETTE[k % len(_PALETTE)]
        points = " ".join(
            f"{sx(float(e)):.2f},{sy(float(a)):.2f}"
            for e, a in zip(curve.eps_grid, curve.accuracy)
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = top + 16 + 16 * k
        parts.append(
            f'<line x1="{right - 150:.2f}" y1="{ly:.2f}" x2="{right - 126:.2f}" y2="{ly:.2f}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{right - 120:.2f}" y="{ly + 4:.2f}" font-family="sans-serif" font-size="12">{curve.label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report(curve_sets, distributions, tables, out_dir) -> list[Path]:
    """Emit every artifact: per-set SVG charts, per-curve CSVs (class
    curves grouped per model with a class column), distribution CSVs, and
    comparison CSVs. Returns the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    for name in sorted(curve_sets):
        curves = list(curve_sets[name])
        if not curves:
            continue
        svg_path = out_dir / f"{name}.svg"
        svg_path.write_text(svg_line_chart(curves, name))
        paths.append(svg_path)
        plain = [c for c in curves if c.class_filter is None]
        for curve in plain:
            p = out_dir / f"curve_{curve.model_id}.csv"
            _write_csv(
                p,
                CURVE_CSV_HEADER,
                ([_fmt(e), _fmt(a)] for e, a in zip(curve.eps_grid, curve.accuracy)),
            )
            paths.append(p)
        by_model: dict[str, list[AccuracyCurve]] = {}
        for curve in curves:
            if curve.class_filter is not None:
                by_model.setdefault(curve.model_id, []).append(curve)
        for model_id in sorted(by_model):
            p = out_dir / f"class_curves_{model_id}.csv"
            rows = []
            for curve in sorted(by_model[model_id], key=lambda c: c.class_filter):
                rows.extend(
                    [_fmt(e), _fmt(a), curve.class_filter]
                    for e, a in zip(curve.eps_grid, curve.accuracy)
                )
            _write_csv(p, CLASS_CURVE_CSV_HEADER, rows)
            paths.append(p)
    for dist in distributions:
        p = out_dir / f"distribution_{dist.model_id}.csv"
        rows = []
        for c in sorted(dist.per_class):
            st = dist.per_class[c]
            rows.append(
                [
                    c,
                    _fmt(st.minimum), _fmt(st.q1), _fmt(st.median), _fmt(st.q3), _fmt(st.maximum),
                    st.n_flip, st.n_robust, st.n_misclassified_at_zero,
                ]
            )
        _write_csv(p, DISTRIBUTION_CSV_HEADER, rows)
        paths.append(p)
    for name in sorted(tables):
        p = out_dir / f"{name}.csv"
        _write_csv(
            p,
            COMPARISON_CSV_HEADER,
            (
                [r.sample_id, _fmt(r.certified_adversarial_at), _fmt(r.tested_eps_upper),
                 "true" if r.agree else "false"]
                for r in tables[name]
            ),
        )
        paths.append(p)
    return paths
