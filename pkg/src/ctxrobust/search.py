"""Test-based robustness measurement: bisection over the severity eps.

For one (model, sample) pair the search brackets the first classification
flip it can find inside [0, 1] down to a width omega, yielding a
RobustnessInterval. Dataset-level evaluation runs every (model, sample)
pair and collects a ResultSet that serializes to CSV.

Bisection probes concrete points only, so it finds the first sign change
along its probe path; a model that recovers and fails again at lower eps
(non-monotone behaviour) can hide earlier flips. The certification module
exists to close that gap for haze.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .perturb import PerturbationSpec, perturb
from .tensor_nn import Dataset, ImageSample, Model, ShapeMismatchError, classify

STATUS_MISCLASSIFIED_AT_ZERO = "misclassified_at_zero"
STATUS_FLIP_FOUND = "flip_found"
STATUS_ROBUST_FULL_RANGE = "robust_full_range"

_STATUSES = (STATUS_MISCLASSIFIED_AT_ZERO, STATUS_FLIP_FOUND, STATUS_ROBUST_FULL_RANGE)

RESULTS_CSV_COLUMNS = (
    "model_id",
    "sample_id",
    "true_label",
    "status",
    "eps_lower",
    "eps_upper",
    "label_at_upper",
)


class InconsistentEvidenceError(Exception):
    """A recorded flip failed to reproduce on re-evaluation.

    Classification is deterministic, so this signals real nondeterminism
    (or corrupted evidence) and must abort the run.
    """


@dataclass(frozen=True)
class RobustnessInterval:
    """Bracket [eps_lower, eps_upper] around the first flip found.

    * misclassified_at_zero: the clean sample is already wrong; [0, 0].
    * flip_found: correct at eps_lower, concretely misclassified at
      eps_upper, width <= omega.
    * robust_full_range: no flip found anywhere, including eps=1; [1, 1].

    true_label is the ground truth (needed downstream because for the
    zero case neither endpoint label equals it). midpoint_probes counts
    bisection midpoint evaluations; None when reconstructed from CSV.
    """

    eps_lower: float
    eps_upper: float
    status: str
    label_at_lower: int
    label_at_upper: int
    true_label: int
    midpoint_probes: int | None = None

    def __post_init__(self):
        if self.status not in _STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if not 0.0 <= self.eps_lower <= self.eps_upper <= 1.0:
            raise ValueError(
                f"bad interval [{self.eps_lower}, {self.eps_upper}]"
            )
        if self.status == STATUS_MISCLASSIFIED_AT_ZERO:
            if self.eps_lower != 0.0 or self.eps_upper != 0.0:
                raise ValueError("misclassified_at_zero requires [0, 0]")
            if self.label_at_upper == self.true_label:
                raise ValueError("misclassified_at_zero with a correct label")
        elif self.status == STATUS_ROBUST_FULL_RANGE:
            if self.eps_lower != 1.0 or self.eps_upper != 1.0:
                raise ValueError("robust_full_range requires [1, 1]")
            if self.label_at_lower != self.true_label or self.label_at_upper != self.true_label:
                raise ValueError("robust_full_range with a wrong label")
        else:
            if self.label_at_lower != self.true_label:
                raise ValueError("flip_found must be correct at eps_lower")
            if self.label_at_upper == self.true_label:
                raise ValueError("flip_found must be wrong at eps_upper")


@dataclass(frozen=True)
class Counterexample:
    """A concrete perturbed image on which the model predicts wrongly."""

    sample_id: str
    eps: float
    perturbed_image: np.ndarray
    true_label: int
    predicted_label: int


@dataclass(frozen=True)
class ResultSet:
    """All intervals of one evaluation run, keyed by (model_id, sample_id).

    perturbation/omega are None when the set was reconstructed from CSV
    (the CSV stores rows only; run parameters live in the run manifest).
    """

    entries: dict[tuple[str, str], RobustnessInterval]
    perturbation: PerturbationSpec | None = None
    omega: float | None = None


def robustness_interval(
    model: Model,
    sample: ImageSample,
    spec: PerturbationSpec,
    omega: float = 0.002,
) -> RobustnessInterval:
    """Bracket the first flip along eps in [0, 1] down to width omega.

    Probes eps=0 and eps=1 first, then bisects with the initial midpoint
    0.5; every midpoint evaluation halves the interval, so flip results
    take exactly ceil(log2(1/omega)) midpoint probes. All endpoints are
    dyadic rationals, hence exact floats.
    """
    if not 0.0 < omega < 1.0 or math.isnan(omega):
        raise ValueError(f"omega must lie in (0, 1), got {omega}")
    truth = sample.label
    pred_clean = classify(model, sample.image)
    if pred_clean != truth:
        return RobustnessInterval(
            0.0, 0.0, STATUS_MISCLASSIFIED_AT_ZERO, pred_clean, pred_clean, truth, 0
        )
    pred_one = classify(model, perturb(sample.image, 1.0, spec))
    flip_label = pred_one if pred_one != truth else None
    lo, hi = 0.0, 1.0
    probes = 0
    while hi - lo > omega:
        mid = 0.5 * (lo + hi)
        pred = classify(model, perturb(sample.image, mid, spec))
        probes += 1
        if pred == truth:
            lo = mid
        else:
            hi = mid
            flip_label = pred
    if flip_label is None:
        return RobustnessInterval(
            1.0, 1.0, STATUS_ROBUST_FULL_RANGE, truth, truth, truth, probes
        )
    # hi was either concretely misclassified during bisection or is the
    # eps=1 probe itself; either way the evidence is concrete.
    return RobustnessInterval(lo, hi, STATUS_FLIP_FOUND, truth, flip_label, truth, probes)


def evaluate_dataset(
    models,
    dataset: Dataset,
    spec: PerturbationSpec,
    omega: float = 0.002,
    workers: int | None = None,
) -> ResultSet:
    """Run robustness_interval for every (model, sample) pair.

    Pure function of its inputs: results are keyed, not appended, so the
    outcome is identical for any worker count.
    """
    if isinstance(models, Model):
        models = (models,)
    models = tuple(models)
    if workers is not None and workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    ids = [m.id for m in models]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate model ids: {ids}")
    sids = [s.sample_id for s in dataset.samples]
    if len(set(sids)) != len(sids):
        raise ValueError("duplicate sample ids in dataset")
    shapes = {tuple(s.image.shape) for s in dataset.samples}
    for m in models:
        bad = [s for s in shapes if s != m.input_shape]
        if bad:
            raise ShapeMismatchError(
                f"model {m.id!r} expects {m.input_shape}, dataset has {bad[0]}"
            )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            (m.id, s.sample_id): pool.submit(robustness_interval, m, s, spec, omega)
            for m in models
            for s in dataset.samples
        }
        entries = {key: fut.result() for key, fut in futures.items()}
    return ResultSet(entries=entries, perturbation=spec, omega=omega)


def generate_counterexample(
    model: Model,
    sample: ImageSample,
    interval: RobustnessInterval,
    spec: PerturbationSpec,
) -> Counterexample | None:
    """Materialize the misclassified image an interval points at.

    robust_full_range has no counterexample (None). The flip evidence is
    re-checked: a correct classification at eps_upper means the recorded
    interval cannot be trusted, which is a hard error.
    """
    if interval.status == STATUS_ROBUST_FULL_RANGE:
        return None
    eps = interval.eps_upper  # 0.0 for misclassified_at_zero
    image = perturb(sample.image, eps, spec)
    predicted = classify(model, image)
    if predicted == sample.label:
        raise InconsistentEvidenceError(
            f"sample {sample.sample_id!r}: classification at eps={eps} is correct "
            f"but the interval recorded status {interval.status!r}"
        )
    return Counterexample(
        sample_id=sample.sample_id,
        eps=eps,
        perturbed_image=image,
        true_label=sample.label,
        predicted_label=predicted,
    )


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_results_csv(result_set: ResultSet, path) -> None:
    """One row per entry, sorted by (model_id, sample_id), repr'd floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_CSV_COLUMNS)
        for (model_id, sample_id) in sorted(result_set.entries):
            iv = result_set.entries[(model_id, sample_id)]
            writer.writerow(
                [
                    model_id,
                    sample_id,
                    iv.true_label,
                    iv.status,
                    _fmt_float(iv.eps_lower),
                    _fmt_float(iv.eps_upper),
                    iv.label_at_upper,
                ]
            )


def read_results_csv(path) -> ResultSet:
    """Rebuild a ResultSet from its CSV serialization.

    label_at_lower is reconstructed (ground truth unless the clean sample
    was already wrong); run parameters are not stored in the CSV, so
    perturbation/omega come back as None.
    """
    entries: dict[tuple[str, str], RobustnessInterval] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(RESULTS_CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected results header {header}")
        for row in reader:
            model_id, sample_id, true_label, status, lo, hi, label_up = row
            truth = int(true_label)
            upper = int(label_up)
            lower = upper if status == STATUS_MISCLASSIFIED_AT_ZERO else truth
            entries[(model_id, sample_id)] = RobustnessInterval(
                float(lo), float(hi), status, lower, upper, truth, None
            )
    return ResultSet(entries=entries)
