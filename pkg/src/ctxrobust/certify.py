"""Formal verification of classification invariance along the haze line.

Hazing is affine in its severity: x(eps) = x + eps*(C - x), so the whole
input set for eps in [lo, hi] is a line segment, and every activation of a
piecewise-linear network is bounded above and below by linear functions of
the single scalar eps. Affine layers propagate such bounds exactly; ReLU
is handled with a standard single-neuron linear relaxation. A 1-D branch
and bound over eps-subintervals then either

* proves the margin z_true - z_other strictly positive everywhere
  (robust; ties count as violations),
* finds a concrete misclassification at a probed eps (counterexample), or
* leaves subintervals narrower than delta_min undecided (unknown; never
  silently coerced to robust).

On top of the verifier, an outer bisection computes a certified bracket
[robust_up_to, adversarial_at] around the minimal adversarial eps.

Only haze is supported here: contrast is rational in eps and blur's kernel
weights are nonlinear in eps, so neither yields linear input segments.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .perturb import _haze_channels, apply_haze
from .tensor_nn import ImageSample, Model, classify, conv2d_apply

OUTCOME_ROBUST = "robust"
OUTCOME_COUNTEREXAMPLE = "counterexample"
OUTCOME_UNKNOWN = "unknown"

BOUND_CERTIFIED = "certified"
BOUND_ROBUST_FULL_RANGE = "robust_full_range"

CERTIFIED_CSV_COLUMNS = (
    "model_id",
    "sample_id",
    "outcome",
    "robust_up_to",
    "adversarial_at",
    "tol",
    "delta_min",
    "subintervals_explored",
)

# hard stop against adversarial regions fragmenting the worklist without end;
# whatever is left when the cap hits is reported as undecided mass
_MAX_SUBINTERVALS = 100_000


class CleanMisclassificationError(Exception):
    """The sample is already misclassified at eps=0; nothing to certify."""


class CertificationGapError(Exception):
    """Undecided verdicts stopped the bound gap from reaching tol."""

    def __init__(self, message: str, gap: float, p_lo: float, p_hi: float):
        super().__init__(message)
        self.gap = gap
        self.p_lo = p_lo
        self.p_hi = p_hi


@dataclass(frozen=True)
class EpsSegment:
    """The haze input line x(eps) = base + eps*direction over [lo, hi].

    base is the clean image (eps=0 anchor) and direction = C - x, both in
    float64, so evaluate(eps) reproduces the hazed input for any global
    eps, not just inside [lo, hi].
    """

    base: np.ndarray
    direction: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"bad segment range [{self.lo}, {self.hi}]")

    def evaluate(self, eps: float) -> np.ndarray:
        return self.base + eps * self.direction

    def narrowed(self, lo: float, hi: float) -> "EpsSegment":
        return EpsSegment(self.base, self.direction, lo, hi)


def segment_from_haze(image: np.ndarray, haze_color=(1.0, 1.0, 1.0), lo: float = 0.0, hi: float = 1.0) -> EpsSegment:
    """Build the input segment swept by hazing image toward haze_color."""
    target = _haze_channels(np.asarray(image), haze_color)
    base = np.asarray(image, dtype=np.float64)
    direction = np.broadcast_to(target, base.shape).astype(np.float64) - base
    return EpsSegment(base=base, direction=direction, lo=float(lo), hi=float(hi))


@dataclass(frozen=True)
class EpsAffineForm:
    """Per-neuron linear-in-eps bounds over [lo, hi].

    a_l*eps + b_l <= z(eps) <= a_u*eps + b_u for every eps in [lo, hi];
    the four arrays share the layer's output shape.
    """

    a_l: np.ndarray
    b_l: np.ndarray
    a_u: np.ndarray
    b_u: np.ndarray
    lo: float
    hi: float

    def lower_at(self, eps: float) -> np.ndarray:
        return self.a_l * eps + self.b_l

    def upper_at(self, eps: float) -> np.ndarray:
        return self.a_u * eps + self.b_u

    def concrete_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Elementwise [m, M] hull of the bounds over [lo, hi].

        Linear functions attain their extremes at interval endpoints, so
        two evaluations per side suffice.
        """
        m = np.minimum(self.lower_at(self.lo), self.lower_at(self.hi))
        M = np.maximum(self.upper_at(self.lo), self.upper_at(self.hi))
        return m, M

    def reshaped(self, shape) -> "EpsAffineForm":
        return EpsAffineForm(
            self.a_l.reshape(shape),
            self.b_l.reshape(shape),
            self.a_u.reshape(shape),
            self.b_u.reshape(shape),
            self.lo,
            self.hi,
        )


def relax_relu(form: EpsAffineForm, lo: float, hi: float) -> EpsAffineForm:
    """Push linear-in-eps bounds through ReLU.

    Per neuron, from the concrete pre-activation range [m, M]:
      m >= 0  -> identity (linear region),
      M <= 0  -> zero form (dead region),
      else    -> upper: chord  M/(M-m) * (upper_form - m), which dominates
                 ReLU on [m, M]; lower: keep the input lower form when
                 |M| >= |m| (ReLU(z) >= z), else the zero form.
    """
    m, M = form.concrete_range()
    active = m >= 0.0
    dead = ~active & (M <= 0.0)
    unstable = ~active & ~dead
    denom = np.where(unstable, M - m, 1.0)
    slope = np.where(unstable, M / denom, 0.0)
    a_u = np.where(active, form.a_u, slope * form.a_u)
    b_u = np.where(active, form.b_u, slope * (form.b_u - m))
    keep_lower = active | (unstable & (np.abs(M) >= np.abs(m)))
    a_l = np.where(keep_lower, form.a_l, 0.0)
    b_l = np.where(keep_lower, form.b_l, 0.0)
    return EpsAffineForm(a_l, b_l, a_u, b_u, lo, hi)


def _affine_split(a_l, b_l, a_u, b_u, apply_pos, apply_neg, bias):
    """Sign-split propagation through y = W x + b given W = W+ + W-.

    Lower output bounds take lower input bounds through W+ and upper
    bounds through W- (and symmetrically for the upper output bounds);
    bias lands on the intercepts once.
    """
    out_a_l = apply_pos(a_l) + apply_neg(a_u)
    out_b_l = apply_pos(b_l) + apply_neg(b_u) + bias
    out_a_u = apply_pos(a_u) + apply_neg(a_l)
    out_b_u = apply_pos(b_u) + apply_neg(b_l) + bias
    return out_a_l, out_b_l, out_a_u, out_b_u


def propagate_bounds(model: Model, segment: EpsSegment, record: list | None = None) -> EpsAffineForm:
    """Sound per-class linear-in-eps bounds over [segment.lo, segment.hi].

    The input form is exact (a = direction, b = base). Affine layers stay
    exact up to the sign-split combination of lower/upper forms; ReLU uses
    relax_relu. When record is a list, the post-layer form of every layer
    is appended to it, flattened forms matching the layer output shapes.
    """
    lo, hi = segment.lo, segment.hi
    form = EpsAffineForm(
        a_l=segment.direction.copy(),
        b_l=segment.base.copy(),
        a_u=segment.direction.copy(),
        b_u=segment.base.copy(),
        lo=lo,
        hi=hi,
    )
    for layer in model.layers:
        if layer.kind == "dense":
            w = np.asarray(layer.weights, dtype=np.float64)
            w_pos = np.maximum(w, 0.0)
            w_neg = np.minimum(w, 0.0)
            bias = np.asarray(layer.bias, dtype=np.float64)
            flat = form.reshaped(-1)
            a_l, b_l, a_u, b_u = _affine_split(
                flat.a_l, flat.b_l, flat.a_u, flat.b_u,
                lambda v: w_pos @ v, lambda v: w_neg @ v, bias,
            )
            form = EpsAffineForm(a_l, b_l, a_u, b_u, lo, hi)
        elif layer.kind == "conv2d":
            w = np.asarray(layer.weights, dtype=np.float64)
            w_pos = np.maximum(w, 0.0)
            w_neg = np.minimum(w, 0.0)
            bias = np.asarray(layer.bias, dtype=np.float64)
            stride, padding = layer.stride, layer.padding
            # zero padding is exact for the forms: padded cells are the
            # constant 0 regardless of eps
            conv_p = lambda v: conv2d_apply(v, w_pos, None, stride, padding)
            conv_n = lambda v: conv2d_apply(v, w_neg, None, stride, padding)
            a_l, b_l, a_u, b_u = _affine_split(
                form.a_l, form.b_l, form.a_u, form.b_u, conv_p, conv_n, bias
            )
            form = EpsAffineForm(a_l, b_l, a_u, b_u, lo, hi)
        elif layer.kind == "relu":
            form = relax_relu(form, lo, hi)
        elif layer.kind == "flatten":
            form = form.reshaped(-1)
        else:  # unreachable: Layer rejects unknown kinds at construction
            raise ValueError(f"unsupported layer kind {layer.kind!r}")
        if record is not None:
            record.append(form)
    return form.reshaped(-1)


@dataclass(frozen=True)
class Verdict:
    """Outcome of one verification query over [0, p].

    unknown_mass is the total width of undecided subintervals; robust
    demands it be exactly zero.
    """

    outcome: str
    counterexample_eps: float | None
    subintervals_explored: int
    unknown_mass: float

    def __post_init__(self):
        if self.outcome not in (OUTCOME_ROBUST, OUTCOME_COUNTEREXAMPLE, OUTCOME_UNKNOWN):
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.outcome == OUTCOME_ROBUST and self.unknown_mass != 0.0:
            raise ValueError("robust verdict with undecided mass")
        if self.outcome == OUTCOME_COUNTEREXAMPLE and self.counterexample_eps is None:
            raise ValueError("counterexample verdict without an eps")


def _margins_verified(form: EpsAffineForm, truth: int) -> bool:
    """True when lower(z_truth - z_j) > 0 over the whole interval, all j.

    Differencing lower-of-truth against upper-of-others is sound; the
    margin being linear in eps, its minimum sits at an endpoint. Strict
    inequality: an exact tie is a violation.
    """
    a = form.a_l[truth] - form.a_u
    b = form.b_l[truth] - form.b_u
    at_lo = a * form.lo + b
    at_hi = a * form.hi + b
    margin = np.minimum(at_lo, at_hi)
    margin[truth] = np.inf  # own class is not a competitor
    return bool(np.all(margin > 0.0))


def verify_haze(
    model: Model,
    sample: ImageSample,
    haze_color=(1.0, 1.0, 1.0),
    p: float = 1.0,
    delta_min: float = 1e-6,
    _label_cache: dict | None = None,
) -> Verdict:
    """Branch and bound over eps-subintervals of [0, p] for the haze query.

    Each popped subinterval is concretely probed at both endpoints and the
    midpoint (any misclassification ends the run with the smallest probed
    eps as counterexample), then checked against the propagated bounds; an
    unverified subinterval splits at its midpoint, left half first.
    Subintervals narrower than delta_min are set aside as undecided.
    """
    if not 0.0 < p <= 1.0 or math.isnan(p):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if delta_min <= 0.0:
        raise ValueError(f"delta_min must be positive, got {delta_min}")
    truth = sample.label
    cache = _label_cache if _label_cache is not None else {}

    def label_at(eps: float) -> int:
        if eps not in cache:
            cache[eps] = classify(model, apply_haze(sample.image, eps, haze_color))
        return cache[eps]

    if label_at(0.0) != truth:
        raise CleanMisclassificationError(
            f"sample {sample.sample_id!r} is misclassified with no perturbation applied"
        )
    segment = segment_from_haze(sample.image, haze_color, 0.0, p)
    stack = [(0.0, float(p))]
    explored = 0
    unknown_mass = 0.0
    while stack:
        if explored >= _MAX_SUBINTERVALS:
            unknown_mass += sum(hi - lo for lo, hi in stack)
            stack.clear()
            break
        lo, hi = stack.pop()
        explored += 1
        mid = 0.5 * (lo + hi)
        bad = sorted(e for e in (lo, mid, hi) if label_at(e) != truth)
        if bad:
            return Verdict(OUTCOME_COUNTEREXAMPLE, bad[0], explored, unknown_mass)
        form = propagate_bounds(model, segment.narrowed(lo, hi))
        if _margins_verified(form, truth):
            continue
        if hi - lo < delta_min or mid <= lo or mid >= hi:
            unknown_mass += hi - lo
            continue
        stack.append((mid, hi))
        stack.append((lo, mid))  # popped first: leftmost-first descent
    if unknown_mass == 0.0:
        return Verdict(OUTCOME_ROBUST, None, explored, 0.0)
    return Verdict(OUTCOME_UNKNOWN, None, explored, unknown_mass)


@dataclass(frozen=True)
class CertifiedBound:
    """Certified bracket around the minimal adversarial haze severity.

    robust_up_to is formally verified; adversarial_at is a concrete
    misclassification (None when the whole requested range verified, in
    which case status is robust_full_range).
    """

    robust_up_to: float
    adversarial_at: float | None
    tol: float
    delta_min: float
    status: str
    subintervals_explored: int

    def __post_init__(self):
        if self.status not in (BOUND_CERTIFIED, BOUND_ROBUST_FULL_RANGE):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == BOUND_CERTIFIED:
            if self.adversarial_at is None:
                raise ValueError("certified bound requires adversarial_at")
            if self.adversarial_at < self.robust_up_to:
                raise ValueError("adversarial_at below robust_up_to")
            if self.adversarial_at - self.robust_up_to > self.tol:
                raise ValueError("certified gap wider than tol")
        elif self.adversarial_at is not None:
            raise ValueError("robust_full_range carries no adversarial_at")


def min_adversarial_epsilon(
    model: Model,
    sample: ImageSample,
    haze_color=(1.0, 1.0, 1.0),
    tol: float = 0.002,
    delta_min: float = 1e-6,
    max_p: float = 1.0,
) -> CertifiedBound:
    """Bisect on the verified prefix to bracket the minimal adversarial eps.

    Maintains p_lo with [0, p_lo] proven robust and p_hi a concrete
    misclassification, seeded by verifying [0, max_p] whole; each verify
    of the midpoint prefix either advances p_lo or pulls p_hi down to the
    returned counterexample. Terminates when p_hi - p_lo <= tol. An
    unknown verdict along the way aborts with the gap achieved so far.
    """
    if not 0.0 < max_p <= 1.0:
        raise ValueError(f"max_p must lie in (0, 1], got {max_p}")
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    cache: dict = {}
    explored = 0
    verdict = verify_haze(model, sample, haze_color, max_p, delta_min, _label_cache=cache)
    explored += verdict.subintervals_explored
    if verdict.outcome == OUTCOME_ROBUST:
        return CertifiedBound(
            robust_up_to=float(max_p),
            adversarial_at=None,
            tol=tol,
            delta_min=delta_min,
            status=BOUND_ROBUST_FULL_RANGE,
            subintervals_explored=explored,
        )
    if verdict.outcome == OUTCOME_UNKNOWN:
        raise CertificationGapError(
            f"sample {sample.sample_id!r}: undecided mass {verdict.unknown_mass:g} "
            f"on [0, {max_p}], no bound achieved",
            gap=float(max_p),
            p_lo=0.0,
            p_hi=float(max_p),
        )
    p_lo, p_hi = 0.0, verdict.counterexample_eps
    while p_hi - p_lo > tol:
        p_mid = 0.5 * (p_lo + p_hi)
        if p_mid <= p_lo or p_mid >= p_hi:
            raise CertificationGapError(
                f"sample {sample.sample_id!r}: float resolution exhausted at gap "
                f"{p_hi - p_lo:g} before reaching tol {tol:g}",
                gap=p_hi - p_lo,
                p_lo=p_lo,
                p_hi=p_hi,
            )
        verdict = verify_haze(model, sample, haze_color, p_mid, delta_min, _label_cache=cache)
        explored += verdict.subintervals_explored
        if verdict.outcome == OUTCOME_ROBUST:
            p_lo = p_mid
        elif verdict.outcome == OUTCOME_COUNTEREXAMPLE:
            p_hi = verdict.counterexample_eps
        else:
            raise CertificationGapError(
                f"sample {sample.sample_id!r}: undecided mass {verdict.unknown_mass:g} "
                f"stalled the gap at {p_hi - p_lo:g} (tol {tol:g})",
                gap=p_hi - p_lo,
                p_lo=p_lo,
                p_hi=p_hi,
            )
    return CertifiedBound(
        robust_up_to=p_lo,
        adversarial_at=p_hi,
        tol=tol,
        delta_min=delta_min,
        status=BOUND_CERTIFIED,
        subintervals_explored=explored,
    )


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_certified_csv(entries, path) -> None:
    """Serialize (model_id, sample_id, CertifiedBound-or-None) triples.

    None marks a sample that was already misclassified clean; its row
    carries the outcome flag and empty numeric fields.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CERTIFIED_CSV_COLUMNS)
        for model_id, sample_id, bound in sorted(entries, key=lambda e: (e[0], e[1])):
            if bound is None:
                writer.writerow([model_id, sample_id, "misclassified_at_zero", "", "", "", "", ""])
            else:
                writer.writerow(
                    [
                        model_id,
                        sample_id,
                        bound.status,
                        _fmt(bound.robust_up_to),
                        _fmt(bound.adversarial_at),
                        _fmt(bound.tol),
                        _fmt(bound.delta_min),
                        bound.subintervals_explored,
                    ]
                )


def read_certified_csv(path) -> dict[tuple[str, str], CertifiedBound | None]:
    """Rebuild {(model_id, sample_id): CertifiedBound-or-None} from CSV."""
    out: dict[tuple[str, str], CertifiedBound | None] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CERTIFIED_CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected certified header {header}")
        for row in reader:
            model_id, sample_id, outcome, up_to, adv, tol, dmin, explored = row
            if outcome == "misclassified_at_zero":
                out[(model_id, sample_id)] = None
                continue
            out[(model_id, sample_id)] = CertifiedBound(
                robust_up_to=float(up_to),
                adversarial_at=float(adv) if adv else None,
                tol=float(tol),
                delta_min=float(dmin),
                status=outcome,
                subintervals_explored=int(explored),
            )
    return out
