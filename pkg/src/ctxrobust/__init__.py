"""Robustness measurement and certification of small piecewise-linear
image classifiers under contextual perturbations (haze, contrast, blur).
"""

from .tensor_nn import (
    Dataset,
    DatasetLoadError,
    ImageSample,
    Layer,
    Model,
    ModelLoadError,
    NpyFormatError,
    ShapeMismatchError,
    classify,
    forward,
    load_dataset,
    load_model,
    read_npy,
    write_npy,
)
from .perturb import (
    KernelWeights,
    PerturbationSpec,
    apply_blur,
    apply_contrast,
    apply_haze,
    gaussian_kernel,
    perturb,
)
from .search import (
    Counterexample,
    InconsistentEvidenceError,
    ResultSet,
    RobustnessInterval,
    evaluate_dataset,
    generate_counterexample,
    read_results_csv,
    robustness_interval,
    write_results_csv,
)
from .certify import (
    CertificationGapError,
    CertifiedBound,
    CleanMisclassificationError,
    EpsAffineForm,
    EpsSegment,
    Verdict,
    min_adversarial_epsilon,
    propagate_bounds,
    read_certified_csv,
    relax_relu,
    segment_from_haze,
    verify_haze,
    write_certified_csv,
)
from .reporting import (
    AccuracyCurve,
    ClassEpsStats,
    ComparisonRow,
    EpsDistribution,
    accuracy_curve,
    class_accuracy_curves,
    comparison_table,
    counterexample_strip,
    epsilon_distribution,
    svg_line_chart,
    uniform_grid,
    write_ppm,
    write_report,
)
from .figures import render_figures

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetLoadError",
    "ImageSample",
    "Layer",
    "Model",
    "ModelLoadError",
    "NpyFormatError",
    "ShapeMismatchError",
    "classify",
    "forward",
    "load_dataset",
    "load_model",
    "read_npy",
    "write_npy",
    "KernelWeights",
    "PerturbationSpec",
    "apply_blur",
    "apply_contrast",
    "apply_haze",
    "gaussian_kernel",
    "perturb",
    "Counterexample",
    "InconsistentEvidenceError",
    "ResultSet",
    "RobustnessInterval",
    "evaluate_dataset",
    "generate_counterexample",
    "read_results_csv",
    "robustness_interval",
    "write_results_csv",
    "CertificationGapError",
    "CertifiedBound",
    "CleanMisclassificationError",
    "EpsAffineForm",
    "EpsSegment",
    "Verdict",
    "min_adversarial_epsilon",
    "propagate_bounds",
    "read_certified_csv",
    "relax_relu",
    "segment_from_haze",
    "verify_haze",
    "write_certified_csv",
    "AccuracyCurve",
    "ClassEpsStats",
    "ComparisonRow",
    "EpsDistribution",
    "accuracy_curve",
    "class_accuracy_curves",
    "comparison_table",
    "counterexample_strip",
    "epsilon_distribution",
    "svg_line_chart",
    "uniform_grid",
    "write_ppm",
    "write_report",
    "render_figures",
    "__version__",
]
