"""Seeded builder for the bundled demonstration suite.

Materializes, deterministically from a seed, a self-contained working set:
20 labelled 8x8x3 images over 5 classes plus two classifiers that are
correct on the clean samples by construction (nearest-prototype layers),
so the robustness tooling has meaningful flips to find. One sample is
deliberately mislabelled to exercise the misclassified-at-zero paths.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor_nn import _write_labels_npy, conv2d_apply, write_npy

N_CLASSES = 5
IMAGE_SHAPE = (8, 8, 3)
SAMPLES_PER_CLASS = 4


def _prototypes(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.25, 0.75, size=(N_CLASSES,) + IMAGE_SHAPE)


def _write_linear_model(model_dir: Path, protos: np.ndarray) -> Path:
    """Nearest-prototype linear classifier: z_c = <x, P_c> - |P_c|^2 / 2."""
    w = protos.reshape(N_CLASSES, -1)
    b = -0.5 * np.sum(w * w, axis=1)
    write_npy(w, model_dir / "lin_dense_w.npy")
    write_npy(b, model_dir / "lin_dense_b.npy")
    manifest = {
        "id": "lin-proto",
        "input_shape": list(IMAGE_SHAPE),
        "num_classes": N_CLASSES,
        "layers": [
            {"kind": "flatten"},
            {"kind": "dense", "weights": "lin_dense_w.npy", "bias": "lin_dense_b.npy"},
        ],
    }
    path = model_dir / "lin-proto.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _write_conv_model(model_dir: Path, protos: np.ndarray, rng: np.random.Generator) -> Path:
    """Conv + ReLU feature map, then nearest prototype in feature space.

    Each filter is a small random stencil with a strong centre tap on one
    channel, so features track the image closely and stay mostly in the
    active ReLU region; negative biases leave some units dead for the
    certification path to reason about.
    """
    conv_w = rng.normal(0.0, 0.02, size=(4, 3, 3, 3))
    for k in range(4):
        conv_w[k, k % 3, 1, 1] += 0.45
    conv_b = np.array([-0.02, -0.05, -0.08, -0.11])
    # quantize to the stored precision before deriving the dense layer, so
    # the feature prototypes match what the loaded model will compute
    conv_w = conv_w.astype(np.float32).astype(np.float64)
    conv_b = conv_b.astype(np.float32).astype(np.float64)
    feats = []
    for c in range(N_CLASSES):
        f = conv2d_apply(protos[c], conv_w, conv_b, (1, 1), (1, 1))
        feats.append(np.maximum(f, 0.0).reshape(-1))
    feats = np.stack(feats)
    dense_b = -0.5 * np.sum(feats * feats, axis=1)
    write_npy(conv_w, model_dir / "conv_w.npy")
    write_npy(conv_b, model_dir / "conv_b.npy")
    write_npy(feats, model_dir / "conv_dense_w.npy")
    write_npy(dense_b, model_dir / "conv_dense_b.npy")
    manifest = {
        "id": "conv-proto",
        "input_shape": list(IMAGE_SHAPE),
        "num_classes": N_CLASSES,
        "layers": [
            {"kind": "conv2d", "weights": "conv_w.npy", "bias": "conv_b.npy",
             "stride": 1, "padding": 1},
            {"kind": "relu"},
            {"kind": "flatten"},
            {"kind": "dense", "weights": "conv_dense_w.npy", "bias": "conv_dense_b.npy"},
        ],
    }
    path = model_dir / "conv-proto.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def build_demo_suite(out_dir, seed: int = 7) -> dict:
    """Write the full suite under out_dir; returns the manifest paths."""
    out_dir = Path(out_dir)
    model_dir = out_dir / "models"
    data_dir = out_dir / "data"
    model_dir.mkdir(parents=True, exist_ok=True)
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    protos = _prototypes(rng)
    lin_path = _write_linear_model(model_dir, protos)
    conv_path = _write_conv_model(model_dir, protos, rng)
    n = N_CLASSES * SAMPLES_PER_CLASS
    images = np.empty((n,) + IMAGE_SHAPE)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = i % N_CLASSES
        images[i] = np.clip(protos[c] + rng.normal(0.0, 0.04, size=IMAGE_SHAPE), 0.0, 1.0)
        labels[i] = c
    # the last sample keeps its label but gets another class's appearance,
    # so both models misclassify it with no perturbation applied
    wrong = (labels[n - 1] + 2) % N_CLASSES
    images[n - 1] = np.clip(protos[wrong] + rng.normal(0.0, 0.02, size=IMAGE_SHAPE), 0.0, 1.0)
    write_npy(images, data_dir / "images.npy")
    _write_labels_npy(labels, data_dir / "labels.npy")
    data_manifest = {
        "images": "images.npy",
        "labels": "labels.npy",
        "class_names": [f"c{c}" for c in range(N_CLASSES)],
    }
    data_path = data_dir / "dataset.json"
    data_path.write_text(json.dumps(data_manifest, indent=2) + "\n")
    return {"model_manifests": [lin_path, conv_path], "data_manifest": data_path}
