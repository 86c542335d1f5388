"""Array I/O, model/dataset loading, and exact forward inference.

Images are float32 numpy arrays of shape (H, W, C) with values in [0, 1].
Networks are restricted to layer kinds {dense, conv2d, relu, flatten} so
that every loadable model stays piecewise linear. Weights are stored in
32-bit floats; dot products accumulate in 64-bit for reproducible sums.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LAYER_KINDS = ("dense", "conv2d", "relu", "flatten")

_NPY_MAGIC = b"\x93NUMPY"
_NPY_ALIGN = 64
_FLOAT_DESCRS = ("<f4", "<f8")
_LABEL_DESCRS = ("<i8",)


class NpyFormatError(Exception):
    """Raised for malformed or unsupported NPY files."""


class ModelLoadError(Exception):
    """Raised when a model manifest or its weight files are invalid."""


class DatasetLoadError(Exception):
    """Raised when a dataset manifest or its arrays are invalid."""


class ShapeMismatchError(Exception):
    """Raised when an input does not match a model's declared shape."""


# ---------------------------------------------------------------------------
# NPY v1.0 reader/writer
# ---------------------------------------------------------------------------

def _read_npy_raw(path, allowed_descrs):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:6] != _NPY_MAGIC:
        raise NpyFormatError(f"{path}: missing NPY magic bytes")
    major, minor = raw[6], raw[7]
    if major != 1 or minor != 0:
        raise NpyFormatError(f"{path}: unsupported NPY version {major}.{minor}")
    (header_len,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise NpyFormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise NpyFormatError(f"{path}: unparsable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError(f"{path}: malformed header dict")
    if header["fortran_order"]:
        raise NpyFormatError(f"{path}: Fortran-order arrays are not supported")
    descr = header["descr"]
    if descr not in allowed_descrs:
        raise NpyFormatError(f"{path}: unsupported dtype {descr!r}")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise NpyFormatError(f"{path}: malformed shape {shape!r}")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    data = np.frombuffer(raw[header_end:], dtype=np.dtype(descr), count=-1)
    if data.size != count:
        raise NpyFormatError(f"{path}: payload holds {data.size} elements, header says {count}")
    return data.reshape(shape)


def read_npy(path) -> np.ndarray:
    """Read a little-endian float NPY v1.0 file as a float32 array.

    64-bit payloads are narrowed to 32-bit. Fortran-order files and any
    dtype other than <f4/<f8 are rejected.
    """
    arr = _read_npy_raw(path, _FLOAT_DESCRS)
    return np.ascontiguousarray(arr, dtype=np.float32)


def _write_npy_raw(arr: np.ndarray, path, descr: str) -> None:
    if arr.size == 0:
        raise ValueError("refusing to write an empty array")
    shape = arr.shape
    shape_repr = "(%s)" % (", ".join(str(d) for d in shape) + ("," if len(shape) == 1 else ""))
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (descr, shape_repr)
    # pad with spaces + terminating newline so magic+header is 64-byte aligned
    unpadded = len(_NPY_MAGIC) + 4 + len(header) + 1
    pad = (-unpadded) % _NPY_ALIGN
    header = header + " " * pad + "\n"
    with open(path, "wb") as fh:
        fh.write(_NPY_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def write_npy(tensor: np.ndarray, path) -> None:
    """Write a float32 array as NPY v1.0 (dtype <f4, C order).

    Round-trips bit-exactly through read_npy.
    """
    _write_npy_raw(np.asarray(tensor, dtype=np.float32), path, "<f4")


def _write_labels_npy(labels, path) -> None:
    """Internal: labels are <i8, outside the float-only public contract."""
    _write_npy_raw(np.asarray(labels, dtype="<i8"), path, "<i8")


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Layer:
    """One network layer; only piecewise-linear kinds are representable.

    dense weights are (out, in); conv2d weights are (out_c, in_c, kh, kw)
    with zero padding and cross-correlation semantics.
    """

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ModelLoadError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class Model:
    id: str
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    num_classes: int

    def __post_init__(self):
        shape = check_layer_chain(self.layers, self.input_shape)
        if int(np.prod(shape)) != self.num_classes:
            raise ModelLoadError(
                f"model {self.id!r}: final layer yields {int(np.prod(shape))} values, "
                f"declared num_classes is {self.num_classes}"
            )


@dataclass(frozen=True)
class ImageSample:
    image: np.ndarray
    label: int
    sample_id: str


@dataclass(frozen=True)
class Dataset:
    samples: tuple[ImageSample, ...]
    class_names: tuple[str, ...] = field(default=())


def _out_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind == "relu":
        return shape
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "dense":
        out_n, in_n = layer.weights.shape
        if int(np.prod(shape)) != in_n:
            raise ModelLoadError(
                f"dense layer expects {in_n} inputs, upstream shape {shape} has {int(np.prod(shape))}"
            )
        return (out_n,)
    # conv2d
    if len(shape) != 3:
        raise ModelLoadError(f"conv2d needs an (H, W, C) input, got shape {shape}")
    h, w, c = shape
    out_c, in_c, kh, kw = layer.weights.shape
    if in_c != c:
        raise ModelLoadError(f"conv2d expects {in_c} input channels, upstream has {c}")
    sh, sw = layer.stride
    ph, pw = layer.padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ModelLoadError(f"conv2d kernel {kh}x{kw} too large for input {shape}")
    return (oh, ow, out_c)


def check_layer_chain(layers, input_shape) -> tuple[int, ...]:
    """Shape-check the full chain; returns the output shape."""
    shape = tuple(int(d) for d in input_shape)
    for layer in layers:
        if layer.kind in ("dense", "conv2d"):
            if layer.weights is None or layer.bias is None:
                raise ModelLoadError(f"{layer.kind} layer is missing weights or bias")
            n_out = layer.weights.shape[0]
            if layer.bias.shape != (n_out,):
                raise ModelLoadError(
                    f"{layer.kind} bias shape {layer.bias.shape} does not match {n_out} outputs"
                )
        shape = _out_shape(layer, shape)
    return shape


def _pair(value, what: str) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (int(value[0]), int(value[1]))
    raise ModelLoadError(f"bad {what}: {value!r}")


def load_model(manifest_path) -> Model:
    """Load a model from a JSON manifest referencing NPY weight files."""
    manifest_path = Path(manifest_path)
    try:
        spec = json.loads(manifest_path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"cannot parse {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    layers = []
    for entry in spec.get("layers", []):
        kind = entry.get("kind")
        if kind not in LAYER_KINDS:
            raise ModelLoadError(f"unknown layer kind {kind!r} in {manifest_path}")
        if kind in ("dense", "conv2d"):
            try:
                weights = read_npy(base / entry["weights"])
                bias = read_npy(base / entry["bias"])
            except FileNotFoundError as exc:
                raise ModelLoadError(f"missing weight file: {exc}") from exc
            expected_ndim = 2 if kind == "dense" else 4
            if weights.ndim != expected_ndim:
                raise ModelLoadError(
                    f"{kind} weights must be {expected_ndim}-d, got shape {weights.shape}"
                )
            layers.append(
                Layer(
                    kind=kind,
                    weights=weights,
                    bias=bias,
                    stride=_pair(entry.get("stride", 1), "stride"),
                    padding=_pair(entry.get("padding", 0), "padding"),
                )
            )
        else:
            layers.append(Layer(kind=kind))
    return Model(
        id=str(spec["id"]),
        input_shape=tuple(int(d) for d in spec["input_shape"]),
        layers=tuple(layers),
        num_classes=int(spec["num_classes"]),
    )


def load_dataset(manifest_path) -> Dataset:
    """Load labelled image samples from a JSON manifest.

    Images come from one (N, H, W, C) <f4 array, labels from one (N,) <i8
    array. Pixel values must lie in [0, 1] up to 1e-6 slack and are clamped
    to the exact range.
    """
    manifest_path = Path(manifest_path)
    try:
        spec = json.loads(manifest_path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetLoadError(f"cannot parse {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    images = read_npy(base / spec["images"])
    labels = _read_npy_raw(base / spec["labels"], _LABEL_DESCRS + _FLOAT_DESCRS)
    labels = np.asarray(labels)
    if images.ndim != 4:
        raise DatasetLoadError(f"images array must be (N, H, W, C), got {images.shape}")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise DatasetLoadError(
            f"labels length {labels.shape} does not match {images.shape[0]} images"
        )
    lo, hi = float(images.min()), float(images.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise DatasetLoadError(f"pixel values outside [0, 1]: min {lo}, max {hi}")
    images = np.clip(images, 0.0, 1.0)
    class_names = tuple(str(n) for n in spec.get("class_names", []))
    n_classes = len(class_names)
    samples = []
    for i in range(images.shape[0]):
        label = int(labels[i])
        if n_classes and not 0 <= label < n_classes:
            raise DatasetLoadError(f"sample {i}: label {label} has no class name")
        samples.append(
            ImageSample(
                image=np.ascontiguousarray(images[i]),
                label=label,
                sample_id=f"s{i:04d}",
            )
        )
    return Dataset(samples=tuple(samples), class_names=class_names)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def conv2d_apply(x: np.ndarray, weights: np.ndarray, bias, stride, padding) -> np.ndarray:
    """Cross-correlate an (H, W, C) array with an (out_c, in_c, kh, kw) kernel.

    Zero padding, float64 arithmetic. bias may be None.
    """
    out_c, in_c, kh, kw = weights.shape
    sh, sw = stride
    ph, pw = padding
    x = np.asarray(x, dtype=np.float64)
    if ph or pw:
        x = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    h, w, _ = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    # im2col: patches laid out (oh*ow, kh*kw*in_c) to match kernel order (kh, kw, in_c)
    cols = np.empty((oh * ow, kh * kw * in_c), dtype=np.float64)
    idx = 0
    for dy in range(kh):
        for dx in range(kw):
            patch = x[dy : dy + oh * sh : sh, dx : dx + ow * sw : sw, :]
            cols[:, idx * in_c : (idx + 1) * in_c] = patch.reshape(oh * ow, in_c)
            idx += 1
    kmat = np.transpose(weights, (2, 3, 1, 0)).reshape(kh * kw * in_c, out_c)
    kmat = np.asarray(kmat, dtype=np.float64)
    out = cols @ kmat
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return out.reshape(oh, ow, out_c)


def forward(model: Model, image: np.ndarray) -> np.ndarray:
    """Evaluate the network exactly; returns the logits as float64."""
    if tuple(image.shape) != model.input_shape:
        raise ShapeMismatchError(
            f"input shape {tuple(image.shape)} != model input shape {model.input_shape}"
        )
    x = np.asarray(image, dtype=np.float64)
    for layer in model.layers:
        if layer.kind == "dense":
            w = np.asarray(layer.weights, dtype=np.float64)
            b = np.asarray(layer.bias, dtype=np.float64)
            x = w @ x.reshape(-1) + b
        elif layer.kind == "conv2d":
            x = conv2d_apply(x, layer.weights, layer.bias, layer.stride, layer.padding)
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        else:  # flatten
            x = x.reshape(-1)
    return x.reshape(-1)


def classify(model: Model, image: np.ndarray) -> int:
    """Argmax over the logits; ties break toward the lowest class index."""
    return int(np.argmax(forward(model, image)))
