"""Single-hidden-layer exclusive autoencoder with tied, block-partitioned weights."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labels import LabelSet, PartitionSpec, active_segments, as_label_set, require_valid

FORMAT_VERSION = 1
ACTIVATIONS = ("sigmoid", "linear")


class ModelError(ValueError):
    pass


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(tag: str, pre):
    if tag == "sigmoid":
        return sigmoid(np.asarray(pre, dtype=np.float64))
    if tag == "linear":
        return np.array(pre, dtype=np.float64)
    raise ModelError(f"unknown activation {tag!r}")


def activation_grad(tag: str, out):
    """Derivative of the activation expressed through its output."""
    if tag == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


@dataclass
class Activation:
    """Hidden activations, one row per sample, with per-segment views."""

    values: np.ndarray
    spec: PartitionSpec

    def segment(self, j: int) -> np.ndarray:
        return self.values[..., self.spec.segment_slice(j)]

    def segments(self) -> list[np.ndarray]:
        return [self.segment(j) for j in range(len(self.spec.segments))]


@dataclass
class XaeModel:
    spec: PartitionSpec
    input_dim: int
    weights: np.ndarray  # (M, N); decoder reuses the same array
    b_enc: np.ndarray
    b_dec: np.ndarray
    act_enc: str = "sigmoid"
    act_dec: str = "linear"
    geometry: tuple[int, int, int] | None = None
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        m, n = self.input_dim, self.spec.total_width
        if self.weights.shape != (m, n):
            raise ModelError(f"weights shape {self.weights.shape} != ({m}, {n})")
        if self.b_enc.shape != (n,) or self.b_dec.shape != (m,):
            raise ModelError("bias shapes do not match the partition")
        for tag in (self.act_enc, self.act_dec):
            if tag not in ACTIVATIONS:
                raise ModelError(f"unknown activation {tag!r}")
        if self.geometry is not None:
            self.geometry = tuple(int(g) for g in self.geometry)
            if int(np.prod(self.geometry)) != m:
                raise ModelError(f"geometry {self.geometry} does not match input_dim {m}")

    @property
    def hidden_dim(self) -> int:
        return self.spec.total_width

    def block(self, j: int) -> np.ndarray:
        """View of W^(T_j); writes go straight to the shared weight matrix."""
        return self.weights[:, self.spec.segment_slice(j)]

    def decoder_mask(self, s) -> np.ndarray:
        mask = np.zeros(self.hidden_dim)
        for j in active_segments(s, self.spec):
            mask[self.spec.segment_slice(j)] = 1.0
        return mask

    def copy(self) -> "XaeModel":
        return XaeModel(
            self.spec, self.input_dim, self.weights.copy(), self.b_enc.copy(), self.b_dec.copy(),
            self.act_enc, self.act_dec, self.geometry, dict(self.hyperparams),
        )

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.b_enc, self.b_dec]


def init(spec: PartitionSpec, input_dim: int, seed: int = 0, act_enc="sigmoid", act_dec="linear",
         geometry=None) -> XaeModel:
    require_valid(spec)
    if input_dim < 1:
        raise ModelError("input_dim must be >= 1")
    n = spec.total_width
    r = np.sqrt(6.0 / (input_dim + n))
    rng = np.random.default_rng(seed)
    w = rng.uniform(-r, r, size=(input_dim, n))
    return XaeModel(spec, input_dim, w, np.zeros(n), np.zeros(input_dim), act_enc, act_dec, geometry)


def _check_input(model: XaeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim or x.ndim not in (1, 2):
        raise ModelError(f"expected input of length {model.input_dim}, got shape {x.shape}")
    return x


def encode(model: XaeModel, x) -> Activation:
    """z = act_enc(W^T x + b_enc) for one sample (M,) or a batch (B, M)."""
    x = _check_input(model, x)
    return Activation(activate(model.act_enc, x @ model.weights + model.b_enc), model.spec)


def decode(model: XaeModel, z, s) -> np.ndarray:
    """Partially connected decoder: only segments whose labels meet ``s`` feed the output."""
    values = z.values if isinstance(z, Activation) else np.asarray(z, dtype=np.float64)
    if values.shape[-1] != model.hidden_dim:
        raise ModelError(f"expected activation of length {model.hidden_dim}, got {values.shape}")
    pre = (values * model.decoder_mask(s)) @ model.weights.T + model.b_dec
    return activate(model.act_dec, pre)


def reconstruct(model: XaeModel, x, s) -> np.ndarray:
    return decode(model, encode(model, x), s)


# -- model file ------------------------------------------------------------

def _b64(arr) -> str:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.abs(arr) <= np.finfo(np.float32).max):
        raise FloatingPointError("parameter values exceed the float32 range of the model file")
    return base64.b64encode(arr.astype("<f4").tobytes(order="F")).decode("ascii")


def _unb64(text: str, shape) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(text), dtype="<f4")
    if flat.size != int(np.prod(shape)):
        raise ModelError(f"encoded array has {flat.size} values, expected shape {shape}")
    return flat.reshape(shape, order="F").astype(np.float64)


def to_dict(model: XaeModel) -> dict:
    return {
        "format": "xae-model",
        "format_version": FORMAT_VERSION,
        "input_dim": model.input_dim,
        "geometry": list(model.geometry) if model.geometry else None,
        "act_enc": model.act_enc,
        "act_dec": model.act_dec,
        "spec": model.spec.to_dict(),
        "blocks": [
            {"labels": list(seg.labels.ids), "width": seg.width, "weights": _b64(model.block(j))}
            for j, seg in enumerate(model.spec.segments)
        ],
        "b_enc": _b64(model.b_enc),
        "b_dec": _b64(model.b_dec),
        "hyperparams": model.hyperparams,
    }


def from_dict(d: dict) -> XaeModel:
    if d.get("format") != "xae-model" or d.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported model format {d.get('format')!r} v{d.get('format_version')!r}")
    spec = PartitionSpec.from_dict(d["spec"])
    m = int(d["input_dim"])
    blocks = [_unb64(b["weights"], (m, int(b["width"]))) for b in d["blocks"]]
    if [int(b["width"]) for b in d["blocks"]] != spec.widths:
        raise ModelError("block widths disagree with the partition")
    weights = np.concatenate(blocks, axis=1) if blocks else np.zeros((m, 0))
    return XaeModel(
        spec, m, weights,
        _unb64(d["b_enc"], (spec.total_width,)), _unb64(d["b_dec"], (m,)),
        d["act_enc"], d["act_dec"], d.get("geometry"), d.get("hyperparams") or {},
    )


def save(model: XaeModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model), indent=1, sort_keys=True) + "\n")


def load(path) -> XaeModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not a model file ({exc})") from None
    return from_dict(d)


def group_label_set(model: XaeModel, group: int) -> LabelSet:
    return as_label_set(model.spec.source_groups[group])
