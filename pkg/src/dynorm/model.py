"""Minimal feed-forward inference engine with pluggable normalization slots.

Models live in two files: a JSON manifest describing the layer list, and a
sidecar blob of little-endian float32 values that the manifest addresses by
byte offset. See ``docs/formats.md`` for a worked example.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from . import kernels
from .cabn import NormalizerConfig, NormLayerState, Mode, normalize
from .errors import DimensionError, FormatError, ValidationError
from .lisc import lisc_cluster
from .stats import SbnStore
from .tensor import ChannelStats, FeatureMap

FORMAT_NAME = "dynorm-model"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Conv2d:
    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    kind = "conv2d"

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


@dataclass(frozen=True, eq=False)
class NormSlot:
    slot_id: str
    channels: int
    gamma: np.ndarray
    beta: np.ndarray
    kind = "norm_slot"


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class GlobalAvgPool:
    kind = "global_avg_pool"


@dataclass(frozen=True, eq=False)
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    kind = "dense"


@dataclass(frozen=True, eq=False)
class PrototypeHead:
    """Scores each class by the dot product of the feature with its prototype."""

    prototypes: np.ndarray  # (num_classes, features)
    kind = "prototype_head"


LayerSpec = Union[Conv2d, NormSlot, ReLU, GlobalAvgPool, Dense, PrototypeHead]


@dataclass(frozen=True)
class ModelSpec:
    input_dims: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "layers", tuple(self.layers))
        check_chain(self)

    @property
    def norm_slots(self) -> list[NormSlot]:
        return [l for l in self.layers if isinstance(l, NormSlot)]


@dataclass(frozen=True, eq=False)
class Prediction:
    scores: np.ndarray
    label: int


def check_chain(model: ModelSpec) -> None:
    """Walk the layer list and verify every layer accepts its input shape."""
    C, H, W = model.input_dims
    if min(C, H, W) < 1:
        raise DimensionError(f"input dims must be >= 1, got {model.input_dims}")
    shape: tuple = ("map", C, H, W)
    slots = set()
    for pos, layer in enumerate(model.layers):
        where = f"layer {pos} ({layer.kind})"
        if isinstance(layer, Conv2d):
            if shape[0] != "map":
                raise DimensionError(f"{where}: needs a feature map input")
            if layer.weight.ndim != 4 or layer.weight.shape[2] != layer.weight.shape[3]:
                raise DimensionError(f"{where}: weight must be (out, in, k, k), got {layer.weight.shape}")
            if layer.in_channels != shape[1]:
                raise DimensionError(f"{where}: expects {layer.in_channels} input channels, got {shape[1]}")
            if layer.bias.shape != (layer.out_channels,):
                raise DimensionError(f"{where}: bias must have {layer.out_channels} entries")
            if layer.stride < 1 or layer.padding < 0:
                raise DimensionError(f"{where}: stride must be >= 1 and padding >= 0")
            Ho = (shape[2] + 2 * layer.padding - layer.kernel) // layer.stride + 1
            Wo = (shape[3] + 2 * layer.padding - layer.kernel) // layer.stride + 1
            if Ho < 1 or Wo < 1:
                raise DimensionError(f"{where}: kernel larger than padded input")
            shape = ("map", layer.out_channels, Ho, Wo)
        elif isinstance(layer, NormSlot):
            if shape[0] != "map":
                raise DimensionError(f"{where}: needs a feature map input")
            if layer.channels != shape[1]:
                raise DimensionError(f"{where}: slot {layer.slot_id!r} has {layer.channels} channels, input has {shape[1]}")
            if layer.gamma.shape != (layer.channels,) or layer.beta.shape != (layer.channels,):
                raise DimensionError(f"{where}: gamma/beta must have {layer.channels} entries")
            if layer.slot_id in slots:
                raise FormatError(f"{where}: duplicate slot id {layer.slot_id!r}")
            slots.add(layer.slot_id)
        elif isinstance(layer, ReLU):
            pass
        elif isinstance(layer, GlobalAvgPool):
            if shape[0] != "map":
                raise DimensionError(f"{where}: needs a feature map input")
            shape = ("vec", shape[1])
        elif isinstance(layer, Dense):
            if shape[0] != "vec":
                raise DimensionError(f"{where}: needs a pooled vector input")
            if layer.weight.ndim != 2 or layer.weight.shape[1] != shape[1]:
                raise DimensionError(f"{where}: weight {layer.weight.shape} does not accept {shape[1]} features")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise DimensionError(f"{where}: bias must have {layer.weight.shape[0]} entries")
            shape = ("vec", layer.weight.shape[0])
        elif isinstance(layer, PrototypeHead):
            if shape[0] != "vec":
                raise DimensionError(f"{where}: needs a pooled vector input")
            if layer.prototypes.ndim != 2 or layer.prototypes.shape[1] != shape[1]:
                raise DimensionError(f"{where}: prototypes {layer.prototypes.shape} do not match {shape[1]} features")
            shape = ("vec", layer.prototypes.shape[0])
        else:
            raise FormatError(f"{where}: unknown layer type {type(layer).__name__}")
    if not slots:
        raise FormatError("model needs at least one norm_slot")
    if shape != ("vec", model.num_classes):
        raise DimensionError(f"model ends in {shape}, expected a {model.num_classes}-class score vector")


def conv2d_apply(fm: FeatureMap, layer: Conv2d) -> FeatureMap:
    if fm.channels != layer.in_channels:
        raise DimensionError(f"conv2d expects {layer.in_channels} channels, got {fm.channels}")
    out = kernels.conv2d(
        fm.data,
        np.ascontiguousarray(layer.weight, dtype=np.float32),
        np.ascontiguousarray(layer.bias, dtype=np.float32),
        int(layer.stride),
        int(layer.padding),
    )
    return FeatureMap._wrap(out)


def relu_apply(x):
    if isinstance(x, FeatureMap):
        return FeatureMap._wrap(np.maximum(x.data, np.float32(0.0)))
    return np.maximum(x, 0.0)


def global_avg_pool_apply(fm: FeatureMap) -> np.ndarray:
    return kernels.instance_means(fm.data)


def dense_apply(x: np.ndarray, layer: Dense) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.weight.shape[1]:
        raise DimensionError(f"dense expects {layer.weight.shape[1]} features, got {x.shape[-1]}")
    return x @ layer.weight.astype(np.float64).T + layer.bias.astype(np.float64)


def prototype_apply(x: np.ndarray, layer: PrototypeHead) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.prototypes.shape[1]:
        raise DimensionError(f"prototype head expects {layer.prototypes.shape[1]} features, got {x.shape[-1]}")
    return x @ layer.prototypes.astype(np.float64).T


def slot_state(slot: NormSlot, store: SbnStore, norm: NormalizerConfig) -> NormLayerState:
    try:
        sbn = store[slot.slot_id]
    except KeyError:
        raise FormatError(f"no source statistics for slot {slot.slot_id!r}") from None
    return NormLayerState(sbn, slot.gamma, slot.beta, norm)


def forward_traced(model: ModelSpec, store: SbnStore, fm: FeatureMap, norm: NormalizerConfig):
    """Run a batch through the model.

    Returns ``(predictions, clusters)`` where ``clusters`` maps each slot id to
    the number of clusters used there (1 for modes that don't cluster, B for IN).
    """
    if fm.shape[1:] != model.input_dims:
        raise DimensionError(f"input {fm.shape[1:]} does not match model input {model.input_dims}")
    clusters: dict[str, int] = {}
    x: FeatureMap | np.ndarray = fm
    for layer in model.layers:
        if isinstance(layer, NormSlot):
            state = slot_state(layer, store, norm)
            if norm.mode is Mode.DYN:
                assignment = lisc_cluster(x, with_std=norm.cluster_on_std)
                clusters[layer.slot_id] = assignment.k
                x = normalize(x, state, assignment)
            else:
                clusters[layer.slot_id] = x.batch if norm.mode is Mode.IN else 1
                x = normalize(x, state)
        elif isinstance(layer, Conv2d):
            x = conv2d_apply(x, layer)
        elif isinstance(layer, ReLU):
            x = relu_apply(x)
        elif isinstance(layer, GlobalAvgPool):
            x = global_avg_pool_apply(x)
        elif isinstance(layer, Dense):
            x = dense_apply(x, layer)
        elif isinstance(layer, PrototypeHead):
            x = prototype_apply(x, layer)
    scores = np.asarray(x, dtype=np.float64)
    preds = [Prediction(row.copy(), int(np.argmax(row))) for row in scores]
    return preds, clusters


def forward(model: ModelSpec, store: SbnStore, fm: FeatureMap, norm: NormalizerConfig) -> list[Prediction]:
    return forward_traced(model, store, fm, norm)[0]


# ----------------------------------------------------------------------------
# file format

_LAYER_KEYS = {
    "conv2d": ({"kind", "out_channels", "kernel", "stride", "padding", "tensors"}, {"weight", "bias"}),
    "norm_slot": ({"kind", "id", "channels", "tensors"}, {"sbn_mean", "sbn_std", "gamma", "beta"}),
    "relu": ({"kind"}, set()),
    "global_avg_pool": ({"kind"}, set()),
    "dense": ({"kind", "out_features", "tensors"}, {"weight", "bias"}),
    "prototype_head": ({"kind", "tensors"}, {"prototypes"}),
}
_TOP_KEYS = {"format", "version", "blob", "input", "num_classes", "layers"}


class _Blob:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name

    def read(self, ref, where: str, shape=None) -> np.ndarray:
        if not isinstance(ref, dict) or set(ref) != {"offset", "shape"}:
            raise FormatError(f"{where}: tensor reference must have exactly 'offset' and 'shape'")
        offset, dims = ref["offset"], tuple(ref["shape"])
        if not isinstance(offset, int) or offset < 0 or offset % 4:
            raise FormatError(f"{where}: offset must be a non-negative multiple of 4, got {offset!r}")
        if shape is not None and dims != tuple(shape):
            raise FormatError(f"{where}: expected shape {tuple(shape)}, manifest says {dims}")
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        end = offset + 4 * n
        if end > len(self.data):
            raise FormatError(f"{where}: bytes {offset}..{end} run past the end of {self.name} ({len(self.data)} bytes)")
        arr = np.frombuffer(self.data, dtype="<f4", count=n, offset=offset).astype(np.float32).reshape(dims)
        if not np.isfinite(arr).all():
            raise ValidationError(f"{where}: non-finite values")
        return arr


def _expect_keys(obj: dict, allowed: set, required: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise FormatError(f"{where}: missing keys {sorted(missing)}")


def parse_manifest(manifest: dict, blob: bytes, blob_name: str = "<blob>") -> tuple[ModelSpec, SbnStore]:
    _expect_keys(manifest, _TOP_KEYS, _TOP_KEYS, "manifest")
    if manifest["format"] != FORMAT_NAME or manifest["version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported format {manifest['format']!r} v{manifest['version']!r}")
    inp = manifest["input"]
    _expect_keys(inp, {"channels", "height", "width"}, {"channels", "height", "width"}, "input")
    data = _Blob(blob, blob_name)
    layers: list[LayerSpec] = []
    sbn: dict[str, ChannelStats] = {}
    for pos, spec in enumerate(manifest["layers"]):
        where = f"layer {pos}"
        kind = spec.get("kind") if isinstance(spec, dict) else None
        if kind not in _LAYER_KEYS:
            raise FormatError(f"{where}: unknown layer kind {kind!r}")
        allowed, tensor_names = _LAYER_KEYS[kind]
        required = set(allowed)
        if kind == "norm_slot":
            required = {"kind", "id", "channels", "tensors"}
        if kind == "conv2d":
            required = {"kind", "out_channels", "kernel", "tensors"}
        _expect_keys(spec, allowed, required, where)
        tensors = spec.get("tensors", {})
        unknown = set(tensors) - tensor_names
        if unknown:
            raise FormatError(f"{where}: unknown tensors {sorted(unknown)}")
        where = f"{where} ({kind})"
        if kind == "norm_slot":
            C = int(spec["channels"])
            sid = str(spec["id"])
            for name in ("sbn_mean", "sbn_std"):
                if name not in tensors:
                    raise FormatError(f"{where}: slot {sid!r} is missing source statistic {name!r}")
            mean = data.read(tensors["sbn_mean"], f"{where}.sbn_mean")
            std = data.read(tensors["sbn_std"], f"{where}.sbn_std")
            if mean.shape != (C,) or std.shape != (C,):
                raise FormatError(f"{where}: slot {sid!r} statistics must have shape ({C},)")
            if (std < 0).any():
                raise ValidationError(f"{where}: slot {sid!r} has negative source std")
            gamma = data.read(tensors["gamma"], f"{where}.gamma", (C,)) if "gamma" in tensors else np.ones(C, np.float32)
            beta = data.read(tensors["beta"], f"{where}.beta", (C,)) if "beta" in tensors else np.zeros(C, np.float32)
            sbn[sid] = ChannelStats(mean, std)
            layers.append(NormSlot(sid, C, gamma, beta))
        elif kind == "conv2d":
            O, k = int(spec["out_channels"]), int(spec["kernel"])
            w = data.read(tensors.get("weight"), f"{where}.weight")
            if w.ndim != 4 or w.shape[0] != O or w.shape[2:] != (k, k):
                raise FormatError(f"{where}: weight shape {w.shape} disagrees with out_channels={O}, kernel={k}")
            b = data.read(tensors["bias"], f"{where}.bias", (O,)) if "bias" in tensors else np.zeros(O, np.float32)
            layers.append(Conv2d(w, b, int(spec.get("stride", 1)), int(spec.get("padding", 0))))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "global_avg_pool":
            layers.append(GlobalAvgPool())
        elif kind == "dense":
            O = int(spec["out_features"])
            w = data.read(tensors.get("weight"), f"{where}.weight")
            if w.ndim != 2 or w.shape[0] != O:
                raise FormatError(f"{where}: weight shape {w.shape} disagrees with out_features={O}")
            b = data.read(tensors["bias"], f"{where}.bias", (O,)) if "bias" in tensors else np.zeros(O, np.float32)
            layers.append(Dense(w, b))
        else:
            layers.append(PrototypeHead(data.read(tensors.get("prototypes"), f"{where}.prototypes")))
    model = ModelSpec((inp["channels"], inp["height"], inp["width"]), tuple(layers), int(manifest["num_classes"]))
    return model, SbnStore(sbn)


def load_model(path: str | Path) -> tuple[ModelSpec, SbnStore]:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or "blob" not in manifest:
        raise FormatError(f"{path}: manifest must be an object with a 'blob' entry")
    blob_path = path.parent / manifest["blob"]
    return parse_manifest(manifest, blob_path.read_bytes(), str(blob_path))


def build_manifest(model: ModelSpec, store: SbnStore, blob_name: str) -> tuple[dict, bytes]:
    """Serialize a model to (manifest, blob bytes). Tensors are laid out in layer order."""
    chunks: list[bytes] = []
    offset = 0

    def put(arr) -> dict:
        nonlocal offset
        a = np.ascontiguousarray(arr, dtype="<f4")
        ref = {"offset": offset, "shape": list(a.shape)}
        chunks.append(a.tobytes())
        offset += a.nbytes
        return ref

    layers = []
    for layer in model.layers:
        if isinstance(layer, NormSlot):
            s = store[layer.slot_id]
            layers.append({
                "kind": "norm_slot", "id": layer.slot_id, "channels": layer.channels,
                "tensors": {"sbn_mean": put(s.mean), "sbn_std": put(s.std),
                            "gamma": put(layer.gamma), "beta": put(layer.beta)},
            })
        elif isinstance(layer, Conv2d):
            layers.append({
                "kind": "conv2d", "out_channels": layer.out_channels, "kernel": layer.kernel,
                "stride": layer.stride, "padding": layer.padding,
                "tensors": {"weight": put(layer.weight), "bias": put(layer.bias)},
            })
        elif isinstance(layer, Dense):
            layers.append({
                "kind": "dense", "out_features": int(layer.weight.shape[0]),
                "tensors": {"weight": put(layer.weight), "bias": put(layer.bias)},
            })
        elif isinstance(layer, PrototypeHead):
            layers.append({"kind": "prototype_head", "tensors": {"prototypes": put(layer.prototypes)}})
        else:
            layers.append({"kind": layer.kind})
    C, H, W = model.input_dims
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "blob": blob_name,
        "input": {"channels": C, "height": H, "width": W},
        "num_classes": model.num_classes,
        "layers": layers,
    }
    return manifest, b"".join(chunks)


def save_model(model: ModelSpec, store: SbnStore, path: str | Path) -> None:
    """Write ``path`` (manifest) and ``path`` with a ``.bin`` suffix (blob)."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    manifest, blob = build_manifest(model, store, blob_path.name)
    blob_path.write_bytes(blob)
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def describe(model: ModelSpec, store: SbnStore) -> str:
    """Human-readable layer listing."""
    C, H, W = model.input_dims
    lines = [f"input: C={C} H={H} W={W}   classes: {model.num_classes}"]
    for pos, layer in enumerate(model.layers):
        if isinstance(layer, NormSlot):
            s = store.get(layer.slot_id)
            extra = f"id={layer.slot_id} channels={layer.channels}"
            if s is not None:
                extra += f" sbn_mean[0]={s.mean[0]:.4g} sbn_std[0]={s.std[0]:.4g}"
        elif isinstance(layer, Conv2d):
            extra = f"{layer.in_channels}->{layer.out_channels} k={layer.kernel} stride={layer.stride} pad={layer.padding}"
        elif isinstance(layer, Dense):
            extra = f"{layer.weight.shape[1]}->{layer.weight.shape[0]}"
        elif isinstance(layer, PrototypeHead):
            extra = f"{layer.prototypes.shape[0]} prototypes of dim {layer.prototypes.shape[1]}"
        else:
            extra = ""
        lines.append(f"  [{pos}] {layer.kind:<16}{extra}")
    return "\n".join(lines)
