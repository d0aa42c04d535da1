"""Layer-indexed dense encoder.

Insertion points run from -1 (the raw input) to L-1 (the encoder output).
``forward_to(x, l)`` applies layers 0..l and ``forward_from(h, l)`` applies
layers l+1..L-1, so the two compose to the full forward pass for every l.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError, FormatError, LayerIndexError
from .rng import Stream
from .tensorfile import read_tensors, write_tensors

LAYER_KINDS = ("dense", "dense+relu", "l2-normalize", "dense+l2-normalize")
FREEZE_MODES = ("none", "before", "after")


@dataclass
class Layer:
    kind: str
    weight: Optional[np.ndarray] = None  # [out x in]
    bias: Optional[np.ndarray] = None  # [out]
    frozen: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractError(f"unknown layer kind {self.kind!r}")
        if self.has_params:
            if self.weight is None or self.bias is None:
                raise ContractError(f"{self.kind} layer needs weight and bias")
            if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
                raise DimensionError("Layer", self.weight.shape, self.bias.shape)
        elif self.weight is not None or self.bias is not None:
            raise ContractError("l2-normalize layer has no parameters")

    @property
    def has_params(self):
        return self.kind != "l2-normalize"

    @property
    def out_width(self):
        return self.weight.shape[0] if self.has_params else None

    def __call__(self, x, weight=None, bias=None):
        if self.has_params:
            w = self.weight if weight is None else weight
            b = self.bias if bias is None else bias
            x = ad.add(ad.matmul(x, ad.transpose(w)), b)
        if self.kind == "dense+relu":
            x = ad.relu(x)
        elif self.kind in ("l2-normalize", "dense+l2-normalize"):
            x = ad.l2_normalize_rows(x)
        return x


class LayeredEncoder:
    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ContractError("encoder needs at least one layer")
        width = None
        for i, layer in enumerate(self.layers):
            if layer.has_params:
                if width is not None and layer.weight.shape[1] != width:
                    raise DimensionError(f"layer {i}", (width,), layer.weight.shape,
                                         detail="adjacent layer widths do not compose")
                width = layer.weight.shape[0]

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def input_width(self) -> Optional[int]:
        for layer in self.layers:
            if layer.has_params:
                return layer.weight.shape[1]
        return None

    def width_at(self, l: int) -> Optional[int]:
        """Activation width at insertion point ``l``."""
        self.check_index(l)
        for layer in reversed(self.layers[:l + 1]):
            if layer.has_params:
                return layer.out_width
        return self.input_width

    def check_index(self, l: int) -> None:
        if not -1 <= l < self.L:
            raise LayerIndexError(f"layer index {l} outside [-1, {self.L - 1}]")

    def parameters(self) -> dict:
        """Ordered ``name -> array`` map; arrays are the live parameter buffers."""
        out = {}
        for i, layer in enumerate(self.layers):
            if layer.has_params:
                out[f"{i}.weight"] = layer.weight
                out[f"{i}.bias"] = layer.bias
        return out

    def layer_of(self, name: str) -> int:
        return int(name.split(".", 1)[0])

    def frozen_names(self) -> set:
        return {n for n in self.parameters() if self.layers[self.layer_of(n)].frozen}

    def bind(self, graph: ad.Graph) -> dict:
        """Register every parameter as a leaf of ``graph``."""
        return {name: graph.leaf(arr) for name, arr in self.parameters().items()}

    def _apply(self, i, x, params):
        layer = self.layers[i]
        if params is None or not layer.has_params:
            return layer(x)
        return layer(x, params[f"{i}.weight"], params[f"{i}.bias"])

    def _check_input(self, x):
        w = self.input_width
        if w is not None and (x.data.ndim != 2 or x.shape[1] != w):
            raise DimensionError("encoder input", x.shape, (None, w))

    def forward_to(self, x, l: int, params=None) -> ad.Tensor:
        self.check_index(l)
        x = ad._wrap(x)
        self._check_input(x)
        for i in range(l + 1):
            x = self._apply(i, x, params)
        return x

    def forward_from(self, h, l: int, params=None) -> ad.Tensor:
        self.check_index(l)
        h = ad._wrap(h)
        for i in range(l + 1, self.L):
            h = self._apply(i, h, params)
        return h

    def forward(self, x, params=None) -> ad.Tensor:
        return self.forward_to(x, self.L - 1, params)

    def activations(self, x, layers) -> dict:
        """Constant (tape-free) activations at each requested insertion point."""
        x = ad._wrap(x)
        self._check_input(x)
        out = {}
        if -1 in layers:
            out[-1] = x.data
        h = x
        for i in range(self.L):
            h = self._apply(i, h, None)
            if i in layers:
                out[i] = h.data
        return out

    def copy(self) -> "LayeredEncoder":
        return LayeredEncoder(
            Layer(l.kind, None if l.weight is None else l.weight.copy(),
                  None if l.bias is None else l.bias.copy(), l.frozen)
            for l in self.layers
        )


def init_params(widths, seed: int, head: str = "dense+l2-normalize") -> LayeredEncoder:
    """Build an MLP: dense+relu between ``widths[i]`` and ``widths[i+1]``, with ``head`` last.

    Weights are uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)); biases are zero.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ContractError("init_params: need an input width and at least one layer width")
    if any(w < 1 for w in widths):
        raise ContractError(f"init_params: widths must be positive, got {widths}")
    stream = Stream.of(seed, "init_params")
    layers = []
    n = len(widths) - 1
    for i in range(n):
        fan_in, fan_out = widths[i], widths[i + 1]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = ((2.0 * stream.uniform((fan_out, fan_in)) - 1.0) * a).astype(np.float32)
        kind = head if i == n - 1 else "dense+relu"
        layers.append(Layer(kind, w, np.zeros(fan_out, dtype=np.float32)))
    return LayeredEncoder(layers)


def set_freeze(encoder: LayeredEncoder, mode: str, l: int) -> None:
    """``before``: freeze layers 0..l. ``after``: freeze l+1..L-1. ``none``: unfreeze all."""
    if mode not in FREEZE_MODES:
        raise ContractError(f"freeze mode must be one of {FREEZE_MODES}, got {mode!r}")
    encoder.check_index(l)
    for i, layer in enumerate(encoder.layers):
        if mode == "before":
            layer.frozen = i <= l
        elif mode == "after":
            layer.frozen = i > l
        else:
            layer.frozen = False


# Checkpoint tensor names encode the architecture: "<index>.<kind>.weight|bias";
# parameterless layers get a one-element "<index>.<kind>.marker" tensor.

def checkpoint_tensors(encoder: LayeredEncoder) -> dict:
    out = {}
    for i, layer in enumerate(encoder.layers):
        if layer.has_params:
            out[f"{i}.{layer.kind}.weight"] = layer.weight
            out[f"{i}.{layer.kind}.bias"] = layer.bias
        else:
            out[f"{i}.{layer.kind}.marker"] = np.zeros(1, dtype=np.float32)
    return out


def save_checkpoint(encoder: LayeredEncoder, path) -> None:
    write_tensors(path, checkpoint_tensors(encoder))


def encoder_from_tensors(tensors: dict) -> LayeredEncoder:
    by_index = {}
    for name, arr in tensors.items():
        try:
            idx, kind, field = name.split(".")
            idx = int(idx)
        except ValueError as e:
            raise FormatError(f"unexpected tensor name {name!r} in checkpoint") from e
        entry = by_index.setdefault(idx, {"kind": kind})
        if entry["kind"] != kind:
            raise FormatError(f"layer {idx} has conflicting kinds {entry['kind']!r} and {kind!r}")
        entry[field] = arr
    if sorted(by_index) != list(range(len(by_index))):
        raise FormatError(f"checkpoint layer indices are not contiguous: {sorted(by_index)}")
    layers = []
    for i in range(len(by_index)):
        e = by_index[i]
        if e["kind"] not in LAYER_KINDS:
            raise FormatError(f"layer {i}: unknown kind {e['kind']!r}")
        if e["kind"] == "l2-normalize":
            layers.append(Layer("l2-normalize"))
        else:
            if "weight" not in e or "bias" not in e:
                raise FormatError(f"layer {i}: missing weight or bias")
            layers.append(Layer(e["kind"], e["weight"].copy(), e["bias"].copy()))
    return LayeredEncoder(layers)


def load_checkpoint(path) -> LayeredEncoder:
    return encoder_from_tensors(read_tensors(path))
