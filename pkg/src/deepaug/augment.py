"""Input augmenters and targeted-layer dropout ("Deep Augmentation").

A training step draws a :class:`ViewPlan` that flags which of the 2*B views get
layer augmentation. Flagged views get inverted dropout on their activations at
``target_layer`` and, with ``stop_grad``, a stop-gradient on the same rows, so
the layers below the target receive no gradient from those samples.
"""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError
from .rng import Stream, derive_seed

PAIRING_MODES = ("both-views", "one-sided")


@dataclass(frozen=True)
class AugmentationSpec:
    target_layer: int = -1
    rate: float = 0.5
    batch_fraction: float = 0.0
    stop_grad: bool = False
    pairing_mode: str = "both-views"
    input_noise: float = 0.0  # gaussian-noise sigma
    input_mask: float = 0.0  # coordinate-mask probability
    dropout_rescale: bool = True
    plan_per_pair: bool = False
    all_layers_rate: float = 0.0  # plain dropout after every hidden layer, all views

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ContractError(f"rate must be in [0,1), got {self.rate}")
        if not 0.0 <= self.all_layers_rate < 1.0:
            raise ContractError(f"all_layers_rate must be in [0,1), got {self.all_layers_rate}")
        if not 0.0 <= self.batch_fraction <= 1.0:
            raise ContractError(f"batch_fraction must be in [0,1], got {self.batch_fraction}")
        if self.pairing_mode not in PAIRING_MODES:
            raise ContractError(f"pairing_mode must be one of {PAIRING_MODES}, got {self.pairing_mode!r}")
        if self.input_noise < 0:
            raise ContractError(f"input_noise must be >= 0, got {self.input_noise}")
        if not 0.0 <= self.input_mask < 1.0:
            raise ContractError(f"input_mask must be in [0,1), got {self.input_mask}")

    @property
    def enabled(self) -> bool:
        return self.batch_fraction > 0.0


@dataclass
class ViewPlan:
    """Per-view flags for one batch; row ``v`` of each array is view ``v`` (0 or 1)."""

    apply: np.ndarray  # bool [2, B]
    stop: np.ndarray  # bool [2, B]
    seed: int

    @property
    def batch_size(self) -> int:
        return self.apply.shape[1]

    def dropout_mask(self, view: int, shape, rate: float) -> np.ndarray:
        """Keep-mask for the layer activations of ``view``; unflagged rows are all-true."""
        keep = Stream.of(self.seed, "dropout", view).uniform(shape) >= rate
        keep[~self.apply[view]] = True
        return keep


def input_augment(x, kind: str, param: float, seed: int) -> ad.Tensor:
    """``gaussian-noise`` adds N(0, param^2); ``coordinate-mask`` zeroes each coordinate w.p. param."""
    data = np.asarray(x.data if isinstance(x, ad.Tensor) else x)
    dtype = data.dtype if data.dtype.kind == "f" else np.float32
    if kind == "gaussian-noise":
        if not param >= 0:
            raise ContractError(f"gaussian-noise sigma must be >= 0, got {param}")
        if param == 0:
            return ad.Tensor(data, dtype=dtype)
        noise = Stream.of(seed, "gaussian-noise").normal(data.shape) * param
        return ad.Tensor((data + noise).astype(dtype), dtype=dtype)
    if kind == "coordinate-mask":
        if not 0 <= param < 1:
            raise ContractError(f"coordinate-mask probability must be in [0,1), got {param}")
        if param == 0:
            return ad.Tensor(data, dtype=dtype)
        keep = Stream.of(seed, "coordinate-mask").uniform(data.shape) >= param
        return ad.Tensor(np.where(keep, data, 0).astype(dtype), dtype=dtype)
    raise ContractError(f"unknown input augmentation {kind!r}")


def augment_inputs(x, spec: AugmentationSpec, seed: int) -> ad.Tensor:
    """Coordinate mask then gaussian noise, each skipped at strength 0."""
    x = input_augment(x, "coordinate-mask", spec.input_mask, derive_seed(seed, "mask"))
    return input_augment(x, "gaussian-noise", spec.input_noise, derive_seed(seed, "noise"))


def _dropout_multiplier(keep, p, rescale, dtype):
    kept = dtype.type(1.0 / (1.0 - p)) if rescale else dtype.type(1.0)
    return np.where(keep, kept, dtype.type(0)).astype(dtype)


def dropout(h, p: float, seed: int, rescale: bool = True):
    """Elementwise inverted dropout. Returns ``(output, keep_mask)``."""
    if p >= 1:
        raise ContractError("dropout: p >= 1 is degenerate: all units dropped")
    if p < 0:
        raise ContractError(f"dropout: p must be in [0,1), got {p}")
    h = ad._wrap(h)
    keep = Stream.of(seed, "dropout").uniform(h.shape) >= p
    return ad.mul(h, _dropout_multiplier(keep, p, rescale, h.data.dtype)), keep


def plan_views(spec: AugmentationSpec, batch_size: int, seed: int) -> ViewPlan:
    if batch_size < 1:
        raise ContractError("plan_views: batch_size must be >= 1")
    s = spec.batch_fraction
    stream = Stream.of(seed, "plan")
    if spec.pairing_mode == "one-sided":
        apply = np.zeros((2, batch_size), dtype=bool)
        apply[1] = stream.uniform(batch_size) < s
    elif spec.plan_per_pair:
        pick = stream.uniform(batch_size) < s
        apply = np.stack([pick, pick])
    else:
        apply = stream.uniform((2, batch_size)) < s
    stop = apply & bool(spec.stop_grad)
    return ViewPlan(apply=apply, stop=stop, seed=derive_seed(seed, "plan-masks"))


def _target_augment(h, spec, plan, view):
    if not plan.apply[view].any():
        return h
    if h.shape[0] != plan.batch_size:
        raise DimensionError("augmented_forward", h.shape, plan.apply.shape, detail="plan/batch size mismatch")
    keep = plan.dropout_mask(view, h.shape, spec.rate)
    h = ad.mul(h, _dropout_multiplier(keep, spec.rate, spec.dropout_rescale, h.data.dtype))
    if plan.stop[view].any():
        h = ad.stop_gradient(h, plan.stop[view])
    return h


def augmented_forward(encoder, x_view, spec: AugmentationSpec, plan: ViewPlan, view: int, params=None):
    """Encoder forward with dropout (and optional stop-gradient) injected at ``spec.target_layer``.

    ``x_view`` should already carry its input augmentation.
    """
    l = spec.target_layer
    encoder.check_index(l)
    if spec.all_layers_rate == 0.0:
        h = encoder.forward_to(x_view, l, params)
        h = _target_augment(h, spec, plan, view)
        return encoder.forward_from(h, l, params)

    h = ad._wrap(x_view)
    encoder._check_input(h)
    if l == -1:
        h = _target_augment(h, spec, plan, view)
    for i in range(encoder.L):
        h = encoder._apply(i, h, params)
        if i == l:
            h = _target_augment(h, spec, plan, view)
        if i < encoder.L - 1:
            keep = Stream.of(plan.seed, "all-layers", view, i).uniform(h.shape) >= spec.all_layers_rate
            h = ad.mul(h, _dropout_multiplier(keep, spec.all_layers_rate, spec.dropout_rescale, h.data.dtype))
    return h
