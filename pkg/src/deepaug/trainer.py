"""Contrastive training loop with Deep Augmentation, freezing and checkpoint init."""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import reports
from .augment import PAIRING_MODES, AugmentationSpec, augment_inputs, augmented_forward, plan_views
from .contrastive import info_nce
from .data import (Dataset, SyntheticSpec, batch_iter, generate_synthetic, load_dataset, parse_cifar,
                   standardize, train_test_split)
from .errors import ConfigError, DegenerateInputError, DimensionError, InitError
from .metrics import ProbeConfig, alignment, linear_cka, linear_probe, uniformity
from .nn import FREEZE_MODES, LayeredEncoder, checkpoint_tensors, init_params, load_checkpoint, save_checkpoint, set_freeze
from .rng import Stream, derive_seed

log = logging.getLogger(__name__)

DATASETS = ("synthetic", "cifar10", "cifar100", "file")
LR_SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    # data
    dataset: str = "synthetic"
    data_path: str = ""
    syn_superclasses: int = 4
    syn_subclasses: int = 4
    syn_dim: int = 64
    syn_per_subclass: int = 250
    syn_super_spread: float = 4.0
    syn_sub_spread: float = 1.0
    syn_noise: float = 4.0
    data_seed: int = 0
    test_fraction: float = 0.2
    # encoder
    hidden_widths: list = field(default_factory=lambda: [128, 128, 128, 128, 128])
    proj_width: int = 32
    # augmentation
    target_layer: int = 3
    rate: float = 0.5
    batch_fraction: float = 0.5
    stop_grad: bool = True
    pairing_mode: str = "both-views"
    dropout_rescale: bool = True
    plan_per_pair: bool = False
    all_layers_rate: float = 0.0
    input_noise: float = 0.3
    input_mask: float = 0.2
    # objective and optimizer
    tau: float = 0.5
    symmetric_loss: bool = False
    batch_size: int = 256
    epochs: int = 50
    lr: float = 0.05
    momentum: float = 0.9
    lr_schedule: str = "constant"
    seed: int = 0
    # freezing and initialization
    freeze_mode: str = "none"
    freeze_layer: Optional[int] = None  # None: follow target_layer
    init: str = "random"
    # evaluation
    eval_every: int = 10
    eval_size: int = 2048
    eval_seed: int = 0
    probe_epochs: int = 200
    probe_lr: float = 0.1
    probe_layer: Optional[int] = None  # None: last layer before the projection head
    align_alpha: float = 2.0
    unif_t: float = 2.0
    out: str = "runs/default"

    @property
    def num_layers(self) -> int:
        return len(self.hidden_widths) + 1

    @property
    def resolved_freeze_layer(self) -> int:
        return self.target_layer if self.freeze_layer is None else self.freeze_layer

    @property
    def resolved_probe_layer(self) -> int:
        return self.num_layers - 2 if self.probe_layer is None else self.probe_layer

    def augmentation(self) -> AugmentationSpec:
        return AugmentationSpec(
            target_layer=self.target_layer, rate=self.rate, batch_fraction=self.batch_fraction,
            stop_grad=self.stop_grad, pairing_mode=self.pairing_mode, input_noise=self.input_noise,
            input_mask=self.input_mask, dropout_rescale=self.dropout_rescale,
            plan_per_pair=self.plan_per_pair, all_layers_rate=self.all_layers_rate,
        )

    def probe_config(self) -> ProbeConfig:
        return ProbeConfig(epochs=self.probe_epochs, lr=self.probe_lr, seed=self.eval_seed)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "TrainConfig":
        def bad(key, allowed):
            raise ConfigError(f"{key} = {getattr(self, key)!r}: {key} must be {allowed}")

        L = self.num_layers
        if self.dataset not in DATASETS:
            bad("dataset", f"one of {DATASETS}")
        if self.dataset != "synthetic" and not self.data_path:
            raise ConfigError(f"data_path is required for dataset = {self.dataset}")
        for key in ("syn_superclasses", "syn_subclasses", "syn_dim", "syn_per_subclass", "proj_width",
                    "epochs", "eval_every", "probe_epochs"):
            if getattr(self, key) < 1:
                bad(key, ">= 1")
        for key in ("syn_super_spread", "syn_sub_spread", "syn_noise", "input_noise", "momentum"):
            if not getattr(self, key) >= 0:
                bad(key, ">= 0")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            bad("hidden_widths", "a non-empty list of positive integers")
        if not 0 < self.test_fraction < 1:
            bad("test_fraction", "in (0,1)")
        if not -1 <= self.target_layer < L:
            bad("target_layer", f"in [-1,{L - 1}]")
        if not 0 <= self.rate < 1:
            bad("rate", "in [0,1)")
        if not 0 <= self.all_layers_rate < 1:
            bad("all_layers_rate", "in [0,1)")
        if not 0 <= self.input_mask < 1:
            bad("input_mask", "in [0,1)")
        if not 0 <= self.batch_fraction <= 1:
            bad("batch_fraction", "in [0,1]")
        if self.pairing_mode not in PAIRING_MODES:
            bad("pairing_mode", f"one of {PAIRING_MODES}")
        if not self.tau > 0:
            bad("tau", "> 0")
        if self.batch_size < 2:
            bad("batch_size", ">= 2")
        if not self.lr > 0:
            bad("lr", "> 0")
        if self.lr_schedule not in LR_SCHEDULES:
            bad("lr_schedule", f"one of {LR_SCHEDULES}")
        if self.freeze_mode not in FREEZE_MODES:
            bad("freeze_mode", f"one of {FREEZE_MODES}")
        if not -1 <= self.resolved_freeze_layer < L:
            bad("freeze_layer", f"in [-1,{L - 1}]")
        if self.eval_size < 2:
            bad("eval_size", ">= 2")
        if not self.probe_lr > 0:
            bad("probe_lr", "> 0")
        if not 0 <= self.resolved_probe_layer < L:
            bad("probe_layer", f"in [0,{L - 1}]")
        if not self.align_alpha > 0:
            bad("align_alpha", "> 0")
        if not self.unif_t > 0:
            bad("unif_t", "> 0")
        for key in ("seed", "data_seed", "eval_seed"):
            if not 0 <= getattr(self, key) < 2 ** 64:
                bad(key, "an unsigned 64-bit integer")
        return self


@dataclass
class MetricsReport:
    epoch: int
    loss: float
    probe_coarse: float
    probe_fine: float
    alignment: float
    uniformity: float
    cka: np.ndarray
    cka_layers: tuple


@dataclass
class OptimizerState:
    velocity: dict

    @classmethod
    def zeros(cls, params: dict) -> "OptimizerState":
        return cls({name: np.zeros_like(p) for name, p in params.items()})


def sgd_step(params: dict, grads: dict, state: OptimizerState, lr: float, momentum: float, frozen=()) -> None:
    """In place: v <- momentum*v + g; p <- p - lr*v. Frozen names are skipped."""
    lr = np.float32(lr)
    mom = np.float32(momentum)
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        v = state.velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise DimensionError(f"sgd_step[{name}]", p.shape, g.shape)
        v *= mom
        v += g
        p -= lr * v


def step_loss(encoder: LayeredEncoder, x, config: TrainConfig, step_seed: int, params=None,
              deep_augmentation: bool = True) -> ad.Tensor:
    """InfoNCE for one batch: two input-augmented views, Deep Augmentation per the view plan."""
    aug = config.augmentation()
    views = [augment_inputs(x, aug, derive_seed(step_seed, "view", v)) for v in (0, 1)]
    if deep_augmentation:
        plan = plan_views(aug, views[0].shape[0], derive_seed(step_seed, "plan"))
        hs = [augmented_forward(encoder, views[v], aug, plan, v, params) for v in (0, 1)]
    else:
        hs = [encoder.forward(views[v], params) for v in (0, 1)]
    return info_nce(hs[0], hs[1], config.tau, config.symmetric_loss)


def train_step(encoder: LayeredEncoder, x, config: TrainConfig, state: OptimizerState, step_seed: int,
               lr: Optional[float] = None, deep_augmentation: bool = True) -> float:
    graph = ad.Graph()
    params = encoder.bind(graph)
    loss = step_loss(encoder, x, config, step_seed, params, deep_augmentation)
    grads = graph.backward(loss)
    grad_arrays = {name: grads.of(t) for name, t in params.items()}
    sgd_step(encoder.parameters(), grad_arrays, state, config.lr if lr is None else lr,
             config.momentum, encoder.frozen_names())
    return loss.item()


@dataclass
class PreparedData:
    dataset: Dataset
    features: np.ndarray  # standardized
    train_idx: np.ndarray
    test_idx: np.ndarray
    eval_idx: np.ndarray


def load_config_dataset(config: TrainConfig) -> Dataset:
    if config.dataset == "synthetic":
        return generate_synthetic(SyntheticSpec(
            config.syn_superclasses, config.syn_subclasses, config.syn_dim, config.syn_per_subclass,
            config.syn_super_spread, config.syn_sub_spread, config.syn_noise, config.data_seed))
    if config.dataset in ("cifar10", "cifar100"):
        return parse_cifar(config.data_path, config.dataset)
    return load_dataset(config.data_path)


def prepare_data(config: TrainConfig, dataset: Optional[Dataset] = None) -> PreparedData:
    ds = load_config_dataset(config) if dataset is None else dataset
    n = len(ds)
    train_idx, test_idx = train_test_split(n, config.test_fraction, config.data_seed)
    feats = standardize(ds.features, train_idx)
    eval_idx = np.sort(Stream.of(config.eval_seed, "eval-subset").permutation(n)[:min(config.eval_size, n)])
    return PreparedData(ds, feats, train_idx, test_idx, eval_idx)


def build_encoder(config: TrainConfig, input_width: int) -> LayeredEncoder:
    widths = [input_width, *config.hidden_widths, config.proj_width]
    template = init_params(widths, config.seed)
    if config.init != "random":
        loaded = load_checkpoint(config.init)
        want, got = checkpoint_tensors(template), checkpoint_tensors(loaded)
        problems = [f"{k}: expected {want[k].shape}, got {got[k].shape if k in got else 'missing'}"
                    for k in want if k not in got or got[k].shape != want[k].shape]
        problems += [f"{k}: unexpected tensor" for k in got if k not in want]
        if problems:
            raise InitError(f"checkpoint {config.init} does not fit the configured encoder: " + "; ".join(problems))
        template = loaded
    set_freeze(template, config.freeze_mode, config.resolved_freeze_layer)
    return template


def _safe_cka(a, b):
    try:
        return linear_cka(a, b)
    except DegenerateInputError:
        return float("nan")


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)


def evaluate(encoder: LayeredEncoder, data: PreparedData, config: TrainConfig, epoch: int, loss: float) -> MetricsReport:
    """Probe accuracies, alignment/uniformity and cross-layer CKA; no augmentation in the forward passes."""
    L = encoder.L
    probe_layer = config.resolved_probe_layer
    feats = encoder.activations(data.features, {probe_layer})[probe_layer]
    pc = config.probe_config()
    ds = data.dataset
    fine = linear_probe(feats, ds.fine_labels, data.train_idx, data.test_idx, pc)
    coarse = float("nan")
    if ds.coarse_labels is not None:
        coarse = linear_probe(feats, ds.coarse_labels, data.train_idx, data.test_idx, pc)

    xe = data.features[data.eval_idx]
    layers = tuple(range(L))
    acts = encoder.activations(xe, set(layers))
    out = _unit_rows(acts[L - 1])
    unif = uniformity(out, config.unif_t)
    aug = config.augmentation()
    views = [_unit_rows(encoder.forward(augment_inputs(xe, aug, derive_seed(config.eval_seed, "align", v))).data)
             for v in (0, 1)]
    align = alignment(views[0], views[1], config.align_alpha)

    cka = np.eye(L)
    for i in range(L):
        for j in range(i + 1, L):
            cka[i, j] = cka[j, i] = _safe_cka(acts[i], acts[j])
    return MetricsReport(epoch, loss, coarse, fine, align, unif, cka, layers)


def run_experiment(config: TrainConfig, out_dir=None, deep_augmentation: bool = True, write_json: bool = False,
                   dataset: Optional[Dataset] = None) -> list:
    """Train per ``config``; record metrics at epoch 0, every ``eval_every`` epochs and at the end.

    With ``out_dir``, writes metrics.csv, cka_epoch<k>.csv and checkpoint_epoch<k>.daug per record.
    """
    config.validate()
    data = prepare_data(config, dataset)
    encoder = build_encoder(config, data.features.shape[1])
    state = OptimizerState.zeros(encoder.parameters())
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    x_train = data.features[data.train_idx]
    steps_per_epoch = len(batch_iter(len(x_train), config.batch_size, config.seed, 1))
    total_steps = steps_per_epoch * config.epochs

    def record(epoch, loss):
        rep = evaluate(encoder, data, config, epoch, loss)
        records.append(rep)
        log.info("epoch %d loss %.4f probe fine %.4f coarse %.4f", epoch, loss, rep.probe_fine, rep.probe_coarse)
        if out is not None:
            save_checkpoint(encoder, out / f"checkpoint_epoch{epoch}.daug")
            reports.write_cka(out / f"cka_epoch{epoch}.csv", rep.cka, rep.cka_layers, write_json)
            reports.write_metrics(out / "metrics.csv", records, write_json)

    records = []
    init_losses = [
        step_loss(encoder, x_train[idx], config, derive_seed(config.seed, 0, step, "step"),
                  deep_augmentation=deep_augmentation).item()
        for step, idx in enumerate(batch_iter(len(x_train), config.batch_size, config.seed, 0))
    ]
    record(0, float(np.mean(init_losses)))

    losses = []
    global_step = 0
    for epoch in range(1, config.epochs + 1):
        for step, idx in enumerate(batch_iter(len(x_train), config.batch_size, config.seed, epoch)):
            lr = config.lr
            if config.lr_schedule == "cosine":
                lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * global_step / total_steps))
            losses.append(train_step(encoder, x_train[idx], config, state,
                                     derive_seed(config.seed, epoch, step, "step"), lr, deep_augmentation))
            global_step += 1
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            record(epoch, float(np.mean(losses)))
            losses = []
    return records
