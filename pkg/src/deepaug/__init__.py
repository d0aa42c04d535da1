"""Deep Augmentation: targeted-layer dropout for contrastive learning, with analysis tools."""
from .augment import AugmentationSpec, ViewPlan, augmented_forward, dropout, input_augment, plan_views
from .autodiff import Graph, Tensor, grad_check, stop_gradient
from .contrastive import cosine_sim, info_nce
from .data import Dataset, SyntheticSpec, batch_iter, generate_synthetic, parse_cifar
from .metrics import ProbeConfig, alignment, cka_matrix, linear_cka, linear_probe, uniformity
from .nn import Layer, LayeredEncoder, init_params, load_checkpoint, save_checkpoint, set_freeze
from .trainer import MetricsReport, OptimizerState, TrainConfig, run_experiment, sgd_step, train_step

__version__ = "0.1.0"
