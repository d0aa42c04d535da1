"""Datasets: synthetic hierarchical Gaussian mixtures, CIFAR binary files, batching."""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError, FormatError, TruncationError
from .rng import Stream
from .tensorfile import read_tensors, write_tensors

CIFAR_PIXELS = 3072
CIFAR_LAYOUT = {
    # variant: (record bytes, label bytes, classes per label byte)
    "cifar10": (1 + CIFAR_PIXELS, 1, (10,)),
    "cifar100": (2 + CIFAR_PIXELS, 2, (20, 100)),
}


@dataclass
class Dataset:
    features: np.ndarray  # float32 [n x d]
    fine_labels: np.ndarray  # int64 [n]
    coarse_labels: Optional[np.ndarray] = None
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.fine_labels = np.asarray(self.fine_labels, dtype=np.int64)
        if self.coarse_labels is not None:
            self.coarse_labels = np.asarray(self.coarse_labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.fine_labels.shape != (n,) or (self.coarse_labels is not None and self.coarse_labels.shape != (n,)):
            raise ContractError("dataset: label arrays must have one entry per row")
        if not np.all(np.isfinite(self.features)):
            raise ContractError("dataset: features must be finite")

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_fine(self) -> int:
        return int(self.fine_labels.max()) + 1

    @property
    def num_coarse(self) -> int:
        return 0 if self.coarse_labels is None else int(self.coarse_labels.max()) + 1


@dataclass(frozen=True)
class SyntheticSpec:
    superclasses: int = 4
    subclasses: int = 4
    dim: int = 64
    per_subclass: int = 250
    super_spread: float = 4.0
    sub_spread: float = 1.0
    noise: float = 4.0
    seed: int = 0

    def __post_init__(self):
        for key in ("superclasses", "subclasses", "dim", "per_subclass"):
            if getattr(self, key) < 1:
                raise ContractError(f"synthetic spec: {key} must be >= 1")
        for key in ("super_spread", "sub_spread", "noise"):
            if getattr(self, key) < 0:
                raise ContractError(f"synthetic spec: {key} must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Two-level Gaussian mixture; fine label = subclass id, coarse label = superclass id."""
    K, M, d, n = spec.superclasses, spec.subclasses, spec.dim, spec.per_subclass
    s = Stream.of(spec.seed, "synthetic")
    centers = s.normal((K, d)) * spec.super_spread
    subcenters = centers[:, None, :] + s.normal((K, M, d)) * spec.sub_spread
    points = subcenters[:, :, None, :] + s.normal((K, M, n, d)) * spec.noise
    fine = np.repeat(np.arange(K * M), n)
    coarse = np.repeat(np.arange(K), M * n)
    return Dataset(points.reshape(K * M * n, d), fine, coarse, name="synthetic")


def parse_cifar(path, variant: str) -> Dataset:
    """Parse a CIFAR-10/100 binary batch file; pixels scaled to [0, 1]."""
    if variant not in CIFAR_LAYOUT:
        raise ContractError(f"variant must be one of {sorted(CIFAR_LAYOUT)}, got {variant!r}")
    record, nlab, limits = CIFAR_LAYOUT[variant]
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % record:
        expected = (len(raw) // record + 1) * record
        raise TruncationError(
            f"{variant}: expected a multiple of {record} bytes (next: {expected}), got {len(raw)} bytes"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
    labels = arr[:, :nlab].astype(np.int64)
    for col, limit in enumerate(limits):
        bad = np.nonzero(labels[:, col] >= limit)[0]
        if bad.size:
            i = int(bad[0])
            raise FormatError(f"record {i}: label byte {col} = {labels[i, col]} outside [0, {limit})")
    pixels = arr[:, nlab:].astype(np.float32) / np.float32(255.0)
    if variant == "cifar10":
        return Dataset(pixels, labels[:, 0], None, name="cifar10")
    return Dataset(pixels, labels[:, 1], labels[:, 0], name="cifar100")


def write_cifar(dataset: Dataset, path, variant: str) -> None:
    """Inverse of :func:`parse_cifar` (pixels x255, rounded)."""
    pixels = np.rint(dataset.features * 255.0).astype(np.uint8)
    if variant == "cifar10":
        labels = dataset.fine_labels[:, None]
    elif variant == "cifar100":
        labels = np.stack([dataset.coarse_labels, dataset.fine_labels], axis=1)
    else:
        raise ContractError(f"unknown variant {variant!r}")
    Path(path).write_bytes(np.concatenate([labels.astype(np.uint8), pixels], axis=1).tobytes())


def batch_iter(n: int, batch_size: int, seed: int, epoch: int) -> list:
    """Index batches for one epoch; a trailing batch smaller than 2 is dropped."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    n = len(n) if hasattr(n, "__len__") else int(n)
    perm = Stream.of(seed, epoch, "batch_iter").permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def train_test_split(n: int, test_fraction: float, seed: int):
    if not 0 < test_fraction < 1:
        raise ContractError(f"test_fraction must be in (0,1), got {test_fraction}")
    perm = Stream.of(seed, "split").permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def standardize(features: np.ndarray, train_idx) -> np.ndarray:
    """Per-coordinate zero mean / unit variance using train-split statistics only."""
    x = np.asarray(features, dtype=np.float64)
    mu = x[train_idx].mean(axis=0)
    sd = x[train_idx].std(axis=0)
    sd[sd == 0] = 1.0
    return ((x - mu) / sd).astype(np.float32)


def export_dataset(dataset: Dataset, path) -> None:
    tensors = {"features": dataset.features, "fine_labels": dataset.fine_labels.astype(np.float32)}
    if dataset.coarse_labels is not None:
        tensors["coarse_labels"] = dataset.coarse_labels.astype(np.float32)
    write_tensors(path, tensors)


def load_dataset(path, name: Optional[str] = None) -> Dataset:
    t = read_tensors(path)
    if "features" not in t or "fine_labels" not in t:
        raise FormatError(f"{path}: dataset file needs 'features' and 'fine_labels' tensors")
    coarse = t.get("coarse_labels")
    return Dataset(t["features"], t["fine_labels"].astype(np.int64),
                   None if coarse is None else coarse.astype(np.int64),
                   name=name or Path(path).stem)
