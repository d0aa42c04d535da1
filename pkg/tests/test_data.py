import numpy as np
import pytest

from deepaug.data import (Dataset, SyntheticSpec, batch_iter, export_dataset, generate_synthetic, load_dataset,
                          parse_cifar, standardize, train_test_split, write_cifar)
from deepaug.errors import ContractError, FormatError, TruncationError
from deepaug.metrics import linear_probe


def cifar_bytes(labels, rng):
    labels = np.asarray(labels, dtype=np.uint8).reshape(len(labels), -1)
    pixels = rng.integers(0, 256, size=(len(labels), 3072), dtype=np.uint8)
    return np.concatenate([labels, pixels], axis=1).tobytes()


def test_zero_spread_collapses_to_superclass_centers():
    ds = generate_synthetic(SyntheticSpec(superclasses=3, subclasses=2, dim=5, per_subclass=4, sub_spread=0, noise=0))
    for k in range(3):
        pts = ds.features[ds.coarse_labels == k]
        assert np.all(pts == pts[0])
    assert not np.all(ds.features == ds.features[0])


def test_counts_and_labels():
    spec = SyntheticSpec(superclasses=3, subclasses=5, dim=4, per_subclass=7)
    ds = generate_synthetic(spec)
    assert len(ds) == 3 * 5 * 7
    assert ds.num_fine == 15 and ds.num_coarse == 3
    assert np.array_equal(ds.coarse_labels, ds.fine_labels // 5)


def test_synthetic_deterministic():
    a = generate_synthetic(SyntheticSpec(per_subclass=10))
    b = generate_synthetic(SyntheticSpec(per_subclass=10))
    c = generate_synthetic(SyntheticSpec(per_subclass=10, seed=1))
    assert a.features.tobytes() == b.features.tobytes()
    assert a.features.tobytes() != c.features.tobytes()


def test_synthetic_spec_invariants():
    with pytest.raises(ContractError):
        SyntheticSpec(dim=0)
    with pytest.raises(ContractError):
        SyntheticSpec(noise=-1)


def test_raw_coarse_probe_on_well_separated_mixture():
    ds = generate_synthetic(SyntheticSpec(per_subclass=50, super_spread=4.0, sub_spread=1.0, noise=0.5))
    tr, te = train_test_split(len(ds), 0.2, 0)
    assert linear_probe(ds.features, ds.coarse_labels, tr, te) >= 0.95


def test_cifar10_sizes(tmp_path, rng):
    p = tmp_path / "c10.bin"
    p.write_bytes(cifar_bytes([3, 9, 0], rng))
    ds = parse_cifar(p, "cifar10")
    assert ds.features.shape == (3, 3072) and ds.coarse_labels is None
    assert ds.fine_labels.tolist() == [3, 9, 0]
    assert ds.features.min() >= 0 and ds.features.max() <= 1


def test_cifar10_record_count_arithmetic(tmp_path):
    p = tmp_path / "big.bin"
    p.write_bytes(bytes(30_730_000))
    assert len(parse_cifar(p, "cifar10")) == 10_000


def test_cifar100_label_order(tmp_path, rng):
    p = tmp_path / "c100.bin"
    raw = cifar_bytes([[7, 42]], rng)
    assert len(raw) == 3074
    p.write_bytes(raw)
    ds = parse_cifar(p, "cifar100")
    assert ds.coarse_labels.tolist() == [7] and ds.fine_labels.tolist() == [42]
    np.testing.assert_array_equal(ds.features[0], np.frombuffer(raw[2:], np.uint8) / np.float32(255))


def test_cifar_truncation(tmp_path):
    p = tmp_path / "short.bin"
    p.write_bytes(bytes(3072))
    with pytest.raises(TruncationError, match=r"3073 bytes.*got 3072 bytes"):
        parse_cifar(p, "cifar10")
    p.write_bytes(bytes(3074 + 10))
    with pytest.raises(TruncationError, match="6148"):
        parse_cifar(p, "cifar100")
    p.write_bytes(b"")
    with pytest.raises(TruncationError):
        parse_cifar(p, "cifar10")


@pytest.mark.parametrize("variant,labels,message", [
    ("cifar10", [[1], [10]], r"record 1: label byte 0 = 10"),
    ("cifar100", [[19, 99], [20, 0]], r"record 1: label byte 0 = 20"),
    ("cifar100", [[0, 100]], r"record 0: label byte 1 = 100"),
])
def test_cifar_label_range(tmp_path, rng, variant, labels, message):
    p = tmp_path / "bad.bin"
    p.write_bytes(cifar_bytes(labels, rng))
    with pytest.raises(FormatError, match=message):
        parse_cifar(p, variant)


@pytest.mark.parametrize("variant,labels", [("cifar10", [[1], [9], [4]]), ("cifar100", [[1, 5], [19, 99]])])
def test_cifar_round_trip(tmp_path, rng, variant, labels):
    src, dst = tmp_path / "a.bin", tmp_path / "b.bin"
    src.write_bytes(cifar_bytes(labels, rng))
    write_cifar(parse_cifar(src, variant), dst, variant)
    assert dst.read_bytes() == src.read_bytes()


def test_cifar_unknown_variant(tmp_path):
    with pytest.raises(ContractError):
        parse_cifar(tmp_path / "x", "mnist")


def test_batch_iter_properties():
    a = batch_iter(103, 10, seed=4, epoch=2)
    assert [x.tolist() for x in a] == [x.tolist() for x in batch_iter(103, 10, seed=4, epoch=2)]
    assert [len(b) for b in a] == [10] * 10 + [3]
    covered = np.concatenate(a)
    assert sorted(covered.tolist()) == list(range(103))
    other = np.concatenate(batch_iter(103, 10, seed=4, epoch=3))
    assert np.any(covered != other)


def test_batch_iter_remainder_rules():
    assert [len(b) for b in batch_iter(11, 5, 0, 0)] == [5, 5]
    assert [len(b) for b in batch_iter(12, 5, 0, 0)] == [5, 5, 2]
    assert sorted(np.concatenate(batch_iter(12, 5, 0, 0)).tolist()) == list(range(12))
    with pytest.raises(ContractError):
        batch_iter(10, 0, 0, 0)


def test_split_partitions():
    tr, te = train_test_split(50, 0.2, 3)
    assert len(te) == 10 and sorted(np.concatenate([tr, te]).tolist()) == list(range(50))


def test_standardize_uses_train_statistics(rng):
    x = rng.normal(loc=3, scale=2, size=(40, 3))
    x[:, 2] = 5.0
    tr = np.arange(30)
    z = standardize(x, tr)
    np.testing.assert_allclose(z[tr].mean(axis=0), 0, atol=1e-6)
    np.testing.assert_allclose(z[tr, :2].std(axis=0), 1, atol=1e-5)
    assert np.all(z[:, 2] == 0)
    shifted = x.copy()
    shifted[30:] += 100
    assert np.array_equal(standardize(shifted, tr)[tr], z[tr])


def test_dataset_export_round_trip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(per_subclass=3, dim=4))
    export_dataset(ds, tmp_path / "d.daug")
    back = load_dataset(tmp_path / "d.daug")
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.fine_labels, ds.fine_labels)
    assert np.array_equal(back.coarse_labels, ds.coarse_labels)


def test_dataset_invariants():
    with pytest.raises(ContractError):
        Dataset(np.ones((3, 2)), [0, 1])
    with pytest.raises(ContractError):
        Dataset(np.array([[np.nan]]), [0])
