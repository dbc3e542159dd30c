import numpy as np
import pytest

from datarecon import dataio
from datarecon.errors import DataFormatError, ShapeError
from datarecon.model import Dataset


def fake_cifar(path, labels, seed=0):
    g = np.random.default_rng(seed)
    recs = np.zeros((len(labels), 3073), dtype=np.uint8)
    recs[:, 0] = labels
    recs[:, 1:] = g.integers(0, 256, size=(len(labels), 3072))
    recs.tofile(path)
    return recs


def test_load_cifar_records(tmp_path):
    recs = fake_cifar(tmp_path / "b1.bin", [0, 1, 9, 3])
    fake_cifar(tmp_path / "b2.bin", [1, 1], seed=1)
    x, y = dataio.load_cifar10([tmp_path / "b1.bin", tmp_path / "b2.bin"])
    assert x.shape == (6, 3072) and list(y) == [0, 1, 9, 3, 1, 1]
    np.testing.assert_array_equal(x[0], recs[0, 1:] / 255.0)
    assert 0.0 <= x.min() and x.max() <= 1.0


def test_load_cifar_empty_and_truncated(tmp_path):
    (tmp_path / "empty.bin").write_bytes(b"")
    x, y = dataio.load_cifar10(tmp_path / "empty.bin")
    assert x.shape == (0, 3072) and y.size == 0
    (tmp_path / "short.bin").write_bytes(bytes(3072))
    with pytest.raises(DataFormatError):
        dataio.load_cifar10(tmp_path / "short.bin")
    fake_cifar(tmp_path / "bad.bin", [10])
    with pytest.raises(DataFormatError, match="label"):
        dataio.load_cifar10(tmp_path / "bad.bin")


def test_select_binary(tmp_path):
    fake_cifar(tmp_path / "b.bin", [0, 1] * 15 + [2] * 5)
    x, y = dataio.load_cifar10(tmp_path / "b.bin")
    d = dataio.select_binary(x, y, 0, 1, 10, seed=3)
    assert d.n == 20 and np.sum(d.labels == 1) == 10
    assert np.array_equal(d.inputs, dataio.select_binary(x, y, 0, 1, 10, seed=3).inputs)
    with pytest.raises(ValueError):
        dataio.select_binary(x, y, 1, 1, 5)
    with pytest.raises(ValueError):
        dataio.select_binary(x, y, 0, 2, 10)


def test_partition_floor_rule_and_disjointness(gen):
    for n, sizes in ((20, (10, 10)), (21, (10, 11))):
        d = Dataset(gen.uniform(size=(n, 3)), np.ones(n))
        a, b = dataio.partition_disjoint(d, 0.5, seed=2)
        assert (a.n, b.n) == sizes
        assert not set(a.meta["rows"]) & set(b.meta["rows"])
        assert sorted(a.meta["rows"] + b.meta["rows"]) == list(range(n))
        a2, _ = dataio.partition_disjoint(d, 0.5, seed=2)
        np.testing.assert_array_equal(a.inputs, a2.inputs)
    with pytest.raises(ValueError):
        dataio.partition_disjoint(d, 1.0)
    with pytest.raises(ValueError):
        dataio.partition_disjoint(Dataset(np.zeros((1, 2)), [1.0]), 0.5)


def test_stratified_partition_keeps_balance(gen):
    d = Dataset(gen.uniform(size=(12, 2)), np.tile([1.0, -1.0], 6))
    a, b = dataio.partition_disjoint(d, 0.5, seed=0, stratified=True)
    assert np.sum(a.labels == 1) == np.sum(b.labels == 1) == 3


def test_synth_dataset():
    d = dataio.synth_dataset(12, 48, 1.0, seed=1)
    assert d.inputs.shape == (12, 48) and set(d.labels) == {1.0, -1.0}
    d.validate()
    np.testing.assert_array_equal(d.inputs, dataio.synth_dataset(12, 48, 1.0, seed=1).inputs)
    assert dataio.synth_dataset(2, 3, seed=0).n == 2
    with pytest.raises(ValueError):
        dataio.synth_dataset(3, 4)


def test_well_separated_blobs_are_learnable():
    from datarecon.model import LossSpec, ModelSpec, forward
    from datarecon.trainer import TrainConfig, train
    d = dataio.synth_dataset(20, 10, separation=2.0, seed=4, sigma=0.05)
    rep = train(ModelSpec.affine(10), d, LossSpec("logistic", 1e-3), TrainConfig())
    assert np.all(np.sign(forward(rep.theta_star.spec, rep.theta_star, d.inputs)) == d.labels)


def test_array_container_round_trip(tmp_path, gen):
    arrs = {"a": gen.normal(size=(3, 2)), "b": np.arange(4.0)}
    p = dataio.write_arrays(tmp_path / "x.bin", arrs, {"kind": "test"})
    header, back = dataio.read_arrays(p)
    assert header["kind"] == "test"
    for k in arrs:
        assert back[k].tobytes() == arrs[k].tobytes()
    blob = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(blob[:-3])
    with pytest.raises(DataFormatError):
        dataio.read_arrays(tmp_path / "t.bin")
    (tmp_path / "j.bin").write_bytes(b"nope")
    with pytest.raises(DataFormatError):
        dataio.read_arrays(tmp_path / "j.bin")


def test_export_black_image_and_round_trip(tmp_path, gen):
    x = np.vstack([np.zeros(3072), gen.uniform(size=3072), gen.normal(size=3072)])
    man = dataio.export_images(x, (32, 32, 3), tmp_path, "r")
    assert man["count"] == 3 and (tmp_path / "index.json").exists()
    black = (tmp_path / "r_0000.ppm").read_bytes()
    assert black.startswith(b"P6\n32 32\n255\n") and set(black[13:]) == {0}
    for i in (1, 2):
        back = dataio.read_ppm(tmp_path / f"r_{i:04d}.ppm")
        assert np.max(np.abs(back - np.clip(x[i], 0, 1))) <= 1 / 255


def test_export_geometry_mismatch(tmp_path):
    with pytest.raises(ShapeError):
        dataio.export_images(np.zeros((1, 10)), (32, 32, 3), tmp_path)
    assert dataio.geometry_for(48) == (4, 4, 3)
    assert dataio.geometry_for(3072) == (32, 32, 3)


def test_fingerprint_sensitive_to_content():
    a = np.zeros(3)
    assert dataio.fingerprint(a) == dataio.fingerprint(a.copy())
    assert dataio.fingerprint(a) != dataio.fingerprint(a + 1e-300)
