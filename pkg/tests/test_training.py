import csv
import hashlib
import struct

import numpy as np
import pytest

from wavescore import tensor as T
from wavescore.data import DatasetSpec, load_dataset, read_image, toy_faces, write_image
from wavescore.errors import CheckpointVersionError, ConfigError, IntegrityError, NumericError
from wavescore.models import Model, build_conditional_denoiser, build_lowpass_denoiser, build_network_spec
from wavescore.training import (MAGIC, Checkpoint, TrainConfig, checkpoint_bytes, corrupt,
                                load_checkpoint, load_model, parse_checkpoint, save_checkpoint,
                                train_denoiser, training_pairs)
from wavescore.wavelet import build_pyramid


def test_corrupt_basics():
    x = np.linspace(0, 1, 50).reshape(5, 10)
    assert np.array_equal(corrupt(x, 0.0, seed=1), x)
    np.testing.assert_array_equal(corrupt(x, 0.3, seed=4), corrupt(x, 0.3, seed=4))
    with pytest.raises(ConfigError):
        corrupt(x, -0.1)


def test_corrupt_variance_monte_carlo():
    x = np.zeros(10 ** 6)
    v = np.var(corrupt(x, 0.5, seed=9) - x)
    assert abs(v / 0.25 - 1) < 0.01


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(sigma_min=0.5, sigma_max=0.5)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)


def test_dataset_shapes_and_range():
    train, test = load_dataset(DatasetSpec("toyfaces", 32, 20, 5, seed=2))
    assert train.shape == (20, 1, 32, 32) and test.shape == (5, 1, 32, 32)
    assert train.dtype == np.float32
    assert train.min() >= 0 and train.max() <= 1
    again, _ = load_dataset(DatasetSpec("toyfaces", 32, 20, 5, seed=2))
    np.testing.assert_array_equal(train, again)
    g, _ = load_dataset(DatasetSpec("gaussfield", 32, 4, 0))
    assert g.min() >= 0 and g.max() <= 1


def test_image_io_round_trip(tmp_path):
    img = toy_faces(1, 16, seed=0)[0, 0]
    for suffix in (".pgm", ".png"):
        path = tmp_path / f"face{suffix}"
        write_image(path, img)
        back = read_image(path)
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
    assert open(tmp_path / "face.pgm", "rb").read(2) == b"P5"
    d = DatasetSpec(str(tmp_path), 16, 1, 1)
    train, test = load_dataset(d)
    assert train.shape == (1, 1, 16, 16)


def test_training_pairs():
    x = toy_faces(3, 16, seed=1)
    t, c = training_pairs(x, "lowpass", depth=2)
    assert t.shape == (3, 1, 4, 4) and c is None
    t, c = training_pairs(x, "conditional", scale=2)
    p = build_pyramid(x.astype(np.float64), 2)
    np.testing.assert_allclose(t, p.details[1], atol=1e-6)
    np.testing.assert_allclose(c, p.lowpass, atol=1e-6)
    with pytest.raises(ConfigError):
        training_pairs(x, "joint")


def test_channel_mismatch():
    m = build_lowpass_denoiser(3, 4)
    with pytest.raises(ConfigError):
        train_denoiser(m, toy_faces(4, 8), TrainConfig(batch_size=2), mode="conditional", scale=1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    m = build_lowpass_denoiser(3, 4)
    x = np.full((4, 1, 8, 8), 3e38, dtype=np.float32)
    with pytest.raises(NumericError):
        train_denoiser(m, x, TrainConfig(batch_size=2, max_steps=3))


def test_conditional_training_keeps_conditioning_clean(monkeypatch):
    m = build_conditional_denoiser(3, n_layers=3, width=4)
    x = toy_faces(8, 16, seed=5)
    low = build_pyramid(x.astype(np.float64), 1).lowpass
    seen = []
    orig = m.forward

    def spy(node, train=False, param_nodes=None):
        seen.append(node.value.copy())
        return orig(node, train=train, param_nodes=param_nodes)

    monkeypatch.setattr(m, "forward", spy)
    train_denoiser(m, x, TrainConfig(batch_size=4, epochs=2, seed=1), mode="conditional", scale=1)
    assert len(seen) == 4
    for inp in seen:
        cond = inp[:, 3:4]
        # each conditioning channel is exactly one of the clean low-pass bands
        match = [np.min([np.max(np.abs(c - l)) for l in low.astype(np.float32)]) for c in cond]
        assert max(match) == 0.0


def test_one_image_sanity_fit():
    x = toy_faces(1, 16, seed=3)
    m = Model(build_network_spec([3] * 5, 1, 1, width=16), seed=0)
    cfg = TrainConfig(batch_size=1, sigma_min=0.1, sigma_max=0.1001, epochs=2000, max_steps=2000,
                      resample_noise=False)
    ck = train_denoiser(m, x, cfg)
    assert np.min(ck.loss_history[:, 2]) < 1e-4


@pytest.fixture(scope="module")
def small_run():
    x = toy_faces(300, 16, seed=1)
    m = build_lowpass_denoiser(5, 16, seed=0)
    ck = train_denoiser(m, x[:256], TrainConfig(batch_size=16, epochs=40, seed=0))
    return m, ck, x[256:]


def test_smoothed_epoch_loss_non_increasing(small_run):
    _, ck, _ = small_run
    h = ck.loss_history
    epochs = int(h[-1, 0]) + 1
    per_epoch = np.array([h[h[:, 0] == e, 2].mean() for e in range(epochs)])
    smooth = np.convolve(per_epoch, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) <= 0)


def test_trained_beats_identity(small_run):
    m, _, held_out = small_run
    x = held_out.astype(np.float64)
    y = corrupt(x, 0.2, seed=3)
    assert np.mean((m(y) - x) ** 2) < np.mean((y - x) ** 2)


def test_training_is_reproducible():
    x = toy_faces(16, 8, seed=0)
    runs = []
    for _ in range(2):
        m = build_lowpass_denoiser(3, 4, seed=1)
        runs.append(checkpoint_bytes(train_denoiser(m, x, TrainConfig(batch_size=4, epochs=2, seed=5))))
    assert runs[0] == runs[1]


@pytest.fixture
def checkpoint():
    m = build_conditional_denoiser(5, n_layers=4, width=3, seed=2)
    return train_denoiser(m, toy_faces(8, 8, seed=0), TrainConfig(batch_size=4, max_steps=3),
                          mode="conditional", scale=1)


def test_checkpoint_round_trip(tmp_path, checkpoint):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(checkpoint, a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()
    c = load_checkpoint(a)
    assert c.spec == checkpoint.spec
    for p, q in zip(c.params, checkpoint.params):
        assert p.dtype == q.dtype and np.array_equal(p, q)
    assert c.adam.t == checkpoint.adam.t
    m = load_model(a)
    x = np.random.default_rng(0).standard_normal((1, 4, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(m(x), checkpoint.to_model()(x))


def test_every_single_byte_corruption_detected(checkpoint):
    data = checkpoint_bytes(checkpoint)
    for i in range(len(data)):
        bad = bytearray(data)
        bad[i] ^= 0x5A
        with pytest.raises(IntegrityError):
            parse_checkpoint(bytes(bad))


def test_truncation_detected(checkpoint):
    data = checkpoint_bytes(checkpoint)
    for n in (0, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(IntegrityError):
            parse_checkpoint(data[:n])


def test_newer_version_names_both(checkpoint):
    data = bytearray(checkpoint_bytes(checkpoint))
    struct.pack_into("<I", data, len(MAGIC), 7)
    body = bytes(data[:-8])
    data = body + hashlib.blake2b(body, digest_size=8).digest()
    with pytest.raises(CheckpointVersionError) as info:
        parse_checkpoint(data)
    assert "7" in str(info.value) and "1" in str(info.value)
    assert info.value.found == 7 and info.value.supported == 1


def test_loss_csv(tmp_path, checkpoint):
    path = tmp_path / "loss.csv"
    checkpoint.write_loss_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "step", "loss"]
    assert len(rows) == 1 + len(checkpoint.loss_history)


def test_blindness_no_noise_input(checkpoint):
    # the network sees only images: channel count is fixed by the data, never by sigma
    assert checkpoint.spec.in_channels == 4
    assert checkpoint.metadata["noise_range"] == [0.0, 1.0]
