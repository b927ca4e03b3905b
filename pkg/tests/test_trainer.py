import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from psldenoise.checkpoint import load_checkpoint, read_arrays, save_checkpoint
from psldenoise.errors import DataError, NumericalError
from psldenoise.network import NetworkConfig, init_params
from psldenoise.trainer import (TrainConfig, augment, denormalize, lr_at, make_optimizer, normalize,
                                parse_log, train)

from .oracles import adam_by_hand

SMALL_NET = NetworkConfig(extractor_layers=2, fuser_layers=2, channels_per_branch=4, seed=0)


def noisy_images(n=2, size=32, seed=0):
    rng = np.random.default_rng(seed)
    return [(1000 + 50 * rng.standard_normal((size, size))).astype(np.float32) for _ in range(n)]


def quick_cfg(**kw):
    base = dict(total_iterations=20, crop_size=(32, 32), log_every=1, checkpoint_every=5, seed=7)
    base.update(kw)
    return TrainConfig(**base)


def test_normalize_roundtrip():
    assert normalize(2000.0) == 1.0
    assert normalize(0.0) == 0.0
    img = np.random.default_rng(0).uniform(0, 3000, size=(16, 16))
    assert np.max(np.abs(denormalize(normalize(img)) - img)) < 1e-6 * 3000
    with pytest.raises(ValueError):
        normalize(img, 0.0)


def test_augment_shapes_and_offsets():
    img = np.random.default_rng(0).uniform(1, 2, size=(512, 512))
    rng = np.random.default_rng(0)
    assert np.pad(img, 16).shape == (544, 544)
    assert augment(img, rng, 16, (512, 512)).shape == (512, 512)
    np.testing.assert_array_equal(augment(img, rng, 16, (512, 512), offset=(16, 16)), img)
    corner = augment(img, rng, 16, (512, 512), offset=(0, 0))
    assert np.all(corner[:16] == 0) and np.all(corner[:, :16] == 0)
    np.testing.assert_array_equal(corner[16:, 16:], img[:496, :496])


def test_augment_deterministic_given_rng():
    img = np.arange(64.0).reshape(8, 8)
    a = augment(img, np.random.default_rng(3), 4, (8, 8))
    b = augment(img, np.random.default_rng(3), 4, (8, 8))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        augment(img, np.random.default_rng(0), 1, (11, 11))


def test_lr_schedule():
    cfg = TrainConfig(total_iterations=100000)
    assert lr_at(0, cfg) == 1e-4
    assert lr_at(49999, cfg) == 1e-4
    assert lr_at(50000, cfg) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at(74999, cfg) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at(75000, cfg) == pytest.approx(1e-6, rel=1e-12)
    odd = TrainConfig(total_iterations=5001)
    assert lr_at(math.floor(0.5 * 5001), odd) == pytest.approx(1e-5)
    assert lr_at(math.floor(0.5 * 5001) - 1, odd) == 1e-4


@pytest.mark.parametrize("points", [(0.75, 0.5), (0.0, 0.5), (0.5, 1.0)])
def test_lr_drop_points_validated(points):
    with pytest.raises(ValidationError):
        TrainConfig(lr_drop_points=points)


def test_adam_matches_hand_trajectory():
    # quadratic f(x) = 0.5 * a * (x - c)^2
    a, c, x0, lr = 3.0, 1.5, -2.0, 0.1
    x = torch.nn.Parameter(torch.tensor(x0, dtype=torch.float64))
    opt = torch.optim.Adam([x], lr=lr, betas=(0.9, 0.999), eps=1e-8)
    got = []
    for _ in range(3):
        opt.zero_grad()
        (0.5 * a * (x - c) ** 2).backward()
        opt.step()
        got.append(x.item())
    expected = adam_by_hand(lambda v: a * (v - c), x0, lr)
    assert np.max(np.abs(np.array(got) - np.array(expected))) < 1e-12


def test_make_optimizer_uses_config():
    opt = make_optimizer(init_params(SMALL_NET), TrainConfig())
    group = opt.param_groups[0]
    assert group["betas"] == (0.9, 0.999) and group["eps"] == 1e-8 and group["lr"] == 1e-4


def test_training_deterministic(tmp_path):
    imgs = noisy_images()
    net_a, hist_a = train(imgs, SMALL_NET, train_cfg=quick_cfg(), out_dir=tmp_path / "a")
    net_b, hist_b = train(imgs, SMALL_NET, train_cfg=quick_cfg(), out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    assert [h["total"] for h in hist_a] == [h["total"] for h in hist_b]


def test_training_log_format(tmp_path):
    train(noisy_images(), SMALL_NET, train_cfg=quick_cfg(total_iterations=4), out_dir=tmp_path)
    records = parse_log(tmp_path / "train_log.txt")
    assert [r["iter"] for r in records] == [1, 2, 3, 4]
    assert set(records[0]) == {"iter", "lr", "total", "data", "logvar", "penalty", "prior", "wall"}
    r = records[0]
    assert r["total"] == pytest.approx(r["data"] + r["logvar"] + r["penalty"] + r["prior"], rel=1e-6)


def test_resume_matches_uninterrupted(tmp_path):
    imgs = noisy_images()
    cfg = quick_cfg(total_iterations=12, checkpoint_every=6)
    _, full = train(imgs, SMALL_NET, train_cfg=cfg, out_dir=tmp_path / "full")
    train(imgs, SMALL_NET, train_cfg=cfg, out_dir=tmp_path / "part", stop_at=6)
    _, rest = train(imgs, SMALL_NET, train_cfg=cfg, out_dir=tmp_path / "part",
                    resume_from=tmp_path / "part" / "checkpoint.ckpt")
    tail = {h["iter"]: h["total"] for h in full if h["iter"] > 6}
    assert [h["iter"] for h in rest] == sorted(tail)
    for h in rest:
        assert abs(h["total"] - tail[h["iter"]]) <= 1e-6
    logged = parse_log(tmp_path / "part" / "train_log.txt")
    assert [r["iter"] for r in logged] == list(range(1, 13))


def test_checkpoint_roundtrip_exact(tmp_path, rng):
    net = init_params(SMALL_NET)
    net.iteration = 42
    save_checkpoint(tmp_path / "m.ckpt", net)
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.iteration == 42 and loaded.config == net.config
    x = torch.from_numpy(rng.uniform(size=(1, 4, 8, 8)).astype(np.float32))
    with torch.no_grad():
        a, b = net(x), loaded(x)
    assert torch.equal(a.mu, b.mu) and torch.equal(a.var_x, b.var_x) and torch.equal(a.var_eps, b.var_eps)


def test_checkpoint_layout(tmp_path):
    net = init_params(SMALL_NET)
    save_checkpoint(tmp_path / "m.ckpt", net)
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == b"PSLCKPT\0"
    header, arrays = read_arrays(tmp_path / "m.ckpt")
    assert header["fingerprint"] == SMALL_NET.fingerprint()
    first = header["arrays"][0]
    assert first["name"] == "extractor.0.weight" and first["shape"] == [16, 1, 3, 3]
    np.testing.assert_array_equal(arrays["extractor.0.weight"], net.extractor[0].weight.detach().numpy())


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_nan_loss_aborts_and_keeps_checkpoint(tmp_path):
    cfg = quick_cfg(total_iterations=40, lr_initial=1e8, checkpoint_every=1)
    with pytest.raises(NumericalError):
        train(noisy_images(), SMALL_NET, train_cfg=cfg, out_dir=tmp_path)
    assert (tmp_path / "checkpoint.ckpt").exists()
    assert not (tmp_path / "model.ckpt").exists()


def test_empty_training_set():
    with pytest.raises(DataError):
        train([], SMALL_NET, train_cfg=quick_cfg())


def test_overfit_single_image():
    rng = np.random.default_rng(0)
    img = (1000 + 60 * rng.standard_normal((64, 64))).astype(np.float32)
    cfg = TrainConfig(total_iterations=500, crop_size=(64, 64), log_every=1, seed=1)
    net_cfg = NetworkConfig(extractor_layers=2, fuser_layers=2, channels_per_branch=8, seed=0)
    _, hist = train([img], net_cfg, train_cfg=cfg)
    losses = np.array([h["total"] for h in hist])
    smooth = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert smooth[-1] < losses[9]
    assert smooth[-1] < smooth[0]
