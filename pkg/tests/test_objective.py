import math

import numpy as np
import pytest
import torch

from psldenoise.network import NetworkConfig, PredictorOutput, init_params
from psldenoise.objective import (LossConfig, complement_mean, denoise, posterior_combine, psl_loss,
                                  supervised_mse_loss)
from psldenoise.phases import decompose, recompose

from .conftest import random_stack
from .oracles import finite_difference_gradients, gaussian_product_posterior_mean


def const_pred(mu, var_x, var_eps, shape=(1, 4, 3, 3)):
    f = lambda v: torch.full(shape, float(v), dtype=torch.float64)
    return PredictorOutput(f(mu), f(var_x), f(var_eps))


def test_loss_perfect_fit_example():
    pred = const_pred(0.4, 0.5, 0.5)
    targets = torch.full((1, 4, 3, 3), 0.4, dtype=torch.float64)
    out = psl_loss(pred, targets)
    assert float(out.data_term) == 0.0
    assert float(out.log_variance_term) == pytest.approx(0.0, abs=1e-15)
    assert float(out.noise_penalty_term) == pytest.approx(-0.05, abs=1e-15)
    assert float(out.prior_term) == pytest.approx(0.0, abs=1e-15)
    assert float(out.total) == pytest.approx(-0.05, abs=1e-15)


def test_loss_unit_residual_example():
    pred = const_pred(0.2, 0.5, 0.5)
    targets = torch.full((1, 4, 3, 3), 1.2, dtype=torch.float64)
    out = psl_loss(pred, targets)
    assert float(out.total) == pytest.approx(0.95, abs=1e-12)
    # sum reduction scales by the number of (phase, pixel) elements
    summed = psl_loss(pred, targets, LossConfig(reduction="sum"))
    assert float(summed.total) == pytest.approx(0.95 * 4 * 9, abs=1e-10)


def test_prior_term_formula():
    rng = np.random.default_rng(0)
    mu = torch.from_numpy(rng.uniform(size=(2, 4, 3, 5)))
    pred = PredictorOutput(mu, torch.ones_like(mu), torch.ones_like(mu))
    out = psl_loss(pred, mu.clone(), LossConfig(lam=2.0))
    m = mu.numpy()
    ref = np.mean([np.abs(m[:, e] - np.mean([m[:, c] for c in range(4) if c != e], axis=0)) for e in range(4)]) / 2
    assert float(out.prior_term) == pytest.approx(ref, rel=1e-12)
    np.testing.assert_allclose(complement_mean(mu).numpy()[:, 0], m[:, 1:].mean(axis=1), rtol=1e-12)


def test_prior_vanishes_as_lambda_grows():
    rng = np.random.default_rng(1)
    mu = torch.from_numpy(rng.uniform(size=(1, 4, 4, 4)))
    pred = PredictorOutput(mu, torch.ones_like(mu) * 0.3, torch.ones_like(mu) * 0.2)
    y = mu + 0.1
    base = psl_loss(pred, y, LossConfig(lam=1.0))
    huge = psl_loss(pred, y, LossConfig(lam=1e12))
    assert float(huge.prior_term) < 1e-12
    for name in ("data_term", "log_variance_term", "noise_penalty_term"):
        assert float(getattr(huge, name)) == float(getattr(base, name))


def test_breakdown_adds_up():
    rng = np.random.default_rng(2)
    f = lambda: torch.from_numpy(rng.uniform(0.01, 1, size=(2, 4, 5, 5)))
    pred = PredictorOutput(f(), f(), f())
    out = psl_loss(pred, f())
    parts = float(out.data_term) + float(out.log_variance_term) + float(out.noise_penalty_term) + float(out.prior_term)
    assert abs(float(out.total) - parts) <= 1e-10 * abs(float(out.total))


def test_phase_permutation_symmetry():
    rng = np.random.default_rng(3)
    f = lambda: torch.from_numpy(rng.uniform(0.01, 1, size=(1, 4, 5, 5)))
    pred, y = PredictorOutput(f(), f(), f()), f()
    perm = [2, 0, 3, 1]
    permuted = PredictorOutput(pred.mu[:, perm], pred.var_x[:, perm], pred.var_eps[:, perm])
    a = float(psl_loss(pred, y).total)
    b = float(psl_loss(permuted, y[:, perm]).total)
    assert a == pytest.approx(b, rel=1e-12)


def test_loss_rejects_nonpositive_variance_and_shape():
    pred = const_pred(0.1, 0.0, 0.5)
    with pytest.raises(ValueError, match="positive"):
        psl_loss(pred, torch.zeros(1, 4, 3, 3, dtype=torch.float64))
    with pytest.raises(ValueError, match="shape"):
        psl_loss(const_pred(0.1, 1, 1), torch.zeros(1, 4, 3, 4, dtype=torch.float64))


def test_targets_receive_no_gradient(tiny_net, rng):
    x = random_stack(rng).requires_grad_(True)
    out = psl_loss(tiny_net(x.detach()), x)
    out.total.backward()
    assert x.grad is None
    assert all(p.grad is not None for p in tiny_net.parameters())


def test_gradients_match_finite_differences():
    cfg = NetworkConfig(extractor_layers=2, fuser_layers=2, channels_per_branch=2, seed=11)
    net = init_params(cfg).double()
    x = random_stack(np.random.default_rng(5), 4, 4, dtype=torch.float64)
    loss_fn = lambda: psl_loss(net(x), x).total
    net.zero_grad()
    loss_fn().backward()
    params = list(net.parameters())
    analytic = torch.cat([p.grad.reshape(-1) for p in params])
    numeric = torch.cat([g.reshape(-1) for g in finite_difference_gradients(loss_fn, params)])
    rel = (analytic - numeric).norm() / max(analytic.norm(), numeric.norm())
    assert rel < 1e-4


@pytest.mark.parametrize("y,mu,ve,vx,expected", [(2, 0, 1, 1, 1.0), (10, 4, 4, 1, 5.2)])
def test_posterior_combine_examples(y, mu, ve, vx, expected):
    assert posterior_combine(y, mu, vx, ve) == pytest.approx(expected, abs=1e-12)
    assert gaussian_product_posterior_mean(y, mu, ve, vx) == pytest.approx(expected, abs=1e-6)


def test_posterior_combine_untrusted_measurement():
    out = posterior_combine(10.0, 4.0, 1.0, 1e9)
    assert abs(out - 4.0) / 4.0 < 1e-6


def test_posterior_combine_interval_property():
    rng = np.random.default_rng(7)
    y, mu = rng.normal(size=1000), rng.normal(size=1000)
    vx, ve = rng.uniform(1e-4, 10, 1000), rng.uniform(1e-4, 10, 1000)
    out = posterior_combine(y, mu, vx, ve)
    assert np.all(out >= np.minimum(y, mu) - 1e-12) and np.all(out <= np.maximum(y, mu) + 1e-12)


def test_posterior_combine_rejects_nonpositive():
    with pytest.raises(ValueError):
        posterior_combine(1.0, 0.0, np.array([1.0]), np.array([0.0]))


def test_supervised_mse():
    a = np.random.default_rng(0).normal(size=(6, 5))
    assert supervised_mse_loss(a, a) == 0
    assert supervised_mse_loss(a + 3.0, a) == pytest.approx(9.0, rel=1e-12)
    b = a.copy()
    b[2, 3] += 2.0
    assert supervised_mse_loss(b, a) == pytest.approx(4.0 / 30, rel=1e-12)
    with pytest.raises(ValueError):
        supervised_mse_loss(a, a[:, :4])


class StubNet(torch.nn.Module):
    """Returns fixed variance levels and a mean map equal to 0.3 everywhere."""

    def __init__(self, var_x, var_eps):
        super().__init__()
        self.dummy = torch.nn.Parameter(torch.zeros(1))
        self.var_x, self.var_eps = var_x, var_eps

    def forward(self, stack):
        ones = torch.ones_like(stack)
        return PredictorOutput(0.3 * ones, self.var_x * ones, self.var_eps * ones)


def test_denoise_pure_prior_limit():
    img = np.random.default_rng(0).uniform(0, 2000, size=(10, 12)).astype(np.float32)
    out = denoise(img, StubNet(1.0, 1e12))
    np.testing.assert_allclose(out, np.full_like(img, 600.0), rtol=1e-6)


def test_denoise_pure_measurement_limit():
    img = np.random.default_rng(0).uniform(0, 2000, size=(9, 12)).astype(np.float32)
    out = denoise(img, StubNet(1e12, 1.0))
    assert out.shape == img.shape
    np.testing.assert_allclose(out, img, rtol=1e-5)


def test_denoise_uses_own_phase_measurement(tiny_net):
    img = np.random.default_rng(4).uniform(500, 1500, size=(16, 16)).astype(np.float32)
    out = denoise(img, tiny_net)
    with torch.no_grad():
        stack = torch.from_numpy(decompose(img / 2000.0))[None]
        pred = tiny_net(stack)
        ref = recompose(posterior_combine(stack, pred.mu, pred.var_x, pred.var_eps)[0]).numpy() * 2000
    np.testing.assert_allclose(out, ref, rtol=1e-5)
    assert np.array_equal(denoise(img, tiny_net), out)
