# -*- coding: utf-8 -*-

import numpy as np
import pytest
import torch
from musse.errors import ConfigError, ParameterError, ShapeError
from musse.fieldops import LSQSEConfig, lsqse_strain, warp_upsampled
from musse.losses import (
    PatchSpec, LossWeights, LossConfig,
    lncc, similarity_loss, consistency_loss, smoothness_loss,
    total_loss, compute_losses,
)


def lncc_oracle(a, b, p, s, eps):
    values = []
    for i in range(0, a.shape[0] - p + 1, s):
        for j in range(0, a.shape[1] - p + 1, s):
            x = a[i:i + p, j:j + p]
            y = b[i:i + p, j:j + p]
            x = x - x.mean()
            y = y - y.mean()
            values.append((x * y).mean() / np.sqrt((x * x).mean() * (y * y).mean() + eps ** 2))
    return np.mean(values)


def smoothness_oracle(d):
    total = 0.0
    for ch in range(d.shape[0]):
        f = d[ch]
        h, w = f.shape
        dxx = [f[r, c + 1] - 2 * f[r, c] + f[r, c - 1] for r in range(h) for c in range(1, w - 1)]
        dyy = [f[r + 1, c] - 2 * f[r, c] + f[r - 1, c] for r in range(1, h - 1) for c in range(w)]
        mixed = [(f[r + 1, c + 1] - f[r + 1, c - 1] - f[r - 1, c + 1] + f[r - 1, c - 1]) / 4
                 for r in range(1, h - 1) for c in range(1, w - 1)]
        total += (np.abs(dxx).mean() + 2 * np.abs(mixed).mean() + np.abs(dyy).mean()) / d.shape[0]
    return total


def test_lncc_matches_oracle():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((64, 64))
    b = 0.6 * a + 0.4 * rng.standard_normal((64, 64))
    for spec in (PatchSpec(), PatchSpec(7, stride=3), PatchSpec(3, epsilon=1e-3)):
        value = float(lncc(torch.from_numpy(a), torch.from_numpy(b), spec))
        expected = lncc_oracle(a, b, spec.patch_size, spec.step, spec.epsilon)
        assert abs(value - expected) <= 1e-10


def test_lncc_bounds():
    torch.manual_seed(0)
    a = torch.randn(1, 1, 27, 27, dtype=torch.float64)
    assert float(lncc(a, a)) == pytest.approx(1.0, abs=1e-6)
    assert float(lncc(a, -a)) == pytest.approx(-1.0, abs=1e-6)
    # flat patches have zero correlation
    assert float(lncc(a, torch.ones_like(a))) == 0.0
    with pytest.raises(ShapeError):
        lncc(a, a[..., :18])
    with pytest.raises(ShapeError):
        lncc(a[..., :8, :8], a[..., :8, :8])


def test_patch_spec():
    for kwargs in (dict(patch_size=4), dict(patch_size=1), dict(stride=0), dict(epsilon=0.0), dict(epsilon=0.1)):
        with pytest.raises(ParameterError):
            PatchSpec(**kwargs)
    assert PatchSpec().step == 9
    assert PatchSpec(stride=4).step == 4


def test_similarity_loss():
    torch.manual_seed(1)
    pre = torch.randn(1, 1, 18, 18, dtype=torch.float64)
    loss, per_t = similarity_loss(pre, [pre, -pre])
    assert len(per_t) == 2
    assert float(per_t[0]) == pytest.approx(0.0, abs=1e-6)
    assert float(per_t[1]) == pytest.approx(2.0, abs=1e-6)
    assert float(loss) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ConfigError):
        similarity_loss(pre, [])


def test_consistency_loss():
    torch.manual_seed(2)
    z = 0.01 * torch.randn(1, 1, 18, 18, dtype=torch.float64)
    zero = torch.zeros(1, 2, 18, 18, dtype=torch.float64)
    loss, per_t = consistency_loss([z], [zero])
    assert float(loss) == 0.0 and per_t == [None]
    loss, per_t = consistency_loss([z, z, z], [zero, zero, zero])
    assert per_t[0] is None and len(per_t) == 3
    assert float(loss) == pytest.approx(0.0, abs=1e-6)
    literal, _ = consistency_loss([z, z], [zero, zero], literal=True)
    assert float(literal) == pytest.approx(1.0, abs=1e-6)
    # a sign flip between steps is the least coherent pair
    loss, per_t = consistency_loss([z, -z], [zero, zero])
    assert float(per_t[1]) == pytest.approx(2.0, abs=1e-6)
    assert float(loss) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ShapeError):
        consistency_loss([z, z], [zero])


def test_smoothness_affine_zero():
    rows = torch.arange(12, dtype=torch.float64).view(12, 1).expand(12, 10)
    cols = torch.arange(10, dtype=torch.float64).view(1, 10).expand(12, 10)
    disp = torch.stack([0.5 * rows - 0.25 * cols + 1, 2 * cols])[None]
    loss, _ = smoothness_loss([disp])
    assert float(loss) == 0.0


def test_smoothness_closed_form():
    rows = torch.arange(12, dtype=torch.float64).view(12, 1).expand(12, 10)
    cols = torch.arange(10, dtype=torch.float64).view(1, 10).expand(12, 10)
    zero = torch.zeros_like(rows)
    # d2/dy2 of r^2 is 2 on the axial channel only
    loss, _ = smoothness_loss([torch.stack([rows ** 2, zero])[None]])
    assert float(loss) == pytest.approx(1.0, abs=1e-12)
    # both mixed terms of r*c are 1
    loss, _ = smoothness_loss([torch.stack([rows * cols, zero])[None]])
    assert float(loss) == pytest.approx(1.0, abs=1e-12)


def test_smoothness_matches_oracle():
    rng = np.random.default_rng(5)
    d = rng.standard_normal((2, 64, 64))
    loss, _ = smoothness_loss([torch.from_numpy(d)[None]])
    assert abs(float(loss) - smoothness_oracle(d)) <= 1e-10
    with pytest.raises(ShapeError):
        smoothness_loss([torch.zeros(1, 2, 4, 8)])
    with pytest.raises(ConfigError):
        smoothness_loss([])


def test_total_loss():
    w = LossWeights(1.0, 0.2, 0.3)
    assert total_loss(0.5, 0.25, 2.0, w) == pytest.approx(0.5 + 0.05 + 0.6)
    with pytest.raises(ParameterError):
        LossWeights(-1.0, 0.2, 0.3)
    with pytest.raises(ParameterError):
        LossWeights(0.0, 0.0, 0.0)


def test_loss_config_dict():
    cfg = LossConfig(LossWeights(1.0, 0.5, 0.1), PatchSpec(7), literal_consistency=True)
    assert LossConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        LossConfig.from_dict({"weights": {}, "lambda": 1})
    with pytest.raises(ConfigError):
        LossConfig.from_dict({"weights": {"delta": 1.0}})


def test_compute_losses_breakdown():
    torch.manual_seed(4)
    pre = torch.randn(1, 1, 18, 18, dtype=torch.float64)
    posts = [torch.randn(1, 1, 18, 18, dtype=torch.float64) for _ in range(2)]
    disps = [0.2 * torch.randn(1, 2, 18, 18, dtype=torch.float64) for _ in range(2)]
    strains = [lsqse_strain(d[:, :1], LSQSEConfig(5)) for d in disps]
    cfg = LossConfig(patch=PatchSpec(3))
    out = compute_losses(pre, posts, strains, disps, cfg)
    expected = out.l_sim + 0.2 * out.l_con + 0.3 * out.l_smooth
    assert float(out.l_total) == pytest.approx(float(expected), rel=1e-12)
    scalars = out.scalars()
    assert scalars["t"]["con"][0] is None
    assert len(scalars["t"]["sim"]) == 2 and len(scalars["t"]["smooth"]) == 2


def test_total_loss_gradient():
    torch.manual_seed(6)
    pre = torch.randn(1, 1, 8, 8, dtype=torch.float64)
    posts = [torch.randn(1, 1, 8, 8, dtype=torch.float64) for _ in range(2)]
    cfg = LossConfig(patch=PatchSpec(3))
    lsqse = LSQSEConfig(5)

    def loss(d1, d2):
        disps = [d1, d2]
        warped = [warp_upsampled(p, d, 2) for p, d in zip(posts, disps)]
        strains = [lsqse_strain(d[:, :1], lsqse) for d in disps]
        return compute_losses(pre, warped, strains, disps, cfg).l_total

    inputs = tuple((0.3 * torch.randn(1, 2, 8, 8, dtype=torch.float64)).requires_grad_() for _ in range(2))
    assert torch.autograd.gradcheck(loss, inputs)
