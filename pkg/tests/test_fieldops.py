# -*- coding: utf-8 -*-

import warnings
import numpy as np
import pytest
import torch
from musse.errors import ParameterError, ShapeError
from musse.fieldops import (
    DisplacementField, StrainMap, LSQSEConfig,
    warp_bilinear, warp_upsampled, compose_residual,
    lsqse_kernel, lsqse_strain, strain_from_displacement,
    maxabs_scale, mean_abs_difference, upsample_grid, upsample_frame,
)


def affine_image(h=24, w=20, dtype=torch.float64):
    rows = torch.arange(h, dtype=dtype).view(h, 1)
    cols = torch.arange(w, dtype=dtype).view(1, w)
    return (0.7 * rows - 0.3 * cols + 2.0).expand(h, w)[None, None].clone()


def constant_disp(dy, dx, h=24, w=20, dtype=torch.float64):
    disp = torch.zeros(1, 2, h, w, dtype=dtype)
    disp[:, 0] = dy
    disp[:, 1] = dx
    return disp


def test_warp_identity():
    frame = torch.randn(2, 1, 16, 16)
    out = warp_bilinear(frame, torch.zeros(2, 2, 16, 16))
    assert torch.equal(out, frame)


def test_warp_affine_exact():
    frame = affine_image()
    out = warp_bilinear(frame, constant_disp(1.25, -0.5))
    expected = frame + 0.7 * 1.25 - 0.3 * -0.5
    # away from the clamped border
    assert torch.allclose(out[..., :20, 1:], expected[..., :20, 1:], atol=1e-9)


def test_warp_integer_shift():
    frame = torch.randn(1, 1, 16, 16, dtype=torch.float64)
    out = warp_bilinear(frame, constant_disp(2.0, 0.0, 16, 16))
    assert torch.equal(out[..., :14, :], frame[..., 2:, :])
    # the border row repeats
    assert torch.equal(out[..., 15, :], frame[..., 15, :])


def test_warp_shapes():
    with pytest.raises(ShapeError):
        warp_bilinear(torch.zeros(1, 1, 16, 16), torch.zeros(1, 1, 16, 16))
    with pytest.raises(ShapeError):
        warp_bilinear(torch.zeros(1, 1, 16, 16), torch.zeros(1, 2, 16, 8))
    with pytest.raises(ShapeError):
        warp_bilinear(torch.zeros(16, 16), torch.zeros(2, 16, 16))


def test_warp_gradient_flows():
    torch.manual_seed(0)
    frame = torch.randn(1, 1, 12, 12, dtype=torch.float64)
    disp = (0.3 * torch.randn(1, 2, 12, 12, dtype=torch.float64)).requires_grad_()
    assert torch.autograd.gradcheck(lambda d: warp_bilinear(frame, d), (disp,))


def test_upsample_grid_nested():
    x = torch.randn(1, 2, 8, 6, dtype=torch.float64)
    up = upsample_grid(x, 4)
    assert up.shape == (1, 2, 29, 21)
    assert torch.allclose(up[..., ::4, ::4], x, atol=1e-12)


def test_warp_upsampled():
    frame = affine_image()
    disp = constant_disp(0.75, 0.25)
    out = warp_upsampled(frame, disp, 4)
    expected = frame + 0.7 * 0.75 - 0.3 * 0.25
    assert torch.allclose(out[..., :22, :19], expected[..., :22, :19], atol=1e-9)
    zero = torch.zeros_like(disp)
    assert torch.allclose(warp_upsampled(frame, zero, 4), frame, atol=1e-12)
    assert torch.equal(warp_upsampled(frame, disp, 1), warp_bilinear(frame, disp))
    with pytest.raises(ParameterError):
        warp_upsampled(frame, disp, 0)
    with pytest.raises(ParameterError):
        warp_upsampled(frame, disp, 1.5)


def test_upsample_frame():
    x = torch.randn(1, 1, 9, 7, dtype=torch.float64)
    up = upsample_frame(x, 4)
    assert up.shape == (1, 1, 33, 25)
    assert torch.allclose(up[..., ::4, ::4], x, atol=1e-12)

    frame = affine_image(10, 8)
    up = upsample_frame(frame, 3)
    rows = torch.arange(28, dtype=torch.float64).view(28, 1) / 3
    cols = torch.arange(22, dtype=torch.float64).view(1, 22) / 3
    assert torch.allclose(up[0, 0], 0.7 * rows - 0.3 * cols + 2.0, atol=1e-12)

    # cubics are reproduced between the second and the second-to-last sample
    r = torch.arange(10, dtype=torch.float64)
    cubic = (0.01 * r ** 3 - 0.2 * r ** 2 + r).view(1, 1, 10, 1).expand(1, 1, 10, 3)
    up = upsample_frame(cubic, 4)
    fine = torch.arange(37, dtype=torch.float64) / 4
    expected = 0.01 * fine ** 3 - 0.2 * fine ** 2 + fine
    assert torch.allclose(up[0, 0, 4:33, 0], expected[4:33], atol=1e-12)


def test_warp_upsampled_beats_bilinear():
    h = w = 32
    rows = torch.arange(h, dtype=torch.float64).view(h, 1)
    cols = torch.arange(w, dtype=torch.float64).view(1, w)

    def surface(r, c):
        return torch.sin(1.0 * r + 0.3) * torch.cos(0.5 * c)

    d_y = (0.5 + 0.2 * torch.sin(2 * np.pi * cols / w)).expand(h, w)
    d_x = (0.5 + 0.2 * torch.cos(2 * np.pi * rows / h)).expand(h, w)
    frame = surface(rows, cols)[None, None]
    disp = torch.stack([d_y, d_x])[None]
    exact = surface(rows + d_y, cols + d_x)

    inner = (slice(5, -5), slice(5, -5))
    err_bilinear = (warp_bilinear(frame, disp)[0, 0] - exact)[inner].abs().max()
    err_up = (warp_upsampled(frame, disp, 4)[0, 0] - exact)[inner].abs().max()
    assert err_bilinear > 0.05
    assert err_up < 0.5 * err_bilinear


def test_warp_composition():
    frame = affine_image()
    residual = torch.zeros(1, 2, 24, 20, dtype=torch.float64)
    residual[:, 0] = 0.2 * torch.sin(torch.arange(20, dtype=torch.float64) / 3)
    residual[:, 1] = 0.15 * torch.cos(torch.arange(24, dtype=torch.float64) / 4).view(24, 1)
    inner = (Ellipsis, slice(1, 20), slice(1, 17))

    # a constant base field composes exactly
    base = constant_disp(0.5, 0.25)
    twice = warp_bilinear(warp_bilinear(frame, base), residual)
    once = warp_bilinear(frame, compose_residual(base, residual))
    assert torch.allclose(twice[inner], once[inner], atol=1e-9)

    # otherwise the gap is bounded by |residual| * |grad base| * |grad frame|
    base = torch.zeros(1, 2, 24, 20, dtype=torch.float64)
    base[:, 0] = 0.02 * torch.arange(24, dtype=torch.float64).view(24, 1)
    step = constant_disp(0.5, 0.0)
    twice = warp_bilinear(warp_bilinear(frame, base), step)
    once = warp_bilinear(frame, compose_residual(base, step))
    gap = (twice - once)[..., :18, :].abs().max()
    assert gap <= 0.5 * 0.02 * 0.7 + 1e-9
    assert gap > 0


def test_lsqse_matches_normal_equations():
    rng = np.random.default_rng(5)
    h, w, k = 48, 4, 15
    rows = np.arange(h, dtype=np.float64)[:, None]
    d_y = 0.01 * rows + 0.1 * rng.standard_normal((h, w))
    z = lsqse_strain(torch.from_numpy(d_y), LSQSEConfig(k)).numpy()
    half = (k - 1) // 2
    design = np.stack([np.ones(k), np.arange(-half, half + 1, dtype=np.float64)], axis=1)
    for i in range(half, h - half):
        window = d_y[i - half:i + half + 1]
        slopes = np.linalg.solve(design.T @ design, design.T @ window)[1]
        np.testing.assert_allclose(z[i], slopes, rtol=1e-10, atol=1e-14)


def test_compose_residual():
    base = torch.randn(1, 2, 8, 8)
    residual = torch.randn(1, 2, 8, 8)
    assert torch.equal(compose_residual(base, residual), base + residual)
    assert torch.equal(compose_residual(base, torch.zeros_like(base)), base)
    with pytest.raises(ShapeError):
        compose_residual(base, torch.zeros(1, 2, 8, 4))


def test_lsqse_kernel():
    weights = lsqse_kernel(5)
    u = torch.arange(-2, 3, dtype=torch.float64)
    assert torch.allclose((weights * u).sum(), torch.tensor(1.0, dtype=torch.float64))
    assert abs(float(weights.sum())) < 1e-15


def test_lsqse_linear_exact():
    h, w = 40, 6
    slope = -0.0125
    rows = torch.arange(h, dtype=torch.float64).view(h, 1).expand(h, w)
    z = lsqse_strain(slope * rows + 3.0)
    assert z.shape == (h, w)
    assert torch.allclose(z, torch.full_like(z, slope), rtol=1e-12, atol=0)


def test_lsqse_quadratic_centre():
    # a centred window fits the tangent of a parabola
    h = 31
    rows = torch.arange(h, dtype=torch.float64).view(h, 1)
    z = lsqse_strain(0.001 * rows ** 2, LSQSEConfig(7))
    assert torch.allclose(z[3:-3, 0], 0.002 * rows[3:-3, 0], atol=1e-12)
    # border rows reuse the nearest full window
    assert torch.equal(z[0], z[3]) and torch.equal(z[-1], z[-4])


def test_lsqse_config():
    for bad in (2, 4, 1, 15.0):
        with pytest.raises(ParameterError):
            LSQSEConfig(bad)
    with pytest.raises(ParameterError):
        lsqse_strain(torch.zeros(10, 4), LSQSEConfig(15))


def test_strain_from_displacement():
    h, w = 32, 16
    d_y = -0.01 * np.arange(h, dtype=np.float32)[:, None].repeat(w, 1)
    z = strain_from_displacement(DisplacementField(d_y, np.zeros_like(d_y)))
    assert isinstance(z, StrainMap)
    np.testing.assert_allclose(z.z, -0.01, rtol=1e-5)
    np.testing.assert_allclose(z.compressive(), 0.01, rtol=1e-5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always')
        strain_from_displacement(torch.from_numpy(d_y * 50)[None, None].expand(1, 2, h, w))
    assert caught


def test_displacement_field():
    field = DisplacementField(np.ones((4, 3)), np.zeros((4, 3)))
    back = DisplacementField.from_blob(field.to_blob(), (4, 3))
    np.testing.assert_array_equal(back.d_y, field.d_y)
    assert field.tensor().shape == (1, 2, 4, 3)
    assert DisplacementField.from_tensor(field.tensor()).shape == (4, 3)
    with pytest.raises(ShapeError):
        DisplacementField(np.ones((4, 3)), np.ones((3, 4)))
    with pytest.raises(ParameterError):
        DisplacementField(np.full((4, 3), np.inf), np.ones((4, 3)))


def test_maxabs_scale():
    x = torch.tensor([[[[-4.0, 2.0]]], [[[0.0, 0.0]]]])
    y = maxabs_scale(x)
    assert torch.equal(y[0], torch.tensor([[[-1.0, 0.5]]]))
    assert torch.equal(y[1], x[1])


def test_mean_abs_difference():
    a = [torch.ones(2, 2), torch.zeros(2, 2)]
    b = [torch.zeros(2, 2), torch.zeros(2, 2)]
    assert mean_abs_difference(a, b) == 0.5
