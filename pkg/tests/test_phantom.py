# -*- coding: utf-8 -*-

import json
import numpy as np
import pytest
import torch
from scipy.signal import welch
from musse.errors import ConfigError, StepError
from musse.fieldops import LSQSEConfig, strain_from_displacement, warp_bilinear
from musse.losses import lncc
from musse.phantom import (
    Inclusion, PhantomSpec, PulseSpec,
    strain_factor, ramp_mask, generate_scatterers,
    analytic_strain, analytic_displacement, render_rf,
    simulate_sequence, random_phantom_spec, default_rois, build_phantom_dataset,
)
from musse.rfdata import check_roi_pair, load_manifest, load_sequence


def inclusion_spec(**changes):
    base = PhantomSpec(H=64, W=64, inclusions=(Inclusion((32, 32), 10, 0.5),), background_strain=0.01, T=3)
    return PhantomSpec.from_dict({**base.to_dict(), **changes})


def global_ncc(a, b, margin=5):
    a = a[margin:-margin, margin:-margin].ravel()
    b = b[margin:-margin, margin:-margin].ravel()
    return float(np.corrcoef(a, b)[0, 1])


def test_spec_validation():
    with pytest.raises(ConfigError):
        PhantomSpec(background_strain=0.02, T=3)
    PhantomSpec(background_strain=0.01, T=5)
    with pytest.raises(ConfigError):
        PhantomSpec(inclusions=(Inclusion((5, 32), 10),))
    with pytest.raises(ConfigError):
        PhantomSpec(H=8)
    with pytest.raises(ConfigError):
        PulseSpec(center_frequency=0.5)
    with pytest.raises(ConfigError):
        Inclusion((32, 32), 10, strain_ratio=1.5)


def test_spec_dict():
    spec = inclusion_spec(seed=7)
    assert PhantomSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    single = PhantomSpec.from_dict({"inclusion": {"center": [32, 32], "radius": 10}, "T": 2})
    assert single.inclusions == (Inclusion((32, 32), 10),)
    with pytest.raises(ConfigError):
        PhantomSpec.from_dict({"stiffness": 3})
    assert spec.strain_levels == pytest.approx([0.01, 0.02, 0.03])


def test_uniform_fields():
    spec = PhantomSpec(H=48, W=32, background_strain=0.01, T=3)
    for t in (1, 3):
        np.testing.assert_allclose(analytic_strain(spec, t).z, -0.01 * t)
        field = analytic_displacement(spec, t)
        rows = np.arange(48, dtype=np.float64)[:, None]
        np.testing.assert_allclose(field.d_y, np.broadcast_to(-0.01 * t * rows, (48, 32)), rtol=1e-6, atol=1e-7)
        assert not field.d_x.any()
        np.testing.assert_allclose(strain_from_displacement(field).z, -0.01 * t, rtol=1e-4)
    with pytest.raises(StepError):
        analytic_strain(spec, 0)
    with pytest.raises(StepError):
        analytic_displacement(spec, 4)


def test_inclusion_strain():
    spec = inclusion_spec()
    factor = strain_factor(spec, np.array([32.0, 32.0, 2.0]), np.array([32.0, 40.0, 2.0]))
    np.testing.assert_allclose(factor, [0.5, 0.5, 1.0])
    z = analytic_strain(spec, 2).z
    assert z[32, 32] == pytest.approx(-0.01)
    assert z[2, 2] == pytest.approx(-0.02)
    mask = ramp_mask(spec)
    assert mask[32, 42] and not mask[32, 32] and not mask[2, 2]
    # the stiff inclusion compresses less, so the column through it moves less at the bottom
    d_y = analytic_displacement(spec, 1).d_y
    assert abs(d_y[-1, 32]) < abs(d_y[-1, 2])


def test_scatterers_seeded():
    spec = PhantomSpec(H=32, W=32, scatterer_density=2.0, seed=3)
    a, b = generate_scatterers(spec), generate_scatterers(spec)
    assert len(a) == 2048
    np.testing.assert_array_equal(a.positions, b.positions)
    assert len(generate_scatterers(PhantomSpec(H=32, W=32, seed=4))) == 1024


def test_simulate_sequence():
    spec = inclusion_spec(H=32, W=32, inclusions=[{"center": [16, 16], "radius": 6}], T=2)
    seq, gt = simulate_sequence(spec)
    assert seq.T == 2 and seq.shape == (32, 32)
    assert seq.source_id == f"phantom-{spec.seed}"
    assert gt.strain_levels == pytest.approx([0.01, 0.02])
    assert len(seq.ground_truth) == 2 and len(gt.strains) == 2
    again, _ = simulate_sequence(spec)
    np.testing.assert_array_equal(again.posts[1].samples, seq.posts[1].samples)
    np.testing.assert_array_equal(render_rf(generate_scatterers(spec), None, spec).samples, seq.pre.samples)


def test_ground_truth_aligns_frames():
    spec = PhantomSpec(H=64, W=32, background_strain=0.015, T=3, seed=1)
    seq, gt = simulate_sequence(spec)
    pre = seq.pre.tensor(torch.float64)
    post = seq.posts[-1].tensor(torch.float64)
    aligned = warp_bilinear(post, gt.displacements[-1].tensor(torch.float64))
    before = global_ncc(post[0, 0].numpy(), pre[0, 0].numpy())
    after = global_ncc(aligned[0, 0].numpy(), pre[0, 0].numpy())
    assert after >= 0.95
    assert after > before
    assert float(lncc(aligned, pre)) > float(lncc(post, pre))


def test_inclusion_strain_recovered():
    spec = inclusion_spec(H=96, W=64, inclusions=[{"center": [48, 32], "radius": 14}])
    cfg = LSQSEConfig(15)
    # pixels whose axial fitting window stays clear of the blend ramp
    clear = ~ramp_mask(spec, margin=(cfg.window_length - 1) / 2)
    # inside the inclusion and outside it
    assert clear[48, 32] and clear[5, 5]
    for t in (1, 3):
        z = strain_from_displacement(analytic_displacement(spec, t), cfg).z
        expected = analytic_strain(spec, t).z
        assert np.abs(z - expected)[clear].max() <= 1e-4


def test_axial_spectrum_peak():
    pulse = PulseSpec(center_frequency=0.1)
    spectra = []
    for seed in range(4):
        spec = PhantomSpec(H=128, W=128, pulse=pulse, seed=seed)
        samples = render_rf(generate_scatterers(spec), None, spec).samples
        freqs, power = welch(samples, fs=1.0, nperseg=64, axis=0)
        spectra.append(power.mean(axis=1))
    peak = freqs[np.argmax(np.mean(spectra, axis=0))]
    assert abs(peak - pulse.center_frequency) <= 0.02


def test_random_phantom_spec():
    rng = np.random.default_rng(0)
    base = PhantomSpec(H=64, W=64, T=2)
    for n in (1, 2):
        spec = random_phantom_spec(base, rng, n)
        assert len(spec.inclusions) == n
        assert spec.seed != base.seed
        for inc in spec.inclusions:
            assert 64 / 8 <= inc.radius <= 64 / 5
            assert 0.3 <= inc.strain_ratio <= 0.7
        if n == 2:
            a, b = spec.inclusions
            assert np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > a.radius + b.radius
    with pytest.raises(ConfigError):
        random_phantom_spec(PhantomSpec(H=16, W=16), rng, 4, max_tries=5)


def test_default_rois():
    spec = inclusion_spec()
    target, background = default_rois(spec)
    check_roi_pair(target, background, (64, 64))
    assert target.center == (32.0, 32.0)
    assert target.semi_axes == (4.5, 4.5)
    # same depth as the target, clear of the inclusion
    assert background.center[0] == 32.0
    assert abs(background.center[1] - 32) > 10 + 4.5
    factor = strain_factor(spec, *np.nonzero(background.mask((64, 64))))
    np.testing.assert_allclose(factor, 1.0)
    with pytest.raises(ConfigError):
        default_rois(PhantomSpec())


def test_build_dataset(tmp_path):
    base = PhantomSpec(H=32, W=32, T=2)
    manifest = build_phantom_dataset(base, tmp_path, 3, test_fraction=1 / 3, inclusion_counts=(1,))
    assert [e.split for e in manifest.entries] == ['train', 'train', 'test']
    back = load_manifest(tmp_path / 'manifest.json')
    assert [e.path for e in back.entries] == ['seq_0000', 'seq_0001', 'seq_0002']
    entry = back.entries[2]
    assert entry.rois is not None and entry.strain_levels == pytest.approx([0.005, 0.01])
    seq = load_sequence(back.resolve(entry))
    assert seq.T == 2 and seq.ground_truth is not None
