# -*- coding: utf-8 -*-

import numpy as np
import pytest
from musse.errors import (
    ConfigError, FormatError, InconsistentSequenceError,
    CorruptDataError, DegenerateFrameError,
)
from musse.fieldops import DisplacementField
from musse.rfdata import (
    RFFrame, RFSequence, ROISpec, ManifestEntry, DatasetManifest,
    check_roi_pair, load_sequence, save_sequence, load_manifest, save_manifest,
    load_rois_file, save_rois_file, normalize_rf, make_pairs, sequence_tensors,
)


def make_sequence(T=3, shape=(32, 24), gt=True, seed=0):
    rng = np.random.default_rng(seed)
    pre = RFFrame(rng.standard_normal(shape), 2e-5, 3e-4)
    posts = [RFFrame(rng.standard_normal(shape), 2e-5, 3e-4) for _ in range(T)]
    fields = None
    if gt:
        fields = [DisplacementField(rng.standard_normal(shape), rng.standard_normal(shape)) for _ in range(T)]
    return RFSequence(pre, posts, fields, source_id='rand')


def test_frame_validation():
    with pytest.raises(InconsistentSequenceError):
        RFFrame(np.zeros((8, 32)))
    bad = np.zeros((16, 16))
    bad[3, 3] = np.nan
    with pytest.raises(CorruptDataError):
        RFFrame(bad)
    with pytest.raises(ConfigError):
        RFFrame(np.zeros((16, 16)), axial_spacing=0.0)


def test_sequence_validation():
    seq = make_sequence()
    with pytest.raises(InconsistentSequenceError):
        RFSequence(seq.pre, [RFFrame(np.zeros((32, 32)))])
    with pytest.raises(InconsistentSequenceError):
        RFSequence(seq.pre, [])
    with pytest.raises(InconsistentSequenceError):
        RFSequence(seq.pre, seq.posts, seq.ground_truth[:2])
    with pytest.raises(InconsistentSequenceError):
        RFSequence(seq.pre, [RFFrame(seq.posts[0].samples, 1e-5, 3e-4)])


def test_sequence_directory(tmp_path):
    seq = make_sequence(T=3)
    save_sequence(seq, tmp_path / 'seq')
    back = load_sequence(tmp_path / 'seq')
    assert back.T == 3 and back.shape == (32, 24)
    assert back.source_id == 'rand'
    assert back.pre.spacing == pytest.approx(seq.pre.spacing)
    for a, b in zip(back.posts, seq.posts):
        np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(back.ground_truth[2].d_x, seq.ground_truth[2].d_x)

    # a shorter sequence replaces the stale frames
    save_sequence(seq.truncated(1), tmp_path / 'seq')
    assert not (tmp_path / 'seq' / 'post_0002.f32').exists()
    assert load_sequence(tmp_path / 'seq').T == 1


def test_sequence_directory_errors(tmp_path):
    with pytest.raises(FormatError):
        load_sequence(tmp_path / 'missing')
    seq = make_sequence(T=2, gt=False)
    save_sequence(seq, tmp_path / 'seq')
    assert load_sequence(tmp_path / 'seq').ground_truth is None
    (tmp_path / 'seq' / 'post_0002.f32').write_bytes(b'\x00' * 16)
    with pytest.raises(InconsistentSequenceError):
        load_sequence(tmp_path / 'seq')
    (tmp_path / 'seq' / 'post_0002.f32').unlink()
    with pytest.raises(FormatError):
        load_sequence(tmp_path / 'seq')


def test_truncated():
    seq = make_sequence(T=3)
    short = seq.truncated(2)
    assert short.T == 2 and len(short.ground_truth) == 2
    with pytest.raises(InconsistentSequenceError):
        seq.truncated(4)


def test_pairs_share_reference():
    seq = make_sequence(T=4, gt=False)
    pairs = make_pairs(seq)
    assert len(pairs) == 4
    assert all(pre is seq.pre for pre, _ in pairs)
    assert [post for _, post in pairs] == seq.posts


def test_normalize():
    frame = RFFrame(np.linspace(-4, 2, 256).reshape(16, 16))
    assert np.abs(normalize_rf(frame).samples).max() == pytest.approx(1.0)
    z = normalize_rf(frame, 'zscore').samples
    assert abs(z.mean()) < 1e-6 and z.std() == pytest.approx(1.0, rel=1e-5)
    zero = RFFrame(np.zeros((16, 16)))
    np.testing.assert_array_equal(normalize_rf(zero).samples, zero.samples)
    with pytest.raises(DegenerateFrameError):
        normalize_rf(zero, 'zscore')
    with pytest.raises(ConfigError):
        normalize_rf(frame, 'minmax')


def test_sequence_tensors():
    seq = make_sequence(T=2, gt=False)
    pre, posts = sequence_tensors(seq)
    assert pre.shape == (1, 1, 32, 24) and len(posts) == 2
    assert float(posts[1].abs().max()) == pytest.approx(1.0)


def test_roi():
    roi = ROISpec((10, 12), (3, 4))
    mask = roi.mask((32, 32))
    assert mask[10, 12] and mask[13, 12] and mask[10, 16]
    assert not mask[14, 12] and not mask[10, 17]
    with pytest.raises(ConfigError):
        ROISpec((10, 10), (1.5, 3))
    with pytest.raises(ConfigError):
        ROISpec((10, 10), (3, 3), kind='lesion')
    with pytest.raises(ConfigError):
        roi.check_inside((12, 32))


def test_roi_pair():
    target = ROISpec((16, 8), (4, 4))
    background = ROISpec((16, 24), (4, 4), kind='background')
    check_roi_pair(target, background, (32, 32))
    with pytest.raises(ConfigError):
        check_roi_pair(target, ROISpec((16, 12), (4, 4), kind='background'), (32, 32))
    with pytest.raises(ConfigError):
        check_roi_pair(background, target, (32, 32))


def test_rois_file(tmp_path):
    rois = ROISpec((16, 8), (4, 4)), ROISpec((16, 24), (4, 4), kind='background')
    save_rois_file(rois, tmp_path / 'rois.json', (32, 32))
    back, shape = load_rois_file(tmp_path / 'rois.json')
    assert back == rois and shape == (32, 32)
    save_rois_file(rois, tmp_path / 'bad.json', (32, 20))
    with pytest.raises(ConfigError):
        load_rois_file(tmp_path / 'bad.json')
    with pytest.raises(FormatError):
        load_rois_file(tmp_path / 'none.json')


def test_manifest(tmp_path):
    save_sequence(make_sequence(T=2), tmp_path / 'a')
    save_sequence(make_sequence(T=2, seed=1), tmp_path / 'b')
    rois = ROISpec((16, 8), (4, 4)), ROISpec((16, 18), (4, 4), kind='background')
    manifest = DatasetManifest([
        ManifestEntry('a', 'train'),
        ManifestEntry('b', 'test', rois, [0.01, 0.02]),
    ])
    save_manifest(manifest, tmp_path / 'manifest.json')
    back = load_manifest(tmp_path / 'manifest.json')
    assert [e.path for e in back.split('train')] == ['a']
    entry = back.split('test')[0]
    assert entry.rois == rois and entry.strain_levels == [0.01, 0.02]
    assert load_sequence(back.resolve(entry)).T == 2

    save_manifest(DatasetManifest([ManifestEntry('c')]), tmp_path / 'broken.json')
    with pytest.raises(FormatError):
        load_manifest(tmp_path / 'broken.json')
    with pytest.raises(ConfigError):
        DatasetManifest([ManifestEntry('a'), ManifestEntry('a', 'test')])
    with pytest.raises(ConfigError):
        ManifestEntry('a', 'holdout')
