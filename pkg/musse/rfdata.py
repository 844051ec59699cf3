# -*- coding: utf-8 -*-

"""
RF frames, sequences, regions of interest and dataset manifests, with their
on-disk format.

A sequence directory holds ``manifest.json``, ``pre.f32``, ``post_0001.f32``
... ``post_TTTT.f32`` and, when ground truth is known, ``gt_0001.f32`` ...
with D_y followed by D_x.
"""

from typing import (
    Any, Dict, List,
    Optional,
    Tuple, Union, Literal,
)
import os
import logging
import dataclasses
import numpy as np
import torch
from .errors import (
    ConfigError, FormatError, InconsistentSequenceError,
    CorruptDataError, DegenerateFrameError,
)
from .fieldops import DisplacementField
from .storage import Float32BlobStorage, JsonFileStorage

log = logging.getLogger(__name__)

SEQUENCE_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1
MIN_FRAME_SIZE = 16

_SPLITS = ('train', 'val', 'test')
_ROI_KINDS = ('target', 'background')


@dataclasses.dataclass
class RFFrame:
    """
    One RF frame: axial samples along rows, scan lines along columns.
    """
    samples: np.ndarray
    axial_spacing: float = 1.0     # meters per sample
    lateral_spacing: float = 1.0   # meters per line

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 2:
            raise InconsistentSequenceError(f"inconsistent sequence: frame must be 2-D, got {self.samples.shape}")
        h, w = self.samples.shape
        if h < MIN_FRAME_SIZE or w < MIN_FRAME_SIZE:
            raise InconsistentSequenceError(
                f"inconsistent sequence: frame {h}x{w} is smaller than {MIN_FRAME_SIZE}x{MIN_FRAME_SIZE}")
        if not np.isfinite(self.samples).all():
            raise CorruptDataError("corrupt data: frame has non-finite samples")
        if not (self.axial_spacing > 0 and self.lateral_spacing > 0):
            raise ConfigError("spacings must be positive")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.samples.shape

    @property
    def spacing(self) -> Tuple[float, float]:
        return float(self.axial_spacing), float(self.lateral_spacing)

    def tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """
        Shape (1, 1, H, W).
        """
        return torch.from_numpy(self.samples).to(dtype)[None, None]

    def replace(self, samples: np.ndarray) -> 'RFFrame':
        return RFFrame(samples, self.axial_spacing, self.lateral_spacing)


@dataclasses.dataclass
class RFSequence:
    """
    One pre-compression frame and T post-compression frames.
    """
    pre: RFFrame
    posts: List[RFFrame]
    ground_truth: Optional[List[DisplacementField]] = None
    source_id: str = ''

    def __post_init__(self):
        self.posts = list(self.posts)
        if self.ground_truth is not None:
            self.ground_truth = list(self.ground_truth)
        self.validate()

    def validate(self):
        if len(self.posts) < 1:
            raise InconsistentSequenceError("inconsistent sequence: at least one post frame is needed")
        for i, frame in enumerate(self.posts, 1):
            if frame.shape != self.pre.shape:
                raise InconsistentSequenceError(
                    f"inconsistent sequence: post {i} is {frame.shape}, pre is {self.pre.shape}")
            if frame.spacing != self.pre.spacing:
                raise InconsistentSequenceError(f"inconsistent sequence: post {i} spacing differs from pre")
        if self.ground_truth is not None:
            if len(self.ground_truth) != len(self.posts):
                raise InconsistentSequenceError(
                    f"inconsistent sequence: {len(self.ground_truth)} ground truth fields for {len(self.posts)} posts")
            for i, field in enumerate(self.ground_truth, 1):
                if field.shape != self.pre.shape:
                    raise InconsistentSequenceError(
                        f"inconsistent sequence: ground truth {i} is {field.shape}, frames are {self.pre.shape}")

    @property
    def T(self) -> int:
        return len(self.posts)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pre.shape

    def truncated(self, t: int) -> 'RFSequence':
        """
        The sequence restricted to its first t post frames.
        """
        if t > self.T:
            raise InconsistentSequenceError(f"inconsistent sequence: {self.source_id} has {self.T} posts, {t} needed")
        gt = self.ground_truth[:t] if self.ground_truth is not None else None
        return RFSequence(self.pre, self.posts[:t], gt, self.source_id)


@dataclasses.dataclass(frozen=True)
class ROISpec:
    """
    Elliptical region of interest, in pixels.
    """
    center: Tuple[float, float]
    semi_axes: Tuple[float, float]
    kind: Literal['target', 'background'] = 'target'

    def __post_init__(self):
        object.__setattr__(self, 'center', tuple(float(x) for x in self.center))
        object.__setattr__(self, 'semi_axes', tuple(float(x) for x in self.semi_axes))
        if self.kind not in _ROI_KINDS:
            raise ConfigError(f"ROI kind must be one of {_ROI_KINDS}, got {self.kind!r}")
        if min(self.semi_axes) < 2:
            raise ConfigError(f"ROI semi-axes must be at least 2 pixels, got {self.semi_axes}")

    def mask(self, shape: Tuple[int, int]) -> np.ndarray:
        rows, cols = np.mgrid[0:shape[0], 0:shape[1]]
        (r0, c0), (a, b) = self.center, self.semi_axes
        return ((rows - r0) / a) ** 2 + ((cols - c0) / b) ** 2 <= 1.0

    def check_inside(self, shape: Tuple[int, int]):
        (r0, c0), (a, b) = self.center, self.semi_axes
        if r0 - a < 0 or r0 + a > shape[0] - 1 or c0 - b < 0 or c0 + b > shape[1] - 1:
            raise ConfigError(f"ROI {self} does not lie inside a {shape[0]}x{shape[1]} frame")

    def to_dict(self) -> Dict[str, Any]:
        return {"center": list(self.center), "semi_axes": list(self.semi_axes), "kind": self.kind}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ROISpec':
        unknown = set(data) - {'center', 'semi_axes', 'kind'}
        if unknown:
            raise ConfigError(f"unknown ROI keys: {sorted(unknown)}")
        return cls(tuple(data['center']), tuple(data['semi_axes']), data.get('kind', 'target'))


def check_roi_pair(target: ROISpec, background: ROISpec, shape: Tuple[int, int]):
    """
    Validate a (target, background) pair for one frame shape.
    """
    if target.kind != 'target' or background.kind != 'background':
        raise ConfigError("ROI pair must be (target, background)")
    target.check_inside(shape)
    background.check_inside(shape)
    if (target.mask(shape) & background.mask(shape)).any():
        raise ConfigError("target and background ROIs overlap")


def rois_from_dict(data: Dict[str, Any]) -> Tuple[ROISpec, ROISpec]:
    target = ROISpec.from_dict({"kind": "target", **data['target']})
    background = ROISpec.from_dict({"kind": "background", **data['background']})
    return target, background


def rois_to_dict(rois: Tuple[ROISpec, ROISpec]) -> Dict[str, Any]:
    return {"target": rois[0].to_dict(), "background": rois[1].to_dict()}


@dataclasses.dataclass
class ManifestEntry:
    path: str
    split: Literal['train', 'val', 'test'] = 'train'
    rois: Optional[Tuple[ROISpec, ROISpec]] = None
    # nominal applied strain per post frame, when known
    strain_levels: Optional[List[float]] = None

    def __post_init__(self):
        if self.split not in _SPLITS:
            raise ConfigError(f"split must be one of {_SPLITS}, got {self.split!r}")


@dataclasses.dataclass
class DatasetManifest:
    entries: List[ManifestEntry]
    format_version: int = MANIFEST_FORMAT_VERSION
    # directory that relative entry paths refer to
    root: str = '.'

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ConfigError("manifest paths must be unique")

    def split(self, tag: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == tag]

    def resolve(self, entry: ManifestEntry) -> str:
        return os.path.join(self.root, entry.path)

    def check_files(self):
        for entry in self.entries:
            path = self.resolve(entry)
            if not os.path.isfile(os.path.join(path, 'manifest.json')):
                raise FormatError(f"format error: manifest entry {entry.path} is not a sequence directory")

    def to_list(self) -> List[Dict[str, Any]]:
        result = []
        for e in self.entries:
            item: Dict[str, Any] = {"path": e.path, "split": e.split}
            if e.rois is not None:
                item["rois"] = rois_to_dict(e.rois)
            if e.strain_levels is not None:
                item["strain_levels"] = list(e.strain_levels)
            result.append(item)
        return result


def load_manifest(path: Union[str, os.PathLike]) -> DatasetManifest:
    """
    Load a dataset manifest, a json array of entries.
    Every referenced sequence directory must exist.
    """
    path = os.fspath(path)
    root, name = os.path.split(os.path.abspath(path))
    store = JsonFileStorage(root, suf='')
    data = store.fetch(name)
    if data is None:
        raise FormatError(f"format error: manifest {path} not found")
    if isinstance(data, dict):
        version = data.get('format_version', MANIFEST_FORMAT_VERSION)
        data = data.get('entries', [])
    else:
        version = MANIFEST_FORMAT_VERSION
    if version != MANIFEST_FORMAT_VERSION:
        raise FormatError(f"format error: manifest version {version} is not supported")
    entries = []
    for item in data:
        rois = rois_from_dict(item['rois']) if item.get('rois') else None
        entries.append(ManifestEntry(item['path'], item.get('split', 'train'), rois, item.get('strain_levels')))
    manifest = DatasetManifest(entries, version, root)
    manifest.check_files()
    return manifest


def save_manifest(manifest: DatasetManifest, path: Union[str, os.PathLike]):
    root, name = os.path.split(os.path.abspath(os.fspath(path)))
    JsonFileStorage(root, suf='').set(name, manifest.to_list())


def _post_key(t: int) -> str:
    return f"post_{t:04d}"


def _gt_key(t: int) -> str:
    return f"gt_{t:04d}"


def load_sequence(path: Union[str, os.PathLike]) -> RFSequence:
    """
    Load a sequence directory.
    """
    path = os.fspath(path)
    meta = JsonFileStorage(path).fetch('manifest')
    if meta is None:
        raise FormatError(f"format error: {path} has no manifest.json")
    try:
        h, w, t = int(meta['H']), int(meta['W']), int(meta['T'])
        spacing = float(meta['axial_spacing']), float(meta['lateral_spacing'])
        has_gt = bool(meta['has_ground_truth'])
        source_id = str(meta.get('source_id', ''))
        version = int(meta.get('format_version', SEQUENCE_FORMAT_VERSION))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"format error: bad manifest in {path}: {e}") from e
    if version != SEQUENCE_FORMAT_VERSION:
        raise FormatError(f"format error: sequence format version {version} is not supported")

    blobs = Float32BlobStorage(path)

    def read(key: str, count: int) -> np.ndarray:
        data = blobs.fetch(key)
        if data is None:
            raise FormatError(f"format error: {path} misses {key}.f32")
        if data.size != count:
            raise InconsistentSequenceError(
                f"inconsistent sequence: {key}.f32 holds {data.size} values, expected {count}")
        return data

    frames = [read('pre', h * w)] + [read(_post_key(i), h * w) for i in range(1, t + 1)]
    frames = [RFFrame(x.reshape(h, w), *spacing) for x in frames]
    gt = None
    if has_gt:
        gt = [DisplacementField.from_blob(read(_gt_key(i), 2 * h * w), (h, w)) for i in range(1, t + 1)]
    seq = RFSequence(frames[0], frames[1:], gt, source_id)
    log.debug("loaded sequence %s (T=%d, %dx%d)", path, t, h, w)
    return seq


def save_sequence(seq: RFSequence, path: Union[str, os.PathLike]):
    """
    Write a sequence directory; stale frames of a longer earlier sequence are removed.
    """
    seq.validate()
    path = os.fspath(path)
    h, w = seq.shape
    blobs = Float32BlobStorage(path)
    blobs.set('pre', seq.pre.samples)
    for i, frame in enumerate(seq.posts, 1):
        blobs.set(_post_key(i), frame.samples)
    if seq.ground_truth is not None:
        for i, field in enumerate(seq.ground_truth, 1):
            blobs.set(_gt_key(i), field.to_blob())
    keep = {'pre'} | {_post_key(i) for i in range(1, seq.T + 1)}
    if seq.ground_truth is not None:
        keep |= {_gt_key(i) for i in range(1, seq.T + 1)}
    for key in blobs.keys():
        if '/' not in key and (key.startswith('post_') or key.startswith('gt_')) and key not in keep:
            blobs.pop(key)
    meta = {
        "format_version": SEQUENCE_FORMAT_VERSION,
        "H": h, "W": w, "T": seq.T,
        "axial_spacing": seq.pre.axial_spacing,
        "lateral_spacing": seq.pre.lateral_spacing,
        "has_ground_truth": seq.ground_truth is not None,
        "source_id": seq.source_id,
    }
    JsonFileStorage(path).set('manifest', meta)
    log.debug("saved sequence %s to %s", seq.source_id, path)


def normalize_rf(frame: RFFrame, mode: Literal['zscore', 'maxabs'] = 'maxabs') -> RFFrame:
    """
    Amplitude normalization of one frame.
    :param mode:    zscore gives zero mean and unit standard deviation;
                    maxabs scales the largest magnitude to 1.
    """
    x = frame.samples.astype(np.float64)
    if mode == 'zscore':
        std = x.std()
        if not std > 0:
            raise DegenerateFrameError("degenerate frame: constant frame can not be z-scored")
        y = (x - x.mean()) / std
    elif mode == 'maxabs':
        peak = np.abs(x).max()
        # an all-zero frame has no scale, keep it as is
        y = x / peak if peak > 0 else x
    else:
        raise ConfigError(f"unknown normalization mode: {mode!r}")
    return frame.replace(y.astype(np.float32))


def make_pairs(seq: RFSequence) -> List[Tuple[RFFrame, RFFrame]]:
    """
    (I_pre, I_post^t) for t = 1..T; the first pre-compression frame is the reference of every pair.
    """
    return [(seq.pre, post) for post in seq.posts]


def sequence_tensors(seq: RFSequence, normalize: bool = True,
                     dtype: torch.dtype = torch.float32) -> Tuple[torch.Tensor, List[torch.Tensor]]:
    """
    Network inputs of a sequence, shaped (1, 1, H, W) each.
    """
    pairs = make_pairs(seq)
    if normalize:
        pre = normalize_rf(seq.pre).tensor(dtype)
        return pre, [normalize_rf(post).tensor(dtype) for _, post in pairs]
    return seq.pre.tensor(dtype), [post.tensor(dtype) for _, post in pairs]


def load_rois_file(path: Union[str, os.PathLike]) -> Tuple[Tuple[ROISpec, ROISpec], Optional[Tuple[int, int]]]:
    """
    Read a ROI pair and, when present, the frame shape it was drawn for.
    """
    root, name = os.path.split(os.path.abspath(os.fspath(path)))
    data = JsonFileStorage(root, suf='').fetch(name)
    if data is None:
        raise FormatError(f"format error: ROI file {path} not found")
    try:
        rois = rois_from_dict(data)
    except (KeyError, TypeError) as e:
        raise FormatError(f"format error: bad ROI file {path}: {e}") from e
    shape = tuple(int(x) for x in data['shape']) if data.get('shape') else None
    if shape is not None:
        check_roi_pair(*rois, shape)
    return rois, shape


def save_rois_file(rois: Tuple[ROISpec, ROISpec], path: Union[str, os.PathLike],
                   shape: Optional[Tuple[int, int]] = None):
    data = rois_to_dict(rois)
    if shape is not None:
        data["shape"] = list(shape)
    root, name = os.path.split(os.path.abspath(os.fspath(path)))
    JsonFileStorage(root, suf='').set(name, data)
