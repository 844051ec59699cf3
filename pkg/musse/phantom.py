# -*- coding: utf-8 -*-

"""
Synthetic RF sequences with analytically known displacement and strain.

Scatterers are placed uniformly, moved by a piecewise-analytic axial
compression field, and rendered through a separable point-spread function.
Compression moves tissue toward the transducer, i.e. toward row 0, so axial
displacement and axial strain are negative.
"""

from typing import (
    Any, Dict, List,
    Optional, Sequence,
    Tuple, Union,
)
import os
import json
import logging
import dataclasses
import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import map_coordinates
from .errors import ConfigError, StepError
from .fieldops import DisplacementField, StrainMap
from .rfdata import (
    RFFrame, RFSequence, ROISpec,
    DatasetManifest, ManifestEntry,
    save_sequence, save_manifest,
)

log = logging.getLogger(__name__)

# the strain regime of quasi-static elastography
MAX_TOTAL_STRAIN = 0.05
# sub-samples per pixel when integrating the strain profile
_INTEGRATION_SUBSAMPLES = 16
# scatterers rendered per batch
_RENDER_CHUNK = 8192
# smallest ROI semi-axis that still covers enough pixels for the metrics
MIN_ROI_SEMI_AXIS = 3.0


@dataclasses.dataclass(frozen=True)
class PulseSpec:
    """
    :param center_frequency:    axial center frequency f0, cycles per sample
    :param bandwidth_sigma:     axial gaussian envelope width, samples
    :param lateral_sigma:       lateral beam width, lines
    """
    center_frequency: float = 0.1
    bandwidth_sigma: float = 4.0
    lateral_sigma: float = 1.5

    def __post_init__(self):
        if not 0 < self.center_frequency < 0.5:
            raise ConfigError(f"center frequency {self.center_frequency} violates 0 < f0 < 0.5 cycles/sample")
        if self.bandwidth_sigma <= 0 or self.lateral_sigma <= 0:
            raise ConfigError("pulse widths must be positive")


@dataclasses.dataclass(frozen=True)
class Inclusion:
    """
    Circular inclusion that strains `strain_ratio` times the background.
    """
    center: Tuple[float, float]
    radius: float
    strain_ratio: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, 'center', tuple(float(x) for x in self.center))
        if self.radius <= 0:
            raise ConfigError(f"inclusion radius must be positive, got {self.radius}")
        if not 0 < self.strain_ratio < 1:
            raise ConfigError(f"strain ratio must lie in (0, 1), got {self.strain_ratio}")

    def to_dict(self) -> Dict[str, Any]:
        return {"center": list(self.center), "radius": self.radius, "strain_ratio": self.strain_ratio}


@dataclasses.dataclass(frozen=True)
class PhantomSpec:
    H: int = 64
    W: int = 64
    scatterer_density: float = 1.0
    inclusions: Tuple[Inclusion, ...] = ()
    # applied strain per post frame
    background_strain: float = 0.005
    T: int = 3
    pulse: PulseSpec = PulseSpec()
    seed: int = 0
    ramp_width: float = 3.0
    axial_spacing: float = 1.925e-5
    lateral_spacing: float = 3.0e-4

    def __post_init__(self):
        object.__setattr__(self, 'inclusions', tuple(self.inclusions))
        if self.H < 16 or self.W < 16:
            raise ConfigError(f"phantom must be at least 16x16, got {self.H}x{self.W}")
        if self.T < 1:
            raise ConfigError(f"T must be at least 1, got {self.T}")
        if self.scatterer_density <= 0:
            raise ConfigError("scatterer density must be positive")
        if self.background_strain < 0 or self.background_strain * self.T > MAX_TOTAL_STRAIN + 1e-12:
            raise ConfigError(
                f"total strain {self.background_strain * self.T} is outside [0, {MAX_TOTAL_STRAIN}]")
        if self.ramp_width < 0:
            raise ConfigError("ramp width must be non-negative")
        for inc in self.inclusions:
            (r, c), radius = inc.center, inc.radius
            if r - radius < 0 or r + radius > self.H - 1 or c - radius < 0 or c + radius > self.W - 1:
                raise ConfigError(f"inclusion {inc} does not lie inside the frame")

    @property
    def strain_levels(self) -> List[float]:
        return [self.background_strain * t for t in range(1, self.T + 1)]

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data['inclusions'] = [inc.to_dict() for inc in self.inclusions]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PhantomSpec':
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)} - {'inclusion'}
        if unknown:
            raise ConfigError(f"unknown phantom keys: {sorted(unknown)}")
        inclusions = list(data.pop('inclusions', None) or [])
        single = data.pop('inclusion', None)
        if single:
            inclusions.insert(0, single)
        data['inclusions'] = tuple(inc if isinstance(inc, Inclusion) else Inclusion(**inc) for inc in inclusions)
        if isinstance(data.get('pulse'), dict):
            data['pulse'] = PulseSpec(**data['pulse'])
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"bad phantom spec: {e}") from e

    @classmethod
    def from_json(cls, path: Union[str, os.PathLike]) -> 'PhantomSpec':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


@dataclasses.dataclass
class ScattererField:
    positions: np.ndarray     # (N, 2) rows and columns, pixels
    amplitudes: np.ndarray    # (N,)

    def __len__(self):
        return len(self.amplitudes)


@dataclasses.dataclass
class GroundTruthBundle:
    displacements: List[DisplacementField]
    strains: List[StrainMap]
    strain_levels: List[float]


def _blend(distance: np.ndarray, radius: float, ramp: float) -> np.ndarray:
    """
    1 inside the inclusion, 0 outside, raised-cosine ramp of width `ramp` across the border.
    """
    if ramp <= 0:
        return (distance <= radius).astype(np.float64)
    s = np.clip((distance - (radius - ramp / 2)) / ramp, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * s))


def strain_factor(spec: PhantomSpec, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """
    Local strain relative to the background, at given coordinates.
    """
    rows, cols = np.broadcast_arrays(np.asarray(rows, np.float64), np.asarray(cols, np.float64))
    factor = np.ones(rows.shape)
    for inc in spec.inclusions:
        d = np.hypot(rows - inc.center[0], cols - inc.center[1])
        factor *= 1.0 - (1.0 - inc.strain_ratio) * _blend(d, inc.radius, spec.ramp_width)
    return factor


def ramp_mask(spec: PhantomSpec, margin: float = 0.0) -> np.ndarray:
    """
    Pixels within `margin` of any inclusion's blend ramp.
    """
    rows, cols = np.mgrid[0:spec.H, 0:spec.W]
    mask = np.zeros((spec.H, spec.W), dtype=bool)
    for inc in spec.inclusions:
        d = np.hypot(rows - inc.center[0], cols - inc.center[1])
        mask |= np.abs(d - inc.radius) <= spec.ramp_width / 2 + margin
    return mask


def generate_scatterers(spec: PhantomSpec) -> ScattererField:
    """
    Uniform scatterer positions with standard-normal amplitudes, seeded by the spec.
    """
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.scatterer_density * spec.H * spec.W))
    rows = rng.uniform(0.0, spec.H, n)
    cols = rng.uniform(0.0, spec.W, n)
    amplitudes = rng.standard_normal(n)
    return ScattererField(np.stack([rows, cols], axis=1), amplitudes)


def _check_step(spec: PhantomSpec, t: int):
    if not 1 <= t <= spec.T:
        raise StepError(f"step error: t={t} is outside 1..{spec.T}")


def analytic_strain(spec: PhantomSpec, t: int) -> StrainMap:
    """
    Signed axial strain of post frame t on the pixel grid.
    """
    _check_step(spec, t)
    rows, cols = np.mgrid[0:spec.H, 0:spec.W]
    return StrainMap(-t * spec.background_strain * strain_factor(spec, rows, cols))


def analytic_displacement(spec: PhantomSpec, t: int) -> DisplacementField:
    """
    Axial displacement of post frame t: the strain profile integrated from row 0.
    Lateral displacement is zero.
    """
    _check_step(spec, t)
    s = _INTEGRATION_SUBSAMPLES
    u = np.arange((spec.H - 1) * s + 1) / s
    cols = np.arange(spec.W)
    local = spec.background_strain * strain_factor(spec, u[:, None], cols[None, :])
    integral = cumulative_trapezoid(local, u, axis=0, initial=0.0)[::s]
    d_y = -t * integral
    return DisplacementField(d_y, np.zeros_like(d_y))


def render_rf(scatterers: ScattererField, displacement: Optional[DisplacementField],
              spec: PhantomSpec) -> RFFrame:
    """
    Move scatterers by the displacement sampled at their position, then sum
    their point-spread functions.
    """
    rows = scatterers.positions[:, 0].astype(np.float64)
    cols = scatterers.positions[:, 1].astype(np.float64)
    if displacement is not None:
        coords = np.stack([rows, cols])
        rows = rows + map_coordinates(displacement.d_y.astype(np.float64), coords, order=1, mode='nearest')
        cols = cols + map_coordinates(displacement.d_x.astype(np.float64), coords, order=1, mode='nearest')

    f0 = spec.pulse.center_frequency
    sigma_p = spec.pulse.bandwidth_sigma
    sigma_l = spec.pulse.lateral_sigma
    grid_r = np.arange(spec.H, dtype=np.float64)[:, None]
    grid_c = np.arange(spec.W, dtype=np.float64)[:, None]
    frame = np.zeros((spec.H, spec.W))
    for start in range(0, len(scatterers), _RENDER_CHUNK):
        part = slice(start, start + _RENDER_CHUNK)
        dr = grid_r - rows[None, part]
        dc = grid_c - cols[None, part]
        axial = np.cos(2 * np.pi * f0 * dr) * np.exp(-dr ** 2 / (2 * sigma_p ** 2))
        lateral = np.exp(-dc ** 2 / (2 * sigma_l ** 2))
        frame += (axial * scatterers.amplitudes[None, part]) @ lateral.T
    return RFFrame(frame, spec.axial_spacing, spec.lateral_spacing)


def simulate_sequence(spec: PhantomSpec) -> Tuple[RFSequence, GroundTruthBundle]:
    """
    Pre frame from undisplaced scatterers, post frame t compressed t times the per-step strain.
    """
    scatterers = generate_scatterers(spec)
    pre = render_rf(scatterers, None, spec)
    posts, fields, strains = [], [], []
    for t in range(1, spec.T + 1):
        field = analytic_displacement(spec, t)
        posts.append(render_rf(scatterers, field, spec))
        fields.append(field)
        strains.append(analytic_strain(spec, t))
    seq = RFSequence(pre, posts, fields, source_id=f"phantom-{spec.seed}")
    log.debug("simulated %s: %d scatterers, %d inclusions", seq.source_id, len(scatterers), len(spec.inclusions))
    return seq, GroundTruthBundle(fields, strains, spec.strain_levels)


def random_phantom_spec(base: PhantomSpec, rng: np.random.Generator, n_inclusions: int = 1,
                        max_tries: int = 100) -> PhantomSpec:
    """
    Copy of `base` with randomly placed, mutually disjoint inclusions and a new seed.
    """
    inclusions: List[Inclusion] = []
    margin = base.ramp_width + 1.0
    for _ in range(n_inclusions):
        for _ in range(max_tries):
            radius = rng.uniform(min(base.H, base.W) / 8, min(base.H, base.W) / 5)
            lo = radius + margin
            if 2 * lo >= min(base.H, base.W):
                continue
            center = (rng.uniform(lo, base.H - 1 - lo), rng.uniform(lo, base.W - 1 - lo))
            if all(np.hypot(center[0] - o.center[0], center[1] - o.center[1]) > radius + o.radius + 2 * margin
                   for o in inclusions):
                inclusions.append(Inclusion(center, radius, float(rng.uniform(0.3, 0.7))))
                break
        else:
            raise ConfigError(f"can not place {n_inclusions} disjoint inclusions in a {base.H}x{base.W} frame")
    return dataclasses.replace(base, inclusions=tuple(inclusions), seed=int(rng.integers(0, 2 ** 31 - 1)))


def default_rois(spec: PhantomSpec) -> Tuple[ROISpec, ROISpec]:
    """
    Target ellipse inside the first inclusion, background ellipse of the same
    size at the nearest depth that keeps clear of every inclusion.
    """
    if not spec.inclusions:
        raise ConfigError("default ROIs need at least one inclusion")
    inc = spec.inclusions[0]
    size = max(MIN_ROI_SEMI_AXIS, 0.6 * inc.radius - spec.ramp_width / 2)
    target = ROISpec(inc.center, (size, size), 'target')

    best = None
    for r in range(int(np.ceil(size)), int(spec.H - 1 - size) + 1):
        for c in range(int(np.ceil(size)), int(spec.W - 1 - size) + 1):
            clearance = min(np.hypot(r - o.center[0], c - o.center[1]) - o.radius - spec.ramp_width / 2 - size
                            for o in spec.inclusions)
            if clearance < 1.0:
                continue
            key = (abs(r - inc.center[0]), -clearance)
            if best is None or key < best[0]:
                best = (key, (r, c))
    if best is None:
        raise ConfigError("no room for a background ROI outside the inclusions")
    return target, ROISpec(best[1], (size, size), 'background')


def build_phantom_dataset(base: PhantomSpec, out_dir: Union[str, os.PathLike], count: int,
                          val_fraction: float = 0.0, test_fraction: float = 0.15, seed: int = 0,
                          inclusion_counts: Sequence[int] = (1, 2)) -> DatasetManifest:
    """
    Write `count` random phantom sequences and their manifest.

    The last sequences go to the test split, the ones before them to val.
    """
    out_dir = os.fspath(out_dir)
    rng = np.random.default_rng(seed)
    n_test = int(round(count * test_fraction))
    n_val = int(round(count * val_fraction))
    entries = []
    for i in range(count):
        spec = random_phantom_spec(base, rng, int(rng.choice(inclusion_counts)))
        seq, _ = simulate_sequence(spec)
        name = f"seq_{i:04d}"
        save_sequence(seq, os.path.join(out_dir, name))
        if i >= count - n_test:
            split = 'test'
        elif i >= count - n_test - n_val:
            split = 'val'
        else:
            split = 'train'
        rois = default_rois(spec) if spec.inclusions else None
        entries.append(ManifestEntry(name, split, rois, spec.strain_levels))
        log.info("phantom %s written", name, extra={"split": split, "inclusions": len(spec.inclusions)})
    manifest = DatasetManifest(entries, root=out_dir)
    save_manifest(manifest, os.path.join(out_dir, 'manifest.json'))
    return manifest
