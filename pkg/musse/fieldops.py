# -*- coding: utf-8 -*-

"""
Field mathematics: bilinear warping, cubic-upsampled warping, residual composition
and least-squares strain estimation.

Tensor operations take grids shaped ``(B, C, H, W)``. A displacement tensor has
two channels, axial ``d_y`` first and lateral ``d_x`` second, both in pixels.
Axial displacement is positive toward increasing row index.
"""

from typing import Optional, Sequence, Tuple, Union
import dataclasses
import warnings
import numpy as np
import torch
import torch.nn.functional as F
from .errors import ShapeError, ParameterError

# sanity bound for strain of a valid estimate
STRAIN_BOUND = 0.2


@dataclasses.dataclass
class DisplacementField:
    """
    Per-pixel axial/lateral displacement pair, pixel units.
    """
    d_y: np.ndarray
    d_x: np.ndarray

    def __post_init__(self):
        self.d_y = np.asarray(self.d_y, dtype=np.float32)
        self.d_x = np.asarray(self.d_x, dtype=np.float32)
        if self.d_y.ndim != 2 or self.d_y.shape != self.d_x.shape:
            raise ShapeError(f"shape error: d_y {self.d_y.shape} and d_x {self.d_x.shape} differ")
        if not (np.isfinite(self.d_y).all() and np.isfinite(self.d_x).all()):
            raise ParameterError("parameter error: displacement field is not finite")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.d_y.shape

    @classmethod
    def zeros(cls, shape: Tuple[int, int]) -> 'DisplacementField':
        return cls(np.zeros(shape, np.float32), np.zeros(shape, np.float32))

    @classmethod
    def from_tensor(cls, disp: torch.Tensor) -> 'DisplacementField':
        """
        :param disp:    tensor shaped (2, H, W) or (1, 2, H, W)
        """
        disp = disp.detach().cpu()
        if disp.dim() == 4:
            disp = disp[0]
        return cls(disp[0].numpy(), disp[1].numpy())

    def tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """
        Shape (1, 2, H, W).
        """
        return torch.from_numpy(np.stack([self.d_y, self.d_x])).to(dtype).unsqueeze(0)

    def to_blob(self) -> np.ndarray:
        """
        D_y then D_x, concatenated.
        """
        return np.concatenate([self.d_y.ravel(), self.d_x.ravel()])

    @classmethod
    def from_blob(cls, blob: np.ndarray, shape: Tuple[int, int]) -> 'DisplacementField':
        blob = np.asarray(blob).reshape(2, *shape)
        return cls(blob[0], blob[1])


@dataclasses.dataclass
class StrainMap:
    """
    Per-pixel axial strain, the signed axial derivative of d_y.

    Compression gives negative values; use `compressive()` for the
    conventional positive display.
    """
    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 2:
            raise ShapeError(f"shape error: strain map must be 2-D, got {self.z.shape}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.z.shape

    @classmethod
    def from_tensor(cls, z: torch.Tensor) -> 'StrainMap':
        z = z.detach().cpu()
        while z.dim() > 2:
            z = z[0]
        return cls(z.double().numpy())

    def tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.z).to(dtype)[None, None]

    def compressive(self) -> np.ndarray:
        return -self.z

    def is_plausible(self) -> bool:
        return bool(np.isfinite(self.z).all() and np.abs(self.z).max() <= STRAIN_BOUND)


@dataclasses.dataclass(frozen=True)
class LSQSEConfig:
    """
    :param window_length:   odd number of axial samples in the fitting window
    """
    window_length: int = 15

    def __post_init__(self):
        k = self.window_length
        if not isinstance(k, int) or k < 3 or k % 2 == 0:
            raise ParameterError(f"parameter error: window_length must be an odd integer >= 3, got {k}")

    def check(self, height: int):
        if self.window_length > height:
            raise ParameterError(f"parameter error: window_length {self.window_length} exceeds height {height}")


def _check_pair(frame: torch.Tensor, disp: torch.Tensor):
    if frame.dim() != 4 or disp.dim() != 4:
        raise ShapeError(f"shape error: expected 4-D grids, got {tuple(frame.shape)} and {tuple(disp.shape)}")
    if disp.shape[1] != 2:
        raise ShapeError(f"shape error: displacement needs 2 channels, got {disp.shape[1]}")
    if frame.shape[0] != disp.shape[0] or frame.shape[2:] != disp.shape[2:]:
        raise ShapeError(f"shape error: frame {tuple(frame.shape)} does not match displacement {tuple(disp.shape)}")


def sample_bilinear(image: torch.Tensor, rows: torch.Tensor, cols: torch.Tensor) -> torch.Tensor:
    """
    Gather image values at real coordinates.
    Coordinates outside the grid are clamped to the border.
    :param image:   (B, C, H, W)
    :param rows:    (B, ...) row coordinates in pixels
    :param cols:    same shape as rows
    :return:        (B, C, ...)
    """
    b, c, h, w = image.shape
    out_shape = rows.shape[1:]
    rows = rows.reshape(b, -1).clamp(0, h - 1)
    cols = cols.reshape(b, -1).clamp(0, w - 1)
    # cell origin, the last cell is reused at the far border; non-finite
    # coordinates still index a valid cell and yield non-finite values
    r0 = torch.nan_to_num(rows.detach()).floor().clamp(0, max(h - 2, 0))
    c0 = torch.nan_to_num(cols.detach()).floor().clamp(0, max(w - 2, 0))
    wr = (rows - r0).unsqueeze(1)
    wc = (cols - c0).unsqueeze(1)
    r0 = r0.long()
    c0 = c0.long()
    r1 = (r0 + 1).clamp(max=h - 1)
    c1 = (c0 + 1).clamp(max=w - 1)

    flat = image.reshape(b, c, h * w)

    def gather(r, cc):
        idx = (r * w + cc).unsqueeze(1).expand(b, c, -1)
        return flat.gather(2, idx)

    out = ((1 - wr) * (1 - wc) * gather(r0, c0)
           + (1 - wr) * wc * gather(r0, c1)
           + wr * (1 - wc) * gather(r1, c0)
           + wr * wc * gather(r1, c1))
    return out.reshape(b, c, *out_shape)


def identity_grid(height: int, width: int, dtype: torch.dtype = torch.float32,
                  device: Optional[torch.device] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    rows = torch.arange(height, dtype=dtype, device=device).view(1, height, 1).expand(1, height, width)
    cols = torch.arange(width, dtype=dtype, device=device).view(1, 1, width).expand(1, height, width)
    return rows, cols


def warp_bilinear(frame: torch.Tensor, disp: torch.Tensor) -> torch.Tensor:
    """
    Backward warping: ``out(r, c) = frame(r + d_y(r, c), c + d_x(r, c))``.
    :param frame:   (B, C, H, W)
    :param disp:    (B, 2, H, W), axial channel first
    """
    _check_pair(frame, disp)
    b, _, h, w = frame.shape
    rows, cols = identity_grid(h, w, disp.dtype, disp.device)
    return sample_bilinear(frame, rows + disp[:, 0], cols + disp[:, 1])


def upsample_grid(x: torch.Tensor, factor: int) -> torch.Tensor:
    """
    Bilinear upsampling onto a nested grid: sample i of the input lands on
    sample i * factor of the output, so strided slicing inverts it.
    """
    h, w = x.shape[-2:]
    size = ((h - 1) * factor + 1, (w - 1) * factor + 1)
    return F.interpolate(x, size=size, mode='bilinear', align_corners=True)


def _lagrange_weights(factor: int, dtype: torch.dtype, device: Optional[torch.device]) -> torch.Tensor:
    """
    Four-tap cubic Lagrange weights for the phases ``p / factor``, shape (factor, 4),
    taps at offsets -1, 0, 1, 2.
    """
    s = torch.arange(factor, dtype=torch.float64) / factor
    weights = torch.stack([
        -s * (s - 1) * (s - 2) / 6,
        (s + 1) * (s - 1) * (s - 2) / 2,
        -(s + 1) * s * (s - 2) / 2,
        (s + 1) * s * (s - 1) / 6,
    ], dim=1)
    return weights.to(dtype=dtype, device=device)


def _upsample_axis(x: torch.Tensor, factor: int, dim: int) -> torch.Tensor:
    d = dim % x.dim()
    n = x.shape[d]
    if n < 2:
        return x
    first, second = x.narrow(d, 0, 1), x.narrow(d, 1, 1)
    last, before = x.narrow(d, n - 1, 1), x.narrow(d, n - 2, 1)
    # linear extension by one sample at both ends
    padded = torch.cat([2 * first - second, x, 2 * last - before], dim=d)
    # windows[..., i, ..., :] holds samples i-1 .. i+2
    windows = padded.unfold(d, 4, 1)
    values = windows @ _lagrange_weights(factor, x.dtype, x.device).T
    values = values.movedim(d, -2)
    values = values.reshape(*values.shape[:-2], (n - 1) * factor)
    values = torch.cat([values, last.movedim(d, -1)], dim=-1)
    return values.movedim(-1, d)


def upsample_frame(x: torch.Tensor, factor: int) -> torch.Tensor:
    """
    Separable cubic upsampling onto the same nested grid as `upsample_grid`.
    Original samples are kept exactly and polynomials up to cubic are
    reproduced away from the border rows and columns.
    """
    return _upsample_axis(_upsample_axis(x, factor, -2), factor, -1)


def warp_upsampled(frame: torch.Tensor, disp: torch.Tensor, factor: int = 4) -> torch.Tensor:
    """
    Warp at `factor` times the resolution, then return to the original grid.

    The frame is upsampled with a cubic interpolator, so the bilinear warp on
    the fine grid samples a smoother surface than a coarse-grid warp.
    Displacement is upsampled bilinearly and its values rescaled with the
    grid since they are in pixels; on the retained nodes it equals the input.
    """
    if not isinstance(factor, int) or factor < 1:
        raise ParameterError(f"parameter error: upsample factor must be an integer >= 1, got {factor}")
    _check_pair(frame, disp)
    if factor == 1:
        return warp_bilinear(frame, disp)
    frame_up = upsample_frame(frame, factor)
    disp_up = upsample_grid(disp, factor) * factor
    warped = warp_bilinear(frame_up, disp_up)
    return warped[..., ::factor, ::factor]


def compose_residual(base: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    """
    Refined displacement: elementwise sum of the base field and its residual.
    """
    if base.shape != residual.shape:
        raise ShapeError(f"shape error: base {tuple(base.shape)} and residual {tuple(residual.shape)} differ")
    return base + residual


def lsqse_kernel(window_length: int, dtype: torch.dtype = torch.float64,
                 device: Optional[torch.device] = None) -> torch.Tensor:
    """
    Least-squares slope weights ``(u - u_mean) / sum((u - u_mean)^2)``.
    """
    half = (window_length - 1) // 2
    u = torch.arange(-half, half + 1, dtype=torch.float64)
    weights = u / (u * u).sum()
    return weights.to(dtype=dtype, device=device)


def lsqse_strain(disp_axial: torch.Tensor, cfg: LSQSEConfig = LSQSEConfig()) -> torch.Tensor:
    """
    Least-squares strain estimation along the axial axis.

    Each output row takes the slope of a line fitted to the `window_length`
    axial samples centred on it. Rows closer than half a window to the
    border reuse the nearest full window.
    :param disp_axial:  (..., H, W) axial displacement
    :return:            strain with the same shape
    """
    if disp_axial.dim() < 2:
        raise ShapeError(f"shape error: expected at least a 2-D grid, got {tuple(disp_axial.shape)}")
    h, w = disp_axial.shape[-2:]
    cfg.check(h)
    k = cfg.window_length
    half = (k - 1) // 2
    x = disp_axial.reshape(-1, 1, h, w)
    kernel = lsqse_kernel(k, x.dtype, x.device).view(1, 1, k, 1)
    # valid rows are centres half .. h-1-half
    slope = F.conv2d(x, kernel)
    top = slope[:, :, :1].expand(-1, -1, half, -1)
    bottom = slope[:, :, -1:].expand(-1, -1, half, -1)
    z = torch.cat([top, slope, bottom], dim=2)
    return z.reshape(disp_axial.shape)


def strain_from_displacement(field: Union[DisplacementField, torch.Tensor],
                             cfg: LSQSEConfig = LSQSEConfig()) -> StrainMap:
    """
    Strain map of one displacement field, computed in double precision.
    """
    if isinstance(field, DisplacementField):
        d_y = torch.from_numpy(field.d_y.astype(np.float64))
    elif field.dim() == 4:
        d_y = field.detach().double()[0, 0]
    elif field.dim() == 3:
        d_y = field.detach().double()[0]
    else:
        d_y = field.detach().double()
    strain = StrainMap.from_tensor(lsqse_strain(d_y, cfg))
    if not strain.is_plausible():
        warnings.warn(f"strain exceeds the sanity bound {STRAIN_BOUND}")
    return strain


def maxabs_scale(x: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    """
    Scale each sample of a batch so that its largest magnitude is 1.
    All-zero samples are returned unchanged.
    """
    peak = x.detach().abs().flatten(1).max(dim=1).values.view(-1, *([1] * (x.dim() - 1)))
    peak = torch.where(peak > eps, peak, torch.ones_like(peak))
    return x / peak


def mean_abs_difference(a: Sequence[torch.Tensor], b: Sequence[torch.Tensor]) -> float:
    """
    Mean absolute difference over all elements of paired tensor lists.
    """
    total = sum(float((x.detach() - y.detach()).abs().sum()) for x, y in zip(a, b))
    count = sum(x.numel() for x in a)
    return total / max(count, 1)
