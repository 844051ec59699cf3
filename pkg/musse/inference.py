# -*- coding: utf-8 -*-

"""
Displacement and strain artifacts of one sequence.

The output directory holds ``disp_0001.f32`` (D_y then D_x),
``strain_0001.f32`` and ``strain_0001.png`` per post frame, and
``manifest.json`` describing them.
"""

from typing import List, Optional, Tuple, Union
import os
import logging
import dataclasses
import numpy as np
import torch
from PIL import Image
from .fieldops import StrainMap
from .multistage import StageStack, musse_forward
from .rfdata import RFSequence, load_sequence
from .storage import Float32BlobStorage, ImageFileStorage, JsonFileStorage

log = logging.getLogger(__name__)

# default display window is [0, WINDOW_MEDIAN_FACTOR * median strain]
WINDOW_MEDIAN_FACTOR = 1.5


def default_window(values: np.ndarray) -> Tuple[float, float]:
    return 0.0, float(WINDOW_MEDIAN_FACTOR * np.median(values))


def strain_image(z: StrainMap, window: Optional[Tuple[float, float]] = None,
                 compressive: bool = True) -> Image.Image:
    """
    8-bit grayscale image, linear in strain over `window`, clipped outside it.
    """
    values = z.compressive() if compressive else z.z
    lo, hi = window if window is not None else default_window(values)
    if not hi > lo:
        # a flat map has no scale, show it mid-gray
        lo, hi = lo - 1e-6, lo + 1e-6
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0) * 255.0
    return Image.fromarray(np.round(scaled).astype(np.uint8))


@dataclasses.dataclass
class InferenceResult:
    out_dir: str
    stage: int
    keys: List[str]


def infer_sequence(stack: StageStack, seq: RFSequence, out_dir: Union[str, os.PathLike],
                   window: Optional[Tuple[float, float]] = None, stage: Optional[int] = None) -> InferenceResult:
    out_dir = os.fspath(out_dir)
    stage = stack.M if stage is None else stage
    with torch.no_grad():
        out = musse_forward(stack, seq, upto=stage)
    blobs = Float32BlobStorage(out_dir)
    images = ImageFileStorage(out_dir)
    keys = []
    for t, (field, z) in enumerate(zip(out.fields(stage), out.strain_maps(stage)), 1):
        blobs.set(f"disp_{t:04d}", field.to_blob())
        blobs.set(f"strain_{t:04d}", z.z)
        images.set(f"strain_{t:04d}", strain_image(z, window))
        keys.append(f"{t:04d}")
    h, w = seq.shape
    JsonFileStorage(out_dir).set('manifest', {
        "H": h, "W": w, "T": seq.T,
        "stage": stage,
        "source_id": seq.source_id,
        "window": None if window is None else list(window),
    })
    log.info("wrote %d strain maps to %s", seq.T, out_dir, extra={"stage": stage})
    return InferenceResult(out_dir, stage, keys)


def infer(stack: StageStack, seq_path: Union[str, os.PathLike], out_dir: Union[str, os.PathLike],
          window: Optional[Tuple[float, float]] = None, stage: Optional[int] = None) -> InferenceResult:
    return infer_sequence(stack, load_sequence(seq_path), out_dir, window, stage)
