"""PNG image I/O: depth as 16-bit millimeters, RGB as plain 8-bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import FormatError
from ..projection import DepthImage

DEPTH_SCALE = 1000.0  # stored value = round(meters * 1000); 0 = no return


def write_depth_png(path, img: DepthImage) -> None:
    millimeters = np.rint(img.depth * DEPTH_SCALE)
    if millimeters.max(initial=0.0) > np.iinfo(np.uint16).max:
        raise FormatError(f"{path}: depth exceeds the 16-bit millimeter range")
    Image.fromarray(millimeters.astype(np.uint16)).save(Path(path))


def read_depth_png(path) -> DepthImage:
    path = Path(path)
    try:
        with Image.open(path) as handle:
            data = np.asarray(handle)
    except (OSError, SyntaxError) as err:
        raise FormatError(f"{path}: not a readable PNG ({err})") from err
    if data.ndim != 2:
        raise FormatError(f"{path}: depth PNG must be single-channel")
    depth = data.astype(float) / DEPTH_SCALE
    return DepthImage(width=depth.shape[1], height=depth.shape[0], depth=depth)


def write_rgb_png(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"{path}: RGB image must be (H, W, 3)")
    Image.fromarray(image, mode="RGB").save(Path(path))


def read_rgb_png(path) -> np.ndarray:
    with Image.open(Path(path)) as handle:
        return np.asarray(handle.convert("RGB"))
