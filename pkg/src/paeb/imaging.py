"""Small raster helpers shared by the detector and the safety cage."""

from __future__ import annotations

import numpy as np

from .sensors import PixelBox


def sample_grid(box: PixelBox, out_shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Array coordinates of out_shape cell centers spread over the continuous box."""
    rows, cols = out_shape
    ys = box.y_min + (np.arange(rows) + 0.5) * box.height / rows - 0.5
    xs = box.x_min + (np.arange(cols) + 0.5) * box.width / cols - 0.5
    return ys, xs


def bilinear_crop(image: np.ndarray, box: PixelBox, out_shape: tuple[int, int]) -> np.ndarray:
    """Resample the box contents to out_shape with bilinear interpolation.

    Samples are clamped to the pixels inside the box, so nothing from outside
    the box leaks into the patch.
    """
    h, w = image.shape
    ys, xs = sample_grid(box, out_shape)
    ys = np.clip(ys, max(0.0, box.y_min), min(h - 1.0, max(box.y_min, box.y_max - 1.0)))
    xs = np.clip(xs, max(0.0, box.x_min), min(w - 1.0, max(box.x_min, box.x_max - 1.0)))
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    img = image.astype(np.float64, copy=False)
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy
