"""View sampling for the self-supervised branch.

All geometric transforms act jointly on the two channels so the flow map
and its depth map stay co-registered; the intensity jitter touches the
flow channel only, because depth carries calibrated micrometers.
"""

from __future__ import annotations

import numpy as np


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize one (H, W) image with align-corners bilinear sampling."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def random_view(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One augmented view of a (C, H, W) input.

    Flips, 180-degree rotation (quarter turns too when square), a random
    87.5-100% crop resized back, and a +/-10% multiplicative jitter on
    channel 0.
    """
    img = np.asarray(image, dtype=float)
    c, h, w = img.shape

    if rng.random() < 0.5:
        img = img[:, :, ::-1]
    if rng.random() < 0.5:
        img = img[:, ::-1, :]
    if h == w:
        img = np.rot90(img, k=int(rng.integers(0, 4)), axes=(1, 2))
    elif rng.random() < 0.5:
        img = np.rot90(img, k=2, axes=(1, 2))

    scale = rng.uniform(0.875, 1.0)
    ch, cw = max(1, round(h * scale)), max(1, round(w * scale))
    if (ch, cw) != (h, w):
        oy = int(rng.integers(0, h - ch + 1))
        ox = int(rng.integers(0, w - cw + 1))
        crop = img[:, oy : oy + ch, ox : ox + cw]
        img = np.stack([bilinear_resize(crop[i], h, w) for i in range(c)])
    else:
        img = np.ascontiguousarray(img)

    jitter = rng.uniform(0.9, 1.1)
    img = img.copy()
    img[0] *= jitter
    return img
