"""Hand-crafted feature maps: cell-averaged intensity and per-cell gradient
orientation histograms, optionally standardized per channel."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

VARIANCE_FLOOR = 1e-6


@dataclass
class FeatureConfig:
    kind: str = "concat"  # intensity | gradient_hist | concat
    cell: int = 2
    orientations: int = 8
    normalize: bool = True

    def __post_init__(self):
        if self.kind not in ("intensity", "gradient_hist", "concat"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.cell < 1:
            raise ValueError("cell size must be >= 1")
        if self.orientations < 2:
            raise ValueError("need at least 2 orientation bins")

    @property
    def channels(self):
        if self.kind == "intensity":
            return 1
        if self.kind == "gradient_hist":
            return self.orientations
        return 1 + self.orientations


def _to_gray(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] in (1, 3):
        return image.mean(axis=2)
    raise DimensionError(f"expected H x W x {{1|3}} image, got shape {image.shape}")


def _cell_blocks(img, cell):
    h = (img.shape[0] // cell) * cell
    w = (img.shape[1] // cell) * cell
    if h == 0 or w == 0:
        raise DimensionError("image smaller than one cell")
    return img[:h, :w].reshape(h // cell, cell, w // cell, cell)


def _intensity(gray, cell):
    return _cell_blocks(gray, cell).mean(axis=(1, 3))[:, :, None]


def _gradient_hist(gray, cell, orientations):
    """Per-cell histogram of gradient magnitude over unsigned orientation bins.

    Gradients are central differences with replicated borders; each pixel's
    magnitude lands entirely in one bin (no soft assignment), so the per-cell
    bin totals sum to the cell's total gradient magnitude.
    """
    padded = np.pad(gray, 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)  # unsigned orientation in [0, pi)
    bins = np.minimum((ang / np.pi * orientations).astype(np.intp), orientations - 1)
    ch, cw = gray.shape[0] // cell, gray.shape[1] // cell
    hist = np.zeros((ch, cw, orientations))
    cells_r = np.arange(gray.shape[0])[:, None] // cell
    cells_c = np.arange(gray.shape[1])[None, :] // cell
    inside = (cells_r < ch) & (cells_c < cw)
    np.add.at(hist,
              (np.broadcast_to(cells_r, gray.shape)[inside],
               np.broadcast_to(cells_c, gray.shape)[inside],
               bins[inside]),
              mag[inside])
    return hist


def _standardize(feat):
    mean = feat.mean(axis=(0, 1))
    var = feat.var(axis=(0, 1))
    return (feat - mean) / np.sqrt(np.maximum(var, VARIANCE_FLOOR))


def extract_features(image, cfg):
    """Feature map of an image: (H0//cell) x (W0//cell) x channels."""
    gray = _to_gray(image)
    if gray.size == 0:
        raise DimensionError("cannot extract features from an empty image")
    parts = []
    if cfg.kind in ("intensity", "concat"):
        parts.append(_intensity(gray, cfg.cell))
    if cfg.kind in ("gradient_hist", "concat"):
        parts.append(_gradient_hist(gray, cfg.cell, cfg.orientations))
    feat = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=2)
    if cfg.normalize:
        feat = _standardize(feat)
    return feat
