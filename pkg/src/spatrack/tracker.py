"""Full tracking pipeline: per-frame search-region cropping, the two
regressor heat maps, fused localization, scale estimation, and online model
updates with exponential averaging.

The search region keeps a fixed canonical pixel size (set at init), so the
feature geometry and all model shapes stay constant for the whole run; scale
changes adapt the image-space crop instead.  Everything downstream of the
seeded initialization is deterministic.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernel_regression as kr
from . import masked_cnn as mc
from .boxes import BoundingBox, center_error, iou  # re-exported tracker surface
from .config import RunConfig
from .errors import ConfigError, DimensionError, GeometryError, NumericError
from .features import FeatureConfig, extract_features
from .numerics import bilinear_sample, gaussian_map, resize_bilinear, rotate_image

LABEL_SIGMA_FACTOR = 0.1
MIN_BOX_SIDE = 4.0


@dataclass
class ScaleModel:
    """Linear scorer over scale-warped feature maps plus its label bandwidth."""

    S: int = 7
    a: float = 1.02
    weights: np.ndarray = None
    bias: float = 0.0
    sigma: float = 1.0
    lr: float = 1e-5

    def levels(self):
        half = (self.S - 1) // 2
        return list(range(-half, half + 1))


@dataclass
class ResponseGrid:
    """Mapping from response-grid cells back to image pixel coordinates."""

    r0: float = 0.0
    c0: float = 0.0
    cell: float = 1.0
    th: int = 0
    tw: int = 0
    ratio_h: float = 1.0
    ratio_w: float = 1.0

    def to_image(self, pr, pc):
        cy = self.r0 + (pr + self.th / 2.0) * self.cell * self.ratio_h
        cx = self.c0 + (pc + self.tw / 2.0) * self.cell * self.ratio_w
        return cy, cx


@dataclass
class TrackerState:
    config: RunConfig
    box: BoundingBox
    base_w: float
    base_h: float
    canon_h: int
    canon_w: int
    cell: int
    feat_cfg: FeatureConfig
    geo: kr.KrrGeometry
    krr: kr.KrrModel
    cnn: mc.CnnSrkModel
    scale: ScaleModel
    y: np.ndarray
    cnn_target: np.ndarray
    frame_index: int = 1
    last_score: float = 1.0
    last_maps: dict = field(default_factory=dict)
    eta_history: list = field(default_factory=list)


def _crop_patch(frame, center, crop_h, crop_w):
    """Integer crop of (crop_h, crop_w) centered at a point, zero padded.

    Returns the patch and the image coordinates of its origin.
    """
    frame = np.asarray(frame, dtype=np.float64)
    squeeze = frame.ndim == 2
    if squeeze:
        frame = frame[:, :, None]
    fh, fw, c = frame.shape
    cy, cx = center
    r0 = int(round(cy - crop_h / 2.0))
    c0 = int(round(cx - crop_w / 2.0))
    patch = np.zeros((crop_h, crop_w, c))
    rs, re = max(r0, 0), min(r0 + crop_h, fh)
    cs, ce = max(c0, 0), min(c0 + crop_w, fw)
    if rs < re and cs < ce:
        patch[rs - r0:re - r0, cs - c0:ce - c0] = frame[rs:re, cs:ce]
    return (patch[:, :, 0] if squeeze else patch), float(r0), float(c0)


def _search_features(state, frame, center):
    """Crop the search region at the current scale, normalize it to the
    canonical size, and extract features; also returns the grid mapping."""
    ratio = math.sqrt((state.box.w / state.base_w) * (state.box.h / state.base_h))
    img_h = max(state.cell, int(round(state.canon_h * ratio)))
    img_w = max(state.cell, int(round(state.canon_w * ratio)))
    patch, r0, c0 = _crop_patch(frame, center, img_h, img_w)
    if (img_h, img_w) != (state.canon_h, state.canon_w):
        patch = resize_bilinear(patch, state.canon_h, state.canon_w)
    x = extract_features(patch, state.feat_cfg)
    grid = ResponseGrid(r0=r0, c0=c0, cell=state.cell,
                        th=state.geo.h, tw=state.geo.w,
                        ratio_h=img_h / state.canon_h,
                        ratio_w=img_w / state.canon_w)
    return x, grid


def fuse(f_krr, f_cnn, gamma):
    """Weighted sum of the two heat maps on a common grid."""
    f_krr = np.asarray(f_krr, dtype=np.float64)
    f_cnn = np.asarray(f_cnn, dtype=np.float64)
    if f_krr.shape != f_cnn.shape:
        raise DimensionError(f"heat map shapes differ: {f_krr.shape} vs {f_cnn.shape}")
    return f_krr + gamma * f_cnn


def locate(f, prev_box, grid=None):
    """Argmax localization: peak cell mapped back to image pixels, carrying
    the previous extent.  Ties break to the smallest row, then column."""
    f = np.asarray(f, dtype=np.float64)
    if f.size == 0:
        raise DimensionError("empty heat map")
    grid = grid or ResponseGrid()
    pr, pc = np.unravel_index(int(np.argmax(f)), f.shape)
    cy, cx = grid.to_image(pr, pc)
    return BoundingBox(cx - prev_box.w / 2.0, cy - prev_box.h / 2.0,
                       prev_box.w, prev_box.h)


def _scale_transform(x, level, a):
    """Center-crop (shrink) or zero-pad (grow) by a**level, then resize back."""
    h, w, _ = x.shape
    if level == 0:
        return x
    factor = a**level
    nh = max(1, int(round(h * factor)))
    nw = max(1, int(round(w * factor)))
    if nh <= h and nw <= w:
        r0 = (h - nh) // 2
        c0 = (w - nw) // 2
        warped = x[r0:r0 + nh, c0:c0 + nw, :]
    else:
        pt, pl = (nh - h) // 2, (nw - w) // 2
        warped = np.pad(x, ((pt, nh - h - pt), (pl, nw - w - pl), (0, 0)))
    return resize_bilinear(warped, h, w)


def scale_scores(x, scale):
    """Score every scale candidate; ties prefer the level closest to zero."""
    x = np.asarray(x, dtype=np.float64)
    levels = scale.levels()
    scores = np.array([
        float(scale.weights @ _scale_transform(x, s, scale.a).reshape(-1) + scale.bias)
        for s in levels
    ])
    order = sorted(range(len(levels)), key=lambda i: (abs(levels[i]), levels[i]))
    best_i = order[0]
    for i in order[1:]:
        if scores[i] > scores[best_i]:
            best_i = i
    return scores, levels[best_i]


def scale_labels(levels, observed, sigma):
    return np.exp(-np.square(np.asarray(levels, dtype=np.float64) - observed)
                  / (2.0 * sigma**2))


def scale_train_step(scale, x, observed_level, lr):
    """One SGD step of the scale scorer on Gaussian scale labels."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    levels = scale.levels()
    labels = scale_labels(levels, observed_level, scale.sigma)
    grad_w = np.zeros_like(scale.weights)
    grad_b = 0.0
    for s, label in zip(levels, labels):
        vec = _scale_transform(x, s, scale.a).reshape(-1)
        resid = float(scale.weights @ vec + scale.bias) - label
        grad_w += resid * vec
        grad_b += resid
    scale.weights = scale.weights - lr * grad_w
    scale.bias = scale.bias - lr * grad_b
    return scale


def _round_down_multiple(value, multiple, minimum):
    return max(minimum, (int(value) // multiple) * multiple)


def _train_krr(state, x, steps):
    cfg = state.config
    lr_beta = cfg.lr_beta if cfg.learn_beta else 0.0
    state.krr.D = kr.extract_dense_samples(x, state.geo)
    for _ in range(steps):
        kr.krr_train_step(state.krr, x, state.y, cfg.lr_alpha, lr_beta, state.geo)


def _train_cnn(state, x, stage1_steps, stage2_steps):
    cfg = state.config
    size = cfg.cnn_input_size
    x46 = resize_bilinear(x, size, size)
    x_rot = rotate_image(x46, cfg.rotation_deg) if cfg.two_stream else x46
    for _ in range(stage1_steps):
        mc.cnn_stage1_step(state.cnn, x46, x_rot, state.cnn_target, cfg.lr_cnn)
    for _ in range(stage2_steps):
        mc.cnn_stage2_step(state.cnn, x46, state.cnn_target, cfg.lr_cnn)


def init_tracker(frame, box, config):
    """Build and train the tracker on the first frame.

    Deterministic for a fixed config: masks and filter init come from the
    config seed, and everything else is closed-form or full-batch descent.
    """
    config.validate()
    frame = np.asarray(frame, dtype=np.float64)
    if box.w < MIN_BOX_SIDE or box.h < MIN_BOX_SIDE:
        raise GeometryError(f"initial box {box.w} x {box.h} is degenerate "
                            f"(needs >= {MIN_BOX_SIDE} px per side)")
    cell = config.feature_cell
    feat_cfg = FeatureConfig(kind=config.feature_kind, cell=cell,
                             orientations=config.feature_orientations,
                             normalize=config.feature_normalize)
    canon_h = max(4 * cell, int(round(config.search_factor * box.h / cell)) * cell)
    canon_w = max(4 * cell, int(round(config.search_factor * box.w / cell)) * cell)
    cx, cy = box.center
    patch, _, _ = _crop_patch(frame, (cy, cx), canon_h, canon_w)
    x = extract_features(patch, feat_cfg)
    H, W, C = x.shape

    grid = int(round(config.M**0.5))
    th = _round_down_multiple(box.h / cell, grid, grid)
    tw = _round_down_multiple(box.w / cell, grid, grid)
    th = min(th, _round_down_multiple(H - 1, grid, grid))
    tw = min(tw, _round_down_multiple(W - 1, grid, grid))
    geo = kr.KrrGeometry(H=H, W=W, C=C, h=th, w=tw, M=config.M)

    sigma_y = LABEL_SIGMA_FACTOR * math.sqrt(th * tw)
    y = gaussian_map(((H - th) / 2.0, (W - tw) / 2.0), sigma_y,
                     geo.out_h, geo.out_w).reshape(-1)

    beta = kr.identity_beta(config.M)
    D = kr.extract_dense_samples(x, geo)
    K = kr.kernel_matrix(D, beta, geo)
    alpha = kr.closed_form_alpha(K, y, config.lambda1)
    krr = kr.KrrModel(alpha=alpha, beta=beta, D=D, lambda1=config.lambda1,
                      lambda2=config.lambda2, eta=config.eta_early)

    size = config.cnn_input_size
    sigma_cnn = sigma_y * size / math.sqrt(H * W)
    cnn_target = gaussian_map(((size - 1) / 2.0, (size - 1) / 2.0),
                              sigma_cnn, size, size)
    cnn = mc.build_cnn(in_channels=C, out_channels=config.C1,
                       group_size=config.group_size,
                       bernoulli_p=config.bernoulli_p, dt_bound=config.dt_bound,
                       seed=config.seed, masked=config.masked_kernels,
                       input_size=size)

    scale = ScaleModel(S=config.S, a=config.a, weights=np.zeros(H * W * C),
                       bias=0.0, sigma=config.sigma_s, lr=config.lr_scale)

    state = TrackerState(config=config, box=box.clipped(*frame.shape[:2]),
                         base_w=box.w, base_h=box.h,
                         canon_h=canon_h, canon_w=canon_w, cell=cell,
                         feat_cfg=feat_cfg, geo=geo, krr=krr, cnn=cnn,
                         scale=scale, y=y, cnn_target=cnn_target)

    _train_krr(state, x, config.init_krr_steps)
    _train_cnn(state, x, config.init_cnn_stage1_steps, config.init_cnn_stage2_steps)
    krr.alpha_ema = krr.alpha.copy()
    krr.beta_ema = krr.beta.copy()
    krr.D_ema = krr.D.copy()
    return state


def track_frame(state, frame):
    """Process one frame: detect, localize, rescale, and update the models."""
    frame = np.asarray(frame, dtype=np.float64)
    cfg = state.config
    t = state.frame_index + 1
    eta = cfg.eta_early if t <= cfg.eta_switch_frame else cfg.eta_late
    state.krr.eta = eta
    state.eta_history.append(eta)

    cy, cx = state.box.center[1], state.box.center[0]
    x, grid = _search_features(state, frame, (cy, cx))

    trace = kr.krr_forward(x, state.krr.D_ema, state.krr.alpha_ema,
                           state.krr.beta_ema, state.geo)
    f_krr = trace.r
    size = cfg.cnn_input_size
    x46 = resize_bilinear(x, size, size)
    f_cnn = mc.cnn_forward(state.cnn, x46)

    # resample the CNN map onto the response grid (corner-aligned indices)
    geo = state.geo
    rows = (np.arange(geo.out_h) + (geo.h - 1) / 2.0) * (size - 1) / (geo.H - 1)
    cols = (np.arange(geo.out_w) + (geo.w - 1) / 2.0) * (size - 1) / (geo.W - 1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    f_cnn_grid = bilinear_sample(f_cnn, rr, cc)

    fused = fuse(f_krr, f_cnn_grid, cfg.gamma)
    if not np.all(np.isfinite(fused)):
        raise NumericError(f"non-finite heat map at frame {t}")
    new_box = locate(fused, state.box, grid)

    scores, best = scale_scores(x, state.scale)
    factor = cfg.a**best
    ncx, ncy = new_box.center
    fh, fw = frame.shape[:2]
    nw = float(np.clip(new_box.w * factor, MIN_BOX_SIDE, fw))
    nh = float(np.clip(new_box.h * factor, MIN_BOX_SIDE, fh))
    state.box = BoundingBox(ncx - nw / 2.0, ncy - nh / 2.0, nw, nh).clipped(fh, fw)

    # model update on the re-centered, re-scaled crop
    ucy, ucx = state.box.center[1], state.box.center[0]
    x_t, _ = _search_features(state, frame, (ucy, ucx))
    _train_krr(state, x_t, cfg.frame_krr_steps)
    kr.ema_update(state.krr)
    _train_cnn(state, x_t, cfg.frame_cnn_stage1_steps, cfg.frame_cnn_stage2_steps)
    scale_train_step(state.scale, x_t, 0, cfg.lr_scale)

    if not (np.all(np.isfinite(state.krr.alpha)) and np.all(np.isfinite(state.krr.beta))):
        raise NumericError(f"non-finite regression state at frame {t}")

    state.frame_index = t
    state.last_score = float(fused.max())
    state.last_maps = {"krr": f_krr, "cnn": f_cnn, "fused": fused}
    return state, state.box


def ablation_variant(config):
    """Factory for a tracker under the config's ablation variant."""
    if config.variant not in ("baseline", "cps", "srk", "full"):
        raise ConfigError(f"unknown variant {config.variant!r}")

    def factory(frame, box):
        return init_tracker(frame, box, config)

    return factory


def track_sequence(bundle, config):
    """One-pass tracking of a sequence bundle; returns boxes, scores, state."""
    state = init_tracker(bundle.frames[0], bundle.gt[0], config)
    boxes = [state.box]
    scores = [1.0]
    maps = [None]
    for frame in bundle.frames[1:]:
        state, box = track_frame(state, frame)
        boxes.append(box)
        scores.append(state.last_score)
        maps.append(state.last_maps)
    return boxes, scores, state, maps
