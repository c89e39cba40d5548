"""Synthetic sequences with exact ground truth, sequence directory I/O, and
one-pass evaluation metrics (distance precision and overlap success curves).

Sequence directories follow the common benchmark layout: binary PGM (P5) or
PPM (P6) frames under img/ named %08d starting at 1, and a groundtruth.txt
with one 1-based "x,y,w,h" line per frame.
"""

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .boxes import BoundingBox, center_error, iou
from .errors import ParseError, SequenceSpecError
from .numerics import resize_bilinear, rotate_image

PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)


@dataclass
class SequenceBundle:
    frames: list
    gt: list
    name: str = "sequence"
    seed: int = None

    def __post_init__(self):
        if len(self.frames) != len(self.gt) or len(self.frames) < 2:
            raise SequenceSpecError("need equally many frames and boxes, at least 2")
        for i, (frame, box) in enumerate(zip(self.frames, self.gt)):
            fh, fw = frame.shape[:2]
            if (box.x + box.w <= 0 or box.y + box.h <= 0
                    or box.x >= fw or box.y >= fh):
                raise SequenceSpecError(
                    f"ground-truth box at frame {i} does not intersect the frame")


@dataclass
class SynthSpec:
    """Recipe for a rendered sequence: a textured patch moving over a textured
    background along piecewise-linear waypoints, with optional per-frame
    rotation and scaling, occlusion intervals and additive Gaussian noise."""

    frames: int = 60
    frame_h: int = 96
    frame_w: int = 96
    target_h: int = 24
    target_w: int = 24
    seed: int = 0
    path: list = field(default_factory=list)  # waypoints [(cx, cy), ...]
    rotation: object = 0.0   # degrees: scalar per-frame rate, or list per frame
    scale: object = 1.0      # factor: scalar per-frame growth, or list per frame
    occlusions: list = field(default_factory=list)  # [{start, end, fraction}]
    noise_sigma: float = 0.0
    name: str = "synthetic"

    def __post_init__(self):
        if self.frames < 2:
            raise SequenceSpecError("a sequence needs at least 2 frames")
        if not self.path:
            self.path = [(self.frame_w / 2.0, self.frame_h / 2.0)]

    def rotation_at(self, t):
        if np.isscalar(self.rotation):
            return float(self.rotation) * t
        return float(self.rotation[t])

    def scale_at(self, t):
        if np.isscalar(self.scale):
            return float(self.scale) ** t
        s = float(self.scale[t])
        if s <= 0:
            raise SequenceSpecError(f"scale factor must be > 0, got {s} at frame {t}")
        return s

    def center_at(self, t):
        pts = self.path
        if len(pts) == 1:
            return float(pts[0][0]), float(pts[0][1])
        u = t * (len(pts) - 1) / (self.frames - 1)
        i = min(int(np.floor(u)), len(pts) - 2)
        frac = u - i
        cx = pts[i][0] + frac * (pts[i + 1][0] - pts[i][0])
        cy = pts[i][1] + frac * (pts[i + 1][1] - pts[i][1])
        return float(cx), float(cy)

    def occluded_at(self, t):
        for occ in self.occlusions:
            if occ["start"] <= t <= occ["end"]:
                return float(occ["fraction"])
        return 0.0


def _texture(rng, h, w):
    """Low-frequency random field plus a checker pattern for strong gradients."""
    coarse = resize_bilinear(rng.random((h // 4 + 2, w // 4 + 2)), h, w)
    checker = ((np.arange(h)[:, None] // 3 + np.arange(w)[None, :] // 3) % 2).astype(float)
    fine = rng.random((h, w))
    return 0.45 * coarse + 0.35 * checker + 0.2 * fine


def synthesize_sequence(spec):
    """Render the recipe deterministically; ground truth is the placed box."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    bg = 0.25 + 0.5 * _texture(rng, spec.frame_h, spec.frame_w)
    tex = 0.1 + 0.85 * _texture(rng, spec.target_h, spec.target_w)

    frames = []
    gts = []
    for t in range(spec.frames):
        s = spec.scale_at(t)
        th = max(4, int(round(spec.target_h * s)))
        tw = max(4, int(round(spec.target_w * s)))
        patch = tex if (th, tw) == tex.shape else resize_bilinear(tex, th, tw)
        mask = np.ones((th, tw))
        angle = spec.rotation_at(t)
        if angle % 360.0 != 0.0:
            patch = rotate_image(patch, angle)
            mask = rotate_image(mask, angle)
        cx, cy = spec.center_at(t)
        x0 = int(round(cx - tw / 2.0))
        y0 = int(round(cy - th / 2.0))
        if x0 < 0 or y0 < 0 or x0 + tw > spec.frame_w or y0 + th > spec.frame_h:
            raise SequenceSpecError(
                f"path leaves the frame at frame {t}: box ({x0},{y0},{tw},{th})")
        frame = bg.copy()
        region = frame[y0:y0 + th, x0:x0 + tw]
        frame[y0:y0 + th, x0:x0 + tw] = region * (1.0 - mask) + patch * mask
        frac = spec.occluded_at(t)
        if frac > 0:
            oh = max(1, int(round(th * frac)))
            ow = max(1, int(round(tw * frac)))
            oy = y0 + (th - oh) // 2
            ox = x0 + (tw - ow) // 2
            frame[oy:oy + oh, ox:ox + ow] = 0.45
        if spec.noise_sigma > 0:
            frame = frame + rng.normal(0.0, spec.noise_sigma, size=frame.shape)
        frames.append(np.clip(frame, 0.0, 1.0))
        gts.append(BoundingBox(float(x0), float(y0), float(tw), float(th)))
    return SequenceBundle(frames=frames, gt=gts, name=spec.name, seed=spec.seed)


def evaluate_ope(results, gt):
    """One-pass evaluation metrics for a tracked box list against ground truth.

    Precision at threshold tau counts frames with center error below tau
    (thresholds 0..50 px); success at threshold tau counts frames whose
    overlap strictly exceeds tau (21 thresholds on [0, 1]); auc is the mean
    of the success curve.
    """
    if len(results) != len(gt):
        raise ParseError(f"result count {len(results)} != ground truth count {len(gt)}")
    errors = np.array([center_error(r, g) for r, g in zip(results, gt)])
    overlaps = np.array([iou(r, g) for r, g in zip(results, gt)])
    precision_curve = (errors[None, :] < PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    success_curve = (overlaps[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return {
        "precision_20": float(precision_curve[20]),
        "auc": float(success_curve.mean()),
        "mean_center_error": float(errors.mean()),
        "precision_curve": precision_curve.tolist(),
        "success_curve": success_curve.tolist(),
    }


# ---------------------------------------------------------------- file I/O

def _write_pnm(path, img):
    """Binary PGM (2-d input) or PPM (3-channel input), 8-bit."""
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        magic, dims = b"P5", f"{arr.shape[1]} {arr.shape[0]}"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic, dims = b"P6", f"{arr.shape[1]} {arr.shape[0]}"
    else:
        raise ParseError(f"cannot write image of shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + dims.encode() + b"\n255\n")
        fh.write(arr.tobytes())


def _read_pnm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"(P[56])\s+(?:#[^\n]*\n\s*)?(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ParseError(f"{path}: not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval > 255:
        raise ParseError(f"{path}: 16-bit samples are not supported")
    pixels = np.frombuffer(data[m.end():], dtype=np.uint8)
    channels = 3 if magic == b"P6" else 1
    if pixels.size < h * w * channels:
        raise ParseError(f"{path}: truncated pixel data")
    pixels = pixels[:h * w * channels].astype(np.float64) / float(maxval)
    return pixels.reshape(h, w) if channels == 1 else pixels.reshape(h, w, 3)


def _format_num(v):
    return f"{v:.10g}"


def save_sequence(bundle, directory):
    """Write frames and ground truth in the sequence directory layout."""
    img_dir = os.path.join(directory, "img")
    os.makedirs(img_dir, exist_ok=True)
    for i, frame in enumerate(bundle.frames, start=1):
        ext = "ppm" if (frame.ndim == 3 and frame.shape[2] == 3) else "pgm"
        _write_pnm(os.path.join(img_dir, f"{i:08d}.{ext}"), frame)
    with open(os.path.join(directory, "groundtruth.txt"), "w") as fh:
        for box in bundle.gt:
            fh.write(",".join(_format_num(v) for v in box.to_external()) + "\n")


def load_sequence(directory):
    """Read a sequence directory back into a bundle."""
    gt_path = os.path.join(directory, "groundtruth.txt")
    if not os.path.isfile(gt_path):
        raise ParseError(f"missing ground truth file {gt_path}")
    boxes = []
    with open(gt_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"{gt_path}:{lineno}: expected 'x,y,w,h', got {line!r}")
            try:
                x, y, w, h = (float(p) for p in parts)
            except ValueError:
                raise ParseError(f"{gt_path}:{lineno}: non-numeric field in {line!r}")
            boxes.append(BoundingBox.from_external(x, y, w, h))
    frames = []
    img_dir = os.path.join(directory, "img")
    for i in range(1, len(boxes) + 1):
        for ext in ("ppm", "pgm"):
            path = os.path.join(img_dir, f"{i:08d}.{ext}")
            if os.path.isfile(path):
                frames.append(_read_pnm(path))
                break
        else:
            missing = os.path.join(img_dir, f"{i:08d}.{{ppm|pgm}}")
            raise ParseError(f"missing frame file {missing}")
    return SequenceBundle(frames=frames, gt=boxes,
                          name=os.path.basename(os.path.normpath(directory)))


def save_results(results, metrics, directory):
    """Write results.csv (frame,x,y,w,h,score; 1-based) and metrics.json."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "results.csv"), "w") as fh:
        for i, (box, score) in enumerate(results, start=1):
            x, y, w, h = box.to_external()
            fh.write(f"{i},{x:.4f},{y:.4f},{w:.4f},{h:.4f},{score:.6e}\n")
    with open(os.path.join(directory, "metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
