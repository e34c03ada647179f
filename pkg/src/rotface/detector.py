"""Sliding-window search for the trained pattern and its in-plane angle.

Every window goes through crop -> wavelet de-noise -> normalise -> PCA ->
GRNN.  A window is reported when the GRNN density reaches the configured
threshold and the predicted angle lies in [-90, 90].  Windows are scanned
over an image pyramid, mapped back to original coordinates and pruned by
greedy non-maximum suppression.

Angles follow the convention used throughout the package: 0 is upright and
positive angles are clockwise as displayed.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import json
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import grnn as grnn_mod
from . import pca as pca_mod
from .image import normalize_batch, resize
from .wavelet import ThresholdRule, TooManyLevels, WaveletSpec, denoise

# windows rows handled per work unit; fixed so results do not depend on --jobs
CHUNK_ROWS = 8


class ModelMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ScanConfig:
    window: int = 15
    stride: int = 1
    scale_factor: float = 1.2
    min_scale: float = 1.0
    max_scale: float = math.inf
    max_levels: int | None = None
    theta: float = 0.0
    nms_overlap: float = 0.3
    wavelet: WaveletSpec = field(default_factory=WaveletSpec)
    denoise_levels: int = 1
    rule: ThresholdRule = field(default_factory=ThresholdRule)
    # "window" de-noises every crop, "image" each pyramid level once
    denoise_mode: str = "window"
    image_denoise_levels: int = 3
    jobs: int = 1

    def __post_init__(self):
        if self.window < 8:
            raise ValueError("window must be at least 8 pixels")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.scale_factor > 1:
            raise ValueError("scale factor must exceed 1")
        if not self.theta >= 0:
            raise ValueError("density threshold must be non-negative")
        if not 0 <= self.nms_overlap <= 1:
            raise ValueError("NMS overlap must be in [0, 1]")
        if self.denoise_mode not in ("window", "image", "none"):
            raise ValueError(f"unknown denoise mode {self.denoise_mode!r}")


@dataclass(frozen=True)
class Detection:
    x: int
    y: int
    size: int
    angle: float
    confidence: float

    def sort_key(self):
        return (-self.confidence, self.y, self.x, self.size)

    def to_dict(self):
        return {"x": self.x, "y": self.y, "size": self.size,
                "angle_deg": round(self.angle, 2), "confidence": self.confidence}


def check_models(pca, grnn, window):
    if pca.d != window * window:
        raise ModelMismatch(f"PCA expects {pca.d} inputs, window gives {window * window}")
    if grnn.k != pca.k:
        raise ModelMismatch(f"GRNN expects {grnn.k} features, PCA gives {pca.k}")


def window_features(patches, pca, cfg):
    """Feature vectors for an ``(n, w, w)`` stack of raw crops."""
    x = np.asarray(patches, dtype=np.float64)
    if cfg.denoise_mode == "window" and len(x):
        x = denoise(x, cfg.wavelet, cfg.denoise_levels, cfg.rule, "dwt")
    return pca_mod.transform(pca, normalize_batch(x))


def build_pyramid(img, cfg):
    """``[(scale, image), ...]`` from successive downscaling by the factor."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    levels = []
    i = 0
    while True:
        scale = cfg.scale_factor ** i
        lw = int(math.floor(w / scale + 1e-9))
        lh = int(math.floor(h / scale + 1e-9))
        if lw < cfg.window or lh < cfg.window or scale > cfg.max_scale * (1 + 1e-12):
            break
        if cfg.max_levels is not None and len(levels) >= cfg.max_levels:
            break
        if scale >= cfg.min_scale * (1 - 1e-12):
            levels.append((scale, img if i == 0 else resize(img, lw, lh)))
        i += 1
    return levels


def window_positions(shape, window, stride):
    """Top-left corners ``(ys, xs)`` of all windows that fit inside ``shape``."""
    h, w = shape
    return np.arange(0, h - window + 1, stride), np.arange(0, w - window + 1, stride)


def _denoise_level(img, cfg):
    levels = cfg.image_denoise_levels
    while levels >= 1:
        try:
            return denoise(img, cfg.wavelet, levels, cfg.rule, "dwt")
        except TooManyLevels:
            levels -= 1
    return img


def _scan_chunk(args):
    """Evaluate windows for a block of rows on one pyramid level."""
    views, ys, xs, scale, pca, grnn, cfg, shape = args
    ny, nx = views.shape[:2]
    feats = window_features(views.reshape(ny * nx, cfg.window, cfg.window), pca, cfg)
    values, density = grnn_mod.predict_batch(grnn, feats)
    keep = (density >= cfg.theta) & (values >= -90.0) & (values <= 90.0)
    out = []
    height, width = shape
    size = min(int(round(cfg.window * scale)), width, height)
    for idx in np.nonzero(keep)[0]:
        r, c = divmod(int(idx), nx)
        x0 = min(int(round(xs[c] * scale)), width - size)
        y0 = min(int(round(ys[r] * scale)), height - size)
        out.append(Detection(x0, y0, size, float(values[idx]), float(density[idx])))
    return out


def _work_units(img, pca, grnn, cfg):
    for scale, level in build_pyramid(img, cfg):
        if cfg.denoise_mode == "image":
            level = _denoise_level(level, cfg)
        ys, xs = window_positions(level.shape, cfg.window, cfg.stride)
        if not len(ys) or not len(xs):
            continue
        views = sliding_window_view(level, (cfg.window, cfg.window))
        for start in range(0, len(ys), CHUNK_ROWS):
            rows = ys[start:start + CHUNK_ROWS]
            block = views[rows][:, xs]
            yield (np.ascontiguousarray(block), rows, xs, scale, pca, grnn, cfg,
                   img.shape)


def scan_candidates(img, pca, grnn, cfg=ScanConfig()):
    """All accepted windows before suppression, in deterministic order."""
    check_models(pca, grnn, cfg.window)
    img = np.asarray(img, dtype=np.float64)
    units = _work_units(img, pca, grnn, cfg)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            parts = list(pool.map(_scan_chunk, units))
    else:
        parts = [_scan_chunk(u) for u in units]
    dets = [d for part in parts for d in part]
    dets.sort(key=Detection.sort_key)
    return dets


def scan(img, pca, grnn, cfg=ScanConfig()):
    """Detect the pattern; returns NMS-filtered detections, best first."""
    return nms(scan_candidates(img, pca, grnn, cfg), cfg.nms_overlap)


def box_iou(a, b):
    iw = min(a.x + a.size, b.x + b.size) - max(a.x, b.x)
    ih = min(a.y + a.size, b.y + b.size) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.size ** 2 + b.size ** 2 - inter)


def nms(dets, overlap=0.3):
    """Greedy suppression of boxes overlapping a better one by IoU > ``overlap``."""
    remaining = sorted(dets, key=Detection.sort_key)
    keep = []
    while remaining:
        best = remaining.pop(0)
        keep.append(best)
        remaining = [d for d in remaining if box_iou(best, d) <= overlap]
    return keep


def _line_pixels(det, shape):
    h, w = shape
    cx = det.x + (det.size - 1) / 2.0
    cy = det.y + (det.size - 1) / 2.0
    length = (det.size - 1) / 2.0
    t = math.radians(det.angle)
    dx, dy = math.sin(t), -math.cos(t)
    n = max(1, int(math.ceil(length * 2)))
    pts = set()
    for i in range(n + 1):
        s = length * i / n
        px, py = int(round(cx + s * dx)), int(round(cy + s * dy))
        if 0 <= px < w and 0 <= py < h:
            pts.add((py, px))
    return pts


def _border_pixels(det, shape):
    h, w = shape
    x0, y0 = det.x, det.y
    x1, y1 = det.x + det.size - 1, det.y + det.size - 1
    pts = set()
    for x in range(x0, x1 + 1):
        pts.add((y0, x))
        pts.add((y1, x))
    for y in range(y0, y1 + 1):
        pts.add((y, x0))
        pts.add((y, x1))
    return {(y, x) for y, x in pts if 0 <= y < h and 0 <= x < w}


def annotation_pixels(det, shape):
    return _border_pixels(det, shape) | _line_pixels(det, shape)


def annotate(img, dets):
    """Draw each box outline and an angle needle from its centre at value 1."""
    out = np.array(img, dtype=np.float64)
    for det in dets:
        for y, x in annotation_pixels(det, out.shape):
            out[y, x] = 1.0
    return out


def detections_json(name, window, dets):
    doc = {"image": name, "window": window,
           "detections": [d.to_dict() for d in dets]}
    return json.dumps(doc, indent=2) + "\n"
