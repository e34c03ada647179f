"""Synthetic data, fit metrics and detection-rate reports.

All randomness goes through ``numpy.random.default_rng(seed)`` so a seed
and the parameters pin down every pixel and label.
"""

from dataclasses import dataclass, field
import csv
import io
import math

import numpy as np

from .image import resize, rotate

UPRIGHT_LIMIT = 10.0
MATCH_IOU = 0.5
MATCH_ANGLE = 15.0

# published figures for other detectors, quoted verbatim and never computed
REFERENCE_ROWS = (
    ("Viola-Jones", "92.1%", "93.0%", "94.1%"),
    ("Rowley-Baluja-Kanade", "-", "90.1%", "89.9%"),
)


class EvalError(ValueError):
    pass


class TooFewPoints(EvalError):
    pass


# ---------------------------------------------------------------------------
# Regression fit metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitMetrics:
    m: float
    b: float
    r: float
    degenerate: bool = False


def fit_metrics(targets, outputs):
    """Least-squares line of ``outputs`` on ``targets`` and Pearson r."""
    t = np.asarray(targets, dtype=np.float64).ravel()
    o = np.asarray(outputs, dtype=np.float64).ravel()
    if len(t) != len(o):
        raise EvalError("targets and outputs differ in length")
    if len(t) < 2:
        raise TooFewPoints("need at least two points")
    dt, do = t - t.mean(), o - o.mean()
    stt, soo, sto = dt @ dt, do @ do, dt @ do
    if stt == 0 or soo == 0:
        return FitMetrics(0.0, 0.0, 0.0, degenerate=True)
    m = sto / stt
    b = o.mean() - m * t.mean()
    r = sto / math.sqrt(stt * soo)
    return FitMetrics(float(m), float(b), float(min(1.0, max(-1.0, r))))


def misclassification_rate(ground, predicted, tol_deg=10.0):
    g = np.asarray(ground, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if g.shape != p.shape:
        raise EvalError("ground and predicted differ in length")
    if g.size == 0:
        return 0.0
    return float(np.mean(np.abs(p - g) > tol_deg))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def make_template(size=15, supersample=4):
    """A stylised upright face: oval, two eyes above a mouth.

    The layout has no rotational symmetry, so every angle in [-90, 90]
    gives a distinct appearance.
    """
    n = size * supersample
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    v, u = np.meshgrid(c, c, indexing="ij")
    img = np.full((n, n), 0.3)
    img[(u / 0.8) ** 2 + (v / 0.95) ** 2 <= 1.0] = 0.78
    for ex in (-0.36, 0.36):
        img[(u - ex) ** 2 + (v + 0.28) ** 2 <= 0.18 ** 2] = 0.08
    img[((u / 0.38) ** 2 + ((v - 0.48) / 0.11) ** 2) <= 1.0] = 0.18
    img[(np.abs(u) <= 0.08) & (v > -0.1) & (v < 0.2)] = 0.6
    return img.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def _texture(rng, h, w, cells=6):
    """Smooth random background: bilinear upsampling of a coarse grid."""
    gh = max(2, int(math.ceil(h / cells)) + 1)
    gw = max(2, int(math.ceil(w / cells)) + 1)
    coarse = rng.uniform(0.15, 0.85, size=(gh, gw))
    return resize(coarse, w, h)


def embed(background, template, x, y, angle, gain=1.0, offset=0.0):
    """Paste the rotated template at (x, y); rotation corners show background."""
    t = np.clip(np.asarray(template) * gain + offset, 0.0, 1.0)
    size_h, size_w = t.shape
    rt = rotate(t, angle)
    alpha = rotate(np.ones_like(t), angle)
    out = np.array(background, dtype=np.float64)
    region = out[y:y + size_h, x:x + size_w]
    out[y:y + size_h, x:x + size_w] = rt + (1.0 - alpha) * region
    return out


def _jitter(rng, amount):
    if amount <= 0:
        return 1.0, 0.0
    return rng.uniform(1 - amount, 1 + amount), rng.uniform(-amount / 2, amount / 2)


@dataclass
class GroundTruth:
    x: int
    y: int
    size: int
    angle: float


@dataclass
class LabeledScene:
    image: np.ndarray
    boxes: list = field(default_factory=list)
    seed: int = 0
    index: int = 0


def synth_patches(seed, n, template=None, angle_range=(-90.0, 90.0),
                  noise=0.05, jitter=0.15):
    """Labelled training patches: rotated template over random texture.

    Returns ``(patches, angles)`` with ``patches`` of shape ``(n, s, s)``.
    """
    template = make_template() if template is None else np.asarray(template)
    size = template.shape[0]
    rng = np.random.default_rng(seed)
    patches = np.empty((n, size, size))
    angles = rng.uniform(angle_range[0], angle_range[1], size=n)
    for i in range(n):
        bg = _texture(rng, size, size)
        gain, offset = _jitter(rng, jitter)
        p = embed(bg, template, 0, 0, float(angles[i]), gain, offset)
        if noise > 0:
            p = p + rng.normal(0.0, noise, size=p.shape)
        patches[i] = np.clip(p, 0.0, 1.0)
    return patches, angles


def synth_dataset(seed, n_scenes, template=None, angle_range=(-90.0, 90.0),
                  noise=0.05, scene_size=(64, 64), jitter=0.15):
    """Scenes of ``scene_size`` (w, h), one rotated template each."""
    template = make_template() if template is None else np.asarray(template)
    size = template.shape[0]
    w, h = scene_size
    if w < size or h < size:
        raise EvalError("scene is smaller than the template")
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n_scenes):
        bg = _texture(rng, h, w)
        x = int(rng.integers(0, w - size + 1))
        y = int(rng.integers(0, h - size + 1))
        angle = float(rng.uniform(angle_range[0], angle_range[1]))
        gain, offset = _jitter(rng, jitter)
        img = embed(bg, template, x, y, angle, gain, offset)
        if noise > 0:
            img = img + rng.normal(0.0, noise, size=img.shape)
        scenes.append(LabeledScene(np.clip(img, 0.0, 1.0),
                                   [GroundTruth(x, y, size, angle)], seed, i))
    return scenes


# ---------------------------------------------------------------------------
# Detection rates
# ---------------------------------------------------------------------------

def iou(a, b):
    """Intersection over union of two square boxes given as (x, y, size)."""
    ax, ay, asz = a
    bx, by, bsz = b
    iw = min(ax + asz, bx + bsz) - max(ax, bx)
    ih = min(ay + asz, by + bsz) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (asz * asz + bsz * bsz - inter)


def matches(det, gt, min_iou=MATCH_IOU, max_angle=MATCH_ANGLE):
    return (iou((det.x, det.y, det.size), (gt.x, gt.y, gt.size)) >= min_iou
            and abs(det.angle - gt.angle) <= max_angle)


@dataclass
class RateRow:
    name: str
    detected: int = 0
    total: int = 0
    upright_detected: int = 0
    upright_total: int = 0
    rotated_detected: int = 0
    rotated_total: int = 0

    @staticmethod
    def _rate(a, b):
        # no ground truth in a category leaves its rate undefined
        return a / b if b else math.nan

    @property
    def all_rate(self):
        return self._rate(self.detected, self.total)

    @property
    def upright_rate(self):
        return self._rate(self.upright_detected, self.upright_total)

    @property
    def rotated_rate(self):
        return self._rate(self.rotated_detected, self.rotated_total)


def _percent(rate):
    return "-" if math.isnan(rate) else f"{100 * rate:.2f}%"


@dataclass
class RateReport:
    rows: list
    false_detections: int = 0
    scenes: int = 0

    @property
    def false_per_scene(self):
        return self.false_detections / self.scenes if self.scenes else 0.0

    def render(self, with_reference=True):
        """Aligned text table with the reference rows appended."""
        header = ("Detector", "All Faces", "Upright Faces (<= 10 deg)",
                  "Rotated Faces (> 10 deg)")
        body = [(r.name,) + tuple(_percent(v) for v in
                                  (r.all_rate, r.upright_rate, r.rotated_rate))
                for r in self.rows]
        if with_reference:
            body += [tuple(r) for r in REFERENCE_ROWS]
        widths = [max(len(row[i]) for row in [header] + body) for i in range(4)]
        fmt = "  ".join("{:<%d}" % w for w in widths)
        lines = [fmt.format(*header), "  ".join("-" * w for w in widths)]
        lines += [fmt.format(*row) for row in body]
        lines.append("")
        lines.append(f"false detections: {self.false_detections} over "
                     f"{self.scenes} scenes ({self.false_per_scene:.3f} per scene)")
        if with_reference:
            lines.append("reference rows are published figures, not computed here")
        return "\n".join(lines) + "\n"


def detection_rates(scenes, detections, name="rotface", min_iou=MATCH_IOU,
                    max_angle=MATCH_ANGLE):
    """Score detections against ground truth.

    A ground-truth box counts as found if any detection in its scene matches
    it; a detection matching no box counts as false.
    """
    if len(scenes) != len(detections):
        raise EvalError("one detection list per scene is required")
    row = RateRow(name)
    false = 0
    for scene, dets in zip(scenes, detections):
        for gt in scene.boxes:
            hit = any(matches(d, gt, min_iou, max_angle) for d in dets)
            upright = abs(gt.angle) <= UPRIGHT_LIMIT
            row.total += 1
            row.detected += hit
            if upright:
                row.upright_total += 1
                row.upright_detected += hit
            else:
                row.rotated_total += 1
                row.rotated_detected += hit
        false += sum(not any(matches(d, gt, min_iou, max_angle) for gt in scene.boxes)
                     for d in dets)
    return RateReport([row], false_detections=false, scenes=len(scenes))


# ---------------------------------------------------------------------------
# CSV reports
# ---------------------------------------------------------------------------

TIMING_FIELDS = ("model", "train_seconds", "epochs", "final_mse", "m", "b", "r",
                 "misclassification")


def timing_report(rows):
    """CSV text from dicts keyed by :data:`TIMING_FIELDS`."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TIMING_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        values = {k: row[k] for k in TIMING_FIELDS}
        for k, v in values.items():
            if k != "model" and (not isinstance(v, (int, float)) or v < 0) \
                    and k not in ("m", "b", "r"):
                raise EvalError(f"{k} must be a non-negative number, got {v!r}")
        writer.writerow(values)
    return buf.getvalue()


def parse_timing_report(text):
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {"model": rec["model"], "epochs": int(rec["epochs"])}
        for k in TIMING_FIELDS[1:]:
            if k != "epochs":
                row[k] = float(rec[k])
        rows.append(row)
    return rows


def history_csv(history):
    """Epoch-by-epoch training error as ``epoch,mse`` CSV."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("epoch", "mse"))
    for i, e in enumerate(history):
        writer.writerow((i, repr(float(e))))
    return buf.getvalue()
