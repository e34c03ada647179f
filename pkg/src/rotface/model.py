"""Training pipeline and the on-disk model bundle.

File layout (all integers little-endian)::

    8 bytes   magic b"ROTFACE\\x01"
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header
    rest      float64 little-endian payload; each array in the header's
              "arrays" list names its element offset and shape (row-major)
"""

from dataclasses import dataclass, field
import json
import struct

import numpy as np

from . import grnn as grnn_mod
from . import pca as pca_mod
from .detector import ScanConfig, check_models, window_features
from .image import normalize_batch
from .wavelet import ThresholdRule, WaveletSpec, denoise

MAGIC = b"ROTFACE\x01"
FORMAT_VERSION = 1
THETA_PERCENTILE = 1.0
# pipeline defaults for 15x15 windows; generic PCA defaults live in pca.py
TRAIN_VARIANCE = 0.99
TRAIN_MAX_K = 60
PATCH_DENOISE_LEVELS = 1


class ModelFormatError(ValueError):
    pass


class TrainingDataError(ValueError):
    pass


@dataclass
class ModelBundle:
    window: int
    wavelet: WaveletSpec
    denoise_levels: int
    rule: ThresholdRule
    pca: pca_mod.PcaModel
    grnn: grnn_mod.GrnnModel
    theta: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        check_models(self.pca, self.grnn, self.window)

    def scan_config(self, **overrides):
        base = dict(window=self.window, theta=self.theta, wavelet=self.wavelet,
                    denoise_levels=self.denoise_levels, rule=self.rule)
        base.update(overrides)
        return ScanConfig(**base)

    def features(self, patches):
        return window_features(patches, self.pca, self.scan_config())

    def predict(self, patches):
        """``(angles, densities)`` for a stack of window-sized patches."""
        return grnn_mod.predict_batch(self.grnn, self.features(patches))


def _single_sample_pca(vec):
    # one sample has no covariance: project onto the sample's own direction,
    # which turns the GRNN into a normalised-correlation matcher
    norm = np.linalg.norm(vec)
    d = len(vec)
    basis = np.zeros((d, 1))
    if norm > 0:
        basis[:, 0] = vec / norm
    else:
        basis[0, 0] = 1.0
    return pca_mod.PcaModel(mean=np.zeros(d), basis=pca_mod.fix_signs(basis),
                            eigenvalues=np.zeros(1), total_variance=0.0)


def calibrate_theta(centers, targets, spread, percentile=THETA_PERCENTILE):
    """Low percentile of leave-one-out densities of the training features."""
    _, dens = grnn_mod.loo_predictions(centers, targets, spread)
    return float(np.percentile(dens, percentile))


def train(patches, angles, window=15, k=None, variance=TRAIN_VARIANCE,
          max_k=TRAIN_MAX_K, spread=None, wavelet=WaveletSpec(),
          denoise_levels=PATCH_DENOISE_LEVELS, rule=ThresholdRule(), theta=None,
          metadata=None):
    """Fit PCA and GRNN on labelled patches and calibrate the density threshold.

    ``patches`` is an ``(m, window, window)`` stack, ``angles`` the matching
    orientations in degrees.  ``spread=None`` selects it by leave-one-out
    error; ``theta=None`` uses the 1st percentile of leave-one-out
    densities.
    """
    x = np.asarray(patches, dtype=np.float64)
    a = np.asarray(angles, dtype=np.float64).ravel()
    if x.ndim != 3 or x.shape[1:] != (window, window):
        raise TrainingDataError(
            f"patches must have shape (m, {window}, {window}), got {x.shape}")
    if len(a) != len(x):
        raise TrainingDataError(f"{len(x)} patches but {len(a)} angles")
    if len(x) == 0:
        raise TrainingDataError("no training patches")
    if np.any(np.abs(a) > 90.0):
        raise TrainingDataError("angles must lie in [-90, 90]")

    cfg = ScanConfig(window=window, wavelet=wavelet,
                     denoise_levels=denoise_levels, rule=rule)
    vecs = normalize_batch(denoise(x, wavelet, denoise_levels, rule, "dwt"))
    m = len(vecs)
    if m == 1:
        pca = _single_sample_pca(vecs[0])
    else:
        pca = pca_mod.fit(vecs, k=k, variance=variance, max_k=max_k)
    feats = window_features(x, pca, cfg)

    if spread is None:
        if m >= 3:
            spread = grnn_mod.select_spread(feats, a)
        else:
            spread = 0.5 * grnn_mod.median_pairwise_distance(feats) or 1.0
    model = grnn_mod.fit(feats, a, spread)
    if theta is None:
        theta = calibrate_theta(feats, a, spread) if m >= 2 else float(np.exp(-0.5))
    meta = {"samples": m}
    meta.update(metadata or {})
    return ModelBundle(window, wavelet, denoise_levels, rule, pca, model,
                       float(theta), meta)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def dumps(bundle):
    arrays = [
        ("pca_mean", bundle.pca.mean),
        ("pca_basis", bundle.pca.basis),
        ("pca_eigenvalues", bundle.pca.eigenvalues),
        ("grnn_centers", bundle.grnn.centers),
        ("grnn_targets", bundle.grnn.targets),
    ]
    index, chunks, offset = [], [], 0
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {
        "format": "rotface-model",
        "version": FORMAT_VERSION,
        "window": bundle.window,
        "wavelet": {"family": bundle.wavelet.family,
                    "boundary": bundle.wavelet.boundary,
                    "levels": bundle.denoise_levels},
        "threshold": {"mode": bundle.rule.mode, "selection": bundle.rule.selection,
                      "value": bundle.rule.value},
        "pca": {"d": bundle.pca.d, "k": bundle.pca.k,
                "total_variance": bundle.pca.total_variance},
        "grnn": {"m": bundle.grnn.m, "k": bundle.grnn.k, "spread": bundle.grnn.spread},
        "theta": bundle.theta,
        "metadata": bundle.metadata,
        "arrays": index,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(chunks)


def loads(data):
    if len(data) < 16 or data[:8] != MAGIC:
        raise ModelFormatError("not a rotface model file")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + n].decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model version {header.get('version')}")
        payload = np.frombuffer(data[16 + n:], dtype="<f8")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            if start + count > len(payload):
                raise ModelFormatError(f"payload too short for {entry['name']}")
            arrays[entry["name"]] = payload[start:start + count].reshape(shape).astype(np.float64)
        wav = header["wavelet"]
        thr = header["threshold"]
        pca = pca_mod.PcaModel(mean=arrays["pca_mean"], basis=arrays["pca_basis"],
                               eigenvalues=arrays["pca_eigenvalues"],
                               total_variance=float(header["pca"]["total_variance"]))
        model = grnn_mod.fit(arrays["grnn_centers"], arrays["grnn_targets"],
                             float(header["grnn"]["spread"]))
        if (pca.d, pca.k) != (header["pca"]["d"], header["pca"]["k"]) or \
                (model.m, model.k) != (header["grnn"]["m"], header["grnn"]["k"]):
            raise ModelFormatError("array shapes disagree with the header")
        return ModelBundle(
            window=int(header["window"]),
            wavelet=WaveletSpec(wav["family"], wav["boundary"]),
            denoise_levels=int(wav["levels"]),
            rule=ThresholdRule(thr["mode"], thr["selection"], float(thr["value"])),
            pca=pca, grnn=model, theta=float(header["theta"]),
            metadata=header.get("metadata", {}))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model file: {exc}") from exc


def save(path, bundle):
    with open(path, "wb") as fh:
        fh.write(dumps(bundle))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
