"""2-D wavelet transforms and threshold de-noising.

Two orthonormal families are available (Haar and Daubechies-2) with either
periodic or symmetric boundary handling.  The decimated transform is built
from cached per-length analysis matrices, so it runs on single images and on
``(n, h, w)`` stacks of patches alike.  Odd lengths are made even at each
level by repeating the trailing sample; the original size is recorded so the
inverse trims exactly.

The stationary (undecimated, a trous) transform uses the same filters
dilated by ``2**(level-1)`` with periodic wrap-around.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

SQRT2 = math.sqrt(2.0)
_S3 = math.sqrt(3.0)

LOWPASS = {
    "haar": np.array([1.0, 1.0]) / SQRT2,
    "db2": np.array([1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3]) / (4 * SQRT2),
}
FAMILIES = tuple(LOWPASS)
BOUNDARIES = ("periodic", "symmetric")
MAD_SCALE = 0.6745


class WaveletError(ValueError):
    pass


class TooManyLevels(WaveletError):
    pass


class ShapeMismatch(WaveletError):
    pass


class BadDimensions(WaveletError):
    pass


class UnsupportedBoundary(WaveletError):
    pass


@dataclass(frozen=True)
class WaveletSpec:
    family: str = "haar"
    boundary: str = "periodic"

    def __post_init__(self):
        if self.family not in LOWPASS:
            raise WaveletError(f"unknown wavelet family {self.family!r}")
        if self.boundary not in BOUNDARIES:
            raise WaveletError(f"unknown boundary mode {self.boundary!r}")

    @property
    def lowpass(self):
        return LOWPASS[self.family]

    @property
    def highpass(self):
        h = self.lowpass
        # quadrature mirror: g[n] = (-1)^n h[L-1-n]
        return h[::-1] * (-1.0) ** np.arange(len(h))

    @property
    def filter_length(self):
        return len(self.lowpass)


@dataclass(frozen=True)
class ThresholdRule:
    """Shrinkage rule: ``mode`` is soft/hard, ``selection`` universal/fixed."""

    mode: str = "soft"
    selection: str = "universal"
    value: float = 0.0

    def __post_init__(self):
        if self.mode not in ("soft", "hard"):
            raise WaveletError(f"unknown threshold mode {self.mode!r}")
        if self.selection not in ("universal", "fixed"):
            raise WaveletError(f"unknown threshold selection {self.selection!r}")
        if self.value < 0:
            raise WaveletError("fixed threshold must be non-negative")

    @classmethod
    def fixed(cls, value, mode="soft"):
        return cls(mode=mode, selection="fixed", value=float(value))


@dataclass
class SubbandPyramid:
    """Decimated coefficients.

    ``details[l]`` holds the ``(horizontal, vertical, diagonal)`` bands of
    level ``l + 1`` (finest first); ``sizes[l]`` is the ``(h, w)`` of the
    signal that level decomposed.
    """

    approx: np.ndarray
    details: list
    sizes: list
    spec: WaveletSpec = field(default_factory=WaveletSpec)

    @property
    def levels(self):
        return len(self.details)


@dataclass
class SwtPyramid:
    """Undecimated coefficients; every band has the input's shape."""

    approx: np.ndarray
    details: list
    spec: WaveletSpec = field(default_factory=WaveletSpec)

    @property
    def levels(self):
        return len(self.details)


# ---------------------------------------------------------------------------
# Decimated transform
# ---------------------------------------------------------------------------

@lru_cache(maxsize=256)
def _operators(n, family, boundary):
    """Analysis matrix ``(m, n)`` and its inverse ``(n, m)`` for length ``n``.

    ``m`` is ``n`` rounded up to even; rows ``[:m//2]`` give the
    approximation and rows ``[m//2:]`` the detail coefficients.
    """
    spec = WaveletSpec(family, boundary)
    h, g = spec.lowpass, spec.highpass
    m = n + (n % 2)
    half = m // 2
    # symmetric mode centres the filter support; a right-hanging support
    # makes the reflected operator singular for db2
    offset = 0 if boundary == "periodic" else 1 - len(h) // 2
    a = np.zeros((m, m))
    for k in range(half):
        for j in range(len(h)):
            t = 2 * k + j + offset
            if boundary == "periodic":
                t %= m
            elif t < 0:
                t = -1 - t
            elif t >= m:
                t = 2 * m - 1 - t
            a[k, t] += h[j]
            a[half + k, t] += g[j]
    if boundary == "periodic":
        a_inv = a.T.copy()
    else:
        a_inv = np.linalg.inv(a)
    # trailing-sample repetition for odd n, and its exact left inverse
    ext = np.eye(m, n)
    if m != n:
        ext[n, n - 1] = 1.0
    forward = a @ ext
    inverse = a_inv[:n].copy()
    forward.setflags(write=False)
    inverse.setflags(write=False)
    return forward, inverse


def dwt2(img, spec=WaveletSpec(), levels=1):
    """Multi-level separable 2-D DWT (rows first, then columns).

    ``img`` may be a single ``(h, w)`` array or a stack ``(..., h, w)``.
    """
    if levels < 1:
        raise WaveletError("levels must be >= 1")
    a = np.asarray(img, dtype=np.float64)
    flen = spec.filter_length
    details, sizes = [], []
    for level in range(1, levels + 1):
        h, w = a.shape[-2:]
        if h < flen or w < flen:
            raise TooManyLevels(
                f"level {level}: {h}x{w} is smaller than filter length {flen}")
        fh, _ = _operators(h, spec.family, spec.boundary)
        fw, _ = _operators(w, spec.family, spec.boundary)
        y = fh @ a @ fw.T
        hh, hw = fh.shape[0] // 2, fw.shape[0] // 2
        details.append((y[..., hh:, :hw], y[..., :hh, hw:], y[..., hh:, hw:]))
        sizes.append((h, w))
        a = y[..., :hh, :hw]
    return SubbandPyramid(a, details, sizes, spec)


def idwt2(pyr):
    """Inverse of :func:`dwt2`."""
    spec = pyr.spec
    a = np.asarray(pyr.approx, dtype=np.float64)
    for (hd, vd, dd), (h, w) in zip(reversed(pyr.details), reversed(pyr.sizes)):
        _, ih = _operators(h, spec.family, spec.boundary)
        _, iw = _operators(w, spec.family, spec.boundary)
        hh, hw = ih.shape[1] // 2, iw.shape[1] // 2
        for band in (a, hd, vd, dd):
            if band.shape[-2:] != (hh, hw):
                raise ShapeMismatch(
                    f"band shape {band.shape[-2:]} != expected {(hh, hw)}")
        y = np.concatenate(
            [np.concatenate([a, vd], axis=-1), np.concatenate([hd, dd], axis=-1)],
            axis=-2)
        a = ih @ y @ iw.T
    return a


# ---------------------------------------------------------------------------
# Stationary transform
# ---------------------------------------------------------------------------

def _atrous(x, taps, step, axis):
    out = np.zeros_like(x)
    for j, c in enumerate(taps):
        out += c * np.roll(x, -step * j, axis=axis)
    return out


def _atrous_adjoint(x, taps, step, axis):
    out = np.zeros_like(x)
    for j, c in enumerate(taps):
        out += c * np.roll(x, step * j, axis=axis)
    return out


def _check_swt(shape, spec, levels):
    if spec.boundary != "periodic":
        raise UnsupportedBoundary("the stationary transform needs periodic boundary")
    if levels < 1:
        raise WaveletError("levels must be >= 1")
    h, w = shape[-2:]
    if h % 2 ** levels or w % 2 ** levels:
        raise BadDimensions(f"{h}x{w} is not divisible by 2**{levels}")


def swt2(img, spec=WaveletSpec(), levels=1):
    """Undecimated 2-D wavelet transform with periodic wrap-around."""
    a = np.asarray(img, dtype=np.float64)
    _check_swt(a.shape, spec, levels)
    h, g = spec.lowpass, spec.highpass
    details = []
    for level in range(1, levels + 1):
        step = 2 ** (level - 1)
        lo = _atrous(a, h, step, axis=-1)
        hi = _atrous(a, g, step, axis=-1)
        details.append((_atrous(lo, g, step, -2), _atrous(hi, h, step, -2),
                        _atrous(hi, g, step, -2)))
        a = _atrous(lo, h, step, axis=-2)
    return SwtPyramid(a, details, spec)


def iswt2(pyr):
    """Inverse of :func:`swt2`: averages the redundant reconstructions."""
    spec = pyr.spec
    a = np.asarray(pyr.approx, dtype=np.float64)
    _check_swt(a.shape, spec, pyr.levels)
    h, g = spec.lowpass, spec.highpass
    for level in range(pyr.levels, 0, -1):
        step = 2 ** (level - 1)
        hd, vd, dd = pyr.details[level - 1]
        for band in (hd, vd, dd):
            if band.shape != a.shape:
                raise ShapeMismatch(f"band shape {band.shape} != {a.shape}")
        lo = 0.5 * (_atrous_adjoint(a, h, step, -2) + _atrous_adjoint(hd, g, step, -2))
        hi = 0.5 * (_atrous_adjoint(vd, h, step, -2) + _atrous_adjoint(dd, g, step, -2))
        a = 0.5 * (_atrous_adjoint(lo, h, step, -1) + _atrous_adjoint(hi, g, step, -1))
    return a


# ---------------------------------------------------------------------------
# Thresholding
# ---------------------------------------------------------------------------

def soft_threshold(v, t):
    """``sign(v) * max(|v| - t, 0)``; works on scalars and arrays."""
    if np.any(np.asarray(t) < 0):
        raise WaveletError("threshold must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return out[()] if out.ndim == 0 else out


def hard_threshold(v, t):
    """Keep ``v`` where ``|v| >= t`` and zero it elsewhere."""
    if np.any(np.asarray(t) < 0):
        raise WaveletError("threshold must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    out = np.where(np.abs(v) >= t, v, 0.0)
    return out[()] if out.ndim == 0 else out


def estimate_noise_sigma(pyr):
    """MAD noise estimate from the finest diagonal band.

    For stacked pyramids one estimate per item is returned.
    """
    if pyr.levels < 1:
        raise WaveletError("pyramid has no detail levels")
    diag = np.abs(pyr.details[0][2])
    flat = diag.reshape(diag.shape[:-2] + (-1,))
    sigma = np.median(flat, axis=-1) / MAD_SCALE
    return float(sigma) if np.ndim(sigma) == 0 else sigma


def universal_threshold(sigma, n):
    """``sigma * sqrt(2 ln n)``."""
    if n < 1:
        raise WaveletError("n must be >= 1")
    return sigma * math.sqrt(2.0 * math.log(n))


def denoise(img, spec=WaveletSpec(), levels=2, rule=ThresholdRule(),
            backend="dwt"):
    """Decompose, shrink every detail band, reconstruct, clamp to [0, 1].

    The approximation band is left untouched.  With the universal rule the
    threshold is derived per image (per item for ``(n, h, w)`` stacks) from
    the MAD estimate and the pixel count, and the same value is used on all
    levels.
    """
    x = np.asarray(img, dtype=np.float64)
    if backend == "dwt":
        pyr = dwt2(x, spec, levels)
    elif backend == "swt":
        pyr = swt2(x, spec, levels)
    else:
        raise WaveletError(f"unknown backend {backend!r}")

    if rule.selection == "fixed":
        t = rule.value
    else:
        sigma = np.asarray(estimate_noise_sigma(pyr))
        t = universal_threshold(1.0, x.shape[-2] * x.shape[-1]) * sigma
        t = t.reshape(t.shape + (1, 1))
    shrink = soft_threshold if rule.mode == "soft" else hard_threshold
    pyr.details = [tuple(shrink(b, t) for b in bands) for bands in pyr.details]

    out = idwt2(pyr) if backend == "dwt" else iswt2(pyr)
    return np.clip(out, 0.0, 1.0)
