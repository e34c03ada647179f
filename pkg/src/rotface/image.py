"""Grayscale image handling: PGM I/O and patch geometry.

Images are 2-D ``float64`` arrays indexed ``[row, col]`` (``[y, x]``) with
values in [0, 1].  Every function returns a new array and never mutates
its input.
"""

import math
import re

import numpy as np


class ImageError(ValueError):
    """Base class for image-level errors."""


class BadMagic(ImageError):
    pass


class Truncated(ImageError):
    pass


class BadMaxval(ImageError):
    pass


class OutOfBounds(ImageError, IndexError):
    pass


def as_image(a):
    """Validate ``a`` as an image and return it as a float64 array."""
    img = np.asarray(a, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError(f"expected a non-empty 2-D array, got shape {img.shape}")
    if not np.all((img >= 0.0) & (img <= 1.0)):
        raise ImageError("pixel values must lie in [0, 1]")
    return img


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data, count, pos):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    tokens = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise Truncated("incomplete PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def load_pgm(data):
    """Parse a P2 (ASCII) or P5 (binary) PGM byte string.

    Returns an image scaled to [0, 1] by the header's maxval.
    """
    data = bytes(data)
    if data[:2] not in (b"P2", b"P5"):
        raise BadMagic(f"not a PGM file (magic {data[:2]!r})")
    binary = data[:2] == b"P5"
    tokens, pos = _header_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageError(f"malformed PGM header: {tokens!r}") from exc
    if width < 1 or height < 1:
        raise ImageError(f"invalid PGM dimensions {width}x{height}")
    if maxval <= 0 or maxval > 65535:
        raise BadMaxval(f"maxval must be in 1..65535, got {maxval}")
    n = width * height

    if binary:
        # exactly one whitespace byte separates maxval from the raster
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise Truncated("missing raster after PGM header")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raster = data[pos:pos + n * dtype.itemsize]
        if len(raster) < n * dtype.itemsize:
            raise Truncated(f"expected {n} pixels, file is short")
        values = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    else:
        fields = data[pos:].split()
        if len(fields) < n:
            raise Truncated(f"expected {n} pixels, found {len(fields)}")
        values = np.array([int(f) for f in fields[:n]], dtype=np.float64)

    if np.any(values > maxval):
        raise ImageError("pixel value exceeds maxval")
    return (values / maxval).reshape(height, width)


def save_pgm(img, maxval=255):
    """Encode an image as binary P5 with ``round(p * maxval)`` samples."""
    if not 1 <= maxval <= 255:
        raise ValueError("maxval must be in 1..255")
    img = as_image(img)
    h, w = img.shape
    raster = np.rint(img * maxval).astype(np.uint8)
    return b"P5\n%d %d\n%d\n" % (w, h, maxval) + raster.tobytes()


def read_pgm(path):
    with open(path, "rb") as fh:
        return load_pgm(fh.read())


def write_pgm(path, img, maxval=255):
    with open(path, "wb") as fh:
        fh.write(save_pgm(img, maxval))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def crop(img, x, y, w, h):
    """Return the ``w`` x ``h`` block whose top-left corner is (x, y)."""
    img = np.asarray(img, dtype=np.float64)
    height, width = img.shape
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
        raise OutOfBounds(
            f"crop ({x}, {y}, {w}, {h}) outside {width}x{height} image")
    return img[y:y + h, x:x + w].copy()


def _sample_axis(n_in, n_out):
    # pixel centres at (i + 0.5) / n on both grids
    u = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    u = np.clip(u, 0.0, n_in - 1)
    i0 = np.floor(u).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, u - i0


def resize(img, w, h):
    """Bilinear resize to ``w`` x ``h`` using the pixel-centre convention."""
    if w < 1 or h < 1:
        raise ValueError("target size must be positive")
    img = np.asarray(img, dtype=np.float64)
    if img.shape == (h, w):
        return img.copy()
    x0, x1, fx = _sample_axis(img.shape[1], w)
    y0, y1, fy = _sample_axis(img.shape[0], h)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return np.clip(out, 0.0, 1.0)


def _cos_sin(angle_deg):
    # exact values on the axes so quarter turns are pure index permutations
    q, r = divmod(angle_deg, 90.0)
    if r == 0.0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    t = math.radians(angle_deg)
    return math.cos(t), math.sin(t)


def bilinear_sample(img, xs, ys, fill=0.0):
    """Sample ``img`` at real coordinates; points off the image get ``fill``.

    Coordinates within 1e-9 of the border are snapped onto it.
    """
    h, w = img.shape
    eps = 1e-9
    inside = (xs >= -eps) & (xs <= w - 1 + eps) & (ys >= -eps) & (ys <= h - 1 + eps)
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    val = ((img[y0, x0] * (1 - fx) + img[y0, x1] * fx) * (1 - fy)
           + (img[y1, x0] * (1 - fx) + img[y1, x1] * fx) * fy)
    return np.where(inside, val, fill)


def rotate(img, angle_deg, fill=0.0):
    """Rotate about the image centre by ``angle_deg``, clockwise positive.

    The clockwise sense is as displayed (rows grow downward).  Each output
    pixel is inverse-mapped into the source and sampled bilinearly; samples
    that fall outside the source take ``fill``.
    """
    if not -180.0 <= angle_deg <= 180.0:
        raise ValueError("angle must be within [-180, 180] degrees")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    c, s = _cos_sin(float(angle_deg))
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    xs = c * dx + s * dy + cx
    ys = -s * dx + c * dy + cy
    return bilinear_sample(img, xs, ys, fill)


def normalize_patch(patch):
    """Flatten row-major and standardise to zero mean, unit variance.

    Near-constant patches (std < 1e-8) map to the zero vector.
    """
    v = np.asarray(patch, dtype=np.float64).ravel()
    v = v - v.mean()
    std = np.sqrt(np.mean(v * v))
    if std < 1e-8:
        return np.zeros_like(v)
    return v / std


def normalize_batch(patches):
    """Row-wise :func:`normalize_patch` for an ``(n, h, w)`` or ``(n, d)`` stack."""
    v = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    v = v - v.mean(axis=1, keepdims=True)
    std = np.sqrt(np.mean(v * v, axis=1, keepdims=True))
    degenerate = std < 1e-8
    out = v / np.where(degenerate, 1.0, std)
    out[degenerate[:, 0]] = 0.0
    return out
