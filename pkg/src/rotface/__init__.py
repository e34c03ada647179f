"""Rotation-invariant pattern detection with wavelet de-noising, PCA and a GRNN."""

__version__ = "0.1.0"
