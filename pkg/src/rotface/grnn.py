"""Generalized regression neural network (Gaussian kernel regression).

Training stores the centres and their angle targets; prediction is the
kernel-weighted mean of the targets.  Alongside the value, ``density`` (the
mean kernel mass) says how close the query is to the training data and is
what the detector thresholds on.
"""

from dataclasses import dataclass

import numpy as np

UNDERFLOW = 1e-300
SPREAD_GRID = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0)


class GrnnError(ValueError):
    pass


class EmptyTrainingSet(GrnnError):
    pass


class TargetOutOfRange(GrnnError):
    pass


class NonPositiveSpread(GrnnError):
    pass


class DimensionMismatch(GrnnError):
    pass


class TooFewSamples(GrnnError):
    pass


@dataclass(frozen=True)
class GrnnModel:
    centers: np.ndarray
    targets: np.ndarray
    spread: float

    @property
    def m(self):
        return self.centers.shape[0]

    @property
    def k(self):
        return self.centers.shape[1]


@dataclass(frozen=True)
class Prediction:
    value: float
    density: float


def _validate(centers, targets, spread):
    c = np.array(centers, dtype=np.float64)
    t = np.array(targets, dtype=np.float64).ravel()
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] == 0:
        raise EmptyTrainingSet("GRNN needs at least one training sample")
    if c.ndim != 2 or c.shape[0] != t.shape[0]:
        raise DimensionMismatch(
            f"{c.shape[0]} centres but {t.shape[0]} targets")
    if np.any(np.abs(t) > 90.0) or not np.all(np.isfinite(t)):
        raise TargetOutOfRange("targets must lie in [-90, 90] degrees")
    if not spread > 0:
        raise NonPositiveSpread(f"spread must be positive, got {spread}")
    return c, t


def fit(centers, targets, spread):
    """Store the training set; there is no iterative optimisation."""
    c, t = _validate(centers, targets, spread)
    c.setflags(write=False)
    t.setflags(write=False)
    return GrnnModel(centers=c, targets=t, spread=float(spread))


def _sq_dists(x, c):
    # explicit differences: exact zero at a centre, no cancellation
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def predict_batch(model, x):
    """Vectorised prediction for an ``(n, k)`` array of queries.

    Returns ``(values, densities)``.  Queries whose total kernel mass
    underflows fall back to the target of the nearest centre (lowest index
    on ties) and report zero density.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.k:
        raise DimensionMismatch(f"expected {model.k} features, got {x.shape[1]}")
    d2 = _sq_dists(x, model.centers)
    w = np.exp(-d2 / (2.0 * model.spread ** 2))
    total = w.sum(axis=1)
    ok = total >= UNDERFLOW
    values = np.empty(len(x))
    values[ok] = (w[ok] @ model.targets) / total[ok]
    if not ok.all():
        nearest = np.argmin(d2[~ok], axis=1)
        values[~ok] = model.targets[nearest]
    values = np.clip(values, model.targets.min(), model.targets.max())
    density = np.where(ok, total / model.m, 0.0)
    return values, density


def predict(model, x):
    x = np.asarray(x, dtype=np.float64).ravel()
    values, density = predict_batch(model, x[None, :])
    return Prediction(float(values[0]), float(density[0]))


def loo_predictions(centers, targets, spread):
    """Leave-one-out values and densities (density normalised by ``m - 1``)."""
    c, t = _validate(centers, targets, spread)
    m = len(t)
    if m < 2:
        raise TooFewSamples("leave-one-out needs at least two samples")
    d2 = _sq_dists(c, c)
    w = np.exp(-d2 / (2.0 * spread ** 2))
    np.fill_diagonal(w, 0.0)
    total = w.sum(axis=1)
    ok = total >= UNDERFLOW
    values = np.empty(m)
    values[ok] = (w[ok] @ t) / total[ok]
    if not ok.all():
        np.fill_diagonal(d2, np.inf)
        values[~ok] = t[np.argmin(d2[~ok], axis=1)]
    return values, np.where(ok, total / (m - 1), 0.0)


def median_pairwise_distance(centers):
    c = np.asarray(centers, dtype=np.float64)
    iu = np.triu_indices(len(c), k=1)
    d = np.sqrt(_sq_dists(c, c)[iu])
    return float(np.median(d)) if len(d) else 0.0


def select_spread(centers, targets, grid=None):
    """Pick the spread with the lowest leave-one-out mean absolute error.

    ``grid`` defaults to fixed multiples of the median pairwise distance
    between centres.  Ties go to the smaller spread.
    """
    c = np.asarray(centers, dtype=np.float64)
    if len(c) < 3:
        raise TooFewSamples("spread selection needs at least three samples")
    if grid is None:
        scale = median_pairwise_distance(c) or 1.0
        grid = [g * scale for g in SPREAD_GRID]
    grid = sorted(float(g) for g in grid)
    t = np.asarray(targets, dtype=np.float64).ravel()
    best, best_err = None, np.inf
    for s in grid:
        values, _ = loo_predictions(c, t, s)
        err = float(np.mean(np.abs(values - t)))
        if err < best_err:
            best, best_err = s, err
    return best
