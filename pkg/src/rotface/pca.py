"""Principal components analysis for patch vectors.

Eigenvectors come from a cyclic Jacobi solver applied either to the sample
covariance (``d <= m``) or, when samples are fewer than dimensions, to the
``m x m`` Gram matrix of the centred samples followed by back-projection
(the usual eigenface shortcut).
"""

from dataclasses import dataclass
import math

import numpy as np

DEFAULT_VARIANCE = 0.95
DEFAULT_MAX_K = 40


class PcaError(ValueError):
    pass


class RankTooHigh(PcaError):
    pass


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps visit ``(p, q)`` pairs in row order and stop once the Frobenius
    norm of the off-diagonal part drops below ``tol * max(1, ||a||_F)``.
    Returns ``(values, vectors)`` with eigenvalues sorted descending and
    eigenvectors in the columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise PcaError("jacobi_eigh needs a square matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(a)))
    limit = tol * scale
    # if every |a_pq| is below this the off-diagonal norm is below ``limit``
    skip = limit / max(n, 1)

    def off_norm():
        return float(np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0)))

    for _ in range(max_sweeps):
        if off_norm() < limit:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], v[:, order]


def fix_signs(basis):
    """Flip columns so each one's largest-magnitude entry is positive."""
    basis = np.array(basis, dtype=np.float64)
    if basis.size == 0:
        return basis
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float

    @property
    def d(self):
        return self.basis.shape[0]

    @property
    def k(self):
        return self.basis.shape[1]

    def transform(self, x):
        return transform(self, x)

    def inverse_transform(self, y):
        return inverse_transform(self, y)


def choose_k(eigenvalues, total_variance, variance=DEFAULT_VARIANCE,
             max_k=DEFAULT_MAX_K):
    """Smallest k whose cumulative explained variance reaches ``variance``."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    cap = max(1, min(max_k, len(lam)))
    if total_variance <= 0:
        return 1
    cum = np.cumsum(lam) / total_variance
    hits = np.nonzero(cum >= variance - 1e-12)[0]
    k = int(hits[0]) + 1 if len(hits) else len(lam)
    return min(k, cap)


def _complete_basis(basis, good, d):
    """Replace unusable columns by canonical directions orthogonal to the rest."""
    cols = [basis[:, i] for i in range(basis.shape[1]) if good[i]]
    need = basis.shape[1] - len(cols)
    e = 0
    while need and e < d:
        u = np.zeros(d)
        u[e] = 1.0
        for c in cols:
            u -= (c @ u) * c
        norm = np.linalg.norm(u)
        if norm > 1e-8:
            cols.append(u / norm)
            need -= 1
        e += 1
    return np.column_stack(cols)


def fit(samples, k=None, variance=DEFAULT_VARIANCE, max_k=DEFAULT_MAX_K,
        method="auto"):
    """Fit a PCA model to the rows of ``samples``.

    Parameters
    ----------
    samples : array of shape (m, d)
    k : int, optional
        Number of components.  When omitted, the smallest k explaining
        ``variance`` of the total variance is used, capped at ``max_k``.
    method : {"auto", "covariance", "gram"}
        ``auto`` picks the Gram formulation when ``d > m``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise PcaError("samples must be a 2-D array")
    m, d = x.shape
    if m < 2:
        raise PcaError("PCA needs at least two samples")
    rank = min(d, m - 1)
    if k is not None and not 1 <= k <= rank:
        raise RankTooHigh(f"k={k} outside 1..{rank}")
    if method == "auto":
        method = "gram" if d > m else "covariance"

    mean = x.mean(axis=0)
    xc = x - mean
    total = float(np.sum(xc * xc) / (m - 1))
    tiny = 1e-12 * max(total, 1e-300)

    if method == "covariance":
        values, vectors = jacobi_eigh(xc.T @ xc / (m - 1))
        values, vectors = values[:rank], vectors[:, :rank]
    elif method == "gram":
        mu, u = jacobi_eigh(xc @ xc.T / (m - 1))
        mu, u = mu[:rank], u[:, :rank]
        vectors = xc.T @ u
        norms = np.linalg.norm(vectors, axis=0)
        good = mu > tiny
        vectors = vectors / np.where(good, norms, 1.0)
        if not good.all():
            vectors = _complete_basis(vectors, good, d)
        values = mu
    else:
        raise PcaError(f"unknown method {method!r}")

    values = np.where(values > tiny, values, 0.0)
    if k is None:
        k = choose_k(values, total, variance, max_k)
    basis = fix_signs(vectors[:, :k])
    return PcaModel(mean=mean, basis=basis, eigenvalues=values[:k].copy(),
                    total_variance=total)


def transform(model, x):
    """Project ``x`` (a d-vector or an ``(n, d)`` stack) onto the basis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.d:
        raise PcaError(f"expected vectors of length {model.d}, got {x.shape[-1]}")
    return (x - model.mean) @ model.basis


def inverse_transform(model, y):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != model.k:
        raise PcaError(f"expected vectors of length {model.k}, got {y.shape[-1]}")
    return y @ model.basis.T + model.mean


def explained_variance_ratio(model):
    if model.total_variance <= 0:
        return np.zeros(model.k)
    return model.eigenvalues / model.total_variance
