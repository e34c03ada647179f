"""Backpropagation baseline: a one-hidden-layer MLP trained with iRprop-.

The network regresses angles normalised to [-1, 1] (degrees / 90) with a
tanh hidden layer and a linear output.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

log = logging.getLogger(__name__)

ANGLE_SCALE = 90.0


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class RpropConfig:
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.1
    delta_min: float = 1e-6
    delta_max: float = 50.0
    max_epochs: int = 2000
    target_mse: float = 0.01

    def __post_init__(self):
        if not 0 < self.eta_minus < 1 < self.eta_plus:
            raise ValueError("need 0 < eta_minus < 1 < eta_plus")
        if not 0 < self.delta_min <= self.delta0 <= self.delta_max:
            raise ValueError("need 0 < delta_min <= delta0 <= delta_max")


@dataclass(frozen=True)
class MlpModel:
    w1: np.ndarray  # (h, k)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float

    @property
    def sizes(self):
        return (self.w1.shape[1], self.w1.shape[0], 1)

    def params(self):
        return [self.w1, self.b1, self.w2, np.array(self.b2)]


def mlp_init(k, h=10, seed=0):
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights from a seeded PCG64."""
    if k < 1 or h < 1:
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    a1, a2 = 1.0 / np.sqrt(k), 1.0 / np.sqrt(h)
    return MlpModel(
        w1=rng.uniform(-a1, a1, size=(h, k)),
        b1=rng.uniform(-a1, a1, size=h),
        w2=rng.uniform(-a2, a2, size=h),
        b2=float(rng.uniform(-a2, a2)),
    )


def mlp_forward(model, inputs):
    """Network output in normalised units for an ``(m, k)`` batch."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    return np.tanh(x @ model.w1.T + model.b1) @ model.w2 + model.b2


def mlp_predict_degrees(model, inputs):
    return mlp_forward(model, inputs) * ANGLE_SCALE


def mse(model, inputs, targets):
    r = mlp_forward(model, inputs) - np.asarray(targets, dtype=np.float64)
    return float(np.mean(r * r))


def mlp_gradient(model, inputs, targets):
    """Exact gradient of the batch mean-squared error.

    Returns an :class:`MlpModel` holding the partial derivatives.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    t = np.asarray(targets, dtype=np.float64).ravel()
    m = x.shape[0]
    hidden = np.tanh(x @ model.w1.T + model.b1)
    out = hidden @ model.w2 + model.b2
    dout = 2.0 * (out - t) / m
    gw2 = hidden.T @ dout
    gb2 = float(dout.sum())
    dpre = np.outer(dout, model.w2) * (1.0 - hidden * hidden)
    gw1 = dpre.T @ x
    gb1 = dpre.sum(axis=0)
    return MlpModel(w1=gw1, b1=gb1, w2=gw2, b2=gb2)


def _flatten(model):
    return np.concatenate([model.w1.ravel(), model.b1, model.w2, [model.b2]])


def _unflatten(vec, like):
    h, k = like.w1.shape
    i = h * k
    return MlpModel(w1=vec[:i].reshape(h, k).copy(), b1=vec[i:i + h].copy(),
                    w2=vec[i + h:i + 2 * h].copy(), b2=float(vec[-1]))


@dataclass
class TrainResult:
    model: MlpModel
    history: list = field(default_factory=list)
    epochs: int = 0
    converged: bool = False
    step_bounds: tuple = (np.inf, -np.inf)


def rprop_train(model, inputs, targets, cfg=RpropConfig()):
    """Full-batch iRprop- training on normalised targets.

    ``history`` holds the MSE measured at the start of every epoch plus the
    final value, so ``history[0]`` is the untrained error.  Training stops
    once the MSE reaches ``cfg.target_mse`` or after ``cfg.max_epochs``
    weight updates.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    t = np.asarray(targets, dtype=np.float64).ravel()
    w = _flatten(model)
    steps = np.full_like(w, cfg.delta0)
    prev = np.zeros_like(w)
    lo, hi = np.inf, -np.inf
    current = model
    history = [mse(current, x, t)]
    epoch = 0
    while history[-1] > cfg.target_mse and epoch < cfg.max_epochs:
        g = _flatten(mlp_gradient(current, x, t))
        prod = g * prev
        steps = np.where(prod > 0, np.minimum(steps * cfg.eta_plus, cfg.delta_max), steps)
        steps = np.where(prod < 0, np.maximum(steps * cfg.eta_minus, cfg.delta_min), steps)
        g = np.where(prod < 0, 0.0, g)
        w = w - np.sign(g) * steps
        prev = g
        lo, hi = min(lo, steps.min()), max(hi, steps.max())
        epoch += 1
        current = _unflatten(w, model)
        err = mse(current, x, t)
        if not np.isfinite(err) or not np.all(np.isfinite(w)):
            raise TrainingDiverged(f"non-finite error at epoch {epoch}")
        history.append(err)
    log.debug("rprop stopped after %d epochs, mse %.4g", epoch, history[-1])
    return TrainResult(model=current, history=history, epochs=epoch,
                       converged=history[-1] <= cfg.target_mse,
                       step_bounds=(lo, hi))
