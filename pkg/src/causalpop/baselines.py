"""Logistic-regression comparison methods: LR1, LR2, and LRZ.

LR1 appends the treatment indicator to the features and fits one
classifier; LR2 fits separate classifiers on the treated and control
arms; LRZ fits one classifier on the relabeled target z = 1[y == t] and
reads the effect as 2*P(z=1|x) - 1, which is only calibrated when the
arms have (nearly) equal size.

All three share a damped-Newton fit of the ridge-penalized Bernoulli
log-likelihood.  Features are standardized per column on the training
split before fitting; the mixture model deliberately is not standardized
so its group means stay interpretable.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import Dataset, FitError, ValidationError, _frozen_array

DEFAULT_L2 = 1e-4


class BaselineKind(str, Enum):
    LR1 = "lr1"
    LR2 = "lr2"
    LRZ = "lrz"


@dataclass(frozen=True)
class LogisticModel:
    """Weights and intercept of one fitted logistic regression."""

    w: np.ndarray
    b: float
    l2: float
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen_array(self.w, np.float64))
        object.__setattr__(self, "b", float(self.b))
        if not (np.isfinite(self.w).all() and np.isfinite(self.b)):
            raise ValidationError("logistic parameters must be finite")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _penalized_loglik(features, labels, beta, l2):
    z = features @ beta[:-1] + beta[-1]
    # log sigma(z) = -log(1 + e^-z), computed stably for both signs
    ll = np.sum(np.where(labels == 1, -np.logaddexp(0.0, -z), -np.logaddexp(0.0, z)))
    return ll - 0.5 * l2 * beta @ beta


def fit_logistic(features: np.ndarray, labels: np.ndarray, l2: float = DEFAULT_L2,
                 max_iters: int = 100, grad_tol: float = 1e-8,
                 initial_step: float = 1.0) -> LogisticModel:
    """Maximize the ridge-penalized Bernoulli log-likelihood by damped Newton.

    The intercept is part of the penalized parameter vector, so the fit
    stays finite even when all labels agree.  Deterministic: parameters
    start at zero and each Newton step is halved until the objective does
    not decrease.  With ``l2 == 0`` and separable data the iteration
    cannot converge; the returned model is then flagged accordingly.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ValidationError("features must be (n, m) with matching labels")
    if features.shape[0] < 2:
        raise ValidationError("need at least two rows to fit")
    if l2 < 0.0:
        raise ValidationError("l2 must be >= 0")

    n, m = features.shape
    beta = np.zeros(m + 1)
    obj = _penalized_loglik(features, labels, beta, l2)
    converged = False
    eye = np.eye(m + 1)
    for _ in range(max_iters):
        z = features @ beta[:-1] + beta[-1]
        p = _sigmoid(z)
        resid = labels - p
        grad = np.empty(m + 1)
        grad[:-1] = features.T @ resid
        grad[-1] = resid.sum()
        grad -= l2 * beta
        if np.abs(grad).max() < grad_tol:
            converged = True
            break
        w = p * (1.0 - p)
        xw = features * w[:, None]
        hess = np.empty((m + 1, m + 1))
        hess[:-1, :-1] = features.T @ xw
        hess[:-1, -1] = xw.sum(axis=0)
        hess[-1, :-1] = hess[:-1, -1]
        hess[-1, -1] = w.sum()
        hess += l2 * eye
        try:
            direction = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        step = initial_step
        candidate = beta + step * direction
        new_obj = _penalized_loglik(features, labels, candidate, l2)
        halvings = 0
        while new_obj < obj and halvings < 40:
            step *= 0.5
            halvings += 1
            candidate = beta + step * direction
            new_obj = _penalized_loglik(features, labels, candidate, l2)
        if new_obj < obj:
            break  # no ascent direction left at this scale
        beta, obj = candidate, new_obj

    if not converged:
        warnings.warn("logistic fit did not converge; with l2=0 this usually "
                      "means the classes are perfectly separated")
    if not np.isfinite(beta).all():
        raise FitError("logistic fit diverged to non-finite weights")
    return LogisticModel(beta[:-1], beta[-1], l2, converged)


def predict_proba(x: np.ndarray, model: LogisticModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _sigmoid(x @ model.w + model.b)


def ite_lr1(x: np.ndarray, model: LogisticModel) -> float | np.ndarray:
    """Effect estimate from a single model fit on the [x, t] design.

    The treatment column is the last weight; the estimate is the predicted
    probability with the indicator switched on minus switched off.
    """
    x = np.asarray(x, dtype=np.float64)
    base = x @ model.w[:-1] + model.b
    tau = _sigmoid(base + model.w[-1]) - _sigmoid(base)
    return float(tau) if np.ndim(tau) == 0 else tau


def ite_lr2(x: np.ndarray, m1: LogisticModel, m0: LogisticModel) -> float | np.ndarray:
    """Effect estimate from separate treated (m1) and control (m0) models."""
    tau = predict_proba(x, m1) - predict_proba(x, m0)
    return float(tau) if np.ndim(tau) == 0 else tau


def class_variable_transform(t, y):
    """Relabeled target z = y*t + (1-y)*(1-t); 1 exactly when y == t."""
    t = np.asarray(t)
    y = np.asarray(y)
    z = (t == y).astype(np.int64)
    return int(z) if z.ndim == 0 else z


def ite_lrz(x: np.ndarray, model: LogisticModel) -> float | np.ndarray:
    """Effect estimate 2*P(z=1|x) - 1 from the transformed-label model."""
    tau = 2.0 * predict_proba(x, model) - 1.0
    return float(tau) if np.ndim(tau) == 0 else tau


# ---------------------------------------------------------------------------
# Dataset-level wrappers: standardization plus per-kind training/prediction.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineModel:
    """A fitted baseline: kind, training-split scaler, logistic model(s)."""

    kind: BaselineKind
    scaler_mean: np.ndarray
    scaler_scale: np.ndarray
    models: tuple[LogisticModel, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", BaselineKind(self.kind))
        object.__setattr__(self, "scaler_mean", _frozen_array(self.scaler_mean, np.float64))
        object.__setattr__(self, "scaler_scale", _frozen_array(self.scaler_scale, np.float64))
        object.__setattr__(self, "models", tuple(self.models))
        expected = 2 if self.kind is BaselineKind.LR2 else 1
        if len(self.models) != expected:
            raise ValidationError(f"{self.kind.value} needs {expected} logistic model(s)")

    @property
    def d(self) -> int:
        return self.scaler_mean.shape[0]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d:
            raise ValidationError(f"x has dimension {x.shape[-1]}, model expects {self.d}")
        return (x - self.scaler_mean) / self.scaler_scale


def _fit_scaler(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return mean, scale


def fit_baseline(data: Dataset, kind: BaselineKind | str,
                 l2: float = DEFAULT_L2) -> BaselineModel:
    """Standardize on the training data and fit the requested baseline."""
    kind = BaselineKind(kind)
    mean, scale = _fit_scaler(data.x)
    xs = (data.x - mean) / scale
    t = data.t.astype(np.float64)

    if kind is BaselineKind.LR1:
        design = np.column_stack([xs, t])
        models = (fit_logistic(design, data.y, l2),)
    elif kind is BaselineKind.LR2:
        treated = data.t == 1
        if treated.sum() < 2 or (~treated).sum() < 2:
            raise FitError("lr2 needs at least two rows in each arm")
        m1 = fit_logistic(xs[treated], data.y[treated], l2)
        m0 = fit_logistic(xs[~treated], data.y[~treated], l2)
        models = (m1, m0)
    else:
        n_t = int(data.t.sum())
        if abs(n_t - (data.n - n_t)) > 0.1 * data.n:
            warnings.warn(
                f"lrz assumes balanced arms; got {n_t} treated vs {data.n - n_t} "
                "control, the transformed-label estimate will be biased"
            )
        z = class_variable_transform(data.t, data.y)
        models = (fit_logistic(xs, z, l2),)
    return BaselineModel(kind, mean, scale, models)


def baseline_ite(model: BaselineModel, x: np.ndarray) -> np.ndarray:
    """Effect estimates for raw (unstandardized) feature rows."""
    xs = model.standardize(x)
    if model.kind is BaselineKind.LR1:
        return ite_lr1(xs, model.models[0])
    if model.kind is BaselineKind.LR2:
        return ite_lr2(xs, model.models[0], model.models[1])
    return ite_lrz(xs, model.models[0])


def baseline_to_dict(model: BaselineModel) -> dict:
    return {
        "kind": model.kind.value,
        "scaler": {"mean": model.scaler_mean.tolist(),
                   "scale": model.scaler_scale.tolist()},
        "models": [
            {"w": m.w.tolist(), "b": m.b, "l2": m.l2, "converged": m.converged}
            for m in model.models
        ],
    }


def baseline_from_dict(obj: dict) -> BaselineModel:
    kind = BaselineKind(obj["kind"])
    models = tuple(
        LogisticModel(np.array(m["w"]), m["b"], m["l2"], m.get("converged", True))
        for m in obj["models"]
    )
    return BaselineModel(kind, np.array(obj["scaler"]["mean"]),
                         np.array(obj["scaler"]["scale"]), models)


def save_baseline(model: BaselineModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(baseline_to_dict(model), indent=2) + "\n",
                          encoding="utf-8")


def load_baseline(path: str | Path) -> BaselineModel:
    return baseline_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
