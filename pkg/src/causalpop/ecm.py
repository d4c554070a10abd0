"""Constrained EM for the four causal populations.

The fitting loop alternates three steps: an expectation step computing
the unconstrained posterior over the four groups, a causality step that
zeroes the two groups incompatible with each row's observed (t, y) and
renormalizes, and a maximization step refitting mixing weights and
Gaussian parameters from the constrained responsibilities.  Because
zero-and-renormalize applied to the posterior *is* the constrained
argmax of the evidence lower bound over row distributions, the recorded
ELBO sequence is non-decreasing.

Responsibilities are initialized with probability 1/2 on each of the two
admissible groups, and the first M-step turns that into the starting
parameters.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels
from .core import (
    ADMISSIBLE_PAIRS,
    CausalGroup,
    Dataset,
    FitError,
    FitMeta,
    GaussianComponent,
    Individual,
    MixtureModel,
    ValidationError,
    admissible_groups,
    potential_outcomes,
    uniform_admissible,
)

_LOG_2PI = math.log(2.0 * math.pi)

# a group whose total responsibility falls below this keeps its previous
# parameters in the M-step instead of refitting from noise
EMPTY_GROUP_MASS = 1e-10


class IteMode(str, Enum):
    """How the individual effect is read off the posterior memberships.

    MODEL_CONSISTENT returns l_R(x) - l_A(x): inside the model, the
    outcome-rate factors are pi_R + pi_S and pi_S + pi_A and cancel
    against the posterior decomposition, which keeps the estimate in
    [-1, 1].  LITERAL_EQ1 keeps the empirical rate factors explicit:
    (l_R + l_S) * p1_hat - (l_S + l_A) * p0_hat.
    """

    MODEL_CONSISTENT = "model_consistent"
    LITERAL_EQ1 = "literal_eq1"


@dataclass(frozen=True)
class EcmConfig:
    """Fitting-loop knobs; defaults suit the bundled generators."""

    max_iters: int = 200
    tol: float = 1e-6
    cov_reg: float = 1e-6
    min_pi: float = 1e-8
    ite_mode: IteMode = IteMode.MODEL_CONSISTENT
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not self.tol > 0.0:
            raise ValidationError("tol must be positive")
        if self.cov_reg < 0.0:
            raise ValidationError("cov_reg must be >= 0")
        if not 0.0 <= self.min_pi < 0.25:
            raise ValidationError("min_pi must lie in [0, 0.25)")
        object.__setattr__(self, "ite_mode", IteMode(self.ite_mode))


@dataclass
class FitTrace:
    """Per-iteration diagnostics; index 0 is the post-initialization state."""

    elbo: list[float] = field(default_factory=list)
    loglik: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    underflow_rows: list[int] = field(default_factory=list)
    empty_groups: list[int] = field(default_factory=list)

    def append(self, elbo: float, loglik: float, seconds: float,
               underflow: int, empty: int) -> None:
        self.elbo.append(elbo)
        self.loglik.append(loglik)
        self.seconds.append(seconds)
        self.underflow_rows.append(underflow)
        self.empty_groups.append(empty)

    @property
    def n_iters(self) -> int:
        return len(self.elbo)


def _density_context(model: MixtureModel):
    """Stacked means, Cholesky factors, and log normalizers for the kernels."""
    d = model.d
    means = np.stack([c.mu for c in model.components])
    chols = np.empty((4, d, d))
    log_norms = np.empty(4)
    for k, comp in enumerate(model.components):
        try:
            L = np.linalg.cholesky(comp.sigma)
        except np.linalg.LinAlgError:
            raise FitError(
                f"covariance of group {CausalGroup(k).letter} is not positive definite"
            )
        chols[k] = L
        log_norms[k] = -0.5 * d * _LOG_2PI - np.log(np.diag(L)).sum()
    return means, chols, log_norms


def _log_joint(x: np.ndarray, model: MixtureModel) -> np.ndarray:
    """(n, 4) matrix of log pi_k + log f_k(x_i)."""
    means, chols, log_norms = _density_context(model)
    logf = _kernels.log_density_matrix(np.ascontiguousarray(x), means, chols, log_norms)
    with np.errstate(divide="ignore"):
        log_pi = np.where(model.pi > 0.0, np.log(model.pi), -np.inf)
    return logf + log_pi


def _softmax_rows(logw: np.ndarray) -> np.ndarray:
    m = logw.max(axis=1, keepdims=True)
    stable = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(logw - stable)
    return e / e.sum(axis=1, keepdims=True)


def gaussian_logpdf(x: np.ndarray, component: GaussianComponent) -> float:
    """Log multivariate normal density of one point under one component."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (component.d,):
        raise ValidationError(f"x must have dimension {component.d}")
    L = component.cholesky()
    z = np.linalg.solve(L, x - component.mu)
    return float(-0.5 * component.d * _LOG_2PI - np.log(np.diag(L)).sum() - 0.5 * z @ z)


def e_step(data: Dataset, model: MixtureModel) -> np.ndarray:
    """Unconstrained posterior responsibilities, one row per individual.

    Computed in log space with max subtraction.  Rows where every group's
    log weight is non-finite fall back to the uniform-over-admissible
    distribution.
    """
    q, _ = _e_step_impl(data, model)
    return q


def _e_step_impl(data: Dataset, model: MixtureModel) -> tuple[np.ndarray, int]:
    logw = _log_joint(data.x, model)
    dead = ~np.isfinite(logw.max(axis=1))
    n_dead = int(dead.sum())
    with np.errstate(invalid="ignore"):
        q = _softmax_rows(logw)
    if n_dead:
        q[dead] = uniform_admissible(data.t[dead], data.y[dead])
    return q, n_dead


def c_step(q: np.ndarray, data: Dataset) -> np.ndarray:
    """Project responsibilities onto the causality constraints.

    The two forbidden entries per row become exact zeros; the admissible
    pair is renormalized (1/2 each if both were zero).
    """
    pairs = ADMISSIBLE_PAIRS[data.t, data.y]
    return _kernels.constrain_rows(np.ascontiguousarray(q, dtype=np.float64),
                                   np.ascontiguousarray(pairs))


def _floor_pi(pi_raw: np.ndarray, min_pi: float) -> np.ndarray:
    pi = pi_raw / pi_raw.sum()
    if min_pi > 0.0 and (pi < min_pi).any():
        pi = np.maximum(pi, min_pi)
        pi = pi / pi.sum()
    return pi


def m_step(data: Dataset, q: np.ndarray, cfg: EcmConfig,
           prev: MixtureModel | None = None) -> MixtureModel:
    """Refit mixing weights, Gaussian parameters, and arm outcome rates.

    A group with total responsibility below ``EMPTY_GROUP_MASS`` keeps its
    previous parameters (or the global moments when there is no previous
    model yet) and triggers a warning.
    """
    x = np.ascontiguousarray(data.x)
    nk, means, covs = _kernels.weighted_moments(x, np.ascontiguousarray(q, dtype=np.float64))
    pi = _floor_pi(nk, cfg.min_pi)

    reg = cfg.cov_reg * np.eye(data.d)
    components = []
    empty = nk < EMPTY_GROUP_MASS
    if empty.any():
        letters = "".join(CausalGroup(int(k)).letter for k in np.nonzero(empty)[0])
        warnings.warn(f"group(s) {letters} received no responsibility; keeping previous parameters")
        global_mu = x.mean(axis=0)
        diff = x - global_mu
        global_cov = diff.T @ diff / data.n
    for k in range(4):
        if empty[k]:
            if prev is not None:
                components.append(prev.components[k])
                continue
            mu, cov = global_mu, global_cov
        else:
            mu, cov = means[k], covs[k]
        try:
            components.append(GaussianComponent(mu, cov + reg))
        except ValidationError:
            raise FitError(
                f"covariance of group {CausalGroup(k).letter} is not positive "
                f"definite even after adding cov_reg={cfg.cov_reg:g}"
            )

    treated = data.t == 1
    p1_hat = float(data.y[treated].mean()) if treated.any() else None
    p0_hat = float(data.y[~treated].mean()) if (~treated).any() else None
    meta = prev.meta if prev is not None else FitMeta(seed=cfg.seed, ite_mode=cfg.ite_mode.value)
    return MixtureModel(pi, components, p1_hat, p0_hat, meta)


def log_likelihood(data: Dataset, model: MixtureModel) -> float:
    """Observed-data log-likelihood sum_i log sum_k pi_k f_k(x_i)."""
    logw = _log_joint(data.x, model)
    m = logw.max(axis=1)
    return float(np.sum(m + np.log(np.exp(logw - m[:, None]).sum(axis=1))))


def elbo(data: Dataset, q: np.ndarray, model: MixtureModel) -> float:
    """Evidence lower bound of (q, model); 0 * log 0 is treated as 0.

    Equals the observed log-likelihood exactly when q is the
    unconstrained posterior, and never exceeds it.
    """
    logw = _log_joint(data.x, model)
    q = np.asarray(q, dtype=np.float64)
    pos = q > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, q * (logw - np.log(np.where(pos, q, 1.0))), 0.0)
    return float(terms.sum())


def fit(data: Dataset, cfg: EcmConfig | None = None) -> tuple[MixtureModel, np.ndarray, FitTrace]:
    """Run the constrained EM loop until the ELBO improvement drops below tol.

    Returns the fitted model, the final constrained responsibilities, and
    the per-iteration trace.  Deterministic for fixed (data, cfg).
    """
    cfg = cfg if cfg is not None else EcmConfig()
    if data.n < 8:
        warnings.warn(f"fitting on only {data.n} rows; estimates will be unstable")
    treated = int((data.t == 1).sum())
    if cfg.ite_mode is IteMode.LITERAL_EQ1 and (treated == 0 or treated == data.n):
        raise FitError("literal_eq1 mode needs both treated and control rows "
                       "to estimate the outcome rates")

    trace = FitTrace()
    tic = time.perf_counter()
    q = uniform_admissible(data.t, data.y)
    model = m_step(data, q, cfg, prev=None)
    cur = elbo(data, q, model)
    trace.append(cur, log_likelihood(data, model), time.perf_counter() - tic,
                 0, int((q.sum(axis=0) < EMPTY_GROUP_MASS).sum()))

    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        tic = time.perf_counter()
        post, n_under = _e_step_impl(data, model)
        q = c_step(post, data)
        model = m_step(data, q, cfg, prev=model)
        new = elbo(data, q, model)
        trace.append(new, log_likelihood(data, model), time.perf_counter() - tic,
                     n_under, int((q.sum(axis=0) < EMPTY_GROUP_MASS).sum()))
        if new - cur < cfg.tol:
            converged = True
            cur = new
            break
        cur = new

    meta = FitMeta(iters=iters, elbo=cur, converged=converged,
                   seed=cfg.seed, ite_mode=cfg.ite_mode.value)
    model = replace(model, meta=meta)
    return model, q, trace


def posterior_membership(x: np.ndarray, model: MixtureModel) -> np.ndarray:
    """Membership probabilities l(x) over the four groups.

    Accepts a single feature vector (d,) or a batch (n, d) and returns a
    matching (4,) vector or (n, 4) matrix; rows sum to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.d:
        raise ValidationError(f"x has dimension {x.shape[1]}, model expects {model.d}")
    l = _softmax_rows(_log_joint(x, model))
    return l[0] if single else l


def estimate_ite(x: np.ndarray, model: MixtureModel,
                 mode: IteMode | str | None = None) -> float | np.ndarray:
    """Individual treatment effect at x (scalar for a single vector).

    See :class:`IteMode` for the two read-outs.  The model-consistent
    estimate l_R - l_A always lies in [-1, 1].
    """
    if mode is None:
        mode = model.meta.ite_mode
    mode = IteMode(mode)
    l = posterior_membership(x, model)
    lT = l.T  # works for both (4,) and (n, 4)
    if mode is IteMode.MODEL_CONSISTENT:
        tau = lT[0] - lT[3]
    else:
        if model.p1_hat is None or model.p0_hat is None:
            raise FitError("literal_eq1 mode requires p1_hat and p0_hat; "
                           "the training data lacked one arm")
        tau = (lT[0] + lT[2]) * model.p1_hat - (lT[2] + lT[3]) * model.p0_hat
    return float(tau) if np.ndim(tau) == 0 else tau


def predict_counterfactual(ind: Individual, model: MixtureModel) -> int:
    """Most likely counterfactual outcome Y(1 - t) for one individual.

    The posterior is restricted to the two groups admissible under the
    observed (t, y); ties go to the lower canonical index.
    """
    l = posterior_membership(ind.x, model)
    a, b = admissible_groups(ind.t, ind.y)
    group = a if l[a.value] >= l[b.value] else b
    y1, y0 = potential_outcomes(group)
    return y0 if ind.t == 1 else y1


def predict_counterfactuals(data: Dataset, model: MixtureModel) -> np.ndarray:
    """Vectorized :func:`predict_counterfactual` over a dataset."""
    l = posterior_membership(data.x, model)
    pairs = ADMISSIBLE_PAIRS[data.t, data.y]
    rows = np.arange(data.n)
    first = l[rows, pairs[:, 0]] >= l[rows, pairs[:, 1]]
    group = np.where(first, pairs[:, 0], pairs[:, 1])
    table = np.array([potential_outcomes(CausalGroup(k)) for k in range(4)], dtype=np.int64)
    return np.where(data.t == 1, table[group, 1], table[group, 0])


# ---------------------------------------------------------------------------
# JSON serialization.  Floats go through Python's repr, which round-trips
# float64 exactly; the "kind" discriminator lets mixture and baseline
# models share one loader.
# ---------------------------------------------------------------------------

def model_to_dict(model: MixtureModel) -> dict:
    return {
        "kind": "ecm",
        "pi": model.pi.tolist(),
        "components": [
            {"mu": c.mu.tolist(), "sigma": c.sigma.tolist()} for c in model.components
        ],
        "p1_hat": model.p1_hat,
        "p0_hat": model.p0_hat,
        "meta": {
            "iters": model.meta.iters,
            "elbo": model.meta.elbo,
            "converged": model.meta.converged,
            "seed": model.meta.seed,
            "ite_mode": model.meta.ite_mode,
        },
    }


def model_from_dict(obj: dict) -> MixtureModel:
    if obj.get("kind", "ecm") != "ecm":
        raise ValidationError(f"expected an ecm model, got kind={obj.get('kind')!r}")
    meta_obj = obj.get("meta", {})
    meta = FitMeta(
        iters=int(meta_obj.get("iters", 0)),
        elbo=meta_obj.get("elbo"),
        converged=bool(meta_obj.get("converged", False)),
        seed=int(meta_obj.get("seed", 0)),
        ite_mode=IteMode(meta_obj.get("ite_mode", "model_consistent")).value,
    )
    components = tuple(
        GaussianComponent(np.array(c["mu"]), np.array(c["sigma"]))
        for c in obj["components"]
    )
    return MixtureModel(np.array(obj["pi"]), components,
                        obj.get("p1_hat"), obj.get("p0_hat"), meta)


def save_model(model: MixtureModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n",
                          encoding="utf-8")


def load_model(path: str | Path) -> MixtureModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_trace_csv(trace: FitTrace, path: str | Path) -> None:
    """Trace as CSV (iteration, elbo, loglik); row 0 is the initialization."""
    lines = ["iteration,elbo,loglik"]
    for i, (e, ll) in enumerate(zip(trace.elbo, trace.loglik)):
        lines.append(f"{i},{format(e, '.17g')},{format(ll, '.17g')}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
