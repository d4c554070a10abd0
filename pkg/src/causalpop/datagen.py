"""Synthetic data with analytic ground truth, and the semi-synthetic loader.

The synthetic generator draws each individual's group from the true
mixing weights, features from that group's Gaussian, and the treatment
at random (optionally confounded on the features).  Outcomes are then
deterministic given the group, so the oracle block carries the exact
group label, both potential outcomes, and the analytic conditional
effect P(R|x) - P(A|x).

The semi-synthetic loader reads the community-standard column layout
``t, y_factual, y_cfactual, mu0, mu1, x1..x25`` where both potential
outcomes are available by construction; continuous outcomes are
binarized by a configurable threshold policy.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .core import (
    CausalGroup,
    Dataset,
    FitMeta,
    GaussianComponent,
    MixtureModel,
    Oracle,
    ValidationError,
    _frozen_array,
    group_from_outcomes,
    potential_outcomes,
)

_OUTCOME_TABLE = np.array([potential_outcomes(CausalGroup(k)) for k in range(4)],
                          dtype=np.int64)  # rows (y1, y0)


def _default_means() -> np.ndarray:
    # one corner per group: R, D, S, A counter-clockwise
    return np.array([[1.5, 1.5], [-1.5, 1.5], [-1.5, -1.5], [1.5, -1.5]])


def _default_covs(d: int = 2) -> np.ndarray:
    return np.broadcast_to(np.eye(d), (4, d, d)).copy()


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator parameters; the defaults give the overlapping 2-D mixture.

    ``confounding`` tilts the treatment probability by a logistic function
    of the features (0.0 keeps assignment randomized, the default).
    """

    n: int = 2000
    d: int = 2
    group_means: np.ndarray = field(default_factory=_default_means)
    group_covs: np.ndarray = field(default_factory=_default_covs)
    pi_true: np.ndarray = field(default_factory=lambda: np.full(4, 0.25))
    p_treat: float = 0.5
    confounding: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        means = np.array(self.group_means, dtype=np.float64)
        covs = np.array(self.group_covs, dtype=np.float64)
        pi = np.array(self.pi_true, dtype=np.float64)
        if means.shape != (4, self.d):
            raise ValidationError(f"group_means must have shape (4, {self.d})")
        if covs.shape != (4, self.d, self.d):
            raise ValidationError(f"group_covs must have shape (4, {self.d}, {self.d})")
        if pi.shape != (4,) or (pi < 0).any():
            raise ValidationError("pi_true must be 4 non-negative weights")
        if abs(pi.sum() - 1.0) > 1e-9:
            raise ValidationError("pi_true must sum to 1")
        pi = pi / pi.sum()
        for k in range(4):
            try:
                np.linalg.cholesky(covs[k])
            except np.linalg.LinAlgError:
                raise ValidationError(
                    f"covariance of group {CausalGroup(k).letter} is not positive definite"
                )
        if not 0.0 < self.p_treat < 1.0:
            raise ValidationError("p_treat must lie in (0, 1)")
        object.__setattr__(self, "group_means", _frozen_array(means, np.float64))
        object.__setattr__(self, "group_covs", _frozen_array(covs, np.float64))
        object.__setattr__(self, "pi_true", _frozen_array(pi, np.float64))


def config_to_dict(cfg: SyntheticConfig) -> dict:
    """Every field explicit, for self-describing output metadata."""
    return {
        "n": cfg.n,
        "d": cfg.d,
        "group_means": cfg.group_means.tolist(),
        "group_covs": cfg.group_covs.tolist(),
        "pi_true": cfg.pi_true.tolist(),
        "p_treat": cfg.p_treat,
        "confounding": cfg.confounding,
        "seed": cfg.seed,
    }


def config_from_dict(obj: dict) -> SyntheticConfig:
    known = {"n", "d", "group_means", "group_covs", "pi_true", "p_treat",
             "confounding", "seed"}
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(f"unknown config fields: {sorted(unknown)}")
    return SyntheticConfig(**obj)


def load_config(path: str | Path) -> SyntheticConfig:
    """Read a generator config from a JSON or TOML file."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ImportError:
            import tomli as tomllib
        with path.open("rb") as fh:
            obj = tomllib.load(fh)
    else:
        obj = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a table/object")
    try:
        return config_from_dict(obj)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def oracle_model(cfg: SyntheticConfig) -> MixtureModel:
    """The generator's true parameters packaged as a mixture model."""
    components = tuple(
        GaussianComponent(cfg.group_means[k], cfg.group_covs[k]) for k in range(4)
    )
    pi = cfg.pi_true
    p1 = float(pi[0] + pi[2])  # responders + survivors
    p0 = float(pi[2] + pi[3])  # survivors + anti-responders
    return MixtureModel(pi, components, p1, p0,
                        FitMeta(iters=0, elbo=None, converged=True, seed=cfg.seed))


def oracle_ite(x: np.ndarray, cfg: SyntheticConfig) -> float | np.ndarray:
    """Analytic effect P(R|x) - P(A|x) under the true mixture."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    chols = np.array([np.linalg.cholesky(cfg.group_covs[k]) for k in range(4)])
    log_norms = np.array([
        -0.5 * cfg.d * math.log(2 * math.pi) - np.log(np.diag(chols[k])).sum()
        for k in range(4)
    ])
    logf = _kernels.log_density_matrix(np.ascontiguousarray(x),
                                       np.ascontiguousarray(cfg.group_means),
                                       chols, log_norms)
    with np.errstate(divide="ignore"):
        logw = logf + np.where(cfg.pi_true > 0, np.log(cfg.pi_true), -np.inf)
    m = logw.max(axis=1, keepdims=True)
    w = np.exp(logw - m)
    l = w / w.sum(axis=1, keepdims=True)
    tau = l[:, 0] - l[:, 3]
    return float(tau[0]) if single else tau


def generate(cfg: SyntheticConfig) -> Dataset:
    """Draw a dataset from the configured mixture; deterministic per seed."""
    rng = np.random.default_rng(cfg.seed)
    groups = rng.choice(4, size=cfg.n, p=cfg.pi_true)
    z = rng.standard_normal((cfg.n, cfg.d))
    x = np.empty((cfg.n, cfg.d))
    for k in range(4):
        mask = groups == k
        if mask.any():
            L = np.linalg.cholesky(cfg.group_covs[k])
            x[mask] = cfg.group_means[k] + z[mask] @ L.T
    if cfg.confounding == 0.0:
        p = cfg.p_treat
    else:
        logit = math.log(cfg.p_treat / (1.0 - cfg.p_treat))
        score = x.sum(axis=1) / math.sqrt(cfg.d)
        p = 1.0 / (1.0 + np.exp(-(logit + cfg.confounding * score)))
    t = (rng.random(cfg.n) < p).astype(np.int64)
    y1 = _OUTCOME_TABLE[groups, 0]
    y0 = _OUTCOME_TABLE[groups, 1]
    y = np.where(t == 1, y1, y0)
    tau = oracle_ite(x, cfg)
    return Dataset(x, t, y, Oracle(groups, y0, y1, tau))


def with_seed(cfg: SyntheticConfig, seed: int) -> SyntheticConfig:
    return replace(cfg, seed=int(seed))


# ---------------------------------------------------------------------------
# Semi-synthetic loader
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SemiSyntheticRecord:
    """One loaded row: raw outcomes for both arms plus their binarization.

    ``y_factual`` is the outcome of the assigned arm ``t`` and
    ``y_cfactual`` the other arm's; ``y0``/``y1`` are the binarized
    potential outcomes, so the binarized factual side is ``y1`` when
    ``t == 1`` and ``y0`` otherwise.
    """

    x: np.ndarray
    t: int
    y_factual: float
    y_cfactual: float
    y0: int
    y1: int

    def __post_init__(self):
        if self.t not in (0, 1):
            raise ValidationError("t must be 0 or 1")
        if self.y0 not in (0, 1) or self.y1 not in (0, 1):
            raise ValidationError("binarized outcomes must be 0 or 1")

    @property
    def factual_binary(self) -> int:
        return self.y1 if self.t == 1 else self.y0

    @property
    def group(self) -> CausalGroup:
        return group_from_outcomes(self.y1, self.y0)


def _resolve_threshold(policy, factuals: np.ndarray) -> float:
    if isinstance(policy, (int, float)) and not isinstance(policy, bool):
        return float(policy)
    if policy == "median":
        return float(np.median(factuals))
    if policy == "mean":
        return float(factuals.mean())
    raise ValidationError(f"unknown threshold policy {policy!r}; "
                          "use 'median', 'mean', or a number")


def load_ihdp(path: str | Path, threshold_policy="median") -> Dataset:
    """Load a standard-layout semi-synthetic file into a Dataset.

    Continuous outcomes are binarized as (value > threshold) with the
    threshold resolved once per file from ``threshold_policy``.  The
    oracle block gets the binarized potential outcomes, the implied
    group, and tau = y1 - y0.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header required")
        rows = list(reader)

    cols = {name.strip(): j for j, name in enumerate(header)}
    for required in ("t", "y_factual", "y_cfactual"):
        if required not in cols:
            raise ValidationError(f"{path}: missing required column {required!r}")
    d = 0
    while f"x{d + 1}" in cols:
        d += 1
    if d == 0:
        raise ValidationError(f"{path}: no covariate columns x1..xd found")
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    n = len(rows)
    x = np.empty((n, d))
    t = np.empty(n, dtype=np.int64)
    y_f = np.empty(n)
    y_cf = np.empty(n)
    xi = [cols[f"x{j + 1}"] for j in range(d)]
    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        try:
            t[i] = int(float(row[cols["t"]]))
            y_f[i] = float(row[cols["y_factual"]])
            y_cf[i] = float(row[cols["y_cfactual"]])
            for j, c in enumerate(xi):
                x[i, j] = float(row[c])
        except ValueError as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from exc
        if t[i] not in (0, 1):
            raise ValidationError(f"{path}:{line}: t must be 0 or 1, got {row[cols['t']]!r}")
        if not (math.isfinite(y_f[i]) and math.isfinite(y_cf[i])):
            raise ValidationError(f"{path}:{line}: non-finite outcome value")
    if not np.isfinite(x).all():
        i = int(np.argmax(~np.isfinite(x).all(axis=1)))
        raise ValidationError(f"{path}:{i + 2}: non-finite covariate value")

    threshold = _resolve_threshold(threshold_policy, y_f)
    y1_raw = np.where(t == 1, y_f, y_cf)
    y0_raw = np.where(t == 1, y_cf, y_f)
    records = [
        SemiSyntheticRecord(
            x[i], int(t[i]), float(y_f[i]), float(y_cf[i]),
            int(y0_raw[i] > threshold), int(y1_raw[i] > threshold),
        )
        for i in range(n)
    ]
    y0 = np.array([r.y0 for r in records], dtype=np.int64)
    y1 = np.array([r.y1 for r in records], dtype=np.int64)
    y = np.array([r.factual_binary for r in records], dtype=np.int64)
    if y.min() == y.max():
        warnings.warn(f"{path}: binarization at threshold {threshold:g} yields a "
                      "single outcome class")
    groups = np.array([r.group.value for r in records], dtype=np.int64)
    tau = (y1 - y0).astype(np.float64)
    return Dataset(x, t, y, Oracle(groups, y0, y1, tau))
