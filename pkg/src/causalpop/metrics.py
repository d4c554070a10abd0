"""Evaluation metrics: PEHE, uplift curve / AUUC, Wilcoxon signed-rank.

The uplift curve follows the prefix convention: individuals are sorted
by score descending and for each prefix of size k the value is

    u(k) = (positives_treated(k) / treated(k)
            - positives_control(k) / control(k)) * k

i.e. the net gain in successes if the top k were treated.  AUUC is the
mean of u(k) over all n prefixes, which makes values comparable across
runs of equal n (absolute magnitudes still depend on n and on this
convention, so they are only comparable within this package).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ValidationError, _frozen_array


def pehe(tau_true: np.ndarray, tau_hat: np.ndarray) -> float:
    """Root-mean-squared error between true and predicted effects."""
    tau_true = np.asarray(tau_true, dtype=np.float64)
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if tau_true.shape != tau_hat.shape or tau_true.ndim != 1 or tau_true.size < 1:
        raise ValidationError("tau vectors must be 1-D and of equal length >= 1")
    return float(np.sqrt(np.mean((tau_true - tau_hat) ** 2)))


@dataclass(frozen=True)
class UpliftCurve:
    """Curve points (one per prefix, fractions k/n) and their area."""

    fractions: np.ndarray
    values: np.ndarray
    auuc: float

    def __post_init__(self):
        object.__setattr__(self, "fractions", _frozen_array(self.fractions, np.float64))
        object.__setattr__(self, "values", _frozen_array(self.values, np.float64))
        object.__setattr__(self, "auuc", float(self.auuc))

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions.tolist(), self.values.tolist()))


def uplift_curve(scores: np.ndarray, t: np.ndarray, y: np.ndarray) -> UpliftCurve:
    """Prefix uplift curve for a scoring of the population.

    Sorting is by score descending with ties broken by original index
    ascending, so the curve is a deterministic function of its inputs.

    Args:
        scores: real-valued ranking scores, higher means treat first.
        t: binary treatment indicators.
        y: binary outcomes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    n = scores.shape[0]
    if t.shape != (n,) or y.shape != (n,):
        raise ValidationError("scores, t, y must be 1-D arrays of equal length")
    if t.sum() == 0 or t.sum() == n:
        raise ValidationError("uplift curve needs both treated and control rows")

    order = np.argsort(-scores, kind="stable")
    ts = t[order]
    ys = y[order]
    k = np.arange(1, n + 1, dtype=np.float64)
    n_treat = np.cumsum(ts).astype(np.float64)
    n_ctrl = k - n_treat
    pos_treat = np.cumsum(ys * ts).astype(np.float64)
    pos_ctrl = np.cumsum(ys * (1 - ts)).astype(np.float64)
    u = (pos_treat / np.maximum(n_treat, 1.0) - pos_ctrl / np.maximum(n_ctrl, 1.0)) * k
    return UpliftCurve(k / n, u, float(u.sum() / n))


def auuc(scores: np.ndarray, t: np.ndarray, y: np.ndarray) -> float:
    """Area under the uplift curve (see :func:`uplift_curve`)."""
    return uplift_curve(scores, t, y).auuc


def save_uplift_csv(curve: UpliftCurve, path) -> None:
    lines = ["fraction,uplift"]
    for f, v in zip(curve.fractions, curve.values):
        lines.append(f"{format(f, '.17g')},{format(v, '.17g')}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TrialResults:
    """Per-trial metric values of one method within a benchmark."""

    method: str
    auuc: tuple[float, ...]
    pehe: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "auuc", tuple(float(v) for v in self.auuc))
        if self.pehe is not None:
            object.__setattr__(self, "pehe", tuple(float(v) for v in self.pehe))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0])
    sorted_vals = values[order]
    i = 0
    while i < values.shape[0]:
        j = i
        while j + 1 < values.shape[0] and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def wilcoxon_signed_rank(a: np.ndarray, b: np.ndarray, alpha: float = 0.05,
                         method: str = "auto") -> tuple[float, float, bool]:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped; tied absolute differences get average
    ranks.  With ``method="auto"`` the null distribution is enumerated
    exactly over all 2**n sign assignments for n <= 12 and approximated
    by a tie- and continuity-corrected normal beyond that.  Returns
    (statistic, p, significant) where the statistic is min(W+, W-).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("paired samples must be 1-D arrays of equal length")
    if method not in ("auto", "exact", "approx"):
        raise ValidationError(f"unknown method {method!r}")
    d = a - b
    d = d[d != 0.0]
    n = d.shape[0]
    if n == 0:
        return 0.0, 1.0, False
    if n < 5:
        warnings.warn(f"only {n} nonzero differences; the test has almost no power")

    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)

    if method == "exact" or (method == "auto" and n <= 12):
        signs = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
        totals = signs @ ranks
        total = ranks.sum()
        mins = np.minimum(totals, total - totals)
        p = float(np.count_nonzero(mins <= stat) / 2 ** n)
    else:
        mean = n * (n + 1) / 4.0
        _, counts = np.unique(ranks, return_counts=True)
        tie_term = float(((counts ** 3 - counts)).sum()) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        if var <= 0.0:
            return stat, 1.0, False
        z = (stat - mean + 0.5) / math.sqrt(var)
        p = min(1.0, 2.0 * _norm_cdf(z))
    p = max(p, math.ulp(0.0))
    return stat, p, p < alpha
