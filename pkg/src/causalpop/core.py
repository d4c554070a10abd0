"""Domain types shared by every other module.

Conventions used throughout the package:

* The four causal populations are indexed in the fixed canonical order
  Responder=0, Doomed=1, Survivor=2, Anti-responder=3.  Every length-4
  vector (mixing weights, responsibilities, posteriors) follows it.
* Treatment and outcome are stored as integers in {0, 1}, never booleans,
  so CSV round-trips are exact.
* All containers are immutable after construction (frozen dataclasses,
  arrays marked read-only) and safe to share across concurrent readers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np


class CausalPopError(Exception):
    """Base class for package errors."""


class ValidationError(CausalPopError):
    """Invalid input data, configuration, or file contents."""


class FitError(CausalPopError):
    """Numerical failure while fitting or applying a model."""


class CausalGroup(IntEnum):
    """The four exclusive response types, canonical order R, D, S, A.

    A responder has a positive outcome only when treated, an
    anti-responder only when untreated; doomed and survivor individuals
    never / always have a positive outcome.
    """

    RESPONDER = 0
    DOOMED = 1
    SURVIVOR = 2
    ANTI_RESPONDER = 3

    @property
    def letter(self) -> str:
        return "RDSA"[self.value]

    @classmethod
    def from_letter(cls, letter: str) -> "CausalGroup":
        try:
            return cls("RDSA".index(letter))
        except ValueError:
            raise ValidationError(f"unknown group letter {letter!r}, expected one of R|D|S|A")


# (Y(1), Y(0)) for each group, indexed by canonical order.
_POTENTIAL_OUTCOMES = ((1, 0), (0, 0), (1, 1), (0, 1))

# Admissible group pair for each observed (t, y), ascending canonical index.
# An individual with factual outcome y under arm t can only belong to the
# two groups whose potential outcome for that arm equals y.
_ADMISSIBLE = {
    (0, 0): (CausalGroup.RESPONDER, CausalGroup.DOOMED),
    (0, 1): (CausalGroup.SURVIVOR, CausalGroup.ANTI_RESPONDER),
    (1, 0): (CausalGroup.DOOMED, CausalGroup.ANTI_RESPONDER),
    (1, 1): (CausalGroup.RESPONDER, CausalGroup.SURVIVOR),
}

# Same table as an int array for vectorized/kernel use: ADMISSIBLE_PAIRS[t, y]
ADMISSIBLE_PAIRS = np.array(
    [[[0, 1], [2, 3]], [[1, 3], [0, 2]]], dtype=np.int64
)
ADMISSIBLE_PAIRS.setflags(write=False)


def potential_outcomes(group: CausalGroup) -> tuple[int, int]:
    """Return the pair (Y(1), Y(0)) for a causal group."""
    return _POTENTIAL_OUTCOMES[CausalGroup(group).value]


def admissible_groups(t: int, y: int) -> tuple[CausalGroup, CausalGroup]:
    """The two groups compatible with observing outcome ``y`` under arm ``t``.

    The remaining two groups are forced to zero responsibility by the
    causality constraints.
    """
    _check_binary(t, "t")
    _check_binary(y, "y")
    return _ADMISSIBLE[(int(t), int(y))]


def group_from_outcomes(y1: int, y0: int) -> CausalGroup:
    """Map a potential-outcome pair back to its causal group."""
    _check_binary(y1, "y1")
    _check_binary(y0, "y0")
    return CausalGroup(_POTENTIAL_OUTCOMES.index((int(y1), int(y0))))


def _check_binary(v, name: str) -> None:
    if int(v) not in (0, 1):
        raise ValidationError(f"{name} must be 0 or 1, got {v!r}")


def _frozen_array(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_binary_array(a: np.ndarray, name: str) -> None:
    bad = ~np.isin(a, (0, 1))
    if bad.any():
        i = int(np.argmax(bad))
        raise ValidationError(f"{name} must be binary; row {i} has {a[i]!r}")


@dataclass(frozen=True)
class Individual:
    """One observation: features, assigned arm, factual outcome."""

    x: np.ndarray
    t: int
    y: int

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen_array(self.x, np.float64))
        if self.x.ndim != 1:
            raise ValidationError("individual features must be a 1-D vector")
        _check_binary(self.t, "t")
        _check_binary(self.y, "y")
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "y", int(self.y))


@dataclass(frozen=True)
class Oracle:
    """Per-row ground truth available for synthetic and semi-synthetic data.

    ``tau`` is the true individual effect: the analytic conditional mean
    for generated data, or y1 - y0 when realized potential outcomes are
    what the source provides.
    """

    group: np.ndarray  # (n,) canonical indices
    y0: np.ndarray  # (n,) in {0, 1}
    y1: np.ndarray  # (n,) in {0, 1}
    tau: np.ndarray  # (n,) float

    def __post_init__(self):
        object.__setattr__(self, "group", _frozen_array(self.group, np.int64))
        object.__setattr__(self, "y0", _frozen_array(self.y0, np.int64))
        object.__setattr__(self, "y1", _frozen_array(self.y1, np.int64))
        object.__setattr__(self, "tau", _frozen_array(self.tau, np.float64))
        n = self.group.shape[0]
        for name in ("y0", "y1", "tau"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"oracle column {name} has wrong length")
        _check_binary_array(self.y0, "oracle y0")
        _check_binary_array(self.y1, "oracle y1")
        if ((self.group < 0) | (self.group > 3)).any():
            raise ValidationError("oracle group indices must be in 0..3")
        # group must match the potential-outcome pair
        table = np.array(_POTENTIAL_OUTCOMES, dtype=np.int64)
        expect_y1 = table[self.group, 0]
        expect_y0 = table[self.group, 1]
        bad = (expect_y1 != self.y1) | (expect_y0 != self.y0)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValidationError(
                f"oracle row {i}: group {CausalGroup(int(self.group[i])).letter} "
                f"inconsistent with potential outcomes (y1={self.y1[i]}, y0={self.y0[i]})"
            )
        if not np.isfinite(self.tau).all():
            raise ValidationError("oracle tau contains non-finite values")
        if (np.abs(self.tau) > 1.0 + 1e-12).any():
            raise ValidationError("oracle tau must lie in [-1, 1]")


@dataclass(frozen=True)
class Dataset:
    """A study of n individuals with common feature dimension d.

    ``x`` is (n, d) float, ``t`` and ``y`` are (n,) binary int arrays.
    When an oracle block is present its factual side must agree with the
    observed outcome: y equals y1 on treated rows and y0 on control rows.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    oracle: Oracle | None = None

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValidationError("x must be a 2-D array (n rows, d features)")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", _frozen_array(self.t, np.int64))
        object.__setattr__(self, "y", _frozen_array(self.y, np.int64))
        n = self.x.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one row")
        if self.t.shape != (n,) or self.y.shape != (n,):
            raise ValidationError("t and y must be 1-D arrays matching x rows")
        _check_binary_array(self.t, "t")
        _check_binary_array(self.y, "y")
        if not np.isfinite(self.x).all():
            raise ValidationError("x contains non-finite values")
        if self.oracle is not None:
            if self.oracle.group.shape[0] != n:
                raise ValidationError("oracle block length does not match dataset")
            factual = np.where(self.t == 1, self.oracle.y1, self.oracle.y0)
            bad = factual != self.y
            if bad.any():
                i = int(np.argmax(bad))
                raise ValidationError(
                    f"oracle row {i}: factual outcome y={self.y[i]} does not match "
                    f"the oracle potential outcome for arm t={self.t[i]}"
                )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.n

    def individual(self, i: int) -> Individual:
        return Individual(self.x[i], int(self.t[i]), int(self.y[i]))

    def subset(self, idx: np.ndarray) -> "Dataset":
        """Row-indexed view copy, keeping the oracle block when present."""
        oracle = None
        if self.oracle is not None:
            oracle = Oracle(
                self.oracle.group[idx], self.oracle.y0[idx],
                self.oracle.y1[idx], self.oracle.tau[idx],
            )
        return Dataset(self.x[idx], self.t[idx], self.y[idx], oracle)


def train_test_split(data: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; train gets round(n * train_frac) rows."""
    if not 0.0 < train_frac < 1.0:
        raise ValidationError("train_frac must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    n_train = int(round(data.n * train_frac))
    n_train = min(max(n_train, 1), data.n - 1)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


def uniform_admissible(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """The (n, 4) responsibility matrix with 1/2 on each admissible group.

    This is both the fitting loop's starting point and the degenerate
    no-feature-information solution.
    """
    t = np.asarray(t, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    pairs = ADMISSIBLE_PAIRS[t, y]
    q = np.zeros((t.shape[0], 4))
    rows = np.arange(t.shape[0])
    q[rows, pairs[:, 0]] = 0.5
    q[rows, pairs[:, 1]] = 0.5
    return q


def validate_responsibilities(q: np.ndarray, t: np.ndarray, y: np.ndarray,
                              atol: float = 1e-12) -> None:
    """Check the latent-distribution invariants for an (n, 4) matrix.

    Rows must be probability distributions (sum 1 within ``atol``) and the
    two groups excluded by the observed (t, y) must be exactly zero.
    """
    q = np.asarray(q)
    t = np.asarray(t, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if q.ndim != 2 or q.shape[1] != 4 or q.shape[0] != t.shape[0]:
        raise ValidationError("responsibilities must have shape (n, 4)")
    if ((q < 0.0) | (q > 1.0)).any():
        raise ValidationError("responsibilities must lie in [0, 1]")
    sums = q.sum(axis=1)
    if (np.abs(sums - 1.0) > atol).any():
        i = int(np.argmax(np.abs(sums - 1.0)))
        raise ValidationError(f"row {i} sums to {sums[i]!r}, expected 1")
    pairs = ADMISSIBLE_PAIRS[t, y]
    mask = np.ones_like(q, dtype=bool)
    rows = np.arange(q.shape[0])
    mask[rows, pairs[:, 0]] = False
    mask[rows, pairs[:, 1]] = False
    if (q[mask] != 0.0).any():
        bad = np.nonzero((q != 0.0) & mask)
        i, k = int(bad[0][0]), int(bad[1][0])
        raise ValidationError(
            f"row {i}: forbidden group {CausalGroup(k).letter} has nonzero "
            f"responsibility {q[i, k]!r} for (t={t[i]}, y={y[i]})"
        )


@dataclass(frozen=True)
class GaussianComponent:
    """Mean vector and covariance matrix of one mixture component."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen_array(self.mu, np.float64))
        object.__setattr__(self, "sigma", _frozen_array(self.sigma, np.float64))
        d = self.mu.shape[0]
        if self.mu.ndim != 1 or self.sigma.shape != (d, d):
            raise ValidationError("mu must be (d,) and sigma (d, d)")
        if not (np.isfinite(self.mu).all() and np.isfinite(self.sigma).all()):
            raise ValidationError("component parameters must be finite")
        asym = np.abs(self.sigma - self.sigma.T).max()
        if asym > 1e-10:
            raise ValidationError(f"sigma is not symmetric (max asymmetry {asym:g})")
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise ValidationError("sigma is not positive definite")

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.sigma)


@dataclass(frozen=True)
class FitMeta:
    """Bookkeeping attached to a fitted (or constructed) mixture model."""

    iters: int = 0
    elbo: float | None = None
    converged: bool = False
    seed: int = 0
    ite_mode: str = "model_consistent"


@dataclass(frozen=True)
class MixtureModel:
    """Four-component mixture over the causal populations.

    ``pi`` holds the mixing weights in canonical order; ``p1_hat`` and
    ``p0_hat`` are the empirical positive-outcome rates of the treated and
    control arms (None when an arm was absent from the training data).
    """

    pi: np.ndarray
    components: tuple[GaussianComponent, ...]
    p1_hat: float | None = None
    p0_hat: float | None = None
    meta: FitMeta = field(default_factory=FitMeta)

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen_array(self.pi, np.float64))
        object.__setattr__(self, "components", tuple(self.components))
        if self.pi.shape != (4,):
            raise ValidationError("pi must have length 4")
        if (self.pi < 0.0).any():
            raise ValidationError("pi entries must be non-negative")
        if abs(float(self.pi.sum()) - 1.0) > 1e-12:
            raise ValidationError(f"pi sums to {self.pi.sum()!r}, expected 1")
        if len(self.components) != 4:
            raise ValidationError("exactly four components required")
        d = self.components[0].d
        if any(c.d != d for c in self.components):
            raise ValidationError("all components must share one dimension")
        for name in ("p1_hat", "p0_hat"):
            v = getattr(self, name)
            if v is not None:
                v = float(v)
                if not 0.0 <= v <= 1.0:
                    raise ValidationError(f"{name} must lie in [0, 1]")
                object.__setattr__(self, name, v)

    @property
    def d(self) -> int:
        return self.components[0].d


# ---------------------------------------------------------------------------
# CSV format: header x1..xd,t,y plus optional oracle columns group,y0,y1,tau.
# Floats are written with 17 significant digits so a round-trip is exact.
# ---------------------------------------------------------------------------

_ORACLE_COLUMNS = ("group", "y0", "y1", "tau")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(data: Dataset, path: str | Path) -> None:
    """Write a dataset in the package CSV format."""
    path = Path(path)
    header = [f"x{j + 1}" for j in range(data.d)] + ["t", "y"]
    if data.oracle is not None:
        header += list(_ORACLE_COLUMNS)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [_fmt(v) for v in data.x[i]] + [str(int(data.t[i])), str(int(data.y[i]))]
            if data.oracle is not None:
                row += [
                    CausalGroup(int(data.oracle.group[i])).letter,
                    str(int(data.oracle.y0[i])),
                    str(int(data.oracle.y1[i])),
                    _fmt(data.oracle.tau[i]),
                ]
            w.writerow(row)


def load_csv(path: str | Path) -> Dataset:
    """Read a dataset written by :func:`save_csv` (or hand-built to match)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, header required")
        rows = list(reader)

    cols = {name: j for j, name in enumerate(header)}
    d = 0
    while f"x{d + 1}" in cols:
        d += 1
    if d == 0 or "t" not in cols or "y" not in cols:
        raise ValidationError(f"{path}: header must contain x1..xd,t,y")
    has_oracle = any(c in cols for c in _ORACLE_COLUMNS)
    if has_oracle and not all(c in cols for c in _ORACLE_COLUMNS):
        raise ValidationError(f"{path}: oracle columns {_ORACLE_COLUMNS} must appear together")
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    n = len(rows)
    x = np.empty((n, d))
    t = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    group = np.empty(n, dtype=np.int64) if has_oracle else None
    y0 = np.empty(n, dtype=np.int64) if has_oracle else None
    y1 = np.empty(n, dtype=np.int64) if has_oracle else None
    tau = np.empty(n) if has_oracle else None
    xi = [cols[f"x{j + 1}"] for j in range(d)]
    for i, row in enumerate(rows):
        line = i + 2  # 1-based, after header
        if len(row) != len(header):
            raise ValidationError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        try:
            for j, c in enumerate(xi):
                x[i, j] = float(row[c])
            t[i] = int(row[cols["t"]])
            y[i] = int(row[cols["y"]])
            if has_oracle:
                group[i] = CausalGroup.from_letter(row[cols["group"]]).value
                y0[i] = int(row[cols["y0"]])
                y1[i] = int(row[cols["y1"]])
                tau[i] = float(row[cols["tau"]])
        except (ValueError, ValidationError) as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from exc

    oracle = Oracle(group, y0, y1, tau) if has_oracle else None
    return Dataset(x, t, y, oracle)
