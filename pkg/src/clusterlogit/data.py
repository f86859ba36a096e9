"""Core data containers: clustered binary-response datasets and restrictions."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    DataError,
    MissingColumn,
    MissingValue,
    NonBinaryOutcome,
    NoConstantColumn,
    SingleCluster,
)

__all__ = [
    "Dataset",
    "CoefVector",
    "Restriction",
    "FixedEffectSpec",
    "Profile",
    "build_dataset",
    "expand_fixed_effects",
    "cluster_size_profile",
    "summary_profile",
]


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary outcomes, a design matrix and cluster membership.

    Rows are stored sorted by cluster so that every cluster occupies a
    contiguous block ``starts[g]:starts[g + 1]``. ``groups`` holds dense
    cluster codes ``0..G-1``; ``cluster_labels[g]`` is the original label.

    ``freq`` optionally gives a multiplicity for each row, so that a block of
    identical observations can be stored once. Every statistic treats a row
    with ``freq == m`` exactly like ``m`` copies of it.

    Use :meth:`from_arrays` or :func:`build_dataset` rather than the raw
    constructor, which assumes the rows are already sorted.
    """

    y: np.ndarray
    X: np.ndarray
    groups: np.ndarray
    names: tuple
    cluster_labels: np.ndarray
    freq: np.ndarray | None = None
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)
    outcome_name: str = "y"
    cluster_name: str = "cluster"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        groups = np.asarray(self.groups, dtype=np.intp)
        n = y.shape[0]
        if X.shape[0] != n or groups.shape[0] != n:
            raise DataError("y, X and cluster must have the same number of rows")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise MissingValue("outcome or regressors contain NaN/inf values")
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryOutcome("outcome must contain only 0 and 1")
        if n and np.any(np.diff(groups) < 0):
            raise DataError("rows must be sorted by cluster; use Dataset.from_arrays")
        G = len(self.cluster_labels)
        if G < 2:
            raise SingleCluster("at least two clusters are required")
        if groups.min() != 0 or groups.max() != G - 1 or len(np.unique(groups)) != G:
            raise DataError("cluster codes must be dense 0..G-1")
        freq = self.freq
        if freq is not None:
            freq = np.asarray(freq, dtype=float)
            if freq.shape != (n,) or np.any(freq <= 0):
                raise DataError("freq must be a positive vector with one entry per row")
        names = tuple(self.names) if self.names is not None else tuple(
            f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("need one name per column of X")
        nobs = n if freq is None else freq.sum()
        if X.shape[1] < 1 or not nobs > X.shape[1]:
            raise DataError("need k >= 1 regressors and N > k observations")
        extra = {key: _readonly(np.asarray(v)) for key, v in dict(self.extra).items()}
        for key, v in extra.items():
            if v.shape[0] != n:
                raise DataError(f"carried column {key!r} has the wrong length")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "groups", _readonly(groups))
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "cluster_labels", _readonly(np.asarray(self.cluster_labels)))
        object.__setattr__(self, "freq", None if freq is None else _readonly(freq))
        object.__setattr__(self, "extra", extra)

    @classmethod
    def from_arrays(cls, y, X, cluster, names=None, freq=None, extra=None,
                    outcome_name="y", cluster_name="cluster"):
        """Build a dataset from raw arrays, sorting rows stably by cluster."""
        cluster = np.asarray(cluster)
        if cluster.ndim != 1:
            raise DataError("cluster must be one-dimensional")
        if cluster.dtype.kind == "f" and np.any(np.isnan(cluster)):
            raise MissingValue("cluster column contains missing values")
        if cluster.dtype.kind in "OUS" and any(c is None or c == "" for c in cluster):
            raise MissingValue("cluster column contains missing values")
        labels, codes = np.unique(cluster, return_inverse=True)
        if len(labels) < 2:
            raise SingleCluster("cluster column has a single distinct value")
        order = np.argsort(codes, kind="stable")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        extra = {k: np.asarray(v)[order] for k, v in (extra or {}).items()}
        return cls(
            y=np.asarray(y, dtype=float)[order],
            X=X[order],
            groups=codes[order],
            names=names,
            cluster_labels=labels,
            freq=None if freq is None else np.asarray(freq, dtype=float)[order],
            extra=extra,
            outcome_name=outcome_name,
            cluster_name=cluster_name,
        )

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @cached_property
    def weights(self) -> np.ndarray:
        """Row multiplicities (all ones when ``freq`` is not set)."""
        if self.freq is None:
            return _readonly(np.ones(self.n_rows))
        return self.freq

    @property
    def N(self) -> float:
        n = self.weights.sum()
        return int(n) if float(n).is_integer() else float(n)

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def G(self) -> int:
        return len(self.cluster_labels)

    @cached_property
    def starts(self) -> np.ndarray:
        """Row offsets of each cluster block, length ``G + 1``."""
        s = np.searchsorted(self.groups, np.arange(self.G + 1))
        return _readonly(s)

    @cached_property
    def N_g(self) -> np.ndarray:
        return _readonly(np.add.reduceat(self.weights, self.starts[:-1]))

    @cached_property
    def constant_column(self) -> int | None:
        """Index of the first column whose entries are all 1, if any."""
        hits = np.flatnonzero(np.all(self.X == 1.0, axis=0))
        return int(hits[0]) if hits.size else None

    @property
    def ybar(self) -> float:
        w = self.weights
        return float(w @ self.y / w.sum())

    def cluster_rows(self, g) -> slice:
        return slice(int(self.starts[g]), int(self.starts[g + 1]))

    def without_cluster(self, g):
        """Return ``(y, X, w)`` arrays with cluster ``g`` removed."""
        lo, hi = int(self.starts[g]), int(self.starts[g + 1])
        keep = np.r_[0:lo, hi:self.n_rows]
        return self.y[keep], self.X[keep], self.weights[keep]

    def with_columns(self, X, names):
        """Same rows and clusters, new design matrix."""
        return Dataset(self.y, X, self.groups, names, self.cluster_labels, self.freq,
                       self.extra, self.outcome_name, self.cluster_name)


@dataclass(frozen=True)
class CoefVector:
    beta: np.ndarray
    labels: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.beta):
            raise DataError("one label per coefficient is required")

    def __getitem__(self, name):
        return float(self.beta[self.labels.index(name)])

    def __len__(self):
        return len(self.beta)


@dataclass(frozen=True)
class Restriction:
    """Hypothesis about the coefficients.

    The single-coefficient form is ``beta[index] == value``; ``index`` is a
    0-based column index or column name and defaults to the last column.
    Supplying ``R`` (and optionally ``r``) gives a general ``R beta = r``
    hypothesis, usable for Wald tests only.
    """

    index: int | str = -1
    value: float = 0.0
    R: np.ndarray | None = None
    r: np.ndarray | None = None

    @property
    def is_single(self) -> bool:
        return self.R is None or np.asarray(self.R).ndim == 1 or np.asarray(self.R).shape[0] == 1

    def position(self, k, names=None) -> int:
        j = self.index
        if isinstance(j, str):
            if names is None or j not in names:
                raise DataError(f"unknown coefficient {j!r}")
            j = list(names).index(j)
        if not -k <= j < k:
            raise DataError(f"restriction index {self.index} out of range for k={k}")
        return j % k

    def matrix(self, k, names=None):
        """Return ``(R, r)`` as a 2-D array and a vector."""
        if self.R is None:
            R = np.zeros((1, k))
            R[0, self.position(k, names)] = 1.0
            return R, np.array([float(self.value)])
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[1] != k:
            raise DataError("R must have k columns")
        if np.linalg.matrix_rank(R) < R.shape[0]:
            raise DataError("R must have full row rank")
        r = np.zeros(R.shape[0]) if self.r is None else np.atleast_1d(np.asarray(self.r, dtype=float))
        return R, r

    def vector(self, k, names=None):
        """The vector ``a`` of a single linear restriction ``a'beta = r``."""
        R, _ = self.matrix(k, names)
        if R.shape[0] != 1:
            raise DataError("restriction has more than one row")
        return R[0]


@dataclass(frozen=True)
class FixedEffectSpec:
    """A categorical column to be expanded into dummies.

    ``values`` must be aligned with the rows of the dataset it is applied to
    (use :meth:`from_dataset` for columns carried through ``build_dataset``).
    """

    name: str
    values: np.ndarray

    def __post_init__(self):
        if len(self.levels) < 2:
            raise DataError(f"fixed effect {self.name!r} needs at least two levels")

    @property
    def levels(self):
        return np.unique(np.asarray(self.values))

    @classmethod
    def from_dataset(cls, d: Dataset, name: str):
        if name == d.cluster_name:
            return cls(name, d.cluster_labels[d.groups])
        if name not in d.extra:
            raise MissingColumn(f"column {name!r} was not carried into the dataset")
        return cls(name, d.extra[name])


def _parse_numeric(name, raw):
    arr = np.asarray(raw)
    if arr.dtype.kind in "biuf":
        arr = arr.astype(float)
        if np.any(np.isnan(arr)):
            raise MissingValue(f"column {name!r} has missing values")
        return arr
    out = np.empty(len(arr))
    for i, v in enumerate(arr):
        if v is None or (isinstance(v, str) and v.strip() == ""):
            raise MissingValue(f"column {name!r} has a missing value in row {i + 1}")
        try:
            out[i] = float(v)
        except (TypeError, ValueError):
            raise DataError(f"column {name!r} has non-numeric value {v!r}") from None
    if np.any(np.isnan(out)):
        raise MissingValue(f"column {name!r} has missing values")
    return out


def _parse_labels(name, raw):
    arr = np.asarray(raw)
    if arr.dtype.kind in "biu":
        return arr
    if arr.dtype.kind == "f":
        if np.any(np.isnan(arr)):
            raise MissingValue(f"column {name!r} has missing values")
        return arr
    vals = [None if v is None else str(v).strip() for v in arr]
    if any(v is None or v == "" for v in vals):
        raise MissingValue(f"column {name!r} has missing values")
    try:
        nums = np.array([float(v) for v in vals])
    except ValueError:
        return np.array(vals, dtype=object)
    return nums


def build_dataset(columns: Mapping[str, Sequence], outcome: str, regressors: Sequence[str],
                  cluster: str, *, add_constant=False, carry: Sequence[str] = (),
                  freq=None) -> Dataset:
    """Assemble a :class:`Dataset` from named columns.

    Parameters
    ----------
    columns : mapping of column name to values (numbers or numeric strings)
    outcome : name of the 0/1 outcome column
    regressors : names of the regressor columns, in order
    cluster : name of the cluster column (strings or integers)
    add_constant : prepend a column of ones named ``_cons``
    carry : extra columns (e.g. fixed-effect categories) kept alongside the
        rows, available afterwards as ``d.extra[name]``

    Missing cells in any used column raise :class:`MissingValue`; rows are
    never dropped silently.
    """
    for name in [outcome, cluster, *regressors, *carry]:
        if name not in columns:
            raise MissingColumn(f"column {name!r} not found")
    y = _parse_numeric(outcome, columns[outcome])
    if not np.all((y == 0) | (y == 1)):
        raise NonBinaryOutcome(f"outcome {outcome!r} must contain only 0 and 1")
    cl = _parse_labels(cluster, columns[cluster])
    n = len(y)
    Xcols = [_parse_numeric(name, columns[name]) for name in regressors]
    names = list(regressors)
    if add_constant:
        Xcols.insert(0, np.ones(n))
        names.insert(0, "_cons")
    if not Xcols:
        raise DataError("no regressors")
    X = np.column_stack(Xcols)
    extra = {name: _parse_labels(name, columns[name]) for name in carry}
    return Dataset.from_arrays(y, X, cl, names=tuple(names), freq=freq, extra=extra,
                               outcome_name=outcome, cluster_name=cluster)


def expand_fixed_effects(d: Dataset, fe: FixedEffectSpec, drop_constant=True) -> Dataset:
    """Append one dummy per level of ``fe``.

    With ``drop_constant`` (the default) the constant column is removed, as it
    would be collinear with a full set of dummies. Otherwise the first level is
    used as the reference category and only ``levels - 1`` dummies are added;
    this is how a second fixed-effect set is added after the first.
    """
    values = np.asarray(fe.values)
    if values.shape[0] != d.n_rows:
        raise DataError("fixed-effect values are not aligned with the dataset rows")
    levels = fe.levels
    keep = list(range(d.k))
    if drop_constant:
        c = d.constant_column
        if c is None:
            raise NoConstantColumn("no all-ones column found to replace with fixed effects")
        keep.remove(c)
    else:
        levels = levels[1:]
    dummies = (values[:, None] == levels[None, :]).astype(float)
    X = np.column_stack([d.X[:, keep], dummies])
    names = tuple(d.names[j] for j in keep) + tuple(f"{fe.name}={lv}" for lv in levels)
    return d.with_columns(X, names)


class Profile(NamedTuple):
    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float
    coefvar: float


def summary_profile(values) -> Profile:
    """Five-number summary, mean and coefficient of variation.

    Quartiles average the two straddling order statistics when the rank is an
    integer; the coefficient of variation uses the sample (n - 1) standard
    deviation.
    """
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="averaged_inverted_cdf")
    mean = v.mean()
    sd = v.std(ddof=1) if v.size > 1 else 0.0
    return Profile(v.min(), q1, med, mean, q3, v.max(), sd / mean if mean != 0 else np.nan)


def cluster_size_profile(d: Dataset) -> Profile:
    return summary_profile(d.N_g)
