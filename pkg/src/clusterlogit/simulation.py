"""Monte Carlo experiments for clustered binary data and placebo regressions.

Every random draw comes from a stream keyed by ``(seed, purpose, replication)``
so that results are a pure function of the configuration and do not depend on
how replications are split across worker processes.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import optimize, special

from .bootstrap import (
    contributions,
    run_bootstrap,
    transform_scores_restricted,
    transform_scores_unrestricted,
)
from .crve import cv1, cv2l, cv3, cv3l, t_stat
from .data import Dataset, Restriction
from .errors import (
    ClusterLogitError,
    DataError,
    DegenerateReplicationWarning,
    EmptyCluster,
    EstimationError,
    NoRoot,
)
from .estimator import fit_lpm, fit_mle, fit_restricted
from .intervals import ci_studentized, ci_symmetric
from .links import LOGIT, get_family
from .rng import substream

__all__ = [
    "DgpConfig",
    "ExperimentResult",
    "cluster_sizes",
    "gen_regressors",
    "gen_outcomes",
    "calibrate_intercept",
    "simulate_dataset",
    "evaluate_methods",
    "run_rejection_experiment",
    "run_placebo",
    "placebo_regressor",
    "PRESETS",
    "TEST_METHODS",
    "COVERAGE_METHODS",
    "parse_config",
]

TEST_METHODS = (
    "CV1-normal", "CV1-t", "CV3-t", "CV3J-t", "CV3L-t", "CV2L-t",
    "WCLR-C", "WCLR-S", "WCLU-C", "WCLU-S",
    "LPM-CV1-t", "LPM-CV3-t", "WCR-C", "WCR-S", "WCU-C", "WCU-S",
)
COVERAGE_METHODS = (
    "CI-CV1", "CI-CV3", "CI-CV3L",
    "CI-WCLU-C-stud", "CI-WCLU-S-stud", "CI-WCLU-C-bse", "CI-WCLU-S-bse",
)
DEFAULT_METHODS = ("CV1-normal", "CV1-t", "CV3-t", "CV3L-t",
                   "WCLR-C", "WCLR-S", "WCLU-C", "WCLU-S")


@dataclass(frozen=True)
class DgpConfig:
    """Clustered logit design.

    The linear index is ``beta_1 + beta_slopes * (X_2 + ... + X_{k-1}) +
    beta_k * T`` where the ``X_j`` are dummies whose probability of being one
    varies by cluster (see :func:`gen_regressors`) and ``T`` marks ``G1``
    randomly treated clusters. ``beta_1`` is found from ``pi_target``
    (the unconditional mean of y) unless given explicitly.
    """

    G: int = 24
    N: int = 12000
    gamma: float = 2.0
    G1: int = 8
    phi: float = 0.1
    k: int = 7
    beta_slopes: float = 1.0
    beta_k: float = 0.0
    pi_target: float | None = 0.31
    beta_1: float | None = None
    seed: int = 0
    regressors: str = "observation"

    def __post_init__(self):
        if self.G < 2:
            raise DataError("G must be at least 2")
        if not 2 <= self.G1 <= self.G:
            raise DataError("G1 must lie between 2 and G")
        if not 0 <= self.phi <= 1:
            raise DataError("phi must lie in [0, 1]")
        if self.N < self.G:
            raise DataError("N must be at least G")
        if self.k < 2:
            raise DataError("k must be at least 2 (constant and treatment)")
        if self.gamma < 0:
            raise DataError("gamma must be non-negative")
        if self.regressors not in ("observation", "cluster"):
            raise DataError("regressors must be 'observation' or 'cluster'")
        if self.beta_1 is None and not (self.pi_target is not None and 0 < self.pi_target < 1):
            raise DataError("give beta_1 or a pi_target in (0, 1)")

    def intercept(self) -> float:
        if self.beta_1 is not None:
            return float(self.beta_1)
        return calibrate_intercept(self, self.pi_target)


def cluster_sizes(N, G, gamma) -> np.ndarray:
    """Cluster sizes ``floor(N exp(gamma g/G) / sum_j exp(gamma j/G))``.

    The last cluster takes whatever remains so the sizes sum to ``N``.
    """
    if N < G or G < 1:
        raise EmptyCluster("need N >= G >= 1")
    g = np.arange(1, G + 1)
    w = np.exp(gamma * g / G)
    raw = N * w / w.sum()
    sizes = np.floor(raw[:-1] + 1e-9).astype(np.int64)
    sizes = np.append(sizes, N - sizes.sum())
    if np.any(sizes <= 0):
        raise EmptyCluster("some cluster would be empty")
    return sizes


def gen_regressors(cfg: DgpConfig, stream, sizes=None) -> tuple[np.ndarray, np.ndarray]:
    """Draw the ``(N, k)`` design matrix and the treated-cluster indicator.

    Column 0 is the constant and the last column the treatment dummy, equal to
    one in ``G1`` randomly chosen clusters. Each remaining column ``j`` gets a
    cluster-specific probability ``omega_gj ~ U(0.25, 0.75)``; with
    ``cfg.regressors == "observation"`` every observation in cluster ``g`` is
    an independent Bernoulli(omega_gj) draw, with ``"cluster"`` a single draw
    is shared by the whole cluster.
    """
    G, k = cfg.G, cfg.k
    sizes = cluster_sizes(cfg.N, G, cfg.gamma) if sizes is None else np.asarray(sizes)
    groups = np.repeat(np.arange(G), sizes)
    X = np.ones((groups.size, k))
    if k > 2:
        omega = stream.uniform(0.25, 0.75, size=(G, k - 2))
        if cfg.regressors == "observation":
            X[:, 1:k - 1] = stream.uniform(size=(groups.size, k - 2)) < omega[groups]
        else:
            X[:, 1:k - 1] = (stream.uniform(size=(G, k - 2)) < omega)[groups]
    treated = np.zeros(G, dtype=bool)
    treated[stream.choice(G, size=cfg.G1, replace=False)] = True
    X[:, k - 1] = treated[groups]
    return X, treated


def gen_outcomes(linear_index, phi, stream, groups) -> np.ndarray:
    """Binary outcomes with intra-cluster correlation.

    Each observation's threshold ``u`` is the cluster's common uniform draw
    with probability ``phi`` and its own draw otherwise; ``y = 1`` when
    ``Lambda(index) > u``.
    """
    idx = np.asarray(linear_index, dtype=float)
    groups = np.asarray(groups)
    codes = np.unique(groups, return_inverse=True)[1]
    n = idx.size
    v_common = stream.uniform(size=codes.max() + 1)
    e = stream.uniform(size=n)
    v_own = stream.uniform(size=n)
    u = np.where(e <= phi, v_common[codes], v_own)
    return (special.expit(idx) > u).astype(float)


def _expected_mean(beta_1, cfg: DgpConfig):
    m = cfg.k - 2
    share = cfg.G1 / cfg.G
    j = np.arange(m + 1)
    pj = np.array([math.comb(m, i) for i in j]) / 2.0**m
    base = beta_1 + cfg.beta_slopes * j
    return float(pj @ ((1 - share) * special.expit(base)
                       + share * special.expit(base + cfg.beta_k)))


def calibrate_intercept(cfg: DgpConfig, pi_target=None) -> float:
    """Intercept giving an unconditional mean of y equal to ``pi_target``.

    Each dummy is Bernoulli(1/2) marginally and independent across columns,
    and an observation is treated with probability ``G1/G``, so the
    mean is an exact finite mixture of logistic probabilities, solved here
    by bracketing root search.
    """
    pi_target = cfg.pi_target if pi_target is None else pi_target
    if pi_target is None or not 0 < pi_target < 1:
        raise NoRoot("pi_target must lie in (0, 1)")
    lo, hi = -60.0, 60.0
    f = lambda b: _expected_mean(b, cfg) - pi_target  # noqa: E731
    if f(lo) > 0 or f(hi) < 0:
        raise NoRoot(f"no intercept gives a mean of {pi_target}")
    return float(optimize.brentq(f, lo, hi, xtol=1e-12))


def simulate_dataset(cfg: DgpConfig, stream, beta_1=None, expand=False) -> Dataset:
    """Draw one dataset from the design.

    All regressors are binary, so by default observations sharing a cluster,
    a regressor pattern and an outcome are stored once with a frequency
    weight; every estimator treats such a row exactly like its copies. With
    ``expand=True`` one row per observation is returned.
    """
    b1 = cfg.intercept() if beta_1 is None else beta_1
    sizes = cluster_sizes(cfg.N, cfg.G, cfg.gamma)
    groups = np.repeat(np.arange(cfg.G), sizes)
    X, _ = gen_regressors(cfg, stream, sizes)
    beta = np.r_[b1, np.full(cfg.k - 2, cfg.beta_slopes), cfg.beta_k]
    y = gen_outcomes(X @ beta, cfg.phi, stream, groups)
    names = ("_cons",) + tuple(f"x{j}" for j in range(2, cfg.k)) + ("treat",)
    m = cfg.k - 2
    if expand or m > 40:
        return Dataset.from_arrays(y, X, groups, names=names)
    bits = X[:, 1:cfg.k - 1].astype(np.int64) @ (np.int64(1) << np.arange(m, dtype=np.int64))
    key = ((groups.astype(np.int64) << m | bits) << 1) | y.astype(np.int64)
    _, first, counts = np.unique(key, return_index=True, return_counts=True)
    return Dataset.from_arrays(y[first], X[first], groups[first], names=names,
                               freq=counts.astype(float))


def _reject(p, level):
    return bool(p < level)


def evaluate_methods(d: Dataset, methods, level=0.05, B=399, seed=0, j=-1, value=0.0,
                     family=LOGIT, dist=None, delete_mode="pseudo"):
    """Apply each named test (or interval) to one dataset.

    Returns ``None`` when the full-sample model cannot be estimated, otherwise
    a dict mapping method name to ``True``/``False`` (rejection, or coverage
    for ``CI-*`` methods) or ``None`` when that method failed on this sample.
    """
    family = get_family(family)
    restr = Restriction(j, value)
    try:
        fit = fit_mle(d, family)
    except (EstimationError, DataError):
        return None
    jj = restr.position(d.k)
    a = np.zeros(d.k)
    a[jj] = 1.0
    cache = {}

    def get(name, fn):
        if name not in cache:
            try:
                cache[name] = fn()
            except ClusterLogitError as exc:
                cache[name] = exc
        val = cache[name]
        if isinstance(val, Exception):
            raise val
        return val

    V1 = lambda: cv1(fit)  # noqa: E731
    t1 = lambda: t_stat(fit.beta, get("V1", V1), restr).statistic  # noqa: E731
    rfit = lambda: fit_restricted(d, family, restr)  # noqa: E731
    lfit = lambda: fit_lpm(d)  # noqa: E731
    lrfit = lambda: fit_lpm(d, restr)  # noqa: E731

    def boot(key, make):
        def run():
            c = make()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateReplicationWarning)
                return run_bootstrap(c, a, t_obs(key), B, dist, seed)
        return get("boot:" + key, run)

    def t_obs(key):
        if key.startswith("WC") and not key.startswith("WCL"):
            lf = get("lfit", lfit)
            return t_stat(lf.beta, cv1(lf), restr).statistic
        return get("t1", t1)

    sources = {
        "WCLR-C": lambda: contributions(get("rfit", rfit)),
        "WCLR-S": lambda: transform_scores_restricted(get("rfit", rfit), delete_mode),
        "WCLU-C": lambda: contributions(fit),
        "WCLU-S": lambda: transform_scores_unrestricted(fit, delete_mode),
        "WCR-C": lambda: contributions(get("lrfit", lrfit)),
        "WCR-S": lambda: transform_scores_restricted(get("lrfit", lrfit), delete_mode),
        "WCU-C": lambda: contributions(get("lfit", lfit)),
        "WCU-S": lambda: transform_scores_unrestricted(get("lfit", lfit), delete_mode),
    }

    def t_test(V, ref="t"):
        return _reject(t_stat(fit.beta, V, restr, ref).p_value, level)

    def covered(iv):
        return iv.contains(value)

    ci_level = 1 - level
    se_of = lambda V: float(np.sqrt(V.V[jj, jj]))  # noqa: E731
    G = fit.G
    out = {}
    for m in methods:
        try:
            if m == "CV1-normal":
                r = t_test(get("V1", V1), "normal")
            elif m == "CV1-t":
                r = t_test(get("V1", V1))
            elif m == "CV3-t":
                r = t_test(get("V3", lambda: cv3(fit, mode=delete_mode)))
            elif m == "CV3J-t":
                r = t_test(get("V3J", lambda: cv3(fit, center="mean", mode=delete_mode)))
            elif m == "CV3L-t":
                r = t_test(get("V3L", lambda: cv3l(fit, mode=delete_mode)))
            elif m == "CV2L-t":
                r = t_test(get("V2L", lambda: cv2l(fit)))
            elif m in sources:
                res = boot(m, sources[m])
                r = _reject(res.p_sym, level)
            elif m == "LPM-CV1-t":
                lf = get("lfit", lfit)
                r = _reject(t_stat(lf.beta, cv1(lf), restr).p_value, level)
            elif m == "LPM-CV3-t":
                lf = get("lfit", lfit)
                r = _reject(t_stat(lf.beta, cv3l(lf, mode=delete_mode), restr).p_value, level)
            elif m == "CI-CV1":
                r = covered(ci_symmetric(fit.beta[jj], se_of(get("V1", V1)), ci_level, G - 1))
            elif m == "CI-CV3":
                V = get("V3", lambda: cv3(fit, mode=delete_mode))
                r = covered(ci_symmetric(fit.beta[jj], se_of(V), ci_level, G - 1))
            elif m == "CI-CV3L":
                V = get("V3L", lambda: cv3l(fit, mode=delete_mode))
                r = covered(ci_symmetric(fit.beta[jj], se_of(V), ci_level, G - 1))
            elif m.startswith("CI-WCLU-"):
                variant, kind = m[3:9], m[10:]
                res = boot(variant, sources[variant])
                if kind == "stud":
                    iv = ci_studentized(fit.beta[jj], se_of(get("V1", V1)), res.t_star, ci_level)
                else:
                    iv = ci_symmetric(fit.beta[jj], res.boot_se, ci_level, G - 1)
                r = covered(iv)
            else:
                raise ValueError(f"unknown method {m!r}")
        except (ClusterLogitError, np.linalg.LinAlgError):
            r = None
        out[m] = r
    return out


@dataclass
class ExperimentResult:
    """Rejection (or coverage) tallies for one experiment."""

    label: str
    methods: tuple
    R: int
    B: int
    level: float
    counts: dict
    valid: dict
    skipped: int = 0
    config: dict = field(default_factory=dict)

    def frequency(self, method) -> float:
        v = self.valid[method]
        return self.counts[method] / v if v else float("nan")

    def mc_se(self, method) -> float:
        p, v = self.frequency(method), self.valid[method]
        return math.sqrt(p * (1 - p) / v) if v else float("nan")

    def to_rows(self):
        rows = []
        for m in self.methods:
            rows.append({
                "experiment": self.label,
                "method": m,
                "R": self.R,
                "B": self.B,
                "level": self.level,
                "valid": self.valid[m],
                "count": self.counts[m],
                "frequency": self.frequency(m),
                "mc_se": self.mc_se(m),
                "skipped": self.skipped + (self.R - self.skipped - self.valid[m]),
            })
        return rows

    def to_delimited(self, header=True) -> str:
        buf = io.StringIO()
        cols = ["experiment", "method", "R", "B", "level", "valid", "count",
                "frequency", "mc_se", "skipped"]
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(cols)
        for row in self.to_rows():
            w.writerow([f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()


def _tally(label, methods, R, B, level, outcomes, config):
    counts = {m: 0 for m in methods}
    valid = {m: 0 for m in methods}
    skipped = 0
    for res in outcomes:
        if res is None:
            skipped += 1
            continue
        for m in methods:
            if res[m] is not None:
                valid[m] += 1
                counts[m] += int(res[m])
    return ExperimentResult(label, tuple(methods), R, B, level, counts, valid, skipped, config)


def _boot_seed(seed, r):
    return int(substream(seed, "boot", r).integers(2**62))


def _sim_chunk(args):
    cfg, beta_1, reps, methods, B, level, dist, family = args
    out = []
    for r in reps:
        d = simulate_dataset(cfg, substream(cfg.seed, "data", r), beta_1)
        out.append(evaluate_methods(d, methods, level, B, _boot_seed(cfg.seed, r),
                                    value=cfg.beta_k, family=family, dist=dist))
    return out


def _run_chunks(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(fn, jobs))
    else:
        parts = [fn(j) for j in jobs]
    return list(itertools.chain.from_iterable(parts))


def _chunks(R, workers):
    n = max(1, min(R, 4 * (workers or 1)))
    return [list(c) for c in np.array_split(np.arange(R), n) if c.size]


def run_rejection_experiment(cfg: DgpConfig, methods=DEFAULT_METHODS, R=1000, B=399,
                             level=0.05, workers=1, dist=None, family=LOGIT,
                             label="") -> ExperimentResult:
    """Rejection frequencies for tests of ``beta_k`` equal to its true value.

    Coverage methods (``CI-*``) report the share of intervals that contain
    the true ``beta_k``. Replications whose full-sample fit fails are counted
    in ``skipped``; a method failing on a replication only reduces that
    method's ``valid`` count.
    """
    methods = tuple(methods)
    if R < 1:
        raise ValueError("R must be positive")
    beta_1 = cfg.intercept()
    lpm = {"LPM-CV1-t", "LPM-CV3-t", "WCR-C", "WCR-S", "WCU-C", "WCU-S"}
    if cfg.beta_k != 0 and lpm.intersection(methods):
        raise ValueError("LPM tests are only meaningful for beta_k = 0")
    jobs = [(cfg, beta_1, reps, methods, B, level, dist, family)
            for reps in _chunks(R, workers)]
    outcomes = _run_chunks(_sim_chunk, jobs, workers)
    config = asdict(cfg) | {"beta_1": beta_1}
    return _tally(label or "experiment", methods, R, B, level, outcomes, config)


def placebo_regressor(d: Dataset, kind, stream, G1=None, rho=1.0, time=None) -> np.ndarray:
    """One draw of a placebo regressor aligned with the rows of ``d``.

    ``kind="binary"`` is one for ``G1`` randomly chosen clusters.
    ``kind="ar1"`` simulates ``z_t = rho z_{t-1} + e_t`` with standard normal
    innovations separately for each cluster over the sorted distinct values
    of the ``time`` column, then standardizes the pooled series.
    """
    G = d.G
    if kind == "binary":
        G1 = G // 2 if G1 is None else int(G1)
        if not 1 <= G1 < G:
            raise ValueError("G1 must lie between 1 and G - 1")
        treated = np.zeros(G)
        treated[stream.choice(G, size=G1, replace=False)] = 1.0
        return treated[d.groups]
    if kind == "ar1":
        if time is None or time not in d.extra:
            raise DataError("the AR(1) placebo needs a time column carried in the dataset")
        t = np.asarray(d.extra[time])
        grid, tcode = np.unique(t, return_inverse=True)
        e = stream.standard_normal((G, grid.size))
        z = np.empty_like(e)
        z[:, 0] = e[:, 0]
        for s in range(1, grid.size):
            z[:, s] = rho * z[:, s - 1] + e[:, s]
        z = (z - z.mean()) / z.std()
        return z[d.groups, tcode]
    raise ValueError("kind must be 'binary' or 'ar1'")


def _placebo_chunk(args):
    d, kind, reps, methods, B, level, seed, G1, rho, time, dist, family, mode = args
    out = []
    for r in reps:
        z = placebo_regressor(d, kind, substream(seed, "placebo", r), G1, rho, time)
        dz = d.with_columns(np.column_stack([d.X, z]), d.names + ("placebo",))
        out.append(evaluate_methods(dz, methods, level, B, _boot_seed(seed, r),
                                    family=family, dist=dist, delete_mode=mode))
    return out


def run_placebo(d: Dataset, kind="binary", R=100, B=399, methods=DEFAULT_METHODS,
                level=0.05, seed=0, G1=None, rho=1.0, time=None, workers=1, dist=None,
                family=LOGIT, mode="pseudo", label="placebo") -> ExperimentResult:
    """Add a random placebo regressor ``R`` times and tally false rejections.

    Replications where the placebo is collinear with the other regressors
    (or the fit fails for any other reason) are counted in ``skipped``.
    """
    methods = tuple(methods)
    if R < 1:
        raise ValueError("R must be positive")
    jobs = [(d, kind, reps, methods, B, level, seed, G1, rho, time, dist, family, mode)
            for reps in _chunks(R, workers)]
    outcomes = _run_chunks(_placebo_chunk, jobs, workers)
    config = {"kind": kind, "G1": G1, "rho": rho, "seed": seed}
    return _tally(label, methods, R, B, level, outcomes, config)


PRESETS = {
    # canonical case at G = 24 (the G = 12..72 sweep is run by changing G and N)
    "figA": dict(G=24, N=12000, gamma=2.0, G1=8, phi=0.1, k=7, pi_target=0.31),
    "figA12": dict(G=12, N=6000, gamma=2.0, G1=4, phi=0.1, k=7, pi_target=0.31),
    # nearly ideal case, G1 in 20..30
    "figI": dict(G=50, N=25000, gamma=0.0, G1=25, phi=0.0, k=7, pi_target=0.5),
    # treated-cluster count sweep
    "figC": dict(G=24, N=12000, gamma=2.0, G1=2, phi=0.1, k=7, pi_target=0.31),
    "figE": dict(G=24, N=12000, gamma=2.0, G1=8, phi=0.1, k=7, pi_target=0.1),
    "figD": dict(G=24, N=12000, gamma=4.0, G1=8, phi=0.1, k=7, pi_target=0.31),
    "figF": dict(G=24, N=12000, gamma=2.0, G1=8, phi=0.5, k=7, pi_target=0.31),
    "figH": dict(G=24, N=12000, gamma=2.0, G1=8, phi=0.1, k=20, pi_target=0.31),
    "figG": dict(G=24, N=12000, gamma=2.0, G1=8, phi=0.1, k=7, pi_target=0.31, beta_k=1.0),
}

_RUN_KEYS = {"R": int, "B": int, "level": float, "workers": int, "methods": str,
             "preset": str, "dist": str, "label": str}


def parse_config(text, overrides=()):
    """Parse ``key = value`` lines (``#`` comments allowed).

    Returns ``(DgpConfig, run_options)``. A ``preset`` key starts from one of
    :data:`PRESETS`; other keys override it. ``overrides`` are extra
    ``key=value`` strings applied last.
    """
    items = {}
    lines = list(text.splitlines()) + list(overrides)
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        items[key] = val
    base = {}
    if "preset" in items:
        if items["preset"] not in PRESETS:
            raise ValueError(f"unknown preset {items['preset']!r}")
        base = dict(PRESETS[items["preset"]])
    types = {f.name: f.type for f in fields(DgpConfig)}
    run = {"R": 1000, "B": 399, "level": 0.05, "workers": 1,
           "methods": ",".join(DEFAULT_METHODS), "dist": "auto", "label": items.get("preset", "")}
    for key, val in items.items():
        if key in _RUN_KEYS:
            if key != "preset":
                run[key] = _RUN_KEYS[key](val)
        elif key in types:
            base[key] = _convert(key, val, types[key])
        else:
            raise ValueError(f"unknown key {key!r}")
    run["methods"] = tuple(m.strip() for m in run["methods"].split(",") if m.strip())
    cfg = DgpConfig(**base) if base else DgpConfig()
    if "beta_1" in base and "pi_target" not in items:
        cfg = replace(cfg, pi_target=None)
    return cfg, run


def _convert(key, val, typ):
    if val.lower() in ("none", ""):
        return None
    if key == "regressors":
        return val
    if key in ("G", "N", "G1", "k", "seed"):
        return int(val)
    return float(val)
