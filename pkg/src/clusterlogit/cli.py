"""Command-line interface.

``clusterlogit fit`` estimates a logit model from a CSV file and prints
CV1 / CV3L (optionally CV3) inference, cluster variability summaries and
wild cluster bootstrap results. ``simulate`` and ``placebo`` run the Monte
Carlo experiments.
"""

from __future__ import annotations

import argparse
import csv
import io
import operator
import re
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import (
    contributions,
    get_distribution,
    run_bootstrap,
    transform_scores_restricted,
    transform_scores_unrestricted,
)
from .crve import cv1, cv3, cv3l, delete_one_refits, delete_one_linearized, t_stat
from .data import (
    FixedEffectSpec,
    Restriction,
    build_dataset,
    cluster_size_profile,
    expand_fixed_effects,
    summary_profile,
)
from .errors import ClusterLogitError, DataError, UsageError
from .estimator import fit_mle, fit_restricted
from .intervals import ci_studentized, ci_symmetric
from .simulation import (
    parse_config,
    run_placebo as _run_placebo,
    run_rejection_experiment,
)

__all__ = ["RunConfig", "parse_args", "run_fit", "run_simulate", "run_placebo", "main",
           "read_csv", "parse_sample"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@dataclass
class RunConfig:
    command: str
    input: str | None = None
    outcome: str | None = None
    regressors: tuple = ()
    cluster: str | None = None
    fevar: tuple = ()
    bootstrap: bool = False
    nonull: bool = False
    reps: int = 999
    jackknife: bool = False
    weights: str = "auto"
    dist: str = "t"
    sample: str | None = None
    seed: int = 12345
    format: str = "table"
    level: float = 0.95
    # simulate / placebo
    config: str | None = None
    preset: str | None = None
    settings: tuple = ()
    R: int | None = None
    B: int | None = None
    workers: int | None = None
    methods: tuple = ()
    kind: str = "binary"
    G1: int | None = None
    rho: float = 1.0
    time: str | None = None
    extra: dict = field(default_factory=dict)


def _data_args(p):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--outcome", required=True, help="0/1 outcome column")
    p.add_argument("--regressors", required=True,
                   help="comma-separated regressors; the first is the one tested")
    p.add_argument("--cluster", required=True, help="cluster column")
    p.add_argument("--fevar", default="", help="comma-separated categorical columns to "
                   "include as fixed effects")
    p.add_argument("--sample", default=None, help='row filter, e.g. "female==1 & age>30"')
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--weights", choices=("auto", "rademacher", "webb"), default="auto")


def _build_parser():
    p = _Parser(prog="clusterlogit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    f = sub.add_parser("fit", help="estimate a model and report inference")
    _data_args(f)
    f.add_argument("--bootstrap", action="store_true", help="restricted (WCLR) bootstrap")
    f.add_argument("--nonull", action="store_true", help="unrestricted (WCLU) bootstrap")
    f.add_argument("--reps", type=int, default=None, help="bootstrap replications (999)")
    f.add_argument("--jackknife", action="store_true", help="also compute CV3 by refitting")
    f.add_argument("--dist", choices=("t", "normal"), default="t")
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--format", choices=("table", "delimited"), default="table")
    f.add_argument("--workers", type=int, default=1,
                   help="processes for jackknife refits and bootstrap blocks")

    s = sub.add_parser("simulate", help="Monte Carlo rejection frequencies")
    s.add_argument("--config", default=None, help="key = value experiment file")
    s.add_argument("--preset", default=None)
    s.add_argument("--set", dest="settings", action="append", default=[],
                   metavar="KEY=VALUE")
    s.add_argument("--R", type=int, default=None)
    s.add_argument("--B", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)

    pl = sub.add_parser("placebo", help="placebo regressions on a dataset")
    _data_args(pl)
    pl.add_argument("--kind", choices=("binary", "ar1"), default="binary")
    pl.add_argument("--G1", type=int, default=None)
    pl.add_argument("--rho", type=float, default=1.0)
    pl.add_argument("--time", default=None, help="time column for the AR(1) placebo")
    pl.add_argument("--R", type=int, default=100)
    pl.add_argument("--B", type=int, default=399)
    pl.add_argument("--methods", default=None)
    pl.add_argument("--workers", type=int, default=1)
    return p


def _split(s):
    return tuple(x.strip() for x in (s or "").split(",") if x.strip())


def parse_args(argv) -> RunConfig:
    """Parse command-line arguments; raises :class:`UsageError` on bad input."""
    ns = _build_parser().parse_args(list(argv))
    if ns.command is None:
        raise UsageError("a subcommand is required: fit, simulate or placebo")
    cfg = RunConfig(command=ns.command)
    for key, val in vars(ns).items():
        if key == "command":
            continue
        if key in ("regressors", "fevar", "methods"):
            val = _split(val)
        if key == "settings":
            val = tuple(val)
        setattr(cfg, key, val)
    if cfg.command == "fit":
        if not cfg.regressors:
            raise UsageError("--regressors must name at least one column")
        if cfg.reps is not None:
            if cfg.reps < 1:
                raise UsageError("--reps must be at least 1")
            if not cfg.nonull:
                cfg.bootstrap = True
        else:
            cfg.reps = 999
        if not 0 < cfg.level < 1:
            raise UsageError("--level must lie in (0, 1)")
    for key in ("R", "B"):
        val = getattr(cfg, key)
        if val is not None and val < 1:
            raise UsageError(f"--{key} must be at least 1")
    if cfg.command == "placebo" and not cfg.regressors:
        raise UsageError("--regressors must name at least one column")
    return cfg


def read_csv(path):
    """Read a CSV file into ``{column: list of strings}``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        cols = {h: [] for h in header}
        for n, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path} line {n}: expected {len(header)} fields")
            for h, v in zip(header, row):
                cols[h].append(v.strip())
    return cols


_OPS = {"==": operator.eq, "!=": operator.ne, "<=": operator.le, ">=": operator.ge,
        "<": operator.lt, ">": operator.gt}
_CMP = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(==|!=|<=|>=|<|>)\s*(.+?)\s*$")


def _literal(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    try:
        return float(text)
    except ValueError:
        return text


def parse_sample(expr):
    """Compile a filter such as ``"female==1 & age>=30 | south==0"``.

    Comparisons are joined by ``&`` (binding tighter) and ``|``. Returns a
    function mapping a column dict to a boolean mask. Cells that are empty
    never satisfy a comparison.
    """
    alternatives = []
    for part in expr.split("|"):
        terms = []
        for term in part.split("&"):
            m = _CMP.match(term)
            if not m:
                raise UsageError(f"cannot parse sample condition {term.strip()!r}")
            terms.append((m.group(1), _OPS[m.group(2)], _literal(m.group(3))))
        alternatives.append(terms)

    def mask(columns):
        n = len(next(iter(columns.values())))
        out = np.zeros(n, dtype=bool)
        for terms in alternatives:
            keep = np.ones(n, dtype=bool)
            for name, op, value in terms:
                if name not in columns:
                    raise UsageError(f"sample refers to unknown column {name!r}")
                col = columns[name]
                for i in np.flatnonzero(keep):
                    keep[i] = _compare(col[i], op, value)
            out |= keep
        return out

    return mask


def _compare(cell, op, value):
    if cell is None or cell == "":
        return False
    if isinstance(value, float):
        try:
            return bool(op(float(cell), value))
        except ValueError:
            return bool(op(cell, str(value)))
    return bool(op(str(cell), value))


def _load(cfg, carry=()):
    cols = read_csv(cfg.input)
    if cfg.sample:
        keep = parse_sample(cfg.sample)(cols)
        cols = {k: [v for v, m in zip(vals, keep) if m] for k, vals in cols.items()}
    use_fe = bool(cfg.fevar)
    d = build_dataset(cols, cfg.outcome, cfg.regressors, cfg.cluster, add_constant=True,
                      carry=tuple(cfg.fevar) + tuple(carry))
    for i, name in enumerate(cfg.fevar):
        d = expand_fixed_effects(d, FixedEffectSpec.from_dataset(d, name), drop_constant=i == 0)
    return d, ("pseudo" if use_fe else "exact")


def _fmt(x, nd):
    return f"{x:.{nd}f}"


class _Report:
    def __init__(self, fmt):
        self.fmt = fmt
        self.lines = []
        self.rows = []

    def text(self, line=""):
        self.lines.append(line)

    def row(self, section, label, **values):
        self.rows.append((section, label, values))

    def render(self):
        if self.fmt == "table":
            return "\n".join(self.lines) + "\n"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["section", "label", "field", "value"])
        for section, label, values in self.rows:
            for key, val in values.items():
                w.writerow([section, label, key, val])
        return buf.getvalue()


def _coef_row(rep, section, label, b, se, t, p, lo=None, hi=None):
    line = f"{label:>6} | {_fmt(b, 6):>10} {_fmt(se, 6):>10} {_fmt(t, 4):>8} {_fmt(p, 4):>8}"
    vals = dict(coef=_fmt(b, 6), se=_fmt(se, 6), t=_fmt(t, 4), p=_fmt(p, 4))
    if lo is not None:
        line += f" {_fmt(lo, 6):>11} {_fmt(hi, 6):>11}"
        vals.update(ci_lower=_fmt(lo, 6), ci_upper=_fmt(hi, 6))
    rep.text(line)
    rep.row(section, label, **vals)


def run_fit(cfg: RunConfig) -> str:
    """Estimate the model described by ``cfg`` and return the report text."""
    d, mode = _load(cfg)
    target = cfg.regressors[0]
    restr = Restriction(target)
    j = restr.position(d.k, d.names)
    fit = fit_mle(d, mode=mode)
    G = d.G
    dof = G - 1 if cfg.dist == "t" else np.inf
    rep = _Report(cfg.format)
    b = fit.beta[j]
    rep.text("Cluster-robust inference for a logit model.")
    rep.text(f"Estimates for {target} when clustered by {cfg.cluster}.")
    rep.text(f"There are {d.N} observations within {G} {cfg.cluster} clusters.")
    rep.row("info", "sample", N=d.N, G=G, k=d.k, loglik=f"{fit.loglik:.6f}")
    rep.text("Logistic Regression Output")
    rep.text("")
    rep.text("  s.e. |      Coeff   Sd. Err.   t-stat  P value    CI-lower    CI-upper")
    rep.text("-------+----------------------------------------------------------------")
    V1 = cv1(fit)
    blin = delete_one_linearized(fit)
    rows = [("CV1", V1)]
    refits = None
    if cfg.jackknife:
        refits = delete_one_refits(fit, workers=cfg.workers or 1)
        rows.append(("CV3", cv3(fit, refits=refits)))
    rows.append(("CV3L", cv3l(fit, b=blin)))
    for label, V in rows:
        ref = "t" if cfg.dist == "t" else "normal"
        tr = t_stat(fit.beta, V, restr, ref)
        se = float(np.sqrt(V.V[j, j]))
        iv = ci_symmetric(b, se, cfg.level, dof)
        _coef_row(rep, "coefficients", label, b, se, tr.statistic, tr.p_value, iv.lower, iv.upper)
    rep.text("-" * 72)
    if refits is not None and refits[1]:
        labels = ", ".join(str(d.cluster_labels[g]) for g in refits[1])
        rep.text(f"Delete-one subsamples dropped as separated: {labels}")
        rep.row("info", "dropped_clusters", labels=labels)
    rep.text("")

    rep.text("Cluster Variability")
    rep.text("")
    profiles = [("Ng", cluster_size_profile(d), 2),
                ("Lin beta no g", summary_profile(b + blin[:, j]), 6)]
    if refits is not None:
        kept = refits[0][~np.isnan(refits[0]).any(axis=1)]
        profiles.append(("beta no g", summary_profile(kept[:, j]), 6))
    head = " Statistic | " + " ".join(f"{name:>14}" for name, _, _ in profiles)
    rep.text(head)
    rep.text("-----------+" + "-" * (len(head) - 12))
    for stat in ("min", "q1", "median", "mean", "q3", "max", "coefvar"):
        if stat == "coefvar":
            rep.text("-----------+" + "-" * (len(head) - 12))
        cells = []
        for name, prof, nd in profiles:
            val = getattr(prof, stat)
            cells.append(f"{_fmt(val, 2 if name == 'Ng' else nd):>14}")
            rep.row("variability", stat, **{name.replace(" ", "_"): _fmt(val, nd)})
        rep.text(f"{stat:>10} | " + " ".join(cells))
    rep.text("")

    if cfg.bootstrap or cfg.nonull:
        _bootstrap_report(rep, cfg, d, fit, restr, j, V1, mode)
    return rep.render()


def _bootstrap_report(rep, cfg, d, fit, restr, j, V1, mode):
    G = d.G
    dist = get_distribution(cfg.weights, G)
    a = np.zeros(d.k)
    a[j] = 1.0
    b = fit.beta[j]
    se1 = float(np.sqrt(V1.V[j, j]))
    t1 = t_stat(fit.beta, V1, restr).statistic
    if cfg.nonull:
        name, title = "WCLU", "Unrestricted Bootstrapped Linearized Regression Output"
        sources = [("CLASSIC", contributions(fit)),
                   ("SCORE", transform_scores_unrestricted(fit))]
    else:
        rfit = fit_restricted(d, fit.family, restr, mode=mode)
        name, title = "WCLR", "Restricted Bootstrapped Linearized Regression Output"
        sources = [("CLASSIC", contributions(rfit)),
                   ("SCORE", transform_scores_restricted(rfit))]
    results = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for label, c in sources:
            res = run_bootstrap(c, a, t1, cfg.reps, dist, cfg.seed, cfg.workers or 1)
            results.append((label, res))
    rep.text(title)
    rep.text("")
    rep.text(f"{name:>10} |      Coeff   Sd. Err.   t-stat  P value")
    rep.text("-----------+----------------------------------------")
    for label, res in results:
        rep.text(f"{label:>10} | {_fmt(b, 6):>10} {_fmt(se1, 6):>10} {_fmt(t1, 4):>8} "
                 f"{_fmt(res.p_sym, 4):>8}")
        rep.row(name, label, coef=_fmt(b, 6), se=_fmt(se1, 6), t=_fmt(t1, 4),
                p=_fmt(res.p_sym, 4), p_equal_tail=_fmt(res.p_et, 4),
                replications=res.B, degenerate=res.n_degenerate)
    rep.text("-" * 52)
    wname = "Rademacher" if dist.kind == "rademacher" else "Webb"
    B = results[0][1].B
    how = "enumerating all sign vectors" if results[0][1].enumeration else f"{B} replications"
    rep.text(f"P-values calculated with {how} and {wname} weights.")
    for w in caught:
        rep.text(f"Note: {w.message}")
    rep.text("")
    if not cfg.nonull:
        return
    rep.text("Unrestricted Bootstrapped Confidence Intervals")
    rep.text("")
    rep.text(f"{'WCLU':>14} |      Coeff    std.er.      WCLU CI-low       WCLU CI-up")
    rep.text("---------------+--------------------------------------------------------")
    for label, res in results:
        stud = ci_studentized(b, se1, res.t_star, cfg.level)
        bse = res.boot_se
        sym = ci_symmetric(b, bse, cfg.level, G - 1)
        for rl, se, iv in ((f"{label}-CV1-se", se1, stud), (f"{label}-WB-se", bse, sym)):
            rep.text(f"{rl:>14} | {_fmt(b, 6):>10} {_fmt(se, 6):>10} "
                     f"{_fmt(iv.lower, 4):>16} {_fmt(iv.upper, 4):>16}")
            rep.row("WCLU-CI", rl, coef=_fmt(b, 6), se=_fmt(se, 6),
                    ci_lower=_fmt(iv.lower, 4), ci_upper=_fmt(iv.upper, 4))
        rep.text("---------------+--------------------------------------------------------")
    rep.text("")


def run_simulate(cfg: RunConfig) -> str:
    text = ""
    if cfg.config:
        with open(cfg.config, encoding="utf-8") as fh:
            text = fh.read()
    extra = list(cfg.settings)
    if cfg.preset:
        extra.insert(0, f"preset={cfg.preset}")
    for key in ("R", "B", "workers", "seed"):
        val = getattr(cfg, key)
        if val is not None:
            extra.append(f"{key}={val}")
    try:
        dgp, run = parse_config(text, extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if run["R"] < 1:
        raise UsageError("R must be at least 1")
    res = run_rejection_experiment(dgp, run["methods"], run["R"], run["B"], run["level"],
                                   run["workers"], None if run["dist"] == "auto" else run["dist"],
                                   label=run["label"] or "experiment")
    return res.to_delimited()


def run_placebo(cfg: RunConfig) -> str:
    d, mode = _load(cfg, carry=(cfg.time,) if cfg.time else ())
    kwargs = {}
    if cfg.methods:
        kwargs["methods"] = cfg.methods
    dist = None if cfg.weights == "auto" else cfg.weights
    res = _run_placebo(d, cfg.kind, cfg.R, cfg.B, level=0.05, seed=cfg.seed, G1=cfg.G1,
                       rho=cfg.rho, time=cfg.time, workers=cfg.workers, dist=dist, mode=mode,
                       **kwargs)
    return res.to_delimited()


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 2
    runners = {"fit": run_fit, "simulate": run_simulate, "placebo": run_placebo}
    try:
        out = runners[cfg.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ClusterLogitError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
