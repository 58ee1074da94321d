"""Family-level multiplier bootstrap, hazard-ratio tables and BIC model selection."""

from __future__ import annotations

import csv
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import norm

from .data import Dataset, stratum_mask
from .em import EmConfig, FitResult, ModelSpec, fit
from .errors import KinriskError, ValidationError
from .risk import RiskCurve, marginal_risk
from .spline import SplineBasis, place_knots

log = logging.getLogger(__name__)

_TERM = re.compile(r"\s*([+-]?)\s*(?:(\d+(?:\.\d*)?)\s*\*\s*)?([A-Za-z_][\w]*(?:\[[^\]]*\])?)\s*")


def parse_contrast(expr):
    """Parse ``"beta + theta[male]"`` or ``"gamma[bi] - gamma[ta]"`` into ``{name: multiplier}``."""
    if isinstance(expr, dict):
        return {str(k): float(v) for k, v in expr.items()}
    out = {}
    pos = 0
    s = str(expr).strip()
    if not s:
        raise ValidationError("empty contrast")
    while pos < len(s):
        m = _TERM.match(s, pos)
        if not m or m.end() == pos:
            raise ValidationError(f"cannot parse contrast {expr!r} at position {pos}")
        if pos > 0 and not m.group(1):
            raise ValidationError(f"missing operator in contrast {expr!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        mult = float(m.group(2)) if m.group(2) else 1.0
        out[m.group(3)] = out.get(m.group(3), 0.0) + sign * mult
        pos = m.end()
    return out


def contrast_vector(coefs: dict, names):
    v = np.zeros(len(names))
    for name, mult in coefs.items():
        if name not in names:
            raise ValidationError(f"contrast references unknown coefficient {name!r}; "
                                  f"available: {list(names)}")
        v[list(names).index(name)] += mult
    return v


@dataclass
class BootstrapResult:
    """Replicates of a family-level multiplier bootstrap.

    ``coef`` has one row per retained replicate; ``curves`` maps a curve
    label to an array (replicates x ages).
    """

    B: int
    seed: int
    fit: FitResult
    coef_names: list
    coef: np.ndarray
    ages: np.ndarray | None = None
    curves: dict = field(default_factory=dict)
    point_curves: dict = field(default_factory=dict)
    dropped: int = 0
    warning: str | None = None

    @property
    def se(self):
        if self.coef.shape[0] < 2:
            return np.full(self.coef.shape[1], np.nan)
        return self.coef.std(axis=0, ddof=1)

    @property
    def ci(self):
        """2.5 / 97.5 percentile interval of each coefficient, shape (P, 2)."""
        return np.percentile(self.coef, [2.5, 97.5], axis=0).T

    def band(self, label) -> RiskCurve:
        reps = self.curves[label]
        lo, hi = np.percentile(reps, [2.5, 97.5], axis=0)
        return RiskCurve(self.ages, self.point_curves[label], lo, hi, label)

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# seed={self.seed} B={self.B} retained={self.coef.shape[0]} "
                     f"dropped={self.dropped}\n")
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["name", "estimate", "se", "lower", "upper"])
            ci, se = self.ci, self.se
            for j, name in enumerate(self.coef_names):
                out.writerow([name, repr(float(self.fit.coef[j])), repr(float(se[j])),
                              repr(float(ci[j, 0])), repr(float(ci[j, 1]))])

    def replicates_to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# seed={self.seed} B={self.B}\n")
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["replicate"] + list(self.coef_names))
            for b, row in enumerate(self.coef):
                out.writerow([b] + [repr(float(v)) for v in row])


def exp_weights(rng, n_families):
    return rng.exponential(1.0, size=n_families)


def multiplier_bootstrap(data: Dataset, spec: ModelSpec, cfg: EmConfig = EmConfig(), B=200,
                         seed=0, ages=None, curves=None, warm_start=False,
                         weight_fn: Callable = exp_weights, threads=1,
                         point_fit: FitResult | None = None) -> BootstrapResult:
    """Refit under random family weights.

    Each replicate draws one weight per family (``Exp(1)`` by default) from
    an RNG stream keyed by ``(seed, replicate)``, multiplies it into every
    record weight of that family and refits.

    Parameters
    ----------
    ages : array_like, optional
        Age grid for the risk-curve replicates.
    curves : dict, optional
        ``label -> (carrier, stratum)`` marginal curves to record; defaults to
        the overall carrier and non-carrier curves when ``ages`` is given.
    warm_start : bool
        Start each refit from the point estimate instead of zeros.
    threads : int
        Number of replicates fitted concurrently; results are ordered by
        replicate index either way.
    """
    if B < 1:
        raise ValidationError("B must be >= 1")
    point = fit(data, spec, cfg) if point_fit is None else point_fit
    if ages is not None:
        ages = np.asarray(ages, dtype=float)
        if curves is None:
            curves = {"carrier": (1, None), "non-carrier": (0, None)}
        curves = {k: (c, stratum_mask(data, s)) for k, (c, s) in curves.items()}
    else:
        curves = {}
    point_curves = {k: marginal_risk(point, data, c, ages, stratum=m).risk
                    for k, (c, m) in curves.items()}
    _, fam_idx = data.families
    n_fam = int(fam_idx.max()) + 1
    rcfg = replace(cfg, init=point) if warm_start else cfg

    def one(b):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), b]))
        fw = np.asarray(weight_fn(rng, n_fam), dtype=float)
        db = data.with_weights(data.weight * fw[fam_idx])
        try:
            fb = fit(db, spec, rcfg)
        except KinriskError as exc:
            log.warning("bootstrap replicate %d failed: %s", b, exc)
            return None
        if not fb.converged:
            return None
        cv = {k: marginal_risk(fb, db, c, ages, stratum=m).risk for k, (c, m) in curves.items()}
        return fb.coef, cv

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]
    kept = [r for r in results if r is not None]
    dropped = B - len(kept)
    warning = None
    if dropped > 0.05 * B:
        warning = f"{dropped} of {B} bootstrap replicates dropped (non-convergence or failure)"
        log.warning(warning)
    P = point.coef.size
    coef = np.array([r[0] for r in kept]).reshape(len(kept), P)
    reps = {k: np.array([r[1][k] for r in kept]).reshape(len(kept), ages.size) for k in curves}
    return BootstrapResult(B=B, seed=int(seed), fit=point, coef_names=list(point.coef_names),
                           coef=coef, ages=ages, curves=reps, point_curves=point_curves,
                           dropped=dropped, warning=warning)


# ---------------------------------------------------------------------------
# hazard-ratio tables


@dataclass
class HrTable:
    rows: list  # dicts: label, contrast, hr, lower, upper, p_value, log_se
    seed: int | None = None
    B: int | None = None

    def row(self, label):
        for r in self.rows:
            if r["label"] == label:
                return r
        raise KeyError(label)

    def to_csv(self, path):
        cols = ["label", "contrast", "hr", "lower", "upper", "p_value"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# seed={self.seed} B={self.B}\n")
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(cols)
            for r in self.rows:
                out.writerow([r["label"], r["contrast"]] +
                             [repr(float(r[c])) for c in cols[2:]])


def default_contrasts(fit: FitResult):
    """Hazard-ratio rows in the layout of a covariate-adjusted penetrance report."""
    names = fit.coef_names
    rows = []
    constant = "beta" in names
    if constant and fit.spec.interaction:
        for w in fit.w_names:
            rows.append((f"Carrier status ({w}=1)", f"beta + theta[{w}]"))
        rows.append(("Carrier status (reference)", "beta"))
        for w in fit.w_names:
            rows.append((f"{w} in carriers", f"eta[{w}] + theta[{w}]"))
            rows.append((f"{w} in non-carriers", f"eta[{w}]"))
            rows.append((f"Carrier x {w} interaction", f"theta[{w}]"))
    else:
        rows += [(n, n) for n in names if n.startswith(("beta", "alpha"))]
        rows += [(n, n) for n in names if n.startswith(("eta", "theta"))]
    rows += [(z, f"gamma[{z}]") for z in fit.z_names]
    return rows


def hr_table(fit: FitResult, boot: BootstrapResult | None, contrasts=None) -> HrTable:
    """Hazard ratios ``exp(c' coef)`` with bootstrap percentile CIs and normal p-values.

    The p-value is two-sided, from ``estimate / se`` on the log scale with
    ``se`` the bootstrap standard deviation of the contrast.
    """
    contrasts = default_contrasts(fit) if contrasts is None else contrasts
    rows = []
    for label, expr in contrasts:
        c = contrast_vector(parse_contrast(expr), fit.coef_names)
        est = float(c @ fit.coef)
        lo = hi = se = p = float("nan")
        if boot is not None and boot.coef.shape[0] > 0:
            reps = boot.coef @ c
            lo, hi = (float(math.exp(v)) for v in np.percentile(reps, [2.5, 97.5]))
            se = float(np.std(reps, ddof=1)) if reps.size > 1 else 0.0
            if se > 0:
                p = float(2 * norm.sf(abs(est) / se))
            else:
                p = 1.0 if est == 0 else 0.0
        rows.append({"label": label, "contrast": str(expr) if not isinstance(expr, dict) else
                     " + ".join(f"{v:g}*{k}" for k, v in expr.items()),
                     "hr": math.exp(est), "lower": lo, "upper": hi, "p_value": p, "log_se": se})
    return HrTable(rows, None if boot is None else boot.seed, None if boot is None else boot.B)


# ---------------------------------------------------------------------------
# BIC scan


@dataclass
class BicScan:
    rows: list  # dicts: model, degree, n_knots, loglik, k, bic, ok, error
    selected: dict | None

    def to_csv(self, path):
        cols = ["model", "degree", "n_knots", "loglik", "k", "bic", "ok", "error"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(cols + ["selected"])
            for r in self.rows:
                out.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in cols]
                             + [int(r is self.selected)])


def bic(loglik, k, n):
    return -2.0 * loglik + k * math.log(n)


def bic_scan(data: Dataset, cfg: EmConfig = EmConfig(), degrees=(1, 2, 3),
             knot_counts=(0, 1, 2, 3), template: ModelSpec = ModelSpec(),
             include_constant=True) -> BicScan:
    """Fit the constant-effect model and each (degree, knots) spline model; pick min BIC.

    ``k`` counts spline coefficients plus eta, theta and gamma; ``n`` is the
    number of records.  Failed fits are kept as rows with ``ok = False``.
    """
    ev = data.y[data.delta == 1]
    bounds = (float(data.y.min()), float(data.y.max()))
    grid = []
    if include_constant:
        grid.append(("constant", 0, 0))
    grid += [(f"degree {d}, {k} knots", d, k) for d in degrees for k in knot_counts]
    if not grid:
        raise ValidationError("BIC grid is empty")
    rows = []
    for label, deg, nk in grid:
        row = {"model": label, "degree": deg, "n_knots": nk, "loglik": float("nan"),
               "k": 0, "bic": float("nan"), "ok": False, "error": ""}
        try:
            basis = (SplineBasis.constant(bounds) if label == "constant"
                     else place_knots(ev, nk, deg, boundary=bounds))
            res = fit(data, replace(template, basis=basis), cfg)
            row["loglik"] = res.loglik
            row["k"] = res.n_coef
            row["bic"] = bic(res.loglik, res.n_coef, data.n)
            row["ok"] = bool(res.converged)
            if not res.converged:
                row["error"] = "not converged"
        except KinriskError as exc:
            row["error"] = str(exc)
        rows.append(row)
    ok = [r for r in rows if r["ok"]]
    selected = min(ok, key=lambda r: r["bic"]) if ok else None
    return BicScan(rows, selected)
