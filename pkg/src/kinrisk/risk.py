"""Conditional and marginal cumulative risk (penetrance) curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, stratum_mask
from .em import FitResult
from .errors import ValidationError


@dataclass
class RiskCurve:
    """Cumulative risk ``F(t)`` on an age grid, optionally with a confidence band."""

    ages: np.ndarray
    risk: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        self.ages = np.asarray(self.ages, dtype=float)
        self.risk = np.asarray(self.risk, dtype=float)
        if self.ages.shape != self.risk.shape or self.ages.ndim != 1:
            raise ValidationError("ages and risk must be 1-d arrays of equal length")
        if np.any(np.diff(self.ages) <= 0):
            raise ValidationError("curve ages must be strictly increasing")
        for k in ("lower", "upper"):
            v = getattr(self, k)
            if v is not None:
                setattr(self, k, np.asarray(v, dtype=float))

    def at(self, t):
        """Risk at age ``t`` (value at the last grid age <= t)."""
        t = float(t)
        if t < self.ages[0] - 1e-9 or t > self.ages[-1] + 1e-9:
            raise ValidationError(
                f"curve {self.label!r} is not defined at age {t}; grid covers "
                f"[{self.ages[0]}, {self.ages[-1]}]")
        k = np.searchsorted(self.ages, t + 1e-9, side="right") - 1
        return float(self.risk[max(k, 0)])


@dataclass(frozen=True)
class ExternalBaseline:
    """Baseline cumulative hazard from an external source, as (age, cumulative hazard) pairs."""

    ages: np.ndarray
    cumhaz: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.ages, dtype=float)
        h = np.asarray(self.cumhaz, dtype=float)
        if a.shape != h.shape or a.ndim != 1 or a.size == 0:
            raise ValidationError("external baseline needs equal-length, non-empty columns")
        if np.any(np.diff(a) <= 0):
            raise ValidationError("external baseline ages must be strictly increasing")
        if np.any(h < 0) or np.any(np.diff(h) < 0):
            raise ValidationError("external cumulative hazard must be non-negative and non-decreasing")
        object.__setattr__(self, "ages", a)
        object.__setattr__(self, "cumhaz", h)

    @property
    def jumps(self):
        return np.diff(np.concatenate([[0.0], self.cumhaz]))

    @classmethod
    def from_csv(cls, path, age_col="age", cumhaz_col="cumhaz"):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r[age_col]) for r in rows], [float(r[cumhaz_col]) for r in rows])


def _lin(fit: FitResult, carrier, w, z):
    w = np.atleast_2d(np.asarray(w, dtype=float)).reshape(-1, fit.eta.size)
    z = np.atleast_2d(np.asarray(z, dtype=float)).reshape(-1, fit.gamma.size)
    lin = w @ fit.eta + z @ fit.gamma
    if fit.spec.interaction and carrier:
        lin = lin + w @ fit.theta
    return lin


def _config_cumhaz(fit: FitResult, carrier, u, ages, times=None, jumps=None):
    """Baseline cumulative hazard weighted by the genotype effect, on ``ages``."""
    if times is None:
        times, jumps = fit.baseline
    log_hr = np.zeros(times.size)
    if carrier:
        log_hr = log_hr + fit.spec.basis(times) @ fit.alpha
    if u:
        if fit.spec.second_gene is None:
            raise ValidationError("u = 1 needs a two-gene fit")
        log_hr = log_hr + fit.spec.second_gene(times) @ fit.alpha2
    c = np.concatenate([[0.0], np.cumsum(jumps * np.exp(log_hr))])
    return c[np.searchsorted(times, np.asarray(ages, dtype=float), side="right")]


def _check_carrier(carrier, u):
    if carrier not in (0, 1) or u not in (0, 1):
        raise ValidationError("carrier and u must be 0 or 1")


def _label(carrier, u, extra=""):
    s = "carrier" if carrier else "non-carrier"
    if u:
        s += ", second gene carrier"
    return s + (f" | {extra}" if extra else "")


def conditional_risk(fit: FitResult, carrier, w, z, ages, u=0) -> RiskCurve:
    """``F(t) = 1 - exp(-A(t))`` at a fixed covariate profile.

    ``A(t)`` sums the baseline jumps up to ``t``, each scaled by the
    genotype effect at the jump age and by the covariate multiplier.
    """
    _check_carrier(carrier, u)
    ages = np.asarray(ages, dtype=float)
    A = np.exp(_lin(fit, carrier, w, z)[0]) * _config_cumhaz(fit, carrier, u, ages)
    prof = ", ".join(f"{n}={v:g}" for n, v in zip(
        list(fit.w_names) + list(fit.z_names),
        np.concatenate([np.ravel(w), np.ravel(z)]).astype(float)))
    return RiskCurve(ages, -np.expm1(-A), label=_label(carrier, u, prof))


def marginal_risk(fit: FitResult, data: Dataset, carrier, ages, independence=True,
                  stratum=None, u=0) -> RiskCurve:
    """Risk averaged over the empirical covariate distribution.

    With ``independence`` every record counts by its likelihood weight;
    otherwise record weights are multiplied by the posterior probability of
    the requested genotype (``q`` or ``1 - q``), estimating the covariate
    distribution given genotype.
    """
    _check_carrier(carrier, u)
    mask = stratum_mask(data, stratum)
    if not mask.any():
        raise ValidationError("stratum is empty")
    ages = np.asarray(ages, dtype=float)
    wts = np.asarray(data.weight, dtype=float)[mask]
    if not independence:
        if fit.n != data.n:
            raise ValidationError("fit and data do not match (record counts differ)")
        if fit.posterior.shape[1] == 4:
            post = fit.posterior[:, 2 * carrier + u]
        else:
            post = fit.q if carrier else 1.0 - fit.q
        wts = wts * post[mask]
    if not np.sum(wts) > 0:
        raise ValidationError("all marginalization weights are zero")
    lin = _lin(fit, carrier, data.w[mask], data.z[mask])
    H = _config_cumhaz(fit, carrier, u, ages)
    surv = np.exp(-np.exp(lin)[:, None] * H[None, :])
    S = wts @ surv / wts.sum()
    return RiskCurve(ages, 1.0 - S, label=_label(carrier, u, "marginal"))


def stratified_marginal(fit: FitResult, data: Dataset, carrier, stratum, ages,
                        independence=True, u=0) -> RiskCurve:
    """:func:`marginal_risk` restricted to records in ``stratum``.

    ``stratum`` is a boolean mask or a predicate on :class:`RelativeRecord`.
    """
    mask = stratum_mask(data, stratum)
    if not mask.any():
        raise ValidationError("stratum is empty")
    curve = marginal_risk(fit, data, carrier, ages, independence, mask, u)
    curve.label = _label(carrier, u, "stratum")
    return curve


def calibrate_external_baseline(fit: FitResult, external: ExternalBaseline, carrier, w, z,
                                ages, u=0) -> RiskCurve:
    """Conditional risk with the fitted baseline replaced by an external one.

    Regression coefficients come from ``fit``; the external cumulative
    hazard is treated as a step function with increments at its table ages.
    """
    _check_carrier(carrier, u)
    ages = np.asarray(ages, dtype=float)
    if ages.min() < external.ages[0] or ages.max() > external.ages[-1]:
        raise ValidationError(
            f"external baseline covers [{external.ages[0]}, {external.ages[-1]}], "
            f"requested ages span [{ages.min()}, {ages.max()}]")
    H = _config_cumhaz(fit, carrier, u, ages, external.ages, external.jumps)
    A = np.exp(_lin(fit, carrier, w, z)[0]) * H
    return RiskCurve(ages, -np.expm1(-A), label=_label(carrier, u, "external baseline"))


def write_curves(curves, path):
    """CSV with columns age, risk, lower, upper, label (one block per curve)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["age", "risk", "lower", "upper", "label"])
        for c in curves:
            for k in range(c.ages.size):
                lo = "" if c.lower is None else repr(float(c.lower[k]))
                hi = "" if c.upper is None else repr(float(c.upper[k]))
                out.writerow([repr(float(c.ages[k])), repr(float(c.risk[k])), lo, hi, c.label])


def read_curves(path):
    """Inverse of :func:`write_curves`; returns ``{label: RiskCurve}``."""
    blocks = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            blocks.setdefault(r.get("label", ""), []).append(r)
    out = {}
    for label, rows in blocks.items():
        lo = [r.get("lower", "") for r in rows]
        hi = [r.get("upper", "") for r in rows]
        out[label] = RiskCurve(
            [float(r["age"]) for r in rows], [float(r["risk"]) for r in rows],
            None if any(v == "" for v in lo) else [float(v) for v in lo],
            None if any(v == "" for v in hi) else [float(v) for v in hi], label)
    return out
