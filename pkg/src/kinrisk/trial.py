"""Window risks and two-arm sample sizes for prevention trials in carriers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

from scipy.stats import norm

from .errors import ValidationError
from .risk import RiskCurve


@dataclass(frozen=True)
class TrialDesign:
    """One design row.

    ``p0`` is the carrier (placebo-arm) window risk, ``p1`` the non-carrier
    risk that a fully effective intervention would reach and ``p1_half``
    the risk under an intervention removing half the excess.
    """

    baseline_age: float
    horizon: float
    p0: float
    p1: float
    p1_half: float
    alpha: float
    power: float
    n_full: int
    n_half: int

    def __post_init__(self):
        for k in ("p0", "p1", "p1_half"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValidationError(f"{k} must lie in [0, 1]")
        if min(self.n_full, self.n_half) < 1:
            raise ValidationError("sample sizes must be >= 1")


def window_risk(curve: RiskCurve, t, horizon=5.0):
    """``P(T <= t + h | T > t) = (F(t+h) - F(t)) / (1 - F(t))``."""
    f0 = curve.at(t)
    f1 = curve.at(t + horizon)
    if f0 >= 1.0:
        raise ValidationError(f"F({t}) = 1: nobody is event-free at the baseline age")
    return min(max((f1 - f0) / (1.0 - f0), 0.0), 1.0)


def sample_size(p0, p1, alpha=0.05, power=0.80, variance="h0h1"):
    """Per-arm size of a two-sided two-proportion test.

    ``variance="h0h1"`` uses the pooled variance under the null and the
    unpooled one under the alternative::

        n = ceil((z_{a/2} sqrt(2 pbar qbar) + z_pow sqrt(p0 q0 + p1 q1))^2 / (p0 - p1)^2)

    ``variance="pooled"`` uses ``2 pbar qbar`` in both terms and rounds to the
    nearest integer.
    """
    p0, p1 = float(p0), float(p1)
    if not (0 < alpha < 1 and 0 < power < 1):
        raise ValidationError("alpha and power must lie in (0, 1)")
    if not (0 <= p0 <= 1 and 0 <= p1 <= 1):
        raise ValidationError("p0 and p1 must lie in [0, 1]")
    if p0 == p1:
        raise ValidationError("sample size is undefined for p0 == p1")
    za = norm.ppf(1 - alpha / 2)
    zb = norm.ppf(power)
    pbar = 0.5 * (p0 + p1)
    v0 = 2 * pbar * (1 - pbar)
    d2 = (p0 - p1) ** 2
    if variance == "h0h1":
        v1 = p0 * (1 - p0) + p1 * (1 - p1)
        n = (za * math.sqrt(v0) + zb * math.sqrt(v1)) ** 2 / d2
        # guard against 520.0000000001 style float noise before the ceiling
        return max(1, math.ceil(round(n, 9)))
    if variance == "pooled":
        return max(1, int(math.floor((za + zb) ** 2 * v0 / d2 + 0.5)))
    raise ValidationError(f"unknown variance option {variance!r}")


def design_table(carrier_curve: RiskCurve, noncarrier_curve: RiskCurve, ages, horizon=5.0,
                 alpha=0.05, power=0.80, round_inputs: int | None = None, variance="h0h1"):
    """Design rows per baseline age.

    ``round_inputs`` rounds the window risks (and the derived half-effect
    risk's inputs) to that many decimals before sizing, as when working
    from printed risks.
    """
    rows = []
    for t in ages:
        p0 = window_risk(carrier_curve, t, horizon)
        p1 = window_risk(noncarrier_curve, t, horizon)
        if round_inputs is not None:
            p0, p1 = round(p0, round_inputs), round(p1, round_inputs)
        half = p0 + (p1 - p0) / 2
        rows.append(TrialDesign(float(t), float(horizon), p0, p1, half, alpha, power,
                                sample_size(p0, p1, alpha, power, variance),
                                sample_size(p0, half, alpha, power, variance)))
    return rows


def write_design_table(rows, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["age", "p0", "p1", "n_per_arm", "p1_half", "n_per_arm_half"])
        for r in rows:
            out.writerow([f"{r.baseline_age:g}", f"{r.p0:.3f}", f"{r.p1:.3f}", r.n_full,
                          f"{r.p1_half:.4f}", r.n_half])
