"""Synthetic kin-cohort data and the replication harness.

Event ages follow a Weibull proportional-hazards model,
``Lambda0(t) = (t / scale) ** shape``, with a latent carrier indicator
drawn from the record's carrier probability.  Censoring ages are uniform on
``(0, c_max)`` with ``c_max`` tuned to a target censoring fraction.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset
from .em import EmConfig, ModelSpec, fit
from .errors import KinriskError, ValidationError
from .inference import contrast_vector, multiplier_bootstrap, parse_contrast
from .spline import SplineBasis

log = logging.getLogger(__name__)

DEFAULT_HR = {"beta": 4.99, "theta": 0.31, "eta": 2.39, "gamma": 0.71}
PROB_VALUES = (0.0, 0.02, 0.51, 1.0)
PROB_FREQS = (0.03, 0.71, 0.22, 0.04)
RISK_AGES = (60.0, 65.0, 70.0, 75.0, 80.0)
_CALIBRATION_SEED = 20170417


@dataclass(frozen=True)
class DiscreteCovariates:
    """Finite covariate distribution: atoms of (w, z, probability).

    With ``family_level_z`` the ``z`` part is drawn once per family and
    ``w`` per record from its conditional distribution given ``z``.
    """

    atoms: tuple
    w_names: tuple = ()
    z_names: tuple = ()
    family_level_z: bool = True

    def __post_init__(self):
        atoms = tuple((tuple(map(float, w)), tuple(map(float, z)), float(p))
                      for w, z, p in self.atoms)
        if not atoms:
            raise ValidationError("covariate distribution needs at least one atom")
        if abs(sum(a[2] for a in atoms) - 1.0) > 1e-12 or any(a[2] < 0 for a in atoms):
            raise ValidationError("covariate atom probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "atoms", atoms)

    @property
    def dims(self):
        return len(self.atoms[0][0]), len(self.atoms[0][1])

    def sample(self, rng, n, family_index):
        W = np.array([a[0] for a in self.atoms]).reshape(len(self.atoms), -1)
        Z = np.array([a[1] for a in self.atoms]).reshape(len(self.atoms), -1)
        prob = np.array([a[2] for a in self.atoms])
        if not self.family_level_z:
            k = rng.choice(len(prob), size=n, p=prob)
            return W[k], Z[k]
        zkeys, zinv = np.unique(Z, axis=0, return_inverse=True)
        zinv = zinv.ravel()
        pz = np.bincount(zinv, weights=prob, minlength=len(zkeys))
        n_fam = int(family_index.max()) + 1
        fz = rng.choice(len(zkeys), size=n_fam, p=pz)
        rz = fz[family_index]
        u = rng.random(n)
        k = np.empty(n, dtype=int)
        for j in range(len(zkeys)):
            members = np.flatnonzero(zinv == j)
            cdf = np.cumsum(prob[members]) / pz[j]
            sel = rz == j
            k[sel] = members[np.minimum(np.searchsorted(cdf, u[sel], side="right"),
                                        members.size - 1)]
        return W[k], Z[k]


def sex_covariates(p_male=0.5, p_proband_male=0.5):
    """Relative's sex (W, 1 = male) and proband's sex (Z, 1 = male), independent."""
    atoms = [((w,), (z,), (p_male if w else 1 - p_male) * (p_proband_male if z else 1 - p_proband_male))
             for w in (0, 1) for z in (0, 1)]
    return DiscreteCovariates(tuple(atoms), ("male",), ("proband_male",))


@dataclass(frozen=True)
class SimScenario:
    """Simulation design.  Coefficients are log hazard ratios."""

    n: int = 2266
    shape: float = 5.0
    scale: float = 105.0
    beta: float = math.log(DEFAULT_HR["beta"])
    eta: tuple = (math.log(DEFAULT_HR["eta"]),)
    theta: tuple = (math.log(DEFAULT_HR["theta"]),)
    gamma: tuple = (math.log(DEFAULT_HR["gamma"]),)
    prob_values: tuple = PROB_VALUES
    prob_freqs: tuple = PROB_FREQS
    covariates: object = field(default_factory=sex_covariates)
    censor_target: float = 0.4
    family_size: float = 2266 / 474
    seed: int = 0
    c_max: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        if not (0 < self.censor_target < 1):
            raise ValidationError("censor_target must lie in (0, 1)")
        if len(self.prob_values) != len(self.prob_freqs):
            raise ValidationError("prob_values and prob_freqs differ in length")
        if abs(sum(self.prob_freqs) - 1.0) > 1e-12 or min(self.prob_freqs) < 0:
            raise ValidationError("prob-group frequencies must be non-negative and sum to 1")
        if any(not 0 <= p <= 1 for p in self.prob_values):
            raise ValidationError("carrier probabilities must lie in [0, 1]")
        if self.shape <= 0 or self.scale <= 0 or self.family_size <= 0:
            raise ValidationError("shape, scale and family_size must be positive")
        if self.theta and len(self.theta) != len(self.eta):
            raise ValidationError("theta must be empty or match eta in length")

    @property
    def interaction(self):
        return len(self.theta) > 0

    def linpred(self, x, W, Z):
        lp = self.beta * x + W @ np.asarray(self.eta, dtype=float) + Z @ np.asarray(self.gamma, dtype=float)
        if self.interaction:
            lp = lp + x * (W @ np.asarray(self.theta, dtype=float))
        return lp

    @property
    def true_coef(self):
        """True coefficient values keyed by the fitted model's parameter names."""
        cov = self.covariates
        out = {"beta": self.beta}
        out.update({f"eta[{n}]": v for n, v in zip(cov.w_names, self.eta)})
        out.update({f"theta[{n}]": v for n, v in zip(cov.w_names, self.theta)})
        out.update({f"gamma[{n}]": v for n, v in zip(cov.z_names, self.gamma)})
        return out

    def model_spec(self):
        dw, dz = self.covariates.dims
        return ModelSpec(SplineBasis.constant(), interaction=self.interaction, w_dim=dw, z_dim=dz)


@dataclass
class SimTruth:
    """Latent quantities never placed in the Dataset."""

    x: np.ndarray
    t: np.ndarray
    c: np.ndarray
    c_max: float


def _draw_latent(scenario: SimScenario, rng, n):
    fam_size = math.ceil(scenario.family_size)
    fam = np.arange(n) // fam_size
    W, Z = scenario.covariates.sample(rng, n, fam)
    p = np.asarray(scenario.prob_values, dtype=float)[
        rng.choice(len(scenario.prob_values), size=n, p=scenario.prob_freqs)]
    x = (rng.random(n) < p).astype(float)
    E = rng.exponential(size=n)
    T = scenario.scale * (E / np.exp(scenario.linpred(x, W, Z))) ** (1.0 / scenario.shape)
    return fam, W, Z, p, x, T


def calibrate_censoring(scenario: SimScenario, target=None, mc_n=10**6, tol=0.002,
                        max_expand=40):
    """Upper limit ``c_max`` of uniform censoring that hits the target censoring fraction.

    Bisection on ``log c_max`` with common random numbers, so the Monte Carlo
    censoring fraction is monotone in ``c_max``.

    Raises
    ------
    ValidationError
        The target cannot be reached within ``max_expand`` bracket doublings.
    """
    target = scenario.censor_target if target is None else target
    if not 0 < target < 1:
        raise ValidationError("censoring target must lie in (0, 1)")
    rng = np.random.default_rng(_CALIBRATION_SEED)
    *_, T = _draw_latent(scenario, rng, mc_n)
    U = 1.0 - rng.random(mc_n)
    ratio = np.sort(T / U)

    def frac(c):
        # P(T > c U) = P(T / U > c)
        return 1.0 - np.searchsorted(ratio, c, side="right") / mc_n

    lo = hi = scenario.scale
    k = 0
    while frac(hi) > target and k < max_expand:
        hi *= 2.0
        k += 1
    k = 0
    while frac(lo) < target and k < max_expand:
        lo /= 2.0
        k += 1
    if not (frac(lo) >= target - tol and frac(hi) <= target + tol):
        raise ValidationError(
            f"censoring fraction {target} unreachable: bracket [{lo:g}, {hi:g}] gives "
            f"[{frac(hi):.4f}, {frac(lo):.4f}]")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if frac(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1 < 1e-12:
            break
    best = min((lo, hi), key=lambda c: abs(frac(c) - target))
    if abs(frac(best) - target) > tol:
        raise ValidationError(f"censoring fraction {target} not reachable within {tol}")
    return best


def gen_dataset(scenario: SimScenario, seed=None, c_max=None):
    """Draw one dataset.

    Returns
    -------
    Dataset, SimTruth
    """
    if c_max is None:
        c_max = scenario.c_max if scenario.c_max is not None else calibrate_censoring(scenario)
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    n = scenario.n
    fam, W, Z, p, x, T = _draw_latent(scenario, rng, n)
    C = c_max * (1.0 - rng.random(n))
    Y = np.minimum(T, C)
    delta = (T <= C).astype(int)
    cov = scenario.covariates
    data = Dataset(family_id=[f"F{f:05d}" for f in fam], relative_id=[str(i) for i in range(n)],
                   y=Y, delta=delta, probs=p, w=W, z=Z, w_names=cov.w_names, z_names=cov.z_names)
    return data, SimTruth(x=x, t=T, c=C, c_max=c_max)


def true_risk(scenario: SimScenario, carrier, stratum=None, ages=RISK_AGES, mc_n=10**6,
              return_se=False):
    """True cumulative risk averaged over the covariate distribution within ``stratum``.

    ``stratum`` is a predicate ``(w, z) -> bool`` on covariate vectors.  Exact
    for :class:`DiscreteCovariates`; other covariate generators (callables
    ``(rng, n, family_index) -> (W, Z)``) use ``mc_n`` Monte Carlo draws.
    """
    ages = np.asarray(ages, dtype=float)
    base = (ages / scenario.scale) ** scenario.shape
    cov = scenario.covariates
    if isinstance(cov, DiscreteCovariates):
        num = np.zeros(ages.size)
        den = 0.0
        for w, z, prob in cov.atoms:
            if stratum is not None and not stratum(np.array(w), np.array(z)):
                continue
            lp = scenario.linpred(float(carrier), np.array(w), np.array(z))
            num += prob * -np.expm1(-base * np.exp(lp))
            den += prob
        if den == 0:
            raise ValidationError("stratum has zero probability")
        F = num / den
        return (F, np.zeros_like(F)) if return_se else F
    rng = np.random.default_rng(_CALIBRATION_SEED)
    W, Z = cov(rng, mc_n, np.arange(mc_n))
    keep = np.ones(mc_n, dtype=bool) if stratum is None else np.array(
        [bool(stratum(W[i], Z[i])) for i in range(mc_n)])
    lp = scenario.linpred(float(carrier), W[keep], Z[keep])
    vals = -np.expm1(-base[None, :] * np.exp(lp)[:, None])
    F = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(keep.sum())
    log.info("true_risk by Monte Carlo (n=%d): max standard error %.2e", keep.sum(), se.max())
    return (F, se) if return_se else F


# ---------------------------------------------------------------------------
# replication harness


def sex_interaction_contrasts(w_name="male", z_name="proband_male"):
    """The hazard-ratio rows of the simulation summary, as (label, contrast expression)."""
    return [
        ("Carrier status in male", f"beta + theta[{w_name}]"),
        ("Carrier status in female", "beta"),
        ("Relative's sex in carriers", f"eta[{w_name}] + theta[{w_name}]"),
        ("Relative's sex in non-carriers", f"eta[{w_name}]"),
        ("Carriers x relative's sex interaction", f"theta[{w_name}]"),
        ("Proband's sex", f"gamma[{z_name}]"),
    ]


def sex_strata(w_index=0):
    """Overall plus relative-male / relative-female strata: name -> (record mask fn, (w, z) predicate)."""
    return {
        "overall": (lambda d: np.ones(d.n, dtype=bool), None),
        "male": (lambda d: d.w[:, w_index] == 1, lambda w, z: w[w_index] == 1),
        "female": (lambda d: d.w[:, w_index] == 0, lambda w, z: w[w_index] == 0),
    }


@dataclass
class ReplicationReport:
    """Bias / SD / SE / coverage summary of a simulation study.

    ``rows`` holds one dict per quantity with keys ``kind`` ('hr' or
    'risk'), ``label``, ``true``, ``mean``, ``bias``, ``sd``, ``se``, ``cp``,
    ``mc_se`` (Monte Carlo standard error of the mean) and ``n_ok``.
    ``raw`` keeps per-replicate estimates, standard errors and coverage
    indicators.
    """

    rows: list
    reps: int
    boot_B: int
    seed: int
    censor_target: float
    failures: int
    censor_realized: float
    raw: dict = field(default_factory=dict, repr=False)

    def row(self, label):
        for r in self.rows:
            if r["label"] == label:
                return r
        raise KeyError(label)

    def to_csv(self, path):
        cols = ["kind", "label", "true", "mean", "bias", "sd", "se", "cp", "mc_se", "n_ok"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# reps={self.reps} boot_B={self.boot_B} seed={self.seed} "
                     f"censor_target={self.censor_target} censor_realized="
                     f"{self.censor_realized!r} failures={self.failures}\n")
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(cols)
            for r in self.rows:
                out.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                              for c in cols])


def _one_replicate(scenario, rep, reps_seed, boot_B, contrasts, strata, ages, cfg,
                   warm_start, c_max):
    ss = np.random.SeedSequence([reps_seed, rep])
    data_seed, boot_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    data, _truth = gen_dataset(scenario, seed=data_seed, c_max=c_max)
    spec = scenario.model_spec()
    curve_specs = {}
    for sname, (mask_fn, _pred) in strata.items():
        mask = mask_fn(data)
        for carrier in (1, 0):
            curve_specs[f"F{carrier}|{sname}"] = (carrier, mask)
    boot = multiplier_bootstrap(data, spec, cfg, boot_B, boot_seed, ages=ages,
                                curves=curve_specs, warm_start=warm_start)
    names = boot.fit.coef_names
    est, se, lo, hi = {}, {}, {}, {}
    for label, expr in contrasts:
        c = contrast_vector(parse_contrast(expr), names)
        est[label] = float(np.exp(c @ boot.fit.coef))
        reps_hr = np.exp(boot.coef @ c)
        se[label] = float(np.std(reps_hr, ddof=1)) if reps_hr.size > 1 else float("nan")
        lo[label], hi[label] = (float(v) for v in np.percentile(reps_hr, [2.5, 97.5]))
    for key, curve in boot.point_curves.items():
        reps_c = boot.curves[key]
        for k, a in enumerate(ages):
            label = f"{key}@{a:g}"
            est[label] = float(curve[k])
            se[label] = float(np.std(reps_c[:, k], ddof=1)) if reps_c.shape[0] > 1 else float("nan")
            lo[label], hi[label] = (float(v) for v in np.percentile(reps_c[:, k], [2.5, 97.5]))
    return est, se, lo, hi, float(1.0 - data.delta.mean()), boot.fit.converged


def replicate(scenario: SimScenario, reps, boot_B, seed=None, ages=RISK_AGES,
              contrasts=None, strata=None, cfg: EmConfig = EmConfig(), warm_start=True,
              progress: Callable | None = None) -> ReplicationReport:
    """Repeat generate -> fit -> bootstrap and summarize against the truth.

    Hazard-ratio quantities are summarized on the HR scale; risk quantities
    are cumulative risks ``F1`` / ``F0`` at ``ages`` overall and per stratum.
    Each replicate draws from its own RNG stream keyed by (seed, index).
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    seed = scenario.seed if seed is None else seed
    if contrasts is None:
        names = scenario.covariates.w_names[:1] + scenario.covariates.z_names[:1]
        contrasts = sex_interaction_contrasts(*names)
    strata = sex_strata() if strata is None else strata
    c_max = scenario.c_max if scenario.c_max is not None else calibrate_censoring(scenario)
    truth = {}
    for label, expr in contrasts:
        coefs = parse_contrast(expr)
        tc = scenario.true_coef
        truth[label] = math.exp(sum(mult * tc[name] for name, mult in coefs.items()))
    for sname, (_mask, pred) in strata.items():
        for carrier in (1, 0):
            F = true_risk(scenario, carrier, pred, ages)
            for k, a in enumerate(ages):
                truth[f"F{carrier}|{sname}@{a:g}"] = float(F[k])
    labels = list(truth)
    est = {k: [] for k in labels}
    ses = {k: [] for k in labels}
    cover = {k: [] for k in labels}
    cens = []
    failures = 0
    for rep in range(reps):
        try:
            e, s, lo, hi, cr, _conv = _one_replicate(scenario, rep, seed, boot_B, contrasts,
                                                      strata, ages, cfg, warm_start, c_max)
        except KinriskError as exc:
            log.warning("replicate %d failed: %s", rep, exc)
            failures += 1
            continue
        cens.append(cr)
        for k in labels:
            est[k].append(e[k])
            ses[k].append(s[k])
            cover[k].append(lo[k] <= truth[k] <= hi[k])
        if progress is not None:
            progress(rep)
    rows = []
    for k in labels:
        v = np.array(est[k])
        n_ok = v.size
        mean = float(v.mean()) if n_ok else float("nan")
        sd = float(v.std(ddof=1)) if n_ok > 1 else None
        rows.append({
            "kind": "hr" if "@" not in k else "risk", "label": k, "true": truth[k],
            "mean": mean, "bias": mean - truth[k], "sd": sd,
            "se": float(np.mean(ses[k])) if n_ok else None,
            "cp": float(np.mean(cover[k])) if n_ok else None,
            "mc_se": None if sd is None else sd / math.sqrt(n_ok), "n_ok": n_ok})
    raw = {"est": {k: np.array(v) for k, v in est.items()},
           "se": {k: np.array(v) for k, v in ses.items()},
           "cover": {k: np.array(v) for k, v in cover.items()},
           "censoring": np.array(cens)}
    return ReplicationReport(rows, reps, boot_B, seed, scenario.censor_target, failures,
                             float(np.mean(cens)) if cens else float("nan"), raw)
