"""EM fitting of the covariate-adjusted censored mixture hazard model.

Hazard for configuration ``(X, U)``::

    lambda0(t) * exp(beta1(t) X + beta2(t) U + eta'W + theta'W X + gamma'Z)

with ``beta_k(t) = alpha_k' phi_k(t)`` on a B-spline basis and ``lambda0``
a step function with jumps at the observed event times (NPMLE).  Genotype
configurations are latent with known prior probabilities.

The E-step gives posterior configuration probabilities.  The M-step
profiles the baseline jumps out of the expected complete-data
log-likelihood, which leaves a weighted Cox partial likelihood over
(record, configuration) pairs.  A few Newton steps are taken on it, then the
jumps are updated in closed form (Breslow form with mixture risk sets).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import NumericalError, SingularHessianError, ValidationError
from .spline import SplineBasis

FIT_SCHEMA = "kinrisk.fit/1"


@dataclass(frozen=True)
class ModelSpec:
    """Model structure.

    Parameters
    ----------
    basis : SplineBasis
        Basis for the carrier log hazard ratio ``beta(t)``; use
        ``SplineBasis.constant()`` for a time-invariant effect.
    second_gene : SplineBasis, optional
        Basis for ``beta2(t)``; required for two-gene data.
    interaction : bool
        Include the ``theta' W X`` terms (one per W column).
    w_dim, z_dim : int, optional
        Expected covariate dimensions, checked against the data when given.
    """

    basis: SplineBasis = field(default_factory=SplineBasis.constant)
    second_gene: SplineBasis | None = None
    interaction: bool = False
    w_dim: int | None = None
    z_dim: int | None = None

    def to_dict(self):
        return {"basis": self.basis.to_dict(),
                "second_gene": None if self.second_gene is None else self.second_gene.to_dict(),
                "interaction": self.interaction, "w_dim": self.w_dim, "z_dim": self.z_dim}

    @classmethod
    def from_dict(cls, d):
        sg = d.get("second_gene")
        return cls(SplineBasis.from_dict(d["basis"]),
                   None if sg is None else SplineBasis.from_dict(sg),
                   bool(d["interaction"]), d.get("w_dim"), d.get("z_dim"))


@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-8
    max_iters: int = 2000
    newton_inner: int = 5
    init: object = None  # Params, FitResult or {name: value}

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iters < 1 or self.newton_inner < 1:
            raise ValidationError("max_iters and newton_inner must be >= 1")


@dataclass(frozen=True, eq=False)
class Params:
    """Regression coefficients plus the baseline step function."""

    alpha: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    times: np.ndarray
    jumps: np.ndarray
    alpha2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for k in ("alpha", "eta", "theta", "gamma", "times", "jumps", "alpha2"):
            object.__setattr__(self, k, np.atleast_1d(np.asarray(getattr(self, k), dtype=float)))
        if self.times.shape != self.jumps.shape:
            raise ValidationError("baseline times and jumps must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("baseline times must be strictly increasing")

    @property
    def coef(self):
        return np.concatenate([self.alpha, self.alpha2, self.eta, self.theta, self.gamma])

    def cumhaz(self, t):
        """Baseline cumulative hazard at ``t`` (right-continuous)."""
        c = np.concatenate([[0.0], np.cumsum(self.jumps)])
        return c[np.searchsorted(self.times, t, side="right")]


def _revcumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


class _Design:
    """Data sorted by age plus everything the E- and M-steps reuse."""

    def __init__(self, data: Dataset, spec: ModelSpec):
        dw, dz = data.w.shape[1], data.z.shape[1]
        if spec.w_dim is not None and spec.w_dim != dw:
            raise ValidationError(f"model expects {spec.w_dim} W covariates, data has {dw}")
        if spec.z_dim is not None and spec.z_dim != dz:
            raise ValidationError(f"model expects {spec.z_dim} Z covariates, data has {dz}")
        if data.two_gene and spec.second_gene is None:
            raise ValidationError("two-gene data needs a second_gene basis")
        if spec.second_gene is not None and not data.two_gene:
            raise ValidationError("second_gene basis given but data are single-gene")
        self.spec = spec
        self.n = data.n
        order = np.argsort(data.y, kind="stable")
        self.order = order
        self.y = data.y[order]
        self.delta = data.delta[order].astype(float)
        self.wt = data.weight[order]
        self.prior = data.prior_matrix()[order]
        self.configs = data.configs
        W, Z = data.w[order], data.z[order]
        self.K1 = spec.basis.dim
        self.K2 = spec.second_gene.dim if spec.second_gene is not None else 0
        self.K = self.K1 + self.K2
        self.dw, self.dz = dw, dz
        self.dth = dw if spec.interaction else 0
        self.m = dw + self.dth + dz
        self.P = self.K + self.m
        # static covariates of each configuration: [W, X*W, Z]
        self.S = []
        for x, _u in self.configs:
            blocks = [W] + ([W * x] if spec.interaction else []) + [Z]
            self.S.append(np.hstack(blocks) if self.m else np.zeros((self.n, 0)))
        # per-record moments [1, s, s s'] so risk-set sums take one pass
        self.M = [np.hstack([np.ones((self.n, 1)), Sc,
                             (Sc[:, :, None] * Sc[:, None, :]).reshape(self.n, -1)])
                  for Sc in self.S]
        ev = self.delta == 1
        self.t = np.unique(self.y[ev])
        self.D = self.t.size
        self.n_le = np.searchsorted(self.t, self.y, side="right")
        self.ev = ev
        self.ev_idx = np.where(ev, self.n_le - 1, 0)
        self.dcount = np.bincount(self.ev_idx[ev], weights=self.wt[ev], minlength=self.D)
        self.start = np.searchsorted(self.y, self.t, side="left")
        self.V = self._time_design(self.t)
        self.names = coef_names(spec, data.w_names, data.z_names)
        # spline blocks of genes that no record can carry stay at zero
        active = np.ones(self.P, dtype=bool)
        pos = self.prior > 0
        carries_x = any(x == 1 and pos[:, c].any() for c, (x, _u) in enumerate(self.configs))
        carries_u = any(u == 1 and pos[:, c].any() for c, (_x, u) in enumerate(self.configs))
        if not carries_x:
            active[:self.K1] = False
            if spec.interaction:
                active[self.K + dw:self.K + 2 * dw] = False
        if not carries_u:
            active[self.K1:self.K] = False
        self.active = active

    def _time_design(self, times):
        """Per configuration, the time-varying design [X phi1(t), U phi2(t)] at ``times``."""
        phi1 = self.spec.basis(times) if times.size else np.zeros((0, self.K1))
        phi2 = (self.spec.second_gene(times) if self.K2 and times.size
                else np.zeros((times.size, self.K2)))
        return [np.hstack([x * phi1, u * phi2]) for x, u in self.configs]

    def split(self, b):
        return b[:self.K], b[self.K:]

    # -- parameters ---------------------------------------------------------

    def make_params(self, b, times, jumps):
        K1, K, dw = self.K1, self.K, self.dw
        zeta = b[K:]
        return Params(alpha=b[:K1].copy(), alpha2=b[K1:K].copy(), eta=zeta[:dw].copy(),
                      theta=zeta[dw:dw + self.dth].copy(), gamma=zeta[dw + self.dth:].copy(),
                      times=np.array(times), jumps=np.array(jumps))

    def coef_of(self, params: Params):
        b = params.coef
        if b.size != self.P:
            raise ValidationError(
                f"parameter vector has {b.size} entries, model needs {self.P}")
        return b

    # -- E-step -------------------------------------------------------------

    @np.errstate(over="ignore", invalid="ignore")
    def loglik_matrix(self, params: Params):
        """Log-likelihood of each record under each configuration (prior excluded)."""
        b = self.coef_of(params)
        alpha, zeta = self.split(b)
        times, jumps = params.times, params.jumps
        if times.size == 0:
            if self.ev.any():
                raise ValidationError("baseline has no jump at an observed event time")
            return np.zeros((self.n, len(self.configs)))
        if times.shape == self.t.shape and np.array_equal(times, self.t):
            VT, ev_pos = self.V, self.ev_idx
        else:
            VT = self._time_design(times)
            ev_pos = np.searchsorted(times, self.y, side="right") - 1
            hit = (ev_pos >= 0) & (times[np.maximum(ev_pos, 0)] == self.y)
            if np.any(self.ev & ~hit):
                raise ValidationError("baseline has no jump at an observed event time")
        k = np.searchsorted(times, self.y, side="right")
        if np.any(jumps <= 0) and self.ev.any():
            if np.any(jumps[ev_pos[self.ev]] <= 0):
                raise ValidationError("baseline jump at an observed event time must be positive")
        with np.errstate(divide="ignore"):
            logjump = np.where(self.ev, np.log(jumps[ev_pos]) if jumps.size else 0.0, 0.0)
        out = np.empty((self.n, len(self.configs)))
        for c in range(len(self.configs)):
            g = np.exp(VT[c] @ alpha) if VT[c].size else np.ones(times.size)
            H = np.concatenate([[0.0], np.cumsum(jumps * g)])[k]
            lin = self.S[c] @ zeta
            tv = VT[c][ev_pos] @ alpha if times.size else np.zeros(self.n)
            out[:, c] = -np.exp(lin) * H + self.delta * (logjump + tv + lin)
        return out

    def posterior(self, params: Params):
        """(weighted observed log-likelihood, posterior matrix) in sorted order."""
        L = self.loglik_matrix(params)
        pos = self.prior > 0
        Lm = np.where(pos, L, -np.inf)
        mx = Lm.max(axis=1)
        if np.any(~np.isfinite(mx)):
            raise NumericalError("all configuration likelihoods vanish for some record")
        r = np.where(pos, np.exp(np.where(pos, L - mx[:, None], 0.0)), 0.0)
        pr = self.prior * r
        s = pr.sum(axis=1)
        q = pr / s[:, None]
        ll = float(np.sum(self.wt * (mx + np.log(s))))
        return ll, q

    # -- M-step -------------------------------------------------------------

    def observed_part(self, q):
        """Sum over events of the posterior-expected covariate vector at the event age."""
        xbar = np.zeros(self.P)
        ev = self.ev
        we = self.wt[ev]
        for c in range(len(self.configs)):
            wq = we * q[ev, c]
            xbar[:self.K] += wq @ self.V[c][self.ev_idx[ev]]
            xbar[self.K:] += wq @ self.S[c][ev]
        return xbar

    @np.errstate(over="ignore", invalid="ignore")
    def risk_sums(self, b, q, order=2):
        """Mixture risk-set sums S0 (D,), S1 (D, P), S2 (D, P, P) at each event time."""
        alpha, zeta = self.split(b)
        K, D, st = self.K, self.D, self.start
        S0 = np.zeros(D)
        S1 = np.zeros((D, self.P)) if order >= 1 else None
        S2 = np.zeros((D, self.P, self.P)) if order >= 2 else None
        m = self.m
        ncol = 1 if order == 0 else (1 + m if order == 1 else 1 + m + m * m)
        for c in range(len(self.configs)):
            qc = q[:, c]
            if not np.any(qc):
                continue
            Sc, Vc = self.S[c], self.V[c]
            with np.errstate(over="ignore"):
                om = self.wt * qc * np.exp(Sc @ zeta)
                g = np.exp(Vc @ alpha) if K else np.ones(D)
            if not D:
                continue
            # sums over each block of records between consecutive event times,
            # then a reverse cumulative sum over blocks gives the risk sets
            A = _revcumsum(np.add.reduceat(om[:, None] * self.M[c][:, :ncol], st, axis=0))
            A0 = A[:, 0]
            gA0 = g * A0
            S0 += gA0
            if order >= 1:
                A1 = A[:, 1:1 + m]
                S1[:, :K] += gA0[:, None] * Vc
                S1[:, K:] += g[:, None] * A1
            if order >= 2:
                A2 = A[:, 1 + m:].reshape(D, m, m)
                S2[:, :K, :K] += gA0[:, None, None] * Vc[:, :, None] * Vc[:, None, :]
                cross = g[:, None, None] * Vc[:, :, None] * A1[:, None, :]
                S2[:, :K, K:] += cross
                S2[:, K:, :K] += cross.transpose(0, 2, 1)
                S2[:, K:, K:] += g[:, None, None] * A2
        if np.any(S0 <= 0) and D:
            raise NumericalError("empty mixture risk set at an event time")
        return S0, S1, S2

    def objective(self, b, q, xbar=None):
        if xbar is None:
            xbar = self.observed_part(q)
        S0, _, _ = self.risk_sums(b, q, order=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return float(xbar @ b - self.dcount @ np.log(S0))

    def derivatives(self, b, q, xbar=None):
        """Profiled objective, score and Hessian."""
        if xbar is None:
            xbar = self.observed_part(q)
        S0, S1, S2 = self.risk_sums(b, q, order=2)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            mu = S1 / S0[:, None]
            obj = float(xbar @ b - self.dcount @ np.log(S0))
            score = xbar - self.dcount @ mu
            hess = -(np.einsum("d,dij->ij", self.dcount / S0, S2)
                     - np.einsum("d,di,dj->ij", self.dcount, mu, mu))
        if not (np.isfinite(obj) and np.all(np.isfinite(score)) and np.all(np.isfinite(hess))):
            raise NumericalError(
                "non-finite M-step derivatives at coefficients "
                + ", ".join(f"{n}={v:.3g}" for n, v in zip(self.names, b))
                + "; estimates are diverging (monotone likelihood, e.g. separation)")
        return obj, score, hess

    def baseline(self, b, q):
        S0, _, _ = self.risk_sums(b, q, order=0)
        return self.dcount / S0

    def newton(self, b, q, max_steps, tol=1e-9):
        b = b.copy()
        act = self.active
        if not act.any():
            return b
        xbar = self.observed_part(q)
        obj, score, hess = self.derivatives(b, q, xbar)
        for _ in range(max_steps):
            g = score[act]
            if np.max(np.abs(g)) < tol:
                break
            Ha = -hess[np.ix_(act, act)]
            step = self._solve(Ha, g)
            lam = 1.0
            for _half in range(60):
                trial = b.copy()
                trial[act] += lam * step
                new = self.objective(trial, q, xbar)
                if np.isfinite(new) and new >= obj:
                    break
                lam *= 0.5
            else:
                break
            b = trial
            obj, score, hess = self.derivatives(b, q, xbar)
        return b

    def _solve(self, A, g):
        ev, evec = np.linalg.eigh(A)
        top = max(abs(ev[-1]), 1e-300)
        if ev[0] <= 1e-11 * top:
            names = [n for n, a in zip(self.names, self.active) if a]
            v = evec[:, 0]
            idx = np.argsort(-np.abs(v))
            direction = {names[i]: float(v[i]) for i in idx if abs(v[i]) > 1e-3}
            raise SingularHessianError(
                "singular M-step Hessian; non-identifiable direction: "
                + ", ".join(f"{k} ({val:+.3f})" for k, val in direction.items())
                + " (e.g. a covariate constant within both mixture components)",
                direction)
        return evec @ ((evec.T @ g) / ev)

    # -- order helpers --------------------------------------------------------

    def to_original(self, a):
        out = np.empty_like(a)
        out[self.order] = a
        return out

    def to_sorted(self, a):
        return np.asarray(a)[self.order]


def coef_names(spec: ModelSpec, w_names, z_names):
    def block(basis, stem, const):
        return [const] if basis.is_constant else [f"{stem}[{j}]" for j in range(basis.dim)]
    names = block(spec.basis, "alpha", "beta")
    if spec.second_gene is not None:
        names += block(spec.second_gene, "alpha2", "beta2")
    names += [f"eta[{w}]" for w in w_names]
    if spec.interaction:
        names += [f"theta[{w}]" for w in w_names]
    names += [f"gamma[{z}]" for z in z_names]
    return names


# ---------------------------------------------------------------------------
# public operations


def _q_matrix(design: _Design, q):
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        if len(design.configs) != 2:
            raise ValidationError("two-gene models need a (n, 4) posterior matrix")
        q = np.column_stack([1.0 - q, q])
    if q.shape != (design.n, len(design.configs)):
        raise ValidationError(f"posterior has shape {q.shape}, expected ({design.n}, "
                              f"{len(design.configs)})")
    if np.any(q < 0) or np.any(q > 1):
        raise ValidationError("posterior probabilities must lie in [0, 1]")
    return design.to_sorted(q)


def _q_public(design: _Design, q_sorted):
    q = design.to_original(q_sorted)
    return q[:, 1] if len(design.configs) == 2 else q


def observed_loglik(data: Dataset, spec: ModelSpec, params: Params):
    """Weighted observed-data (mixture) log-likelihood."""
    return _Design(data, spec).posterior(params)[0]


def e_step(data: Dataset, spec: ModelSpec, params: Params):
    """Posterior carrier probabilities ``q`` (shape (n,), or (n, 4) for two genes)."""
    d = _Design(data, spec)
    return _q_public(d, d.posterior(params)[1])


def m_step_baseline(data: Dataset, spec: ModelSpec, q, params: Params):
    """Closed-form baseline jumps at the distinct event times.

    Returns
    -------
    times, jumps : ndarray
    """
    d = _Design(data, spec)
    if d.D == 0:
        raise ValidationError("no events: baseline hazard has no jumps")
    return d.t.copy(), d.baseline(d.coef_of(params), _q_matrix(d, q))


def m_step_coeffs(data: Dataset, spec: ModelSpec, q, params: Params, newton_inner=5):
    """Newton-Raphson update of (alpha, eta, theta, gamma) with ``q`` held fixed.

    The baseline jumps of ``params`` are carried over unchanged.
    """
    d = _Design(data, spec)
    if d.D == 0:
        raise ValidationError("no events: coefficients are not estimable")
    b = d.newton(d.coef_of(params), _q_matrix(d, q), newton_inner)
    return d.make_params(b, params.times, params.jumps)


def profiled_objective(data: Dataset, spec: ModelSpec, q, coef):
    """Expected complete-data log-likelihood with the jumps profiled out (up to a constant)."""
    d = _Design(data, spec)
    return d.objective(np.asarray(coef, dtype=float), _q_matrix(d, q))


def profiled_score(data: Dataset, spec: ModelSpec, q, coef):
    """Analytic gradient of :func:`profiled_objective`."""
    d = _Design(data, spec)
    return d.derivatives(np.asarray(coef, dtype=float), _q_matrix(d, q))[1]


def profiled_hessian(data: Dataset, spec: ModelSpec, q, coef):
    d = _Design(data, spec)
    return d.derivatives(np.asarray(coef, dtype=float), _q_matrix(d, q))[2]


@dataclass(eq=False)
class FitResult:
    """Output of :func:`fit`.

    ``q`` holds the carrier posterior per record in input order
    (``posterior`` holds all configuration posteriors).  ``loglik_trace``
    starts at the initial values and has one entry per EM iteration.
    """

    spec: ModelSpec
    params: Params
    coef_names: list
    w_names: tuple
    z_names: tuple
    q: np.ndarray
    posterior: np.ndarray
    loglik: float
    loglik_trace: list
    iters: int
    converged: bool
    n: int

    @property
    def alpha(self):
        return self.params.alpha

    @property
    def alpha2(self):
        return self.params.alpha2

    @property
    def eta(self):
        return self.params.eta

    @property
    def theta(self):
        return self.params.theta

    @property
    def gamma(self):
        return self.params.gamma

    @property
    def coef(self):
        return self.params.coef

    @property
    def coef_dict(self):
        return dict(zip(self.coef_names, self.params.coef.tolist()))

    @property
    def baseline(self):
        return self.params.times, self.params.jumps

    def beta(self, t):
        """Carrier log hazard ratio ``beta(t)``."""
        return self.spec.basis(t) @ self.params.alpha

    @property
    def n_coef(self):
        return int(self.params.coef.size)

    def to_dict(self):
        p = self.params
        return {
            "schema": FIT_SCHEMA,
            "spec": self.spec.to_dict(),
            "w_names": list(self.w_names), "z_names": list(self.z_names),
            "coefficients": {"alpha": p.alpha.tolist(), "alpha2": p.alpha2.tolist(),
                             "eta": p.eta.tolist(), "theta": p.theta.tolist(),
                             "gamma": p.gamma.tolist()},
            "coef_names": list(self.coef_names),
            "baseline": [[float(t), float(j)] for t, j in zip(p.times, p.jumps)],
            "loglik": self.loglik, "loglik_trace": list(self.loglik_trace),
            "iters": self.iters, "converged": self.converged, "n": self.n,
            "q": self.q.tolist(), "posterior": self.posterior.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != FIT_SCHEMA:
            raise ValidationError(f"unsupported fit-result schema {d.get('schema')!r}")
        c = d["coefficients"]
        base = np.array(d["baseline"], dtype=float).reshape(-1, 2)
        params = Params(alpha=c["alpha"], alpha2=c["alpha2"], eta=c["eta"], theta=c["theta"],
                        gamma=c["gamma"], times=base[:, 0], jumps=base[:, 1])
        return cls(ModelSpec.from_dict(d["spec"]), params, list(d["coef_names"]),
                   tuple(d["w_names"]), tuple(d["z_names"]), np.array(d["q"], dtype=float),
                   np.array(d["posterior"], dtype=float), float(d["loglik"]),
                   [float(v) for v in d["loglik_trace"]], int(d["iters"]),
                   bool(d["converged"]), int(d["n"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _initial_coef(design: _Design, init):
    b = np.zeros(design.P)
    if init is None:
        return b, None
    if isinstance(init, FitResult):
        init = init.params
    if isinstance(init, Params):
        return design.coef_of(init).copy(), init
    for name, value in dict(init).items():
        if name not in design.names:
            raise ValidationError(f"unknown initial parameter {name!r}; known: {design.names}")
        b[design.names.index(name)] = value
    return b, None


def fit(data: Dataset, spec: ModelSpec, cfg: EmConfig = EmConfig(),
        callback: Callable | None = None) -> FitResult:
    """Maximize the observed mixture likelihood by EM.

    Each iteration takes up to ``cfg.newton_inner`` Newton steps (with step
    halving) on the profiled M-step objective, then updates the baseline
    jumps in closed form and recomputes the posteriors.  Iteration stops when
    ``|l_k - l_{k-1}| / (|l_{k-1}| + 1) < cfg.tol``.

    ``callback(iteration, params, posterior)`` is called after every
    iteration with the posterior matrix in input order.
    """
    data.check_identifiable()
    if not np.any(data.delta == 1):
        raise ValidationError("degenerate data: no events observed")
    d = _Design(data, spec)
    b, init_params = _initial_coef(d, cfg.init)
    if init_params is not None and np.array_equal(init_params.times, d.t):
        params = d.make_params(b, d.t, init_params.jumps)
    else:
        params = d.make_params(b, d.t, d.baseline(b, d.prior))
    ll, q = d.posterior(params)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        b = d.newton(b, q, cfg.newton_inner)
        params = d.make_params(b, d.t, d.baseline(b, q))
        ll_new, q = d.posterior(params)
        trace.append(ll_new)
        if ll_new < ll - 1e-6 * (abs(ll) + 1.0):
            # an EM step cannot lower the likelihood; only precision loss can
            raise NumericalError(
                f"log-likelihood fell from {ll:.6f} to {ll_new:.6f} at iteration {it}; "
                "coefficients "
                + ", ".join(f"{n}={v:.3g}" for n, v in zip(d.names, b))
                + " are diverging (monotone likelihood, e.g. separation)")
        if callback is not None:
            callback(it, params, d.to_original(q))
        done = abs(ll_new - ll) / (abs(ll) + 1.0) < cfg.tol
        ll = ll_new
        if done:
            converged = True
            break
    post = d.to_original(q)
    carrier = post[:, [c for c, (x, _u) in enumerate(d.configs) if x == 1]].sum(axis=1)
    return FitResult(spec=spec, params=params, coef_names=list(d.names),
                     w_names=data.w_names, z_names=data.z_names, q=carrier, posterior=post,
                     loglik=ll, loglik_trace=trace, iters=it, converged=converged, n=data.n)


def fit_multigene(data: Dataset, spec: ModelSpec, cfg: EmConfig = EmConfig(),
                  callback: Callable | None = None) -> FitResult:
    """Two-gene fit; posteriors range over the four (X, U) configurations."""
    if not data.two_gene:
        raise ValidationError("fit_multigene needs 4-configuration probabilities")
    if spec.second_gene is None:
        raise ValidationError("fit_multigene needs spec.second_gene")
    return fit(data, spec, cfg, callback)


def with_coef(params: Params, **coefs) -> Params:
    """Copy of ``params`` with named coefficient blocks replaced."""
    return replace(params, **{k: np.atleast_1d(np.asarray(v, dtype=float))
                              for k, v in coefs.items()})
