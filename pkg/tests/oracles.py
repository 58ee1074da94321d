"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit loops over event times and records)
and share no code with the package.
"""

import math

import numpy as np
from scipy.optimize import minimize


def cox_newton(time, event, covariate_fn, weights=None, tol=1e-12, max_iter=100):
    """Weighted Cox partial likelihood with Breslow ties, solved by plain Newton.

    ``covariate_fn(i, t)`` returns the covariate vector of record ``i`` at
    time ``t`` (time-varying covariates allowed).

    Returns
    -------
    beta : ndarray
    times, jumps : ndarray
        Breslow baseline hazard jumps at the distinct event times.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    n = time.size
    wt = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    times = np.unique(time[event == 1])
    P = len(covariate_fn(0, times[0]))
    cache = {}
    for t in times:
        cache[t] = np.array([covariate_fn(i, t) for i in range(n)], dtype=float)
    beta = np.zeros(P)
    for _ in range(max_iter):
        g = np.zeros(P)
        H = np.zeros((P, P))
        for t in times:
            Xt = cache[t]
            at_risk = time >= t
            dead = (time == t) & (event == 1)
            d = wt[dead].sum()
            r = wt[at_risk] * np.exp(Xt[at_risk] @ beta)
            s0 = r.sum()
            s1 = r @ Xt[at_risk]
            s2 = (Xt[at_risk] * r[:, None]).T @ Xt[at_risk]
            g += wt[dead] @ Xt[dead] - d * s1 / s0
            H -= d * (s2 / s0 - np.outer(s1, s1) / s0 ** 2)
        step = np.linalg.solve(-H, g)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    jumps = []
    for t in times:
        Xt = cache[t]
        at_risk = time >= t
        dead = (time == t) & (event == 1)
        jumps.append(wt[dead].sum() / (wt[at_risk] * np.exp(Xt[at_risk] @ beta)).sum())
    return beta, times, np.array(jumps)


def nelson_aalen(time, event, weights=None):
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    wt = np.ones(time.size) if weights is None else np.asarray(weights, dtype=float)
    times = np.unique(time[event == 1])
    jumps = np.array([wt[(time == t) & (event == 1)].sum() / wt[time >= t].sum() for t in times])
    return times, jumps


def mixture_loglik(y, delta, p, w, beta, eta, times, jumps):
    """Observed-data log-likelihood of the single-gene model with constant beta.

    One covariate ``w`` (relative level), no interaction, no Z.
    """
    ll = 0.0
    for i in range(len(y)):
        cum = sum(j for t, j in zip(times, jumps) if t <= y[i])
        jump_here = sum(j for t, j in zip(times, jumps) if t == y[i])
        terms = []
        for x, prob in ((1, p[i]), (0, 1 - p[i])):
            lin = beta * x + eta * w[i]
            surv = math.exp(-cum * math.exp(lin))
            haz = (jump_here * math.exp(lin)) if delta[i] else 1.0
            terms.append(prob * haz * surv)
        ll += math.log(sum(terms))
    return ll


def direct_max_loglik(y, delta, p, w, starts=8, seed=0):
    """Maximize :func:`mixture_loglik` over (beta, eta, log jumps) with BFGS from several starts."""
    times = np.unique(np.asarray(y)[np.asarray(delta) == 1])
    D = times.size

    def nll(v):
        try:
            return -mixture_loglik(y, delta, p, w, v[0], v[1], times, np.exp(v[2:]))
        except (OverflowError, ValueError):
            return 1e300

    rng = np.random.default_rng(seed)
    best = -np.inf
    for s in range(starts):
        x0 = np.zeros(2 + D) if s == 0 else np.concatenate([rng.normal(0, 1, 2),
                                                            rng.normal(-1, 1, D)])
        res = minimize(nll, x0, method="BFGS", options={"gtol": 1e-10, "maxiter": 5000})
        res = minimize(nll, res.x, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20000,
                                "maxfev": 40000})
        best = max(best, -res.fun)
    return best
