"""Clamped B-spline bases for a time-varying log hazard ratio.

The carrier log hazard ratio is ``beta(t) = sum_j alpha_j * phi_j(t)``.  A
degree-0 basis without interior knots is the constant function 1, which is
how the time-invariant (Cox PH) genotype effect is represented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SplineBasis:
    degree: int
    interior_knots: tuple
    boundary: tuple

    def __post_init__(self):
        lo, hi = (float(b) for b in self.boundary)
        knots = tuple(float(k) for k in self.interior_knots)
        object.__setattr__(self, "boundary", (lo, hi))
        object.__setattr__(self, "interior_knots", knots)
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValidationError(f"degree must be a non-negative integer, got {self.degree!r}")
        object.__setattr__(self, "degree", int(self.degree))
        if not hi > lo and (knots or self.degree > 0):
            raise ValidationError(f"boundary must satisfy t_min < t_max, got {self.boundary}")
        if any(not (lo < k < hi) for k in knots):
            raise ValidationError("interior knots must lie strictly inside the boundary")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValidationError("interior knots must be strictly increasing")

    @classmethod
    def constant(cls, boundary=(0.0, 1.0)):
        """One-dimensional basis phi_1(t) = 1 (time-invariant effect)."""
        return cls(0, (), boundary)

    @property
    def is_constant(self):
        return self.degree == 0 and not self.interior_knots

    @property
    def dim(self):
        """Number of basis functions K_n."""
        return len(self.interior_knots) + self.degree + 1

    @property
    def knot_vector(self):
        lo, hi = self.boundary
        p = self.degree
        return np.array([lo] * (p + 1) + list(self.interior_knots) + [hi] * (p + 1))

    def __call__(self, t):
        return eval_basis(self, t)

    def to_dict(self):
        return {"degree": self.degree, "interior_knots": list(self.interior_knots),
                "boundary": list(self.boundary)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["degree"]), tuple(d["interior_knots"]), tuple(d["boundary"]))


def place_knots(event_times, n_knots, degree, boundary=None):
    """Basis with interior knots at equally spaced quantiles of the event times.

    Knots sit at quantile levels ``k / (n_knots + 1)``, ``k = 1..n_knots``
    (linear interpolation of order statistics).  The boundary defaults to
    the range of ``event_times``; pass the range of all observed ages to
    widen it.
    """
    t = np.sort(np.asarray(event_times, dtype=float))
    if t.size == 0:
        raise ValidationError("place_knots needs at least one event time")
    if n_knots < 0 or int(n_knots) != n_knots:
        raise ValidationError(f"n_knots must be a non-negative integer, got {n_knots!r}")
    n_knots = int(n_knots)
    if boundary is None:
        boundary = (t[0], t[-1])
    if degree == 0 and n_knots == 0:
        return SplineBasis.constant(boundary)
    if degree not in (1, 2, 3):
        raise ValidationError(f"degree must be 1, 2 or 3, got {degree!r}")
    n_distinct = np.unique(t).size
    if n_distinct < n_knots + 2:
        raise ValidationError(
            f"{n_knots} interior knots need at least {n_knots + 2} distinct event times, "
            f"got {n_distinct}")
    levels = np.arange(1, n_knots + 1) / (n_knots + 1)
    knots = np.quantile(t, levels) if n_knots else np.empty(0)
    lo, hi = float(boundary[0]), float(boundary[1])
    if np.any(knots <= lo) or np.any(knots >= hi) or np.any(np.diff(knots) <= 0):
        raise ValidationError(
            f"quantile knots {knots.tolist()} are tied or touch the boundary; "
            "too few distinct event times for this many knots")
    return SplineBasis(degree, tuple(knots.tolist()), (lo, hi))


def eval_basis(basis: SplineBasis, t):
    """Evaluate all basis functions at ``t`` by the Cox-de Boor recursion.

    Ages outside the boundary are clamped to it.

    Returns
    -------
    ndarray, shape (K,) for scalar ``t`` or (len(t), K)
    """
    scalar = np.ndim(t) == 0
    x = np.atleast_1d(np.asarray(t, dtype=float))
    K = basis.dim
    if basis.is_constant:
        out = np.ones((x.size, 1))
        return out[0] if scalar else out
    lo, hi = basis.boundary
    x = np.clip(x, lo, hi)
    p = basis.degree
    u = basis.knot_vector
    # span s with u[s] <= x < u[s+1]; the right boundary uses the last span
    s = np.searchsorted(u, x, side="right") - 1
    s = np.clip(s, p, K - 1)
    N = np.zeros((x.size, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((x.size, p + 1))
    right = np.zeros((x.size, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - u[s + 1 - j]
        right[:, j] = u[s + j] - x
        saved = np.zeros(x.size)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    out = np.zeros((x.size, K))
    rows = np.arange(x.size)[:, None]
    out[rows, s[:, None] - p + np.arange(p + 1)] = N
    return out[0] if scalar else out
