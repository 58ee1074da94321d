"""Relative-level survival records, CSV ingestion and Mendelian carrier probabilities.

A :class:`Dataset` stores one row per relative: the observed age ``y``
(onset or censoring), the event indicator ``delta``, the prior probability of
each genotype configuration, relative-level covariates ``w`` and
family/proband-level covariates ``z``, and a positive likelihood weight.

Single-gene data carry a scalar carrier probability per record.  Two-gene
data carry a 4-vector ordered ``(X, U) = (0,0), (0,1), (1,0), (1,1)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import IdentifiabilityError, ParseError, ValidationError

#: Genotype configurations (X, U) of the two-gene model, in column order.
TWO_GENE_CONFIGS = ((0, 0), (0, 1), (1, 0), (1, 1))

RELATIONS = ("parent", "sibling", "child")
PROBAND_GENOTYPES = ("noncarrier", "het_carrier", "hom_carrier")
_PROBAND_ALIASES = {"0": "noncarrier", "1": "het_carrier", "2": "hom_carrier"}
_MISSING = {"", "na", "nan", "null", "none", "."}

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class RelativeRecord:
    """One relative's observation.

    ``config_probs`` is a float for the single-gene model and a length-4
    tuple for the two-gene model.
    """

    family_id: str
    relative_id: str
    y: float
    delta: int
    config_probs: float | tuple
    w: tuple = ()
    z: tuple = ()
    weight: float = 1.0

    def __post_init__(self):
        if not str(self.family_id):
            raise ValidationError("family_id must be non-empty")
        if not (self.y > 0):
            raise ValidationError(f"y must be positive, got {self.y!r}")
        if self.delta not in (0, 1):
            raise ValidationError(f"delta must be 0 or 1, got {self.delta!r}")
        if not (self.weight > 0):
            raise ValidationError(f"weight must be positive, got {self.weight!r}")
        p = np.atleast_1d(np.asarray(self.config_probs, dtype=float))
        if p.size not in (1, 4):
            raise ValidationError("config_probs must be a scalar or a 4-vector")
        _check_probs(p.reshape(1, -1) if p.size == 4 else p)


def _check_probs(p, where=""):
    """Validate a (n,) carrier-probability vector or a (n, 4) configuration matrix."""
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValidationError(f"carrier probabilities must lie in [0, 1]{where}")
    if p.ndim == 2 and p.shape[1] > 1:
        bad = np.abs(p.sum(axis=1) - 1.0) > _SUM_TOL
        if np.any(bad):
            raise ValidationError(
                f"configuration probabilities must sum to 1{where}"
                f" (first offending record {int(np.argmax(bad))})")


@dataclass
class IngestReport:
    """What happened while reading a CSV file."""

    n_read: int = 0
    dropped: list = field(default_factory=list)  # (row number, reason)

    @property
    def n_dropped(self):
        return len(self.dropped)

    def text(self):
        lines = [f"rows read: {self.n_read}", f"dropped: {self.n_dropped}"]
        lines += [f"  row {row}: {reason}" for row, reason in self.dropped]
        return "\n".join(lines) + "\n"


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of relative records.

    Parameters
    ----------
    family_id, relative_id : sequence of str
    y : array_like, shape (n,)
        Observed age, ``min(T, C)``.
    delta : array_like, shape (n,)
        1 if onset was observed.
    probs : array_like, shape (n,) or (n, 4)
        Carrier probability (single gene) or configuration probabilities.
    w, z : array_like, shape (n, dw) and (n, dz)
    weight : array_like, shape (n,), optional
    w_names, z_names : sequence of str, optional
    """

    family_id: np.ndarray
    relative_id: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    probs: np.ndarray
    w: np.ndarray
    z: np.ndarray
    weight: np.ndarray = None
    w_names: tuple = None
    z_names: tuple = None
    report: IngestReport | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        n = y.shape[0]
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("y", _frozen(y, float))
        set_("family_id", _frozen([str(f) for f in self.family_id], object))
        set_("relative_id", _frozen([str(r) for r in self.relative_id], object))
        set_("delta", _frozen(self.delta, np.int64))
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim == 2 and probs.shape[1] == 1:
            probs = probs[:, 0]
        set_("probs", _frozen(probs, float))
        for name in ("w", "z"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.size == 0:
                a = np.zeros((n, 0))
            elif a.ndim == 1:
                a = a[:, None]
            set_(name, _frozen(a, float))
        weight = np.ones(n) if self.weight is None else self.weight
        set_("weight", _frozen(weight, float))
        wn = self.w_names if self.w_names is not None else [f"w{j}" for j in range(self.w.shape[1])]
        zn = self.z_names if self.z_names is not None else [f"z{j}" for j in range(self.z.shape[1])]
        set_("w_names", tuple(wn))
        set_("z_names", tuple(zn))
        self._validate()

    def _validate(self):
        n = self.y.shape[0]
        for name in ("family_id", "relative_id", "delta", "weight"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have length {n}")
        if self.probs.shape[0] != n or self.probs.ndim not in (1, 2):
            raise ValidationError("probs must have one entry (or row) per record")
        if self.probs.ndim == 2 and self.probs.shape[1] != 4:
            raise ValidationError("multi-configuration probabilities must be 4-vectors")
        if self.w.shape[0] != n or self.z.shape[0] != n:
            raise ValidationError("covariate matrices must have one row per record")
        if len(self.w_names) != self.w.shape[1] or len(self.z_names) != self.z.shape[1]:
            raise ValidationError("covariate names do not match covariate dimensions")
        if np.any(~np.isfinite(self.y)) or np.any(self.y <= 0):
            raise ValidationError(f"y must be positive (first bad record {_first(~(self.y > 0))})")
        if np.any((self.delta != 0) & (self.delta != 1)):
            raise ValidationError("delta must be 0 or 1")
        if np.any(~np.isfinite(self.weight)) or np.any(self.weight <= 0):
            raise ValidationError("weights must be positive")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.z))):
            raise ValidationError("covariates must be finite")
        _check_probs(self.probs)
        if any(f == "" for f in self.family_id):
            raise ValidationError("family_id must be non-empty")
        keys = set(zip(self.family_id, self.relative_id))
        if len(keys) != n:
            raise ValidationError("(family_id, relative_id) pairs must be unique")

    # -- views -------------------------------------------------------------

    @property
    def n(self):
        return self.y.shape[0]

    def __len__(self):
        return self.n

    @property
    def two_gene(self):
        return self.probs.ndim == 2

    @property
    def n_configs(self):
        return 4 if self.two_gene else 2

    @property
    def configs(self):
        """Genotype configurations ``(X, U)`` matching :meth:`prior_matrix` columns."""
        return TWO_GENE_CONFIGS if self.two_gene else ((0, 0), (1, 0))

    def prior_matrix(self):
        """Prior probability of each configuration, shape (n, n_configs)."""
        if self.two_gene:
            return np.array(self.probs)
        return np.column_stack([1.0 - self.probs, self.probs])

    @property
    def carrier_prior(self):
        """Marginal prior P(X = 1) per record."""
        if self.two_gene:
            return self.probs[:, 2] + self.probs[:, 3]
        return np.array(self.probs)

    @property
    def distinct_probs(self):
        """Distinct carrier-probability values (rows for 4-vectors), sorted."""
        if self.two_gene:
            return [tuple(r) for r in np.unique(self.probs, axis=0)]
        return [float(v) for v in np.unique(self.probs)]

    @property
    def records(self):
        out = []
        for i in range(self.n):
            p = tuple(float(v) for v in self.probs[i]) if self.two_gene else float(self.probs[i])
            out.append(RelativeRecord(
                self.family_id[i], self.relative_id[i], float(self.y[i]), int(self.delta[i]), p,
                tuple(float(v) for v in self.w[i]), tuple(float(v) for v in self.z[i]),
                float(self.weight[i])))
        return out

    @property
    def families(self):
        """Unique family ids in first-appearance order and the record -> family index."""
        uniq, first, inverse = np.unique(self.family_id.astype(str), return_index=True,
                                         return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        return [str(u) for u in uniq[order]], rank[inverse]

    # -- constructors and derived datasets -----------------------------------

    @classmethod
    def from_records(cls, records: Sequence[RelativeRecord], w_names=None, z_names=None):
        records = list(records)
        if not records:
            raise ValidationError("dataset is empty")
        dims = {(len(r.w), len(r.z)) for r in records}
        if len(dims) != 1:
            raise ValidationError("w and z must have the same length for every record")
        dw, dz = dims.pop()
        return cls(
            family_id=[r.family_id for r in records],
            relative_id=[r.relative_id for r in records],
            y=[r.y for r in records],
            delta=[r.delta for r in records],
            probs=[r.config_probs for r in records],
            w=np.array([r.w for r in records], dtype=float).reshape(len(records), dw),
            z=np.array([r.z for r in records], dtype=float).reshape(len(records), dz),
            weight=[r.weight for r in records],
            w_names=w_names, z_names=z_names)

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in
              ("family_id", "relative_id", "y", "delta", "probs", "w", "z",
               "weight", "w_names", "z_names")}
        kw.update(changes)
        return Dataset(**kw)

    def with_weights(self, weight):
        """Copy with record weights replaced."""
        return self.replace(weight=weight)

    def subset(self, mask):
        mask = np.asarray(mask)
        if mask.dtype != bool:
            idx = mask
        else:
            idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ValidationError("subset is empty")
        return Dataset(self.family_id[idx], self.relative_id[idx], self.y[idx],
                       self.delta[idx], self.probs[idx], self.w[idx], self.z[idx],
                       self.weight[idx], self.w_names, self.z_names)

    def check_identifiable(self):
        """Raise :class:`IdentifiabilityError` unless the mixture is identifiable.

        Either every genotype is known (all probabilities are 0 or 1) or at
        least two distinct carrier-probability values are present.
        """
        p = self.probs
        genotyped = np.all((p == 0) | (p == 1))
        if genotyped:
            return
        if len(self.distinct_probs) < 2:
            raise IdentifiabilityError(
                "identifiability rule violated: ungenotyped records are present but "
                "only one distinct carrier probability occurs; at least two distinct "
                "values are required")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.w_names == other.w_names and self.z_names == other.z_names and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("family_id", "relative_id", "y", "delta", "probs", "w", "z", "weight")))

    __hash__ = None


def _first(mask):
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


# ---------------------------------------------------------------------------
# Mendelian carrier probabilities


@dataclass(frozen=True)
class MendelianRules:
    """First-degree dominant transmission with population carrier prevalence ``prevalence``."""

    prevalence: float = 0.0
    inheritance: str = "dominant"

    def __post_init__(self):
        if not (0.0 <= self.prevalence < 1.0):
            raise ValidationError(f"prevalence must lie in [0, 1), got {self.prevalence!r}")
        if self.inheritance != "dominant":
            raise ValidationError("only the dominant inheritance model is supported")


def assign_carrier_probability(relation, proband_genotype, relative_genotype=None,
                               rules: MendelianRules = MendelianRules()):
    """Prior probability that a first-degree relative carries the mutation.

    Parameters
    ----------
    relation : {'parent', 'sibling', 'child'}
        Relation of the relative to the proband.
    proband_genotype : {'noncarrier', 'het_carrier', 'hom_carrier'}
    relative_genotype : {0, 1, None}
        Observed genotype of the relative, if any. It overrides inference.
    rules : MendelianRules

    Returns
    -------
    float

    Notes
    -----
    Relatives of a heterozygous proband get ``0.5 * (1 + c)``, relatives of a
    non-carrier get the prevalence ``c``.  A homozygous proband transmits to
    every child and must have two carrier parents; a sibling then escapes
    only if neither (heterozygous) parent transmits, giving 0.75.
    """
    relation = str(relation).strip().lower()
    if relation not in RELATIONS:
        raise ValidationError(f"unknown relation {relation!r}; expected one of {RELATIONS}")
    if relative_genotype is not None:
        g = int(relative_genotype)
        if g not in (0, 1):
            raise ValidationError(f"relative genotype must be 0 or 1, got {relative_genotype!r}")
        return float(g)
    pg = _PROBAND_ALIASES.get(str(proband_genotype).strip(), str(proband_genotype).strip().lower())
    if pg not in PROBAND_GENOTYPES:
        raise ValidationError(f"unknown proband genotype {proband_genotype!r}")
    c = rules.prevalence
    if pg == "noncarrier":
        return c
    if pg == "het_carrier":
        return 0.5 * (1.0 + c)
    if relation == "sibling":
        return 0.75
    return 1.0


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`parse_relatives`.

    Covariate columns are every header starting with ``w_prefix`` or
    ``z_prefix``; categorical covariates must already be indicator-coded.
    """

    family_id: str = "family_id"
    relative_id: str = "relative_id"
    y: str = "y"
    delta: str = "delta"
    p_carrier: str = "p_carrier"
    config_columns: tuple = ("p00", "p01", "p10", "p11")
    genotype: str = "genotype"
    relation: str = "relation"
    proband_genotype: str = "proband_genotype"
    weight: str = "weight"
    proband: str = "is_proband"
    w_prefix: str = "w_"
    z_prefix: str = "z_"
    prevalence: float = 0.0


def _is_missing(cell):
    return cell is None or cell.strip().lower() in _MISSING


def _num(cell, row, col):
    try:
        v = float(cell)
    except (TypeError, ValueError):
        raise ParseError(f"row {row}: column {col!r}: malformed number {cell!r}", row=row) from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}: column {col!r}: non-finite value {cell!r}", row=row)
    return v


def parse_relatives(path, schema: CsvSchema | Mapping | None = None, exclude_probands=False):
    """Read a relatives CSV into a validated :class:`Dataset`.

    Rows with a missing ``y`` (and, with ``exclude_probands``, rows flagged
    in the proband column) are dropped and listed in ``dataset.report``.

    Raises
    ------
    ParseError
        Malformed numeric cell; the message names the data row (1-based).
    ValidationError
        Probability outside [0, 1], missing required column, empty result.
    """
    if schema is None:
        schema = CsvSchema()
    elif isinstance(schema, Mapping):
        schema = CsvSchema(**schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise ValidationError(f"{path}: missing header row")
        rows = list(reader)
    header = [h.strip() for h in header]
    for req in (schema.family_id, schema.y, schema.delta):
        if req not in header:
            raise ValidationError(f"{path}: required column {req!r} missing")
    two_gene = all(c in header for c in schema.config_columns)
    has_p = schema.p_carrier in header
    has_geno = all(c in header for c in (schema.relation, schema.proband_genotype))
    if not (two_gene or has_p or has_geno):
        raise ValidationError(
            f"{path}: need {schema.p_carrier!r}, the configuration columns "
            f"{schema.config_columns}, or {schema.relation!r} + {schema.proband_genotype!r}")
    w_cols = [h for h in header if h.startswith(schema.w_prefix)]
    z_cols = [h for h in header if h.startswith(schema.z_prefix)]
    rules = MendelianRules(schema.prevalence)

    report = IngestReport(n_read=len(rows))
    recs = {k: [] for k in ("fam", "rid", "y", "delta", "p", "w", "z", "weight")}
    for k, raw in enumerate(rows, start=1):
        row = {(key or "").strip(): (val if val is not None else "") for key, val in raw.items()}
        if exclude_probands and schema.proband in row and not _is_missing(row[schema.proband]):
            if _num(row[schema.proband], k, schema.proband) != 0:
                report.dropped.append((k, "proband excluded"))
                continue
        if _is_missing(row[schema.y]):
            report.dropped.append((k, "missing y"))
            continue
        y = _num(row[schema.y], k, schema.y)
        if y <= 0:
            raise ValidationError(f"row {k}: y must be positive, got {y}")
        d = _num(row[schema.delta], k, schema.delta)
        if d not in (0.0, 1.0):
            raise ValidationError(f"row {k}: delta must be 0 or 1, got {row[schema.delta]!r}")
        if two_gene:
            p = tuple(_num(row[c], k, c) for c in schema.config_columns)
            if any(v < 0 or v > 1 for v in p) or abs(sum(p) - 1.0) > _SUM_TOL:
                raise ValidationError(f"row {k}: configuration probabilities {p} invalid")
        elif has_p and not _is_missing(row[schema.p_carrier]):
            p = _num(row[schema.p_carrier], k, schema.p_carrier)
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"row {k}: p_carrier {p} outside [0, 1]")
        elif has_geno:
            g = row.get(schema.genotype, "")
            g = None if _is_missing(g) else int(_num(g, k, schema.genotype))
            try:
                p = assign_carrier_probability(row[schema.relation], row[schema.proband_genotype],
                                               g, rules)
            except ValidationError as exc:
                raise ValidationError(f"row {k}: {exc}") from None
        else:
            raise ValidationError(f"row {k}: missing carrier probability")
        wt = 1.0
        if schema.weight in row and not _is_missing(row[schema.weight]):
            wt = _num(row[schema.weight], k, schema.weight)
            if wt <= 0:
                raise ValidationError(f"row {k}: weight must be positive")
        fam = row[schema.family_id].strip()
        if not fam:
            raise ValidationError(f"row {k}: empty family_id")
        rid = row.get(schema.relative_id, "").strip() or str(k)
        recs["fam"].append(fam)
        recs["rid"].append(rid)
        recs["y"].append(y)
        recs["delta"].append(int(d))
        recs["p"].append(p)
        recs["w"].append([_num(row[c], k, c) for c in w_cols])
        recs["z"].append([_num(row[c], k, c) for c in z_cols])
        recs["weight"].append(wt)
    if not recs["y"]:
        raise ValidationError(f"{path}: dataset is empty after filtering ({report.n_dropped} dropped)")
    n = len(recs["y"])
    return Dataset(
        family_id=recs["fam"], relative_id=recs["rid"], y=recs["y"], delta=recs["delta"],
        probs=recs["p"],
        w=np.array(recs["w"], dtype=float).reshape(n, len(w_cols)),
        z=np.array(recs["z"], dtype=float).reshape(n, len(z_cols)),
        weight=recs["weight"],
        w_names=[c[len(schema.w_prefix):] for c in w_cols],
        z_names=[c[len(schema.z_prefix):] for c in z_cols],
        report=report)


def write_relatives(data: Dataset, path, schema: CsvSchema = CsvSchema()):
    """Write ``data`` in the layout :func:`parse_relatives` reads back exactly."""
    cols = [schema.family_id, schema.relative_id, schema.y, schema.delta]
    cols += list(schema.config_columns) if data.two_gene else [schema.p_carrier]
    cols += [schema.w_prefix + n for n in data.w_names]
    cols += [schema.z_prefix + n for n in data.z_names]
    cols.append(schema.weight)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(cols)
        for i in range(data.n):
            p = data.probs[i] if data.two_gene else [data.probs[i]]
            out.writerow([data.family_id[i], data.relative_id[i], repr(float(data.y[i])),
                          int(data.delta[i])] + [repr(float(v)) for v in p]
                         + [repr(float(v)) for v in data.w[i]]
                         + [repr(float(v)) for v in data.z[i]]
                         + [repr(float(data.weight[i]))])


def stratum_mask(data: Dataset, stratum) -> np.ndarray:
    """Boolean mask for ``stratum``: None (all), a boolean array, or a predicate on records."""
    if stratum is None:
        return np.ones(data.n, dtype=bool)
    if callable(stratum):
        return np.array([bool(stratum(r)) for r in data.records], dtype=bool)
    mask = np.asarray(stratum, dtype=bool)
    if mask.shape != (data.n,):
        raise ValidationError("stratum mask must have one entry per record")
    return mask
