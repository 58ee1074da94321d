"""Command-line entry point: ``kinrisk <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure or
non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .data import Dataset, parse_relatives
from .em import EmConfig, FitResult, ModelSpec, fit
from .errors import NumericalError, ValidationError
from .inference import bic_scan, hr_table, multiplier_bootstrap
from .risk import conditional_risk, marginal_risk, read_curves, write_curves
from .simulate import SimScenario, replicate
from .spline import SplineBasis, place_knots
from .trial import design_table, write_design_table

log = logging.getLogger("kinrisk")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class NotConverged(NumericalError):
    pass


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out: Path, command, args: argparse.Namespace, extra=None):
    """Plain-text record of the command, its resolved options and library versions."""
    lines = [f"command: {command}",
             "argv: kinrisk " + " ".join(args._argv)]
    for k in sorted(vars(args)):
        if k.startswith("_") or k == "func":
            continue
        lines.append(f"option.{k}: {getattr(args, k)}")
    lines += [f"version.kinrisk: {_version()}", f"version.numpy: {np.__version__}",
              f"version.scipy: {scipy.__version__}",
              f"version.python: {sys.version.split()[0]}"]
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_ages(text, data: Dataset | None = None):
    """``"60,65,70"`` or ``"start:stop:step"`` (stop inclusive)."""
    if text is None:
        if data is None:
            raise ValidationError("--ages is required")
        lo, hi = np.floor(data.y.min()), np.ceil(data.y.max())
        return np.arange(lo, hi + 1.0)
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValidationError(f"bad age range {text!r}; expected start:stop:step")
        a, b, s = parts
        return np.arange(a, b + s / 2, s)
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ValidationError(f"bad age list {text!r}") from None


def parse_profile(text, fit_res: FitResult):
    """``"carrier=1, male=0"`` -> (carrier, u, w, z); unnamed covariates are 0."""
    vals = {}
    for part in filter(None, (p.strip() for p in (text or "").split(","))):
        if "=" not in part:
            raise ValidationError(f"bad profile entry {part!r}; expected name=value")
        k, v = (s.strip() for s in part.split("=", 1))
        vals[k] = float(v)
    carrier = int(vals.pop("carrier", 1))
    u = int(vals.pop("u", 0))
    w = np.array([vals.pop(n, 0.0) for n in fit_res.w_names])
    z = np.array([vals.pop(n, 0.0) for n in fit_res.z_names])
    if vals:
        raise ValidationError(f"profile names unknown covariates: {sorted(vals)}")
    return carrier, u, w, z


def load_data(args) -> Dataset:
    data = parse_relatives(args.data, exclude_probands=args.exclude_probands)
    if data.report.n_dropped:
        log.warning(data.report.text())
    return data


def build_spec(args, data: Dataset) -> ModelSpec:
    bounds = (float(data.y.min()), float(data.y.max()))
    if args.constant_beta or args.knots is None:
        basis = SplineBasis.constant(bounds)
    else:
        basis = place_knots(data.y[data.delta == 1], args.knots, args.degree, boundary=bounds)
    return ModelSpec(basis, interaction=args.interaction,
                     w_dim=data.w.shape[1], z_dim=data.z.shape[1])


def _em_cfg(args):
    return EmConfig(tol=args.tol, max_iters=args.max_iters)


def _check_converged(res: FitResult):
    if not res.converged:
        tail = ", ".join(f"{v:.6f}" for v in res.loglik_trace[-5:])
        raise NotConverged(f"EM did not converge in {res.iters} iterations; "
                           f"loglik trace tail: {tail}")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------


def cmd_fit(args):
    data = load_data(args)
    spec = build_spec(args, data)
    res = fit(data, spec, _em_cfg(args))
    out = _outdir(args)
    res.save(out / "fit.json")
    hr_table(res, None).to_csv(out / "hr_table.csv")
    write_manifest(out, "fit", args, {"loglik": repr(res.loglik), "iters": res.iters,
                                      "converged": res.converged, "records": data.n})
    _check_converged(res)


def cmd_risk(args):
    data = load_data(args)
    res = FitResult.load(args.fit)
    ages = parse_ages(args.ages, data)
    out = _outdir(args)
    if args.profile is not None:
        carrier, u, w, z = parse_profile(args.profile, res)
        curves = [conditional_risk(res, carrier, w, z, ages, u=u)]
    else:
        curves = []
        for carrier, label in ((1, "carrier"), (0, "non-carrier")):
            c = marginal_risk(res, data, carrier, ages, independence=not args.no_independence)
            c.label = label
            curves.append(c)
    write_curves(curves, out / "curves.csv")
    write_manifest(out, "risk", args)


def cmd_bootstrap(args):
    data = load_data(args)
    spec = build_spec(args, data)
    ages = parse_ages(args.ages, data)
    boot = multiplier_bootstrap(data, spec, _em_cfg(args), B=args.boot_B, seed=args.seed,
                                ages=ages, threads=args.threads)
    out = _outdir(args)
    boot.fit.save(out / "fit.json")
    boot.to_csv(out / "bootstrap_coef.csv")
    boot.replicates_to_csv(out / "bootstrap_replicates.csv")
    hr_table(boot.fit, boot).to_csv(out / "hr_table.csv")
    write_curves([boot.band(k) for k in boot.curves], out / "curves.csv")
    write_manifest(out, "bootstrap", args, {"retained": boot.coef.shape[0],
                                            "dropped": boot.dropped})
    if boot.warning:
        log.warning(boot.warning)
    _check_converged(boot.fit)


def cmd_simulate(args):
    scen = SimScenario(n=args.n, censor_target=args.censor_rate, seed=args.seed)
    ages = parse_ages(args.ages) if args.ages else (60.0, 65.0, 70.0, 75.0, 80.0)
    rep = replicate(scen, args.reps, args.boot_B, seed=args.seed, ages=ages,
                    cfg=_em_cfg(args),
                    progress=lambda r: log.info("replicate %d/%d done", r + 1, args.reps))
    out = _outdir(args)
    rep.to_csv(out / "replication.csv")
    write_manifest(out, "simulate", args, {"failures": rep.failures,
                                           "censoring_realized": repr(rep.censor_realized)})


def cmd_bic(args):
    data = load_data(args)
    template = ModelSpec(interaction=args.interaction, w_dim=data.w.shape[1], z_dim=data.z.shape[1])
    degrees = [int(v) for v in args.degrees.split(",")]
    knots = [int(v) for v in args.knot_counts.split(",")]
    scan = bic_scan(data, _em_cfg(args), degrees, knots, template)
    out = _outdir(args)
    scan.to_csv(out / "bic.csv")
    sel = scan.selected["model"] if scan.selected else "none"
    write_manifest(out, "bic", args, {"selected": sel})
    if scan.selected is None:
        raise NotConverged("no candidate model converged")


def cmd_samplesize(args):
    curves = read_curves(args.data)
    for lab in (args.carrier_label, args.noncarrier_label):
        if lab not in curves:
            raise ValidationError(f"curve file has no curve labelled {lab!r}; "
                                  f"found {sorted(curves)}")
    ages = parse_ages(args.ages)
    rows = design_table(curves[args.carrier_label], curves[args.noncarrier_label], ages,
                        args.horizon, args.alpha, args.power, round_inputs=args.round,
                        variance=args.variance)
    out = _outdir(args)
    write_design_table(rows, out / "design_table.csv")
    write_manifest(out, "samplesize", args)


# -- parser ------------------------------------------------------------------


def _model_flags(p):
    p.add_argument("--knots", type=int, default=None, help="interior knots of the spline effect")
    p.add_argument("--degree", type=int, default=3, help="spline degree (1-3)")
    p.add_argument("--constant-beta", action="store_true", help="time-invariant carrier effect")
    p.add_argument("--interaction", action="store_true", help="carrier x W interactions")


def _common(p, data=True, em=True):
    if data:
        p.add_argument("--data", required=True, help="relatives CSV")
        p.add_argument("--exclude-probands", action="store_true",
                       help="drop rows flagged in the is_proband column")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="cap on concurrent fits")
    if em:
        p.add_argument("--tol", type=float, default=1e-8, help="EM relative tolerance")
        p.add_argument("--max-iters", type=int, default=2000)


def build_parser():
    ap = argparse.ArgumentParser(prog="kinrisk", description="Kin-cohort penetrance estimation.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the mixture hazard model")
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("risk", help="cumulative risk curves from a saved fit")
    _common(p, em=False)
    p.add_argument("--fit", required=True, help="fit.json from 'kinrisk fit'")
    p.add_argument("--ages", default=None, help="'60,65' or 'start:stop:step'")
    p.add_argument("--profile", default=None,
                   help="conditional curve at a profile, e.g. 'carrier=1, male=0'")
    p.add_argument("--no-independence", action="store_true",
                   help="weight marginal averages by posterior genotype probabilities")
    p.set_defaults(func=cmd_risk)

    p = sub.add_parser("bootstrap", help="family multiplier bootstrap")
    _common(p)
    _model_flags(p)
    p.add_argument("--boot-B", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ages", default="60:80:5")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="simulation study with bootstrap CIs")
    _common(p, data=False)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--boot-B", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--censor-rate", type=float, default=0.4)
    p.add_argument("--n", type=int, default=2266, help="records per simulated dataset")
    p.add_argument("--ages", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bic", help="BIC scan over spline degree and knot count")
    _common(p)
    p.add_argument("--interaction", action="store_true")
    p.add_argument("--degrees", default="1,2,3")
    p.add_argument("--knot-counts", default="0,1,2,3")
    p.set_defaults(func=cmd_bic)

    p = sub.add_parser("samplesize", help="window risks and per-arm trial sizes")
    p.add_argument("--data", required=True, help="curve CSV (age, risk, label)")
    _common(p, data=False, em=False)
    p.add_argument("--carrier-label", default="carrier")
    p.add_argument("--noncarrier-label", default="non-carrier")
    p.add_argument("--ages", default="60,65,70,75")
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--power", type=float, default=0.80)
    p.add_argument("--round", type=int, default=None,
                   help="round window risks to this many decimals before sizing")
    p.add_argument("--variance", choices=("h0h1", "pooled"), default="h0h1")
    p.set_defaults(func=cmd_samplesize)
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"kinrisk {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"kinrisk {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"kinrisk {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        # malformed fit or curve files
        print(f"kinrisk {args.command}: invalid input: {exc!r}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
