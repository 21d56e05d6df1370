"""Command-line interface.

Subcommands: ``design``, ``evaluate``, ``curves``, ``verify-strong``,
``simulate``.  Exit codes: 0 success, 2 validation error, 3 no feasible
design, 4 internal-consistency failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import io, oc, optimize
from .config import TrialConfig, load_config
from .fisher import FisherDesign
from .oc import ConsistencyError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_INCONSISTENT = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _parse_p(text, K=None):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise CliError(f"cannot parse probability vector {text!r}: {exc}")
    if K is not None and len(vals) != K + 1:
        raise CliError(f"expected K+1 = {K + 1} probabilities, got {len(vals)}")
    if any(not 0.0 <= v <= 1.0 for v in vals):
        raise CliError("probabilities must lie in [0, 1]")
    return vals


def _load_design_arg(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read design file {path}: {exc}")
    cfg = None
    if "config" in raw:
        cfg = TrialConfig.from_json(raw["config"])
        payload = raw["results"][0]["design"] if "results" in raw \
            else raw["design"]
    else:
        payload = raw.get("design", raw)
    try:
        design = io.design_from_json(payload)
    except io.DesignFileError as exc:
        raise CliError(str(exc), EXIT_VALIDATION)
    return design, cfg, payload


def _design_K(design, cfg, payload, args):
    if isinstance(design, FisherDesign):
        return design.K
    if payload.get("K") is not None:
        return int(payload["K"])
    if cfg is not None:
        return cfg.K
    if getattr(args, "K", None):
        return args.K
    raise CliError("K is not recorded in this design file; pass --K")


def _write_or_print(payload, out, as_json=True):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_design(args):
    cfg = load_config(args.config)
    if args.threads:
        os.environ["EXACTMAMS_THREADS"] = str(args.threads)
    if args.method == "fisher":
        results = optimize.optimize_fisher(cfg)
    else:
        results = optimize.optimize_binomial(cfg)
    payload = io.design_report(cfg, results, args.method)
    out = args.out or f"{args.method}_design_report.json"
    io.save_json(payload, out)
    print(io.summary_table(cfg, results, args.method))
    print(f"\nreport written to {out}")
    return EXIT_OK


def cmd_evaluate(args):
    design, cfg, payload = _load_design_arg(args.design)
    K = _design_K(design, cfg, payload, args)
    p = _parse_p(args.p, K)
    rep = oc.oc_at(design, p, law=args.law)
    body = rep.to_json()
    if args.format == "table":
        print(f"{'p':>12} {args.p}")
        for k in ("fwer", "fwp", "ess"):
            print(f"{k:>12} {body[k]:.6f}")
        for i, v in enumerate(rep.per_arm_reject, start=1):
            print(f"{'P(rej H0%d)' % i:>12} {v:.6f}")
    else:
        _write_or_print(body, args.out)
    return EXIT_OK


def cmd_curves(args):
    design, cfg, payload = _load_design_arg(args.design)
    K = _design_K(design, cfg, payload, args)
    if args.delta:
        delta = [0.0] + [float(v) for v in args.delta.split(",")]
        if len(delta) == 2 and K > 1:
            delta = [0.0] + [delta[1]] * K
    elif isinstance(design, FisherDesign):
        delta = list(design.delta)
    elif cfg is not None:
        delta = list(cfg.delta)
    else:
        raise CliError("binomial design file lacks delta; pass --delta")
    if len(delta) != K + 1:
        raise CliError(f"delta must broadcast to length {K + 1}")
    if args.step > 0.05:
        raise CliError("step must be at most 0.05")

    law = args.law
    if law == "design":
        law = "plugin" if isinstance(design, FisherDesign) else "exact"
    dmax = max(delta[1:])
    upper_alt = round(1.0 - dmax, 10)
    count = int(round(1.0 / args.step))
    rows = []
    for i in range(count + 1):
        p = round(i * args.step, 10)
        null_rep = oc.oc_at(design, [p] * (K + 1), check=False, law=law)
        row = {"p": p, "fwer": null_rep.fwer, "ess_null": null_rep.ess}
        if p <= upper_alt + 1e-12:
            alt_p = [min(1.0, round(p + d, 10)) for d in delta]
            alt_rep = oc.oc_at(design, alt_p, check=False, law=law)
            row["fwp"] = alt_rep.fwp
            row["ess_alt"] = alt_rep.ess
        rows.append(row)

    out = args.out or "curves.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "fwer", "fwp", "ess_null", "ess_alt"])
        for row in rows:
            writer.writerow([
                f"{row['p']:.6f}", f"{row['fwer']:.6f}",
                "" if "fwp" not in row else f"{row['fwp']:.6f}",
                f"{row['ess_null']:.6f}",
                "" if "ess_alt" not in row else f"{row['ess_alt']:.6f}"])
    print(f"curves written to {out} ({len(rows)} rows)")
    return EXIT_OK


def cmd_verify_strong(args):
    design, cfg, payload = _load_design_arg(args.design)
    K = _design_K(design, cfg, payload, args)
    if args.budget < 1000:
        raise CliError("budget must be at least 1000 evaluations")
    alpha = design.alpha if isinstance(design, FisherDesign) else \
        (cfg.alpha if cfg is not None else args.alpha)
    if alpha is None:
        raise CliError("alpha unknown; pass --alpha")
    res = oc.max_fwer_full(design, budget=args.budget, seed=args.seed, K=K)
    ok = res.max_fwer <= alpha
    payload = res.to_json(trace_limit=args.trace_limit)
    payload["alpha"] = alpha
    payload["pass"] = bool(ok)
    _write_or_print(payload, args.out)
    print(f"max FWER {res.max_fwer:.6f} at p = "
          f"{tuple(round(v, 4) for v in res.argmax_p)} -> "
          f"{'PASS' if ok else 'FAIL'} at alpha = {alpha}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    design, cfg, payload = _load_design_arg(args.design)
    K = _design_K(design, cfg, payload, args)
    p = _parse_p(args.p, K)
    rep = oc.simulate(design, p, reps=args.reps, seed=args.seed)
    _write_or_print(rep.to_json(), args.out)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(
        prog="exactmams",
        description="Exact two-stage multi-arm designs with binary outcomes")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="search for optimal designs")
    d.add_argument("--method", choices=("binomial", "fisher"), required=True)
    d.add_argument("--config", required=True)
    d.add_argument("--out")
    d.add_argument("--threads", type=int, default=os.cpu_count())
    d.add_argument("--format", choices=("json", "table"), default="table")
    d.set_defaults(func=cmd_design)

    e = sub.add_parser("evaluate", help="exact operating characteristics")
    e.add_argument("--design", required=True)
    e.add_argument("--p", required=True)
    e.add_argument("--law", choices=("exact", "plugin"), default="exact")
    e.add_argument("--K", type=int)
    e.add_argument("--out")
    e.add_argument("--format", choices=("json", "table"), default="json")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("curves", help="operating-characteristic curves CSV")
    c.add_argument("--design", required=True)
    c.add_argument("--step", type=float, default=0.01)
    c.add_argument("--delta")
    c.add_argument("--K", type=int)
    c.add_argument("--law", choices=("design", "exact", "plugin"),
                   default="design")
    c.add_argument("--out")
    c.set_defaults(func=cmd_curves)

    v = sub.add_parser("verify-strong",
                       help="search for the maximal FWER over [0,1]^(K+1)")
    v.add_argument("--design", required=True)
    v.add_argument("--budget", type=int, default=5000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--alpha", type=float)
    v.add_argument("--K", type=int)
    v.add_argument("--trace-limit", type=int, default=200)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify_strong)

    s = sub.add_parser("simulate", help="Monte Carlo replay validation")
    s.add_argument("--design", required=True)
    s.add_argument("--p", required=True)
    s.add_argument("--reps", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--K", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except optimize.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConsistencyError as exc:
        print(f"internal consistency failure: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT


if __name__ == "__main__":
    sys.exit(main())
