"""Design-file and report serialisation.

Design files are JSON with a ``method`` discriminator.  Fisher boundary
arrays are written in full for audit, but they are never trusted: on
load the boundaries are regenerated from (n, alpha1, beta1, control,
stage1 rule) and compared, so a file that disagrees with its own
parameters is rejected.
"""

from __future__ import annotations

import datetime
import json

from . import __version__
from .binomial import BinomialDesign
from .config import (TrialConfig, canonical_json, config_hash)
from .fisher import FisherDesign, FisherDeterminer


class DesignFileError(ValueError):
    """Malformed or internally inconsistent design file."""


def design_to_json(design, K=None):
    d = design.to_json()
    if K is not None and "K" not in d:
        d["K"] = K
    return d


def design_from_json(d, revalidate: bool = True):
    method = d.get("method")
    if method == "binomial":
        return BinomialDesign.from_json(d)
    if method == "fisher":
        design = FisherDesign.from_json(d)
        if revalidate:
            revalidate_fisher(design)
        return design
    raise DesignFileError(f"unknown design method {method!r}")


def revalidate_fisher(design: FisherDesign):
    """Regenerate boundaries from the design parameters and compare."""
    cfg = TrialConfig(
        K=design.K, alpha=design.alpha, beta=design.beta,
        delta=design.delta, control=design.control, ratios=design.ratios)
    det = FisherDeterminer(cfg, design.n)
    fresh = det.determine(design.alpha1, design.beta1,
                          stage1_rule=design.stage1_rule)
    if fresh.boundaries != design.boundaries:
        raise DesignFileError(
            "stored boundaries do not regenerate from the design "
            "parameters; file corrupt or produced by an incompatible "
            "version")


def load_design(path, revalidate: bool = True):
    with open(path) as fh:
        d = json.load(fh)
    if "design" in d:  # full report file
        d = d["design"]
    return design_from_json(d, revalidate=revalidate)


def save_json(payload, path):
    with open(path, "w") as fh:
        fh.write(canonical_json(payload))
        fh.write("\n")


def design_report(cfg: TrialConfig, results, method: str,
                  timestamp: bool = True):
    """Assemble the design-command report payload.

    Identical configuration and package version give a byte-identical
    payload except for the timestamp field.
    """
    from . import oc

    rows = []
    for r in results:
        d = r.design
        row = {
            "weights": list(r.weights),
            "design": design_to_json(d, K=cfg.K),
            "objective": r.objective,
            "ess_null": r.ess_null,
            "ess_alt": r.ess_alt,
            "max_n": r.max_n,
            "constraints": r.constraint_report,
            "alternatives": r.ranked_alternatives,
        }
        p0 = list(cfg.p_ess)
        p1 = [round(a + b, 10) for a, b in zip(cfg.p_ess, cfg.delta)]
        row["oc_exact"] = {
            "at_p_ess": oc.oc_at(d, p0).to_json(),
            "at_p_alt": oc.oc_at(d, p1).to_json(),
        }
        rows.append(row)
    payload = {
        "method": method,
        "package_version": __version__,
        "config": cfg.to_json(),
        "config_hash": config_hash(cfg),
        "results": rows,
    }
    if timestamp:
        payload["timestamp"] = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
    return payload


def summary_table(cfg: TrialConfig, results, method: str) -> str:
    """Human-readable summary echoing the published table columns."""
    lines = []
    if method == "fisher":
        header = (f"{'w':>14} {'a1':>5} {'b1':>5} {'n':>4} "
                  f"{'ESS(null)':>10} {'ESS(alt)':>10} {'max N':>6}")
        lines.append(header)
        lines.append("-" * len(header))
        for r in results:
            d = r.design
            w = ",".join(f"{v:g}" for v in r.weights)
            a1 = "-" if d.alpha1 is None else f"{d.alpha1:.2f}"
            b1 = "-" if d.beta1 is None else f"{d.beta1:.2f}"
            lines.append(f"{w:>14} {a1:>5} {b1:>5} {d.n:>4} "
                         f"{r.ess_null:>10.2f} {r.ess_alt:>10.2f} "
                         f"{r.max_n:>6}")
    else:
        header = (f"{'w':>14} {'n':>4} {'f1':>4} {'e1':>4} {'f2':>4} "
                  f"{'ESS(null)':>10} {'ESS(alt)':>10} {'max N':>6}")
        lines.append(header)
        lines.append("-" * len(header))
        for r in results:
            d = r.design
            w = ",".join(f"{v:g}" for v in r.weights)
            lines.append(f"{w:>14} {d.n:>4} {d.f1:>4} {d.e1:>4} {d.f2:>4} "
                         f"{r.ess_null:>10.2f} {r.ess_alt:>10.2f} "
                         f"{r.max_n:>6}")
    return "\n".join(lines)
