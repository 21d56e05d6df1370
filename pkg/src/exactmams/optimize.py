"""Design optimisation: weighted objectives and the two search strategies.

Both design families are scored by the same three-term objective,
w1 * ESS(p_ESS) + w2 * ESS(p_ESS + delta) + w3 * (maximal sample size),
subject to familywise error control and a familywise power floor.  The
binomial family is searched exhaustively over its design space; the
Fisher family over a grid of stage-1 spending pairs (alpha1, beta1),
with the group size n determined per pair by the minimal-n power search.

Fisher expected sample sizes are scored under the null-conditional
plug-in law (the design-stage convention the published tables follow);
at the null scoring point the plug-in and exact laws coincide.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _engine, oc
from .binomial import BinomialDesign
from .config import STRONG, TrialConfig
from .fisher import (RULE_OPTIMISED, FisherDeterminer, FisherDesign,
                     DEFAULT_FISHER_N_CAP)
from .kernel import binom_pmf_vector


class InfeasibleError(RuntimeError):
    """No design satisfies the error-rate and power constraints."""


def validate_weights(w):
    w = tuple(float(v) for v in w)
    if len(w) != 3 or any(v < 0.0 for v in w):
        raise ValueError(f"weights must be 3 nonnegative reals: {w}")
    if w[0] + w[1] <= 0.0:
        raise ValueError(f"w1 + w2 must be positive: {w}")
    return w


def objective_terms(design, cfg: TrialConfig):
    """(ESS at p_ESS, ESS at p_ESS + delta, maximal sample size)."""
    law = "plugin" if isinstance(design, FisherDesign) else "exact"
    p0 = np.asarray(cfg.p_ess)
    p1 = np.round(p0 + np.asarray(cfg.delta), 12)
    ess0 = oc.oc_at(design, p0, check=False, law=law).ess
    ess1 = oc.oc_at(design, p1, check=False, law=law).ess
    return ess0, ess1, design.ratios.max_n_subjects(design.n, cfg.K)


def objective(design, cfg: TrialConfig, w) -> float:
    """The weighted three-term objective for one design."""
    w = validate_weights(w)
    ess0, ess1, max_n = objective_terms(design, cfg)
    return w[0] * ess0 + w[1] * ess1 + w[2] * max_n


@dataclass
class OptimizationResult:
    """Winner for one weight vector, with constraint margins and runners-up."""

    weights: tuple
    design: object
    objective: float
    ess_null: float
    ess_alt: float
    max_n: int
    constraint_report: dict
    ranked_alternatives: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# single-stage baseline (defines the default binomial n cap)


def _single_look_rates(n, K, e_axis, p_vec):
    """1 - P(no arm reaches e) for every candidate e, single look."""
    b0 = binom_pmf_vector(n, p_vec[0])
    cdfs = [np.concatenate([[0.0], np.cumsum(binom_pmf_vector(n, p_vec[k]))])
            for k in range(1, K + 1)]
    c = np.arange(n + 1)[:, None]
    idx = np.clip(c + e_axis[None, :], 0, n + 1)
    prod = np.ones((n + 1, len(e_axis)))
    for cdf in cdfs:
        prod *= cdf[idx]
    return 1.0 - b0 @ prod


def single_stage_n(cfg: TrialConfig, n_cap: int = 400):
    """Smallest single-look group size meeting the error and power targets.

    One common boundary e on the success differences: reject H_0k iff
    x_k - x_0 >= e with n subjects per arm (control included).  The
    error cap is enforced at the worst common p (0.01 grid, refined);
    power is the worst familywise power over the alternative family.
    """
    p_grid = np.round(np.arange(0.0, 1.0 + 0.005, 0.01), 10)
    upper = 1.0 - cfg.delta_max
    alt_grid = np.round(np.arange(0.0, upper + 0.005, 0.01), 10)
    for n in range(1, n_cap + 1):
        e_axis = np.arange(-n, n + 2)
        fwer = np.stack([_single_look_rates(n, cfg.K, e_axis,
                                            cfg.p_common(p))
                         for p in p_grid])
        ok = (fwer <= cfg.alpha).all(axis=0)
        if not ok.any():
            continue
        j = int(ok.argmax())
        e_star = int(e_axis[j])

        def fwer_at(p, e=e_star):
            return float(_single_look_rates(n, cfg.K, np.array([e]),
                                            cfg.p_common(p))[0])

        jmax = int(fwer[:, j].argmax())
        lo = p_grid[max(0, jmax - 1)]
        hi = p_grid[min(len(p_grid) - 1, jmax + 1)]
        _, refined = _engine.golden_max(fwer_at, lo, hi)
        if refined > cfg.alpha:
            e_star += 1
        fwp = [float(_single_look_rates(n, cfg.K, np.array([e_star]),
                                        cfg.p_alternative(p))[0])
               for p in alt_grid]
        if min(fwp) >= 1.0 - cfg.beta:
            return n, e_star
    raise InfeasibleError(f"no single-stage design with n <= {n_cap}")


def default_binomial_n_max(cfg: TrialConfig) -> int:
    n_fixed, _ = single_stage_n(cfg)
    return math.ceil(0.75 * n_fixed)


# ---------------------------------------------------------------------------
# exhaustive binomial search


class _BinomialGroup:
    """All designs sharing (n, f1, e1); they differ only in f2.

    The expected sample size does not depend on f2 (the second stage
    always resolves every continuing arm), so the objective is constant
    within the group and feasibility reduces to locating the smallest
    acceptable f2.
    """

    def __init__(self, cfg, n, f1, e1):
        self.cfg = cfg
        self.n = n
        self.f1 = f1
        self.e1 = e1
        nC1, nC2, nE1, nE2 = cfg.ratios.group_sizes(n)
        self.sizes = (nC1, nC2, nE1, nE2)
        self.f2_axis = np.arange(f1 + 1 - nC2, e1 - 1 + nE2 + 1)

    def ess(self, p_vec):
        nC1, nC2, nE1, nE2 = self.sizes
        K = self.cfg.K
        b0 = binom_pmf_vector(nC1, p_vec[0])
        c = np.arange(nC1 + 1)
        pa, pb = [], []
        for k in range(1, K + 1):
            cdf = np.concatenate([[0.0],
                                  np.cumsum(binom_pmf_vector(nE1, p_vec[k]))])
            a = cdf[np.clip(c + self.f1 + 1, 0, nE1 + 1)]
            below = cdf[np.clip(c + self.e1, 0, nE1 + 1)]
            pa.append(a)
            pb.append(below - a)
        pa = np.stack(pa)
        pb = np.stack(pb)
        no_rej = np.prod(pa + pb, axis=0)
        all_acc = np.prod(pa, axis=0)
        cont_any = no_rej - all_acc
        arm_terms = np.zeros(nC1 + 1)
        for k in range(K):
            others = np.prod(np.delete(pa + pb, k, axis=0), axis=0)
            arm_terms += pb[k] * others
        extra = nC2 * cont_any + nE2 * arm_terms
        return nC1 + K * nE1 + float(b0 @ extra)

    def _arm_tables(self, p_vec):
        nC1, nC2, nE1, nE2 = self.sizes
        c1 = np.arange(nC1 + 1)
        v_lo = int(self.f2_axis[0])
        v_hi = nC1 + nC2 + int(self.f2_axis[-1])
        v_axis = np.arange(v_lo, v_hi + 1)
        per_arm = []
        for k in range(1, self.cfg.K + 1):
            pmf1 = binom_pmf_vector(nE1, p_vec[k])
            cdf1 = np.concatenate([[0.0], np.cumsum(pmf1)])
            cdf2 = np.concatenate([[0.0],
                                   np.cumsum(binom_pmf_vector(nE2, p_vec[k]))])
            acc = cdf1[np.clip(c1 + self.f1 + 1, 0, nE1 + 1)]
            # H[v, a] = sum_{x <= a} pmf1[x] * P(X2 <= v - x)
            xs = np.arange(nE1 + 1)
            f2look = cdf2[np.clip(v_axis[:, None] - xs[None, :] + 1,
                                  0, nE2 + 1)]
            h = np.cumsum(pmf1[None, :] * f2look, axis=1)
            h = np.concatenate([np.zeros((len(v_axis), 1)), h], axis=1)
            per_arm.append((acc, h))
        return per_arm, v_lo

    def _rates(self, p_vec, f2_values):
        """1 - P(no rejection) for each requested f2, exact."""
        nC1, nC2, nE1, nE2 = self.sizes
        b0_1 = binom_pmf_vector(nC1, p_vec[0])
        b0_2 = binom_pmf_vector(nC2, p_vec[0])
        per_arm, v_lo = self._arm_tables(p_vec)
        c1 = np.arange(nC1 + 1)
        c2 = np.arange(nC2 + 1)
        s = c1[:, None] + c2[None, :]
        f2_values = np.asarray(f2_values)
        vidx = s[:, :, None] + f2_values[None, None, :] - v_lo
        a_hi = (np.clip(c1 + self.e1 - 1, -1, nE1) + 1)[:, None, None]
        a_lo = (np.clip(c1 + self.f1, -1, nE1) + 1)[:, None, None]
        prod = np.ones(vidx.shape)
        for acc, h in per_arm:
            band_acc = h[vidx, a_hi] - h[vidx, a_lo]
            prod *= acc[:, None, None] + band_acc
        return 1.0 - np.einsum("c,cdf,d->f", b0_1, prod, b0_2)

    def _rate_by_f2(self, p_vec):
        return self._rates(p_vec, self.f2_axis)

    def max_fwer_grid(self, f2):
        """(worst common-p FWER on the grid, its argmax) at one f2."""
        cfg = self.cfg
        p_grid = np.round(np.arange(0.0, 1.005, 0.01), 10)
        vals = [float(self._rates(cfg.p_common(p), [f2])[0]) for p in p_grid]
        j = int(np.argmax(vals))
        return vals[j], float(p_grid[j])

    def min_fwp_grid(self, f2):
        """(worst-alternative FWP on the grid, its argmin) at one f2."""
        cfg = self.cfg
        upper = 1.0 - cfg.delta_max
        alt_grid = np.round(np.arange(0.0, upper + 0.005, 0.01), 10)
        vals = [float(self._rates(cfg.p_alternative(p), [f2])[0])
                for p in alt_grid]
        j = int(np.argmin(vals))
        return vals[j], float(alt_grid[j])

    def f2_window(self):
        """Feasible f2 interval via bisection (both rates fall as f2 rises).

        Returns (f2_lo, f2_hi, diagnostics) where the interval may be
        empty (lo > hi); diagnostics carry the binding grid optima at
        the endpoints for refinement and nearest-miss reporting.
        """
        cfg = self.cfg
        axis = self.f2_axis
        target = 1.0 - cfg.beta

        # smallest f2 with max-FWER <= alpha
        lo_i, hi_i = 0, len(axis) - 1
        top, arg_top = self.max_fwer_grid(int(axis[hi_i]))
        if top > cfg.alpha:
            return None
        cache_fwer = {hi_i: (top, arg_top)}
        val0, arg0 = self.max_fwer_grid(int(axis[0]))
        cache_fwer[0] = (val0, arg0)
        if val0 <= cfg.alpha:
            fwer_i = 0
        else:
            lo, hi = 0, hi_i
            while hi - lo > 1:
                mid = (lo + hi) // 2
                v = self.max_fwer_grid(int(axis[mid]))
                cache_fwer[mid] = v
                if v[0] <= cfg.alpha:
                    hi = mid
                else:
                    lo = mid
            fwer_i = hi

        # largest f2 with min-FWP >= 1 - beta
        val0, arg0 = self.min_fwp_grid(int(axis[0]))
        cache_fwp = {0: (val0, arg0)}
        if val0 < target:
            return None
        vend = self.min_fwp_grid(int(axis[-1]))
        cache_fwp[len(axis) - 1] = vend
        if vend[0] >= target:
            fwp_i = len(axis) - 1
        else:
            lo, hi = 0, len(axis) - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                v = self.min_fwp_grid(int(axis[mid]))
                cache_fwp[mid] = v
                if v[0] >= target:
                    lo = mid
                else:
                    hi = mid
            fwp_i = lo
        return fwer_i, fwp_i, cache_fwer, cache_fwp

    def refine_at(self, f2, arg_fwer, arg_fwp, step=0.01):
        """Grid-miss guard around the located optima for one design."""
        cfg = self.cfg

        def fwer_at(p):
            return float(self._rates(cfg.p_common(p), [f2])[0])

        def fwp_at(p):
            return float(self._rates(cfg.p_alternative(p), [f2])[0])

        _, fw = _engine.golden_max(
            fwer_at, max(0.0, arg_fwer - step), min(1.0, arg_fwer + step))
        upper = 1.0 - cfg.delta_max
        _, neg = _engine.golden_max(
            lambda p: -fwp_at(p),
            max(0.0, arg_fwp - step), min(upper, arg_fwp + step))
        return fw, -neg


def _binomial_groups(cfg, n_min, n_max):
    groups = []
    for n in cfg.feasible_n(n_min, n_max):
        nC1, nC2, nE1, nE2 = cfg.ratios.group_sizes(n)
        for f1 in range(-nC1, nE1 - 1):
            for e1 in range(max(f1 + 2, -nC1 + 2), nE1 + 1):
                groups.append((n, f1, e1))
    return groups


def optimize_binomial(cfg: TrialConfig, n_max=None, top=10):
    """Exhaustive binomial-design search for every configured weight vector.

    The objective is constant across f2 within an (n, f1, e1) group, so
    groups are walked in objective order per weight vector and the first
    group with a feasible f2 supplies the winner; the smallest feasible
    f2 is reported (lexicographic tie-break).
    """
    t0 = time.time()
    if n_max is None:
        n_max = cfg.n_max if cfg.n_max is not None else \
            default_binomial_n_max(cfg)
    groups = _binomial_groups(cfg, cfg.n_min, n_max)
    if not groups:
        raise InfeasibleError("empty binomial design space; check ratios")

    p0 = np.asarray(cfg.p_ess)
    p1 = np.round(p0 + np.asarray(cfg.delta), 12)
    terms = []
    cache = {}
    for (n, f1, e1) in groups:
        g = _BinomialGroup(cfg, n, f1, e1)
        cache[(n, f1, e1)] = g
        terms.append((g.ess(p0), g.ess(p1),
                      cfg.ratios.max_n_subjects(n, cfg.K)))
    terms = np.asarray(terms)

    window_cache = {}

    def window(key):
        if key not in window_cache:
            window_cache[key] = cache[key].f2_window()
        return window_cache[key]

    results = []
    for w in cfg.weights:
        w = validate_weights(w)
        obj = terms @ np.asarray(w)
        # tie-break: objective, then n, then max N, then boundaries
        order = np.lexsort((
            [g[2] for g in groups], [g[1] for g in groups],
            terms[:, 2], [g[0] for g in groups], obj))
        found = []
        nearest_miss = None
        for gi in order:
            key = groups[gi]
            win = window(key)
            if win is None:
                continue
            fwer_i, fwp_i, cache_fwer, cache_fwp = win
            g = cache[key]
            picked = None
            for j in range(fwer_i, fwp_i + 1):
                f2 = int(g.f2_axis[j])
                fw, arg_fw = cache_fwer.get(j) or g.max_fwer_grid(f2)
                fp, arg_fp = cache_fwp.get(j) or g.min_fwp_grid(f2)
                fw, fp = g.refine_at(f2, arg_fw, arg_fp)
                if fw <= cfg.alpha and fp >= 1.0 - cfg.beta:
                    picked = (f2, fw, fp)
                    break
            if picked is None:
                if nearest_miss is None:
                    j = min(max(fwer_i, 0), len(g.f2_axis) - 1)
                    f2m = int(g.f2_axis[j])
                    fwm, _ = cache_fwer.get(j) or g.max_fwer_grid(f2m)
                    fpm, _ = cache_fwp.get(j) or g.min_fwp_grid(f2m)
                    nearest_miss = dict(
                        n=key[0], f1=key[1], e1=key[2], f2=f2m,
                        max_fwer=float(fwm), min_fwp=float(fpm))
                continue
            f2, fw, fp = picked
            n, f1, e1 = key
            design = BinomialDesign(n=n, f1=f1, f2=f2, e1=e1, e2=f2 + 1,
                                    ratios=cfg.ratios)
            found.append(dict(design=design, objective=float(obj[gi]),
                              ess_null=float(terms[gi, 0]),
                              ess_alt=float(terms[gi, 1]),
                              max_n=int(terms[gi, 2]),
                              max_fwer=fw, min_fwp=fp))
            if len(found) >= top:
                break
        if not found:
            raise InfeasibleError(
                f"no feasible binomial design for weights {w}; "
                f"nearest miss: {nearest_miss}")
        best = found[0]
        constraint = {"max_fwer": best["max_fwer"],
                      "min_fwp": best["min_fwp"]}
        if cfg.control == STRONG:
            full = oc.max_fwer_full(best["design"], budget=2000,
                                    seed=cfg.seed, K=cfg.K)
            constraint["max_fwer_full"] = full.max_fwer
            constraint["argmax_p_full"] = list(full.argmax_p)
        results.append(OptimizationResult(
            weights=w, design=best["design"], objective=best["objective"],
            ess_null=best["ess_null"], ess_alt=best["ess_alt"],
            max_n=best["max_n"], constraint_report=constraint,
            ranked_alternatives=[
                {"n": d["design"].n, "f1": d["design"].f1,
                 "e1": d["design"].e1, "f2": d["design"].f2,
                 "objective": d["objective"]} for d in found],
            meta={"candidates": len(groups), "n_max": n_max,
                  "wall_time": time.time() - t0}))
    return results


# ---------------------------------------------------------------------------
# Fisher grid sweep


def optimize_fisher(cfg: TrialConfig, a1_grid=None, b1_grid=None,
                    n_max=None, power="allarm", top=10, progress=None):
    """Near-optimal Fisher design per weight vector from one grid sweep.

    Walks the group size upward once, resolving every (alpha1, beta1)
    cell at its minimal feasible n; cells sharing identical stage-1
    boundaries share one determination and one power evaluation.  All
    weight vectors are served from the same sweep.
    """
    t0 = time.time()
    a1_grid = tuple(a1_grid if a1_grid is not None else cfg.a1_grid)
    b1_grid = tuple(b1_grid if b1_grid is not None else cfg.b1_grid)
    if n_max is None:
        n_max = cfg.n_max if cfg.n_max is not None else DEFAULT_FISHER_N_CAP
    target = 1.0 - cfg.beta
    cells = [(a1, b1) for a1 in a1_grid for b1 in b1_grid]
    unresolved = set(cells)
    resolved = {}
    evaluations = 0

    for n in cfg.feasible_n(cfg.n_min, n_max):
        if not unresolved:
            break
        det = FisherDeterminer(cfg, n)
        e1_by_a1 = {a1: det.e1_for_alpha1(a1) for a1 in
                    {c[0] for c in unresolved}}
        f1_by_b1 = {b1: det.f1_for_beta1(b1) for b1 in
                    {c[1] for c in unresolved}}
        bound_by_f1 = {f1: _engine.stage1_power_bound(det.geom, f1, cfg)
                       for f1 in set(f1_by_b1.values())}
        shared = {}
        for cell in sorted(unresolved):
            a1, b1 = cell
            e1 = e1_by_a1[a1]
            f1 = f1_by_b1[b1]
            if bound_by_f1[f1] < target:
                continue
            key = (e1.tobytes(), f1)
            if key not in shared:
                design = det.determine_with(e1, f1, a1, b1)
                argmin_p, fwp = oc.min_fwp(
                    design, cfg.delta, cfg.p_grid_step,
                    fail_fast_below=target, power=power)
                evaluations += 1
                shared[key] = (design, argmin_p, fwp)
            design, argmin_p, fwp = shared[key]
            if fwp >= target:
                from dataclasses import replace
                d = replace(design, alpha1=a1, beta1=b1)
                ess0, ess1, max_n = objective_terms(d, cfg)
                resolved[cell] = dict(design=d, n=n, min_fwp=fwp,
                                      argmin_p=argmin_p, ess_null=ess0,
                                      ess_alt=ess1, max_n=max_n)
                unresolved.discard(cell)
        if progress is not None:
            progress(n, len(unresolved))

    skipped = sorted(unresolved)
    results = []
    for w in cfg.weights:
        w = validate_weights(w)
        ranked = sorted(
            resolved.items(),
            key=lambda kv: (w[0] * kv[1]["ess_null"]
                            + w[1] * kv[1]["ess_alt"]
                            + w[2] * kv[1]["max_n"],
                            kv[1]["n"], kv[1]["max_n"], kv[0]))
        if not ranked:
            raise InfeasibleError(
                f"no (alpha1, beta1) cell feasible with n <= {n_max}")
        (a1, b1), best = ranked[0]
        design = best["design"]
        obj = (w[0] * best["ess_null"] + w[1] * best["ess_alt"]
               + w[2] * best["max_n"])
        constraint = {"min_fwp": best["min_fwp"],
                      "argmin_p": best["argmin_p"]}
        diag = oc.max_fwer_common_p(design, 0.01, K=cfg.K)
        constraint["max_fwer"] = diag.max_fwer
        if cfg.control == STRONG:
            full = oc.max_fwer_full(design, budget=2000, seed=cfg.seed,
                                    K=cfg.K)
            constraint["max_fwer_full"] = full.max_fwer
            constraint["argmax_p_full"] = list(full.argmax_p)
        results.append(OptimizationResult(
            weights=w, design=design, objective=float(obj),
            ess_null=best["ess_null"], ess_alt=best["ess_alt"],
            max_n=best["max_n"], constraint_report=constraint,
            ranked_alternatives=[
                {"alpha1": k[0], "beta1": k[1], "n": v["n"],
                 "objective": (w[0] * v["ess_null"] + w[1] * v["ess_alt"]
                               + w[2] * v["max_n"])}
                for k, v in ranked[:top]],
            meta={"cells": len(cells), "skipped_cells": skipped,
                  "n_max": n_max, "power_rule": power,
                  "determinations": evaluations,
                  "wall_time": time.time() - t0}))
    return results
