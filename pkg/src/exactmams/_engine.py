"""Vectorised numerics behind Fisher-design determination and OC evaluation.

Everything here works on one principle: condition on the control counts
and the stage-wise totals, and the per-arm lattice sums collapse into
one- and two-dimensional prefix-sum tables that can be gathered from
instead of re-summed.  The tables come in two flavours sharing all the
index algebra:

* determination tables carry conditional weights C(n, x) * theta^x, and
* operating-characteristic tables carry binomial weights b(x | n, p),

so the boundary solver and the exact evaluator exercise the same code.

Supports K in {1, 2} (one or two experimental arms), which covers every
design this package can determine.
"""

from __future__ import annotations

import math

import numpy as np

from .kernel import binom_coeff_vector, binom_pmf_vector

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo: float, hi: float, tol: float = 1e-7):
    """Golden-section maximiser on [lo, hi]; returns (argmax, max)."""
    a, b = float(lo), float(hi)
    best_x, best_v = a, f(a)
    for x in (b,):
        v = f(x)
        if v > best_v:
            best_x, best_v = x, v
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        for x, v in ((c, fc), (d, fd)):
            if v > best_v:
                best_x, best_v = x, v
    return best_x, best_v


class Geometry:
    """Index ranges shared by all per-n computations."""

    def __init__(self, K: int, nC1: int, nC2: int, nE1: int, nE2: int):
        if K not in (1, 2):
            raise NotImplementedError("engine supports K in {1, 2}")
        self.K = K
        self.nC1 = nC1
        self.nC2 = nC2
        self.nE1 = nE1
        self.nE2 = nE2
        self.z1_count = nC1 + K * nE1 + 1
        self.z2_count = {m: nC2 + m * nE2 + 1 for m in range(1, K + 1)}
        self.t2_min = -(nC1 + nC2)
        self.t2_max = nE1 + nE2
        self.never2 = self.t2_max + 1          # stage-2 never-reject boundary
        self.e2_candidates = np.arange(self.t2_min, self.never2 + 1)

    def arm_weights(self, theta: float) -> np.ndarray:
        """Stage-1 conditional weights C(nE1, x) * theta^x, max-normalised."""
        w = binom_coeff_vector(self.nE1) * theta ** np.arange(self.nE1 + 1)
        return w / w.max()

    def arm2_weights(self, theta: float) -> np.ndarray:
        w = binom_coeff_vector(self.nE2) * theta ** np.arange(self.nE2 + 1)
        return w / w.max()


def e1_candidates(geom: Geometry) -> np.ndarray:
    """Stage-1 boundary candidates, from always-reject to never-reject."""
    return np.arange(-geom.nC1, geom.nE1 + 2)


def alpha1_matrix(geom: Geometry, combos) -> np.ndarray:
    """Stage-1 conditional familywise-error matrix [combo, z1, candidate e].

    Entry = P(some true-null arm has T_k1 >= e | Z1 = z1, theta), computed
    as one minus the probability that every true-null arm stays below the
    boundary; one capped convolution over arms per (control count, cap).
    """
    K, nC1, nE1 = geom.K, geom.nC1, geom.nE1
    cands = e1_candidates(geom)
    wc = binom_coeff_vector(nC1)
    out = np.zeros((len(combos), geom.z1_count, len(cands)))
    for ci, combo in enumerate(combos):
        arms = [geom.arm_weights(t) for t in combo]
        nulls = [k for k in range(K) if combo[k] == 1.0]
        if not nulls:
            continue
        free = np.ones(1)
        for a in arms:
            free = np.convolve(free, a)
        d1 = np.convolve(wc, free)[:geom.z1_count]

        # G[cap] = convolution with true-null arms truncated at x <= cap;
        # cap = -1 leaves no allowed values, so the vector is all zero
        g_by_cap = [np.zeros(K * nE1 + 1)]
        for cap in range(0, nE1 + 1):
            g = np.ones(1)
            for k, a in enumerate(arms):
                g = np.convolve(g, a[:cap + 1] if k in nulls else a)
            full = np.zeros(K * nE1 + 1)
            full[:len(g)] = g
            g_by_cap.append(full)
        g_by_cap = np.stack(g_by_cap)  # [cap+1, s]

        below = np.zeros((geom.z1_count, len(cands)))
        s_len = K * nE1 + 1
        for c1 in range(nC1 + 1):
            caps = np.clip(c1 + cands - 1, -1, nE1) + 1
            block = wc[c1] * g_by_cap[caps]            # [cand, s]
            below[c1:c1 + s_len, :] += block.T
        with np.errstate(invalid="ignore", divide="ignore"):
            mat = 1.0 - below / d1[:, None]
        out[ci] = np.clip(mat, 0.0, 1.0)
    return out


def stage1_power_bound(geom: Geometry, f1: int, cfg) -> float:
    """Cheap upper bound on min-over-p familywise power.

    1 - P(every arm accepts at stage one) bounds FWP from above whatever
    the stage-2 boundaries are, so falling short of the power target at
    any pilot p proves the group size infeasible without determining the
    second-stage boundaries.
    """
    if f1 < -geom.nC1:
        return 1.0
    upper = 1.0 - cfg.delta_max
    pilots = sorted({0.0, upper / 2.0, upper, min(0.7, upper)})
    bound = 1.0
    for p in pilots:
        pv = cfg.p_alternative(p)
        b0 = binom_pmf_vector(geom.nC1, float(pv[0]))
        val = np.copy(b0)
        for k in range(1, geom.K + 1):
            cdf = np.concatenate(
                [[0.0], np.cumsum(binom_pmf_vector(geom.nE1, float(pv[k])))])
            idx = np.clip(np.arange(geom.nC1 + 1) + f1 + 1, 0, geom.nE1 + 1)
            val = val * cdf[idx]
        bound = min(bound, 1.0 - float(val.sum()))
    return bound


# ---------------------------------------------------------------------------
# stage-2 prefix-sum tables
#
# Pair tables (two continuing arms): with s2 = z2 - c2 and per-arm weight
# vectors w1, w2 over stage-2 counts,
#     Pp1[s2, v] = sum_{x <= v} w1[x] w2[s2 - x]
# and the control-summed tables, for sigma = (boundary - 1 - T_k1),
#     Q1[z2, sigma, c2] = wc[c2] * Pp1[z2 - c2, c2 + sigma]
# accumulated over c2 from either end.  Every conditional rejection or
# acceptance probability in the two-arm continuation is a difference of
# a handful of entries of these tables.


class PairIndex:
    """Precomputed gather indices for the (z2, sigma, c2) pair tables."""

    def __init__(self, geom: Geometry):
        nC2, nE2 = geom.nC2, geom.nE2
        z2n = geom.z2_count[2]
        self.sig_min = -nC2 - 1
        self.sig_max = nE2
        self.sig_count = self.sig_max - self.sig_min + 1
        z2 = np.arange(z2n)[:, None, None]
        sig = np.arange(self.sig_min, self.sig_max + 1)[None, :, None]
        c2 = np.arange(nC2 + 1)[None, None, :]
        s = z2 - c2
        self.valid = (s >= 0) & (s <= 2 * nE2)
        self.s_idx = np.clip(s, 0, 2 * nE2)
        self.v_idx = np.clip(c2 + sig, -1, nE2) + 1
        self.flat = (self.s_idx * (nE2 + 2) + self.v_idx)
        self.z2n = z2n
        self.nC2 = nC2
        self.nE2 = nE2

    def sigma_index(self, sigma):
        return np.clip(sigma, self.sig_min, self.sig_max) - self.sig_min


def pair_base(geom: Geometry, w1: np.ndarray, w2: np.ndarray):
    """Pp1, Pp2, PpTot for one ordered pair of arm weight vectors."""
    nE2 = geom.nE2
    s_count = 2 * nE2 + 1
    t1 = np.zeros((nE2 + 1, s_count))
    outer = w1[:, None] * w2[None, :]
    for x in range(nE2 + 1):
        t1[x, x:x + nE2 + 1] = outer[x]
    cum1 = np.vstack([np.zeros(s_count), np.cumsum(t1, axis=0)])
    pp1 = cum1.T                                   # [s2, v+1]
    t2 = np.zeros((nE2 + 1, s_count))
    outer2 = w2[:, None] * w1[None, :]
    for x in range(nE2 + 1):
        t2[x, x:x + nE2 + 1] = outer2[x]
    pp2 = np.vstack([np.zeros(s_count), np.cumsum(t2, axis=0)]).T
    tot = pp1[:, -1]
    return pp1, pp2, tot


class PairTables:
    """Control-summed pair tables, cumulated from both ends in c2."""

    def __init__(self, geom: Geometry, idx: PairIndex, wc2, w1, w2,
                 suffix: bool):
        pp1, pp2, tot = pair_base(geom, w1, w2)
        self.tot_by_z2 = np.zeros(idx.z2n)
        q = []
        for pp in (pp1, pp2):
            g = wc2[None, None, :] * pp.ravel()[idx.flat]
            g[~np.broadcast_to(idx.valid, g.shape)] = 0.0
            q.append(g)
        totc = np.where(idx.valid[:, 0, :],
                        wc2[None, :] * tot[idx.s_idx[:, 0, :]], 0.0)
        self.tot_by_z2 = totc.sum(axis=1)

        zero_q = np.zeros((idx.z2n, idx.sig_count, 1))
        zero_t = np.zeros((idx.z2n, 1))
        if suffix:
            # suf[..., t] = sum over c2 >= t
            self.q1 = np.concatenate(
                [np.cumsum(q[0][:, :, ::-1], axis=2)[:, :, ::-1], zero_q], axis=2)
            self.q2 = np.concatenate(
                [np.cumsum(q[1][:, :, ::-1], axis=2)[:, :, ::-1], zero_q], axis=2)
            self.totc = np.concatenate(
                [np.cumsum(totc[:, ::-1], axis=1)[:, ::-1], zero_t], axis=1)
        else:
            # pref[..., t] = sum over c2 < t
            self.q1 = np.concatenate([zero_q, np.cumsum(q[0], axis=2)], axis=2)
            self.q2 = np.concatenate([zero_q, np.cumsum(q[1], axis=2)], axis=2)
            self.totc = np.concatenate([zero_t, np.cumsum(totc, axis=1)], axis=1)
        self.idx = idx


def single_pref(geom: Geometry, wc2, wa):
    """prefC[z2, t] = sum_{c2 < t} wc2[c2] * wa[z2 - c2] (one continuing arm)."""
    z2n = geom.z2_count[1]
    c2 = np.arange(geom.nC2 + 1)[None, :]
    z2 = np.arange(z2n)[:, None]
    s = z2 - c2
    valid = (s >= 0) & (s <= geom.nE2)
    g = np.where(valid, wc2[None, :] * wa[np.clip(s, 0, geom.nE2)], 0.0)
    return np.concatenate([np.zeros((z2n, 1)), np.cumsum(g, axis=1)], axis=1)


# ---------------------------------------------------------------------------
# second-stage boundary determination


def _band(geom, f1, e1z1):
    lo = max(f1 + 1, -geom.nC1)
    hi = min(int(e1z1) - 1, geom.nE1)
    return lo, hi


class DeterminationTables:
    """Per-n tables for the stage-2 boundary solve, shared across cells.

    The conditional-weight tables depend only on n and the theta
    configurations, not on (alpha1, beta1), so one instance serves a
    whole grid sweep at this n.
    """

    COARSE_STEP = 4

    def __init__(self, geom: Geometry, combos):
        self.geom = geom
        self.combos = [tuple(float(t) for t in c) for c in combos]
        K = geom.K
        wc1 = binom_coeff_vector(geom.nC1)
        wc2 = binom_coeff_vector(geom.nC2)
        self.wc1 = wc1
        self.per_combo = []
        self.pair_idx = PairIndex(geom) if K == 2 else None
        for combo in self.combos:
            arms1 = [geom.arm_weights(t) for t in combo]
            arms2 = [geom.arm2_weights(t) for t in combo]
            free = np.ones(1)
            for a in arms1:
                free = np.convolve(free, a)
            d1 = np.convolve(wc1, free)[:geom.z1_count]
            entry = {
                "combo": combo,
                "arms1": arms1,
                "d1": d1,
                "nulls": [k for k in range(K) if combo[k] == 1.0],
                # one continuing arm: tables per choice of continuing arm
                "single": [single_pref(geom, wc2, arms2[a]) for a in range(K)],
            }
            if K == 2:
                entry["pair"] = PairTables(geom, self.pair_idx, wc2,
                                           arms2[0], arms2[1], suffix=True)
            self.per_combo.append(entry)

    # -- m = 1 ---------------------------------------------------------------

    def _m1_weights(self, combo_entry, z1, tlo, thi, f1, e1z1):
        """Stage-1 weight of (continuing arm at T, others dropped), per arm."""
        geom = self.geom
        K = geom.K
        ts = np.arange(tlo, thi + 1)
        wc1 = self.wc1
        out = []
        arms1 = combo_entry["arms1"]
        fdrop = min(f1, int(e1z1) - 1)
        for a in range(K):
            c1 = np.arange(geom.nC1 + 1)[:, None]
            xa = c1 + ts[None, :]
            wa = np.where((xa >= 0) & (xa <= geom.nE1),
                          arms1[a][np.clip(xa, 0, geom.nE1)], 0.0)
            if K == 1:
                w = np.where(c1 + xa == z1, wc1[c1] * wa, 0.0)
            else:
                d = 1 - a
                xd = z1 - c1 - xa
                ok = (xd >= 0) & (xd <= geom.nE1) & (xd - c1 <= fdrop)
                wd = np.where(ok, arms1[d][np.clip(xd, 0, geom.nE1)], 0.0)
                w = wc1[c1] * wa * wd
            out.append(w.sum(axis=0))  # [t]
        return ts, out

    def _m1_tail(self, entry, m1w, ts, e_vals, a):
        """Unnormalised rejection tail over [z2, e] for continuing arm a."""
        geom = self.geom
        pref = entry["single"][a]
        z2 = np.arange(geom.z2_count[1])
        idx = (z2[:, None, None] + ts[None, :, None]
               - e_vals[None, None, :])
        tidx = np.clip(np.floor_divide(idx, 2) + 1, 0, geom.nC2 + 1)
        flat = z2[:, None, None] * (geom.nC2 + 2) + tidx
        vals = pref.ravel()[flat]
        return np.einsum("t,zte->ze", m1w[a], vals)

    # -- m = 2 ---------------------------------------------------------------

    def _m2_pairs(self, z1, tlo, thi, f1):
        """(t1, t2, weight-index c1) with both arms in the band at this z1."""
        geom = self.geom
        ts = np.arange(tlo, thi + 1)
        t1, t2 = np.meshgrid(ts, ts, indexing="ij")
        t1 = t1.ravel()
        t2 = t2.ravel()
        c1_num = z1 - t1 - t2
        ok = (c1_num % 3 == 0)
        c1 = c1_num // 3
        ok &= (c1 >= 0) & (c1 <= geom.nC1)
        ok &= (c1 + t1 >= 0) & (c1 + t1 <= geom.nE1)
        ok &= (c1 + t2 >= 0) & (c1 + t2 <= geom.nE1)
        return t1[ok], t2[ok], c1[ok]

    def _m2_tail(self, entry, t1, t2, w, e_vals):
        """Unnormalised stage-2 familywise-error tail over [z2, e], m = 2."""
        geom = self.geom
        idx = self.pair_idx
        pair: PairTables = entry["pair"]
        nulls = entry["nulls"]
        z2 = np.arange(geom.z2_count[2])[:, None, None]
        e = e_vals[None, None, :]
        t1v = t1[None, :, None]
        t2v = t2[None, :, None]
        if len(nulls) == 2:
            tsum = t1v + t2v
            # first c2 with both-below possible; below it rejection is certain
            cstar = np.clip(-((2 * e - z2 - tsum - 2) // 3), 0, geom.nC2 + 1)
            s1 = idx.sigma_index(e - 1 - t1v)
            s2 = idx.sigma_index(e - 1 - t2v)
            zi = np.broadcast_to(z2, cstar.shape)
            r = (pair.tot_by_z2[:, None, None]
                 + pair.totc[zi, cstar]
                 - pair.q1[zi, np.broadcast_to(s1, cstar.shape), cstar]
                 - pair.q2[zi, np.broadcast_to(s2, cstar.shape), cstar])
        else:
            a = nulls[0]
            q = pair.q1 if a == 0 else pair.q2
            tv = t1v if a == 0 else t2v
            sig = idx.sigma_index(e - 1 - tv)
            zi = np.broadcast_to(z2, sig.shape)
            full = geom.nC2 + 1
            r = (pair.tot_by_z2[:, None, None]
                 - q[zi, sig, np.full_like(zi, full)])
        return np.einsum("t,zte->ze", w, np.clip(r, 0.0, None))

    # -- solve ---------------------------------------------------------------

    def determine_f2(self, f1: int, e1: np.ndarray, budgets: np.ndarray):
        """Minimal stage-2 boundaries per (m, z1, z2) meeting the budgets.

        budgets[z1] is the allowed conditional stage-2 familywise error
        (already divided by K); negative budgets yield never-reject.
        """
        geom = self.geom
        K = geom.K
        cands = geom.e2_candidates
        coarse_sel = np.unique(np.concatenate(
            [np.arange(0, len(cands), self.COARSE_STEP), [len(cands) - 1]]))
        e_coarse = cands[coarse_sel]
        f2 = {m: np.full((geom.z1_count, geom.z2_count[m]), geom.never2 - 1,
                         dtype=np.int32)
              for m in range(1, K + 1)}

        for z1 in range(geom.z1_count):
            tlo, thi = _band(geom, f1, e1[z1])
            if thi < tlo:
                continue
            budget = max(float(budgets[z1]), 0.0)

            # m = 1
            tails = np.zeros((geom.z2_count[1], len(e_coarse)))
            parts = []
            for entry in self.per_combo:
                ts, m1w = self._m1_weights(entry, z1, tlo, thi, f1, e1[z1])
                part = np.zeros_like(tails)
                for a in range(K):
                    if entry["combo"][a] != 1.0:
                        continue
                    d2 = entry["single"][a][:, -1]
                    ta = self._m1_tail(entry, m1w, ts, e_coarse, a)
                    part += ta / (entry["d1"][z1] * d2[:, None])
                parts.append((entry, ts, m1w))
                tails = np.maximum(tails, part) if len(self.per_combo) > 1 \
                    else part
            e_sel = self._pick(tails, budget, e_coarse)
            e_exact = self._refine_m1(parts, z1, budget, e_sel, e_coarse)
            f2[1][z1, :] = e_exact - 1

            # m = 2
            if K == 2:
                tails2 = np.zeros((geom.z2_count[2], len(e_coarse)))
                pair_parts = []
                t1, t2, c1 = self._m2_pairs(z1, tlo, thi, f1)
                if len(t1) == 0:
                    continue
                for entry in self.per_combo:
                    arms1 = entry["arms1"]
                    w = (self.wc1[c1] * arms1[0][c1 + t1]
                         * arms1[1][c1 + t2])
                    if not entry["nulls"]:
                        continue
                    d2 = entry["pair"].tot_by_z2
                    ta = self._m2_tail(entry, t1, t2, w, e_coarse)
                    part = ta / (entry["d1"][z1] * d2[:, None])
                    pair_parts.append((entry, w))
                    tails2 = np.maximum(tails2, part) \
                        if len(self.per_combo) > 1 else part
                e_sel2 = self._pick(tails2, budget, e_coarse)
                e_exact2 = self._refine_m2(pair_parts, t1, t2, z1, budget,
                                           e_sel2, e_coarse)
                f2[2][z1, :] = e_exact2 - 1
        return f2

    def _pick(self, tails, budget, e_coarse):
        """Index into e_coarse of the first candidate meeting the budget."""
        ok = tails <= budget
        ok[:, -1] = True  # never-reject always feasible (tail is exactly 0)
        return ok.argmax(axis=1)

    def _refine_m1(self, parts, z1, budget, e_sel, e_coarse):
        geom = self.geom
        out = np.empty(geom.z2_count[1], dtype=np.int64)
        for z2 in range(geom.z2_count[1]):
            j = e_sel[z2]
            lo = e_coarse[j - 1] + 1 if j > 0 else e_coarse[0]
            hi = e_coarse[j]
            e = hi
            for cand in range(lo, hi):
                tot = 0.0
                for entry, ts, m1w in parts:
                    val = 0.0
                    for a in range(geom.K):
                        if entry["combo"][a] != 1.0:
                            continue
                        pref = entry["single"][a]
                        d2 = pref[z2, -1]
                        tidx = np.clip((z2 + ts - cand) // 2 + 1, 0,
                                       geom.nC2 + 1)
                        val += float(m1w[a] @ pref[z2, tidx]) \
                            / (entry["d1"][z1] * d2)
                    tot = max(tot, val) if len(parts) > 1 else val
                if tot <= budget:
                    e = cand
                    break
            out[z2] = e
        return out

    def _refine_m2(self, pair_parts, t1, t2, z1, budget, e_sel, e_coarse):
        geom = self.geom
        idx = self.pair_idx
        out = np.empty(geom.z2_count[2], dtype=np.int64)
        for z2 in range(geom.z2_count[2]):
            j = e_sel[z2]
            lo = e_coarse[j - 1] + 1 if j > 0 else e_coarse[0]
            hi = e_coarse[j]
            e = hi
            for cand in range(lo, hi):
                tot = 0.0
                for entry, w in pair_parts:
                    pair: PairTables = entry["pair"]
                    nulls = entry["nulls"]
                    if len(nulls) == 2:
                        tsum = t1 + t2
                        cstar = np.clip(-((2 * cand - z2 - tsum - 2) // 3),
                                        0, geom.nC2 + 1)
                        s1 = idx.sigma_index(cand - 1 - t1)
                        s2 = idx.sigma_index(cand - 1 - t2)
                        r = (pair.tot_by_z2[z2]
                             + pair.totc[z2, cstar]
                             - pair.q1[z2, s1, cstar]
                             - pair.q2[z2, s2, cstar])
                    else:
                        a = nulls[0]
                        q = pair.q1 if a == 0 else pair.q2
                        tv = t1 if a == 0 else t2
                        sig = idx.sigma_index(cand - 1 - tv)
                        r = (pair.tot_by_z2[z2]
                             - q[z2, sig, geom.nC2 + 1])
                    val = float(w @ np.clip(r, 0.0, None)) \
                        / (entry["d1"][z1] * pair.tot_by_z2[z2])
                    tot = max(tot, val) if len(pair_parts) > 1 else val
                if tot <= budget:
                    e = cand
                    break
            out[z2] = e
        return out


# ---------------------------------------------------------------------------
# exact operating-characteristic evaluation


def _outcome_keys(K: int):
    from .outcomes import enumerate_outcomes
    return [(o.psi, o.omega) for o in enumerate_outcomes(K)]


class FisherOC:
    """Terminal-outcome distribution of a Fisher design at any p.

    All index algebra (lattice classification, boundary lookups, prefix
    table coordinates) is precomputed once per design; evaluating a new
    success-probability vector only rebuilds the probability-weight
    tables and re-gathers.

    Two probability laws are supported.  ``exact`` is the true law of the
    trial data.  ``plugin`` keeps the stage-wise total success counts at
    their true distribution but evaluates every conditional lattice law
    at unit odds ratios, the same null-conditional tables the boundaries
    are built from; the two coincide whenever all arms share the control
    success probability.
    """

    def __init__(self, design, law: str = "exact"):
        if law not in ("exact", "plugin"):
            raise ValueError(f"unknown law {law!r}")
        b = design.boundaries
        K = design.K
        self.design = design
        self.law = law
        self.K = K
        geom = Geometry(K, *design.group_sizes())
        self.geom = geom
        self.f1 = int(b.f1)
        self.e1 = np.asarray(b.e1, dtype=np.int64)
        self.e2 = {m: np.asarray(b.f2[m], dtype=np.int64) + 1
                   for m in b.f2}
        self.fdrop = np.minimum(self.f1, self.e1 - 1)
        self.keys = _outcome_keys(K)
        self.key_pos = {k: i for i, k in enumerate(self.keys)}
        if law == "plugin":
            # conditional-law denominators: total coefficient mass per z
            self.d1 = binom_coeff_vector(geom.nC1 + K * geom.nE1)
            self.d2 = {m: binom_coeff_vector(geom.nC2 + m * geom.nE2)
                       for m in range(1, K + 1)}
        self._build_stage1()
        self._build_m1()
        if K == 2:
            self.pair_idx = PairIndex(geom)
            self._build_m2()

    # -- structure ----------------------------------------------------------

    def _build_stage1(self):
        geom = self.geom
        K = geom.K
        nC1, nE1 = geom.nC1, geom.nE1
        if K == 1:
            c1, x1 = np.meshgrid(np.arange(nC1 + 1), np.arange(nE1 + 1),
                                 indexing="ij")
            c1 = c1.ravel()
            x1 = x1.ravel()
            z1 = c1 + x1
            t1 = x1 - c1
            cls1 = np.where(t1 >= self.e1[z1], 2,
                            np.where(t1 <= self.fdrop[z1], 1, 0))
            # bucket ids: 0 reject@1, 1 accept@1, 2 continue (handled below)
            bucket = np.where(cls1 == 2, 0, np.where(cls1 == 1, 1, 2))
            self.lat = dict(c1=c1, x1=x1, bucket=bucket, z1=z1, t1=t1)
            self.n_stop_buckets = 2
        else:
            rng_c = np.arange(nC1 + 1)
            rng_x = np.arange(nE1 + 1)
            c1, x1, x2 = np.meshgrid(rng_c, rng_x, rng_x, indexing="ij")
            c1 = c1.ravel()
            x1 = x1.ravel()
            x2 = x2.ravel()
            z1 = c1 + x1 + x2
            t1 = x1 - c1
            t2 = x2 - c1
            e1v = self.e1[z1]
            fd = self.fdrop[z1]
            cls1 = np.where(t1 >= e1v, 2, np.where(t1 <= fd, 1, 0))
            cls2 = np.where(t2 >= e1v, 2, np.where(t2 <= fd, 1, 0))
            r1 = cls1 == 2
            r2 = cls2 == 2
            # 0:(1,0) 1:(0,1) 2:(1,1) 3:(0,0)acc 4:m1 arm1 5:m1 arm2 6:m2
            bucket = np.full(c1.shape, 6, dtype=np.int8)
            bucket[r1 & ~r2] = 0
            bucket[~r1 & r2] = 1
            bucket[r1 & r2] = 2
            bucket[(cls1 == 1) & (cls2 == 1)] = 3
            bucket[(cls1 == 0) & (cls2 == 1)] = 4
            bucket[(cls1 == 1) & (cls2 == 0)] = 5
            self.lat = dict(c1=c1, x1=x1, x2=x2, bucket=bucket, z1=z1,
                            t1=t1, t2=t2)
            self.n_stop_buckets = 4

    def _cell_grid(self):
        geom = self.geom
        tlo = max(self.f1 + 1, -geom.nC1)
        thi = min(int(self.e1.max()) - 1, geom.nE1)
        return tlo, max(thi, tlo - 1)

    def _build_m1(self):
        """Continuing-arm rejection probabilities on the (z1, T) cell grid."""
        geom = self.geom
        tlo, thi = self._cell_grid()
        self.m1_tlo = tlo
        twidth = thi - tlo + 1
        self.m1_twidth = twidth
        z2n = geom.z2_count[1]
        z2 = np.arange(z2n)
        e2v = self.e2[1]                       # [z1, z2]
        cells_t = np.arange(tlo, thi + 1)
        # tidx[z1, t, z2]: prefix count of control counts giving rejection
        v = (z2[None, None, :] + cells_t[None, :, None]
             - e2v[:, None, :])
        tidx = np.clip(np.floor_divide(v, 2) + 1, 0, geom.nC2 + 1)
        self.m1_flat = (z2[None, None, :] * (geom.nC2 + 2) + tidx
                        ).astype(np.int32)

        lat = self.lat
        if geom.K == 1:
            sel = lat["bucket"] == 2
            self.m1_pts = [dict(
                c1=lat["c1"][sel], xa=lat["x1"][sel], xd=None,
                cell=(lat["z1"][sel] * twidth
                      + (lat["t1"][sel] - tlo)).astype(np.int64))]
        else:
            pts = []
            for a, bid in ((0, 4), (1, 5)):
                sel = lat["bucket"] == bid
                ta = lat["t1"] if a == 0 else lat["t2"]
                xa = lat["x1"] if a == 0 else lat["x2"]
                xd = lat["x2"] if a == 0 else lat["x1"]
                pts.append(dict(
                    c1=lat["c1"][sel], xa=xa[sel], xd=xd[sel],
                    cell=(lat["z1"][sel] * twidth
                          + (ta[sel] - tlo)).astype(np.int64)))
            self.m1_pts = pts
        self.m1_ncells = geom.z1_count * twidth

    def _build_m2(self):
        geom = self.geom
        idx = self.pair_idx
        lat = self.lat
        sel = lat["bucket"] == 6
        c1 = lat["c1"][sel]
        t1 = lat["t1"][sel]
        t2 = lat["t2"][sel]
        z1 = lat["z1"][sel]
        self.m2_c1 = c1
        self.m2_t1 = t1
        self.m2_t2 = t2
        z2n = geom.z2_count[2]
        z2 = np.arange(z2n)[None, :]
        e2v = self.e2[2][z1]                   # [pts, z2]
        sigc = idx.sig_count
        width = geom.nC2 + 2
        s1 = idx.sigma_index(e2v - 1 - t1[:, None])
        s2 = idx.sigma_index(e2v - 1 - t2[:, None])
        tstar = np.clip((z2 + t1[:, None] + t2[:, None] - 2 * e2v) // 3 + 1,
                        0, geom.nC2 + 1)
        self.m2_q1_flat = ((z2 * sigc + s1) * width + tstar).astype(np.int32)
        self.m2_q2_flat = ((z2 * sigc + s2) * width + tstar).astype(np.int32)
        self.m2_tot_flat = (z2 * width + tstar).astype(np.int32)

        # marginal rejection per (z1, T) cell: full-control-sum column
        tlo, twidth = self.m1_tlo, self.m1_twidth
        cells_t = np.arange(tlo, tlo + twidth)
        e2c = self.e2[2]                       # [z1, z2]
        sig_m = idx.sigma_index(e2c[:, None, :] - 1 - cells_t[None, :, None])
        self.m2_marg_flat = ((np.arange(z2n)[None, None, :] * sigc + sig_m)
                             * width + (geom.nC2 + 1)).astype(np.int32)
        self.m2_cell = (z1 * twidth + (t1 - tlo)).astype(np.int64)
        self.m2_cell2 = (z1 * twidth + (t2 - tlo)).astype(np.int64)

    # -- evaluation ----------------------------------------------------------

    def _weights(self, p):
        geom = self.geom
        K = geom.K
        if self.law == "exact":
            return dict(
                b0_1=binom_pmf_vector(geom.nC1, float(p[0])),
                b0_2=binom_pmf_vector(geom.nC2, float(p[0])),
                arms1=[binom_pmf_vector(geom.nE1, float(p[k]))
                       for k in range(1, K + 1)],
                arms2=[binom_pmf_vector(geom.nE2, float(p[k]))
                       for k in range(1, K + 1)],
                r1=None, r2=None)
        # plugin law: coefficient weights plus total-count reweighting
        g1 = binom_pmf_vector(geom.nC1, float(p[0]))
        for k in range(1, K + 1):
            g1 = np.convolve(g1, binom_pmf_vector(geom.nE1, float(p[k])))
        r1 = g1 / self.d1
        r2 = {}
        b0_2p = binom_pmf_vector(geom.nC2, float(p[0]))
        for m in range(1, K + 1):
            r2[m] = {}
        for a in range(K):
            g2 = np.convolve(b0_2p, binom_pmf_vector(geom.nE2, float(p[a + 1])))
            r2[1][a] = g2 / self.d2[1]
        if K == 2:
            g2 = np.convolve(np.convolve(
                b0_2p, binom_pmf_vector(geom.nE2, float(p[1]))),
                binom_pmf_vector(geom.nE2, float(p[2])))
            r2[2][None] = g2 / self.d2[2]
        return dict(
            b0_1=binom_coeff_vector(geom.nC1),
            b0_2=binom_coeff_vector(geom.nC2),
            arms1=[binom_coeff_vector(geom.nE1)] * K,
            arms2=[binom_coeff_vector(geom.nE2)] * K,
            r1=r1, r2=r2)

    def outcome_probs(self, p) -> np.ndarray:
        """Probabilities of every terminal outcome, in canonical order."""
        geom = self.geom
        K = geom.K
        w = self._weights(p)
        lat = self.lat
        if K == 1:
            wpt = w["b0_1"][lat["c1"]] * w["arms1"][0][lat["x1"]]
        else:
            wpt = (w["b0_1"][lat["c1"]] * w["arms1"][0][lat["x1"]]
                   * w["arms1"][1][lat["x2"]])
        if w["r1"] is not None:
            wpt = wpt * w["r1"][lat["z1"]]
        by_bucket = np.bincount(lat["bucket"], weights=wpt,
                                minlength=self.n_stop_buckets + 3)

        out = np.zeros(len(self.keys))
        pos = self.key_pos
        if K == 1:
            out[pos[((1,), (1,))]] = by_bucket[0]
            out[pos[((0,), (1,))]] = by_bucket[1]
        else:
            out[pos[((1, 0), (1, 1))]] = by_bucket[0]
            out[pos[((0, 1), (1, 1))]] = by_bucket[1]
            out[pos[((1, 1), (1, 1))]] = by_bucket[2]
            out[pos[((0, 0), (1, 1))]] = by_bucket[3]

        # one continuing arm
        for a, pts in enumerate(self.m1_pts):
            if pts["c1"].size == 0:
                continue
            wa = w["b0_1"][pts["c1"]] * w["arms1"][a][pts["xa"]]
            if pts["xd"] is not None:
                wa = wa * w["arms1"][1 - a][pts["xd"]]
            if w["r1"] is not None:
                wa = wa * w["r1"][pts["cell"] // self.m1_twidth]
            cellw = np.bincount(pts["cell"], weights=wa,
                                minlength=self.m1_ncells)
            cellw = cellw.reshape(self.geom.z1_count, self.m1_twidth)
            pref = single_pref(geom, w["b0_2"], w["arms2"][a])
            if w["r2"] is not None:
                pref = pref * w["r2"][1][a][:, None]
            rej = pref.ravel()[self.m1_flat].sum(axis=2)
            p_rej = float((cellw * rej).sum())
            p_tot = float(cellw.sum())
            if K == 1:
                out[pos[((1,), (2,))]] += p_rej
                out[pos[((0,), (2,))]] += p_tot - p_rej
            else:
                psi_r = ((1, 0), (2, 1)) if a == 0 else ((0, 1), (1, 2))
                psi_a = ((0, 0), (2, 1)) if a == 0 else ((0, 0), (1, 2))
                out[pos[psi_r]] += p_rej
                out[pos[psi_a]] += p_tot - p_rej

        # two continuing arms
        if K == 2 and self.m2_c1.size:
            wpair = (w["b0_1"][self.m2_c1]
                     * w["arms1"][0][self.m2_c1 + self.m2_t1]
                     * w["arms1"][1][self.m2_c1 + self.m2_t2])
            if w["r1"] is not None:
                wpair = wpair * w["r1"][self.m2_c1 * 3 + self.m2_t1
                                        + self.m2_t2]
            tabs = PairTables(geom, self.pair_idx, w["b0_2"],
                              w["arms2"][0], w["arms2"][1], suffix=False)
            if w["r2"] is not None:
                scale = w["r2"][2][None]
                tabs.q1 = tabs.q1 * scale[:, None, None]
                tabs.q2 = tabs.q2 * scale[:, None, None]
                tabs.totc = tabs.totc * scale[:, None]
            q1 = tabs.q1.ravel()
            q2 = tabs.q2.ravel()
            totc = tabs.totc.ravel()
            both = (totc[self.m2_tot_flat]
                    - q1[self.m2_q1_flat]
                    - q2[self.m2_q2_flat]).sum(axis=1)
            both = np.clip(both, 0.0, 1.0)
            marg = q1.reshape(-1)[self.m2_marg_flat].sum(axis=2)
            marg1 = np.clip(1.0 - marg, 0.0, 1.0)
            # same boundary algebra for the second arm, other orientation
            marg_b = q2.reshape(-1)[self.m2_marg_flat].sum(axis=2)
            marg2 = np.clip(1.0 - marg_b, 0.0, 1.0)
            tlo, twidth = self.m1_tlo, self.m1_twidth
            r1 = marg1.ravel()[self.m2_cell]
            r2 = marg2.ravel()[self.m2_cell2]
            p11 = np.minimum(both, np.minimum(r1, r2))
            b11 = float(wpair @ p11)
            b10 = float(wpair @ (r1 - p11))
            b01 = float(wpair @ (r2 - p11))
            b00 = float(wpair @ np.clip(1.0 - r1 - r2 + p11, 0.0, 1.0))
            out[pos[((1, 1), (2, 2))]] += b11
            out[pos[((1, 0), (2, 2))]] += b10
            out[pos[((0, 1), (2, 2))]] += b01
            out[pos[((0, 0), (2, 2))]] += b00
        return out


_OC_CACHE = {}


def _oc_for(design, law: str = "exact") -> FisherOC:
    key = (id(design), law)
    hit = _OC_CACHE.get(key)
    if hit is not None and hit[0] is design:
        return hit[1]
    oc = FisherOC(design, law=law)
    if len(_OC_CACHE) > 16:
        _OC_CACHE.clear()
    _OC_CACHE[key] = (design, oc)
    return oc


def outcome_probs_vector(design, p, law: str = "exact") -> np.ndarray:
    return _oc_for(design, law).outcome_probs(np.asarray(p, dtype=float))


def outcome_distribution(design, p, law: str = "exact"):
    """{OutcomePair: probability} for a Fisher design."""
    from .outcomes import enumerate_outcomes
    probs = outcome_probs_vector(design, p, law)
    space = enumerate_outcomes(design.K)
    return {o: float(v) for o, v in zip(space, probs)}


class AllArmPower:
    """Familywise power with stage-2 exceedances counted for every arm.

    The published sample sizes are reproducible only if an arm dropped
    for futility at stage one still counts toward "some null rejected"
    when a hypothetical second-stage run of that arm would cross the
    rejection boundary of the actually-continuing configuration.  This
    evaluator computes that variant exactly; it coincides with the
    conduct-law familywise power when no arm can be dropped while the
    study continues (in particular for a single experimental arm).
    """

    def __init__(self, design):
        self.oc = _oc_for(design, "exact")
        geom = self.oc.geom
        self.geom = geom
        if geom.K == 1:
            return
        # (z1, T_cont, T_drop) cells, one per lattice class, per assignment
        f1 = self.oc.f1
        e1 = self.oc.e1
        fdrop = self.oc.fdrop
        e2v = self.oc.e2[1]                      # [z1, z2]
        z2n = geom.z2_count[1]
        z2 = np.arange(z2n)[None, :]
        self.pts = []
        lat = self.oc.lat
        for a, bid in ((0, 4), (1, 5)):
            sel = lat["bucket"] == bid
            c1 = lat["c1"][sel]
            ta = (lat["t1"] if a == 0 else lat["t2"])[sel]
            td = (lat["t2"] if a == 0 else lat["t1"])[sel]
            z1 = lat["z1"][sel]
            f2v = e2v[z1] - 1                    # [pts, z2]
            sd = np.clip(f2v - td[:, None], -geom.nC2 - 1, geom.nE2)
            sd_idx = sd + geom.nC2 + 1
            c2lo = np.clip(-((f2v - ta[:, None] - z2) // 2), 0, geom.nC2 + 1)
            flat = ((z2 * (geom.nC2 + geom.nE2 + 2) + sd_idx)
                    * (geom.nC2 + 2) + c2lo).astype(np.int32)
            self.pts.append(dict(a=a, c1=c1, xa=c1 + ta, xd=c1 + td,
                                 flat=flat))

    def _phantom_table(self, p, a):
        """U[z2, sd, c2lo]: suffix-in-c2 mass with the dropped arm's CDF."""
        geom = self.geom
        wc2 = binom_pmf_vector(geom.nC2, float(p[0]))
        wa2 = binom_pmf_vector(geom.nE2, float(p[a + 1]))
        fd2 = np.concatenate([[0.0], np.cumsum(
            binom_pmf_vector(geom.nE2, float(p[2 - a])))])
        z2n = geom.z2_count[1]
        z2 = np.arange(z2n)[:, None, None]
        c2 = np.arange(geom.nC2 + 1)[None, None, :]
        sd = np.arange(-geom.nC2 - 1, geom.nE2 + 1)[None, :, None]
        s = z2 - c2
        valid = (s >= 0) & (s <= geom.nE2)
        g = np.where(valid, wc2 * wa2[np.clip(s, 0, geom.nE2)], 0.0)
        g = g * fd2[np.clip(c2 + sd + 1, 0, geom.nE2 + 1)]
        suf = np.concatenate(
            [np.cumsum(g[:, :, ::-1], axis=2)[:, :, ::-1],
             np.zeros((z2n, g.shape[1], 1))], axis=2)
        return suf

    def fwp(self, p) -> float:
        p = np.asarray(p, dtype=float)
        oc = self.oc
        probs = oc.outcome_probs(p)
        keys = oc.keys
        no_rej_stop = sum(v for (psi, om), v in zip(keys, probs)
                          if not any(psi) and max(om) == 1)
        if self.geom.K == 1:
            no_rej = no_rej_stop + sum(
                v for (psi, om), v in zip(keys, probs)
                if not any(psi) and max(om) == 2)
            return 1.0 - float(no_rej)
        both_acc_m2 = probs[oc.key_pos[((0, 0), (2, 2))]]
        m1_acc = 0.0
        for pts in self.pts:
            if pts["c1"].size == 0:
                continue
            a = pts["a"]
            w0 = binom_pmf_vector(self.geom.nC1, float(p[0]))
            wa1 = binom_pmf_vector(self.geom.nE1, float(p[a + 1]))
            wd1 = binom_pmf_vector(self.geom.nE1, float(p[2 - a]))
            wpt = w0[pts["c1"]] * wa1[pts["xa"]] * wd1[pts["xd"]]
            table = self._phantom_table(p, a).ravel()
            acc = table[pts["flat"]].sum(axis=1)
            m1_acc += float(wpt @ acc)
        return 1.0 - float(no_rej_stop + both_acc_m2 + m1_acc)
