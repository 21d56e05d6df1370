"""Exact and simulated operating characteristics of a determined design.

Familywise error rate, familywise power, per-hypothesis rejection
probabilities and expected sample size all come from one exact
terminal-outcome distribution; searches for the worst-case error rate
(over the common-p diagonal, or over the whole probability hypercube)
and Monte Carlo replay validation build on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .binomial import BinomialDesign, outcome_distribution_binomial
from .fisher import FisherDesign
from .outcomes import enumerate_outcomes

PROB_SUM_TOL = 1e-9


class ConsistencyError(RuntimeError):
    """Raised when an exact outcome distribution fails to total one."""


@dataclass(frozen=True)
class OCReport:
    """Exact operating characteristics at a single success-probability vector."""

    p: tuple
    fwer: float
    fwp: float
    ess: float
    per_arm_reject: tuple
    total_prob: float

    def to_json(self):
        return {"p": list(self.p), "fwer": self.fwer, "fwp": self.fwp,
                "ess": self.ess,
                "per_arm_reject": list(self.per_arm_reject),
                "total_prob": self.total_prob}


@dataclass
class MaxFwerResult:
    """Worst familywise error rate located by a search, with its trace."""

    argmax_p: tuple
    max_fwer: float
    search_trace: list = field(default_factory=list)

    def to_json(self, trace_limit=None):
        trace = self.search_trace
        if trace_limit is not None:
            trace = trace[:trace_limit]
        return {"argmax_p": list(self.argmax_p), "max_fwer": self.max_fwer,
                "evaluations": len(self.search_trace),
                "search_trace": [{"p": list(p), "fwer": v} for p, v in trace]}


def _design_K(design, p=None):
    if isinstance(design, FisherDesign):
        return design.K
    if p is None:
        raise ValueError("K cannot be inferred for a binomial design without p")
    return len(p) - 1


def outcome_probs(design, p, law: str = "exact"):
    """(outcome space, probability vector) for either design family.

    ``law`` selects the probability model for Fisher designs: the true
    law of the trial data ("exact"), or the null-conditional plug-in law
    ("plugin") used by the design-stage reports; the two agree whenever
    every arm shares the control success probability.  Binomial designs
    have no conditioning step, so the laws coincide there.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("success probabilities must lie in [0, 1]")
    if isinstance(design, FisherDesign):
        if p.size != design.K + 1:
            raise ValueError(f"p must have length {design.K + 1}")
        space = enumerate_outcomes(design.K)
        return space, _engine.outcome_probs_vector(design, p, law)
    if isinstance(design, BinomialDesign):
        space = enumerate_outcomes(p.size - 1)
        dist = outcome_distribution_binomial(design, p)
        return space, np.array([dist[o] for o in space])
    raise TypeError(f"unknown design type {type(design)!r}")


def sample_sizes_by_outcome(design, K: int) -> np.ndarray:
    """Total subjects n(rC_{max omega} + sum_k rE_{omega_k}) per outcome."""
    n = design.n
    ratios = design.ratios
    rc = [0, n, int(ratios.rC2 * n)]
    re = [0, int(ratios.rE1 * n), int(ratios.rE2 * n)]
    out = []
    for o in enumerate_outcomes(K):
        out.append(rc[max(o.omega)] + sum(re[w] for w in o.omega))
    return np.array(out, dtype=float)


def oc_at(design, p, check: bool = True, law: str = "exact") -> OCReport:
    """Exact FWER, FWP, ESS and per-arm rejection probabilities at p."""
    p = np.asarray(p, dtype=float)
    space, probs = outcome_probs(design, p, law)
    total = float(probs.sum())
    if check and abs(total - 1.0) > PROB_SUM_TOL:
        raise ConsistencyError(
            f"outcome probabilities total {total!r}, not 1 within "
            f"{PROB_SUM_TOL}")
    K = space.K
    psi = np.array([o.psi for o in space])              # [n_out, K]
    rej_any = psi.any(axis=1)
    nulls = np.array([p[k + 1] == p[0] for k in range(K)])
    fwer_mask = (psi & nulls[None, :]).any(axis=1)
    ess = float(probs @ sample_sizes_by_outcome(design, K))
    per_arm = tuple(float(probs @ psi[:, k]) for k in range(K))
    return OCReport(
        p=tuple(float(v) for v in p),
        fwer=float(probs[fwer_mask].sum()),
        fwp=float(probs[rej_any].sum()),
        ess=ess,
        per_arm_reject=per_arm,
        total_prob=total)


def _fwer_common(design, K, p):
    """FWER at the common vector (p, ..., p); all nulls true there."""
    rep = oc_at(design, np.full(K + 1, p), check=False)
    return rep.fwer


CONDUCT = "conduct"
ALLARM = "allarm"


def fwp_at(design, p, power: str = CONDUCT, law: str = "exact") -> float:
    """Familywise power at p under the chosen counting rule.

    ``conduct`` counts rejections the trial can actually declare.
    ``allarm`` additionally counts a futility-dropped arm whose
    hypothetical second-stage run would cross the rejection boundary;
    the published sample sizes correspond to this rule.
    """
    if power == CONDUCT or isinstance(design, BinomialDesign):
        return oc_at(design, p, check=False, law=law).fwp
    if power != ALLARM:
        raise ValueError(f"unknown power rule {power!r}")
    return _engine.AllArmPower(design).fwp(p)


def max_fwer_common_p(design, grid_step: float = 0.01, K=None,
                      refine: bool = True) -> MaxFwerResult:
    """Worst FWER along the common-p diagonal, grid plus local refinement."""
    if grid_step > 0.01:
        raise ValueError("common-p grid step must be at most 0.01")
    K = _design_K(design) if K is None else K
    trace = []

    def f(p):
        v = _fwer_common(design, K, p)
        trace.append((tuple([p] * (K + 1)), v))
        return v

    grid = np.round(np.arange(0.0, 1.0 + grid_step / 2, grid_step), 10)
    vals = [f(p) for p in grid]
    j = int(np.argmax(vals))
    best_p, best_v = float(grid[j]), vals[j]
    if refine:
        lo = float(grid[max(0, j - 1)])
        hi = float(grid[min(len(grid) - 1, j + 1)])
        x, v = _engine.golden_max(f, lo, hi)
        if v > best_v:
            best_p, best_v = x, v
    return MaxFwerResult(argmax_p=tuple([best_p] * (K + 1)),
                         max_fwer=best_v, search_trace=trace)


def min_fwp(design, delta, grid_step: float = 0.01, K=None,
            fail_fast_below=None, power: str = CONDUCT):
    """Smallest FWP of (p, ..., p) + delta over p in [0, 1 - max delta].

    With ``fail_fast_below`` set, a handful of pilot points are checked
    first; any pilot under the threshold is returned immediately as a
    witness that the minimum is below target.
    """
    K = _design_K(design) if K is None else K
    delta = np.asarray(delta, dtype=float)
    upper = round(1.0 - delta[1:].max(), 10)

    def f(p):
        pv = np.round(np.clip(p + delta, 0.0, 1.0), 12)
        return fwp_at(design, pv, power=power)

    if fail_fast_below is not None:
        for p in sorted({0.0, upper, round(upper / 2, 10),
                         min(0.7, upper)}):
            if f(p) < fail_fast_below:
                return float(p), f(p)

    grid = np.round(np.arange(0.0, upper + grid_step / 2, grid_step), 10)
    vals = [f(p) for p in grid]
    j = int(np.argmin(vals))
    best_p, best_v = float(grid[j]), vals[j]
    lo = float(grid[max(0, j - 1)])
    hi = float(grid[min(len(grid) - 1, j + 1)])
    x, negv = _engine.golden_max(lambda p: -f(p), lo, hi)
    if -negv < best_v:
        best_p, best_v = x, -negv
    return best_p, best_v


def _nonempty_subsets(K):
    out = []
    for mask in range(1, 2 ** K):
        out.append([k for k in range(K) if mask >> k & 1])
    return out


def max_fwer_full(design, budget: int = 5000, seed: int = 0, K=None,
                  restarts: int = 20) -> MaxFwerResult:
    """Worst FWER over the whole hypercube [0, 1]^(K+1).

    The FWER is positive only where some arm sits exactly at the control
    level, so the search runs one sub-search per nonempty true-null
    pattern: null arms are pinned to p0 and the remaining coordinates are
    explored by seeded multi-start coordinate search with shrinking steps
    (0.1 down to 0.001).  The all-null pattern is the common-p diagonal
    and is scanned at step 0.01 plus refinement, so the full-space result
    is never below the diagonal search's.
    """
    if budget < 1000:
        raise ValueError("budget must be at least 1000 evaluations")
    K = _design_K(design) if K is None else K
    trace = []
    used = [0]

    def fwer_at(pfull):
        rep = oc_at(design, pfull, check=False)
        trace.append((tuple(float(v) for v in pfull), rep.fwer))
        used[0] += 1
        return rep.fwer

    best_p, best_v = None, -1.0

    # all-null pattern: the diagonal
    diag = max_fwer_common_p(design, 0.01, K=K)
    trace.extend(diag.search_trace)
    used[0] += len(diag.search_trace)
    best_p = diag.argmax_p
    best_v = diag.max_fwer

    patterns = [s for s in _nonempty_subsets(K) if len(s) < K]
    steps = (0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)
    for si, nulls in enumerate(patterns):
        free = [k for k in range(K) if k not in nulls]
        dim = 1 + len(free)
        rng = np.random.default_rng([seed, si])
        share = max(1, (budget - used[0]) // max(1, len(patterns) - si))
        spent0 = used[0]
        n_starts = max(4, restarts // max(1, len(patterns)))
        starts = rng.random((n_starts, dim))
        starts[0] = 0.5

        def embed(x):
            p = np.empty(K + 1)
            p[0] = x[0]
            for k in nulls:
                p[k + 1] = x[0]
            for i, k in enumerate(free):
                p[k + 1] = x[1 + i]
            return p

        for x0 in starts:
            if used[0] - spent0 >= share:
                break
            x = np.clip(x0, 0.0, 1.0)
            v = fwer_at(embed(x))
            if v > best_v:
                best_p, best_v = tuple(embed(x)), v
            for step in steps:
                improved = True
                while improved and used[0] - spent0 < share:
                    improved = False
                    for d in range(dim):
                        for sgn in (+1.0, -1.0):
                            cand = x.copy()
                            cand[d] = min(1.0, max(0.0, cand[d] + sgn * step))
                            if cand[d] == x[d]:
                                continue
                            cv = fwer_at(embed(cand))
                            if cv > v:
                                x, v = cand, cv
                                improved = True
                                if cv > best_v:
                                    best_p, best_v = tuple(embed(cand)), cv
    return MaxFwerResult(argmax_p=best_p, max_fwer=best_v, search_trace=trace)


# ---------------------------------------------------------------------------
# Monte Carlo replay


@dataclass(frozen=True)
class SimReport:
    """Empirical operating characteristics with standard errors."""

    p: tuple
    reps: int
    seed: int
    fwer: float
    fwer_se: float
    fwp: float
    fwp_se: float
    ess: float
    ess_se: float
    per_arm_reject: tuple
    per_arm_reject_se: tuple

    def to_json(self):
        return {"p": list(self.p), "reps": self.reps, "seed": self.seed,
                "fwer": self.fwer, "fwer_se": self.fwer_se,
                "fwp": self.fwp, "fwp_se": self.fwp_se,
                "ess": self.ess, "ess_se": self.ess_se,
                "per_arm_reject": list(self.per_arm_reject),
                "per_arm_reject_se": list(self.per_arm_reject_se)}


def simulate(design, p, reps: int = 100_000, seed: int = 0) -> SimReport:
    """Replay the trial on pseudo-random data and summarise empirically.

    Deterministic given the seed; reps must be at least 10^4 so the
    standard errors are meaningful.
    """
    if reps < 10_000:
        raise ValueError("reps must be at least 10^4")
    p = np.asarray(p, dtype=float)
    K = _design_K(design, p)
    if p.size != K + 1:
        raise ValueError(f"p must have length {K + 1}")
    nC1, nC2, nE1, nE2 = design.ratios.group_sizes(design.n)
    rng = np.random.default_rng(seed)

    c1 = rng.binomial(nC1, p[0], size=reps)
    x1 = np.stack([rng.binomial(nE1, p[k], size=reps)
                   for k in range(1, K + 1)], axis=1)
    t1 = x1 - c1[:, None]

    if isinstance(design, FisherDesign):
        b = design.boundaries
        z1 = c1 + x1.sum(axis=1)
        e1v = np.asarray(b.e1, dtype=np.int64)[z1][:, None]
        f1 = b.f1
    else:
        e1v = design.e1
        f1 = design.f1

    rej1 = t1 >= e1v
    acc1 = ~rej1 & (t1 <= f1)
    band = ~rej1 & ~acc1
    stop = rej1.any(axis=1) | ~band.any(axis=1)
    cont = ~stop

    psi = rej1.copy()
    omega = np.ones((reps, K), dtype=np.int8)
    n_cont = int(cont.sum())
    if n_cont:
        c2 = rng.binomial(nC2, p[0], size=n_cont)
        x2 = np.stack([rng.binomial(nE2, p[k], size=n_cont)
                       for k in range(1, K + 1)], axis=1)
        bandc = band[cont]
        t2 = (x1[cont] + x2) - (c1[cont] + c2)[:, None]
        if isinstance(design, FisherDesign):
            b = design.boundaries
            z1c = z1[cont]
            z2 = c2 + (x2 * bandc).sum(axis=1)
            m = bandc.sum(axis=1)
            e2v = np.empty(n_cont, dtype=np.int64)
            for mv in range(1, K + 1):
                rows = m == mv
                if rows.any():
                    e2v[rows] = (np.asarray(b.f2[mv], dtype=np.int64)
                                 [z1c[rows], z2[rows]] + 1)
            rej2 = bandc & (t2 >= e2v[:, None])
        else:
            rej2 = bandc & (t2 >= design.e2)
        psi_c = psi[cont]
        psi_c |= rej2
        psi[cont] = psi_c
        om = omega[cont]
        om[bandc] = 2
        omega[cont] = om

    nulls = np.array([p[k + 1] == p[0] for k in range(K)])
    any_rej = psi.any(axis=1)
    fw_err = (psi & nulls[None, :]).any(axis=1)
    m_all = np.zeros(reps)
    if n_cont:
        m_all[cont] = band[cont].sum(axis=1)
    subjects = (nC1 + K * nE1
                + np.where(cont, nC2 + m_all * nE2, 0.0))

    def rate(mask):
        r = float(mask.mean())
        return r, math.sqrt(r * (1.0 - r) / reps)

    fwer, fwer_se = rate(fw_err)
    fwp, fwp_se = rate(any_rej)
    ess = float(subjects.mean())
    ess_se = float(subjects.std(ddof=1) / math.sqrt(reps))
    arm = [rate(psi[:, k]) for k in range(K)]
    return SimReport(
        p=tuple(float(v) for v in p), reps=reps, seed=seed,
        fwer=fwer, fwer_se=fwer_se, fwp=fwp, fwp_se=fwp_se,
        ess=ess, ess_se=ess_se,
        per_arm_reject=tuple(a[0] for a in arm),
        per_arm_reject_se=tuple(a[1] for a in arm))
