"""Two-stage multi-arm design based on exact binomial tests.

Each arm k is compared to control through the success-difference
statistics T_kj (cumulative arm successes minus cumulative control
successes).  A common pair of integer boundaries applies at each stage:
T_kj <= f_j accepts the k-th null, T_kj >= e_j rejects it, and a
rejection at stage 1 stops the whole study.  Terminal-outcome
probabilities factor over arms once the control counts are fixed, which
this module exploits instead of the raw 2(K+1)-fold lattice sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import AllocationRatios, TrialConfig
from .kernel import binom_pmf_vector
from .outcomes import OutcomePair, enumerate_outcomes

INF = math.inf


@dataclass(frozen=True)
class BinomialDesign:
    """(n, f, e) with e2 = f2 + 1; boundaries shared by every arm."""

    n: int
    f1: int
    f2: int
    e1: int
    e2: int
    ratios: AllocationRatios

    def __post_init__(self):
        if self.e2 != self.f2 + 1:
            raise ValueError("e2 must equal f2 + 1")
        if not self.f1 < self.e1 - 1:
            raise ValueError("need f1 < e1 - 1")
        nC1, nC2, nE1, nE2 = self.ratios.group_sizes(self.n)
        if not -nC1 <= self.f1 <= nE1 - 2:
            raise ValueError(f"f1={self.f1} outside design space for n={self.n}")
        if not -nC1 + 2 <= self.e1 <= nE1:
            raise ValueError(f"e1={self.e1} outside design space for n={self.n}")
        if not self.f1 + 1 - nC2 <= self.f2 <= self.e1 - 1 + nE2:
            raise ValueError(f"f2={self.f2} outside design space for n={self.n}")

    @property
    def f(self):
        return (self.f1, self.f2)

    @property
    def e(self):
        return (self.e1, self.e2)

    def group_sizes(self):
        return self.ratios.group_sizes(self.n)

    def max_n_subjects(self, K: int) -> int:
        return self.ratios.max_n_subjects(self.n, K)

    def to_json(self):
        return {"method": "binomial", "n": self.n, "f1": self.f1,
                "f2": self.f2, "e1": self.e1, "e2": self.e2,
                "ratios": self.ratios.to_json()}

    @classmethod
    def from_json(cls, d):
        return cls(n=d["n"], f1=d["f1"], f2=d["f2"], e1=d["e1"], e2=d["e2"],
                   ratios=AllocationRatios.from_json(d["ratios"]))


def test_statistics(counts, stage: int) -> np.ndarray:
    """T_kj for every arm: cumulative arm minus cumulative control successes.

    ``counts[j][k]`` holds the stage-(j+1) successes of arm k (k = 0 is
    control); only stages up to ``stage`` are read.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=int))
    if not 1 <= stage <= counts.shape[0]:
        raise ValueError(f"stage {stage} inconsistent with data shape")
    cum = counts[:stage].sum(axis=0)
    return cum[1:] - cum[0]


def band_E(k: int, j: int, o: OutcomePair, d: BinomialDesign):
    """Closed interval of T_kj values consistent with terminal outcome o.

    Five cases: the open continuation band before an arm resolves,
    unconstrained after it resolves, the rejection tail at its resolution
    stage, everything-but-rejection for arms swept up by another arm's
    terminal rejection, and the acceptance tail otherwise.
    """
    psi_k = o.psi[k - 1]
    omega_k = o.omega[k - 1]
    fj = d.f[j - 1]
    ej = d.e[j - 1]
    if j < omega_k:
        return (d.f1 + 1, d.e1 - 1)
    if j > omega_k:
        return (-INF, INF)
    if psi_k == 1:
        return (ej, INF)
    if omega_k == max(o.omega) and any(v == 1 for v in o.psi):
        return (-INF, ej - 1)
    return (-INF, fj)


def _arm_factors(d: BinomialDesign, p_k: float):
    """Per-arm terminal factors conditional on the control counts.

    Returns, for one experimental arm with success probability p_k:
    accept/reject/below-rejection vectors over c1, and the joint
    band-then-stage-2 accept/reject matrices over (c1, c2).
    """
    nC1, nC2, nE1, nE2 = d.group_sizes()
    pmf1 = binom_pmf_vector(nE1, p_k)
    cdf1 = np.concatenate([[0.0], np.cumsum(pmf1)])
    cdf2 = np.concatenate([[0.0], np.cumsum(binom_pmf_vector(nE2, p_k))])
    c1 = np.arange(nC1 + 1)
    acc = cdf1[np.clip(c1 + d.f1 + 1, 0, nE1 + 1)]
    below_e = cdf1[np.clip(c1 + d.e1, 0, nE1 + 1)]
    rej = 1.0 - below_e

    xs = np.arange(nE1 + 1)
    in_band = ((xs[None, :] >= c1[:, None] + d.f1 + 1)
               & (xs[None, :] <= c1[:, None] + d.e1 - 1))
    wband = pmf1[None, :] * in_band                      # [c1, x]
    c2 = np.arange(nC2 + 1)
    # stage-2 acceptance: cumulative statistic at or below f2
    cap = (c1[:, None, None] + c2[None, :, None] + d.f2
           - xs[None, None, :] + 1)
    acc2 = np.einsum("cx,cdx->cd", wband,
                     cdf2[np.clip(cap, 0, nE2 + 1)])
    band_tot = wband.sum(axis=1)
    rej2 = band_tot[:, None] - acc2
    return dict(acc=acc, rej=rej, below_e=below_e, acc2=acc2, rej2=rej2)


def outcome_distribution_binomial(d: BinomialDesign, p):
    """All terminal-outcome probabilities, as {OutcomePair: prob}.

    Conditions on the control counts (c1, c2); arms are then independent
    and contribute one band probability per stage, reproducing the full
    nested lattice sum exactly.
    """
    p = np.asarray(p, dtype=float)
    K = p.size - 1
    nC1, nC2, _, _ = d.group_sizes()
    b0_1 = binom_pmf_vector(nC1, p[0])
    b0_2 = binom_pmf_vector(nC2, p[0])
    factors = [_arm_factors(d, float(p[k])) for k in range(1, K + 1)]

    out = {}
    for o in enumerate_outcomes(K):
        any_rej = any(v == 1 for v in o.psi)
        vec = np.copy(b0_1)
        mat = None
        for k in range(1, K + 1):
            f = factors[k - 1]
            if o.omega[k - 1] == 1:
                if o.psi[k - 1] == 1:
                    vec = vec * f["rej"]
                elif any_rej and max(o.omega) == 1:
                    # swept up by another arm's stage-1 rejection
                    vec = vec * f["below_e"]
                else:
                    vec = vec * f["acc"]
            else:
                part = f["rej2"] if o.psi[k - 1] == 1 else f["acc2"]
                mat = part if mat is None else mat * part
        if mat is None:
            out[o] = float(vec.sum())
        else:
            out[o] = float(vec @ mat @ b0_2)
    return out


def outcome_prob_binomial(d: BinomialDesign, p, o: OutcomePair) -> float:
    """Exact probability of terminal outcome o under success vector p."""
    return outcome_distribution_binomial(d, p)[o]


def enumerate_design_space(cfg: TrialConfig, n: int):
    """Every (f, e) in the design space for this n, ascending (f1, e1, f2).

    Empty when n violates ratio-integrality.
    """
    if not cfg.ratios.integral_for(n):
        return []
    nC1, nC2, nE1, nE2 = cfg.ratios.group_sizes(n)
    designs = []
    for f1 in range(-nC1, nE1 - 1):
        for e1 in range(max(f1 + 2, -nC1 + 2), nE1 + 1):
            for f2 in range(f1 + 1 - nC2, e1 - 1 + nE2 + 1):
                designs.append(BinomialDesign(
                    n=n, f1=f1, f2=f2, e1=e1, e2=f2 + 1, ratios=cfg.ratios))
    return designs


def conduct_binomial(d: BinomialDesign, stage1, stage2=None, K=None) -> OutcomePair:
    """Replay the trial on observed per-stage success counts.

    ``stage1`` holds K+1 counts (control first).  ``stage2`` is required
    only if the trial continues, with entries for the control and every
    continuing arm (others may be None).
    """
    stage1 = list(stage1)
    K = len(stage1) - 1 if K is None else K
    nC1, nC2, nE1, nE2 = d.group_sizes()
    if len(stage1) != K + 1:
        raise ValueError("stage1 must hold K+1 counts")
    if not 0 <= stage1[0] <= nC1:
        raise ValueError("control stage-1 count out of range")
    if any(not 0 <= x <= nE1 for x in stage1[1:]):
        raise ValueError("arm stage-1 count out of range")

    psi = [0] * K
    omega = [0] * K
    t1 = [stage1[k] - stage1[0] for k in range(1, K + 1)]
    for k in range(K):
        if t1[k] >= d.e1:
            psi[k] = 1
            omega[k] = 1
        elif t1[k] <= d.f1:
            omega[k] = 1

    if sum(psi) > 0 or all(w != 0 for w in omega):
        omega = [w if w != 0 else 1 for w in omega]
        return OutcomePair(psi=tuple(psi), omega=tuple(omega))

    if stage2 is None:
        raise ValueError("trial continues to stage 2 but no stage-2 data given")
    stage2 = list(stage2)
    if len(stage2) != K + 1 or stage2[0] is None:
        raise ValueError("stage2 must hold a control count plus K entries")
    if not 0 <= stage2[0] <= nC2:
        raise ValueError("control stage-2 count out of range")
    for k in range(K):
        if omega[k] == 0:
            x2 = stage2[k + 1]
            if x2 is None or not 0 <= x2 <= nE2:
                raise ValueError(f"arm {k + 1} continues but stage-2 count is {x2}")
            t2 = (stage1[k + 1] + x2) - (stage1[0] + stage2[0])
            if t2 >= d.e2:
                psi[k] = 1
            omega[k] = 2
    return OutcomePair(psi=tuple(psi), omega=tuple(omega))
