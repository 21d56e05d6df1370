"""Brute-force oracles and the cross-checking property suite.

The oracles here evaluate terminal-outcome probabilities by literal
nested summation over the full per-arm success lattices, with the
stopping-band case tables written out inline.  They deliberately share
no summation or table code with the production paths: nested Python
loops, integer binomial coefficients, compensated accumulation.  Slow on
purpose, and guarded to stay on instances small enough to finish fast.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .binomial import BinomialDesign
from .fisher import FisherDesign
from .outcomes import OutcomePair, enumerate_outcomes

INF = math.inf

MAX_LATTICE_POINTS = 5_000_000


@dataclass(frozen=True)
class OracleCase:
    """One brute-force comparison instance, small enough for nested loops."""

    method: str
    design: object
    K: int
    p: tuple
    label: str = ""

    def __post_init__(self):
        n = self.design.n
        nC1, nC2, nE1, nE2 = self.design.ratios.group_sizes(n)
        if nC1 + self.K * nE1 > 6:
            raise ValueError("oracle cases require stage-1 total size <= 6")
        points = ((nC1 + 1) * (nE1 + 1) ** self.K
                  * (nC2 + 1) * (nE2 + 1) ** self.K)
        if points > MAX_LATTICE_POINTS:
            raise ValueError(f"lattice too large for the oracle: {points}")


def _b(x, n, p):
    if x < 0 or x > n:
        return 0.0
    return math.comb(n, x) * p ** x * (1.0 - p) ** (n - x)


def _in(t, band):
    lo, hi = band
    return lo <= t <= hi


def _band_binomial(k, j, psi, omega, f, e):
    """Inline stage-band table for the binomial design (oracle copy)."""
    if j < omega[k]:
        return (f[0] + 1, e[0] - 1)
    if j > omega[k]:
        return (-INF, INF)
    if psi[k] == 1:
        return (e[j - 1], INF)
    if omega[k] == max(omega) and any(v == 1 for v in psi):
        return (-INF, e[j - 1] - 1)
    return (-INF, f[j - 1])


def _band_fisher1(k, z1, psi, omega, f1, e1):
    """Inline stage-1 band table for the Fisher design (oracle copy)."""
    ez = int(e1[z1])
    if omega[k] == 2:
        return (f1 + 1, ez - 1)
    if psi[k] == 1:
        return (ez, INF)
    if max(omega) == 1 and any(v == 1 for v in psi):
        return (-INF, ez - 1)
    # futility acceptance (including an arm dropped while others continue);
    # rejection takes precedence if the determined boundaries ever touch
    return (-INF, min(f1, ez - 1))


def _band_fisher2(k, z1, z2, m, psi, omega, f2):
    if omega[k] == 1:
        return (-INF, INF)
    fval = int(f2[m][z1, z2])
    if psi[k] == 1:
        return (fval + 1, INF)
    return (-INF, fval)


def brute_force_outcome_prob(method: str, design, p, o: OutcomePair,
                             K=None) -> float:
    """Literal nested-sum evaluation of one terminal-outcome probability."""
    K = o.K if K is None else K
    p = [float(v) for v in p]
    if len(p) != K + 1:
        raise ValueError("p must have length K+1")
    OracleCase(method=method, design=design, K=K, p=tuple(p))
    nC1, nC2, nE1, nE2 = design.ratios.group_sizes(design.n)
    psi, omega = o.psi, o.omega

    terms = []
    stage1 = itertools.product(range(nC1 + 1), *[range(nE1 + 1)] * K)
    for pt1 in stage1:
        c1 = pt1[0]
        w1 = _b(c1, nC1, p[0])
        for k in range(K):
            w1 *= _b(pt1[k + 1], nE1, p[k + 1])
        if w1 == 0.0:
            continue
        t1 = [pt1[k + 1] - c1 for k in range(K)]
        z1 = sum(pt1)
        if method == "binomial":
            bands1 = [_band_binomial(k, 1, psi, omega, design.f, design.e)
                      for k in range(K)]
        else:
            bands1 = [_band_fisher1(k, z1, psi, omega, design.boundaries.f1,
                                    design.boundaries.e1)
                      for k in range(K)]
        if not all(_in(t1[k], bands1[k]) for k in range(K)):
            continue

        present = [1 if omega[k] == 2 else 0 for k in range(K)]
        m = sum(present)
        for pt2 in itertools.product(range(nC2 + 1), *[range(nE2 + 1)] * K):
            c2 = pt2[0]
            w2 = _b(c2, nC2, p[0])
            for k in range(K):
                w2 *= _b(pt2[k + 1], nE2, p[k + 1])
            if w2 == 0.0:
                continue
            t2 = [t1[k] + pt2[k + 1] - c2 for k in range(K)]
            if method == "binomial":
                ok = all(_in(t2[k], _band_binomial(k, 2, psi, omega,
                                                   design.f, design.e))
                         for k in range(K))
            else:
                z2 = c2 + sum(pt2[k + 1] for k in range(K) if present[k])
                ok = all(_in(t2[k],
                             _band_fisher2(k, z1, z2, m, psi, omega,
                                           design.boundaries.f2))
                         for k in range(K))
            if ok:
                terms.append(w1 * w2)
    return math.fsum(terms)


def conduct_replay_distribution(method: str, design, p, K: int):
    """Outcome distribution by replaying the stopping rules on every lattice.

    A third, band-free path: each stage-1 point is classified with the
    conduct rules directly, and only realised continuations enumerate
    stage-2 data.  Never double counts by construction.
    """
    p = [float(v) for v in p]
    nC1, nC2, nE1, nE2 = design.ratios.group_sizes(design.n)
    out = {o: [] for o in enumerate_outcomes(K)}

    if method == "fisher":
        b = design.boundaries
    for pt1 in itertools.product(range(nC1 + 1), *[range(nE1 + 1)] * K):
        c1 = pt1[0]
        w1 = _b(c1, nC1, p[0])
        for k in range(K):
            w1 *= _b(pt1[k + 1], nE1, p[k + 1])
        if w1 == 0.0:
            continue
        t1 = [pt1[k + 1] - c1 for k in range(K)]
        z1 = sum(pt1)
        e1 = design.e1 if method == "binomial" else int(b.e1[z1])
        f1 = design.f1 if method == "binomial" else b.f1
        psi = [0] * K
        omega = [0] * K
        for k in range(K):
            if t1[k] >= e1:
                psi[k] = 1
                omega[k] = 1
            elif t1[k] <= f1:
                omega[k] = 1
        if sum(psi) > 0 or all(w != 0 for w in omega):
            o = OutcomePair(psi=tuple(psi),
                            omega=tuple(w if w else 1 for w in omega))
            out[o].append(w1)
            continue
        cont = [k for k in range(K) if omega[k] == 0]
        m = len(cont)
        for pt2 in itertools.product(range(nC2 + 1),
                                     *[range(nE2 + 1)] * m):
            c2 = pt2[0]
            w2 = _b(c2, nC2, p[0])
            for i, k in enumerate(cont):
                w2 *= _b(pt2[i + 1], nE2, p[k + 1])
            if w2 == 0.0:
                continue
            z2 = sum(pt2)
            psi2 = list(psi)
            omega2 = list(omega)
            if method == "binomial":
                e2 = design.e2
            else:
                e2 = int(b.f2[m][z1, z2]) + 1
            for i, k in enumerate(cont):
                t2 = t1[k] + pt2[i + 1] - c2
                if t2 >= e2:
                    psi2[k] = 1
                omega2[k] = 2
            o = OutcomePair(psi=tuple(psi2), omega=tuple(omega2))
            out[o].append(w1 * w2)
    return {o: math.fsum(v) for o, v in out.items()}
