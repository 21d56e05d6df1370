"""Terminal-outcome sample space for two-stage multi-arm studies.

A study with K experimental arms ends in a pair (psi, omega): psi_k = 1
iff the k-th null hypothesis was rejected, omega_k is the stage (1 or 2)
at which arm k's participation resolved.  A rejection at the interim
analysis terminates the whole study, so no outcome may combine a stage-1
rejection with an arm that reached stage 2.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MAX_ARMS = 4


@dataclass(frozen=True)
class OutcomePair:
    """One terminal study outcome: rejection flags and resolution stages."""

    psi: tuple
    omega: tuple

    def __post_init__(self):
        if len(self.psi) != len(self.omega):
            raise ValueError("psi and omega must have equal length")
        if any(v not in (0, 1) for v in self.psi):
            raise ValueError(f"psi entries must be 0/1, got {self.psi}")
        if any(v not in (1, 2) for v in self.omega):
            raise ValueError(f"omega entries must be 1/2, got {self.omega}")

    @property
    def K(self) -> int:
        return len(self.psi)

    def is_valid(self) -> bool:
        """Membership test: stage-1 rejection forbids any continuing arm."""
        stage1_rejection = any(
            p == 1 and w == 1 for p, w in zip(self.psi, self.omega))
        return not (stage1_rejection and any(w == 2 for w in self.omega))


@dataclass(frozen=True)
class OutcomeSpace:
    """Every valid terminal outcome for K arms, in canonical order."""

    K: int
    outcomes: tuple

    def __len__(self):
        return len(self.outcomes)

    def __iter__(self):
        return iter(self.outcomes)

    def index(self, o: OutcomePair) -> int:
        return self.outcomes.index(o)


def enumerate_outcomes(K: int) -> OutcomeSpace:
    """All valid (psi, omega) pairs, lexicographic in (omega, psi).

    Enumeration is 4^K-bounded, so K is capped at MAX_ARMS.
    """
    if not 1 <= K <= MAX_ARMS:
        raise ValueError(f"K must lie in 1..{MAX_ARMS}, got {K}")
    pairs = []
    for omega in itertools.product((1, 2), repeat=K):
        for psi in itertools.product((0, 1), repeat=K):
            o = OutcomePair(psi=psi, omega=omega)
            if o.is_valid():
                pairs.append(o)
    pairs.sort(key=lambda o: (o.omega, o.psi))
    return OutcomeSpace(K=K, outcomes=tuple(pairs))


def in_xi_ind(o: OutcomePair, k: int) -> bool:
    """True iff the k-th null (1-based arm index) was rejected."""
    if not 1 <= k <= o.K:
        raise ValueError(f"arm index must lie in 1..{o.K}, got {k}")
    return o.psi[k - 1] == 1


def in_xi_rej(o: OutcomePair) -> bool:
    """True iff at least one null hypothesis was rejected."""
    return any(v == 1 for v in o.psi)


def in_xi_fwer(o: OutcomePair, p) -> bool:
    """True iff at least one *true* null was rejected under p.

    Null truth p_k = p_0 is compared exactly: it is a modelling statement
    about configured values, not a float outcome.
    """
    p = np.asarray(p, dtype=float)
    if p.size != o.K + 1:
        raise ValueError(f"p must have length K+1 = {o.K + 1}, got {p.size}")
    return any(o.psi[k] == 1 and p[k + 1] == p[0] for k in range(o.K))
