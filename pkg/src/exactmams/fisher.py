"""Optimised two-stage Fisher exact test for multi-arm studies.

Inference is conditional on the stage-wise total success counts z_1, z_2:
given z_j, the lattice of per-arm counts follows a multivariate
(noncentral) hypergeometric law whose only parameters are the odds ratios
of each arm against control.  Under any common success probability the
odds ratios are all 1 and the conditional law is parameter-free, which is
what buys familywise error control by construction.

Stage-1 rejection boundaries e_1(z_1) spend at most alpha_1 of the error
budget conditionally on every z_1; the futility boundary f_1 caps the
stage-1 marginal type-II error at beta_1; second-stage boundaries
e_2(m, z_2, z_1) = f_2 + 1 spend the remaining budget equally across the
m = 1..K possible counts of continuing arms.  The group size n is then
the smallest for which familywise power reaches its target.

This module holds the design types, the exact (reference) conditional
operations, boundary determination, trial conduct, and outcome
probabilities; the vectorised table machinery behind determination and
operating-characteristic evaluation lives in ``_engine``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .config import STRONG, WEAK, AllocationRatios, TrialConfig
from .kernel import binom_coeff_vector, binom_pmf_vector
from .outcomes import OutcomePair

INF = math.inf

RULE_OPTIMISED = "optimized"
RULE_JUNG_SARGENT = "jung_sargent"

# Log-spaced odds-ratio grid used when strong control is requested: the
# conditional error quantities are continuous in theta and degenerate at
# the extremes, so a bounded grid with full Cartesian product (K <= 2)
# suffices; it always contains 1 so every true-null pattern is explored.
THETA_GRID = tuple(2.0 ** k for k in range(-6, 7))


# ---------------------------------------------------------------------------
# design containers


@dataclass(frozen=True)
class FisherBoundaries:
    """Stopping boundaries: scalar f1, per-z1 e1, per-(m, z1, z2) f2.

    e2 is implied as f2 + 1 everywhere.  Arrays are fully populated for
    their index ranges; cells that can never be reached (for instance a
    z1 whose continuation band is empty) carry the never-reject sentinel.
    """

    f1: int
    e1: np.ndarray
    f2: dict

    def __post_init__(self):
        object.__setattr__(self, "e1", np.asarray(self.e1, dtype=np.int32))
        object.__setattr__(
            self, "f2",
            {int(m): np.asarray(a, dtype=np.int32) for m, a in self.f2.items()})

    @property
    def K(self) -> int:
        return max(self.f2)

    def e2(self, m: int) -> np.ndarray:
        return self.f2[m] + 1

    def __eq__(self, other):
        if not isinstance(other, FisherBoundaries):
            return NotImplemented
        return (self.f1 == other.f1
                and np.array_equal(self.e1, other.e1)
                and self.f2.keys() == other.f2.keys()
                and all(np.array_equal(self.f2[m], other.f2[m])
                        for m in self.f2))


@dataclass(frozen=True, eq=False)
class FisherDesign:
    """A fully determined two-stage Fisher exact design.

    Boundaries regenerate deterministically from (n, alpha1, beta1,
    control, stage1_rule); they are carried for audit and revalidated on
    load rather than trusted.
    """

    n: int
    alpha1: float | None
    beta1: float | None
    alpha: float
    beta: float
    delta: tuple
    control: str
    ratios: AllocationRatios
    boundaries: FisherBoundaries
    stage1_rule: str = RULE_OPTIMISED

    @property
    def K(self) -> int:
        return self.boundaries.K

    def group_sizes(self):
        return self.ratios.group_sizes(self.n)

    def max_n_subjects(self) -> int:
        return self.ratios.max_n_subjects(self.n, self.K)

    def to_json(self):
        b = self.boundaries
        return {
            "method": "fisher",
            "n": self.n,
            "K": self.K,
            "alpha1": self.alpha1,
            "beta1": self.beta1,
            "alpha": self.alpha,
            "beta": self.beta,
            "delta": list(self.delta),
            "control": self.control,
            "stage1_rule": self.stage1_rule,
            "ratios": self.ratios.to_json(),
            "f1": int(b.f1),
            "e1": [int(v) for v in b.e1],
            "f2": {str(m): {str(z1): [int(v) for v in b.f2[m][z1]]
                            for z1 in range(b.f2[m].shape[0])}
                   for m in sorted(b.f2)},
        }

    @classmethod
    def from_json(cls, d):
        f2 = {}
        for m_key, by_z1 in d["f2"].items():
            rows = [by_z1[str(z1)] for z1 in range(len(by_z1))]
            f2[int(m_key)] = np.asarray(rows, dtype=np.int32)
        boundaries = FisherBoundaries(
            f1=int(d["f1"]),
            e1=np.asarray(d["e1"], dtype=np.int32),
            f2=f2)
        return cls(
            n=int(d["n"]), alpha1=d.get("alpha1"), beta1=d.get("beta1"),
            alpha=float(d["alpha"]), beta=float(d["beta"]),
            delta=tuple(d["delta"]), control=d["control"],
            ratios=AllocationRatios.from_json(d["ratios"]),
            boundaries=boundaries,
            stage1_rule=d.get("stage1_rule", RULE_OPTIMISED))


def stage_presence(omega=None, K=None, stage=1):
    """rho_j vector: 1 where an arm is present in the given stage."""
    if stage == 1:
        return tuple([1] * K)
    return tuple(1 if w == 2 else 0 for w in omega)


# ---------------------------------------------------------------------------
# exact conditional operations (reference implementations)


def _stage_sizes(n, ratios, stage):
    nC1, nC2, nE1, nE2 = ratios.group_sizes(n)
    return (nC1, nE1) if stage == 1 else (nC2, nE2)


def _arm_log_weights(na, theta_k):
    """Log of C(na, x) * theta^x over x = 0..na; sentinel thetas pin x."""
    logc = np.log(binom_coeff_vector(na))
    if theta_k == 0.0:
        w = np.full(na + 1, -INF)
        w[0] = 0.0
        return w
    if math.isinf(theta_k):
        w = np.full(na + 1, -INF)
        w[na] = 0.0
        return w
    return logc + np.arange(na + 1) * math.log(theta_k)


def _log_conv(a, b):
    """Convolution of two log-weight vectors with max-shift stabilisation."""
    out = np.full(len(a) + len(b) - 1, -INF)
    sa = np.max(a)
    sb = np.max(b)
    if sa == -INF or sb == -INF:
        return out
    lin = np.convolve(np.exp(a - sa), np.exp(b - sb))
    with np.errstate(divide="ignore"):
        return np.where(lin > 0.0, np.log(lin), -INF) + sa + sb


def conditional_pmf(x, z, rho, theta, n, ratios, stage=1) -> float:
    """Conditional probability of the per-arm success counts given their total.

    f(x | z, rho, theta) = 1{sum x = z} h(x) / sum_{a: sum a = z} h(a) with
    h(x) = C(nc, x0) prod_k C(rho_k * na, x_k) theta_k^{x_k}.  Absent arms
    carry a point mass at zero successes through the C(0, x) convention.
    The weight h is rescaled by its maximal log term before exponentiation
    so extreme odds ratios do not overflow.
    """
    x = tuple(int(v) for v in x)
    theta = tuple(float(t) for t in theta)
    rho = tuple(int(r) for r in rho)
    K = len(theta)
    if len(x) != K + 1 or len(rho) != K:
        raise ValueError("x must have length K+1 and rho length K")
    nc, na = _stage_sizes(n, ratios, stage)
    sizes = [nc] + [r * na for r in rho]
    total = sum(sizes)
    if not 0 <= z <= total:
        raise ValueError(f"z={z} outside 0..{total}")
    if sum(x) != z:
        return 0.0
    if any(not 0 <= x[i] <= sizes[i] for i in range(K + 1)):
        return 0.0

    logw = [np.log(binom_coeff_vector(nc))]
    for k in range(1, K + 1):
        logw.append(_arm_log_weights(sizes[k], theta[k - 1]))
    log_num = sum(logw[i][x[i]] for i in range(K + 1))
    if log_num == -INF:
        return 0.0
    acc = logw[0]
    for k in range(1, K + 1):
        acc = _log_conv(acc, logw[k])
    log_den = acc[z]
    return math.exp(log_num - log_den)


def g_pmf(z, p, rho, n, ratios, stage=1) -> float:
    """Unconditional PMF of the stage-wise total success count.

    Convolves the control binomial with each present arm's binomial;
    absent arms reduce to the C(0, x) point mass and drop out.
    """
    p = np.asarray(p, dtype=float)
    rho = tuple(int(r) for r in rho)
    nc, na = _stage_sizes(n, ratios, stage)
    dist = binom_pmf_vector(nc, float(p[0]))
    for k, present in enumerate(rho, start=1):
        if present:
            dist = np.convolve(dist, binom_pmf_vector(na, float(p[k])))
    if not 0 <= z < len(dist):
        return 0.0
    return float(dist[z])


def _stage1_weight_vectors(n, ratios, theta):
    """Linear-space conditional weights (control, per-arm) for stage 1."""
    nC1, _, nE1, _ = ratios.group_sizes(n)
    wc = binom_coeff_vector(nC1)
    arms = []
    for t in theta:
        lw = _arm_log_weights(nE1, float(t))
        shift = np.max(lw)
        arms.append(np.exp(lw - shift) if shift > -INF else np.zeros(nE1 + 1))
    return wc, arms


def alpha_I1(z1, e1z1, theta, n, ratios) -> float:
    """Conditional probability of a stage-1 familywise error.

    Given Z_1 = z1 and rejection boundary e1z1, this is the chance that
    some true-null arm (theta_k = 1) satisfies T_k1 >= e1z1 under the
    conditional law; evaluated exactly as 1 minus the probability that
    every true-null arm stays below the boundary, via one capped
    convolution over arms per control count.
    """
    theta = tuple(float(t) for t in theta)
    nC1, _, nE1, _ = ratios.group_sizes(n)
    K = len(theta)
    if not 0 <= z1 <= nC1 + K * nE1:
        raise ValueError(f"z1={z1} out of range")
    nulls = [k for k in range(K) if theta[k] == 1.0]
    if not nulls:
        return 0.0
    wc, arms = _stage1_weight_vectors(n, ratios, theta)
    num = 0.0
    den = 0.0
    for c1 in range(nC1 + 1):
        if wc[c1] == 0.0:
            continue
        free = np.ones(1)
        for a in arms:
            free = np.convolve(free, a)
        s = z1 - c1
        if 0 <= s < len(free):
            den += wc[c1] * free[s]
        cap = min(nE1, c1 + e1z1 - 1)
        if cap < 0:
            continue  # every lattice point has a true-null arm at the boundary
        below = np.ones(1)
        for k, a in enumerate(arms):
            below = np.convolve(below, a[:cap + 1] if k in nulls else a)
        if 0 <= s < len(below):
            num += wc[c1] * below[s]
    if den == 0.0:
        return 0.0
    return max(0.0, 1.0 - num / den)


def beta_II1(z1, f1, theta, n, ratios) -> float:
    """Conditional stage-1 acceptance probability for the first arm.

    P(T_11 <= f1 | Z_1 = z1, theta): the marginal stage-1 type-II rate
    for the first null hypothesis under the conditional law.
    """
    theta = tuple(float(t) for t in theta)
    nC1, _, nE1, _ = ratios.group_sizes(n)
    wc, arms = _stage1_weight_vectors(n, ratios, theta)
    num = 0.0
    den = 0.0
    for c1 in range(nC1 + 1):
        if wc[c1] == 0.0:
            continue
        rest = np.ones(1)
        for a in arms[1:]:
            rest = np.convolve(rest, a)
        full = np.convolve(arms[0], rest)
        cap = min(nE1, c1 + f1)
        capped = (np.convolve(arms[0][:cap + 1], rest) if cap >= 0
                  else np.zeros(1))
        s = z1 - c1
        if 0 <= s < len(full):
            den += wc[c1] * full[s]
        if 0 <= s < len(capped):
            num += wc[c1] * capped[s]
    if den == 0.0:
        return 0.0
    return num / den


def alpha_I2(m, z2, z1, e2_candidate, f1, e1_map, theta, n, ratios) -> float:
    """Conditional probability of a stage-2 familywise error.

    Joint probability, under the stage-1 and stage-2 conditional laws,
    that exactly m arms fall in the continuation band with none at or
    above e1(z1), and that some continuing true-null arm then reaches
    e2_candidate on the cumulative statistic.  Reference implementation
    by explicit lattice enumeration; intended for small instances.
    """
    theta = tuple(float(t) for t in theta)
    K = len(theta)
    nC1, nC2, nE1, nE2 = ratios.group_sizes(n)
    if not 1 <= m <= K:
        raise ValueError(f"m={m} outside 1..{K}")
    e1z1 = int(e1_map[z1])

    wc1, arms1 = _stage1_weight_vectors(n, ratios, theta)
    den1 = 0.0
    total = 0.0
    lat1 = itertools.product(range(nC1 + 1),
                             *[range(nE1 + 1)] * K)
    terms1 = []
    for pt in lat1:
        if sum(pt) != z1:
            continue
        w = wc1[pt[0]] * math.prod(arms1[k][pt[k + 1]] for k in range(K))
        den1 += w
        if w == 0.0:
            continue
        t1 = [pt[k + 1] - pt[0] for k in range(K)]
        if any(t >= e1z1 for t in t1):
            continue
        cont = [k for k in range(K) if f1 < t1[k] < e1z1]
        if len(cont) != m:
            continue
        terms1.append((w, t1, cont))
    if den1 == 0.0 or not terms1:
        return 0.0

    wc2 = binom_coeff_vector(nC2)
    arm2 = {}
    for k in range(K):
        lw = _arm_log_weights(nE2, theta[k])
        shift = np.max(lw)
        arm2[k] = np.exp(lw - shift) if shift > -INF else np.zeros(nE2 + 1)

    out = 0.0
    for w1, t1, cont in terms1:
        den2 = 0.0
        num2 = 0.0
        for pt2 in itertools.product(range(nC2 + 1),
                                     *[range(nE2 + 1)] * m):
            if sum(pt2) != z2:
                continue
            w2 = wc2[pt2[0]] * math.prod(
                arm2[k][pt2[i + 1]] for i, k in enumerate(cont))
            den2 += w2
            if w2 == 0.0:
                continue
            err = any(
                theta[k] == 1.0
                and t1[k] + pt2[i + 1] - pt2[0] >= e2_candidate
                for i, k in enumerate(cont))
            if err:
                num2 += w2
        if den2 > 0.0:
            out += (w1 / den1) * (num2 / den2)
    return out


# ---------------------------------------------------------------------------
# boundary determination


def _theta_combos(K: int, control: str):
    """Odds-ratio configurations to maximise error quantities over.

    Weak control needs only the all-ones configuration.  Strong control
    scans the full grid restricted to configurations with at least one
    true null (others contribute no familywise error).
    """
    if control == WEAK:
        return [(1.0,) * K]
    if K > 2:
        raise NotImplementedError(
            "strong-control determination is supported for K <= 2")
    combos = []
    for combo in itertools.product(THETA_GRID, repeat=K):
        if any(t == 1.0 for t in combo):
            combos.append(combo)
    return combos


class FisherDeterminer:
    """Boundary determination for one (config, n); caches what cells share.

    The alpha_I1 matrix over (z1, candidate e) does not depend on alpha1,
    and the stage-1 type-II curve does not depend on beta1, so a search
    over an (alpha1, beta1) grid reuses both per n.
    """

    def __init__(self, cfg: TrialConfig, n: int):
        if cfg.K > 2:
            raise NotImplementedError(
                "Fisher design determination is supported for K <= 2")
        if not cfg.ratios.integral_for(n):
            raise ValueError(f"n={n} violates ratio-integrality")
        self.cfg = cfg
        self.n = n
        self.geom = _engine.Geometry(cfg.K, *cfg.ratios.group_sizes(n))
        self.combos = _theta_combos(cfg.K, cfg.control)
        # [combo, z1, e-candidate] stage-1 conditional error matrix
        self._a1_matrix = _engine.alpha1_matrix(self.geom, self.combos)
        self._a1_max = self._a1_matrix.max(axis=0)
        self._beta_curve = None
        self._det_tables = None

    # -- stage 1 ------------------------------------------------------------

    @property
    def e_candidates(self):
        return _engine.e1_candidates(self.geom)

    def e1_for_alpha1(self, alpha1: float) -> np.ndarray:
        """Per z1, the minimal integer boundary spending at most alpha1."""
        feasible = self._a1_max <= alpha1
        idx = feasible.argmax(axis=1)
        if not feasible[np.arange(feasible.shape[0]), idx].all():
            raise RuntimeError("no feasible stage-1 boundary; alpha1 <= 0?")
        return self.e_candidates[idx].astype(np.int32)

    def spent_alpha1(self, e1: np.ndarray) -> np.ndarray:
        """alpha_I1 at the chosen boundaries (maximised over theta combos)."""
        cols = np.searchsorted(self.e_candidates, e1)
        return self._a1_max[np.arange(len(e1)), cols]

    def f1_for_beta1(self, beta1: float) -> int:
        """Largest f1 whose worst-case stage-1 type-II rate is at most beta1.

        The worst case is over the common success probability p on the
        configured grid (with golden-section refinement around the grid
        argmax); the weighted sum of conditional acceptance probabilities
        over z1 collapses exactly to the unconditional probability
        P(X_11 - X_01 <= f1) under (p, p + delta_1, ...).
        """
        cfg = self.cfg
        nC1, _, nE1, _ = cfg.ratios.group_sizes(self.n)
        d1 = cfg.delta[1]

        def curve(p):
            # vector over f1 = -nC1-1 .. nE1 of P(X11 - X01 <= f1)
            b0 = binom_pmf_vector(nC1, p)
            cdf1 = np.concatenate([[0.0],
                                   np.cumsum(binom_pmf_vector(nE1, p + d1))])
            f1s = np.arange(-nC1 - 1, nE1 + 1)
            idx = np.clip(f1s[None, :] + np.arange(nC1 + 1)[:, None] + 1,
                          0, nE1 + 1)
            return b0 @ cdf1[idx]

        if self._beta_curve is None:
            grid = cfg.p_grid(1.0 - cfg.delta_max)
            mat = np.stack([curve(p) for p in grid])
            self._beta_curve = (grid, mat)
        grid, mat = self._beta_curve
        worst = mat.max(axis=0)
        f1s = np.arange(-nC1 - 1, nE1 + 1)
        ok = worst <= beta1
        if not ok.any():
            return -nC1 - 1
        f1 = int(f1s[ok.nonzero()[0].max()])

        # guard the grid optimum against grid-miss before accepting f1
        col = f1 + nC1 + 1
        while f1 > -nC1 - 1:
            j = int(mat[:, col].argmax())
            lo = grid[max(0, j - 1)]
            hi = grid[min(len(grid) - 1, j + 1)]
            _, refined = _engine.golden_max(lambda p: float(curve(p)[col]),
                                            lo, hi)
            if max(refined, worst[col]) <= beta1:
                break
            f1 -= 1
            col -= 1
        return f1

    def e1_jung_sargent(self) -> np.ndarray:
        """Flat stage-1 rejection boundary ceil(n * delta_1) + 1."""
        from fractions import Fraction
        d1 = Fraction(str(self.cfg.delta[1]))
        e = int(math.ceil(d1 * self.n)) + 1
        return np.full(self.geom.z1_count, e, dtype=np.int32)

    # -- stage 2 ------------------------------------------------------------

    def determine(self, alpha1, beta1, stage1_rule=RULE_OPTIMISED) -> FisherDesign:
        cfg = self.cfg
        if stage1_rule == RULE_OPTIMISED:
            if not 0.0 < alpha1 < cfg.alpha:
                raise ValueError("alpha1 must lie in (0, alpha)")
            if not 0.0 < beta1 < cfg.beta:
                raise ValueError("beta1 must lie in (0, beta)")
            e1 = self.e1_for_alpha1(alpha1)
            f1 = self.f1_for_beta1(beta1)
        elif stage1_rule == RULE_JUNG_SARGENT:
            e1 = self.e1_jung_sargent()
            f1 = -1
        else:
            raise ValueError(f"unknown stage1 rule {stage1_rule!r}")
        return self.determine_with(e1, f1, alpha1, beta1, stage1_rule)

    def determine_with(self, e1, f1, alpha1=None, beta1=None,
                       stage1_rule=RULE_OPTIMISED) -> FisherDesign:
        """Stage-2 determination for already-fixed stage-1 boundaries."""
        cfg = self.cfg
        spent = self.spent_alpha1(e1)
        budgets = (cfg.alpha - spent) / cfg.K
        if self._det_tables is None:
            self._det_tables = _engine.DeterminationTables(self.geom,
                                                           self.combos)
        f2 = self._det_tables.determine_f2(int(f1), e1, budgets)
        boundaries = FisherBoundaries(f1=int(f1), e1=e1, f2=f2)
        return FisherDesign(
            n=self.n,
            alpha1=None if stage1_rule == RULE_JUNG_SARGENT else alpha1,
            beta1=None if stage1_rule == RULE_JUNG_SARGENT else beta1,
            alpha=cfg.alpha, beta=cfg.beta, delta=cfg.delta,
            control=cfg.control, ratios=cfg.ratios, boundaries=boundaries,
            stage1_rule=stage1_rule)


def determine_design(cfg: TrialConfig, n: int, alpha1=None, beta1=None,
                     stage1_rule=RULE_OPTIMISED) -> FisherDesign:
    """One-shot boundary determination for a given n."""
    return FisherDeterminer(cfg, n).determine(alpha1, beta1, stage1_rule)


# ---------------------------------------------------------------------------
# bands and outcome probabilities


def band_F1(k: int, z1: int, o: OutcomePair, b: FisherBoundaries):
    """Closed T_k1 interval consistent with outcome o at stage one.

    The acceptance cases are clipped below the rejection boundary so the
    cases stay disjoint even if a determined e1(z1) ever sits at or below
    f1 + 1 (rejection takes precedence in conduct).
    """
    e1 = int(b.e1[z1])
    f1 = b.f1
    psi_k = o.psi[k - 1]
    omega_k = o.omega[k - 1]
    if omega_k == 2:
        return (f1 + 1, e1 - 1)
    if psi_k == 1:
        return (e1, INF)
    if max(o.omega) == 1 and any(v == 1 for v in o.psi):
        return (-INF, e1 - 1)
    # futility acceptance: either a global stop with no rejections, or an
    # arm dropped while the study continues
    return (-INF, min(f1, e1 - 1))


def band_F2(k: int, z1: int, z2: int, rho2, o: OutcomePair,
            b: FisherBoundaries):
    """Closed T_k2 interval consistent with outcome o at stage two."""
    omega_k = o.omega[k - 1]
    if omega_k == 1:
        return (-INF, INF)
    m = int(sum(rho2))
    f2 = int(b.f2[m][z1, z2])
    if o.psi[k - 1] == 1:
        return (f2 + 1, INF)
    return (-INF, f2)


def outcome_prob_fisher(d: FisherDesign, p, o: OutcomePair) -> float:
    """Exact probability of terminal outcome o under success vector p."""
    probs = _engine.outcome_distribution(d, np.asarray(p, dtype=float))
    return probs[o]


def outcome_distribution_fisher(d: FisherDesign, p):
    """All terminal-outcome probabilities as {OutcomePair: prob}."""
    return _engine.outcome_distribution(d, np.asarray(p, dtype=float))


# ---------------------------------------------------------------------------
# conduct and sample-size search


def conduct_fisher(d: FisherDesign, stage1, stage2=None) -> OutcomePair:
    """Replay the trial on observed per-stage success counts.

    ``stage1`` holds K+1 counts (control first).  ``stage2`` is required
    only if some arm continues; entries for dropped arms may be None.
    """
    K = d.K
    nC1, nC2, nE1, nE2 = d.group_sizes()
    stage1 = list(stage1)
    if len(stage1) != K + 1:
        raise ValueError("stage1 must hold K+1 counts")
    if not 0 <= stage1[0] <= nC1:
        raise ValueError("control stage-1 count out of range")
    if any(not 0 <= x <= nE1 for x in stage1[1:]):
        raise ValueError("arm stage-1 count out of range")

    b = d.boundaries
    z1 = sum(stage1)
    e1 = int(b.e1[z1])
    psi = [0] * K
    omega = [0] * K
    t1 = [stage1[k] - stage1[0] for k in range(1, K + 1)]
    for k in range(K):
        if t1[k] >= e1:
            psi[k] = 1
            omega[k] = 1
        elif t1[k] <= b.f1:
            omega[k] = 1

    if sum(psi) > 0 or all(w != 0 for w in omega):
        omega = [w if w != 0 else 1 for w in omega]
        return OutcomePair(psi=tuple(psi), omega=tuple(omega))

    rho2 = [1 if w == 0 else 0 for w in omega]
    m = sum(rho2)
    if stage2 is None:
        raise ValueError("trial continues to stage 2 but no stage-2 data given")
    stage2 = list(stage2)
    if len(stage2) != K + 1 or stage2[0] is None:
        raise ValueError("stage2 must hold a control count plus K entries")
    if not 0 <= stage2[0] <= nC2:
        raise ValueError("control stage-2 count out of range")
    z2 = stage2[0]
    for k in range(K):
        if rho2[k]:
            x2 = stage2[k + 1]
            if x2 is None or not 0 <= x2 <= nE2:
                raise ValueError(f"arm {k + 1} continues but stage-2 count is {x2}")
            z2 += x2
    f2 = int(b.f2[m][z1, z2])
    for k in range(K):
        if rho2[k]:
            t2 = (stage1[k + 1] + stage2[k + 1]) - (stage1[0] + stage2[0])
            if t2 >= f2 + 1:
                psi[k] = 1
            omega[k] = 2
    return OutcomePair(psi=tuple(psi), omega=tuple(omega))


@dataclass
class MinNResult:
    design: FisherDesign | None
    n: int | None
    min_fwp: float | None
    argmin_p: float | None
    attempts: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.design is not None


DEFAULT_FISHER_N_CAP = 160


def find_min_n(cfg: TrialConfig, alpha1=None, beta1=None,
               stage1_rule=RULE_OPTIMISED, n_max=None, power="allarm",
               _determiner_cache=None) -> MinNResult:
    """Smallest ratio-feasible n whose determined design meets the power target.

    Scans n in ascending order.  A sound shortcut skips full stage-2
    determination while even the stage-1-only power bound
    1 - P(all arms accept at stage one) falls short of 1 - beta.

    ``power`` selects the familywise-power counting rule for the
    constraint; the default ("allarm") reproduces published group sizes
    and coincides with the conduct law when K = 1.
    """
    from . import oc

    if n_max is None:
        n_max = cfg.n_max if cfg.n_max is not None else DEFAULT_FISHER_N_CAP
    target = 1.0 - cfg.beta
    attempts = []
    for n in cfg.feasible_n(cfg.n_min, n_max):
        det = None
        if _determiner_cache is not None:
            det = _determiner_cache.get(n)
        if det is None:
            det = FisherDeterminer(cfg, n)
            if _determiner_cache is not None:
                _determiner_cache[n] = det

        if stage1_rule == RULE_OPTIMISED:
            f1 = det.f1_for_beta1(beta1)
        else:
            f1 = -1
        bound = _engine.stage1_power_bound(det.geom, f1, cfg)
        if bound < target:
            attempts.append((n, None))
            continue

        design = det.determine(alpha1, beta1, stage1_rule)
        # pilot points short-circuit hopeless n; a passing result has
        # already been minimised over the full grid with refinement
        argmin_p, fwp = oc.min_fwp(design, cfg.delta, cfg.p_grid_step,
                                   fail_fast_below=target, power=power)
        attempts.append((n, fwp))
        if fwp >= target:
            return MinNResult(design=design, n=n, min_fwp=fwp,
                              argmin_p=argmin_p, attempts=attempts)
    return MinNResult(design=None, n=None, min_fwp=None, argmin_p=None,
                      attempts=attempts)
