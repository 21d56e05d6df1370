"""Problem statement and allocation plumbing.

A trial configuration collects everything a design search needs: arm
count, error-rate caps, effect sizes, allocation ratios, optimisation
weights, and the search grids.  Allocation ratios are kept as exact
rationals so the "r*n must be an integer" feasibility checks never hinge
on float rounding.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

SCHEMA_VERSION = 1

WEAK = "weak"
STRONG = "strong"


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        # via str so 1.5 -> 3/2 and 0.1 -> 1/10 rather than binary expansions
        return Fraction(str(x))
    raise TypeError(f"cannot interpret {x!r} as a ratio")


@dataclass(frozen=True)
class AllocationRatios:
    """Cumulative per-stage allocation multipliers of the stage-1 control size.

    The control arm reaches rC_j * n subjects by the end of stage j; every
    experimental arm still in the study reaches rE_j * n.  Stage 0 is kept
    explicitly (rC0 = rE0 = 0) so stage-wise group sizes are uniformly
    (r_j - r_{j-1}) * n, and rC1 = 1 by definition of n.
    """

    rC2: Fraction = Fraction(2)
    rE1: Fraction = Fraction(1)
    rE2: Fraction = Fraction(2)

    def __post_init__(self):
        object.__setattr__(self, "rC2", _as_fraction(self.rC2))
        object.__setattr__(self, "rE1", _as_fraction(self.rE1))
        object.__setattr__(self, "rE2", _as_fraction(self.rE2))
        if not (self.rE2 >= self.rE1 > 0):
            raise ValueError("need rE2 >= rE1 > 0")
        if not self.rC2 >= 1:
            raise ValueError("need rC2 >= rC1 = 1")

    @property
    def rC(self):
        return (Fraction(0), Fraction(1), self.rC2)

    @property
    def rE(self):
        return (Fraction(0), self.rE1, self.rE2)

    def integral_for(self, n: int) -> bool:
        """Ratio-integrality: rC2*n, rE1*n, rE2*n all positive integers."""
        if n < 1:
            return False
        return all((r * n).denominator == 1 and r * n >= 1
                   for r in (self.rC2, self.rE1, self.rE2))

    def group_sizes(self, n: int):
        """(control stage-1, control stage-2, arm stage-1, arm stage-2)."""
        if not self.integral_for(n):
            raise ValueError(f"n={n} violates ratio-integrality for {self}")
        nC1 = n
        nC2 = int(self.rC2 * n) - n
        nE1 = int(self.rE1 * n)
        nE2 = int(self.rE2 * n) - nE1
        return nC1, nC2, nE1, nE2

    def max_n_subjects(self, n: int, K: int) -> int:
        """Maximal total sample size n(rC2 + K*rE2)."""
        return int(self.rC2 * n) + K * int(self.rE2 * n)

    def to_json(self):
        return {"rC2": str(self.rC2), "rE1": str(self.rE1),
                "rE2": str(self.rE2)}

    @classmethod
    def from_json(cls, d):
        return cls(rC2=_as_fraction(d["rC2"]), rE1=_as_fraction(d["rE1"]),
                   rE2=_as_fraction(d["rE2"]))


def _grid(start: float, stop: float, step: float) -> tuple:
    """Inclusive float grid built from integer multiples of step."""
    count = int(round((stop - start) / step))
    vals = tuple(round(start + i * step, 10) for i in range(count + 1))
    return vals


@dataclass(frozen=True)
class TrialConfig:
    """Full problem statement for a two-stage multi-arm design search."""

    K: int
    alpha: float = 0.15
    beta: float = 0.2
    delta: tuple = 0.15          # scalar broadcast or length-(K+1) vector
    p_ess: tuple = 0.7           # scalar broadcast or length-(K+1) vector
    ratios: AllocationRatios = field(default_factory=AllocationRatios)
    weights: tuple = ((1.0, 0.0, 0.0),)
    control: str = WEAK
    n_min: int = 0
    n_max: int | None = None     # None: binomial search derives it
    a1_grid: tuple = _grid(0.01, 0.14, 0.01)
    b1_grid: tuple = _grid(0.01, 0.19, 0.01)
    p_grid_step: float = 0.01
    seed: int = 20170803

    def __post_init__(self):
        if not 1 <= self.K <= 4:
            raise ValueError(f"K must lie in 1..4, got {self.K}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")

        delta = self.delta
        if np.isscalar(delta):
            delta = (0.0,) + (float(delta),) * self.K
        delta = tuple(float(d) for d in delta)
        if len(delta) != self.K + 1 or delta[0] != 0.0:
            raise ValueError("delta must broadcast to (0, d_1, ..., d_K)")
        if any(d <= 0.0 for d in delta[1:]):
            raise ValueError("every delta_k must be strictly positive")
        object.__setattr__(self, "delta", delta)

        p_ess = self.p_ess
        if np.isscalar(p_ess):
            p_ess = (float(p_ess),) * (self.K + 1)
        p_ess = tuple(float(p) for p in p_ess)
        if len(p_ess) != self.K + 1:
            raise ValueError("p_ess must broadcast to length K+1")
        if any(not 0.0 <= p <= 1.0 for p in p_ess):
            raise ValueError("p_ess entries must lie in [0, 1]")
        if any(p + d > 1.0 for p, d in zip(p_ess, delta)):
            raise ValueError("p_ess + delta leaves [0, 1]")
        object.__setattr__(self, "p_ess", p_ess)

        weights = tuple(tuple(float(w) for w in wv) for wv in self.weights)
        for wv in weights:
            if len(wv) != 3 or any(w < 0.0 for w in wv):
                raise ValueError(f"weights must be 3 nonnegative reals: {wv}")
            if wv[0] + wv[1] <= 0.0:
                raise ValueError(f"w1 + w2 must be positive: {wv}")
        object.__setattr__(self, "weights", weights)

        if self.control not in (WEAK, STRONG):
            raise ValueError(f"control must be weak|strong, got {self.control}")
        if self.n_min < 0:
            raise ValueError("n_min must be nonnegative")
        if self.n_max is not None and self.n_max <= self.n_min:
            raise ValueError("need n_max > n_min")
        for a1 in self.a1_grid:
            if not 0.0 < a1 < self.alpha:
                raise ValueError(f"alpha1 grid value {a1} outside (0, alpha)")
        for b1 in self.b1_grid:
            if not 0.0 < b1 < self.beta:
                raise ValueError(f"beta1 grid value {b1} outside (0, beta)")
        if not 0.0 < self.p_grid_step <= 0.05:
            raise ValueError("p_grid_step must lie in (0, 0.05]")

    # -- derived quantities -------------------------------------------------

    @property
    def delta_max(self) -> float:
        return max(self.delta[1:])

    def p_common(self, p: float):
        """(p, ..., p) of length K+1."""
        return np.full(self.K + 1, float(p))

    def p_alternative(self, p: float):
        """(p, ..., p) + delta."""
        return np.array([p + d for d in self.delta])

    def p_grid(self, upper: float):
        """Inclusive grid over [0, upper] at the configured step."""
        return _grid(0.0, round(upper, 10), self.p_grid_step)

    def feasible_n(self, lo: int, hi: int):
        """Ratio-integral n values with lo < n <= hi."""
        return [n for n in range(lo + 1, hi + 1) if self.ratios.integral_for(n)]

    # -- serialisation ------------------------------------------------------

    def to_json(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "K": self.K,
            "alpha": self.alpha,
            "beta": self.beta,
            "delta": list(self.delta),
            "p_ess": list(self.p_ess),
            "ratios": self.ratios.to_json(),
            "weights": [list(w) for w in self.weights],
            "control": self.control,
            "n_min": self.n_min,
            "n_max": self.n_max,
            "a1_grid": list(self.a1_grid),
            "b1_grid": list(self.b1_grid),
            "p_grid_step": self.p_grid_step,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d):
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {version}")
        kwargs = {"K": d["K"]}
        for key in ("alpha", "beta", "delta", "p_ess", "control", "n_min",
                    "n_max", "p_grid_step", "seed"):
            if key in d:
                kwargs[key] = d[key]
        if "ratios" in d:
            kwargs["ratios"] = AllocationRatios.from_json(d["ratios"])
        if "weights" in d:
            kwargs["weights"] = tuple(tuple(w) for w in d["weights"])
        if "fisher_grid" in d:
            fg = d["fisher_grid"]
            kwargs["a1_grid"] = _grid(fg["a1"]["start"], fg["a1"]["stop"],
                                      fg["a1"]["step"])
            kwargs["b1_grid"] = _grid(fg["b1"]["start"], fg["b1"]["stop"],
                                      fg["b1"]["step"])
        elif "a1_grid" in d:
            kwargs["a1_grid"] = tuple(d["a1_grid"])
            kwargs["b1_grid"] = tuple(d["b1_grid"])
        return cls(**kwargs)

    def with_(self, **kwargs) -> "TrialConfig":
        return replace(self, **kwargs)


def canonical_json(obj) -> str:
    """Deterministic JSON encoding used for hashing and report payloads."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: TrialConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.to_json()).encode()).hexdigest()


def load_config(path) -> TrialConfig:
    with open(path) as fh:
        return TrialConfig.from_json(json.load(fh))
