"""Exact two-stage multi-arm trial designs with binary outcomes."""

from .config import AllocationRatios, TrialConfig
from .binomial import BinomialDesign, enumerate_design_space
from .fisher import FisherDesign, FisherBoundaries, determine_design, find_min_n
from .oc import OCReport, MaxFwerResult, oc_at, max_fwer_common_p, \
    max_fwer_full, min_fwp, simulate
from .outcomes import OutcomePair, OutcomeSpace, enumerate_outcomes

__version__ = "0.1.0"

__all__ = [
    "AllocationRatios", "TrialConfig",
    "BinomialDesign", "enumerate_design_space",
    "FisherDesign", "FisherBoundaries", "determine_design", "find_min_n",
    "OCReport", "MaxFwerResult", "oc_at", "max_fwer_common_p",
    "max_fwer_full", "min_fwp", "simulate",
    "OutcomePair", "OutcomeSpace", "enumerate_outcomes",
    "__version__",
]
