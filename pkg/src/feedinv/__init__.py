"""Feedback differential invariants of y'' = F(y, y', u)."""

from .equivalence import Domain, compare_signatures, recover_transform, sample_signature, verify_smoothness_conditions
from .frame import classify, default_frame, invariant_catalog
from .jets import SystemF, jet_of_system
from .parser import parse_expression
from .pseudogroup import FeedbackMap, apply_feedback, random_feedback

__version__ = "0.1.0"

__all__ = [
    "Domain", "FeedbackMap", "SystemF", "apply_feedback", "classify", "compare_signatures", "default_frame",
    "invariant_catalog", "jet_of_system", "parse_expression", "random_feedback", "recover_transform",
    "sample_signature", "verify_smoothness_conditions",
]
