"""Zeroth-order bandit convex optimization with Gaussian-smoothing gradient estimates."""

from zobandit.core import (
    FeedbackMode,
    ScheduleParams,
    ScheduleVerdict,
    schedule_alpha,
    schedule_sigma,
    validate_schedule,
)
from zobandit.costs import CostFamily, CostInstance, CostSequenceSpec, Drift, constants, evaluate, generate_round

__version__ = "0.1.0"

__all__ = [
    "CostFamily",
    "CostInstance",
    "CostSequenceSpec",
    "Drift",
    "FeedbackMode",
    "ScheduleParams",
    "ScheduleVerdict",
    "constants",
    "evaluate",
    "generate_round",
    "schedule_alpha",
    "schedule_sigma",
    "validate_schedule",
]
