"""QoS-aware model switching: learned CI adaptation rules driving a MAPE-K
controller over a simulated request-serving system."""

from .controller import (
    AdaptationPlan,
    Knowledge,
    NaivePolicyConfig,
    PlannerInput,
    SystemState,
)
from .learning import CiEntry, CiMatrix, run_learning_engine
from .metrics import UtilityParams, total_utility, utility_per_request
from .profiles import KpiRecord, ModelKpiSpec, ModelProfile, ProfileFamilySpec, generate_profiles
from .simulator import CompletionRecord, SimConfig, WorkloadSpec, run_simulation

__version__ = "0.1.0"

__all__ = [
    "AdaptationPlan",
    "CiEntry",
    "CiMatrix",
    "CompletionRecord",
    "Knowledge",
    "KpiRecord",
    "ModelKpiSpec",
    "ModelProfile",
    "NaivePolicyConfig",
    "PlannerInput",
    "ProfileFamilySpec",
    "SimConfig",
    "SystemState",
    "UtilityParams",
    "WorkloadSpec",
    "generate_profiles",
    "run_learning_engine",
    "run_simulation",
    "total_utility",
    "utility_per_request",
]
