"""Compress super-resolution networks: sparsify, plan a compact model, distill."""

from .distill import KDConfig, run_distillation
from .models import ModelConfig, SRModel, build, exact_param_count, load_weights, save_weights
from .pipeline import RunConfig, run_workflow
from .planner import CompressionPlan, RoundingMode, plan, verify_plan
from .pruning import PruneConfig, run_pruning

__all__ = [
    "CompressionPlan", "KDConfig", "ModelConfig", "PruneConfig", "RoundingMode", "RunConfig", "SRModel",
    "build", "exact_param_count", "load_weights", "plan", "run_distillation", "run_pruning",
    "run_workflow", "save_weights", "verify_plan",
]
__version__ = "0.1.0"
