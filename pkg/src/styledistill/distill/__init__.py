"""Score distillation with style injection."""

from .optimize import DistillationConfig, DivergenceError, OptimizationResult, optimize_scene, trajectory_digest
from .residuals import (VSDAux, guidance_decomposition, sds_residual, snf_ssd_residual,
                        ssd_residual, vsd_ssd_residual)
from .schedules import StyleRatioSchedule, schedule_lambda
