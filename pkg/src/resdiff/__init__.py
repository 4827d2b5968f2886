"""Residual denoising diffusion: schedules, forward and reverse processes,
predictors, training with automatic objective selection, and toy tasks."""

from .forward import DiffusionState, TripletBatch, forward_step, synthesize, synthesize_from_input
from .numerics import RandomStream, ShapeError
from .predictors import (
    GaussianOraclePredictor,
    GroundTruthPredictor,
    MlpModel,
    MlpPredictor,
    PairedPredictor,
    PathPoint,
    SingularConversionError,
    convert_noise_to_residual,
    convert_residual_to_noise,
)
from .sampler import SamplingPlan, reverse_step, sample
from .schedules import CoefficientSchedule, DdimSchedule, adjust_schedule, ddim_to_rddm, make_schedule, rddm_to_ddim
from .tasks import make_dataset, make_task

__version__ = "0.1.0"
