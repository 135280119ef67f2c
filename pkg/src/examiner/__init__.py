"""Worst-case model evaluation with sequential examiners.

A target maps scenarios (points in a bounded factor space) to losses. Two
adaptive examiners, an LSTM policy trained with REINFORCE and a
Gaussian-process UCB optimizer, search the space to concentrate test cases
where the target is weakest (or, with the direction flipped, strongest).
A procedural shape renderer and a small trainable classifier provide
reproducible desk-scale targets, and analytic landscapes with known optima
anchor everything to brute-force ground truth.
"""

__version__ = "0.1.0"

from .core import (
    ExamTrace,
    Examiner,
    ExaminerProtocolError,
    Factor,
    InvalidConfigError,
    RandomExaminer,
    ScenarioBoundsError,
    ScenarioSpace,
    TargetQuery,
    bin_to_value,
    examiner_metric,
    run_examination,
    standard_metric,
)
from .numerics import AdamState, adam_step, cholesky_solve, rng_stream, softmax
from .rl import PolicyParams, RlConfig, RlExaminer, Rollout, permute_factor_order, sample_scenario
from .bo import BoExaminer, GpState, KernelConfig, UcbConfig, gp_predict, maximize_acquisition, ucb
from .landscapes import AnalyticLandscape, LandscapeTarget, benchmark_landscapes, benchmark_space
from .render import SHAPE_CLASSES, ShapeInstance, canonical_instances, render, render_space, write_pgm
from .classify import Classifier, ShapeTarget, loss_of, restrict_training_space, train_classifier
from .oracle import grid_oracle

__all__ = [name for name in dir() if not name.startswith("_")]
