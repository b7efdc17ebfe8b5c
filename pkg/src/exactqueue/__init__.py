"""Exact sampling of stationary FIFO multi-server queues.

Draws come from a dominating random-assignment system simulated backward in
time, either by waiting for an arrival that finds it empty or by squeezing
the FIFO state between two bounding processes.
"""

from .dcfp import DetailedState, SampleRecord, fifo_state_at_zero, kw_step, ra_step, sample_stationary_kw, truncation_wrap
from .distributions import (
    Exponential,
    Jitter,
    ModelSpec,
    ShiftedExponential,
    Table,
    Truncated,
    Uniform,
    build_model,
    distribution_from_config,
    model_from_config,
    solve_tilt,
)
from .errors import (
    BudgetExceeded,
    ExactQueueError,
    InsufficientData,
    InvalidDriftConstant,
    InvalidParameters,
    MgfUnavailable,
    NoRoot,
    NotApplicable,
    NoValidTruncation,
    Unstable,
)
from .extensions import (
    ForkJoinModel,
    HarrisConfig,
    ServiceVector,
    continuous_time_kw,
    delay_under_discipline,
    forkjoin_sojourn,
    harris_sample_c2,
    stationary_workload_g1,
)
from .rng import Streams
from .sandwich import sample_stationary_sandwich

__version__ = "0.1.0"
