"""Ball regularisation, sweeps, schedules and truncation drivers."""

from .diagnostics import growth_admissibility, young_measure_compare
from .drivers import (
    DomainTruncationConfig,
    TruncationReport,
    VaryingKConfig,
    truncate_domain,
    truncate_varying_K,
    truncate_whole_space,
    varying_K_ladder,
)
from .ball_regularizer import BallCert, regularize_on_ball
from .profile import RadialProfile, make_profile
from .schedule import Schedule, build_schedule
from .sweep import select_balls, sweep
