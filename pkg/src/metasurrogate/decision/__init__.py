"""Decision loops driven by probabilistic surrogates."""

from metasurrogate.decision.bandit import bandit_curve, bandit_eval, info_gain_scores, info_gain_select
from metasurrogate.decision.bo import BORun, RunRecord, bo_loop, thompson_from_view, thompson_select
from metasurrogate.decision.mbrl import (
    MBRLConfig,
    MBRLModel,
    Normalizer,
    PlannerConfig,
    ReplayBuffer,
    cem_plan,
    mbrl_meta_train,
    mbrl_test_loop,
)
from metasurrogate.decision.metrics import evaluations_to_threshold, rmse, scaled_min_curve
from metasurrogate.decision.surrogates import GPSurrogate, MLPSurrogate, NPSurrogate
from metasurrogate.decision.two_level import TaskPool, flat_random_search, planted_pool, two_level_search

__all__ = [
    "BORun", "GPSurrogate", "MBRLConfig", "MBRLModel", "MLPSurrogate", "NPSurrogate", "Normalizer",
    "PlannerConfig", "ReplayBuffer", "RunRecord", "TaskPool", "bandit_curve", "bandit_eval", "bo_loop",
    "cem_plan", "evaluations_to_threshold", "flat_random_search", "info_gain_scores", "info_gain_select",
    "mbrl_meta_train", "mbrl_test_loop", "planted_pool", "rmse", "scaled_min_curve", "thompson_from_view",
    "thompson_select", "two_level_search",
]
