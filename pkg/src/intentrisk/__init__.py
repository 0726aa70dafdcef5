"""Tail-risk evaluation and re-ranking of rankings over query intents."""

from .core import (
    InstanceError,
    IntentDistribution,
    MetricSpec,
    QueryInstance,
    Ranking,
    RelevanceTable,
    make_instance,
    raw_relevance,
    toy_instance,
    validate_instance,
)
from .exact import (
    BudgetExceeded,
    GuaranteeReport,
    check_guarantee,
    exact_vrisk_opt,
    maxkcover_instance,
)
from .metrics import (
    RiskEvaluation,
    TargetLevel,
    base_value,
    compute_targets,
    delta_normalize,
    intent_loss,
    per_intent_value,
    v_iw,
    v_std,
    vrisk,
)
from .rankers import (
    DiversifierConfig,
    TfidfSimilarity,
    calibrated_rerank,
    ia_select,
    iw_greedy,
    mmr,
    naive_rank,
    vrisker,
    xquad,
)

__version__ = "0.1.0"
