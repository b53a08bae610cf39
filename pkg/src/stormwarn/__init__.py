"""Value-weighted verification and epoch-ensemble warnings for severe thunderstorm nowcasting."""

__version__ = "0.1.0"

from .ensemble import (  # noqa: E402
    EnsembleConfig,
    EnsembleDecision,
    EpochPredictionMatrix,
    binarize,
    ensemble_predict,
    median_vote,
    optimal_threshold,
    select_epochs,
    select_run,
    tune_gamma,
)
from .labeling import (  # noqa: E402
    EventLabel,
    LabelParams,
    LightningRecord,
    RainGrid,
    haversine_km,
    label_event,
    lightning_rule,
    over_threshold_components,
)
from .verify import (  # noqa: E402
    AlignmentError,
    LabelSeries,
    Score,
    ScoreTable,
    compute_score,
    UndefinedScoreError,
    WeightWindowConfig,
    confusion_matrix,
    csi,
    score_report,
    tss,
    value_weighted_confusion_matrix,
    wcsi,
    weight,
    window_after,
    window_before,
    wtss,
)
