"""Frame-level hazard modelling of phone durations with quantile-based
sequential generation, phone-level baselines and evaluation tools."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DurationDistribution,
    FrameDataset,
    HazardSequence,
    PhoneRecord,
    PhoneticClass,
    Utterance,
    validate_utterance,
)
from .hazard import (  # noqa: E402
    hazard_from_pmf,
    pmf_from_hazard,
    quantile_from_survival,
    survival_from_hazard,
    truncated_mean_from_pmf,
)
from .train import (  # noqa: E402
    FrameHazardModel,
    PhoneDurationModel,
    SystemKind,
    TrainConfig,
    load_model,
    save_model,
)

__all__ = [
    "DurationDistribution", "FrameDataset", "HazardSequence", "PhoneRecord", "PhoneticClass",
    "Utterance", "validate_utterance", "hazard_from_pmf", "pmf_from_hazard",
    "quantile_from_survival", "survival_from_hazard", "truncated_mean_from_pmf",
    "FrameHazardModel", "PhoneDurationModel", "SystemKind", "TrainConfig", "load_model",
    "save_model",
]
