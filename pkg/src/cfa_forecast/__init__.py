"""Zero-shot time-series forecasting across unseen seasonal frequencies.

An attention forecaster whose keys and queries are trained to hide the
dominant period of the input from an adversarial regressor, plus LSTM and
mean baselines, a synthetic data generator and a zero-shot evaluation harness.
"""

from .data import DatasetSplit, SyntheticConfig, TimeSeries, WindowSample
from .estimators import CFAForecaster, LSTMForecaster, MeanForecaster, load_forecaster, make_forecaster, save_forecaster
from .exceptions import CFAError, ConfigError, ContractError, DatasetError, EvaluationError, TrainingFault

__version__ = "0.1.0"

__all__ = [
    "CFAError",
    "CFAForecaster",
    "ConfigError",
    "ContractError",
    "DatasetError",
    "DatasetSplit",
    "EvaluationError",
    "LSTMForecaster",
    "MeanForecaster",
    "SyntheticConfig",
    "TimeSeries",
    "TrainingFault",
    "WindowSample",
    "load_forecaster",
    "make_forecaster",
    "save_forecaster",
]
