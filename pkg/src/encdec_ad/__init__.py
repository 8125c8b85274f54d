"""LSTM encoder-decoder anomaly detection for multi-sensor time series.

Train an encoder-decoder to reconstruct normal windows, model the
reconstruction errors of held-out normal windows with a Gaussian, and flag
points whose Mahalanobis score exceeds a threshold.
"""

from .config import ExperimentConfig, load_config, load_preset
from .data import (
    DatasetSplit,
    TimeSeriesFrame,
    Window,
    WindowSet,
    downsample,
    load_csv,
    make_windows,
    split,
)
from .detection import (
    Metrics,
    Threshold,
    classify,
    evaluate,
    f_beta,
    select_threshold_supervised,
    select_threshold_unsupervised,
)
from .lstm import (
    EncDecModel,
    LstmParams,
    LstmState,
    Reconstruction,
    decode_autoregressive,
    decode_teacher_forced,
    encode,
    gradients,
    lstm_step,
    reconstruct,
    window_loss,
)
from .scoring import GaussianErrorModel, anomaly_score, error_vectors, fit_error_model, score_windows
from .training import AdamState, TrainConfig, TrainReport, adam_update, train

__version__ = "0.1.0"
