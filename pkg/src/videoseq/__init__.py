"""Temporal aggregation models for pre-extracted frame-level video features.

A small numpy-based library for multi-label video classification from
per-frame visual and audio feature vectors: a reverse-mode autodiff core,
recurrent and convolutional sequence encoders with attention pooling,
average-pooling and VLAD baselines, GAP@20 evaluation, and a deterministic
training harness with a CLI.
"""

from .autodiff import (
    BatchNormState,
    Graph,
    Tensor,
    TimeMask,
    activation,
    backward,
    batchnorm_time,
    check_gradients,
    clip,
    concat,
    concat_channels,
    conv1d_same,
    exp,
    log,
    masked_mean_time,
    matmul,
    no_grad,
    numerical_gradient,
    relative_error,
    relu,
    reverse_valid_time,
    sigmoid,
    softmax_masked,
    sqrt,
    stack_time,
    tanh,
    transpose,
)
from .dataio import (
    DatasetHeader,
    VideoRecord,
    generate_synthetic,
    load_records,
    pad_batch,
    read_records,
    write_records,
)
from .metrics import (
    GapResult,
    PredictionSet,
    gap_at_k,
    gap_oracle,
    read_prediction_file,
    topk_predictions,
    write_prediction_file,
)
from .models import (
    ModelOutput,
    ModelSpec,
    build_model,
    load_checkpoint,
    mlp_classify,
    save_checkpoint,
)
from .recurrent import (
    AttentionParams,
    RecurrentCellParams,
    attention_pool,
    gru_step,
    lstm_step,
    run_bidirectional,
)
from .vlad import Codebook, VladEncoding, kmeans_fit, load_codebook, save_codebook, vlad_encode
from .errors import (
    ConfigurationError,
    ContractError,
    CorruptionError,
    DimensionError,
    FormatError,
    InputError,
    PreconditionError,
    StateError,
    TrainingError,
    ValidationError,
    VideoseqError,
)

__version__ = "1.0.0"
