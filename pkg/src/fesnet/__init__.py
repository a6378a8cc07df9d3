"""fesnet: lightweight retinal vessel segmentation with explicit
forward/backward kernels, built on numpy."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    AugmentConfig,
    DatasetError,
    DatasetSpec,
    Sample,
    augment,
    load_dataset,
    prepare_sample,
    random_crop,
    resize_and_pad,
    zscore_normalize,
)
from .gradcheck import gradcheck, gradcheck_probability_model, run_gradcheck_suite
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvSpec,
    ConvTranspose2d,
    Param,
    ReLU,
    SeparableConv2d,
    concat_channels,
    concat_channels_backward,
    cross_entropy_loss,
    softmax_channels,
    softmax_channels_backward,
)
from .metrics import (
    ConfusionCounts,
    MetricReport,
    RocAccumulator,
    aggregate,
    compute_metrics,
    confusion_counts,
    render_overlay,
)
from .model import (
    ArchConfig,
    FeatureEnhancementBlock,
    FesNet,
    PromptConvBlock,
    count_parameters,
)
from .optim import Adam, AdamState, adam_step
from .train import TrainConfig, TrainLog, evaluate, init_rng, lr_schedule, train

__version__ = "0.1.0"
