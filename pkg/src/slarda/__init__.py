"""Time-series unsupervised domain adaptation toolkit.

Pipeline: contrastive-predictive source pretraining, adversarial alignment of
temporal features through an attention-based discriminator, and EMA-teacher
confident pseudo labeling for class-conditional alignment, plus a synthetic
domain-shift benchmark that makes each mechanism verifiable at desk scale.
"""

from .adapt import AdaptConfig, adapt_target, adversarial_loss, discriminator_loss
from .data import (
    ClassSignalParams,
    DomainDataset,
    SyntheticShiftSpec,
    TimeSeriesSample,
    WindowingSpec,
    make_synthetic_shift_pair,
    resample_to_length,
    segment_sliding_window,
    split_dataset,
)
from .models import (
    ContextNetConfig,
    DiscriminatorConfig,
    EncoderConfig,
    ModelBundle,
    ModelConfig,
    build_bundle,
    build_discriminator,
)
from .pretrain import (
    CPCConfig,
    PretrainConfig,
    cpc_loss,
    pretrain_source,
    similarity_score,
    supervised_loss,
)
from .runner import ScenarioResult, ScenarioSpec, predict_target, run_matrix, run_scenario
from .stats import wilcoxon_signed_rank
from .teacher import (
    PseudoLabelBatch,
    TeacherState,
    class_conditional_loss,
    combined_target_loss,
    confident_pseudo_labels,
    ema_update,
    make_teacher,
)

__version__ = "0.1.0"
