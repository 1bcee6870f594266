"""Shape-aware time-series classification.

Univariate series are tokenized into multi-scale windowed "shape tokens",
pooled into class tokens by gated attention, refined by a transformer
encoder, and trained with prototype-contrastive plus momentum-contrastive
objectives. See the README for the CLI and evaluation harness.
"""

__version__ = "0.1.0"

from .adapter import (
    AdapterOutput,
    AttentionPool,
    MultiScaleAdapter,
    NumericEmbedding,
    ScaleConfig,
    ShapeTokenBatch,
    ShapeTokenEmbedding,
    compute_window_features,
    extract_subsequences,
)
from .checkpoint import ModelCheckpoint
from .data import (
    Dataset,
    PretrainCorpus,
    TimeSeriesSample,
    build_pretrain_corpus,
    channel_independent_split,
    generate_motif_dataset,
    load_tsv_dataset,
    resize_series,
)
from .encoder import (
    ClassificationHead,
    EncodedSequence,
    EncoderConfig,
    TokenEncoder,
    predict_class,
)
from .errors import ParseError, ValidationError
from .estimator import ShapeTokenClassifier, ShapeTokenFeaturizer
from .evaluation import (
    EvalReport,
    FeatureMatrix,
    average_ranks,
    compare_methods,
    extract_features,
    wilcoxon_signed_rank,
    zero_shot_eval,
)
from .interpret import ExplainRecord, build_explain_record, score_heatmap
from .model import ModelConfig, ShapeModel, momentum_step
from .prototypes import (
    ContrastiveConfig,
    PrototypeStore,
    ema_update,
    init_prototypes,
    instance_loss,
    proto_loss,
    pseudo_label,
    shape_loss,
)
from .training import (
    TrainConfig,
    TrainHistory,
    finetune,
    initial_checkpoint,
    pretrain,
    random_crop_view,
    self_sup_loss,
)
