"""Domain-adversarial multimodal emotion recognition at desk scale.

A small numpy-backed library: a from-scratch reverse-mode autodiff engine,
the architectural blocks of an attention-fused bi-GRU encoder with a
gradient-reversal domain branch, a synthetic multi-speaker corpus generator,
and a seeded experiment harness comparing adversarial training against the
plain supervised baseline.
"""

from .tensor import (
    AdamState,
    InvalidValueError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    adam_step,
    backward,
    l2_penalty,
)
from .layers import (
    AtFusionParams,
    AttentionParams,
    DenseParams,
    GrlConfig,
    GruCellParams,
    at_fusion_forward,
    bigru_forward,
    dense_forward,
    dense_rows,
    grl,
    gru_cell_step,
    self_attention_forward,
)
from .model import (
    DannModel,
    LossBreakdown,
    ModelConfig,
    combined_loss,
    domain_probs,
    emotion_probs,
    encode_conversation,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .data import (
    Conversation,
    Corpus,
    CorpusFormatError,
    SplitSpec,
    SynthConfig,
    Utterance,
    final_session,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
    session_subset,
    split_by_sessions,
    ts_split_spec,
    weighted_accuracy,
)
from .train import (
    EpochMetrics,
    EvalResult,
    ExperimentResult,
    ExperimentSpec,
    MetricsRecord,
    TrainConfig,
    evaluate,
    lambda_sweep,
    run_experiment,
    train,
)

__version__ = "0.1.0"
