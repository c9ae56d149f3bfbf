"""Desk-scale toolkit for multi-granularity hard-negative synthesis,
curriculum contrastive training, and anchor-token-aware pooling over a
small bidirectional byte-level encoder."""

from .curriculum import Schedule, build_schedule
from .encoder import (
    EncoderConfig,
    EncoderModel,
    EncoderOutput,
    load_checkpoint,
    save_checkpoint,
    tokenize,
    wrap_instruction,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    FileFormatError,
    GenerationFormatError,
    ShapeError,
    ToolkitError,
    TransportError,
)
from .numkit import Tape, Tensor
from .objective import ContrastiveBatch, cosine, info_nce
from .pooling import AnchorWeights, ata_weights, pool, pool_ata, pool_last, pool_mean
from .synth import (
    HttpBackendConfig,
    HttpChatBackend,
    MockChatBackend,
    PromptPlaceholders,
    TaskSpec,
    TrainingTriplet,
    augment_retrieval_pair,
    brainstorm_tasks,
    generate_triplet,
    parse_generation,
    render_prompt,
    synthesize_dataset,
)
from .trainer import AdamState, RunManifest, TrainConfig, adam_init, adam_step, train
from .evalkit import (
    Embedder,
    GranularityReport,
    RetrievalTask,
    granularity_stats,
    inspect_weights,
    ndcg_at_k,
    pooling_ablation,
    recall_at_k,
    spearman,
)

__version__ = "0.1.0"
