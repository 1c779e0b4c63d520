"""Desk-scale few-shot class-incremental learning laboratory."""

from .errors import FscilError
from .eval_report import (
    DeltaInputs,
    SessionMetrics,
    compute_delta_inputs,
    delta_metric,
    emit_report,
    emit_single_session_report,
    evaluate_session,
)
from .model import (
    Backbone,
    Classifier,
    HyperBase,
    Model,
    extend_classifier,
    forward_logits,
    load_model,
    loss_base,
    loss_language_reg,
    loss_main,
    save_model,
)
from .numkit import (
    ParamSet,
    SeededRng,
    cosine_similarity,
    gradcheck,
    sgd_step,
    softmax_with_temperature,
)
from .protocol import (
    LabeledDataset,
    MemoryBuffer,
    SessionStream,
    Split,
    StreamConfig,
    build_session_stream,
    generate_synthetic_dataset,
    load_dataset,
    sample_memory,
    save_dataset,
)
from .semantic_space import (
    ClassMeans,
    EmbeddingTable,
    KnnGraph,
    SimilarityMode,
    anchor_weights,
    build_knn_graph,
    class_visual_means,
    default_k,
    load_embedding_table,
    pairwise_similarity,
    save_embedding_table,
    subspace_anchor,
)
from .trainer import (
    IncrementalHyper,
    WeightSnapshot,
    r_new,
    r_old,
    run_full_stream,
    run_incremental_session,
    run_sessions,
    train_base,
)

__version__ = "0.1.0"
