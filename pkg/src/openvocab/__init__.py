"""Open-vocabulary answer classification with graph-smoothed embeddings."""

__version__ = "0.1.0"

from .embeddings import (
    EmbeddingTable,
    Phrase,
    embed_phrase,
    load_embeddings,
    nearest_neighbors,
    save_embeddings,
)
from .errors import ConfigError, DataError, DivergenceError, OpenVocabError
from .graph import AnswerGraph, build_answer_graph, expand_hop, neighborhood
from .head import (
    BackboneProjection,
    ClosedHead,
    TrainConfig,
    answer_logits,
    closed_vocab_predict,
    gradient_step,
    predict_all,
    predict_answer,
    train_closed_head,
    train_open_head,
    training_loss,
)
from .metrics import EvalReport, evaluate_report, per_answer_accuracy
from .synth import GenConfig, make_toy_table, sample_dataset, split_unseen
from .verbalizer import (
    AttentionMatrix,
    SmoothedEmbeddings,
    VerbalizerModel,
    attention_scores,
    propagate_layer,
    smooth_embeddings,
    verbalizer_gradients,
)
from .vocabulary import (
    AnswerVocabulary,
    QaSample,
    build_vocabularies,
    categorize_frequency,
    category_counts,
)
