"""Multi-granularity sparse attention for long-text extractive summarization.

The package models a document as a heterogeneous node sequence (tokens,
per-sentence aggregation nodes, optional per-document nodes, entity mention
overlays) and attends over it with three sparse patterns at once: a sliding
token-to-token band, global rows and columns for the aggregation nodes, and
block-diagonal entity-to-entity tiles.  Attention is computed pattern by
pattern in rectangle-packed buffers whose storage grows linearly with
sequence length, never through a dense n-by-n matrix.
"""

from .attention import (HetAttentionParams, PatternParams, WORK,
                        dense_reference_attention, het_attention_backward,
                        het_attention_forward, masked_softmax,
                        pattern_attention_forward)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import (CorpusError, Document, NodeKind, NodeSequence, Vocab,
                     build_nodes, build_vocab, document_from_record,
                     document_to_record, parse_corpus, render_tokens,
                     resolve_entities_exact, token_spans, tokenize)
from .estimator import ExtractiveSummarizer
from .extraction import ExtractionResult, extract, sentence_trigrams
from .gradcheck import TensorCheck, audit_state, gradient_report
from .masks import (LayerMasks, MaskSet, SparseMask, assemble_mask_set,
                    band_mask, blocks_mask, build_mask_set, densify,
                    entry_counts, global_mask, synthetic_layout,
                    window_schedule)
from .metrics import (OracleLabels, RougeScore, evaluate_summaries,
                      evaluate_summary, exhaustive_oracle,
                      greedy_oracle_labels, rouge_l, rouge_n)
from .model import (ConfigError, ModelConfig, ModelState, bce_loss,
                    bce_loss_from_logits, embed, encode, init_model,
                    loss_and_grads, parameter_count, score_sentences,
                    sentence_logits)
from .rng import derive_rng
from .training import (TrainOptions, TrainResult, TrainingDiverged, lr_at,
                       prepare_doc, train)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "CorpusError", "Document",
    "ExtractionResult", "ExtractiveSummarizer", "HetAttentionParams",
    "LayerMasks", "MaskSet", "ModelConfig", "ModelState", "NodeKind",
    "NodeSequence", "OracleLabels", "PatternParams", "RougeScore",
    "SparseMask", "TensorCheck", "TrainOptions", "TrainResult",
    "TrainingDiverged", "Vocab", "WORK", "assemble_mask_set", "audit_state",
    "band_mask",
    "bce_loss", "bce_loss_from_logits", "blocks_mask", "build_mask_set",
    "build_nodes", "build_vocab", "dense_reference_attention", "densify",
    "derive_rng", "document_from_record", "document_to_record", "embed",
    "encode", "entry_counts", "evaluate_summaries", "evaluate_summary",
    "exhaustive_oracle", "extract", "global_mask", "gradient_report",
    "greedy_oracle_labels", "het_attention_backward",
    "het_attention_forward", "init_model", "loss_and_grads", "lr_at",
    "masked_softmax", "parameter_count", "parse_corpus",
    "pattern_attention_forward", "prepare_doc", "render_tokens",
    "resolve_entities_exact", "rouge_l", "rouge_n", "save_checkpoint",
    "load_checkpoint", "score_sentences", "sentence_logits",
    "sentence_trigrams", "synthetic_layout", "token_spans", "tokenize",
    "train", "window_schedule",
]
