//! Retrieval engine for multimodal document corpora.
//!
//! Documents are decomposed into coarse components (paragraphs, tables,
//! images) and fine subcomponents (sentences, table rows, image objects)
//! arranged in a two-layer graph: intra-document cliques and inter-document
//! link edges connect the coarse layer, containment edges tie each component
//! to its subcomponents, and every node carries an embedding. Queries are
//! decomposed into modality-labeled subqueries and answered by a beam
//! traversal that scores edges through late interaction between subqueries
//! and subcomponents.

pub mod corpus;
pub mod decompose;
pub mod embed;
pub mod error;
pub mod eval;
pub mod graph;
pub mod index;
pub mod retrieval;
pub mod segment;
pub mod synth;

pub use corpus::{
    parse_corpus, resolve_links, write_corpus, Component, Corpus, Document, LinkMapping, Modality,
};
pub use decompose::{classify_modality, modality_set, DecomposedQuery, Decomposer, ModalityLabel};
pub use embed::{cosine, hash_embed, EmbedRequest, Embedder, Embedding, HashEmbedder, Instruction};
pub use error::{Error, Result};
pub use eval::{
    mrr_at_k, recall_at_k, run_benchmark, EvalParams, EvalReport, QueryRecord, Qrels,
};
pub use graph::{build_graph, BuildReport, LayeredComponentGraph};
pub use index::{index_exists, load_index, save_index};
pub use retrieval::{
    retrieve, retrieve_knn, retrieve_rerank, score_edge, seed_candidates, traverse, EdgeKey,
    RankedResult, RetrievalMode, ScoredEdge, TraversalParams,
};
pub use segment::{split_sentences, subcomponents, SubKind, Subcomponent};
