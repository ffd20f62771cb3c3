//! Language-agnostic document embeddings and cross-lingual document alignment.
//!
//! Sentence embeddings are debiased by removing each language's dominant
//! subspace, weighted by inverse kernel density, pooled into document
//! vectors and aligned one-to-one with cosine or margin scoring.

pub mod align;
pub mod corpus;
pub mod debias;
pub mod density;
pub mod linalg;
pub mod pipeline;
pub mod pooling;
pub mod synth;
pub mod util;
pub mod viz;

pub use align::{align, AlignConfig, AlignmentResult, Metric, ScoredPair};
pub use corpus::{Corpus, CorpusManifest, DocumentRecord, EmbeddingMatrix, GoldAlignment, SentenceId};
pub use debias::LanguageSubspace;
pub use density::{Kernel, SentenceWeights};
pub use linalg::Matrix;
pub use pipeline::{run_all, PipelineConfig, PipelineError as Error, RankSpec};
pub use pooling::{DocumentEmbeddings, Pooling};
