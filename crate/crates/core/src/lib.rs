//! Retrieval-augmented in-context example selection for a vision-language
//! generator.
//!
//! The pipeline has three stages: a knowledge base whose entries carry
//! self-consistently validated reasoning contexts ([`kb`]), late-interaction
//! retrieval over hybrid token embeddings ([`embedding`], [`retrieval`]), and
//! a tree search that re-ranks the retrieved candidates by heuristic rewards
//! before the final generation ([`mcts`], [`rewards`]). The [`harness`]
//! module evaluates the method against zero-shot, random in-context, and
//! plain top-retrieval baselines; [`gateway`] owns prompt assembly, answer
//! parsing, and the generation backends.
//!
//! Numeric kernels are generic over the scalar type via [`scalar::Scalar`];
//! the aliases below pin the concrete precisions used by the pipeline:
//! `f32` for embedding storage (the on-disk format) and `f64` where tree and
//! reward math needs the headroom.

pub mod embedding;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod kb;
pub mod mcq;
pub mod mcts;
pub mod retrieval;
pub mod rewards;
pub mod scalar;
pub(crate) mod seeding;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Token embedding matrix at the pipeline's storage precision.
pub type TokenEmbeddings = embedding::TokenEmbeddings<f32>;
/// Hybrid (text + optional image) embedding at storage precision.
pub type HybridEmbedding = embedding::HybridEmbedding<f32>;
/// Embedding index at storage precision.
pub type EmbeddingIndex = retrieval::EmbeddingIndex<f32>;
/// Retrieval hit at storage precision.
pub type RetrievalHit = retrieval::RetrievalHit<f32>;

/// Wide-precision variants for oracle comparisons and scalar-agnostic tests.
pub type TokenEmbeddings64 = embedding::TokenEmbeddings<f64>;
pub type HybridEmbedding64 = embedding::HybridEmbedding<f64>;
pub type EmbeddingIndex64 = retrieval::EmbeddingIndex<f64>;
pub type RetrievalHit64 = retrieval::RetrievalHit<f64>;

pub use embedding::{embed, EmbeddingProvider, HashEmbedder};
pub use gateway::{
    assemble_prompt, parse_answer, GenRequest, GeneratorBackend, HttpBackend, MockBackend,
    ParsedResponse, PromptBundle, Query, TemplateId,
};
pub use harness::{run_eval, EvalConfigSnapshot, EvalMethod, EvalOptions, EvalRecord, EvalReport};
pub use kb::{
    build_reasoning_context, parse_kb_jsonl, save_kb_jsonl, score_candidate, KbEntry, KbStore,
    ReasoningCandidate, ReasoningConfig,
};
pub use mcq::{build_multiple_choice_variant, parse_mcq_sources, McqSource};
pub use mcts::{
    backprop_update, run_search, sample_action, uct_value, Action, ActionSpace, BranchEvaluator,
    SearchConfig, SearchResult, SearchTree, Searcher, Termination, TreeNode,
};
pub use retrieval::{
    build_index, maxsim_relevance, normalize_similarities, read_index, retrieve_top_n,
    write_index, NORM_FLOOR,
};
pub use rewards::{
    combine_rewards, mutual_reward, rule_evaluate, select_mutual_samples,
    self_consistency_reward, HeuristicEvaluator, RewardBreakdown, RewardConfig,
};
