//! Batch evaluation of answer-generation methods over a query set.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::gateway::{assemble_prompt, parse_answer, GenRequest, GeneratorBackend, Query};
use crate::kb::{KbEntry, KbStore};
use crate::mcts::{run_search, ActionSpace, SearchConfig};
use crate::retrieval::{retrieve_top_n, EmbeddingIndex};
use crate::rewards::rule_evaluate;
use crate::seeding::{mix64, stable_hash64};

/// Answer-generation strategies compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    ZeroShot,
    IclRandom,
    VanillaRag,
    Rcts,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 4] = [
        EvalMethod::ZeroShot,
        EvalMethod::IclRandom,
        EvalMethod::VanillaRag,
        EvalMethod::Rcts,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMethod::ZeroShot => "zero_shot",
            EvalMethod::IclRandom => "icl_random",
            EvalMethod::VanillaRag => "vanilla_rag",
            EvalMethod::Rcts => "rcts",
        }
    }
}

impl std::str::FromStr for EvalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_shot" => Ok(EvalMethod::ZeroShot),
            "icl_random" => Ok(EvalMethod::IclRandom),
            "vanilla_rag" => Ok(EvalMethod::VanillaRag),
            "rcts" => Ok(EvalMethod::Rcts),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// One scored query. Wall time is kept in memory for overhead reporting but
/// stays out of the serialized report so report files are byte-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub method: EvalMethod,
    pub predicted: Option<String>,
    pub reference: String,
    pub correct: bool,
    pub rollouts_used: Option<usize>,
    #[serde(skip_serializing, default)]
    pub wall_time_ms: f64,
}

/// Effective settings snapshot embedded in every report.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct EvalConfigSnapshot {
    pub methods: Vec<EvalMethod>,
    pub k: usize,
    pub n: usize,
    pub rollouts: usize,
    pub max_width: usize,
    pub alpha: f64,
    pub c: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub template: String,
    pub with_reasoning: bool,
    pub backend: String,
    pub dataset: String,
    pub kb: String,
    pub index: String,
}

/// Per-method accuracy plus the record list and the config snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent accuracy per method, rounded to two decimals.
    pub accuracy: BTreeMap<String, f64>,
    pub records: Vec<EvalRecord>,
    pub config: EvalConfigSnapshot,
}

impl EvalReport {
    /// Recompute per-method accuracy from the record list.
    pub fn recompute_accuracy(records: &[EvalRecord]) -> BTreeMap<String, f64> {
        let mut totals: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for record in records {
            let slot = totals.entry(record.method.as_str().to_string()).or_insert((0, 0));
            slot.0 += record.correct as usize;
            slot.1 += 1;
        }
        totals
            .into_iter()
            .map(|(method, (correct, total))| {
                let pct = 100.0 * correct as f64 / total as f64;
                (method, (pct * 100.0).round() / 100.0)
            })
            .collect()
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Everything `run_eval` needs beyond the data: the methods under test and
/// the shared search configuration (its `k`/`n` apply to all methods).
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub methods: Vec<EvalMethod>,
    pub search: SearchConfig,
    pub seed: u64,
}

fn generate_with_examples(
    backend: &dyn GeneratorBackend,
    query: &Query,
    examples: &[KbEntry],
    cfg: &SearchConfig,
) -> Option<crate::gateway::ParsedResponse> {
    let bundle = assemble_prompt(query, examples, cfg.template, cfg.with_reasoning);
    let req = GenRequest {
        bundle,
        seed: 0,
        temperature: 0.0,
        max_tokens: cfg.gen_max_tokens,
    };
    backend
        .generate(&req)
        .ok()
        .map(|raw| parse_answer(&raw, cfg.template))
}

/// Uniform sample of `k` distinct store entries, keyed on `(seed, query id)`
/// so reruns pick identical examples.
fn random_examples(store: &KbStore, k: usize, seed: u64, query_id: &str) -> Vec<KbEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ stable_hash64(query_id)));
    let mut indices: Vec<usize> = (0..store.len()).collect();
    indices.shuffle(&mut rng);
    let entries: Vec<&KbEntry> = store.iter().collect();
    indices
        .into_iter()
        .take(k)
        .map(|i| entries[i].clone())
        .collect()
}

/// Evaluate every method over every query, in order. Retrieval excludes each
/// query's own id from the candidates, so a dataset may share ids with the
/// knowledge base without self-retrieval.
pub fn run_eval<S: crate::scalar::Scalar>(
    queries: &KbStore,
    kb: &KbStore,
    index: &EmbeddingIndex<S>,
    provider: &dyn EmbeddingProvider<S>,
    backend: &dyn GeneratorBackend,
    opts: &EvalOptions,
    config_snapshot: EvalConfigSnapshot,
) -> Result<EvalReport> {
    opts.search.validate()?;
    if opts.methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    let mut records = Vec::with_capacity(queries.len() * opts.methods.len());
    for &method in &opts.methods {
        for entry in queries.iter() {
            let started = Instant::now();
            let query = Query::from_entry(entry);
            let mut rollouts_used = None;
            let parsed = match method {
                EvalMethod::ZeroShot => {
                    generate_with_examples(backend, &query, &[], &opts.search)
                }
                EvalMethod::IclRandom => {
                    let examples = random_examples(kb, opts.search.k, opts.seed, &entry.id);
                    generate_with_examples(backend, &query, &examples, &opts.search)
                }
                EvalMethod::VanillaRag => {
                    let emb = embed(provider, &query.question, query.image_ref.as_deref())?;
                    let hits = retrieve_top_n(&emb, index, opts.search.k, Some(&entry.id))?;
                    let examples: Vec<KbEntry> = hits
                        .iter()
                        .map(|h| {
                            kb.get(&h.entry_id).cloned().ok_or_else(|| Error::UnknownEntry {
                                id: h.entry_id.clone(),
                            })
                        })
                        .collect::<Result<_>>()?;
                    generate_with_examples(backend, &query, &examples, &opts.search)
                }
                EvalMethod::Rcts => {
                    let emb = embed(provider, &query.question, query.image_ref.as_deref())?;
                    let hits = retrieve_top_n(&emb, index, opts.search.n, Some(&entry.id))?;
                    let space = ActionSpace::from_hits(&hits, kb)?;
                    let cfg = SearchConfig {
                        rng_seed: mix64(opts.seed ^ stable_hash64(&entry.id)),
                        ..opts.search.clone()
                    };
                    let result = run_search(&query, &space, backend, &cfg)?;
                    rollouts_used = Some(result.rollouts_used);
                    Some(result.response)
                }
            };
            let predicted = parsed.as_ref().and_then(|p| p.answer.clone());
            let correct = parsed
                .as_ref()
                .map(|p| rule_evaluate(p, &entry.answer) == 1)
                .unwrap_or(false);
            records.push(EvalRecord {
                query_id: entry.id.clone(),
                method,
                predicted,
                reference: entry.answer.clone(),
                correct,
                rollouts_used,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(EvalReport {
        accuracy: EvalReport::recompute_accuracy(&records),
        records,
        config: config_snapshot,
    })
}
