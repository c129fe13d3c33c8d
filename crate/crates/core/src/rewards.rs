//! Heuristic rewards for simulated branches: self-consistency, mutual
//! answering of held-out reference questions, and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{
    canonicalize_answer, mutual_probe_prompt, parse_answer, reasoning_probe_prompt, GenRequest,
    GeneratorBackend, ParsedResponse, Query, TemplateId,
};
use crate::kb::KbEntry;
use crate::mcts::{Action, ActionSpace};
use crate::scalar::Scalar;

/// Reward knobs: probe counts and the self/mutual weighting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Self-consistency probes per branch.
    pub n_self: usize,
    /// Mutual reference questions per branch.
    pub n_mutual: usize,
    /// Weight of the self-consistency reward in the combination.
    pub alpha: f64,
    pub max_tokens: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            n_self: 5,
            n_mutual: 5,
            alpha: 0.2,
            max_tokens: 512,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_self == 0 || self.n_mutual == 0 {
            return Err(Error::Config("probe counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Reward components of one simulated branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub q_self: f64,
    pub q_mutual: f64,
    pub q_combined: f64,
    pub self_verdicts: Vec<bool>,
    pub mutual_verdicts: Vec<bool>,
}

impl RewardBreakdown {
    /// All-zero breakdown, used for unparsable branch responses.
    pub fn zero(cfg: &RewardConfig) -> Self {
        Self {
            q_self: 0.0,
            q_mutual: 0.0,
            q_combined: 0.0,
            self_verdicts: vec![false; cfg.n_self],
            mutual_verdicts: vec![false; cfg.n_mutual],
        }
    }
}

/// Rule-based evaluator: 1 iff the prediction parsed and its canonical answer
/// equals the canonical reference.
pub fn rule_evaluate(predicted: &ParsedResponse, reference: &str) -> u8 {
    match &predicted.answer {
        Some(answer) if predicted.parse_ok => {
            (canonicalize_answer(answer) == canonicalize_answer(reference)) as u8
        }
        _ => 0,
    }
}

/// Weighted combination `alpha * q_self + (1 - alpha) * q_mutual`, clamped to
/// `[0, 1]`.
pub fn combine_rewards<S: Scalar>(q_self: S, q_mutual: S, alpha: S) -> S {
    let combined = q_mutual + alpha * (q_self - q_mutual);
    combined.min(S::one()).max(S::zero())
}

fn mean_of(verdicts: &[bool]) -> f64 {
    if verdicts.is_empty() {
        return 0.0;
    }
    verdicts.iter().filter(|v| **v).count() as f64 / verdicts.len() as f64
}

/// Regenerate the query answer from the branch's own reasoning under seeds
/// `1..=n_self` and score agreement with the branch's answer. A branch
/// without reasoning (or without a parsed answer) scores zero; backend
/// failures count as disagreements.
pub fn self_consistency_reward(
    query: &Query,
    response: &ParsedResponse,
    backend: &dyn GeneratorBackend,
    cfg: &RewardConfig,
    format: TemplateId,
) -> (f64, Vec<bool>) {
    let (Some(reasoning), Some(answer)) = (&response.reasoning, &response.answer) else {
        return (0.0, vec![false; cfg.n_self]);
    };
    let mut verdicts = Vec::with_capacity(cfg.n_self);
    for seed in 1..=cfg.n_self as u64 {
        let bundle = reasoning_probe_prompt(&query.question, query.image_ref.as_deref(), reasoning);
        let req = GenRequest {
            bundle,
            seed,
            temperature: 0.7,
            max_tokens: cfg.max_tokens,
        };
        let verdict = match backend.generate(&req) {
            Ok(raw) => rule_evaluate(&parse_answer(&raw, format), answer) == 1,
            Err(_) => false,
        };
        verdicts.push(verdict);
    }
    (mean_of(&verdicts), verdicts)
}

/// Pick the reference questions for mutual scoring: the `n_mutual` highest
/// similarity actions (ties by entry id), or the whole space when smaller.
/// The pick depends only on the action space, so every branch of a query
/// scores against the same references.
pub fn select_mutual_samples(space: &ActionSpace, cfg: &RewardConfig) -> Result<Vec<KbEntry>> {
    if space.is_empty() {
        return Err(Error::EmptyActionSpace);
    }
    let mut ranked: Vec<&Action> = space.actions().iter().collect();
    ranked.sort_by(|a, b| {
        b.sim
            .partial_cmp(&a.sim)
            .expect("finite similarity")
            .then_with(|| a.entry.id.cmp(&b.entry.id))
    });
    Ok(ranked
        .into_iter()
        .take(cfg.n_mutual)
        .map(|a| a.entry.clone())
        .collect())
}

/// Answer each mutual reference question with the branch response as context
/// and score against the reference's ground-truth answer. Backend failures
/// count as misses.
pub fn mutual_reward(
    query: &Query,
    branch_response_raw: &str,
    mutual: &[KbEntry],
    backend: &dyn GeneratorBackend,
    cfg: &RewardConfig,
) -> (f64, Vec<bool>) {
    let mut verdicts = Vec::with_capacity(mutual.len());
    for sample in mutual {
        let bundle = mutual_probe_prompt(query, branch_response_raw, sample);
        let req = GenRequest {
            bundle,
            seed: 0,
            temperature: 0.0,
            max_tokens: cfg.max_tokens,
        };
        let verdict = match backend.generate(&req) {
            Ok(raw) => rule_evaluate(&parse_answer(&raw, sample.parse_format()), &sample.answer) == 1,
            Err(_) => false,
        };
        verdicts.push(verdict);
    }
    (mean_of(&verdicts), verdicts)
}

/// Scores a branch with the heuristic rewards. Built once per query so the
/// mutual sample set is fixed across branches.
pub struct HeuristicEvaluator<'a> {
    backend: &'a dyn GeneratorBackend,
    cfg: RewardConfig,
    format: TemplateId,
    mutual: Vec<KbEntry>,
}

impl<'a> HeuristicEvaluator<'a> {
    pub fn new(
        backend: &'a dyn GeneratorBackend,
        space: &ActionSpace,
        cfg: RewardConfig,
        format: TemplateId,
    ) -> Result<Self> {
        cfg.validate()?;
        let mutual = select_mutual_samples(space, &cfg)?;
        Ok(Self {
            backend,
            cfg,
            format,
            mutual,
        })
    }

    pub fn mutual_samples(&self) -> &[KbEntry] {
        &self.mutual
    }
}

impl crate::mcts::BranchEvaluator for HeuristicEvaluator<'_> {
    fn evaluate(&mut self, query: &Query, _branch: &[&Action], response: &ParsedResponse) -> RewardBreakdown {
        if !response.parse_ok {
            return RewardBreakdown::zero(&self.cfg);
        }
        let (q_self, self_verdicts) =
            self_consistency_reward(query, response, self.backend, &self.cfg, self.format);
        let (q_mutual, mutual_verdicts) =
            mutual_reward(query, &response.raw, &self.mutual, self.backend, &self.cfg);
        RewardBreakdown {
            q_self,
            q_mutual,
            q_combined: combine_rewards(q_self, q_mutual, self.cfg.alpha),
            self_verdicts,
            mutual_verdicts,
        }
    }
}
