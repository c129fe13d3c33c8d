//! Knowledge-base entries: storage, JSONL persistence, and reasoning-context
//! generation with self-consistent scoring.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{
    parse_answer, reasoning_generation_prompt, reasoning_probe_prompt, GenRequest,
    GeneratorBackend, TemplateId,
};
use crate::rewards::rule_evaluate;

/// One knowledge-base item: a question with its reference answer, an optional
/// image reference, and an optional generated reasoning context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    #[serde(rename = "image")]
    pub image_ref: Option<String>,
    pub question: String,
    pub options: Option<Vec<String>>,
    pub answer: String,
    pub reasoning: Option<String>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    /// Unknown fields, preserved verbatim on round-trip.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl KbEntry {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image_ref: None,
            question: question.into(),
            options: None,
            answer: answer.into(),
            reasoning: None,
            meta: serde_json::Map::new(),
            extra: serde_json::Map::new(),
        }
    }

    /// Check the entry invariants: nonempty id/question/answer, the answer a
    /// valid option letter when options are present, nonempty reasoning when set.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidEntry {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return fail("empty id");
        }
        if self.question.trim().is_empty() {
            return fail("empty question");
        }
        if self.answer.trim().is_empty() {
            return fail("empty answer");
        }
        if let Some(options) = &self.options {
            if options.is_empty() {
                return fail("empty options list");
            }
            if options.len() > 26 {
                return fail("more than 26 options");
            }
            let mut chars = self.answer.chars();
            let letter = chars.next().unwrap_or(' ').to_ascii_uppercase();
            if chars.next().is_some() || !letter.is_ascii_uppercase() {
                return fail("answer is not a single option letter");
            }
            let idx = (letter as u8 - b'A') as usize;
            if idx >= options.len() {
                return fail("answer letter out of option range");
            }
        }
        if let Some(reasoning) = &self.reasoning {
            if reasoning.trim().is_empty() {
                return fail("empty reasoning text");
            }
        }
        Ok(())
    }

    /// Question as presented to the generator: the raw question plus an
    /// options block when the entry is multiple choice.
    pub fn question_text(&self) -> String {
        match &self.options {
            None => self.question.clone(),
            Some(options) => {
                let mut out = String::with_capacity(self.question.len() + 16 * options.len());
                out.push_str(&self.question);
                out.push_str("\nOptions:");
                for (i, option) in options.iter().enumerate() {
                    out.push('\n');
                    out.push((b'A' + i as u8) as char);
                    out.push_str(". ");
                    out.push_str(option);
                }
                out
            }
        }
    }

    /// Answer-parsing format implied by the entry shape: option letter for
    /// multiple choice, free text otherwise.
    pub fn parse_format(&self) -> TemplateId {
        if self.options.is_some() {
            TemplateId::ScienceQa
        } else {
            TemplateId::ShortAnswer
        }
    }
}

/// Ordered collection of entries with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KbStore {
    entries: Vec<KbEntry>,
    by_id: HashMap<String, usize>,
}

impl KbStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, entry: KbEntry) -> Result<()> {
        entry.validate()?;
        if self.by_id.contains_key(&entry.id) {
            return Err(Error::DuplicateId { id: entry.id });
        }
        self.by_id.insert(entry.id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&KbEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut KbEntry> {
        self.by_id.get(id).map(|&i| &mut self.entries[i])
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &KbEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut KbEntry> {
        self.entries.iter_mut()
    }
}

/// Parse a JSON-lines stream into a store. Blank lines are rejected as
/// malformed; errors carry the 1-based line number.
pub fn parse_kb_jsonl<R: BufRead>(reader: R) -> Result<KbStore> {
    let mut store = KbStore::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            return Err(Error::Jsonl {
                line: line_no,
                message: "empty line".to_string(),
            });
        }
        let entry: KbEntry = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            line: line_no,
            message: e.to_string(),
        })?;
        entry.validate().map_err(|e| Error::Jsonl {
            line: line_no,
            message: e.to_string(),
        })?;
        if store.get(&entry.id).is_some() {
            return Err(Error::DuplicateId { id: entry.id });
        }
        store.insert(entry)?;
    }
    Ok(store)
}

/// Write a store as JSON lines, one entry per line, in insertion order.
pub fn save_kb_jsonl<W: Write>(store: &KbStore, mut writer: W) -> Result<()> {
    for entry in store.iter() {
        serde_json::to_writer(&mut writer, entry)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// A candidate reasoning context together with its self-consistency score.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningCandidate {
    pub entry_id: String,
    pub text: String,
    /// Fraction of probe generations that re-derived the reference answer.
    pub score: f64,
    /// Number of probe generations scored.
    pub n_eval: usize,
}

/// Knobs for reasoning-context generation.
#[derive(Debug, Clone)]
pub struct ReasoningConfig {
    /// Candidate reasoning contexts generated per entry.
    pub n_candidates: usize,
    /// Probe generations scored per candidate.
    pub n_predictions: usize,
    pub max_tokens: usize,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        Self {
            n_candidates: 10,
            n_predictions: 10,
            max_tokens: 512,
        }
    }
}

/// Score one candidate reasoning context: regenerate the answer from
/// (question + candidate) under seeds `1..=n_predictions` and return the
/// fraction that matches the reference answer. Backend failures and
/// unparsable outputs count as misses, so the result is always `k/n`.
pub fn score_candidate(
    entry: &KbEntry,
    candidate_text: &str,
    backend: &dyn GeneratorBackend,
    cfg: &ReasoningConfig,
) -> f64 {
    let format = entry.parse_format();
    let question = entry.question_text();
    let mut correct = 0usize;
    for seed in 1..=cfg.n_predictions as u64 {
        let bundle = reasoning_probe_prompt(&question, entry.image_ref.as_deref(), candidate_text);
        let req = GenRequest {
            bundle,
            seed,
            temperature: 0.7,
            max_tokens: cfg.max_tokens,
        };
        let Ok(raw) = backend.generate(&req) else {
            continue;
        };
        let parsed = parse_answer(&raw, format);
        correct += rule_evaluate(&parsed, &entry.answer) as usize;
    }
    correct as f64 / cfg.n_predictions as f64
}

/// Generate `n_candidates` reasoning contexts under seeds `1..=n_candidates`,
/// score each, and write the best into `entry.reasoning`.
///
/// Ties break toward the shorter text, then the lower candidate seed, so the
/// outcome is deterministic with a deterministic backend.
pub fn build_reasoning_context(
    entry: &mut KbEntry,
    backend: &dyn GeneratorBackend,
    cfg: &ReasoningConfig,
) -> Result<ReasoningCandidate> {
    let question = entry.question_text();
    let mut candidates: Vec<ReasoningCandidate> = Vec::new();
    for seed in 1..=cfg.n_candidates as u64 {
        let bundle =
            reasoning_generation_prompt(&question, entry.image_ref.as_deref(), &entry.answer);
        let req = GenRequest {
            bundle,
            seed,
            temperature: 0.7,
            max_tokens: cfg.max_tokens,
        };
        let Ok(text) = backend.generate(&req) else {
            continue;
        };
        if text.trim().is_empty() {
            continue;
        }
        let score = score_candidate(entry, &text, backend, cfg);
        candidates.push(ReasoningCandidate {
            entry_id: entry.id.clone(),
            text,
            score,
            n_eval: cfg.n_predictions,
        });
    }
    if candidates.is_empty() {
        return Err(Error::NoCandidates {
            id: entry.id.clone(),
        });
    }
    let best = candidates
        .into_iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.score
                .partial_cmp(&b.score)
                .unwrap()
                .then(b.text.len().cmp(&a.text.len()))
                .then(ib.cmp(ia))
        })
        .map(|(_, c)| c)
        .unwrap();
    entry.reasoning = Some(best.text.clone());
    Ok(best)
}
