//! Multiple-choice dataset construction from labeled relation statements.
//!
//! Each `(statement, gold relation)` record becomes a six-option question:
//! the gold relation plus five distractors drawn without replacement from the
//! rest of the vocabulary, shuffled under the record's derived seed.

use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KbEntry;
use crate::seeding::{mix64, stable_hash64};

pub const OPTIONS_PER_QUESTION: usize = 6;

/// Marker substituted for the gold relation inside the statement.
pub const MASK_TOKEN: &str = "[MASK]";

/// One labeled source record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McqSource {
    pub id: Option<String>,
    pub image: Option<String>,
    pub statement: String,
    pub relation: String,
}

/// Parse source records from JSON lines.
pub fn parse_mcq_sources<R: BufRead>(reader: R) -> Result<Vec<McqSource>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: McqSource = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn masked_statement(statement: &str, relation: &str) -> String {
    match statement.find(relation) {
        Some(pos) => {
            let mut masked = String::with_capacity(statement.len());
            masked.push_str(&statement[..pos]);
            masked.push_str(MASK_TOKEN);
            masked.push_str(&statement[pos + relation.len()..]);
            masked
        }
        None => statement.to_string(),
    }
}

/// Build the multiple-choice variant of a labeled set.
///
/// The gold relation must belong to the vocabulary; distractors are sampled
/// uniformly without replacement from the remaining relations. Option order
/// and distractor choice derive from `(seed, record index)`, so rebuilds are
/// reproducible.
pub fn build_multiple_choice_variant(
    records: &[McqSource],
    vocabulary: &[String],
    seed: u64,
) -> Result<Vec<KbEntry>> {
    if vocabulary.len() < OPTIONS_PER_QUESTION {
        return Err(Error::VocabularyTooSmall {
            size: vocabulary.len(),
            need: OPTIONS_PER_QUESTION,
        });
    }
    let mut entries = Vec::with_capacity(records.len());
    for (idx, record) in records.iter().enumerate() {
        if !vocabulary.contains(&record.relation) {
            return Err(Error::Config(format!(
                "record {idx}: relation {:?} not in the vocabulary",
                record.relation
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(
            seed ^ mix64(idx as u64) ^ stable_hash64(&record.relation),
        ));
        let mut pool: Vec<&String> = vocabulary.iter().filter(|r| **r != record.relation).collect();
        pool.shuffle(&mut rng);
        let mut options: Vec<String> = pool
            .into_iter()
            .take(OPTIONS_PER_QUESTION - 1)
            .cloned()
            .collect();
        options.push(record.relation.clone());
        options.shuffle(&mut rng);
        let gold_index = options.iter().position(|o| *o == record.relation).unwrap();
        let answer = ((b'A' + gold_index as u8) as char).to_string();
        let id = record
            .id
            .clone()
            .unwrap_or_else(|| format!("mcq-{idx:05}"));
        let entry = KbEntry {
            image_ref: record.image.clone(),
            options: Some(options),
            ..KbEntry::new(id, masked_statement(&record.statement, &record.relation), answer)
        };
        entry.validate()?;
        entries.push(entry);
    }
    Ok(entries)
}
