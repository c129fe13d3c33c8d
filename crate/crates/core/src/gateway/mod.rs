//! Prompt assembly, answer parsing, and generation backends.
//!
//! Prompt texts live in `templates/` as data files, so changing a prompt is a
//! data change, not a code change. Assembly is a pure function of its inputs
//! and the rendered bundles are byte-stable.

mod backend;

pub use backend::{GeneratorBackend, HttpBackend, MockBackend, MockRule};

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KbEntry;

const SCIENCEQA_SYSTEM: &str = include_str!("templates/scienceqa_system.txt");
const SCIENCEQA_SYSTEM_REASONING: &str = include_str!("templates/scienceqa_system_reasoning.txt");
const ASSISTANT_SYSTEM: &str = include_str!("templates/assistant_system.txt");
const MMMU_SUFFIX: &str = include_str!("templates/mmmu_suffix.txt");
const MMMU_SUFFIX_REASONING: &str = include_str!("templates/mmmu_suffix_reasoning.txt");
const MATHV_SUFFIX: &str = include_str!("templates/mathv_suffix.txt");
const MATHV_SUFFIX_REASONING: &str = include_str!("templates/mathv_suffix_reasoning.txt");
const REASONING_GEN_SYSTEM: &str = include_str!("templates/reasoning_gen_system.txt");
const REASONING_GEN_USER: &str = include_str!("templates/reasoning_gen_user.txt");
const REASONING_PROBE_USER: &str = include_str!("templates/reasoning_probe_user.txt");

/// Prompt/answer format family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    ScienceQa,
    Mmmu,
    MathV,
    ShortAnswer,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::ScienceQa,
        TemplateId::Mmmu,
        TemplateId::MathV,
        TemplateId::ShortAnswer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::ScienceQa => "scienceqa",
            TemplateId::Mmmu => "mmmu",
            TemplateId::MathV => "mathv",
            TemplateId::ShortAnswer => "short-answer",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scienceqa" => Ok(TemplateId::ScienceQa),
            "mmmu" => Ok(TemplateId::Mmmu),
            "mathv" => Ok(TemplateId::MathV),
            "short-answer" => Ok(TemplateId::ShortAnswer),
            other => Err(Error::UnknownTemplate {
                name: other.to_string(),
            }),
        }
    }
}

/// A user query: the question text (options already rendered in) plus an
/// optional image reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub question: String,
    pub image_ref: Option<String>,
}

impl Query {
    pub fn new(question: impl Into<String>, image_ref: Option<String>) -> Self {
        Self {
            question: question.into(),
            image_ref,
        }
    }

    pub fn from_entry(entry: &KbEntry) -> Self {
        Self {
            question: entry.question_text(),
            image_ref: entry.image_ref.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub image_refs: Vec<String>,
}

/// A fully rendered prompt: a system message plus alternating example turns,
/// ending with the user query.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system: String,
    pub turns: Vec<Turn>,
}

impl PromptBundle {
    /// Flat rendering used by the mock backend's substring matching and by
    /// request hashing. One line per element, images on their own lines.
    pub fn flat_text(&self) -> String {
        let mut out = String::new();
        out.push_str("system: ");
        out.push_str(&self.system);
        out.push('\n');
        for turn in &self.turns {
            out.push_str(turn.role.as_str());
            out.push_str(": ");
            out.push_str(&turn.text);
            out.push('\n');
            for image in &turn.image_refs {
                out.push_str("image: ");
                out.push_str(image);
                out.push('\n');
            }
        }
        out
    }
}

/// A generation request: deterministic backends must return identical text
/// for an identical `(bundle, seed)` pair.
#[derive(Debug, Clone)]
pub struct GenRequest {
    pub bundle: PromptBundle,
    pub seed: u64,
    pub temperature: f64,
    pub max_tokens: usize,
}

/// A parsed generator response. `parse_ok` holds exactly when an answer was
/// extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub raw: String,
    pub answer: Option<String>,
    pub reasoning: Option<String>,
    pub parse_ok: bool,
}

impl ParsedResponse {
    pub fn failed(raw: impl Into<String>) -> Self {
        Self {
            raw: raw.into(),
            answer: None,
            reasoning: None,
            parse_ok: false,
        }
    }
}

fn user_question(template: TemplateId, question: &str, with_reasoning: bool) -> String {
    match template {
        TemplateId::ScienceQa | TemplateId::ShortAnswer => question.to_string(),
        TemplateId::Mmmu => {
            let suffix = if with_reasoning { MMMU_SUFFIX_REASONING } else { MMMU_SUFFIX };
            format!("{question}\n\n{suffix}")
        }
        TemplateId::MathV => {
            let suffix = if with_reasoning { MATHV_SUFFIX_REASONING } else { MATHV_SUFFIX };
            format!("{question}\n\n\n{suffix}")
        }
    }
}

fn example_answer(entry: &KbEntry, template: TemplateId, with_reasoning: bool) -> String {
    let reasoning = if with_reasoning { entry.reasoning.as_deref() } else { None };
    match template {
        TemplateId::ScienceQa => match reasoning {
            Some(r) => format!(
                "**THOUGHT PROCESS:**\n\n{r}\n\n**FINAL ANSWER:**\n\nThe answer is {}.",
                entry.answer
            ),
            None => format!("The answer is {}.", entry.answer),
        },
        TemplateId::Mmmu => match reasoning {
            Some(r) => format!("The answer is {}. BECAUSE: {r}", entry.answer),
            None => format!("The answer is {}.", entry.answer),
        },
        TemplateId::MathV => match reasoning {
            Some(r) => format!("The answer is \\boxed{{{}}}. BECAUSE: {r}", entry.answer),
            None => format!("The answer is \\boxed{{{}}}.", entry.answer),
        },
        TemplateId::ShortAnswer => entry.answer.clone(),
    }
}

/// Render a K-shot prompt: the template's system text, one user/assistant
/// pair per example in the given order, then the query as the final user
/// turn. Byte-deterministic in its inputs.
pub fn assemble_prompt(
    query: &Query,
    examples: &[KbEntry],
    template: TemplateId,
    with_reasoning: bool,
) -> PromptBundle {
    let system = match (template, with_reasoning) {
        (TemplateId::ScienceQa, false) => SCIENCEQA_SYSTEM,
        (TemplateId::ScienceQa, true) => SCIENCEQA_SYSTEM_REASONING,
        _ => ASSISTANT_SYSTEM,
    };
    let mut turns = Vec::with_capacity(examples.len() * 2 + 1);
    for entry in examples {
        turns.push(Turn {
            role: Role::User,
            text: user_question(template, &entry.question_text(), with_reasoning),
            image_refs: entry.image_ref.iter().cloned().collect(),
        });
        turns.push(Turn {
            role: Role::Assistant,
            text: example_answer(entry, template, with_reasoning),
            image_refs: Vec::new(),
        });
    }
    turns.push(Turn {
        role: Role::User,
        text: user_question(template, &query.question, with_reasoning),
        image_refs: query.image_ref.iter().cloned().collect(),
    });
    PromptBundle {
        system: system.to_string(),
        turns,
    }
}

/// Prompt asking the generator to produce a reasoning context for a known
/// question/answer pair.
pub fn reasoning_generation_prompt(
    question: &str,
    image_ref: Option<&str>,
    answer: &str,
) -> PromptBundle {
    let text = REASONING_GEN_USER
        .replace("{question}", question)
        .replace("{answer}", answer);
    PromptBundle {
        system: REASONING_GEN_SYSTEM.to_string(),
        turns: vec![Turn {
            role: Role::User,
            text,
            image_refs: image_ref.iter().map(|s| s.to_string()).collect(),
        }],
    }
}

/// Prompt asking the generator to re-derive an answer from a question plus a
/// candidate reasoning context.
pub fn reasoning_probe_prompt(
    question: &str,
    image_ref: Option<&str>,
    reasoning: &str,
) -> PromptBundle {
    let text = REASONING_PROBE_USER
        .replace("{question}", question)
        .replace("{reasoning}", reasoning);
    PromptBundle {
        system: ASSISTANT_SYSTEM.to_string(),
        turns: vec![Turn {
            role: Role::User,
            text,
            image_refs: image_ref.iter().map(|s| s.to_string()).collect(),
        }],
    }
}

/// Prompt presenting the original query, a candidate response to it, and a
/// held-out reference question the generator must now answer.
pub fn mutual_probe_prompt(
    query: &Query,
    branch_response_raw: &str,
    sample: &KbEntry,
) -> PromptBundle {
    PromptBundle {
        system: ASSISTANT_SYSTEM.to_string(),
        turns: vec![
            Turn {
                role: Role::User,
                text: query.question.clone(),
                image_refs: query.image_ref.iter().cloned().collect(),
            },
            Turn {
                role: Role::Assistant,
                text: branch_response_raw.to_string(),
                image_refs: Vec::new(),
            },
            Turn {
                role: Role::User,
                text: sample.question_text(),
                image_refs: sample.image_ref.iter().cloned().collect(),
            },
        ],
    }
}

/// Canonical answer form: trimmed, internal whitespace collapsed, and single
/// letters uppercased.
pub fn canonicalize_answer(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = collapsed.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_alphabetic() => c.to_ascii_uppercase().to_string(),
        _ => collapsed,
    }
}

fn answer_regexes() -> &'static (Regex, Regex, Regex) {
    static RE: OnceLock<(Regex, Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"(?i)the answer is\b\s*\\boxed\{([^}]*)\}").unwrap(),
            Regex::new(r"(?i)the answer is\b\s*:?\s*\(?([A-Za-z])\)?([^A-Za-z0-9]|$)").unwrap(),
            Regex::new(r"\\boxed\{([^}]*)\}").unwrap(),
        )
    })
}

fn extract_reasoning(raw: &str) -> Option<String> {
    for marker in ["BECAUSE:", "THOUGHT PROCESS:"] {
        if let Some(pos) = raw.find(marker) {
            let after = raw[pos + marker.len()..]
                .trim_start_matches(['*', ' ', '\t', '\r', '\n'])
                .trim_end();
            if !after.is_empty() {
                return Some(after.to_string());
            }
        }
    }
    None
}

/// Extract the canonical answer and trailing reasoning from raw generator
/// output. Matches, in priority order: `The answer is \boxed{..}`, `The
/// answer is X` with a single option letter, `\boxed{..}` anywhere, and for
/// the short-answer format the first nonempty line. Never errors; a miss is
/// `parse_ok = false`.
pub fn parse_answer(raw: &str, format: TemplateId) -> ParsedResponse {
    let (boxed_prefixed, letter, boxed_anywhere) = answer_regexes();
    let mut answer = boxed_prefixed
        .captures(raw)
        .map(|c| c[1].to_string())
        .or_else(|| letter.captures(raw).map(|c| c[1].to_string()))
        .or_else(|| boxed_anywhere.captures(raw).map(|c| c[1].to_string()));
    if answer.is_none() && format == TemplateId::ShortAnswer {
        answer = raw.lines().next().map(|l| l.trim().to_string());
    }
    let answer = answer
        .map(|a| canonicalize_answer(&a))
        .filter(|a| !a.is_empty());
    ParsedResponse {
        raw: raw.to_string(),
        parse_ok: answer.is_some(),
        reasoning: extract_reasoning(raw),
        answer,
    }
}
