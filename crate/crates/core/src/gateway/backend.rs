//! Generation backends: a deterministic scripted mock and an HTTP client for
//! chat-completions endpoints.

use std::io::BufRead;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::gateway::GenRequest;

/// Anything that can turn a generation request into raw text.
///
/// Backends must accept concurrent callers and hold no per-call state:
/// responses depend only on request content and seed.
pub trait GeneratorBackend {
    fn generate(&self, req: &GenRequest) -> Result<String>;
}

// --- scripted mock ---

#[derive(Debug, Clone, Default, Deserialize)]
struct MatchSpec {
    #[serde(default)]
    contains: Vec<String>,
}

/// One scripted rule, loaded from a JSON-lines file. Either a `response` or a
/// `responses_by_seed` table guarded by a `match`, or a bare `fallback`.
#[derive(Debug, Clone, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    matcher: Option<MatchSpec>,
    response: Option<String>,
    responses_by_seed: Option<serde_json::Map<String, serde_json::Value>>,
    fallback: Option<String>,
}

impl MockRule {
    fn validate(&self, line: usize) -> Result<()> {
        let scripted = self.response.is_some() || self.responses_by_seed.is_some();
        match (&self.fallback, scripted) {
            (Some(_), true) => Err(Error::MockRule {
                line,
                message: "fallback rules cannot also carry a response".into(),
            }),
            (None, false) => Err(Error::MockRule {
                line,
                message: "rule needs a response, responses_by_seed, or fallback".into(),
            }),
            _ => Ok(()),
        }
    }
}

/// Deterministic scripted backend. Rules are checked in file order against
/// the flattened request text; the first match wins. A matching
/// `responses_by_seed` rule without the request's seed is skipped.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    fallback: Option<String>,
}

impl MockBackend {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: MockRule = serde_json::from_str(&line).map_err(|e| Error::MockRule {
                line: i + 1,
                message: e.to_string(),
            })?;
            rule.validate(i + 1)?;
            rules.push(rule);
        }
        Ok(Self::from_rules(rules))
    }

    pub fn from_rules(rules: Vec<MockRule>) -> Self {
        let fallback = rules.iter().rev().find_map(|r| r.fallback.clone());
        Self { rules, fallback }
    }

    /// Build from in-memory JSON rule values; handy in tests.
    pub fn from_json_rules(values: &[serde_json::Value]) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, v) in values.iter().enumerate() {
            let rule: MockRule = serde_json::from_value(v.clone()).map_err(|e| Error::MockRule {
                line: i + 1,
                message: e.to_string(),
            })?;
            rule.validate(i + 1)?;
            rules.push(rule);
        }
        Ok(Self::from_rules(rules))
    }
}

impl GeneratorBackend for MockBackend {
    fn generate(&self, req: &GenRequest) -> Result<String> {
        let text = req.bundle.flat_text();
        for rule in &self.rules {
            if rule.fallback.is_some() {
                continue;
            }
            let matcher = rule.matcher.clone().unwrap_or_default();
            if !matcher.contains.iter().all(|needle| text.contains(needle)) {
                continue;
            }
            if let Some(resp) = &rule.response {
                return Ok(resp.clone());
            }
            if let Some(by_seed) = &rule.responses_by_seed {
                if let Some(v) = by_seed.get(&req.seed.to_string()) {
                    if let Some(s) = v.as_str() {
                        return Ok(s.to_string());
                    }
                }
                // matched but the seed is unscripted: keep scanning
            }
        }
        self.fallback.clone().ok_or(Error::MockNoMatch)
    }
}

// --- HTTP chat-completions backend ---

/// Environment variable read for the bearer token.
pub const API_KEY_ENV: &str = "RCTS_API_KEY";

const MAX_ATTEMPTS: u32 = 3;
const BACKOFF_BASE_MS: u64 = 200;

/// Client for `POST {endpoint}/chat/completions`. Transient failures retry
/// with exponential backoff before surfacing an error; callers downgrade hard
/// failures to zero-reward verdicts rather than aborting a search.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            client,
        })
    }

    fn body(&self, req: &GenRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(req.bundle.turns.len() + 1);
        messages.push(json!({
            "role": "system",
            "content": [{"type": "text", "text": req.bundle.system}],
        }));
        for turn in &req.bundle.turns {
            let mut content = vec![json!({"type": "text", "text": turn.text})];
            for image in &turn.image_refs {
                content.push(json!({"type": "image_url", "image_url": {"url": image}}));
            }
            messages.push(json!({"role": turn.role.as_str(), "content": content}));
        }
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
            "seed": req.seed,
            "max_tokens": req.max_tokens,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String> {
        let mut request = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .json(body);
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Error::Backend(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(Error::Backend(format!("HTTP {status}: {text}")));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| Error::Backend(format!("bad response body: {e}")))?;
        let content = &value["choices"][0]["message"]["content"];
        if let Some(s) = content.as_str() {
            return Ok(s.to_string());
        }
        // some servers return content as an array of typed parts
        if let Some(parts) = content.as_array() {
            let text: String = parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join("");
            if !text.is_empty() {
                return Ok(text);
            }
        }
        Err(Error::Backend("response has no message content".into()))
    }
}

impl GeneratorBackend for HttpBackend {
    fn generate(&self, req: &GenRequest) -> Result<String> {
        let body = self.body(req);
        let mut last_err = Error::Backend("no attempts made".into());
        for attempt in 0..MAX_ATTEMPTS {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last_err = e,
            }
            if attempt + 1 < MAX_ATTEMPTS {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << attempt));
            }
        }
        Err(last_err)
    }
}
