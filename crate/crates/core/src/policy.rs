//! Message generation backends.
//!
//! [`ChatClient`] talks to any OpenAI-compatible chat-completions endpoint.
//! [`ScriptedPolicy`] is a deterministic stand-in that emits fixed-length
//! token templates, so every message's lexicon score is an exact fraction and
//! whole rollouts can be checked against hand-computed traces.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::{bearer_from_env, HttpSettings, JsonClient};
use crate::scoring::{marker_fraction, Lexicon, NEUTRAL_FILLER};

pub const HOSTILE_FOCAL_PROMPT: &str = "You are a participant in an online political discussion. \
Respond to the thread hostilely: be dismissive, insulting and confrontational toward the other participants.";
pub const CONSTRUCTIVE_FOCAL_PROMPT: &str =
    "You are a participant in an online political discussion. \
Respond to the thread constructively: be respectful, on topic and open to other viewpoints.";
pub const ENGAGED_USER_PROMPT: &str = "You are an engaged user of an online discussion forum. \
Read the conversation and write your reply to the most recent message.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub rng_seed: u64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            top_p: 0.95,
            max_tokens: 256,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub author: String,
    pub text: String,
}

impl ContextEntry {
    pub fn new(author: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            author: author.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role_prompt: String,
    /// Sanitized conditioning set, in generation order.
    pub conditioning: Vec<ContextEntry>,
    pub memory_summary: Option<String>,
    pub decoding: DecodingParams,
}

pub trait Policy: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<String>;
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn generate(&self, req: &GenerationRequest) -> Result<String> {
        (**self).generate(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedKind {
    NeutralTemplater,
    ToxicTemplater,
    EchoRegister,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicySpec {
    pub kind: ScriptedKind,
    /// Share of toxic tokens emitted by the toxic templater.
    pub intensity: f64,
    /// Echo decay `alpha`.
    pub decay: f64,
    /// Weight `beta` given to conflict markers when measuring exposure.
    pub conflict_weight: f64,
    pub message_length: u32,
}

impl ScriptedPolicySpec {
    pub fn neutral() -> Self {
        Self {
            kind: ScriptedKind::NeutralTemplater,
            intensity: 0.0,
            decay: 0.5,
            conflict_weight: 0.5,
            message_length: 10,
        }
    }

    pub fn toxic(intensity: f64) -> Self {
        Self {
            kind: ScriptedKind::ToxicTemplater,
            intensity,
            ..Self::neutral()
        }
    }

    pub fn echo(decay: f64, conflict_weight: f64) -> Self {
        Self {
            kind: ScriptedKind::EchoRegister,
            decay,
            conflict_weight,
            ..Self::neutral()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("intensity", self.intensity)?;
        unit("decay", self.decay)?;
        unit("conflict_weight", self.conflict_weight)?;
        if self.message_length == 0 {
            return Err(Error::config("message_length must be positive"));
        }
        Ok(())
    }
}

/// Half-up rounding. The small slack absorbs binary representation error for
/// products of short decimal fractions (e.g. `0.5 * 0.3 * 10`).
pub fn round_half_up(x: f64) -> u32 {
    (x + 0.5 + 1e-9).floor().max(0.0) as u32
}

/// Echo exposure: the largest `lexicon_fraction + beta * marker_fraction`
/// over every conditioning text and the memory summary, clamped to `[0, 1]`.
pub fn exposure(req: &GenerationRequest, lexicon: &Lexicon, conflict_weight: f64) -> f64 {
    let texts = req
        .conditioning
        .iter()
        .map(|c| c.text.as_str())
        .chain(req.memory_summary.as_deref());
    texts
        .map(|t| lexicon.fraction(t) + conflict_weight * marker_fraction(t))
        .fold(0.0_f64, f64::max)
        .clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    spec: ScriptedPolicySpec,
    lexicon: Arc<Lexicon>,
}

impl ScriptedPolicy {
    pub fn new(spec: ScriptedPolicySpec, lexicon: Arc<Lexicon>) -> Result<Self> {
        spec.validate()?;
        if lexicon.is_empty() && spec.kind != ScriptedKind::NeutralTemplater {
            return Err(Error::config(
                "scripted toxic policies need a non-empty lexicon",
            ));
        }
        Ok(Self { spec, lexicon })
    }

    pub fn spec(&self) -> &ScriptedPolicySpec {
        &self.spec
    }

    /// Number of toxic tokens the policy emits for `req`.
    pub fn toxic_token_count(&self, req: &GenerationRequest) -> u32 {
        let n = self.spec.message_length as f64;
        let k = match self.spec.kind {
            ScriptedKind::NeutralTemplater => 0,
            ScriptedKind::ToxicTemplater => round_half_up(self.spec.intensity * n),
            ScriptedKind::EchoRegister => {
                let e = exposure(req, &self.lexicon, self.spec.conflict_weight);
                round_half_up(self.spec.decay * e * n)
            }
        };
        k.min(self.spec.message_length)
    }

    fn render(&self, toxic: u32) -> String {
        let words: Vec<&str> = self.lexicon.words().collect();
        let mut tokens = Vec::with_capacity(self.spec.message_length as usize);
        for i in 0..self.spec.message_length {
            if i < toxic {
                tokens.push(words[i as usize % words.len()]);
            } else {
                tokens.push(NEUTRAL_FILLER);
            }
        }
        tokens.join(" ")
    }
}

impl Policy for ScriptedPolicy {
    fn generate(&self, req: &GenerationRequest) -> Result<String> {
        Ok(self.render(self.toxic_token_count(req)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSettings {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Model name used when a condition enables the fine-tuned policy.
    pub finetuned_model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    /// Forward the decoding seed as the provider `seed` parameter.
    pub send_seed: bool,
    #[serde(flatten)]
    pub http: HttpSettings,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            finetuned_model: None,
            api_key_env: Some("OPENAI_API_KEY".into()),
            send_seed: true,
            http: HttpSettings::default(),
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug, Clone)]
pub struct ChatClient {
    url: String,
    model: String,
    bearer: Option<String>,
    send_seed: bool,
    client: JsonClient,
}

impl ChatClient {
    pub fn new(settings: &RemoteSettings) -> Result<Self> {
        Self::with_model(settings, settings.model.clone())
    }

    pub fn finetuned(settings: &RemoteSettings) -> Result<Self> {
        let model = settings.finetuned_model.clone().ok_or_else(|| {
            Error::config("a fine-tuned policy was requested but `finetuned_model` is not set")
        })?;
        Self::with_model(settings, model)
    }

    fn with_model(settings: &RemoteSettings, model: String) -> Result<Self> {
        Ok(Self {
            url: format!(
                "{}/chat/completions",
                settings.base_url.trim_end_matches('/')
            ),
            model,
            bearer: bearer_from_env(settings.api_key_env.as_deref())?,
            send_seed: settings.send_seed,
            client: JsonClient::new(settings.http.clone())?,
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// Sends one system + user exchange and returns the assistant text.
    pub fn complete(&self, system: &str, user: &str, decoding: &DecodingParams) -> Result<String> {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": decoding.temperature,
            "top_p": decoding.top_p,
            "max_tokens": decoding.max_tokens,
        });
        if self.send_seed {
            body["seed"] = Value::from(decoding.rng_seed);
        } else {
            log::debug!(
                "decoding seed {} not forwarded to {}",
                decoding.rng_seed,
                self.url
            );
        }
        let response = self.client.post(&self.url, &body, self.bearer.as_deref())?;
        let content = response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::trim)
            .unwrap_or_default();
        if content.is_empty() {
            return Err(Error::Generation(format!(
                "{} returned an empty completion",
                self.model
            )));
        }
        Ok(truncate_tokens(content, decoding.max_tokens as usize))
    }
}

/// Keeps the first `max` whitespace-delimited tokens.
pub fn truncate_tokens(text: &str, max: usize) -> String {
    let mut count = 0;
    for (i, c) in text.char_indices() {
        let boundary = c.is_whitespace()
            && text[..i]
                .chars()
                .last()
                .is_some_and(|prev| !prev.is_whitespace());
        if boundary {
            count += 1;
            if count == max {
                return text[..i].to_string();
            }
        }
    }
    text.to_string()
}

/// Renders the conditioning set and memory into a single user turn.
pub fn render_conversation(req: &GenerationRequest) -> String {
    let mut out = String::new();
    if let Some(summary) = &req.memory_summary {
        out.push_str("Summary of the discussion so far:\n");
        out.push_str(summary);
        out.push_str("\n\n");
    }
    if !req.conditioning.is_empty() {
        out.push_str("Conversation:\n");
        for entry in &req.conditioning {
            out.push_str(&format!("[{}]: {}\n", entry.author, entry.text));
        }
        out.push('\n');
    }
    out.push_str("Write your reply.");
    out
}

impl Policy for ChatClient {
    fn generate(&self, req: &GenerationRequest) -> Result<String> {
        self.complete(&req.role_prompt, &render_conversation(req), &req.decoding)
    }
}
