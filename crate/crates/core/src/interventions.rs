//! State controls: read sanitizer, write gate, memory rewrite, memory gate and
//! the output-filter baseline, composed into a fixed per-node pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{update_memory, MemoryState, Summarizer};
use crate::policy::{ChatClient, ContextEntry, DecodingParams, GenerationRequest};
use crate::scoring::{is_flagged, Lexicon, ToxicityScorer, NEUTRAL_FILLER, PLACEHOLDER};

pub const REWRITE_PROMPT: &str = "Rewrite the following message to remove hostile or toxic language while preserving its informational content.";

pub const DEFAULT_TAU: f64 = 0.5;

/// Preset names in declaration order.
pub const PRESETS: [&str; 9] = [
    "no_intervention",
    "output_filter",
    "dpo_only",
    "transcript_only",
    "memory_only",
    "transcript_memory",
    "transcript_dpo",
    "memory_dpo",
    "full_system",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    #[default]
    None,
    Redact,
    Rewrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    #[default]
    None,
    Rewrite,
    Gate,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionPolicy {
    #[serde(default)]
    pub read_mode: GateMode,
    #[serde(default)]
    pub write_mode: GateMode,
    #[serde(default)]
    pub memory_mode: MemoryMode,
    #[serde(default)]
    pub output_filter: bool,
    /// Selects the fine-tuned remote model. No effect on state logic.
    #[serde(default)]
    pub dpo: bool,
    #[serde(default = "default_tau")]
    pub tau_read: f64,
    #[serde(default = "default_tau")]
    pub tau_write: f64,
    #[serde(default = "default_tau")]
    pub tau_mem: f64,
    #[serde(default = "default_tau")]
    pub tau_out: f64,
}

impl Default for InterventionPolicy {
    fn default() -> Self {
        Self {
            read_mode: GateMode::None,
            write_mode: GateMode::None,
            memory_mode: MemoryMode::None,
            output_filter: false,
            dpo: false,
            tau_read: DEFAULT_TAU,
            tau_write: DEFAULT_TAU,
            tau_mem: DEFAULT_TAU,
            tau_out: DEFAULT_TAU,
        }
    }
}

impl InterventionPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let p = match name {
            "no_intervention" => base,
            "output_filter" => Self {
                output_filter: true,
                ..base
            },
            "dpo_only" => Self { dpo: true, ..base },
            "transcript_only" => Self {
                write_mode: GateMode::Rewrite,
                ..base
            },
            "memory_only" => Self {
                memory_mode: MemoryMode::Rewrite,
                ..base
            },
            "transcript_memory" => Self {
                write_mode: GateMode::Rewrite,
                memory_mode: MemoryMode::Rewrite,
                ..base
            },
            "transcript_dpo" => Self {
                write_mode: GateMode::Rewrite,
                dpo: true,
                ..base
            },
            "memory_dpo" => Self {
                memory_mode: MemoryMode::Rewrite,
                dpo: true,
                ..base
            },
            "full_system" => Self {
                read_mode: GateMode::Rewrite,
                write_mode: GateMode::Rewrite,
                memory_mode: MemoryMode::Rewrite,
                dpo: true,
                ..base
            },
            other => {
                return Err(Error::config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(p)
    }

    /// Sets every threshold to `tau`.
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau_read = tau;
        self.tau_write = tau;
        self.tau_mem = tau;
        self.tau_out = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, t) in [
            ("tau_read", self.tau_read),
            ("tau_write", self.tau_write),
            ("tau_mem", self.tau_mem),
            ("tau_out", self.tau_out),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                errs.push(format!("{name} must lie in (0, 1], got {t}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn needs_rewriter(&self) -> bool {
        self.read_mode == GateMode::Rewrite
            || self.write_mode == GateMode::Rewrite
            || self.memory_mode == MemoryMode::Rewrite
    }
}

pub trait Rewriter: Send + Sync {
    fn rewrite(&self, text: &str) -> Result<String>;
}

impl<R: Rewriter + ?Sized> Rewriter for std::sync::Arc<R> {
    fn rewrite(&self, text: &str) -> Result<String> {
        (**self).rewrite(text)
    }
}

/// Replaces toxic lexicon words with the neutral filler. Conflict markers are
/// left in place.
#[derive(Debug, Clone, Default)]
pub struct ScriptedRewriter {
    lexicon: Lexicon,
}

impl ScriptedRewriter {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }
}

impl Rewriter for ScriptedRewriter {
    fn rewrite(&self, text: &str) -> Result<String> {
        // Line structure is kept so rewritten summaries stay one gist per line.
        Ok(text
            .lines()
            .map(|line| {
                line.split_whitespace()
                    .map(|w| {
                        if self.lexicon.matches_word(w) {
                            NEUTRAL_FILLER
                        } else {
                            w
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteRewriter {
    client: ChatClient,
    prompt: String,
    decoding: DecodingParams,
}

impl RemoteRewriter {
    pub fn new(client: ChatClient, prompt: Option<String>) -> Self {
        Self {
            client,
            prompt: prompt.unwrap_or_else(|| REWRITE_PROMPT.to_string()),
            decoding: DecodingParams::default(),
        }
    }
}

impl Rewriter for RemoteRewriter {
    fn rewrite(&self, text: &str) -> Result<String> {
        self.client.complete(&self.prompt, text, &self.decoding)
    }
}

/// Applies a redact/rewrite gate to one text. Returns the (possibly replaced)
/// text and whether the gate fired.
fn apply_gate(
    text: &str,
    scorer: &dyn ToxicityScorer,
    tau: f64,
    mode: GateMode,
    rewriter: Option<&dyn Rewriter>,
) -> Result<(String, bool)> {
    if mode == GateMode::None {
        return Ok((text.to_string(), false));
    }
    let score = scorer.score(text)?;
    if !is_flagged(score, tau) {
        return Ok((text.to_string(), false));
    }
    let out = match mode {
        GateMode::Redact => PLACEHOLDER.to_string(),
        GateMode::Rewrite => rewriter
            .ok_or_else(|| Error::config("rewrite mode requires a rewriter"))?
            .rewrite(text)?,
        GateMode::None => unreachable!(),
    };
    Ok((out, true))
}

/// Read-side sanitizer over conditioning texts. Output length equals input
/// length.
pub fn sanitize_read(
    texts: &[String],
    scorer: &dyn ToxicityScorer,
    tau: f64,
    mode: GateMode,
    rewriter: Option<&dyn Rewriter>,
) -> Result<Vec<String>> {
    texts
        .iter()
        .enumerate()
        .map(|(index, t)| {
            apply_gate(t, scorer, tau, mode, rewriter)
                .map(|(s, _)| s)
                .map_err(|e| Error::Intervention {
                    index,
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Write-side gate deciding what enters transcript and memory.
pub fn gate_write(
    msg: &str,
    scorer: &dyn ToxicityScorer,
    tau: f64,
    mode: GateMode,
    rewriter: Option<&dyn Rewriter>,
) -> Result<String> {
    apply_gate(msg, scorer, tau, mode, rewriter)
        .map(|(s, _)| s)
        .map_err(|e| Error::Intervention {
            index: 0,
            message: e.to_string(),
        })
}

pub fn output_filter(msg: &str, scorer: &dyn ToxicityScorer, tau: f64) -> Result<String> {
    apply_gate(msg, scorer, tau, GateMode::Redact, None).map(|(s, _)| s)
}

/// Rewrites a completed summary iff it is flagged; otherwise returns it as is.
pub fn rewrite_memory(
    m: &MemoryState,
    scorer: &dyn ToxicityScorer,
    tau: f64,
    rewriter: &dyn Rewriter,
) -> Result<MemoryState> {
    if !is_flagged(m.tox, tau) {
        return Ok(m.clone());
    }
    let summary = rewriter
        .rewrite(&m.summary)
        .map_err(|e| Error::Intervention {
            index: 0,
            message: format!("memory rewrite at turn {}: {e}", m.turn),
        })?;
    let tox = scorer.score(&summary)?;
    Ok(MemoryState {
        summary,
        tox,
        ..m.clone()
    })
}

/// Blocks flagged messages from entering the summary; the turn counter is not
/// advanced on a block.
pub fn gate_memory_update(
    m: &MemoryState,
    msg: &str,
    node_id: &str,
    scorer: &dyn ToxicityScorer,
    tau: f64,
    summarizer: &dyn Summarizer,
) -> Result<MemoryState> {
    if is_flagged(scorer.score(msg)?, tau) {
        return Ok(m.clone());
    }
    update_memory(summarizer, m, msg, node_id, scorer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ReadSanitize,
    Generate,
    OutputFilter,
    WriteGate,
    Append,
    MemoryGate,
    MemoryUpdate,
    MemoryRewrite,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::ReadSanitize => "read_sanitize",
            Stage::Generate => "generate",
            Stage::OutputFilter => "output_filter",
            Stage::WriteGate => "write_gate",
            Stage::Append => "append",
            Stage::MemoryGate => "memory_gate",
            Stage::MemoryUpdate => "memory_update",
            Stage::MemoryRewrite => "memory_rewrite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub node: String,
    pub stage: Stage,
    pub triggered: bool,
    /// Score of the stage's output text, when one was computed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tox: Option<f64>,
}

impl StageRecord {
    fn new(node: &str, stage: Stage, triggered: bool, tox: Option<f64>) -> Self {
        Self {
            node: node.to_string(),
            stage,
            triggered,
            tox,
        }
    }
}

/// Inputs to one node's pipeline step.
#[derive(Debug, Clone)]
pub struct StepInput<'a> {
    pub node_id: &'a str,
    pub role_prompt: String,
    pub decoding: DecodingParams,
    /// Raw conditioning set `C(v)` built from stored transcript texts.
    pub conditioning: Vec<ContextEntry>,
    /// Memory the node conditions on, if memory is presented.
    pub presented_memory: Option<&'a MemoryState>,
    /// Memory stream that receives this node's stored text.
    pub memory: Option<MemoryState>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub emitted: String,
    pub emitted_tox: f64,
    pub stored: String,
    pub stored_tox: f64,
    pub memory: Option<MemoryState>,
    pub request: GenerationRequest,
}

/// Backends a pipeline needs besides the generator.
pub struct Pipeline<'a> {
    pub policy: &'a InterventionPolicy,
    pub scorer: &'a dyn ToxicityScorer,
    pub rewriter: Option<&'a dyn Rewriter>,
    pub summarizer: Option<&'a dyn Summarizer>,
}

impl Pipeline<'_> {
    fn staged<T>(&self, stage: Stage, node: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| e.at_stage(stage.name(), node))
    }

    /// Runs read sanitization, generation, output filter, write gate, append
    /// and the memory stages in that order.
    pub fn step(
        &self,
        input: StepInput<'_>,
        generate: impl FnOnce(&GenerationRequest) -> Result<String>,
        log: &mut Vec<StageRecord>,
    ) -> Result<StepOutput> {
        let p = self.policy;
        let node = input.node_id;

        let mut conditioning = input.conditioning;
        let mut memory_summary = input.presented_memory.map(|m| m.summary.clone());
        if p.read_mode != GateMode::None {
            let mut texts: Vec<String> = conditioning.iter().map(|c| c.text.clone()).collect();
            if let Some(s) = &memory_summary {
                texts.push(s.clone());
            }
            let cleaned = self.staged(
                Stage::ReadSanitize,
                node,
                sanitize_read(&texts, self.scorer, p.tau_read, p.read_mode, self.rewriter),
            )?;
            let triggered = cleaned != texts;
            let mut it = cleaned.into_iter();
            for c in conditioning.iter_mut() {
                c.text = it.next().unwrap_or_default();
            }
            if memory_summary.is_some() {
                memory_summary = it.next();
            }
            log.push(StageRecord::new(node, Stage::ReadSanitize, triggered, None));
        }

        let request = GenerationRequest {
            role_prompt: input.role_prompt,
            conditioning,
            memory_summary,
            decoding: input.decoding,
        };
        let raw = self.staged(Stage::Generate, node, generate(&request))?;
        let raw_tox = self.staged(Stage::Generate, node, self.scorer.score(&raw))?;
        log.push(StageRecord::new(
            node,
            Stage::Generate,
            false,
            Some(raw_tox),
        ));

        let (emitted, emitted_tox) = if p.output_filter {
            let (out, fired) = self.staged(
                Stage::OutputFilter,
                node,
                apply_gate(&raw, self.scorer, p.tau_out, GateMode::Redact, None),
            )?;
            let tox = if fired {
                self.staged(Stage::OutputFilter, node, self.scorer.score(&out))?
            } else {
                raw_tox
            };
            log.push(StageRecord::new(
                node,
                Stage::OutputFilter,
                fired,
                Some(tox),
            ));
            (out, tox)
        } else {
            (raw, raw_tox)
        };

        let (stored, stored_tox) = if p.write_mode != GateMode::None {
            let (out, fired) = self.staged(
                Stage::WriteGate,
                node,
                apply_gate(
                    &emitted,
                    self.scorer,
                    p.tau_write,
                    p.write_mode,
                    self.rewriter,
                ),
            )?;
            let tox = if fired {
                self.staged(Stage::WriteGate, node, self.scorer.score(&out))?
            } else {
                emitted_tox
            };
            log.push(StageRecord::new(node, Stage::WriteGate, fired, Some(tox)));
            (out, tox)
        } else {
            (emitted.clone(), emitted_tox)
        };
        log.push(StageRecord::new(
            node,
            Stage::Append,
            false,
            Some(stored_tox),
        ));

        let memory = match input.memory {
            Some(m) => Some(self.ingest(&m, &stored, stored_tox, node, log)?),
            None => None,
        };

        Ok(StepOutput {
            emitted,
            emitted_tox,
            stored,
            stored_tox,
            memory,
            request,
        })
    }

    /// Memory stages for one stored text: gate or update, then rewrite.
    pub fn ingest(
        &self,
        m: &MemoryState,
        stored: &str,
        stored_tox: f64,
        node: &str,
        log: &mut Vec<StageRecord>,
    ) -> Result<MemoryState> {
        let p = self.policy;
        let summarizer = self
            .summarizer
            .ok_or_else(|| Error::config("memory is enabled but no summarizer is configured"))?;
        let next = if p.memory_mode == MemoryMode::Gate && is_flagged(stored_tox, p.tau_mem) {
            log.push(StageRecord::new(node, Stage::MemoryGate, true, Some(m.tox)));
            m.clone()
        } else {
            if p.memory_mode == MemoryMode::Gate {
                log.push(StageRecord::new(node, Stage::MemoryGate, false, None));
            }
            let next = self.staged(
                Stage::MemoryUpdate,
                node,
                update_memory(summarizer, m, stored, node, self.scorer),
            )?;
            log.push(StageRecord::new(
                node,
                Stage::MemoryUpdate,
                false,
                Some(next.tox),
            ));
            next
        };
        if p.memory_mode == MemoryMode::Rewrite {
            let rewriter = self
                .rewriter
                .ok_or_else(|| Error::config("memory rewrite requires a rewriter"))?;
            let out = self.staged(
                Stage::MemoryRewrite,
                node,
                rewrite_memory(&next, self.scorer, p.tau_mem, rewriter),
            )?;
            log.push(StageRecord::new(
                node,
                Stage::MemoryRewrite,
                out != next,
                Some(out.tox),
            ));
            return Ok(out);
        }
        Ok(next)
    }
}
