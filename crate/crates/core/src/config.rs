//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::HttpSettings;
use crate::interventions::{
    InterventionPolicy, RemoteRewriter, Rewriter, ScriptedRewriter, PRESETS,
};
use crate::memory::{RemoteSummarizer, ScriptedSummarizer, Summarizer, DEFAULT_WINDOW};
use crate::metrics::DEFAULT_TAU_GRID;
use crate::policy::{
    ChatClient, DecodingParams, Policy, RemoteSettings, ScriptedPolicy, ScriptedPolicySpec,
};
use crate::rollout::{Backends, MemoryConfig, Prompts, RolloutConfig};
use crate::scoring::{CachedScorer, Lexicon, LexiconScorer, RemoteScorer, ToxicityScorer};
use crate::topology::{ConditioningRegime, Injection, TopologyTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    #[serde(default = "lexicon_kind")]
    pub kind: String,
    /// One token per line, optional weight after whitespace.
    #[serde(default)]
    pub lexicon_path: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub http: HttpSettings,
}

fn lexicon_kind() -> String {
    "lexicon".into()
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: lexicon_kind(),
            lexicon_path: None,
            endpoint: None,
            http: HttpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "scripted_kind")]
    pub kind: BackendKind,
    /// Echo-register decay `α`.
    #[serde(default = "half")]
    pub decay: f64,
    /// Echo-register conflict-marker weight `β`.
    #[serde(default = "half")]
    pub conflict_weight: f64,
    #[serde(default = "ten")]
    pub message_length: u32,
    #[serde(default)]
    pub remote: RemoteSettings,
}

fn scripted_kind() -> BackendKind {
    BackendKind::Scripted
}
fn half() -> f64 {
    0.5
}
fn ten() -> u32 {
    10
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            decay: 0.5,
            conflict_weight: 0.5,
            message_length: 10,
            remote: RemoteSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SummarizerConfig {
    /// Defaults to the generation backend kind.
    #[serde(default)]
    pub kind: Option<BackendKind>,
    #[serde(default)]
    pub window: Option<usize>,
    /// Hard cap on summary characters.
    #[serde(default)]
    pub max_chars: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RewriterConfig {
    #[serde(default)]
    pub kind: Option<BackendKind>,
    #[serde(default)]
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    pub name: String,
    #[serde(default)]
    pub preset: Option<String>,
    /// Full policy; mutually exclusive with `preset`.
    #[serde(default)]
    pub policy: Option<InterventionPolicy>,
    /// Overrides every threshold of the chosen preset.
    #[serde(default)]
    pub tau: Option<f64>,
    pub topology: TopologyTemplate,
    #[serde(default = "full_visible")]
    pub regime: ConditioningRegime,
    #[serde(default)]
    pub memory: Option<MemoryConfig>,
    #[serde(default = "single")]
    pub injection: Injection,
    #[serde(default = "four")]
    pub n_agents: u32,
    #[serde(default = "strong")]
    pub focal_intensity: f64,
    #[serde(default = "one")]
    pub repeats: u32,
    #[serde(default)]
    pub diagnostic_identical_arms: bool,
}

fn full_visible() -> ConditioningRegime {
    ConditioningRegime::FullVisible
}
fn single() -> Injection {
    Injection::Single
}
fn four() -> u32 {
    4
}
fn strong() -> f64 {
    0.8
}
fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Condition whose topology, memory and regime are reused.
    pub base: String,
    #[serde(default = "all_presets")]
    pub presets: Vec<String>,
}

fn all_presets() -> Vec<String> {
    PRESETS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds_path: PathBuf,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "one_usize")]
    pub parallelism: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default = "half")]
    pub report_tau: f64,
    /// Seeds scoring at or above this are dropped before a run.
    #[serde(default = "half")]
    pub seed_tau: f64,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub summarizer: SummarizerConfig,
    #[serde(default)]
    pub rewriter: RewriterConfig,
    #[serde(default)]
    pub decoding: DecodingParams,
    #[serde(default)]
    pub prompts: Prompts,
    #[serde(default)]
    pub conditions: Vec<ConditionConfig>,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn one_usize() -> usize {
    1
}
fn default_grid() -> Vec<f64> {
    DEFAULT_TAU_GRID.to_vec()
}

fn unit_open(name: &str, v: f64, errs: &mut Vec<String>) {
    if !(v > 0.0 && v <= 1.0) {
        errs.push(format!("{name} must lie in (0, 1], got {v}"));
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn seeds_file(&self) -> PathBuf {
        self.resolve(&self.seeds_path)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Checks everything up front and reports every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.parallelism == 0 {
            errs.push("parallelism must be positive".into());
        }
        if self.tau_grid.is_empty() {
            errs.push("tau_grid is empty".into());
        }
        for &t in &self.tau_grid {
            unit_open("tau_grid entry", t, &mut errs);
        }
        unit_open("report_tau", self.report_tau, &mut errs);
        unit_open("seed_tau", self.seed_tau, &mut errs);
        if !self.seeds_file().is_file() {
            errs.push(format!(
                "seeds file {} does not exist",
                self.seeds_file().display()
            ));
        }
        match self.scorer.kind.as_str() {
            "lexicon" => {
                if let Some(p) = &self.scorer.lexicon_path {
                    if !self.resolve(p).is_file() {
                        errs.push(format!(
                            "lexicon file {} does not exist",
                            self.resolve(p).display()
                        ));
                    }
                }
            }
            "remote" => {
                if self.scorer.endpoint.is_none() {
                    errs.push("remote scorer needs `endpoint`".into());
                }
            }
            other => errs.push(format!("unknown scorer kind `{other}`")),
        }
        for (name, v) in [
            ("backend.decay", self.backend.decay),
            ("backend.conflict_weight", self.backend.conflict_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.backend.message_length == 0 {
            errs.push("backend.message_length must be positive".into());
        }
        if self.conditions.is_empty() && self.ablation.is_none() {
            errs.push("no conditions defined".into());
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.conditions {
            if !seen.insert(c.name.as_str()) {
                errs.push(format!("duplicate condition name `{}`", c.name));
            }
            if c.name.is_empty() || c.name.contains(['/', '\\']) {
                errs.push(format!(
                    "condition name `{}` is not a valid file stem",
                    c.name
                ));
            }
            match self.rollout_config(c) {
                Ok(rc) => {
                    if let Err(Error::Config(e)) = rc.validate() {
                        errs.extend(
                            e.into_iter()
                                .map(|m| format!("condition `{}`: {m}", c.name)),
                        );
                    }
                    if rc.policy.dpo
                        && self.backend.kind == BackendKind::Remote
                        && self.backend.remote.finetuned_model.is_none()
                    {
                        errs.push(format!(
                            "condition `{}` uses the fine-tuned policy but backend.remote.finetuned_model is unset",
                            c.name
                        ));
                    }
                }
                Err(Error::Config(e)) => errs.extend(
                    e.into_iter()
                        .map(|m| format!("condition `{}`: {m}", c.name)),
                ),
                Err(e) => errs.push(format!("condition `{}`: {e}", c.name)),
            }
        }
        if let Some(a) = &self.ablation {
            if !self.conditions.iter().any(|c| c.name == a.base) {
                errs.push(format!(
                    "ablation base `{}` is not a defined condition",
                    a.base
                ));
            }
            if a.presets.is_empty() {
                errs.push("ablation.presets is empty".into());
            }
            for p in &a.presets {
                if !PRESETS.contains(&p.as_str()) {
                    errs.push(format!("ablation: unknown preset `{p}`"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn rollout_config(&self, c: &ConditionConfig) -> Result<RolloutConfig> {
        let policy = match (&c.preset, &c.policy) {
            (Some(_), Some(_)) => {
                return Err(Error::config("set either `preset` or `policy`, not both"))
            }
            (Some(p), None) => InterventionPolicy::preset(p)?,
            (None, Some(p)) => p.clone(),
            (None, None) => InterventionPolicy::none(),
        };
        let policy = match c.tau {
            Some(t) => policy.with_tau(t),
            None => policy,
        };
        Ok(RolloutConfig {
            template: c.topology.clone(),
            regime: c.regime,
            memory: c.memory,
            injection: c.injection.clone(),
            n_agents: c.n_agents,
            focal_intensity: c.focal_intensity,
            policy,
            decoding: DecodingParams {
                rng_seed: self.rng_seed,
                ..self.decoding.clone()
            },
            repeats: c.repeats,
            prompts: self.prompts.clone(),
            diagnostic_identical_arms: c.diagnostic_identical_arms,
        })
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        match &self.scorer.lexicon_path {
            Some(p) => Lexicon::load(self.resolve(p)),
            None => Ok(Lexicon::default()),
        }
    }

    pub fn build_scorer(&self) -> Result<Arc<dyn ToxicityScorer>> {
        match self.scorer.kind.as_str() {
            "remote" => {
                let endpoint = self
                    .scorer
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::config("remote scorer needs `endpoint`"))?;
                Ok(Arc::new(CachedScorer::new(Arc::new(RemoteScorer::new(
                    endpoint,
                    self.scorer.http.clone(),
                )?))))
            }
            _ => Ok(Arc::new(LexiconScorer::new(self.lexicon()?))),
        }
    }

    /// Backends for one condition.
    pub fn build_backends(
        &self,
        rc: &RolloutConfig,
        scorer: Arc<dyn ToxicityScorer>,
    ) -> Result<Backends> {
        let lex = Arc::new(self.lexicon()?);
        let (toxic_focal, neutral_focal, downstream): (
            Arc<dyn Policy>,
            Arc<dyn Policy>,
            Arc<dyn Policy>,
        ) = match self.backend.kind {
            BackendKind::Scripted => {
                let len = self.backend.message_length;
                let toxic = ScriptedPolicySpec {
                    message_length: len,
                    ..ScriptedPolicySpec::toxic(rc.focal_intensity)
                };
                let neutral = ScriptedPolicySpec {
                    message_length: len,
                    ..ScriptedPolicySpec::neutral()
                };
                let echo = ScriptedPolicySpec {
                    message_length: len,
                    ..ScriptedPolicySpec::echo(self.backend.decay, self.backend.conflict_weight)
                };
                (
                    Arc::new(ScriptedPolicy::new(toxic, lex.clone())?),
                    Arc::new(ScriptedPolicy::new(neutral, lex.clone())?),
                    Arc::new(ScriptedPolicy::new(echo, lex.clone())?),
                )
            }
            BackendKind::Remote => {
                let base = Arc::new(ChatClient::new(&self.backend.remote)?);
                let down: Arc<dyn Policy> = if rc.policy.dpo {
                    Arc::new(ChatClient::finetuned(&self.backend.remote)?)
                } else {
                    base.clone()
                };
                (base.clone(), base, down)
            }
        };
        let summarizer: Arc<dyn Summarizer> =
            match self.summarizer.kind.unwrap_or(self.backend.kind) {
                BackendKind::Scripted => Arc::new(ScriptedSummarizer::with_window(
                    lex.clone(),
                    self.summarizer.window.unwrap_or(DEFAULT_WINDOW),
                )),
                BackendKind::Remote => Arc::new(RemoteSummarizer::new(
                    ChatClient::new(&self.backend.remote)?,
                    self.summarizer.max_chars,
                )),
            };
        let rewriter: Arc<dyn Rewriter> = match self.rewriter.kind.unwrap_or(self.backend.kind) {
            BackendKind::Scripted => Arc::new(ScriptedRewriter::new((*lex).clone())),
            BackendKind::Remote => Arc::new(RemoteRewriter::new(
                ChatClient::new(&self.backend.remote)?,
                self.rewriter.prompt.clone(),
            )),
        };
        Ok(Backends {
            toxic_focal,
            neutral_focal,
            downstream,
            scorer,
            summarizer,
            rewriter,
        })
    }

    /// Conditions for the ablation grid: the base condition under each preset.
    pub fn ablation_conditions(&self) -> Result<Vec<ConditionConfig>> {
        let a = self
            .ablation
            .as_ref()
            .ok_or_else(|| Error::config("config has no [ablation] section"))?;
        let base = self
            .conditions
            .iter()
            .find(|c| c.name == a.base)
            .ok_or_else(|| Error::config(format!("ablation base `{}` is not defined", a.base)))?;
        Ok(a.presets
            .iter()
            .map(|p| ConditionConfig {
                name: p.clone(),
                preset: Some(p.clone()),
                policy: None,
                ..base.clone()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seeds_path = "seeds.jsonl"

[[conditions]]
name = "chain"
topology = { kind = "chain", depth = 4 }
"#;

    fn with_seeds(text: &str) -> (tempfile::TempDir, ExperimentConfig) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("seeds.jsonl"),
            "{\"id\":\"a\",\"text\":\"hi\"}\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::parse(text, dir.path()).unwrap();
        (dir, cfg)
    }

    #[test]
    fn minimal_defaults() {
        let (_d, cfg) = with_seeds(MINIMAL);
        cfg.validate().unwrap();
        let rc = cfg.rollout_config(&cfg.conditions[0]).unwrap();
        assert_eq!(rc.focal_intensity, 0.8);
        assert_eq!(rc.policy, InterventionPolicy::none());
        assert_eq!(cfg.tau_grid, DEFAULT_TAU_GRID);
    }

    #[test]
    fn errors_are_collected() {
        let text = r#"
seeds_path = "missing.jsonl"
parallelism = 0
report_tau = 0.0

[[conditions]]
name = "x"
preset = "bogus"
topology = { kind = "chain", depth = 4 }

[[conditions]]
name = "x"
topology = { kind = "chain", depth = 0 }
"#;
        let cfg = ExperimentConfig::parse(text, ".").unwrap();
        match cfg.validate() {
            Err(Error::Config(e)) => assert!(e.len() >= 5, "{e:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(ExperimentConfig::parse("seeds_path = \"s\"\nbogus = 1\n", ".").is_err());
    }

    #[test]
    fn ablation_expansion() {
        let text = format!("{MINIMAL}\n[ablation]\nbase = \"chain\"\npresets = [\"no_intervention\", \"full_system\"]\n");
        let (_d, cfg) = with_seeds(&text);
        cfg.validate().unwrap();
        let conds = cfg.ablation_conditions().unwrap();
        assert_eq!(conds.len(), 2);
        assert_eq!(conds[1].name, "full_system");
    }

    #[test]
    fn remote_dpo_needs_finetuned_model() {
        let text = MINIMAL.replace("depth = 4 }", "depth = 4 }\npreset = \"dpo_only\"")
            + "\n[backend]\nkind = \"remote\"\n";
        let (_d, cfg) = with_seeds(&text);
        assert!(cfg.validate().is_err());
    }
}
