//! Single and paired counterfactual rollouts over a discussion graph.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interventions::{
    InterventionPolicy, Pipeline, Rewriter, ScriptedRewriter, StageRecord, StepInput,
};
use crate::memory::{MemoryState, ScriptedSummarizer, Summarizer};
use crate::policy::{
    ContextEntry, DecodingParams, Policy, ScriptedPolicy, ScriptedPolicySpec,
    CONSTRUCTIVE_FOCAL_PROMPT, ENGAGED_USER_PROMPT, HOSTILE_FOCAL_PROMPT,
};
use crate::scoring::{Lexicon, LexiconScorer, ToxicityScorer};
use crate::seeds::SeedPost;
use crate::topology::{
    assign_agents, build_template, conditioning_set, ConditioningRegime, DiscussionGraph,
    Injection, TopologyTemplate, ROLE_SEED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Toxic,
    Neutral,
}

/// What a memory-augmented node sees besides the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryConditioning {
    /// Summary plus the node's parent message(s).
    #[default]
    SummaryPlusParent,
    /// Summary alone.
    SummaryOnly,
    /// Summary plus the transcript slice given by the visibility regime.
    SummaryPlusTranscript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryScope {
    /// One running summary per rollout.
    #[default]
    Shared,
    /// One running summary per agent, fed by the messages that agent can see.
    PerAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(default)]
    pub conditioning: MemoryConditioning,
    #[serde(default)]
    pub scope: MemoryScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompts {
    pub hostile: String,
    pub constructive: String,
    pub downstream: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            hostile: HOSTILE_FOCAL_PROMPT.into(),
            constructive: CONSTRUCTIVE_FOCAL_PROMPT.into(),
            downstream: ENGAGED_USER_PROMPT.into(),
        }
    }
}

/// Everything held fixed across the two arms of a pair, except the seed post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub template: TopologyTemplate,
    pub regime: ConditioningRegime,
    /// `None` disables memory.
    pub memory: Option<MemoryConfig>,
    pub injection: Injection,
    pub n_agents: u32,
    pub focal_intensity: f64,
    pub policy: InterventionPolicy,
    pub decoding: DecodingParams,
    pub repeats: u32,
    pub prompts: Prompts,
    /// Runs both arms with the neutral focal condition.
    pub diagnostic_identical_arms: bool,
}

impl RolloutConfig {
    /// Chain of length `length`, full visibility, no memory, no controls.
    pub fn chain(length: u32, focal_intensity: f64) -> Self {
        Self {
            template: TopologyTemplate::chain(length),
            regime: ConditioningRegime::FullVisible,
            memory: None,
            injection: Injection::Single,
            n_agents: 4,
            focal_intensity,
            policy: InterventionPolicy::none(),
            decoding: DecodingParams::default(),
            repeats: 1,
            prompts: Prompts::default(),
            diagnostic_identical_arms: false,
        }
    }

    pub fn with_memory(mut self, conditioning: MemoryConditioning) -> Self {
        self.memory = Some(MemoryConfig {
            conditioning,
            scope: MemoryScope::Shared,
        });
        self
    }

    pub fn with_policy(mut self, policy: InterventionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut collect = |r: Result<()>| match r {
            Ok(()) => {}
            Err(Error::Config(e)) => errs.extend(e),
            Err(e) => errs.push(e.to_string()),
        };
        collect(self.template.validate());
        collect(self.policy.validate());
        if !(0.0..=1.0).contains(&self.focal_intensity) {
            collect(Err(Error::config(format!(
                "focal_intensity must lie in [0, 1], got {}",
                self.focal_intensity
            ))));
        }
        if self.n_agents < 2 {
            collect(Err(Error::config("n_agents must be at least 2")));
        }
        if self.repeats == 0 {
            collect(Err(Error::config("repeats must be positive")));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Generation, scoring, summarization and rewriting backends for one
/// condition.
#[derive(Clone)]
pub struct Backends {
    pub toxic_focal: Arc<dyn Policy>,
    pub neutral_focal: Arc<dyn Policy>,
    pub downstream: Arc<dyn Policy>,
    pub scorer: Arc<dyn ToxicityScorer>,
    pub summarizer: Arc<dyn Summarizer>,
    pub rewriter: Arc<dyn Rewriter>,
}

impl Backends {
    /// Deterministic backends: toxic templater at `focal_intensity`, neutral
    /// templater, echo-register downstream, laundering summarizer.
    pub fn scripted(focal_intensity: f64, lexicon: Lexicon) -> Result<Self> {
        Self::scripted_with(focal_intensity, ScriptedPolicySpec::echo(0.5, 0.5), lexicon)
    }

    pub fn scripted_with(
        focal_intensity: f64,
        downstream: ScriptedPolicySpec,
        lexicon: Lexicon,
    ) -> Result<Self> {
        let lex = Arc::new(lexicon);
        Ok(Self {
            toxic_focal: Arc::new(ScriptedPolicy::new(
                ScriptedPolicySpec::toxic(focal_intensity),
                lex.clone(),
            )?),
            neutral_focal: Arc::new(ScriptedPolicy::new(
                ScriptedPolicySpec::neutral(),
                lex.clone(),
            )?),
            downstream: Arc::new(ScriptedPolicy::new(downstream, lex.clone())?),
            scorer: Arc::new(LexiconScorer::new((*lex).clone())),
            summarizer: Arc::new(ScriptedSummarizer::new(lex.clone())),
            rewriter: Arc::new(ScriptedRewriter::new((*lex).clone())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub agent: String,
    pub depth: u32,
    pub role: String,
    pub focal: bool,
    /// Ids of all parents, in generation order.
    pub parents: Vec<String>,
    /// Emitted text (after the output filter).
    pub text: String,
    /// Text admitted to transcript and memory.
    pub stored_text: String,
    pub tox: f64,
    /// Conditioning entries exactly as presented to the generator.
    pub context: Vec<ContextEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_summary: Option<String>,
}

impl NodeRecord {
    pub fn is_downstream(&self) -> bool {
        !self.focal && self.role != ROLE_SEED
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTraceEntry {
    /// `shared` or the owning agent id.
    pub owner: String,
    #[serde(flatten)]
    pub state: MemoryState,
}

pub const SHARED_OWNER: &str = "shared";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpgRecord {
    pub node: String,
    pub arm: Arm,
    /// Turn of the memory state the node conditioned on.
    pub m_turn: u32,
    pub m_tox: f64,
    pub next_tox: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub arm: Arm,
    /// Nodes in generation order, seed first.
    pub nodes: Vec<NodeRecord>,
    pub memory_trace: Vec<MemoryTraceEntry>,
    pub spg_records: Vec<SpgRecord>,
    pub stage_log: Vec<StageRecord>,
}

impl RolloutResult {
    pub fn downstream(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.iter().filter(|n| n.is_downstream())
    }

    pub fn node(&self, id: &str) -> Option<&NodeRecord> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRollout {
    pub condition: String,
    pub config_digest: String,
    pub seed_id: String,
    pub repeat: u32,
    pub toxic: RolloutResult,
    pub neutral: RolloutResult,
}

/// Per-request decoding seed shared by both arms.
pub fn derive_seed(base: u64, seed_id: &str, repeat: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(seed_id.as_bytes());
    h.update(repeat.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

struct AgentMemory {
    state: MemoryState,
    seen: BTreeSet<usize>,
}

/// Builds the skeleton with authorship for a config.
pub fn build_graph(cfg: &RolloutConfig) -> Result<DiscussionGraph> {
    let g = build_template(&cfg.template)?;
    assign_agents(&g, &cfg.injection, cfg.n_agents)
}

/// Runs one arm: every reply generated in topological order through the
/// intervention pipeline.
pub fn run_rollout(
    cfg: &RolloutConfig,
    seed: &SeedPost,
    arm: Arm,
    repeat: u32,
    backends: &Backends,
) -> Result<RolloutResult> {
    let mut g = build_graph(cfg)?;
    let scorer = backends.scorer.as_ref();
    let seed_tox = scorer
        .score(&seed.text)
        .map_err(|e| e.at_stage("score_seed", "n0"))?;
    {
        let s = g.node_mut(DiscussionGraph::SEED);
        s.text = seed.text.clone();
        s.tox = Some(seed_tox);
    }

    let focal_arm = if cfg.diagnostic_identical_arms {
        Arm::Neutral
    } else {
        arm
    };
    let (focal_policy, focal_prompt) = match focal_arm {
        Arm::Toxic => (backends.toxic_focal.as_ref(), cfg.prompts.hostile.as_str()),
        Arm::Neutral => (
            backends.neutral_focal.as_ref(),
            cfg.prompts.constructive.as_str(),
        ),
    };

    let pipe = Pipeline {
        policy: &cfg.policy,
        scorer,
        rewriter: Some(backends.rewriter.as_ref()),
        summarizer: Some(backends.summarizer.as_ref()),
    };
    let decoding = DecodingParams {
        rng_seed: derive_seed(cfg.decoding.rng_seed, &seed.id, repeat),
        ..cfg.decoding.clone()
    };

    let n = g.len();
    let mut stored: Vec<String> = vec![String::new(); n];
    stored[DiscussionGraph::SEED] = seed.text.clone();
    let mut records: Vec<Option<NodeRecord>> = vec![None; n];
    let mut stage_log = Vec::new();
    let mut memory_trace = Vec::new();
    let mut spg_records = Vec::new();

    let mut shared = MemoryState::empty();
    let mut per_agent: BTreeMap<String, AgentMemory> = BTreeMap::new();
    if let Some(mc) = cfg.memory {
        if mc.scope == MemoryScope::Shared {
            memory_trace.push(MemoryTraceEntry {
                owner: SHARED_OWNER.into(),
                state: shared.clone(),
            });
        }
    }

    let order = g.order().to_vec();
    for &v in &order {
        let node = g.node(v).clone();
        let parents: Vec<String> = g.parents(v).iter().map(|&u| g.node(u).id.clone()).collect();
        if v == DiscussionGraph::SEED {
            records[v] = Some(NodeRecord {
                id: node.id,
                agent: node.agent_id,
                depth: node.depth,
                role: node.role,
                focal: false,
                parents,
                text: seed.text.clone(),
                stored_text: seed.text.clone(),
                tox: seed_tox,
                context: Vec::new(),
                memory_summary: None,
            });
            continue;
        }
        let focal = g.is_focal(v);
        let (policy, role_prompt) = if focal {
            (focal_policy, focal_prompt)
        } else {
            (
                backends.downstream.as_ref(),
                cfg.prompts.downstream.as_str(),
            )
        };

        let visible = conditioning_set(&g, v, cfg.regime)?;
        let context_nodes = match cfg.memory.map(|m| m.conditioning) {
            None | Some(MemoryConditioning::SummaryPlusTranscript) => visible.clone(),
            Some(MemoryConditioning::SummaryPlusParent) => {
                conditioning_set(&g, v, ConditioningRegime::ParentOnly)?
            }
            Some(MemoryConditioning::SummaryOnly) => Vec::new(),
        };
        let conditioning: Vec<ContextEntry> = context_nodes
            .iter()
            .map(|&u| ContextEntry::new(g.node(u).agent_id.clone(), stored[u].clone()))
            .collect();

        // Per-agent streams first absorb visible messages the agent has not
        // seen yet.
        if let Some(MemoryConfig {
            scope: MemoryScope::PerAgent,
            ..
        }) = cfg.memory
        {
            let entry = per_agent.entry(node.agent_id.clone()).or_insert_with(|| {
                memory_trace.push(MemoryTraceEntry {
                    owner: node.agent_id.clone(),
                    state: MemoryState::empty(),
                });
                AgentMemory {
                    state: MemoryState::empty(),
                    seen: BTreeSet::new(),
                }
            });
            for &u in &visible {
                if u == DiscussionGraph::SEED || !entry.seen.insert(u) {
                    continue;
                }
                let uid = g.node(u).id.clone();
                let u_tox = records[u]
                    .as_ref()
                    .map(|r| stored_tox_of(r, scorer))
                    .transpose()?;
                let next = pipe.ingest(
                    &entry.state,
                    &stored[u],
                    u_tox.unwrap_or(0.0),
                    &uid,
                    &mut stage_log,
                )?;
                if next != entry.state {
                    memory_trace.push(MemoryTraceEntry {
                        owner: node.agent_id.clone(),
                        state: next.clone(),
                    });
                }
                entry.state = next;
            }
        }

        let presented: Option<MemoryState> = match cfg.memory {
            None => None,
            Some(MemoryConfig {
                scope: MemoryScope::Shared,
                ..
            }) => Some(shared.clone()),
            Some(MemoryConfig {
                scope: MemoryScope::PerAgent,
                ..
            }) => Some(per_agent[&node.agent_id].state.clone()),
        };

        let input = StepInput {
            node_id: &node.id,
            role_prompt: role_prompt.to_string(),
            decoding: decoding.clone(),
            conditioning,
            presented_memory: presented.as_ref(),
            memory: presented.clone(),
        };
        let out = pipe.step(input, |req| policy.generate(req), &mut stage_log)?;

        if let Some(m) = &presented {
            if !focal {
                spg_records.push(SpgRecord {
                    node: node.id.clone(),
                    arm,
                    m_turn: m.turn,
                    m_tox: m.tox,
                    next_tox: out.emitted_tox,
                });
            }
        }
        if let (Some(prev), Some(next)) = (&presented, &out.memory) {
            let owner = match cfg.memory.map(|m| m.scope) {
                Some(MemoryScope::PerAgent) => node.agent_id.clone(),
                _ => SHARED_OWNER.to_string(),
            };
            if next != prev {
                memory_trace.push(MemoryTraceEntry {
                    owner: owner.clone(),
                    state: next.clone(),
                });
            }
            if owner == SHARED_OWNER {
                shared = next.clone();
            } else if let Some(e) = per_agent.get_mut(&owner) {
                e.seen.insert(v);
                e.state = next.clone();
            }
        }

        stored[v] = out.stored.clone();
        {
            let nm = g.node_mut(v);
            nm.text = out.emitted.clone();
            nm.tox = Some(out.emitted_tox);
        }
        records[v] = Some(NodeRecord {
            id: node.id,
            agent: node.agent_id,
            depth: node.depth,
            role: node.role,
            focal,
            parents,
            text: out.emitted,
            stored_text: out.stored,
            tox: out.emitted_tox,
            context: out.request.conditioning,
            memory_summary: out.request.memory_summary,
        });
    }

    let nodes = order
        .iter()
        .map(|&v| records[v].take().expect("every node generated"))
        .collect();
    Ok(RolloutResult {
        arm,
        nodes,
        memory_trace,
        spg_records,
        stage_log,
    })
}

fn stored_tox_of(r: &NodeRecord, scorer: &dyn ToxicityScorer) -> Result<f64> {
    if r.stored_text == r.text {
        Ok(r.tox)
    } else {
        scorer.score(&r.stored_text)
    }
}

/// Runs the toxic and neutral arms under identical config, seed and
/// decoding randomness.
pub fn run_paired(
    condition: &str,
    cfg: &RolloutConfig,
    seed: &SeedPost,
    repeat: u32,
    backends: &Backends,
) -> Result<PairedRollout> {
    let toxic = run_rollout(cfg, seed, Arm::Toxic, repeat, backends)?;
    let neutral = run_rollout(cfg, seed, Arm::Neutral, repeat, backends)?;
    Ok(PairedRollout {
        condition: condition.to_string(),
        config_digest: cfg.digest(),
        seed_id: seed.id.clone(),
        repeat,
        toxic,
        neutral,
    })
}

/// One condition of a grid run.
#[derive(Clone)]
pub struct GridCondition {
    pub name: String,
    pub config: RolloutConfig,
    pub backends: Backends,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub condition: String,
    pub config_digest: String,
    pub seed_id: String,
    pub repeat: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Pair(PairedRollout),
    Failure(FailureRecord),
}

impl LogRecord {
    pub fn condition(&self) -> &str {
        match self {
            LogRecord::Pair(p) => &p.condition,
            LogRecord::Failure(f) => &f.condition,
        }
    }
}

/// Runs every (condition, seed, repeat) job with at most `parallelism`
/// concurrent pairs. Output order is (condition index, seed id, repeat)
/// whatever the execution interleaving. Failed pairs become failure records.
pub fn run_grid(
    conditions: &[GridCondition],
    seeds: &[SeedPost],
    parallelism: usize,
) -> Result<Vec<LogRecord>> {
    use rayon::prelude::*;

    let mut sorted: Vec<&SeedPost> = seeds.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut jobs = Vec::new();
    for (ci, c) in conditions.iter().enumerate() {
        for s in &sorted {
            for r in 0..c.config.repeats {
                jobs.push((ci, *s, r));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
    let out = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, seed, r)| {
                let c = &conditions[ci];
                match run_paired(&c.name, &c.config, seed, r, &c.backends) {
                    Ok(p) => LogRecord::Pair(p),
                    Err(e) => {
                        log::warn!("pair {}/{}/{r} failed: {e}", c.name, seed.id);
                        LogRecord::Failure(FailureRecord {
                            condition: c.name.clone(),
                            config_digest: c.config.digest(),
                            seed_id: seed.id.clone(),
                            repeat: r,
                            error: e.to_string(),
                        })
                    }
                }
            })
            .collect()
    });
    Ok(out)
}
