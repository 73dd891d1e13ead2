//! Drive one paired rollout against an OpenAI-compatible endpoint.
//!
//! ```text
//! TOXPROP_BASE_URL=http://localhost:8000/v1 TOXPROP_MODEL=my-model \
//!   TOXPROP_KEY_VAR=MY_API_KEY cargo run --example remote_backends
//! ```
//!
//! The API key is read from the variable named by `TOXPROP_KEY_VAR`. Without
//! `TOXPROP_BASE_URL` the example only prints the request it would send.

use std::sync::Arc;

use toxprop::interventions::ScriptedRewriter;
use toxprop::memory::RemoteSummarizer;
use toxprop::policy::{
    render_conversation, ChatClient, ContextEntry, GenerationRequest, RemoteSettings,
};
use toxprop::rollout::{run_paired, Backends, MemoryConditioning, RolloutConfig};
use toxprop::scoring::{Lexicon, LexiconScorer};
use toxprop::seeds::SeedPost;

fn main() -> toxprop::Result<()> {
    let cfg = RolloutConfig::chain(2, 0.8).with_memory(MemoryConditioning::SummaryPlusParent);
    let Ok(base_url) = std::env::var("TOXPROP_BASE_URL") else {
        let req = GenerationRequest {
            role_prompt: cfg.prompts.downstream.clone(),
            conditioning: vec![ContextEntry::new("human", "is remote work here to stay")],
            memory_summary: Some("(empty)".into()),
            decoding: cfg.decoding.clone(),
        };
        println!(
            "system: {}\n\nuser:\n{}",
            req.role_prompt,
            render_conversation(&req)
        );
        return Ok(());
    };
    let settings = RemoteSettings {
        base_url,
        model: std::env::var("TOXPROP_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into()),
        api_key_env: std::env::var("TOXPROP_KEY_VAR").ok(),
        ..RemoteSettings::default()
    };
    let client = Arc::new(ChatClient::new(&settings)?);
    let backends = Backends {
        toxic_focal: client.clone(),
        neutral_focal: client.clone(),
        downstream: client.clone(),
        scorer: Arc::new(LexiconScorer::default()),
        summarizer: Arc::new(RemoteSummarizer::new((*client).clone(), Some(600))),
        rewriter: Arc::new(ScriptedRewriter::new(Lexicon::default())),
    };
    let pair = run_paired(
        "remote",
        &cfg,
        &SeedPost::new("r1", "is remote work here to stay"),
        0,
        &backends,
    )?;
    for n in pair.toxic.nodes.iter().chain(&pair.neutral.nodes) {
        println!("[{} {}] tox {:.3}: {}", n.id, n.role, n.tox, n.text);
    }
    Ok(())
}
