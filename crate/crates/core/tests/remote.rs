mod common;

use common::{chat_response, MockServer};
use toxprop::config::ExperimentConfig;
use toxprop::http::HttpSettings;
use toxprop::memory::{MemoryState, RemoteSummarizer, Summarizer, SUMMARIZER_PROMPT};
use toxprop::policy::{
    ChatClient, ContextEntry, DecodingParams, GenerationRequest, Policy, RemoteSettings,
};
use toxprop::scoring::{RemoteScorer, ToxicityScorer};
use toxprop::Error;

fn fast_http() -> HttpSettings {
    HttpSettings {
        timeout_secs: 5.0,
        max_retries: 2,
        backoff_ms: 1,
    }
}

fn settings(url: &str) -> RemoteSettings {
    RemoteSettings {
        base_url: format!("{url}/v1"),
        model: "base-model".into(),
        finetuned_model: Some("tuned-model".into()),
        api_key_env: None,
        send_seed: true,
        http: fast_http(),
    }
}

#[test]
fn chat_request_shape() {
    let server = MockServer::start(vec![(200, chat_response("  a reply  "))]);
    let client = ChatClient::new(&settings(&server.url)).unwrap();
    let req = GenerationRequest {
        role_prompt: "be brief".into(),
        conditioning: vec![ContextEntry::new("human", "seed text")],
        memory_summary: Some("earlier gist".into()),
        decoding: DecodingParams {
            rng_seed: 42,
            ..DecodingParams::default()
        },
    };
    assert_eq!(client.generate(&req).unwrap(), "a reply");

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let r = &reqs[0];
    assert_eq!(r.path, "/v1/chat/completions");
    assert_eq!(r.body["model"], "base-model");
    assert_eq!(r.body["seed"], 42);
    assert_eq!(r.body["messages"][0]["role"], "system");
    assert_eq!(r.body["messages"][0]["content"], "be brief");
    let user = r.body["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains("earlier gist") && user.contains("[human]: seed text"));
    assert!(r.header("authorization").is_none());
}

#[test]
fn finetuned_client_uses_tuned_model() {
    let server = MockServer::start(vec![(200, chat_response("ok"))]);
    let client = ChatClient::finetuned(&settings(&server.url)).unwrap();
    client
        .complete("s", "u", &DecodingParams::default())
        .unwrap();
    assert_eq!(server.requests()[0].body["model"], "tuned-model");

    let mut s = settings(&server.url);
    s.finetuned_model = None;
    assert!(matches!(ChatClient::finetuned(&s), Err(Error::Config(_))));
}

#[test]
fn seed_can_be_withheld() {
    let server = MockServer::start(vec![(200, chat_response("ok"))]);
    let mut s = settings(&server.url);
    s.send_seed = false;
    ChatClient::new(&s)
        .unwrap()
        .complete("s", "u", &DecodingParams::default())
        .unwrap();
    assert!(server.requests()[0].body.get("seed").is_none());
}

#[test]
fn retries_server_errors_with_identical_payload() {
    let server = MockServer::start(vec![
        (500, "{}".into()),
        (429, "{}".into()),
        (200, chat_response("third time")),
    ]);
    let client = ChatClient::new(&settings(&server.url)).unwrap();
    let out = client
        .complete("s", "u", &DecodingParams::default())
        .unwrap();
    assert_eq!(out, "third time");
    let reqs = server.requests();
    assert_eq!(reqs.len(), 3);
    assert_eq!(reqs[0].body, reqs[2].body);
}

#[test]
fn retries_exhausted() {
    let server = MockServer::start(vec![(503, "{}".into())]);
    let client = ChatClient::new(&settings(&server.url)).unwrap();
    let err = client
        .complete("s", "u", &DecodingParams::default())
        .unwrap_err();
    match err {
        Error::Backend {
            attempts, status, ..
        } => assert_eq!((attempts, status), (3, Some(503))),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(vec![(400, "{\"error\":\"bad\"}".into())]);
    let client = ChatClient::new(&settings(&server.url)).unwrap();
    let err = client
        .complete("s", "u", &DecodingParams::default())
        .unwrap_err();
    assert!(matches!(
        err,
        Error::Backend {
            attempts: 1,
            status: Some(400),
            ..
        }
    ));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn empty_completion_is_a_generation_error() {
    let server = MockServer::start(vec![(200, chat_response("   "))]);
    let client = ChatClient::new(&settings(&server.url)).unwrap();
    let err = client
        .complete("s", "u", &DecodingParams::default())
        .unwrap_err();
    assert!(matches!(err, Error::Generation(_)));
}

#[test]
fn completion_truncated_to_token_budget() {
    let server = MockServer::start(vec![(200, chat_response("one two three four"))]);
    let client = ChatClient::new(&settings(&server.url)).unwrap();
    let decoding = DecodingParams {
        max_tokens: 2,
        ..DecodingParams::default()
    };
    assert_eq!(client.complete("s", "u", &decoding).unwrap(), "one two");
}

#[test]
fn bearer_token_read_from_named_variable() {
    let server = MockServer::start(vec![(200, chat_response("ok"))]);
    let mut s = settings(&server.url);
    s.api_key_env = Some("TOXPROP_TEST_KEY_PRESENT".into());
    std::env::set_var("TOXPROP_TEST_KEY_PRESENT", "sk-test");
    ChatClient::new(&s)
        .unwrap()
        .complete("s", "u", &DecodingParams::default())
        .unwrap();
    assert_eq!(
        server.requests()[0].header("authorization"),
        Some("Bearer sk-test")
    );

    s.api_key_env = Some("TOXPROP_TEST_KEY_ABSENT".into());
    assert!(matches!(ChatClient::new(&s), Err(Error::Config(_))));
}

#[test]
fn remote_scorer_parses_and_clamps() {
    let server = MockServer::start(vec![
        (200, "{\"toxicity\": 0.25}".into()),
        (200, "{\"toxicity\": 1.7}".into()),
        (200, "{\"label\": \"toxic\"}".into()),
    ]);
    let scorer = RemoteScorer::new(format!("{}/score", server.url), fast_http()).unwrap();
    assert_eq!(scorer.score("hello").unwrap(), 0.25);
    assert_eq!(scorer.score("hello again").unwrap(), 1.0);
    assert!(matches!(scorer.score("x"), Err(Error::Protocol(_))));
    let reqs = server.requests();
    assert_eq!(reqs[0].path, "/score");
    assert_eq!(reqs[0].body["text"], "hello");
}

#[test]
fn remote_summarizer_strips_echo() {
    let echoed = format!("{SUMMARIZER_PROMPT}\n\nThe thread grew tense.");
    let server = MockServer::start(vec![(200, chat_response(&echoed))]);
    let s = RemoteSummarizer::new(ChatClient::new(&settings(&server.url)).unwrap(), None);
    let out = s.summarize(&MemoryState::empty(), "new message").unwrap();
    assert_eq!(out, "The thread grew tense.");
    let body = &server.requests()[0].body;
    assert_eq!(body["messages"][0]["content"], SUMMARIZER_PROMPT);
    assert_eq!(body["max_tokens"], 150);
    let user = body["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains("(empty)") && user.contains("new message"));
}

#[test]
fn remote_summarizer_rejects_pure_echo() {
    let server = MockServer::start(vec![(200, chat_response(SUMMARIZER_PROMPT))]);
    let s = RemoteSummarizer::new(ChatClient::new(&settings(&server.url)).unwrap(), None);
    assert!(matches!(
        s.summarize(&MemoryState::empty(), "m"),
        Err(Error::Generation(_))
    ));
}

#[test]
fn remote_settings_from_toml() {
    let dir = tempfile::tempdir().unwrap();
    common::write_seed_file(dir.path(), 1);
    let text = r#"
seeds_path = "seeds.jsonl"

[backend]
kind = "remote"

[backend.remote]
base_url = "http://localhost:9/v1"
model = "m"
api_key_env = "SOME_KEY"
timeout_secs = 3.5
max_retries = 1

[[conditions]]
name = "c"
topology = { kind = "chain", depth = 2 }
"#;
    let cfg = ExperimentConfig::parse(text, dir.path()).unwrap();
    assert_eq!(cfg.backend.remote.http.timeout_secs, 3.5);
    assert_eq!(cfg.backend.remote.http.max_retries, 1);
    assert_eq!(cfg.backend.remote.api_key_env.as_deref(), Some("SOME_KEY"));

    let bad = text.replace("max_retries = 1", "max_retires = 1");
    assert!(ExperimentConfig::parse(&bad, dir.path()).is_err());
}
