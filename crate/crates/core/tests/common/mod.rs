//! Shared fixtures for integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use toxprop::seeds::SeedPost;

/// A request captured by [`MockServer`].
#[derive(Debug, Clone)]
pub struct Captured {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: serde_json::Value,
}

impl Captured {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Minimal HTTP/1.1 server answering each connection with the next queued
/// `(status, body)` response; the last response repeats once the queue
/// runs dry.
pub struct MockServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Captured>>>,
}

impl MockServer {
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let mut queue: VecDeque<(u16, String)> = responses.into();
        thread::spawn(move || {
            let mut last = (200, "{}".to_string());
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let Some(req) = read_request(&mut stream) else {
                    continue;
                };
                log.lock().unwrap().push(req);
                if let Some(r) = queue.pop_front() {
                    last = r;
                }
                let (status, body) = &last;
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> Vec<Captured> {
        self.requests.lock().unwrap().clone()
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<Captured> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                len = v.parse().ok()?;
            }
            headers.push((k, v));
        }
    }
    let mut buf = vec![0u8; len];
    reader.read_exact(&mut buf).ok()?;
    Some(Captured {
        path,
        headers,
        body: serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null),
    })
}

pub fn chat_response(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

pub fn seeds(n: usize) -> Vec<SeedPost> {
    (0..n)
        .map(|i| {
            SeedPost::new(
                format!("s{i:02}"),
                format!("thread {i}: what do people think about the new transit plan"),
            )
        })
        .collect()
}

pub fn write_seed_file(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("seeds.jsonl");
    toxprop::seeds::write_seeds(&path, &seeds(n)).unwrap();
    path
}

/// Writes `config.toml` (with a seed file of `n_seeds` posts) into `dir`.
pub fn write_config(dir: &Path, n_seeds: usize, body: &str) -> PathBuf {
    write_seed_file(dir, n_seeds);
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        format!("seeds_path = \"seeds.jsonl\"\noutput_dir = \"out\"\n{body}"),
    )
    .unwrap();
    path
}

use proptest::prelude::*;
use toxprop::topology::{
    assign_agents, build_template, conditioning_set, cross_link_candidates, topological_order,
    ConditioningRegime, DiscussionGraph, Injection, TopologyKind, TopologyTemplate, FOCAL_AGENT,
};

/// Random chain, tree, DAG and high-branch templates small enough to check
/// exhaustively.
pub fn template_strategy() -> impl Strategy<Value = TopologyTemplate> {
    prop_oneof![
        (1u32..=12).prop_map(TopologyTemplate::chain),
        (1u32..=4, 1u32..=4).prop_map(|(d, b)| TopologyTemplate::tree(d, b)),
        (1u32..=3, 1u32..=3, 0u32..=6, any::<u64>())
            .prop_map(|(d, b, m, s)| TopologyTemplate::dag(d, b, m, s)),
        Just(TopologyTemplate::high_branch()),
    ]
}

fn expected_nodes(t: &TopologyTemplate) -> usize {
    let mut total = 1usize;
    let mut level = 1usize;
    for _ in 0..t.depth {
        level *= t.branching as usize;
        total += level;
    }
    total
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Checks node counts, acyclicity, cross-link legality, conditioning-set
/// precedence and agent assignment determinism for one template.
pub fn check_topology(t: &TopologyTemplate) -> Result<(), String> {
    let g = match build_template(t) {
        Ok(g) => g,
        Err(e) => {
            // Only an over-requested DAG may fail.
            let probe = TopologyTemplate {
                cross_links: 0,
                ..t.clone()
            };
            let g0 = build_template(&probe).map_err(|e| e.to_string())?;
            let legal = cross_link_candidates(g0.nodes(), g0.edges()).len();
            return ensure(
                t.kind == TopologyKind::Dag && t.cross_links as usize > legal,
                || format!("{t:?} failed unexpectedly: {e}"),
            );
        }
    };
    ensure(g.len() == expected_nodes(t), || {
        format!("{t:?}: {} nodes, expected {}", g.len(), expected_nodes(t))
    })?;
    if t.kind == TopologyKind::Chain {
        ensure(g.len() == t.depth as usize + 1, || "chain size".into())?;
    }
    let replies = g.len() - 1;
    ensure(g.edges().len() == replies + t.cross_links as usize, || {
        format!("{t:?}: {} edges", g.edges().len())
    })?;

    let order = topological_order(&g).map_err(|e| e.to_string())?;
    ensure(order == g.order(), || "order mismatch".into())?;
    ensure(order[0] == DiscussionGraph::SEED, || {
        "seed not first".into()
    })?;
    let mut seen = std::collections::HashSet::new();
    for &(u, v) in g.edges() {
        ensure(g.position(u) < g.position(v), || {
            format!("edge ({u},{v}) violates generation order")
        })?;
        ensure(seen.insert((u, v)), || format!("duplicate edge ({u},{v})"))?;
        let (du, dv) = (g.node(u).depth as i64, g.node(v).depth as i64);
        if g.node(v).parent == Some(u) {
            ensure(du + 1 == dv, || "tree edge skips a level".into())?;
        } else {
            ensure((du - dv).abs() <= 1, || {
                format!("cross-link ({u},{v}) spans depths {du} and {dv}")
            })?;
        }
    }

    for v in g.generated() {
        for regime in [
            ConditioningRegime::ParentOnly,
            ConditioningRegime::ThreadLocal,
            ConditioningRegime::FullVisible,
        ] {
            let c = conditioning_set(&g, v, regime).map_err(|e| e.to_string())?;
            ensure(!c.contains(&v), || "node conditions on itself".into())?;
            ensure(c.iter().all(|&u| g.position(u) < g.position(v)), || {
                format!("{regime:?} set of {v} contains a later node")
            })?;
            ensure(
                c.windows(2).all(|w| g.position(w[0]) < g.position(w[1])),
                || format!("{regime:?} set of {v} is not in generation order"),
            )?;
            match regime {
                ConditioningRegime::ParentOnly => {
                    ensure(c == g.parents(v), || "parent_only != parents".into())?
                }
                ConditioningRegime::ThreadLocal => ensure(
                    c.contains(&DiscussionGraph::SEED) && c.len() == g.node(v).depth as usize,
                    || "thread_local is not the root path".into(),
                )?,
                ConditioningRegime::FullVisible => ensure(c.len() == g.position(v), || {
                    "full_visible is not the generation prefix".into()
                })?,
            }
        }
    }

    let a = assign_agents(&g, &Injection::Single, 4).map_err(|e| e.to_string())?;
    let b = assign_agents(&g, &Injection::Single, 4).map_err(|e| e.to_string())?;
    ensure(a == b, || "agent assignment is not deterministic".into())?;
    ensure(a.focal_set().len() == 1, || {
        "single injection focal count".into()
    })?;
    for v in a.generated() {
        let agent = &a.node(v).agent_id;
        if a.is_focal(v) {
            ensure(agent == FOCAL_AGENT, || "focal node not A1".into())?;
        } else {
            ensure(["A2", "A3", "A4"].contains(&agent.as_str()), || {
                format!("unexpected agent {agent}")
            })?;
        }
    }
    Ok(())
}

/// Brute-force Wilcoxon p over all `2^n` sign assignments of the average
/// ranks of `|d|` (zeros dropped).
pub fn brute_force_wilcoxon(deltas: &[f64], greater: bool) -> f64 {
    let d: Vec<f64> = deltas.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let less = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| r)
        .sum();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if (greater && w >= observed) || (!greater && w <= observed) {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// `sorted[ceil(0.95 n) - 1]`, computed independently of the library.
pub fn p95_oracle(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let mut rank = 0;
    while rank * 100 < 95 * n {
        rank += 1;
    }
    v[rank.max(1) - 1]
}
