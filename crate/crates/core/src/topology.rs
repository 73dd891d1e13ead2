//! Discussion-graph skeletons, authorship and conditioning sets.
//!
//! Node `0` is always the human seed post. Reply nodes are created breadth
//! first, so a node's index doubles as its sibling-stable tiebreak key when
//! computing the topological generation order.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on skeleton size; guards against accidental exponential blowup.
pub const MAX_NODES: usize = 200_000;

pub const HUMAN_AGENT: &str = "human";
pub const FOCAL_AGENT: &str = "A1";
pub const ROLE_SEED: &str = "seed";
pub const ROLE_FOCAL: &str = "focal";
pub const ROLE_DOWNSTREAM: &str = "engaged_user";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Chain,
    Tree,
    Dag,
    HighBranch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyTemplate {
    pub kind: TopologyKind,
    /// `L` for chains, `D` otherwise.
    pub depth: u32,
    #[serde(default = "one")]
    pub branching: u32,
    #[serde(default)]
    pub cross_links: u32,
    /// Only used to pick DAG cross-links.
    #[serde(default)]
    pub rng_seed: u64,
}

fn one() -> u32 {
    1
}

impl TopologyTemplate {
    pub fn chain(length: u32) -> Self {
        Self {
            kind: TopologyKind::Chain,
            depth: length,
            branching: 1,
            cross_links: 0,
            rng_seed: 0,
        }
    }

    pub fn tree(depth: u32, branching: u32) -> Self {
        Self {
            kind: TopologyKind::Tree,
            depth,
            branching,
            cross_links: 0,
            rng_seed: 0,
        }
    }

    pub fn dag(depth: u32, branching: u32, cross_links: u32, rng_seed: u64) -> Self {
        Self {
            kind: TopologyKind::Dag,
            depth,
            branching,
            cross_links,
            rng_seed,
        }
    }

    /// Fan-out stress template, `D = 2`, `b = 5`.
    pub fn high_branch() -> Self {
        Self {
            kind: TopologyKind::HighBranch,
            depth: 2,
            branching: 5,
            cross_links: 0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Template("depth must be positive".into()));
        }
        if self.branching == 0 {
            return Err(Error::Template("branching must be positive".into()));
        }
        match self.kind {
            TopologyKind::Chain if self.branching != 1 || self.cross_links != 0 => Err(
                Error::Template("a chain has branching 1 and no cross-links".into()),
            ),
            TopologyKind::Tree | TopologyKind::HighBranch if self.cross_links != 0 => Err(
                Error::Template(format!("{:?} templates take no cross-links", self.kind)),
            ),
            _ => {
                if self.reply_count() + 1 > MAX_NODES {
                    return Err(Error::Template(format!(
                        "template expands to more than {MAX_NODES} nodes"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Number of reply nodes, `sum_{d=1..D} b^d` (saturating).
    pub fn reply_count(&self) -> usize {
        let mut total: usize = 0;
        let mut level: usize = 1;
        for _ in 0..self.depth {
            level = level.saturating_mul(self.branching as usize);
            total = total.saturating_add(level);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub agent_id: String,
    pub depth: u32,
    /// Tree parent; `None` only for the seed.
    pub parent: Option<usize>,
    pub role: String,
    pub text: String,
    pub tox: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningRegime {
    ParentOnly,
    ThreadLocal,
    FullVisible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscussionGraph {
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    order: Vec<usize>,
    position: Vec<usize>,
    focal_set: BTreeSet<usize>,
}

impl DiscussionGraph {
    /// Assembles a graph from raw parts, checking the seed/parent invariants
    /// and computing the generation order.
    pub fn from_parts(nodes: Vec<Node>, edges: Vec<(usize, usize)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Structure("graph has no seed node".into()));
        }
        let n = nodes.len();
        let mut parents = vec![Vec::new(); n];
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Structure(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(Error::Structure(format!("self-loop on {}", nodes[u].id)));
            }
            parents[v].push(u);
        }
        if !parents[0].is_empty() {
            return Err(Error::Structure("the seed node cannot have parents".into()));
        }
        if let Some(orphan) = (1..n).find(|&v| parents[v].is_empty()) {
            return Err(Error::Structure(format!(
                "node {} has no parent",
                nodes[orphan].id
            )));
        }
        let order = kahn_order(n, &edges)?;
        let mut position = vec![0; n];
        for (pos, &v) in order.iter().enumerate() {
            position[v] = pos;
        }
        for p in &mut parents {
            p.sort_by_key(|&u| position[u]);
        }
        Ok(Self {
            nodes,
            edges,
            parents,
            order,
            position,
            focal_set: BTreeSet::new(),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &Node {
        &self.nodes[v]
    }

    pub fn node_mut(&mut self, v: usize) -> &mut Node {
        &mut self.nodes[v]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn position(&self, v: usize) -> usize {
        self.position[v]
    }

    pub fn focal_set(&self) -> &BTreeSet<usize> {
        &self.focal_set
    }

    pub fn is_focal(&self, v: usize) -> bool {
        self.focal_set.contains(&v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub const SEED: usize = 0;

    /// Direct predecessors along edges (tree parent plus any cross-link
    /// sources), in generation order.
    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    fn children(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        // tree children, in creation (= sibling) order
        (0..self.nodes.len()).filter(move |&c| self.nodes[c].parent == Some(v))
    }

    /// Ids of the reply nodes, in generation order.
    pub fn generated(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().copied().filter(|&v| v != Self::SEED)
    }
}

fn kahn_order(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut out = vec![Vec::new(); n];
    for &(u, v) in edges {
        indegree[v] += 1;
        out[u].push(v);
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for &v in &out[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() != n {
        return Err(Error::Structure("graph contains a cycle".into()));
    }
    Ok(order)
}

/// Kahn's algorithm with the node index as tiebreak; fails on cycles.
pub fn topological_order(g: &DiscussionGraph) -> Result<Vec<usize>> {
    kahn_order(g.len(), g.edges())
}

fn node_id(index: usize) -> String {
    format!("n{index}")
}

/// Builds the empty skeleton for a template. Agents are unassigned until
/// [`assign_agents`] runs.
pub fn build_template(t: &TopologyTemplate) -> Result<DiscussionGraph> {
    t.validate()?;
    let mut nodes = vec![Node {
        id: node_id(0),
        agent_id: HUMAN_AGENT.into(),
        depth: 0,
        parent: None,
        role: ROLE_SEED.into(),
        text: String::new(),
        tox: None,
    }];
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];
    for depth in 1..=t.depth {
        let mut next = Vec::with_capacity(frontier.len() * t.branching as usize);
        for &parent in &frontier {
            for _ in 0..t.branching {
                let idx = nodes.len();
                nodes.push(Node {
                    id: node_id(idx),
                    agent_id: String::new(),
                    depth,
                    parent: Some(parent),
                    role: String::new(),
                    text: String::new(),
                    tox: None,
                });
                edges.push((parent, idx));
                next.push(idx);
            }
        }
        frontier = next;
    }
    if t.kind == TopologyKind::Dag && t.cross_links > 0 {
        let candidates = cross_link_candidates(&nodes, &edges);
        let m = t.cross_links as usize;
        if m > candidates.len() {
            return Err(Error::Template(format!(
                "requested {m} cross-links but only {} legal candidates exist",
                candidates.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(t.rng_seed);
        let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), m).into_vec();
        picked.sort_unstable();
        edges.extend(picked.into_iter().map(|i| candidates[i]));
    }
    DiscussionGraph::from_parts(nodes, edges)
}

/// Every edge `u -> v` with `|depth(u) - depth(v)| <= 1`, `u != parent(v)`,
/// not already present, and `u` created before `v` (which keeps the graph
/// acyclic under the breadth-first creation order).
pub fn cross_link_candidates(nodes: &[Node], edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let existing: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut out = Vec::new();
    for v in 1..nodes.len() {
        for u in 0..v {
            let du = nodes[u].depth as i64;
            let dv = nodes[v].depth as i64;
            if (du - dv).abs() <= 1 && nodes[v].parent != Some(u) && !existing.contains(&(u, v)) {
                out.push((u, v));
            }
        }
    }
    out
}

/// Ordered conditioning set `C(v)` under a visibility regime.
pub fn conditioning_set(
    g: &DiscussionGraph,
    v: usize,
    regime: ConditioningRegime,
) -> Result<Vec<usize>> {
    if v >= g.len() {
        return Err(Error::UnknownNode(format!("#{v}")));
    }
    let mut set = match regime {
        ConditioningRegime::ParentOnly => g.parents(v).to_vec(),
        ConditioningRegime::ThreadLocal => {
            let mut path = Vec::new();
            let mut cur = g.node(v).parent;
            while let Some(p) = cur {
                path.push(p);
                cur = g.node(p).parent;
            }
            path
        }
        ConditioningRegime::FullVisible => g.order()[..g.position(v)].to_vec(),
    };
    set.sort_by_key(|&u| g.position(u));
    Ok(set)
}

pub fn conditioning_set_by_id(
    g: &DiscussionGraph,
    id: &str,
    regime: ConditioningRegime,
) -> Result<Vec<String>> {
    let v = g.index_of(id)?;
    Ok(conditioning_set(g, v, regime)?
        .into_iter()
        .map(|u| g.node(u).id.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// The focal agent authors only the first responder to the seed.
    Single,
    /// The focal agent also authors every other node down the leftmost
    /// thread below its first reply (depths 1, 3, 5, ...).
    Multi,
    /// Focal agent authors exactly these node ids.
    Explicit(Vec<String>),
}

/// Nodes the focal agent authors under an injection schedule.
pub fn focal_nodes(g: &DiscussionGraph, injection: &Injection) -> Result<BTreeSet<usize>> {
    let first = g
        .children(DiscussionGraph::SEED)
        .next()
        .ok_or_else(|| Error::Structure("graph has no reply to the seed".into()))?;
    let mut set = BTreeSet::new();
    match injection {
        Injection::Single => {
            set.insert(first);
        }
        Injection::Multi => {
            let mut cur = Some(first);
            let mut step = 0usize;
            while let Some(v) = cur {
                if step.is_multiple_of(2) {
                    set.insert(v);
                }
                cur = g.children(v).next();
                step += 1;
            }
        }
        Injection::Explicit(ids) => {
            for id in ids {
                let v = g.index_of(id)?;
                if v == DiscussionGraph::SEED {
                    return Err(Error::Structure("the seed cannot be a focal node".into()));
                }
                set.insert(v);
            }
        }
    }
    Ok(set)
}

/// Assigns authorship: focal nodes to `A1`, the seed to the human, every
/// other reply round-robin over `A2..An` in generation order.
pub fn assign_agents(
    g: &DiscussionGraph,
    injection: &Injection,
    n_agents: u32,
) -> Result<DiscussionGraph> {
    if n_agents < 2 {
        return Err(Error::config(format!(
            "at least two agents are required, got {n_agents}"
        )));
    }
    let focal = focal_nodes(g, injection)?;
    let mut out = g.clone();
    let others = n_agents as usize - 1;
    let mut next = 0usize;
    for &v in g.order() {
        let node = &mut out.nodes[v];
        if v == DiscussionGraph::SEED {
            node.agent_id = HUMAN_AGENT.into();
            node.role = ROLE_SEED.into();
        } else if focal.contains(&v) {
            node.agent_id = FOCAL_AGENT.into();
            node.role = ROLE_FOCAL.into();
        } else {
            node.agent_id = format!("A{}", 2 + next % others);
            node.role = ROLE_DOWNSTREAM.into();
            next += 1;
        }
    }
    out.focal_set = focal;
    Ok(out)
}
