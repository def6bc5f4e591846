//! The reasoning-process graph.
//!
//! Every thought the model produces is a node. Nodes live in exactly one of
//! two partitions: `present` (pending classification or expansion, kept in
//! insertion order) and `history` (retired). Edges only ever run from a node
//! to a child generated from it, so the graph is a tree rooted at the task
//! description.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Serialization format version of [`GraphDocument`].
pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// Default ancestor-path bound used when building classification context.
pub const DEFAULT_BETA: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The four node classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Stop = 1,
    Continue = 2,
    Final = 3,
    Backtrack = 4,
}

impl Label {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Label::Stop),
            2 => Some(Label::Continue),
            3 => Some(Label::Final),
            4 => Some(Label::Backtrack),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        Label::from_code(code)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 1..=4, got {code}")))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("task description must not be empty")]
    InvalidTask,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} has already been retired to history")]
    StaleNode(NodeId),
    #[error("the root node cannot be backtracked")]
    RootBacktrack,
    #[error("node {0} is labeled final and cannot be relabeled")]
    FinalLocked(NodeId),
    #[error("node {0} must be pending and labeled Continue to be expanded")]
    IllegalExpansion(NodeId),
    #[error("expansion of node {0} needs at least one thought")]
    EmptyExpansion(NodeId),
    #[error("node {0} cannot be regenerated")]
    IllegalRegeneration(NodeId),
    #[error("feature for node {node} has length {got}, expected {expected}")]
    FeatureDimension {
        node: NodeId,
        expected: usize,
        got: usize,
    },
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtNode {
    pub id: NodeId,
    pub text: String,
    pub label: Option<Label>,
    pub parent: Option<NodeId>,
    pub step_created: u32,
    pub eval_score: Option<u8>,
    pub feature: Vec<f64>,
}

/// What `apply_label` did to set membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum MembershipEffect {
    /// Node moved to history.
    Retired,
    /// Node stays pending until its children are attached.
    AwaitingExpansion,
    /// Node is a final answer; the episode should stop.
    Terminal,
    /// Node retired and its parent returned to `present`.
    Backtracked { parent: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    Continue,
    FinalFound(NodeId),
    AllStopped,
}

/// The induced subgraph of nodes that reach `focus` in fewer than `beta` hops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AncestorSubgraph {
    pub focus: NodeId,
    pub node_ids: BTreeSet<NodeId>,
    pub edge_ids: BTreeSet<(NodeId, NodeId)>,
}

impl AncestorSubgraph {
    /// Node ids ordered from the most distant ancestor down to the focus.
    pub fn ordered_ids(&self, graph: &ReasoningGraph) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.node_ids.iter().copied().collect();
        ids.sort_by_key(|&id| (std::cmp::Reverse(graph.depth_between(id, self.focus)), id));
        ids
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningGraph {
    nodes: Vec<ThoughtNode>,
    edges: Vec<(NodeId, NodeId)>,
    children: Vec<Vec<NodeId>>,
    present: Vec<NodeId>,
    history: BTreeSet<NodeId>,
    step: u32,
}

impl ReasoningGraph {
    pub fn new(task_description: &str) -> Result<Self, GraphError> {
        if task_description.trim().is_empty() {
            return Err(GraphError::InvalidTask);
        }
        let root = ThoughtNode {
            id: NodeId(0),
            text: task_description.to_string(),
            label: None,
            parent: None,
            step_created: 1,
            eval_score: None,
            feature: Vec::new(),
        };
        Ok(Self {
            nodes: vec![root],
            edges: Vec::new(),
            children: vec![Vec::new()],
            present: vec![NodeId(0)],
            history: BTreeSet::new(),
            step: 1,
        })
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn advance_step(&mut self) {
        self.step += 1;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[ThoughtNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn present(&self) -> &[NodeId] {
        &self.present
    }

    pub fn history(&self) -> &BTreeSet<NodeId> {
        &self.history
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Result<&ThoughtNode, GraphError> {
        self.nodes.get(id.index()).ok_or(GraphError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut ThoughtNode, GraphError> {
        self.nodes.get_mut(id.index()).ok_or(GraphError::UnknownNode(id))
    }

    pub fn children_of(&self, id: NodeId) -> &[NodeId] {
        self.children.get(id.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_present(&self, id: NodeId) -> bool {
        self.present.contains(&id)
    }

    /// Ids from the root down to `id`, inclusive.
    pub fn path_from_root(&self, id: NodeId) -> Result<Vec<NodeId>, GraphError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?.parent;
        while let Some(p) = cur {
            path.push(p);
            cur = self.nodes[p.index()].parent;
        }
        path.reverse();
        Ok(path)
    }

    /// Hops from `ancestor` down to `node`; `usize::MAX` if unrelated.
    fn depth_between(&self, ancestor: NodeId, node: NodeId) -> usize {
        let mut hops = 0;
        let mut cur = Some(node);
        while let Some(c) = cur {
            if c == ancestor {
                return hops;
            }
            hops += 1;
            cur = self.nodes[c.index()].parent;
        }
        usize::MAX
    }

    pub fn set_feature(&mut self, id: NodeId, feature: Vec<f64>) -> Result<(), GraphError> {
        let node = self.node_mut(id)?;
        node.feature = feature;
        Ok(())
    }

    pub fn set_eval_score(&mut self, id: NodeId, score: u8) -> Result<(), GraphError> {
        self.node_mut(id)?.eval_score = Some(score.min(10));
        Ok(())
    }

    /// Nodes with a directed path of length `< beta` into `v`, plus `v`,
    /// and every edge among them.
    pub fn ancestor_subgraph(&self, v: NodeId, beta: usize) -> Result<AncestorSubgraph, GraphError> {
        self.node(v)?;
        let mut node_ids = BTreeSet::new();
        node_ids.insert(v);
        let mut hops = 0;
        let mut cur = self.nodes[v.index()].parent;
        while let Some(p) = cur {
            hops += 1;
            if hops >= beta {
                break;
            }
            node_ids.insert(p);
            cur = self.nodes[p.index()].parent;
        }
        let edge_ids = self
            .edges
            .iter()
            .filter(|(u, w)| node_ids.contains(u) && node_ids.contains(w))
            .copied()
            .collect();
        Ok(AncestorSubgraph {
            focus: v,
            node_ids,
            edge_ids,
        })
    }

    pub fn apply_label(&mut self, v: NodeId, label: Label) -> Result<MembershipEffect, GraphError> {
        let node = self.node(v)?;
        if self.history.contains(&v) {
            return Err(GraphError::StaleNode(v));
        }
        if node.label == Some(Label::Final) {
            return if label == Label::Final {
                Ok(MembershipEffect::Terminal)
            } else {
                Err(GraphError::FinalLocked(v))
            };
        }
        let parent = node.parent;
        match label {
            Label::Stop => {
                self.node_mut(v)?.label = Some(Label::Stop);
                self.retire(v);
                Ok(MembershipEffect::Retired)
            }
            Label::Continue => {
                self.node_mut(v)?.label = Some(Label::Continue);
                Ok(MembershipEffect::AwaitingExpansion)
            }
            Label::Final => {
                self.node_mut(v)?.label = Some(Label::Final);
                Ok(MembershipEffect::Terminal)
            }
            Label::Backtrack => {
                let parent = parent.ok_or(GraphError::RootBacktrack)?;
                self.node_mut(v)?.label = Some(Label::Backtrack);
                self.retire(v);
                if self.history.remove(&parent) {
                    // the parent is reclassified from scratch
                    self.nodes[parent.index()].label = None;
                    self.present.push(parent);
                }
                Ok(MembershipEffect::Backtracked { parent })
            }
        }
    }

    fn retire(&mut self, v: NodeId) {
        self.present.retain(|&p| p != v);
        self.history.insert(v);
    }

    pub fn add_children(&mut self, parent: NodeId, texts: &[String]) -> Result<Vec<NodeId>, GraphError> {
        let node = self.node(parent)?;
        if node.label != Some(Label::Continue) || !self.is_present(parent) {
            return Err(GraphError::IllegalExpansion(parent));
        }
        if texts.is_empty() {
            return Err(GraphError::EmptyExpansion(parent));
        }
        let mut ids = Vec::with_capacity(texts.len());
        for text in texts {
            let id = NodeId(self.nodes.len() as u32);
            self.nodes.push(ThoughtNode {
                id,
                text: text.clone(),
                label: None,
                parent: Some(parent),
                step_created: self.step,
                eval_score: None,
                feature: Vec::new(),
            });
            self.children.push(Vec::new());
            self.children[parent.index()].push(id);
            self.edges.push((parent, id));
            self.present.push(id);
            ids.push(id);
        }
        self.retire(parent);
        Ok(ids)
    }

    /// Replaces the text of a stopped node in place and returns it to
    /// `present` unlabeled.
    pub fn regenerate(&mut self, v: NodeId, text: String) -> Result<(), GraphError> {
        let node = self.node(v)?;
        if node.label != Some(Label::Stop) || node.parent.is_none() || !self.history.contains(&v) {
            return Err(GraphError::IllegalRegeneration(v));
        }
        let step = self.step;
        let node = self.node_mut(v)?;
        node.text = text;
        node.label = None;
        node.eval_score = None;
        node.feature.clear();
        node.step_created = step;
        self.history.remove(&v);
        self.present.push(v);
        Ok(())
    }

    pub fn termination_state(&self) -> Termination {
        if let Some(n) = self.nodes.iter().find(|n| n.label == Some(Label::Final)) {
            return Termination::FinalFound(n.id);
        }
        let all_stopped = self
            .present
            .iter()
            .all(|&id| self.nodes[id.index()].label == Some(Label::Stop));
        if all_stopped {
            Termination::AllStopped
        } else {
            Termination::Continue
        }
    }

    /// Checks every structural invariant. Used by tests and by document loading.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::Malformed(m));
        if self.nodes.is_empty() {
            return bad("graph has no nodes".into());
        }
        let mut roots = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.index() != i {
                return bad(format!("node at position {i} has id {}", n.id));
            }
            match n.parent {
                None => roots += 1,
                Some(p) if p.index() >= i => {
                    return bad(format!("node {} has parent {p} created after it", n.id))
                }
                Some(_) => {}
            }
        }
        if roots != 1 || self.nodes[0].parent.is_some() {
            return bad(format!("expected exactly one root at id 0, found {roots}"));
        }
        let mut in_degree = vec![0usize; self.nodes.len()];
        for &(u, w) in &self.edges {
            if !self.contains(u) || !self.contains(w) {
                return bad(format!("edge ({u},{w}) has a missing endpoint"));
            }
            if self.nodes[w.index()].parent != Some(u) {
                return bad(format!("edge ({u},{w}) disagrees with parent pointer"));
            }
            in_degree[w.index()] += 1;
        }
        for (i, d) in in_degree.iter().enumerate() {
            let expected = usize::from(i != 0);
            if *d != expected {
                return bad(format!("node {i} has in-degree {d}"));
            }
        }
        let present: BTreeSet<NodeId> = self.present.iter().copied().collect();
        if present.len() != self.present.len() {
            return bad("present contains duplicates".into());
        }
        if !present.is_disjoint(&self.history) {
            return bad("present and history overlap".into());
        }
        if present.len() + self.history.len() != self.nodes.len() {
            return bad("present and history do not cover every node".into());
        }
        Ok(())
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            version: GRAPH_FORMAT_VERSION,
            step: self.step,
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|&(u, w)| [u, w]).collect(),
            present: self.present.clone(),
            history: self.history.iter().copied().collect(),
        }
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        if doc.version != GRAPH_FORMAT_VERSION {
            return Err(GraphError::Malformed(format!(
                "unsupported graph version {}",
                doc.version
            )));
        }
        let mut children = vec![Vec::new(); doc.nodes.len()];
        let edges: Vec<(NodeId, NodeId)> = doc.edges.iter().map(|e| (e[0], e[1])).collect();
        for &(u, w) in &edges {
            if u.index() >= children.len() {
                return Err(GraphError::Malformed(format!("edge source {u} out of range")));
            }
            children[u.index()].push(w);
        }
        let graph = Self {
            nodes: doc.nodes,
            edges,
            children,
            present: doc.present,
            history: doc.history.into_iter().collect(),
            step: doc.step,
        };
        graph.validate()?;
        Ok(graph)
    }
}

/// Versioned JSON form of a [`ReasoningGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: u32,
    pub step: u32,
    pub nodes: Vec<ThoughtNode>,
    pub edges: Vec<[NodeId; 2]>,
    pub present: Vec<NodeId>,
    pub history: Vec<NodeId>,
}

impl Serialize for ReasoningGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReasoningGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = GraphDocument::deserialize(d)?;
        ReasoningGraph::from_document(doc).map_err(serde::de::Error::custom)
    }
}

/// Reverse breadth-first search over the edge list, bounded at `beta - 1`
/// hops. Independent of the parent-pointer walk used by
/// [`ReasoningGraph::ancestor_subgraph`]; kept public for cross-checks.
pub fn reverse_bfs_ancestors(
    edges: &[(NodeId, NodeId)],
    v: NodeId,
    beta: usize,
) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::new();
    if beta == 0 {
        return seen;
    }
    seen.insert(v);
    let mut queue = VecDeque::from([(v, 0usize)]);
    while let Some((w, depth)) = queue.pop_front() {
        if depth + 1 >= beta {
            continue;
        }
        for &(u, x) in edges {
            if x == w && seen.insert(u) {
                queue.push_back((u, depth + 1));
            }
        }
    }
    seen
}
