//! The topological graph: Fuzzy-ART category nodes plus co-activation edges.
//!
//! Inputs are complement coded, so each node weight describes a
//! hyperrectangle in feature space. A node is *activated* when its match
//! degree clears the vigilance threshold; among activated nodes the one with
//! the highest choice value wins, learns, and records one co-activation with
//! every other activated node.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Hyperparams;
use crate::error::{Error, Result};

/// Index of a node. Nodes are never removed, so ids are dense and stable.
pub type NodeId = usize;

/// External class label as delivered by the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A feature vector with every component in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InputDomain { index, value });
        }
        Ok(FeatureVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        FeatureVector::new(Vec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Complement-coded input `[r, 1 - r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodedInput(Vec<f64>);

impl CodedInput {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Feature dimension `n_r` (half the coded length).
    pub fn feature_dim(&self) -> usize {
        self.0.len() / 2
    }

    /// L1 norm, summed as `(r_k + (1 - r_k))` per dimension. Each pair rounds
    /// to exactly 1.0, so the result is exactly `n_r`.
    pub fn l1_norm(&self) -> f64 {
        let n = self.feature_dim();
        (0..n).map(|k| self.0[k] + self.0[k + n]).sum()
    }
}

pub fn complement_code(r: &FeatureVector) -> CodedInput {
    let v = r.as_slice();
    let mut out = Vec::with_capacity(v.len() * 2);
    out.extend_from_slice(v);
    out.extend(v.iter().map(|x| 1.0 - x));
    CodedInput(out)
}

fn check_dims(input: &[f64], weight: &[f64]) -> Result<()> {
    if input.len() != weight.len() {
        return Err(Error::DimensionMismatch {
            expected: weight.len(),
            actual: input.len(),
        });
    }
    Ok(())
}

#[inline]
fn fuzzy_and_norm(input: &[f64], weight: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in input.iter().zip(weight) {
        acc += a.min(*b);
    }
    acc
}

#[inline]
fn l1(v: &[f64]) -> f64 {
    v.iter().sum()
}

/// `|I ∧ w|₁ / |I|₁`.
pub fn match_degree(input: &CodedInput, weight: &[f64]) -> Result<f64> {
    check_dims(input.as_slice(), weight)?;
    Ok(fuzzy_and_norm(input.as_slice(), weight) / input.l1_norm())
}

/// `|I ∧ w|₁ / (α + |w|₁)`.
pub fn choice_value(input: &CodedInput, weight: &[f64], alpha: f64) -> Result<f64> {
    check_dims(input.as_slice(), weight)?;
    Ok(fuzzy_and_norm(input.as_slice(), weight) / (alpha + l1(weight)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Complement-coded weight, length `2 * n_r`.
    pub w: Vec<f64>,
    /// Winning count.
    pub d: u64,
    /// Label density over the known classes, in class-set order.
    pub q: Vec<u64>,
    #[serde(skip)]
    w_norm: f64,
}

impl Node {
    fn new(id: NodeId, w: Vec<f64>, d: u64, q: Vec<u64>) -> Self {
        let w_norm = l1(&w);
        Node {
            id,
            w,
            d,
            q,
            w_norm,
        }
    }

    pub fn label_mass(&self) -> u64 {
        self.q.iter().sum()
    }
}

/// Co-activation counts, one entry per unordered node pair.
#[derive(Clone, Debug, Default)]
pub struct EdgeStore {
    counts: HashMap<(NodeId, NodeId), u64>,
    adjacency: Vec<Vec<NodeId>>,
}

#[inline]
fn pair(i: NodeId, j: NodeId) -> (NodeId, NodeId) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl EdgeStore {
    pub fn count(&self, i: NodeId, j: NodeId) -> u64 {
        self.counts.get(&pair(i, j)).copied().unwrap_or(0)
    }

    fn increment(&mut self, i: NodeId, j: NodeId, by: u64) {
        let entry = self.counts.entry(pair(i, j)).or_insert(0);
        if *entry == 0 && by > 0 {
            self.adjacency[i].push(j);
            self.adjacency[j].push(i);
        }
        *entry += by;
    }

    fn push_node(&mut self) {
        self.adjacency.push(Vec::new());
    }

    /// Number of unordered pairs with a non-zero count.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Sum of all pair counts.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// All edges sorted by `(i, j)` with `i < j`.
    pub fn sorted(&self) -> Vec<(NodeId, NodeId, u64)> {
        let mut out: Vec<_> = self.counts.iter().map(|(&(i, j), &c)| (i, j, c)).collect();
        out.sort_unstable();
        out
    }
}

/// Result of the activation pass for one input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Activation {
    /// Activated node ids in ascending order.
    pub activated: Vec<NodeId>,
    pub winner: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearnOutcome {
    pub winner: NodeId,
    pub created: bool,
    /// Nodes whose pair count with the winner was incremented.
    pub coactivated: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct TopoGraph {
    dim: usize,
    nodes: Vec<Node>,
    edges: EdgeStore,
    classes: Vec<ClassId>,
    label_total: u64,
}

impl TopoGraph {
    /// Empty graph over `dim`-dimensional feature vectors.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "feature dimension must be at least 1");
        TopoGraph {
            dim,
            nodes: Vec::new(),
            edges: EdgeStore::default(),
            classes: Vec::new(),
            label_total: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn edges(&self) -> &EdgeStore {
        &self.edges
    }

    /// Known classes in the order they were first observed. Position in this
    /// list is the index into every node's `q`.
    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn class_index(&self, class: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// Total number of labels added.
    pub fn label_total(&self) -> u64 {
        self.label_total
    }

    pub fn code(&self, r: &FeatureVector) -> Result<CodedInput> {
        if r.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: r.dim(),
            });
        }
        Ok(complement_code(r))
    }

    fn check_input(&self, input: &CodedInput) -> Result<()> {
        if input.as_slice().len() != 2 * self.dim {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.dim,
                actual: input.as_slice().len(),
            });
        }
        Ok(())
    }

    /// Vigilance test over every node and winner selection among the
    /// activated ones. Ties on the choice value go to the lowest id.
    pub fn activate(&self, input: &CodedInput, params: &Hyperparams) -> Activation {
        let norm = input.l1_norm();
        let x = input.as_slice();
        let mut activated = Vec::new();
        let mut best: Option<(NodeId, f64)> = None;
        for node in &self.nodes {
            let inter = fuzzy_and_norm(x, &node.w);
            if inter / norm >= params.rho {
                activated.push(node.id);
                let t = inter / (params.alpha + node.w_norm);
                if best.is_none_or(|(_, bt)| t > bt) {
                    best = Some((node.id, t));
                }
            }
        }
        Activation {
            activated,
            winner: best.map(|(id, _)| id),
        }
    }

    /// Evaluation-time winner: highest choice value over all nodes, vigilance
    /// ignored. Ties go to the lowest id.
    pub fn best_choice(&self, input: &CodedInput, alpha: f64) -> Option<NodeId> {
        let x = input.as_slice();
        let mut best: Option<(NodeId, f64)> = None;
        for node in &self.nodes {
            let t = fuzzy_and_norm(x, &node.w) / (alpha + node.w_norm);
            if best.is_none_or(|(_, bt)| t > bt) {
                best = Some((node.id, t));
            }
        }
        best.map(|(id, _)| id)
    }

    /// One node-and-edge formation step.
    pub fn learn_step(&mut self, input: &CodedInput, params: &Hyperparams) -> Result<LearnOutcome> {
        self.check_input(input)?;
        let Activation { activated, winner } = self.activate(input, params);
        let Some(winner) = winner else {
            let id = self.nodes.len();
            self.nodes.push(Node::new(
                id,
                input.as_slice().to_vec(),
                1,
                vec![0; self.classes.len()],
            ));
            self.edges.push_node();
            return Ok(LearnOutcome {
                winner: id,
                created: true,
                coactivated: Vec::new(),
            });
        };

        let node = &mut self.nodes[winner];
        // Same as β(I ∧ w) + (1 − β)w, arranged so rounding never grows w.
        for (w, &x) in node.w.iter_mut().zip(input.as_slice()) {
            let m = x.min(*w);
            *w -= params.beta * (*w - m);
        }
        node.w_norm = l1(&node.w);
        node.d += 1;

        let coactivated: Vec<NodeId> = activated.into_iter().filter(|&v| v != winner).collect();
        for &v in &coactivated {
            self.edges.increment(winner, v, 1);
        }
        Ok(LearnOutcome {
            winner,
            created: false,
            coactivated,
        })
    }

    pub fn count(&self, i: NodeId, j: NodeId) -> Result<u64> {
        self.node(i)?;
        self.node(j)?;
        Ok(self.edges.count(i, j))
    }

    /// `c_ij / (d_i + d_j)`.
    pub fn edge_weight(&self, i: NodeId, j: NodeId) -> Result<f64> {
        let (a, b) = (self.node(i)?, self.node(j)?);
        Ok(self.edge_weight_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn edge_weight_unchecked(&self, a: &Node, b: &Node) -> f64 {
        let c = self.edges.count(a.id, b.id);
        if c == 0 {
            0.0
        } else {
            c as f64 / (a.d + b.d) as f64
        }
    }

    /// Direct neighbours (non-zero pair count), in order of first
    /// co-activation.
    pub fn neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.node(i)?;
        Ok(&self.edges.adjacency[i])
    }

    /// Adds `class` to the known set, zero-extending every density. Returns
    /// the class index; adding a known class changes nothing.
    pub fn expand_classes(&mut self, class: ClassId) -> usize {
        if let Some(idx) = self.class_index(class) {
            return idx;
        }
        self.classes.push(class);
        for node in &mut self.nodes {
            node.q.push(0);
        }
        self.classes.len() - 1
    }

    pub fn add_label(&mut self, node: NodeId, class: ClassId) -> Result<()> {
        self.node(node)?;
        let idx = self.expand_classes(class);
        self.nodes[node].q[idx] += 1;
        self.label_total += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            v: 1,
            dim: self.dim,
            classes: self.classes.clone(),
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .sorted()
                .into_iter()
                .map(|(i, j, c)| EdgeRecord { i, j, c })
                .collect(),
        }
    }

    /// Rebuilds a graph from a snapshot, checking every structural invariant.
    pub fn from_snapshot(snap: &GraphSnapshot) -> Result<Self> {
        let bad = |reason: String| Error::State(format!("invalid snapshot: {reason}"));
        if snap.dim == 0 {
            return Err(bad("dim must be at least 1".into()));
        }
        let mut graph = TopoGraph::new(snap.dim);
        graph.classes = snap.classes.clone();
        for (k, n) in snap.nodes.iter().enumerate() {
            if n.id != k {
                return Err(bad(format!("node ids must be 0..n, found {} at {k}", n.id)));
            }
            if n.w.len() != 2 * snap.dim || n.w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(bad(format!("node {k} weight is malformed")));
            }
            if n.q.len() != snap.classes.len() {
                return Err(bad(format!("node {k} density has wrong dimension")));
            }
            if n.d == 0 {
                return Err(bad(format!("node {k} has zero winning count")));
            }
            graph.label_total += n.label_mass();
            graph
                .nodes
                .push(Node::new(k, n.w.clone(), n.d, n.q.clone()));
            graph.edges.push_node();
        }
        for e in &snap.edges {
            let (a, b) = (graph.node(e.i)?, graph.node(e.j)?);
            if e.i == e.j {
                return Err(bad(format!("self edge on {}", e.i)));
            }
            if e.c > a.d + b.d {
                return Err(bad(format!(
                    "count {} exceeds d_i + d_j for ({}, {})",
                    e.c, e.i, e.j
                )));
            }
            if graph.edges.count(e.i, e.j) != 0 {
                return Err(bad(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
            graph.edges.increment(e.i, e.j, e.c);
        }
        Ok(graph)
    }

    /// SHA-256 over the canonical snapshot encoding.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.snapshot()).expect("snapshot serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: NodeId,
    pub j: NodeId,
    pub c: u64,
}

/// Serializable form of the whole graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub v: u32,
    pub dim: usize,
    pub classes: Vec<ClassId>,
    pub nodes: Vec<Node>,
    pub edges: Vec<EdgeRecord>,
}
