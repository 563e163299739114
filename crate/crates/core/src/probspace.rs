//! Finite filtered probability spaces represented as scenario trees.
//!
//! A tree has one root at depth 0 and all leaves at the final depth of its
//! [`TimeGrid`]. Leaves are the atoms of the space; the sigma-field at depth
//! `k` is generated by the nodes at that depth. Trees are immutable once
//! built and are shared between processes through `Arc`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on total atom mass.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Strictly increasing times in `[0, 1]`, starting at 0 and ending at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        let problems = Self::check(&times);
        if problems.is_empty() {
            Ok(Self { times })
        } else {
            Err(Error::InvalidTree(problems))
        }
    }

    /// `steps + 1` equally spaced points.
    pub fn uniform(steps: usize) -> Self {
        assert!(steps >= 1, "a time grid needs at least one step");
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
        times[steps] = 1.0;
        Self { times }
    }

    fn check(times: &[f64]) -> Vec<String> {
        let mut out = Vec::new();
        if times.len() < 2 {
            out.push(format!("time grid needs at least 2 points, got {}", times.len()));
            return out;
        }
        if times[0] != 0.0 {
            out.push(format!("time grid must start at 0, starts at {}", times[0]));
        }
        if times[times.len() - 1] != 1.0 {
            out.push(format!(
                "time grid must end at 1, ends at {}",
                times[times.len() - 1]
            ));
        }
        for (k, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                out.push(format!("time grid not strictly increasing at index {}", k + 1));
            }
        }
        out
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Index of the last time point.
    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TimeGrid::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

/// A single invariant violation found by [`validate_tree`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TimeGrid(String),
    NodeId { position: usize, id: usize },
    RootCount(usize),
    ParentOutOfRange { node: usize, parent: usize },
    Cycle { node: usize },
    DepthMismatch { node: usize, declared: usize, actual: usize },
    DepthBeyondHorizon { node: usize, depth: usize },
    ShallowLeaf { node: usize, depth: usize },
    AtomPath { atom: usize, reason: String },
    LeafWithoutAtom { node: usize },
    LeafWithSeveralAtoms { node: usize },
    ZeroMassAtom { atom: usize, prob: f64 },
    MassNotOne { total: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TimeGrid(msg) => write!(f, "{msg}"),
            Violation::NodeId { position, id } => {
                write!(f, "node at position {position} has id {id}; ids must equal positions")
            }
            Violation::RootCount(n) => write!(f, "expected exactly one root, found {n}"),
            Violation::ParentOutOfRange { node, parent } => {
                write!(f, "node {node} has out-of-range parent {parent}")
            }
            Violation::Cycle { node } => write!(f, "node {node} lies on a parent cycle"),
            Violation::DepthMismatch {
                node,
                declared,
                actual,
            } => write!(f, "node {node} declares depth {declared} but sits at depth {actual}"),
            Violation::DepthBeyondHorizon { node, depth } => {
                write!(f, "node {node} at depth {depth} is beyond the time grid")
            }
            Violation::ShallowLeaf { node, depth } => {
                write!(f, "leaf {node} at depth {depth} does not reach the horizon")
            }
            Violation::AtomPath { atom, reason } => write!(f, "atom {atom}: {reason}"),
            Violation::LeafWithoutAtom { node } => write!(f, "leaf {node} carries no atom"),
            Violation::LeafWithSeveralAtoms { node } => {
                write!(f, "leaf {node} carries more than one atom")
            }
            Violation::ZeroMassAtom { atom, prob } => {
                write!(f, "zero-mass atom {atom} (probability {prob})")
            }
            Violation::MassNotOne { total } => write!(f, "atom mass {total} ≠ 1"),
        }
    }
}

/// JSON form of a tree: `{times, nodes: [{id, parent, depth}], atoms: [{path, prob}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDocument {
    pub times: Vec<f64>,
    pub nodes: Vec<NodeRecord>,
    pub atoms: Vec<AtomRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomRecord {
    /// Node ids from the root to the leaf.
    pub path: Vec<usize>,
    pub prob: f64,
}

/// Checks every structural and probabilistic invariant of a tree document.
/// Returns an empty list iff the document describes a well-formed tree.
pub fn validate_tree(doc: &TreeDocument) -> Vec<Violation> {
    analyse(doc).err().unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    grid: TimeGrid,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    weight: Vec<f64>,
    levels: Vec<Vec<usize>>,
    level_pos: Vec<usize>,
    atom_leaf: Vec<usize>,
    leaf_atom: Vec<Option<usize>>,
    atom_prob: Vec<f64>,
}

fn analyse(doc: &TreeDocument) -> std::result::Result<ScenarioTree, Vec<Violation>> {
    let mut v = Vec::new();
    let grid_problems = TimeGrid::check(&doc.times);
    v.extend(grid_problems.iter().cloned().map(Violation::TimeGrid));
    let n = doc.nodes.len();
    for (pos, node) in doc.nodes.iter().enumerate() {
        if node.id != pos {
            v.push(Violation::NodeId { position: pos, id: node.id });
        }
    }
    let roots = doc.nodes.iter().filter(|nd| nd.parent.is_none()).count();
    if roots != 1 {
        v.push(Violation::RootCount(roots));
    }
    for nd in &doc.nodes {
        if let Some(p) = nd.parent {
            if p >= n {
                v.push(Violation::ParentOutOfRange { node: nd.id, parent: p });
            }
        }
    }
    if !v.is_empty() {
        return Err(v);
    }
    let parent: Vec<Option<usize>> = doc.nodes.iter().map(|nd| nd.parent).collect();

    // depth by walking parents, bounded by n steps
    let mut depth = vec![0usize; n];
    for i in 0..n {
        let mut d = 0;
        let mut cur = i;
        let mut cyclic = false;
        while let Some(p) = parent[cur] {
            d += 1;
            cur = p;
            if d > n {
                cyclic = true;
                break;
            }
        }
        if cyclic {
            v.push(Violation::Cycle { node: i });
        }
        depth[i] = d;
    }
    if !v.is_empty() {
        return Err(v);
    }
    let horizon = doc.times.len().saturating_sub(1);
    let mut children = vec![Vec::new(); n];
    for i in 0..n {
        if let Some(p) = parent[i] {
            children[p].push(i);
        }
        if doc.nodes[i].depth != depth[i] {
            v.push(Violation::DepthMismatch {
                node: i,
                declared: doc.nodes[i].depth,
                actual: depth[i],
            });
        }
        if depth[i] > horizon {
            v.push(Violation::DepthBeyondHorizon { node: i, depth: depth[i] });
        }
    }
    for i in 0..n {
        if children[i].is_empty() && depth[i] != horizon {
            v.push(Violation::ShallowLeaf { node: i, depth: depth[i] });
        }
    }

    let mut leaf_atom = vec![None; n];
    let mut atom_leaf = Vec::with_capacity(doc.atoms.len());
    for (a, atom) in doc.atoms.iter().enumerate() {
        let Some(&leaf) = atom.path.last() else {
            v.push(Violation::AtomPath { atom: a, reason: "empty path".into() });
            continue;
        };
        if leaf >= n {
            v.push(Violation::AtomPath { atom: a, reason: format!("unknown node {leaf}") });
            continue;
        }
        let mut chain = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = parent[cur] {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        if chain != atom.path {
            v.push(Violation::AtomPath {
                atom: a,
                reason: "path is not the root-to-leaf chain of its last node".into(),
            });
            continue;
        }
        if !children[leaf].is_empty() {
            v.push(Violation::AtomPath { atom: a, reason: format!("node {leaf} is not a leaf") });
            continue;
        }
        if leaf_atom[leaf].is_some() {
            v.push(Violation::LeafWithSeveralAtoms { node: leaf });
            continue;
        }
        leaf_atom[leaf] = Some(a);
        atom_leaf.push(leaf);
        if !(atom.prob > 0.0) || !atom.prob.is_finite() {
            v.push(Violation::ZeroMassAtom { atom: a, prob: atom.prob });
        }
    }
    for i in 0..n {
        if children[i].is_empty() && leaf_atom[i].is_none() {
            v.push(Violation::LeafWithoutAtom { node: i });
        }
    }
    let total: f64 = doc.atoms.iter().map(|a| a.prob).sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        v.push(Violation::MassNotOne { total });
    }
    if !v.is_empty() {
        return Err(v);
    }

    let mut levels = vec![Vec::new(); horizon + 1];
    let mut level_pos = vec![0; n];
    for i in 0..n {
        level_pos[i] = levels[depth[i]].len();
        levels[depth[i]].push(i);
    }
    let atom_prob: Vec<f64> = doc.atoms.iter().map(|a| a.prob).collect();
    let mut weight = vec![0.0; n];
    for (a, &leaf) in atom_leaf.iter().enumerate() {
        weight[leaf] = atom_prob[a];
    }
    for k in (1..=horizon).rev() {
        for &i in &levels[k] {
            if let Some(p) = parent[i] {
                weight[p] += weight[i];
            }
        }
    }
    Ok(ScenarioTree {
        grid: TimeGrid { times: doc.times.clone() },
        parent,
        depth,
        children,
        weight,
        levels,
        level_pos,
        atom_leaf,
        leaf_atom,
        atom_prob,
    })
}

impl ScenarioTree {
    pub fn from_document(doc: &TreeDocument) -> Result<Self> {
        analyse(doc).map_err(|v| Error::InvalidTree(v.iter().map(|x| x.to_string()).collect()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TreeDocument =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_document(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("tree documents serialise")
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            times: self.grid.times.clone(),
            nodes: (0..self.num_nodes())
                .map(|i| NodeRecord { id: i, parent: self.parent[i], depth: self.depth[i] })
                .collect(),
            atoms: (0..self.num_atoms())
                .map(|a| AtomRecord { path: self.atom_path(a), prob: self.atom_prob[a] })
                .collect(),
        }
    }

    /// One period, root plus one leaf per probability.
    pub fn one_period(probs: &[f64]) -> Result<Self> {
        let mut b = TreeBuilder::new(TimeGrid::uniform(1));
        let root = b.root();
        for &p in probs {
            b.add_child(root, p);
        }
        b.build()
    }

    /// Re-validates the stored tree. Always empty for constructed trees.
    pub fn validate(&self) -> Vec<Violation> {
        validate_tree(&self.to_document())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.grid.horizon()
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.atom_leaf.len()
    }

    pub fn root(&self) -> usize {
        self.levels[0][0]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    /// Node ids at a given depth.
    pub fn level(&self, depth: usize) -> &[usize] {
        &self.levels[depth]
    }

    /// Position of a node inside its level.
    pub fn level_position(&self, node: usize) -> usize {
        self.level_pos[node]
    }

    /// P(node): total mass of the atoms below it.
    pub fn weight(&self, node: usize) -> f64 {
        self.weight[node]
    }

    /// P(child | parent).
    pub fn transition_prob(&self, child: usize) -> f64 {
        match self.parent[child] {
            Some(p) => self.weight[child] / self.weight[p],
            None => 1.0,
        }
    }

    pub fn atom_prob(&self, atom: usize) -> f64 {
        self.atom_prob[atom]
    }

    pub fn atom_probs(&self) -> &[f64] {
        &self.atom_prob
    }

    pub fn atom_leaf(&self, atom: usize) -> usize {
        self.atom_leaf[atom]
    }

    pub fn leaf_atom(&self, node: usize) -> Option<usize> {
        self.leaf_atom[node]
    }

    pub fn ancestor(&self, mut node: usize, depth: usize) -> usize {
        while self.depth[node] > depth {
            node = self.parent[node].expect("non-root node has a parent");
        }
        node
    }

    pub fn atom_path(&self, atom: usize) -> Vec<usize> {
        let mut chain = vec![self.atom_leaf[atom]];
        while let Some(p) = self.parent[*chain.last().unwrap()] {
            chain.push(p);
        }
        chain.reverse();
        chain
    }

    /// Nodes ordered by decreasing depth (leaves first).
    pub fn bottom_up(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().rev().flat_map(|l| l.iter().copied())
    }

    /// Nodes ordered by increasing depth (root first).
    pub fn top_down(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().flat_map(|l| l.iter().copied())
    }

    /// `E[value | node]` for every node, given one value per atom.
    pub fn node_expectations(&self, leaf_values: &[f64]) -> Result<Vec<f64>> {
        if leaf_values.len() != self.num_atoms() {
            return Err(Error::LengthMismatch {
                expected: self.num_atoms(),
                got: leaf_values.len(),
            });
        }
        let mut mass = vec![0.0; self.num_nodes()];
        for (a, &leaf) in self.atom_leaf.iter().enumerate() {
            mass[leaf] = self.atom_prob[a] * leaf_values[a];
        }
        for node in self.bottom_up().collect::<Vec<_>>() {
            if let Some(p) = self.parent[node] {
                mass[p] += mass[node];
            }
        }
        Ok(mass.iter().zip(&self.weight).map(|(m, w)| m / w).collect())
    }

    /// Expectation of a per-atom quantity under the tree's measure.
    pub fn expectation(&self, leaf_values: &[f64]) -> f64 {
        leaf_values.iter().zip(&self.atom_prob).map(|(v, p)| v * p).sum()
    }

    /// Value of a node-level quantity at depth `depth`, read along each atom.
    pub fn lift_to_atoms(&self, level_values: &[f64], depth: usize) -> Result<Vec<f64>> {
        self.check_depth(depth)?;
        if level_values.len() != self.levels[depth].len() {
            return Err(Error::LengthMismatch {
                expected: self.levels[depth].len(),
                got: level_values.len(),
            });
        }
        Ok((0..self.num_atoms())
            .map(|a| level_values[self.level_pos[self.ancestor(self.atom_leaf[a], depth)]])
            .collect())
    }

    pub(crate) fn check_depth(&self, depth: usize) -> Result<()> {
        if depth > self.horizon() {
            Err(Error::DepthOutOfRange { depth, max: self.horizon() })
        } else {
            Ok(())
        }
    }
}

/// Conditional expectation of per-atom values given the sigma-field at
/// `depth`; one value per node of that level, ordered as [`ScenarioTree::level`].
pub fn condexp(tree: &ScenarioTree, leaf_values: &[f64], depth: usize) -> Result<Vec<f64>> {
    tree.check_depth(depth)?;
    let all = tree.node_expectations(leaf_values)?;
    Ok(tree.level(depth).iter().map(|&n| all[n]).collect())
}

/// Incremental construction with conditional (branch) probabilities.
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    grid: TimeGrid,
    parent: Vec<Option<usize>>,
    branch_prob: Vec<f64>,
}

impl TreeBuilder {
    pub fn new(grid: TimeGrid) -> Self {
        Self { grid, parent: vec![None], branch_prob: vec![1.0] }
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Adds a child reached from `parent` with conditional probability `prob`.
    pub fn add_child(&mut self, parent: usize, prob: f64) -> usize {
        self.parent.push(Some(parent));
        self.branch_prob.push(prob);
        self.parent.len() - 1
    }

    pub fn build(self) -> Result<ScenarioTree> {
        let n = self.parent.len();
        let mut depth = vec![0usize; n];
        let mut mass = vec![1.0; n];
        for i in 1..n {
            let p = self.parent[i].expect("builder nodes have parents");
            depth[i] = depth[p] + 1;
            mass[i] = mass[p] * self.branch_prob[i];
        }
        let mut has_child = vec![false; n];
        for p in self.parent.iter().flatten() {
            has_child[*p] = true;
        }
        let nodes = (0..n)
            .map(|i| NodeRecord { id: i, parent: self.parent[i], depth: depth[i] })
            .collect();
        let mut atoms = Vec::new();
        for i in 0..n {
            if !has_child[i] {
                let mut path = vec![i];
                let mut cur = i;
                while let Some(p) = self.parent[cur] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                atoms.push(AtomRecord { path, prob: mass[i] });
            }
        }
        ScenarioTree::from_document(&TreeDocument { times: self.grid.times, nodes, atoms })
    }
}

/// Shape limits for [`random_tree`].
#[derive(Debug, Clone, Copy)]
pub struct RandomTreeSpec {
    pub max_depth: usize,
    pub max_atoms: usize,
    pub max_branching: usize,
}

impl Default for RandomTreeSpec {
    fn default() -> Self {
        Self { max_depth: 4, max_atoms: 16, max_branching: 3 }
    }
}

/// Random tree with 1..=`max_depth` periods and at most `max_atoms` atoms.
/// Branch probabilities are bounded away from zero.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, spec: RandomTreeSpec) -> Arc<ScenarioTree> {
    let periods = rng.gen_range(1..=spec.max_depth.max(1));
    let mut b = TreeBuilder::new(TimeGrid::uniform(periods));
    let mut frontier = vec![b.root()];
    for k in 0..periods {
        let remaining_levels = periods - k - 1;
        let mut next = Vec::new();
        let mut budget = spec.max_atoms.max(1);
        for (idx, &node) in frontier.iter().enumerate() {
            // keep enough room for the nodes still waiting in this level
            let reserved = frontier.len() - idx - 1;
            let cap = (budget - reserved).clamp(1, spec.max_branching.max(1));
            let cap = if remaining_levels > 0 { cap.min(2) } else { cap };
            let branches = rng.gen_range(1..=cap);
            budget -= branches;
            let raw: Vec<f64> = (0..branches).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            for r in raw {
                next.push(b.add_child(node, r / total));
            }
        }
        frontier = next;
    }
    Arc::new(b.build().expect("random trees are well formed"))
}
