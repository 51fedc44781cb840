//! Undirected graphs over dense integer ids.
//!
//! A [`Graph`] is either homogeneous (one node set, e.g. user–user friendship)
//! or bipartite (two node sets, e.g. user–seller purchases). Bipartite edge
//! lists are read column-wise: the first label of a line belongs to the left
//! partition, the second to the right one.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: expected two whitespace-separated labels, got {content:?}")]
    Parse { line: usize, content: String },
    #[error("line {line}: self-loop on {label:?} in homogeneous graph")]
    SelfLoop { line: usize, label: String },
    #[error("line {line}: edge ({left:?}, {right:?}) does not cross the bipartition")]
    SamePartition {
        line: usize,
        left: String,
        right: String,
    },
    #[error("node id {id} out of range for graph with {len} nodes")]
    OutOfRange { id: usize, len: usize },
    #[error("unknown node label {0:?}")]
    UnknownLabel(String),
    #[error("label map line {line}: {reason}")]
    LabelMap { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphKind {
    Homogeneous,
    Bipartite,
}

impl GraphKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphKind::Homogeneous => "homogeneous",
            GraphKind::Bipartite => "bipartite",
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "homogeneous" => Ok(GraphKind::Homogeneous),
            "bipartite" => Ok(GraphKind::Bipartite),
            other => Err(format!("unknown graph kind {other:?}")),
        }
    }
}

/// Partition of a node in a bipartite graph. Homogeneous graphs put every
/// node on the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// Immutable undirected graph with sorted adjacency lists.
#[derive(Clone, Debug)]
pub struct Graph {
    kind: GraphKind,
    adjacency: Vec<Vec<usize>>,
    labels: Vec<String>,
    index: HashMap<String, usize>,
    sides: Vec<Side>,
    left_size: usize,
    edge_count: usize,
}

/// Incremental construction of a [`Graph`] from labeled edges.
///
/// Ids are assigned densely in first-appearance order. Duplicate edges are
/// collapsed.
#[derive(Debug)]
pub struct GraphBuilder {
    kind: GraphKind,
    labels: Vec<String>,
    index: HashMap<String, usize>,
    sides: Vec<Side>,
    edges: HashSet<(usize, usize)>,
    edge_order: Vec<(usize, usize)>,
    line: usize,
}

impl GraphBuilder {
    pub fn new(kind: GraphKind) -> Self {
        GraphBuilder {
            kind,
            labels: Vec::new(),
            index: HashMap::new(),
            sides: Vec::new(),
            edges: HashSet::new(),
            edge_order: Vec::new(),
            line: 0,
        }
    }

    fn intern(&mut self, label: &str, side: Side) -> (usize, Side) {
        if let Some(&id) = self.index.get(label) {
            return (id, self.sides[id]);
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        self.sides.push(side);
        (id, side)
    }

    /// Registers a node without edges. Returns its id.
    pub fn add_node(&mut self, label: &str, side: Side) -> usize {
        self.intern(label, side).0
    }

    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<(), GraphError> {
        self.line += 1;
        let line = self.line;
        self.add_edge_at(a, b, line)
    }

    fn add_edge_at(&mut self, a: &str, b: &str, line: usize) -> Result<(), GraphError> {
        match self.kind {
            GraphKind::Homogeneous => {
                if a == b {
                    return Err(GraphError::SelfLoop {
                        line,
                        label: a.to_string(),
                    });
                }
                let (u, _) = self.intern(a, Side::Left);
                let (v, _) = self.intern(b, Side::Left);
                self.insert_edge(u, v);
            }
            GraphKind::Bipartite => {
                let mismatch = |this: &Self| {
                    let left_bad = this
                        .index
                        .get(a)
                        .is_some_and(|&id| this.sides[id] != Side::Left);
                    let right_bad = this
                        .index
                        .get(b)
                        .is_some_and(|&id| this.sides[id] != Side::Right);
                    a == b || left_bad || right_bad
                };
                if mismatch(self) {
                    return Err(GraphError::SamePartition {
                        line,
                        left: a.to_string(),
                        right: b.to_string(),
                    });
                }
                let (u, _) = self.intern(a, Side::Left);
                let (v, _) = self.intern(b, Side::Right);
                self.insert_edge(u, v);
            }
        }
        Ok(())
    }

    fn insert_edge(&mut self, u: usize, v: usize) {
        let key = (u.min(v), u.max(v));
        if self.edges.insert(key) {
            self.edge_order.push((u, v));
        }
    }

    pub fn build(self) -> Graph {
        let n = self.labels.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &self.edge_order {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let left_size = self.sides.iter().filter(|&&s| s == Side::Left).count();
        Graph {
            kind: self.kind,
            adjacency,
            labels: self.labels,
            index: self.index,
            sides: self.sides,
            left_size,
            edge_count: self.edge_order.len(),
        }
    }
}

/// Reads a whitespace-separated edge list. Lines starting with `#` and blank
/// lines are skipped.
pub fn load_edge_list<R: BufRead>(source: R, kind: GraphKind) -> Result<Graph, GraphError> {
    let mut builder = GraphBuilder::new(kind);
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(a), Some(b), None) => builder.add_edge_at(a, b, lineno + 1)?,
            _ => {
                return Err(GraphError::Parse {
                    line: lineno + 1,
                    content: line.clone(),
                })
            }
        }
    }
    Ok(builder.build())
}

impl Graph {
    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn left_size(&self) -> usize {
        self.left_size
    }

    pub fn right_size(&self) -> usize {
        self.node_count() - self.left_size
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn side(&self, id: usize) -> Side {
        self.sides[id]
    }

    /// Sorted, distinct neighbors of `v`.
    pub fn neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        self.adjacency
            .get(v)
            .map(Vec::as_slice)
            .ok_or(GraphError::OutOfRange {
                id: v,
                len: self.node_count(),
            })
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency
            .get(u)
            .is_some_and(|adj| adj.binary_search(&v).is_ok())
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&v| u < v).map(|&v| (u, v)));
        }
        out
    }

    /// Edges oriented for output: left node first in bipartite graphs.
    pub fn oriented_edges(&self) -> Vec<(usize, usize)> {
        self.edges()
            .into_iter()
            .map(|(u, v)| {
                if self.kind == GraphKind::Bipartite && self.sides[u] == Side::Right {
                    (v, u)
                } else {
                    (u, v)
                }
            })
            .collect()
    }

    fn nodes_on(&self, side: Side) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&v| self.sides[v] == side)
            .collect()
    }

    /// Number of node pairs an edge could connect.
    pub fn admissible_pair_count(&self) -> u128 {
        match self.kind {
            GraphKind::Homogeneous => {
                let n = self.node_count() as u128;
                n * n.saturating_sub(1) / 2
            }
            GraphKind::Bipartite => self.left_size as u128 * self.right_size() as u128,
        }
    }

    /// Every admissible non-edge, in canonical orientation.
    pub fn complement_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        match self.kind {
            GraphKind::Homogeneous => {
                for u in 0..self.node_count() {
                    for v in u + 1..self.node_count() {
                        if !self.has_edge(u, v) {
                            out.push((u, v));
                        }
                    }
                }
            }
            GraphKind::Bipartite => {
                let right = self.nodes_on(Side::Right);
                for u in self.nodes_on(Side::Left) {
                    for &v in &right {
                        if !self.has_edge(u, v) {
                            out.push((u, v));
                        }
                    }
                }
            }
        }
        out
    }

    /// Writes the graph as an edge list that [`load_edge_list`] reads back.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (u, v) in self.oriented_edges() {
            writeln!(out, "{} {}", self.labels[u], self.labels[v])?;
        }
        Ok(())
    }

    pub fn write_label_map<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, label) in self.labels.iter().enumerate() {
            writeln!(out, "{id}\t{label}")?;
        }
        Ok(())
    }
}

/// Reads an `id<TAB>label` file into a label vector indexed by id.
pub fn read_label_map<R: BufRead>(source: R) -> Result<Vec<String>, GraphError> {
    let mut labels = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| GraphError::LabelMap {
            line: lineno + 1,
            reason: "missing tab separator".into(),
        })?;
        let id: usize = id.parse().map_err(|_| GraphError::LabelMap {
            line: lineno + 1,
            reason: format!("bad id {id:?}"),
        })?;
        if id != labels.len() {
            return Err(GraphError::LabelMap {
                line: lineno + 1,
                reason: format!("expected id {}, found {id}", labels.len()),
            });
        }
        labels.push(label.to_string());
    }
    Ok(labels)
}

/// Result of sampling non-edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    pub pairs: Vec<(usize, usize)>,
    /// Set when the complement held fewer than the requested pairs.
    pub exhausted: bool,
}

/// Draws `count` distinct non-edges uniformly from the admissible complement
/// (all unordered pairs for homogeneous graphs, left×right pairs for
/// bipartite ones).
///
/// Pairs are canonical: `u < v` for homogeneous graphs, `(left, right)` for
/// bipartite ones. Rejection sampling is tried for `100 * count` attempts;
/// after that the complement is enumerated explicitly.
pub fn complement_negative_sample<R: Rng + ?Sized>(
    g: &Graph,
    count: usize,
    rng: &mut R,
) -> NegativeSample {
    let complement_size = g.admissible_pair_count() - g.edge_count() as u128;
    if count as u128 >= complement_size {
        let mut pairs = g.complement_pairs();
        pairs.shuffle(rng);
        return NegativeSample {
            exhausted: (count as u128) > complement_size,
            pairs,
        };
    }

    let left = g.nodes_on(Side::Left);
    let right = g.nodes_on(Side::Right);
    let n = g.node_count();
    let draw = |rng: &mut R| -> (usize, usize) {
        match g.kind {
            GraphKind::Homogeneous => {
                let u = rng.random_range(0..n);
                let mut v = rng.random_range(0..n - 1);
                if v >= u {
                    v += 1;
                }
                (u.min(v), u.max(v))
            }
            GraphKind::Bipartite => (
                left[rng.random_range(0..left.len())],
                right[rng.random_range(0..right.len())],
            ),
        }
    };

    let mut chosen = HashSet::with_capacity(count);
    let mut pairs = Vec::with_capacity(count);
    let max_attempts = count.saturating_mul(100);
    let mut attempts = 0;
    while pairs.len() < count && attempts < max_attempts {
        attempts += 1;
        let (u, v) = draw(rng);
        if !g.has_edge(u, v) && chosen.insert((u, v)) {
            pairs.push((u, v));
        }
    }
    if pairs.len() < count {
        let mut rest: Vec<_> = g
            .complement_pairs()
            .into_iter()
            .filter(|p| !chosen.contains(p))
            .collect();
        rest.shuffle(rng);
        rest.truncate(count - pairs.len());
        pairs.extend(rest);
    }
    NegativeSample {
        pairs,
        exhausted: false,
    }
}
