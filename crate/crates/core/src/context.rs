//! Neighborhood-permutation training contexts.
//!
//! For every node with at least one neighbor, `n` independent uniform
//! permutations of its neighbor list are drawn and cut into consecutive
//! chunks of at most `k` members. Each chunk plus its root node forms one
//! training group; every node of a group predicts every other node of it.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::Graph;
use crate::seed;

pub const DEFAULT_CHUNK_SIZE: usize = 5;
pub const DEFAULT_PERMUTATIONS: usize = 5;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("chunk size must be at least 1")]
    ZeroChunk,
    #[error("permutation count must be at least 1")]
    ZeroPermutations,
    #[error("corpus line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One chunk of a root's permuted neighborhood.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub root: usize,
    pub members: Vec<usize>,
}

impl Group {
    /// Size of the group including the root.
    pub fn size(&self) -> usize {
        self.members.len() + 1
    }

    /// Root followed by members.
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.root).chain(self.members.iter().copied())
    }

    /// All ordered `(center, context)` pairs between distinct nodes of the group.
    pub fn prediction_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes().enumerate().flat_map(move |(i, a)| {
            self.nodes()
                .enumerate()
                .filter(move |&(j, _)| j != i)
                .map(move |(_, b)| (a, b))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupCorpus {
    pub groups: Vec<Group>,
    pub chunk_size: usize,
    pub permutations: usize,
    pub vocab_size: usize,
    pub graph_id: String,
}

/// Builds the group corpus of `g`.
///
/// Each node draws its permutations from its own stream derived from
/// `(seed, node)`, so output is identical for any rayon pool size.
pub fn generate_groups(
    g: &Graph,
    chunk_size: usize,
    permutations: usize,
    seed: u64,
    graph_id: &str,
) -> Result<GroupCorpus, ContextError> {
    if chunk_size == 0 {
        return Err(ContextError::ZeroChunk);
    }
    if permutations == 0 {
        return Err(ContextError::ZeroPermutations);
    }
    let per_node: Vec<Vec<Group>> = (0..g.node_count())
        .into_par_iter()
        .map(|root| {
            let adj = g.neighbors(root).expect("id in range");
            if adj.is_empty() {
                return Vec::new();
            }
            let mut rng = seed::rng(seed::mix(seed, root as u64));
            let mut perm = adj.to_vec();
            let mut out = Vec::with_capacity(permutations * adj.len().div_ceil(chunk_size));
            for _ in 0..permutations {
                perm.shuffle(&mut rng);
                out.extend(perm.chunks(chunk_size).map(|chunk| Group {
                    root,
                    members: chunk.to_vec(),
                }));
            }
            out
        })
        .collect();
    Ok(GroupCorpus {
        groups: per_node.into_iter().flatten().collect(),
        chunk_size,
        permutations,
        vocab_size: g.node_count(),
        graph_id: graph_id.to_string(),
    })
}

impl GroupCorpus {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Streams the prediction pairs without materializing them.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.groups.iter().flat_map(Group::prediction_pairs)
    }

    /// How often each node occurs as a prediction target.
    pub fn context_frequencies(&self) -> Vec<u64> {
        let mut freq = vec![0u64; self.vocab_size];
        for group in &self.groups {
            let others = (group.size() - 1) as u64;
            for v in group.nodes() {
                freq[v] += others;
            }
        }
        freq
    }

    /// One group per line: `root<TAB>m1 m2 ...`.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for group in &self.groups {
            write!(out, "{}\t", group.root)?;
            for (i, m) in group.members.iter().enumerate() {
                if i > 0 {
                    out.write_all(b" ")?;
                }
                write!(out, "{m}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a dump written by [`GroupCorpus::write`]. The dump does not carry
    /// the corpus parameters, so they are supplied by the caller.
    pub fn read<R: BufRead>(
        source: R,
        chunk_size: usize,
        permutations: usize,
        vocab_size: usize,
        graph_id: &str,
    ) -> Result<GroupCorpus, ContextError> {
        let parse_id = |s: &str, line: usize| -> Result<usize, ContextError> {
            let id: usize = s.parse().map_err(|_| ContextError::Parse {
                line,
                reason: format!("bad node id {s:?}"),
            })?;
            if id >= vocab_size {
                return Err(ContextError::Parse {
                    line,
                    reason: format!("node id {id} outside vocabulary of {vocab_size}"),
                });
            }
            Ok(id)
        };
        let mut groups = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (root, members) = line.split_once('\t').ok_or_else(|| ContextError::Parse {
                line: i + 1,
                reason: "missing tab".into(),
            })?;
            let root = parse_id(root, i + 1)?;
            let members = members
                .split_whitespace()
                .map(|m| parse_id(m, i + 1))
                .collect::<Result<Vec<_>, _>>()?;
            if members.is_empty() {
                return Err(ContextError::Parse {
                    line: i + 1,
                    reason: "group without members".into(),
                });
            }
            groups.push(Group { root, members });
        }
        Ok(GroupCorpus {
            groups,
            chunk_size,
            permutations,
            vocab_size,
            graph_id: graph_id.to_string(),
        })
    }
}

/// Expands every group into ordered `(center, context)` pairs.
pub fn corpus_to_prediction_pairs(corpus: &GroupCorpus) -> Vec<(usize, usize)> {
    corpus.pairs().collect()
}
