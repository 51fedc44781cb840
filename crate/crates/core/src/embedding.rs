//! Labeled node embeddings, the form consumed by fusion and mimic.
//!
//! Text format: a header line `count dim`, then one line per node with the
//! label followed by `dim` floats. Floats are written in Rust's shortest
//! round-trip representation, so reading a file back yields bitwise-equal
//! `f32` values.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::graph::Graph;
use crate::skipgram::EmbeddingSet;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("embedding for {label:?} has {got} values, expected {expected}")]
    Dimension {
        label: String,
        got: usize,
        expected: usize,
    },
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("vocabulary mismatch: graph has {graph} nodes, embedding set has {set}")]
    Vocabulary { graph: usize, set: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    dim: usize,
    labels: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
}

impl Embeddings {
    pub fn new(dim: usize) -> Self {
        Embeddings {
            dim,
            labels: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        }
    }

    /// Attaches graph labels to the input table of a trained set. The output
    /// table is dropped.
    pub fn from_trained(set: &EmbeddingSet, graph: &Graph) -> Result<Self, EmbeddingError> {
        if set.vocab_size != graph.node_count() {
            return Err(EmbeddingError::Vocabulary {
                graph: graph.node_count(),
                set: set.vocab_size,
            });
        }
        let mut out = Embeddings::new(set.dim);
        for v in 0..set.vocab_size {
            out.insert(graph.label(v), set.input_row(v))?;
        }
        Ok(out)
    }

    pub fn insert(&mut self, label: &str, vector: &[f32]) -> Result<(), EmbeddingError> {
        if vector.len() != self.dim {
            return Err(EmbeddingError::Dimension {
                label: label.to_string(),
                got: vector.len(),
                expected: self.dim,
            });
        }
        if self.index.contains_key(label) {
            return Err(EmbeddingError::DuplicateLabel(label.to_string()));
        }
        self.index.insert(label.to_string(), self.labels.len());
        self.labels.push(label.to_string());
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    pub fn get(&self, label: &str) -> Option<&[f32]> {
        self.index.get(label).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy without the given labels, preserving the order of the rest.
    pub fn without<'a, I>(&self, removed: I) -> Embeddings
    where
        I: IntoIterator<Item = &'a str>,
    {
        let removed: std::collections::HashSet<&str> = removed.into_iter().collect();
        let mut out = Embeddings::new(self.dim);
        for (i, label) in self.labels.iter().enumerate() {
            if !removed.contains(label.as_str()) {
                out.insert(label, self.row(i)).expect("labels are unique");
            }
        }
        out
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, label) in self.labels.iter().enumerate() {
            out.write_all(label.as_bytes())?;
            for x in self.row(i) {
                write!(out, " {x}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Embeddings, EmbeddingError> {
        let mut lines = source.lines();
        let header = lines.next().transpose()?.ok_or(EmbeddingError::Parse {
            line: 1,
            reason: "missing header".into(),
        })?;
        let parse_err = |line: usize, reason: String| EmbeddingError::Parse { line, reason };
        let mut fields = header.split_whitespace();
        let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>()
                    .map_err(|_| parse_err(1, format!("bad count {c:?}")))?,
                d.parse::<usize>()
                    .map_err(|_| parse_err(1, format!("bad dimension {d:?}")))?,
            ),
            _ => return Err(parse_err(1, "header must be `count dim`".into())),
        };
        let mut out = Embeddings::new(dim);
        let mut values = Vec::with_capacity(dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let label = fields.next().unwrap_or_default();
            values.clear();
            for f in fields {
                values.push(
                    f.parse::<f32>()
                        .map_err(|_| parse_err(lineno, format!("bad float {f:?}")))?,
                );
            }
            out.insert(label, &values)?;
        }
        if out.len() != count {
            return Err(parse_err(
                1,
                format!("header declares {count} rows, found {}", out.len()),
            ));
        }
        Ok(out)
    }
}
