use std::fmt;

use serde::{Deserialize, Serialize};

use super::NasError;

/// Per-edge operations, indexed 0..=4 in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    None,
    SkipConnect,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

impl Op {
    pub const ALL: [Op; 5] = [Op::None, Op::SkipConnect, Op::Conv1x1, Op::Conv3x3, Op::AvgPool3x3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::None => "none",
            Op::SkipConnect => "skip_connect",
            Op::Conv1x1 => "conv_1x1",
            Op::Conv3x3 => "conv_3x3",
            Op::AvgPool3x3 => "avg_pool_3x3",
        }
    }
}

/// A cell DAG with `nodes` nodes: node 0 is the cell input, every later node
/// sums one op per earlier node. Edges are ordered (0→1), (0→2), (1→2),
/// (0→3), (1→3), (2→3), …
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub nodes: usize,
}

impl SearchSpace {
    /// 4 nodes, 6 edges, 15625 genotypes.
    pub const FULL: SearchSpace = SearchSpace { nodes: 4 };
    /// 3 nodes, 3 edges, 125 genotypes.
    pub const REDUCED: SearchSpace = SearchSpace { nodes: 3 };

    pub fn n_edges(self) -> usize {
        self.nodes * (self.nodes - 1) / 2
    }

    pub fn size(self) -> usize {
        5usize.pow(self.n_edges() as u32)
    }

    /// (from, to) pairs in genotype order.
    pub fn edges(self) -> Vec<(usize, usize)> {
        (1..self.nodes).flat_map(|j| (0..j).map(move |i| (i, j))).collect()
    }

    /// Base-5 digit string with the first edge most significant.
    pub fn decode(self, index: usize) -> Result<Genotype, NasError> {
        if index >= self.size() {
            return Err(NasError::IndexOutOfRange {
                index,
                size: self.size(),
            });
        }
        let n = self.n_edges();
        let mut ops = vec![Op::None; n];
        let mut rest = index;
        for slot in ops.iter_mut().rev() {
            *slot = Op::ALL[rest % 5];
            rest /= 5;
        }
        Ok(Genotype { ops })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub ops: Vec<Op>,
}

impl Genotype {
    pub fn new(ops: Vec<Op>) -> Result<Self, NasError> {
        let g = Genotype { ops };
        g.space()?;
        Ok(g)
    }

    /// Space implied by the edge count.
    pub fn space(&self) -> Result<SearchSpace, NasError> {
        let e = self.ops.len();
        (2..=8)
            .map(|nodes| SearchSpace { nodes })
            .find(|s| s.n_edges() == e)
            .ok_or_else(|| NasError::Malformed(format!("{e} edges is not a complete DAG")))
    }

    pub fn encode(&self) -> usize {
        self.ops.iter().fold(0, |acc, op| acc * 5 + op.index())
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.ops.iter().map(|o| o.name()).collect();
        write!(f, "[{}]", names.join(","))
    }
}
