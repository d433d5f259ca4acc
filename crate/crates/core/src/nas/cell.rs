use serde::{Deserialize, Serialize};
use stressnas_nn::{GraphBuilder, Network, NodeId, Padding};

use super::{Genotype, NasError, Op};

type R<T> = Result<T, NasError>;

/// Macro skeleton: stem, three stages of cells, stride-2 residual reductions
/// doubling channels between stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroConfig {
    /// Stem channels C; the feature vector has 4C entries.
    pub channels: usize,
    pub cells_per_stage: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MacroConfig {
    pub fn desk() -> Self {
        Self {
            channels: 8,
            cells_per_stage: 1,
        }
    }

    pub fn full() -> Self {
        Self {
            channels: 16,
            cells_per_stage: 5,
        }
    }

    pub fn feature_dim(&self) -> usize {
        4 * self.channels
    }

    pub fn validate(&self) -> R<()> {
        if self.channels == 0 || self.cells_per_stage == 0 {
            return Err(NasError::Malformed("macro channels and cells must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Output the pooled 4C feature vector.
    Features,
    /// Dense layer to `n` logits plus a softmax output.
    Classifier(usize),
}

fn relu_conv_bn(b: &mut GraphBuilder, x: NodeId, out: usize, k: usize, stride: usize) -> R<NodeId> {
    let r = b.relu(x)?;
    let c = b.conv2d(r, out, k, stride, Padding::Same, false)?;
    Ok(b.batch_norm(c)?)
}

fn apply_op(b: &mut GraphBuilder, op: Op, x: NodeId) -> R<NodeId> {
    let ch = b.shape(x)[0];
    Ok(match op {
        Op::None => b.zeroize(x)?,
        Op::SkipConnect => x,
        Op::Conv1x1 => relu_conv_bn(b, x, ch, 1, 1)?,
        Op::Conv3x3 => relu_conv_bn(b, x, ch, 3, 1)?,
        Op::AvgPool3x3 => b.avg_pool(x, 3, 1, Padding::Same)?,
    })
}

/// One cell on a (C, H, W) node; every op keeps C channels at stride 1.
pub fn build_cell(b: &mut GraphBuilder, x: NodeId, genotype: &Genotype) -> R<NodeId> {
    let space = genotype.space()?;
    let mut nodes = vec![x];
    let mut edge = 0;
    for _ in 1..space.nodes {
        let mut terms = Vec::with_capacity(nodes.len());
        for &src in nodes.clone().iter() {
            terms.push(apply_op(b, genotype.ops[edge], src)?);
            edge += 1;
        }
        let node = if terms.len() == 1 { terms[0] } else { b.add(&terms)? };
        nodes.push(node);
    }
    Ok(*nodes.last().expect("cell has nodes"))
}

fn reduction(b: &mut GraphBuilder, x: NodeId, out: usize) -> R<NodeId> {
    let a = relu_conv_bn(b, x, out, 3, 2)?;
    let a = relu_conv_bn(b, a, out, 3, 1)?;
    let s = b.avg_pool(x, 2, 2, Padding::Same)?;
    let s = b.conv2d(s, out, 1, 1, Padding::Same, false)?;
    Ok(b.add(&[a, s])?)
}

/// Stem → stages of cells with reductions → BN-ReLU → global pooling; returns
/// the flat 4C feature node.
pub fn build_features(b: &mut GraphBuilder, x: NodeId, genotype: &Genotype, m: &MacroConfig) -> R<NodeId> {
    m.validate()?;
    if b.shape(x).len() != 3 {
        return Err(NasError::Malformed(format!(
            "cell networks need (C, H, W) inputs, got {:?}",
            b.shape(x)
        )));
    }
    let stem = b.conv2d(x, m.channels, 3, 1, Padding::Same, false)?;
    let mut h = b.batch_norm(stem)?;
    for stage in 0..3 {
        if stage > 0 {
            h = reduction(b, h, m.channels << stage)?;
        }
        for _ in 0..m.cells_per_stage {
            h = build_cell(b, h, genotype)?;
        }
    }
    let h = b.batch_norm(h)?;
    let h = b.relu(h)?;
    Ok(b.global_avg_pool(h)?)
}

/// Stand-alone candidate network with a single input named `x`.
pub fn instantiate(genotype: &Genotype, m: &MacroConfig, input_shape: &[usize], head: Head) -> R<Network> {
    let mut b = GraphBuilder::new();
    let x = b.input("x", input_shape)?;
    let f = build_features(&mut b, x, genotype, m)?;
    Ok(match head {
        Head::Features => b.finish(f, None)?,
        Head::Classifier(n) => {
            let y = b.dense(f, n, true)?;
            let p = b.softmax(y)?;
            b.finish(y, Some(p))?
        }
    })
}
