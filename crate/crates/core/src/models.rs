//! Network builders: MLP, FCN, ResNet-like and the multimodal cell assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stressnas_nn::{GraphBuilder, Network, NodeId, Padding};

use crate::error::{Error, Result};
use crate::featbank::MIXED_LEN;
use crate::nas::{build_features, Genotype, MacroConfig};

/// Model input branches. Each is a named network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Branch {
    Acc,
    Eda,
    Bvp,
    Temp,
    Mixed,
}

impl Branch {
    pub const ALL: [Branch; 5] = [Branch::Acc, Branch::Eda, Branch::Bvp, Branch::Temp, Branch::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Acc => "ACC",
            Branch::Eda => "EDA",
            Branch::Bvp => "BVP",
            Branch::Temp => "TEMP",
            Branch::Mixed => "MIXED",
        }
    }

    /// Filter-bank branches are images; MIXED is the statistics vector.
    pub fn is_image(self) -> bool {
        self != Branch::Mixed
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Branch::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown branch `{s}`")))
    }
}

/// Sorted, de-duplicated, non-empty set of branches.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Branch>", into = "Vec<Branch>")]
pub struct SensorCombination(Vec<Branch>);

impl SensorCombination {
    pub fn new(mut branches: Vec<Branch>) -> Result<Self> {
        branches.sort();
        branches.dedup();
        if branches.is_empty() {
            return Err(Error::Config("sensor combination is empty".into()));
        }
        Ok(Self(branches))
    }

    pub fn branches(&self) -> &[Branch] {
        &self.0
    }

    pub fn image_branches(&self) -> impl Iterator<Item = Branch> + '_ {
        self.0.iter().copied().filter(|b| b.is_image())
    }

    pub fn contains(&self, b: Branch) -> bool {
        self.0.contains(&b)
    }
}

impl TryFrom<Vec<Branch>> for SensorCombination {
    type Error = Error;

    fn try_from(v: Vec<Branch>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SensorCombination> for Vec<Branch> {
    fn from(c: SensorCombination) -> Self {
        c.0
    }
}

impl fmt::Display for SensorCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|b| b.name()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for SensorCombination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s.split('+').map(|p| p.trim().parse()).collect::<Result<_>>()?)
    }
}

/// Per-sample input shape of every branch.
pub type BranchShapes = BTreeMap<Branch, Vec<usize>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Mlp,
    Fcn,
    Resnet,
    Stressnas,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [ModelFamily::Mlp, ModelFamily::Fcn, ModelFamily::Resnet, ModelFamily::Stressnas];
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Mlp => "MLP",
            ModelFamily::Fcn => "FCN",
            ModelFamily::Resnet => "ResNet",
            ModelFamily::Stressnas => "StressNAS",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelFamily::Mlp),
            "fcn" => Ok(ModelFamily::Fcn),
            "resnet" => Ok(ModelFamily::Resnet),
            "stressnas" => Ok(ModelFamily::Stressnas),
            _ => Err(Error::Config(format!("unknown model family `{s}`"))),
        }
    }
}

/// Name of the single flat input of an MLP.
pub const FLAT_INPUT: &str = "flat";

pub const MLP_HIDDEN: [usize; 2] = [256, 128];
pub const CONV_CHANNELS: [usize; 3] = [8, 16, 32];
pub const MIXED_HIDDEN: usize = 32;

fn head(mut b: GraphBuilder, features: NodeId, n_classes: usize) -> Result<Network> {
    let y = b.dense(features, n_classes, true)?;
    let p = b.softmax(y)?;
    Ok(b.finish(y, Some(p))?)
}

fn join(b: &mut GraphBuilder, feats: &[NodeId]) -> Result<NodeId> {
    b.set_prefix("");
    Ok(if feats.len() == 1 { feats[0] } else { b.concat(feats)? })
}

/// FC → ReLU → FC → ReLU → FC (+ softmax) on one flat input.
pub fn build_mlp(input_dim: usize, n_classes: usize) -> Result<Network> {
    let mut b = GraphBuilder::new();
    let mut h = b.input(FLAT_INPUT, &[input_dim])?;
    for w in MLP_HIDDEN {
        h = b.dense(h, w, true)?;
        h = b.relu(h)?;
    }
    head(b, h, n_classes)
}

/// Flattened input length of an MLP over these branches.
pub fn flat_dim(shapes: &BranchShapes) -> usize {
    shapes.values().map(|s| s.iter().product::<usize>()).sum()
}

/// FC(36→32) → ReLU → FC(32→32) → ReLU.
fn mixed_branch(b: &mut GraphBuilder, x: NodeId) -> Result<NodeId> {
    let h = b.dense(x, MIXED_HIDDEN, true)?;
    let h = b.relu(h)?;
    let h = b.dense(h, MIXED_HIDDEN, true)?;
    Ok(b.relu(h)?)
}

fn branch_input(b: &mut GraphBuilder, branch: Branch, shapes: &BranchShapes) -> Result<NodeId> {
    let shape = shapes
        .get(&branch)
        .ok_or_else(|| Error::Config(format!("no input shape for branch {branch}")))?;
    if branch == Branch::Mixed && shape != &[MIXED_LEN] {
        return Err(Error::Config(format!("MIXED input must be [{MIXED_LEN}], got {shape:?}")));
    }
    b.set_prefix(&format!("{branch}/"));
    Ok(b.input(branch.name(), shape)?)
}

/// Per branch: three 3×3 conv → ReLU layers (8/16/32) and global pooling; the
/// MIXED branch uses the fixed two-layer MLP. Branch features are concatenated.
pub fn build_fcn(shapes: &BranchShapes, n_classes: usize) -> Result<Network> {
    let mut b = GraphBuilder::new();
    let mut feats = Vec::new();
    for &branch in shapes.keys() {
        let x = branch_input(&mut b, branch, shapes)?;
        if !branch.is_image() {
            feats.push(mixed_branch(&mut b, x)?);
            continue;
        }
        let mut h = x;
        for ch in CONV_CHANNELS {
            h = b.conv2d(h, ch, 3, 1, Padding::Same, true)?;
            h = b.relu(h)?;
        }
        feats.push(b.global_avg_pool(h)?);
    }
    let f = join(&mut b, &feats)?;
    head(b, f, n_classes)
}

/// Four conv-BN-ReLU layers with the skip added before the last ReLU; a 1×1
/// projection aligns channels when they change.
pub fn res_block(b: &mut GraphBuilder, x: NodeId, out: usize) -> Result<NodeId> {
    let mut h = x;
    for i in 0..4 {
        h = b.conv2d(h, out, 3, 1, Padding::Same, false)?;
        h = b.batch_norm(h)?;
        if i < 3 {
            h = b.relu(h)?;
        }
    }
    let skip = if b.shape(x)[0] == out {
        x
    } else {
        b.conv2d(x, out, 1, 1, Padding::Same, false)?
    };
    let s = b.add(&[h, skip])?;
    Ok(b.relu(s)?)
}

/// Per branch: three residual blocks (8/16/32) and global pooling.
pub fn build_resnet(shapes: &BranchShapes, n_classes: usize) -> Result<Network> {
    let mut b = GraphBuilder::new();
    let mut feats = Vec::new();
    for &branch in shapes.keys() {
        let x = branch_input(&mut b, branch, shapes)?;
        if !branch.is_image() {
            feats.push(mixed_branch(&mut b, x)?);
            continue;
        }
        let mut h = x;
        for ch in CONV_CHANNELS {
            h = res_block(&mut b, h, ch)?;
        }
        feats.push(b.global_avg_pool(h)?);
    }
    let f = join(&mut b, &feats)?;
    head(b, f, n_classes)
}

/// Multimodal assembly of rank-`rank` genotypes, one per image branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressNasAssembly {
    pub rank: usize,
    pub genotypes: BTreeMap<Branch, Genotype>,
    #[serde(rename = "macro")]
    pub macro_cfg: MacroConfig,
}

impl StressNasAssembly {
    /// Concatenated feature width: 4C per image branch plus 32 for MIXED.
    pub fn feature_dim(&self, shapes: &BranchShapes) -> usize {
        shapes
            .keys()
            .map(|b| if b.is_image() { self.macro_cfg.feature_dim() } else { MIXED_HIDDEN })
            .sum()
    }

    pub fn build(&self, shapes: &BranchShapes, n_classes: usize) -> Result<Network> {
        let mut b = GraphBuilder::new();
        let mut feats = Vec::new();
        for &branch in shapes.keys() {
            let x = branch_input(&mut b, branch, shapes)?;
            if !branch.is_image() {
                feats.push(mixed_branch(&mut b, x)?);
                continue;
            }
            let g = self
                .genotypes
                .get(&branch)
                .ok_or_else(|| Error::Config(format!("no genotype for branch {branch}")))?;
            feats.push(build_features(&mut b, x, g, &self.macro_cfg)?);
        }
        let f = join(&mut b, &feats)?;
        head(b, f, n_classes)
    }
}

/// Serializable description of a built model, stored beside checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "lowercase")]
pub enum ModelSpec {
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        n_classes: usize,
    },
    Fcn {
        shapes: BranchShapes,
        channels: Vec<usize>,
        n_classes: usize,
    },
    Resnet {
        shapes: BranchShapes,
        channels: Vec<usize>,
        n_classes: usize,
    },
    Stressnas {
        shapes: BranchShapes,
        assembly: StressNasAssembly,
        n_classes: usize,
    },
}

impl ModelSpec {
    /// Spec for a manual family; `Stressnas` needs [`ModelSpec::Stressnas`] directly.
    pub fn manual(family: ModelFamily, shapes: &BranchShapes, n_classes: usize) -> Result<Self> {
        Ok(match family {
            ModelFamily::Mlp => ModelSpec::Mlp {
                input_dim: flat_dim(shapes),
                hidden: MLP_HIDDEN.to_vec(),
                n_classes,
            },
            ModelFamily::Fcn => ModelSpec::Fcn {
                shapes: shapes.clone(),
                channels: CONV_CHANNELS.to_vec(),
                n_classes,
            },
            ModelFamily::Resnet => ModelSpec::Resnet {
                shapes: shapes.clone(),
                channels: CONV_CHANNELS.to_vec(),
                n_classes,
            },
            ModelFamily::Stressnas => {
                return Err(Error::Config("StressNAS models are built from searched genotypes".into()))
            }
        })
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::Mlp { .. } => ModelFamily::Mlp,
            ModelSpec::Fcn { .. } => ModelFamily::Fcn,
            ModelSpec::Resnet { .. } => ModelFamily::Resnet,
            ModelSpec::Stressnas { .. } => ModelFamily::Stressnas,
        }
    }

    pub fn build(&self) -> Result<Network> {
        match self {
            ModelSpec::Mlp { input_dim, n_classes, .. } => build_mlp(*input_dim, *n_classes),
            ModelSpec::Fcn { shapes, n_classes, .. } => build_fcn(shapes, *n_classes),
            ModelSpec::Resnet { shapes, n_classes, .. } => build_resnet(shapes, *n_classes),
            ModelSpec::Stressnas {
                shapes,
                assembly,
                n_classes,
            } => assembly.build(shapes, *n_classes),
        }
    }
}
