//! Layer graphs: construction with shape checking, forward evaluation with an
//! activation cache, and reverse-mode gradients for parameters and inputs.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NnError, Result};
use crate::kernels::{self, Geom, Padding};
use crate::tensor::Tensor;

/// Named input tensors for one forward pass.
pub type Inputs = BTreeMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Operation carried by a graph node.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Input {
        name: String,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Relu,
    AvgPool {
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    GlobalAvgPool,
    Softmax,
    /// Elementwise sum of all inputs (residual joins, cell node sums).
    Add,
    /// Concatenation along the channel/feature axis.
    Concat,
    /// Emits zeros shaped like its input; stands in for a missing edge.
    Zeroize,
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Input { .. } => "input",
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv",
            Layer::BatchNorm { .. } => "bn",
            Layer::Relu => "relu",
            Layer::AvgPool { .. } => "avgpool",
            Layer::GlobalAvgPool => "gap",
            Layer::Softmax => "softmax",
            Layer::Add => "add",
            Layer::Concat => "concat",
            Layer::Zeroize => "zero",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamKind {
    Weight { fan_in: usize },
    Bias,
    Scale,
    Shift,
}

#[derive(Clone, Debug)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
    pub inputs: Vec<NodeId>,
    /// Per-sample output shape (batch axis excluded).
    pub shape: Vec<usize>,
    pub params: Vec<usize>,
    pub buffers: Vec<usize>,
}

/// Incremental graph construction. Nodes can only consume earlier nodes, so
/// every built graph is acyclic.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamMeta>,
    buffers: Vec<(String, Vec<usize>, f64)>,
    prefix: String,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prefix applied to the names of subsequently created nodes.
    pub fn set_prefix(&mut self, prefix: &str) {
        self.prefix = prefix.to_string();
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn shape_err(&self, what: &str, detail: String) -> NnError {
        NnError::Shape {
            node: format!("{}{}{}", self.prefix, what, self.nodes.len()),
            detail,
        }
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(NnError::Graph(format!("unknown node {}", id.0)));
        }
        Ok(())
    }

    fn push(&mut self, layer: Layer, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let name = match &layer {
            Layer::Input { name } => name.clone(),
            l => format!("{}{}{}", self.prefix, l.kind(), id.0),
        };
        self.nodes.push(Node {
            name,
            layer,
            inputs,
            shape,
            params: Vec::new(),
            buffers: Vec::new(),
        });
        id
    }

    fn add_param(&mut self, node: NodeId, suffix: &str, shape: Vec<usize>, kind: ParamKind) {
        let name = format!("{}.{}", self.nodes[node.0].name, suffix);
        self.params.push(ParamMeta { name, shape, kind });
        let idx = self.params.len() - 1;
        self.nodes[node.0].params.push(idx);
    }

    fn add_buffer(&mut self, node: NodeId, suffix: &str, shape: Vec<usize>, init: f64) {
        let name = format!("{}.{}", self.nodes[node.0].name, suffix);
        self.buffers.push((name, shape, init));
        let idx = self.buffers.len() - 1;
        self.nodes[node.0].buffers.push(idx);
    }

    /// Declares a graph input with the given per-sample shape.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(self.shape_err("input", format!("per-sample rank {}", shape.len())));
        }
        if self
            .nodes
            .iter()
            .any(|n| matches!(&n.layer, Layer::Input { name: m } if m == name))
        {
            return Err(NnError::Graph(format!("duplicate input `{name}`")));
        }
        Ok(self.push(
            Layer::Input {
                name: name.to_string(),
            },
            vec![],
            shape.to_vec(),
        ))
    }

    pub fn dense(&mut self, x: NodeId, out_features: usize, bias: bool) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(self.shape_err("dense", format!("expects a flat input, got {s:?}")));
        }
        let in_features = s[0];
        let id = self.push(
            Layer::Dense {
                in_features,
                out_features,
                bias,
            },
            vec![x],
            vec![out_features],
        );
        self.add_param(
            id,
            "weight",
            vec![out_features, in_features],
            ParamKind::Weight {
                fan_in: in_features,
            },
        );
        if bias {
            self.add_param(id, "bias", vec![out_features], ParamKind::Bias);
        }
        Ok(id)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(self.shape_err("conv", format!("expects (C,H,W), got {s:?}")));
        }
        let g = Geom::new(s[1], s[2], kernel, kernel, stride, padding).ok_or_else(|| {
            self.shape_err(
                "conv",
                format!("kernel {kernel} stride {stride} does not fit {s:?}"),
            )
        })?;
        let in_ch = s[0];
        let id = self.push(
            Layer::Conv2d {
                in_ch,
                out_ch,
                kernel: (kernel, kernel),
                stride,
                padding,
                bias,
            },
            vec![x],
            vec![out_ch, g.ho, g.wo],
        );
        self.add_param(
            id,
            "weight",
            vec![out_ch, in_ch, kernel, kernel],
            ParamKind::Weight {
                fan_in: in_ch * kernel * kernel,
            },
        );
        if bias {
            self.add_param(id, "bias", vec![out_ch], ParamKind::Bias);
        }
        Ok(id)
    }

    /// Batch normalization with eps 1e-5 and running-statistics momentum 0.9.
    pub fn batch_norm(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 1 && s.len() != 3 {
            return Err(self.shape_err("bn", format!("expects (C) or (C,H,W), got {s:?}")));
        }
        let channels = s[0];
        let id = self.push(
            Layer::BatchNorm {
                channels,
                eps: 1e-5,
                momentum: 0.9,
            },
            vec![x],
            s,
        );
        self.add_param(id, "gamma", vec![channels], ParamKind::Scale);
        self.add_param(id, "beta", vec![channels], ParamKind::Shift);
        self.add_buffer(id, "running_mean", vec![channels], 0.0);
        self.add_buffer(id, "running_var", vec![channels], 1.0);
        Ok(id)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        Ok(self.push(Layer::Relu, vec![x], s))
    }

    pub fn avg_pool(
        &mut self,
        x: NodeId,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(self.shape_err("avgpool", format!("expects (C,H,W), got {s:?}")));
        }
        let g = Geom::new(s[1], s[2], kernel, kernel, stride, padding).ok_or_else(|| {
            self.shape_err("avgpool", format!("kernel {kernel} does not fit {s:?}"))
        })?;
        Ok(self.push(
            Layer::AvgPool {
                kernel,
                stride,
                padding,
            },
            vec![x],
            vec![s[0], g.ho, g.wo],
        ))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(self.shape_err("gap", format!("expects (C,H,W), got {s:?}")));
        }
        Ok(self.push(Layer::GlobalAvgPool, vec![x], vec![s[0]]))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        if s.len() != 1 {
            return Err(self.shape_err("softmax", format!("expects a flat input, got {s:?}")));
        }
        Ok(self.push(Layer::Softmax, vec![x], s))
    }

    pub fn add(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(self.shape_err("add", "no operands".into()));
        }
        for &x in xs {
            self.check(x)?;
        }
        let s = self.shape(xs[0]).to_vec();
        if let Some(bad) = xs.iter().find(|&&x| self.shape(x) != s.as_slice()) {
            return Err(self.shape_err(
                "add",
                format!("operand shapes differ: {s:?} vs {:?}", self.shape(*bad)),
            ));
        }
        Ok(self.push(Layer::Add, xs.to_vec(), s))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(self.shape_err("concat", "no operands".into()));
        }
        for &x in xs {
            self.check(x)?;
        }
        let first = self.shape(xs[0]).to_vec();
        let mut out = first.clone();
        out[0] = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(self.shape_err(
                    "concat",
                    format!("incompatible operands {first:?} and {s:?}"),
                ));
            }
            out[0] += s[0];
        }
        Ok(self.push(Layer::Concat, xs.to_vec(), out))
    }

    pub fn zeroize(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        Ok(self.push(Layer::Zeroize, vec![x], s))
    }

    /// Validates and freezes the graph. `logits` must be flat; `probs`, when given,
    /// is an extra output (normally a softmax over the logits).
    pub fn finish(self, logits: NodeId, probs: Option<NodeId>) -> Result<Network> {
        self.check(logits)?;
        if let Some(p) = probs {
            self.check(p)?;
        }
        if self.nodes[logits.0].shape.len() != 1 {
            return Err(NnError::Graph(format!(
                "output `{}` is not flat: {:?}",
                self.nodes[logits.0].name, self.nodes[logits.0].shape
            )));
        }
        // every input must feed the output
        let mut reaches = vec![false; self.nodes.len()];
        reaches[logits.0] = true;
        for i in (0..self.nodes.len()).rev() {
            if reaches[i] {
                for &inp in &self.nodes[i].inputs {
                    reaches[inp.0] = true;
                }
            }
        }
        let inputs: Vec<NodeId> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.layer, Layer::Input { .. }))
            .map(|(i, _)| NodeId(i))
            .collect();
        if inputs.is_empty() {
            return Err(NnError::Graph("graph has no inputs".into()));
        }
        if let Some(dead) = inputs.iter().find(|i| !reaches[i.0]) {
            return Err(NnError::Graph(format!(
                "input `{}` does not reach the output",
                self.nodes[dead.0].name
            )));
        }
        let params = self
            .params
            .iter()
            .map(|m| match m.kind {
                ParamKind::Scale => Tensor::full(&m.shape, 1.0),
                _ => Tensor::zeros(&m.shape),
            })
            .collect();
        let buffers = self
            .buffers
            .iter()
            .map(|(_, s, v)| Tensor::full(s, *v))
            .collect();
        Ok(Network {
            nodes: self.nodes,
            param_meta: self.params,
            params,
            buffer_meta: self.buffers,
            buffers,
            inputs,
            logits,
            probs,
            cache: None,
        })
    }
}

#[derive(Clone)]
enum Aux {
    None,
    Bn { xhat: Vec<f64>, inv_std: Vec<f64>, training: bool },
}

struct Cache {
    values: Vec<Tensor>,
    aux: Vec<Aux>,
}

/// Gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// One tensor per parameter, aligned with [`Network::params`].
    pub params: Vec<Tensor>,
    /// Gradient with respect to each named input.
    pub inputs: BTreeMap<String, Tensor>,
}

/// Parameters and running buffers; enough to restore a trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetState {
    pub params: Vec<Tensor>,
    pub buffers: Vec<Tensor>,
}

/// A validated layer DAG with its parameters.
///
/// A `Network` is not meant to be shared across concurrent training steps:
/// [`Network::forward`] stores the activation cache that [`Network::backward`]
/// consumes. [`Network::infer`] is read-only.
pub struct Network {
    nodes: Vec<Node>,
    param_meta: Vec<ParamMeta>,
    params: Vec<Tensor>,
    buffer_meta: Vec<(String, Vec<usize>, f64)>,
    buffers: Vec<Tensor>,
    inputs: Vec<NodeId>,
    logits: NodeId,
    probs: Option<NodeId>,
    cache: Option<Cache>,
}

impl Network {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    /// Input names with their per-sample shapes.
    pub fn input_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.inputs
            .iter()
            .map(|i| (self.nodes[i.0].name.clone(), self.nodes[i.0].shape.clone()))
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.nodes[self.logits.0].shape[0]
    }

    pub fn logits_node(&self) -> NodeId {
        self.logits
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_meta(&self) -> &[ParamMeta] {
        &self.param_meta
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn buffer_names(&self) -> impl Iterator<Item = &str> {
        self.buffer_meta.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn state(&self) -> NetState {
        NetState {
            params: self.params.clone(),
            buffers: self.buffers.clone(),
        }
    }

    pub fn load_state(&mut self, state: NetState) -> Result<()> {
        let same = state.params.len() == self.params.len()
            && state.buffers.len() == self.buffers.len()
            && state
                .params
                .iter()
                .zip(&self.params)
                .chain(state.buffers.iter().zip(&self.buffers))
                .all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(NnError::Graph("state does not match network layout".into()));
        }
        self.params = state.params;
        self.buffers = state.buffers;
        self.cache = None;
        Ok(())
    }

    pub(crate) fn set_buffers(&mut self, buffers: Vec<Tensor>) {
        self.buffers = buffers;
    }

    /// He initialization: weights ~ N(0, sqrt(2 / fan_in)), biases and shifts 0,
    /// scales 1. Running statistics are reset. Deterministic per seed.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (meta, p) in self.param_meta.iter().zip(self.params.iter_mut()) {
            match meta.kind {
                ParamKind::Weight { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .expect("positive std");
                    p.data_mut()
                        .iter_mut()
                        .for_each(|v| *v = normal.sample(&mut rng));
                }
                ParamKind::Bias | ParamKind::Shift => p.fill(0.0),
                ParamKind::Scale => p.fill(1.0),
            }
        }
        for ((_, _, init), b) in self.buffer_meta.iter().zip(self.buffers.iter_mut()) {
            b.fill(*init);
        }
        self.cache = None;
    }

    fn gather_inputs(&self, inputs: &Inputs) -> Result<usize> {
        let mut batch = None;
        for id in &self.inputs {
            let node = &self.nodes[id.0];
            let t = inputs
                .get(&node.name)
                .ok_or_else(|| NnError::MissingInput(node.name.clone()))?;
            if t.shape().len() != node.shape.len() + 1 || t.shape()[1..] != node.shape[..] {
                return Err(NnError::Shape {
                    node: node.name.clone(),
                    detail: format!("expected (B, {:?}), got {:?}", node.shape, t.shape()),
                });
            }
            match batch {
                None => batch = Some(t.batch()),
                Some(b) if b != t.batch() => {
                    return Err(NnError::Shape {
                        node: node.name.clone(),
                        detail: format!("batch {} differs from {}", t.batch(), b),
                    })
                }
                _ => {}
            }
        }
        let batch = batch.unwrap_or(0);
        if batch == 0 {
            return Err(NnError::Shape {
                node: "inputs".into(),
                detail: "empty batch".into(),
            });
        }
        Ok(batch)
    }

    /// Evaluates every node. Returns values, aux data and BN batch statistics.
    #[allow(clippy::type_complexity)]
    fn eval(
        &self,
        inputs: &Inputs,
        training: bool,
    ) -> Result<(Vec<Tensor>, Vec<Aux>, Vec<(usize, Vec<f64>, Vec<f64>)>)> {
        let batch = self.gather_inputs(inputs)?;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        let mut bn_stats = Vec::new();
        for node in &self.nodes {
            let mut shape = vec![batch];
            shape.extend_from_slice(&node.shape);
            let (out, a) = match &node.layer {
                Layer::Input { name } => (inputs[name].clone(), Aux::None),
                Layer::Dense {
                    in_features,
                    out_features,
                    bias,
                } => {
                    let x = &values[node.inputs[0].0];
                    let w = &self.params[node.params[0]];
                    let mut y = vec![0.0; batch * out_features];
                    kernels::gemm(
                        batch,
                        *in_features,
                        *out_features,
                        x.data(),
                        false,
                        w.data(),
                        true,
                        0.0,
                        &mut y,
                    );
                    if *bias {
                        let b = self.params[node.params[1]].data();
                        for row in y.chunks_mut(*out_features) {
                            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
                        }
                    }
                    (Tensor::from_vec(&shape, y)?, Aux::None)
                }
                Layer::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    let x = &values[node.inputs[0].0];
                    let s = &self.nodes[node.inputs[0].0].shape;
                    let g = Geom::new(s[1], s[2], kernel.0, kernel.1, *stride, *padding)
                        .expect("geometry checked at build time");
                    let b = bias.then(|| self.params[node.params[1]].data());
                    let y = kernels::conv2d_forward(
                        x.data(),
                        batch,
                        *in_ch,
                        *out_ch,
                        &g,
                        self.params[node.params[0]].data(),
                        b,
                    );
                    (Tensor::from_vec(&shape, y)?, Aux::None)
                }
                Layer::BatchNorm { channels, eps, .. } => {
                    let x = &values[node.inputs[0].0];
                    let ch = *channels;
                    let spatial = x.sample_len() / ch;
                    let (mean, var) = if training {
                        let (m, v) = kernels::channel_moments(x.data(), batch, ch, spatial);
                        bn_stats.push((node.buffers[0], m.clone(), v.clone()));
                        (m, v)
                    } else {
                        (
                            self.buffers[node.buffers[0]].data().to_vec(),
                            self.buffers[node.buffers[1]].data().to_vec(),
                        )
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                    let gamma = self.params[node.params[0]].data();
                    let beta = self.params[node.params[1]].data();
                    let mut xhat = vec![0.0; x.len()];
                    let mut y = vec![0.0; x.len()];
                    for b in 0..batch {
                        for c in 0..ch {
                            let base = (b * ch + c) * spatial;
                            for i in base..base + spatial {
                                xhat[i] = (x.data()[i] - mean[c]) * inv_std[c];
                                y[i] = gamma[c] * xhat[i] + beta[c];
                            }
                        }
                    }
                    (
                        Tensor::from_vec(&shape, y)?,
                        Aux::Bn {
                            xhat,
                            inv_std,
                            training,
                        },
                    )
                }
                Layer::Relu => {
                    let x = &values[node.inputs[0].0];
                    let y = x.data().iter().map(|v| v.max(0.0)).collect();
                    (Tensor::from_vec(&shape, y)?, Aux::None)
                }
                Layer::AvgPool {
                    kernel,
                    stride,
                    padding,
                } => {
                    let x = &values[node.inputs[0].0];
                    let s = &self.nodes[node.inputs[0].0].shape;
                    let g = Geom::new(s[1], s[2], *kernel, *kernel, *stride, *padding)
                        .expect("geometry checked at build time");
                    let y = kernels::avg_pool_forward(x.data(), batch * s[0], &g);
                    (Tensor::from_vec(&shape, y)?, Aux::None)
                }
                Layer::GlobalAvgPool => {
                    let x = &values[node.inputs[0].0];
                    let s = &self.nodes[node.inputs[0].0].shape;
                    let spatial = s[1] * s[2];
                    let y = x
                        .data()
                        .chunks(spatial)
                        .map(|c| c.iter().sum::<f64>() / spatial as f64)
                        .collect();
                    (Tensor::from_vec(&shape, y)?, Aux::None)
                }
                Layer::Softmax => {
                    let x = &values[node.inputs[0].0];
                    let y = kernels::softmax_rows(x.data(), node.shape[0]);
                    (Tensor::from_vec(&shape, y)?, Aux::None)
                }
                Layer::Add => {
                    let mut y = values[node.inputs[0].0].clone();
                    for inp in &node.inputs[1..] {
                        y.add_assign(&values[inp.0]);
                    }
                    (y, Aux::None)
                }
                Layer::Concat => {
                    let out_len: usize = node.shape.iter().product();
                    let mut y = Vec::with_capacity(batch * out_len);
                    for b in 0..batch {
                        for inp in &node.inputs {
                            y.extend_from_slice(values[inp.0].sample(b));
                        }
                    }
                    (Tensor::from_vec(&shape, y)?, Aux::None)
                }
                Layer::Zeroize => (Tensor::zeros(&shape), Aux::None),
            };
            if !out.is_finite() {
                return Err(NnError::NonFinite(node.name.clone()));
            }
            values.push(out);
            aux.push(a);
        }
        Ok((values, aux, bn_stats))
    }

    /// Forward pass that caches activations for [`Network::backward`]. In
    /// training mode batch normalization uses batch statistics and updates its
    /// running statistics; otherwise it uses the running statistics.
    pub fn forward(&mut self, inputs: &Inputs, training: bool) -> Result<Tensor> {
        let (values, aux, stats) = self.eval(inputs, training)?;
        for (mean_idx, mean, var) in stats {
            let node = self
                .nodes
                .iter()
                .find(|n| n.buffers.first() == Some(&mean_idx))
                .expect("bn node owns its buffers");
            let (momentum, var_idx) = match node.layer {
                Layer::BatchNorm { momentum, .. } => (momentum, node.buffers[1]),
                _ => unreachable!(),
            };
            let count = inputs_batch(&values, &self.inputs) * (node.shape[1..].iter().product::<usize>());
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            for (r, m) in self.buffers[mean_idx].data_mut().iter_mut().zip(&mean) {
                *r = momentum * *r + (1.0 - momentum) * m;
            }
            for (r, v) in self.buffers[var_idx].data_mut().iter_mut().zip(&var) {
                *r = momentum * *r + (1.0 - momentum) * v * unbias;
            }
        }
        let logits = values[self.logits.0].clone();
        self.cache = Some(Cache { values, aux });
        Ok(logits)
    }

    /// Read-only evaluation with running statistics; returns the logits.
    pub fn infer(&self, inputs: &Inputs) -> Result<Tensor> {
        let (mut values, _, _) = self.eval(inputs, false)?;
        Ok(values.swap_remove(self.logits.0))
    }

    /// Read-only evaluation returning class probabilities (the softmax output
    /// node when present, otherwise a softmax over the logits).
    pub fn infer_probs(&self, inputs: &Inputs) -> Result<Tensor> {
        let (mut values, _, _) = self.eval(inputs, false)?;
        match self.probs {
            Some(p) => Ok(values.swap_remove(p.0)),
            None => {
                let l = values.swap_remove(self.logits.0);
                let p = kernels::softmax_rows(l.data(), self.output_dim());
                Tensor::from_vec(l.shape(), p)
            }
        }
    }

    /// Cached activation of a node from the most recent [`Network::forward`].
    pub fn activation(&self, id: NodeId) -> Option<&Tensor> {
        self.cache.as_ref().and_then(|c| c.values.get(id.0))
    }

    /// Reverse pass from an upstream gradient on the logits. Consumes the cache.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Gradients> {
        self.backward_impl(upstream, true)
    }

    /// Reverse pass computing only input gradients (parameter gradients are skipped).
    pub fn backward_inputs(&mut self, upstream: &Tensor) -> Result<BTreeMap<String, Tensor>> {
        Ok(self.backward_impl(upstream, false)?.inputs)
    }

    fn backward_impl(&mut self, upstream: &Tensor, param_grads: bool) -> Result<Gradients> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache)?;
        let values = &cache.values;
        if upstream.shape() != values[self.logits.0].shape() {
            return Err(NnError::Shape {
                node: self.nodes[self.logits.0].name.clone(),
                detail: format!(
                    "upstream gradient {:?} vs output {:?}",
                    upstream.shape(),
                    values[self.logits.0].shape()
                ),
            });
        }
        let batch = upstream.batch();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[self.logits.0] = Some(upstream.clone());
        let mut pgrads: Vec<Tensor> = if param_grads {
            self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
        } else {
            Vec::new()
        };

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let in_shape = |k: usize| {
                let mut s = vec![batch];
                s.extend_from_slice(&self.nodes[node.inputs[k].0].shape);
                s
            };
            match &node.layer {
                Layer::Input { .. } => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Layer::Dense {
                    in_features,
                    out_features,
                    bias,
                } => {
                    let x = &values[node.inputs[0].0];
                    let w = &self.params[node.params[0]];
                    let mut dx = vec![0.0; batch * in_features];
                    kernels::gemm(
                        batch,
                        *out_features,
                        *in_features,
                        dy.data(),
                        false,
                        w.data(),
                        false,
                        0.0,
                        &mut dx,
                    );
                    if param_grads {
                        kernels::gemm(
                            *out_features,
                            batch,
                            *in_features,
                            dy.data(),
                            true,
                            x.data(),
                            false,
                            1.0,
                            pgrads[node.params[0]].data_mut(),
                        );
                        if *bias {
                            let db = pgrads[node.params[1]].data_mut();
                            for row in dy.data().chunks(*out_features) {
                                db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                            }
                        }
                    }
                    accumulate(
                        &mut grads[node.inputs[0].0],
                        Tensor::from_vec(&in_shape(0), dx)?,
                    );
                }
                Layer::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => {
                    let src = node.inputs[0];
                    let s = &self.nodes[src.0].shape;
                    let g = Geom::new(s[1], s[2], kernel.0, kernel.1, *stride, *padding)
                        .expect("geometry checked at build time");
                    let (dx, dw, db) = kernels::conv2d_backward(
                        values[src.0].data(),
                        batch,
                        *in_ch,
                        *out_ch,
                        &g,
                        self.params[node.params[0]].data(),
                        dy.data(),
                        true,
                        param_grads,
                    );
                    if let Some(dw) = dw {
                        pgrads[node.params[0]]
                            .data_mut()
                            .iter_mut()
                            .zip(&dw)
                            .for_each(|(a, b)| *a += b);
                    }
                    if let (true, Some(db)) = (*bias, db) {
                        pgrads[node.params[1]]
                            .data_mut()
                            .iter_mut()
                            .zip(&db)
                            .for_each(|(a, b)| *a += b);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads[src.0], Tensor::from_vec(&in_shape(0), dx)?);
                    }
                }
                Layer::BatchNorm { channels, .. } => {
                    let ch = *channels;
                    let spatial = dy.sample_len() / ch;
                    let Aux::Bn {
                        xhat,
                        inv_std,
                        training,
                    } = &cache.aux[idx]
                    else {
                        unreachable!("bn aux");
                    };
                    let gamma = self.params[node.params[0]].data();
                    let mut sum_dy = vec![0.0; ch];
                    let mut sum_dy_xhat = vec![0.0; ch];
                    for b in 0..batch {
                        for c in 0..ch {
                            let base = (b * ch + c) * spatial;
                            for i in base..base + spatial {
                                sum_dy[c] += dy.data()[i];
                                sum_dy_xhat[c] += dy.data()[i] * xhat[i];
                            }
                        }
                    }
                    if param_grads {
                        pgrads[node.params[0]]
                            .data_mut()
                            .iter_mut()
                            .zip(&sum_dy_xhat)
                            .for_each(|(a, b)| *a += b);
                        pgrads[node.params[1]]
                            .data_mut()
                            .iter_mut()
                            .zip(&sum_dy)
                            .for_each(|(a, b)| *a += b);
                    }
                    let m = (batch * spatial) as f64;
                    let mut dx = vec![0.0; dy.len()];
                    for b in 0..batch {
                        for c in 0..ch {
                            let base = (b * ch + c) * spatial;
                            let k = gamma[c] * inv_std[c];
                            for i in base..base + spatial {
                                dx[i] = if *training {
                                    k * (dy.data()[i]
                                        - sum_dy[c] / m
                                        - xhat[i] * sum_dy_xhat[c] / m)
                                } else {
                                    k * dy.data()[i]
                                };
                            }
                        }
                    }
                    accumulate(
                        &mut grads[node.inputs[0].0],
                        Tensor::from_vec(&in_shape(0), dx)?,
                    );
                }
                Layer::Relu => {
                    let y = &values[idx];
                    let dx = dy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(
                        &mut grads[node.inputs[0].0],
                        Tensor::from_vec(&in_shape(0), dx)?,
                    );
                }
                Layer::AvgPool {
                    kernel,
                    stride,
                    padding,
                } => {
                    let s = &self.nodes[node.inputs[0].0].shape;
                    let g = Geom::new(s[1], s[2], *kernel, *kernel, *stride, *padding)
                        .expect("geometry checked at build time");
                    let dx = kernels::avg_pool_backward(dy.data(), batch * s[0], &g);
                    accumulate(
                        &mut grads[node.inputs[0].0],
                        Tensor::from_vec(&in_shape(0), dx)?,
                    );
                }
                Layer::GlobalAvgPool => {
                    let s = &self.nodes[node.inputs[0].0].shape;
                    let spatial = s[1] * s[2];
                    let mut dx = Vec::with_capacity(dy.len() * spatial);
                    for g in dy.data() {
                        dx.extend(std::iter::repeat_n(g / spatial as f64, spatial));
                    }
                    accumulate(
                        &mut grads[node.inputs[0].0],
                        Tensor::from_vec(&in_shape(0), dx)?,
                    );
                }
                Layer::Softmax => {
                    let y = &values[idx];
                    let cols = node.shape[0];
                    let mut dx = vec![0.0; dy.len()];
                    for ((yr, gr), dr) in y
                        .data()
                        .chunks(cols)
                        .zip(dy.data().chunks(cols))
                        .zip(dx.chunks_mut(cols))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(
                        &mut grads[node.inputs[0].0],
                        Tensor::from_vec(&in_shape(0), dx)?,
                    );
                }
                Layer::Add => {
                    for inp in &node.inputs {
                        accumulate(&mut grads[inp.0], dy.clone());
                    }
                }
                Layer::Concat => {
                    let out_len = dy.sample_len();
                    let mut offset = 0;
                    for (k, inp) in node.inputs.iter().enumerate() {
                        let len: usize = self.nodes[inp.0].shape.iter().product();
                        let mut dx = Vec::with_capacity(batch * len);
                        for b in 0..batch {
                            let base = b * out_len + offset;
                            dx.extend_from_slice(&dy.data()[base..base + len]);
                        }
                        offset += len;
                        accumulate(&mut grads[inp.0], Tensor::from_vec(&in_shape(k), dx)?);
                    }
                }
                Layer::Zeroize => {}
            }
        }

        let mut inputs = BTreeMap::new();
        for id in &self.inputs {
            let node = &self.nodes[id.0];
            let g = grads[id.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(values[id.0].shape()));
            inputs.insert(node.name.clone(), g);
        }
        Ok(Gradients {
            params: pgrads,
            inputs,
        })
    }
}

fn inputs_batch(values: &[Tensor], inputs: &[NodeId]) -> usize {
    values[inputs[0].0].batch()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, shape: &[usize], data: Vec<f64>) -> Inputs {
        let mut m = Inputs::new();
        m.insert(name.into(), Tensor::from_vec(shape, data).unwrap());
        m
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[3]).unwrap();
        let d = b.dense(x, 3, true).unwrap();
        let mut net = b.finish(d, None).unwrap();
        net.params_mut()[0] = Tensor::from_vec(
            &[3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let inp = one("x", &[2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]);
        let y = net.forward(&inp, false).unwrap();
        assert_eq!(y.data(), inp["x"].data());
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[2]).unwrap();
        let r = b.relu(x).unwrap();
        let mut net = b.finish(r, None).unwrap();
        let y = net.forward(&one("x", &[1, 2], vec![-1.0, 2.0]), false).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[2]).unwrap();
        let d = b.dense(x, 1, true).unwrap();
        let mut net = b.finish(d, None).unwrap();
        let up = Tensor::zeros(&[1, 1]);
        assert!(matches!(net.backward(&up), Err(NnError::NoForwardCache)));
        net.forward(&one("x", &[1, 2], vec![1.0, 2.0]), true).unwrap();
        assert!(net.backward(&up).is_ok());
        // the cache is consumed
        assert!(matches!(net.backward(&up), Err(NnError::NoForwardCache)));
    }

    #[test]
    fn dense_quadratic_loss_gradient_closed_form() {
        // L = 0.5 * ||W x + b||^2 with zero target: dL/dW = y x^T, dL/db = y, dL/dx = W^T y
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[2]).unwrap();
        let d = b.dense(x, 2, true).unwrap();
        let mut net = b.finish(d, None).unwrap();
        net.params_mut()[0] = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        net.params_mut()[1] = Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap();
        let y = net.forward(&one("x", &[1, 2], vec![1.0, -1.0]), true).unwrap();
        assert_eq!(y.data(), &[-0.5, -2.0]);
        let g = net.backward(&y).unwrap();
        assert_eq!(g.params[0].data(), &[-0.5, 0.5, -2.0, 2.0]);
        assert_eq!(g.params[1].data(), &[-0.5, -2.0]);
        assert_eq!(g.inputs["x"].data(), &[-6.5, -9.0]);
    }

    #[test]
    fn zeroize_blocks_gradient() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[3]).unwrap();
        let z = b.zeroize(x).unwrap();
        let mut net = b.finish(z, None).unwrap();
        let y = net.forward(&one("x", &[1, 3], vec![1.0, 2.0, 3.0]), true).unwrap();
        assert_eq!(y.data(), &[0.0; 3]);
        let g = net.backward(&Tensor::full(&[1, 3], 1.0)).unwrap();
        assert_eq!(g.inputs["x"].data(), &[0.0; 3]);
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 4, 4]).unwrap();
        let err = b.dense(x, 3, true).unwrap_err();
        assert!(err.to_string().contains("dense"), "{err}");

        let mut b = GraphBuilder::new();
        let x = b.input("x", &[3]).unwrap();
        let d = b.dense(x, 2, true).unwrap();
        let mut net = b.finish(d, None).unwrap();
        let err = net
            .forward(&one("x", &[1, 4], vec![0.0; 4]), false)
            .unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn disconnected_input_rejected() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[3]).unwrap();
        let _y = b.input("y", &[3]).unwrap();
        let d = b.dense(x, 1, true).unwrap();
        assert!(matches!(b.finish(d, None), Err(NnError::Graph(_))));
    }

    #[test]
    fn same_conv_preserves_dims_and_gap_flattens() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[2, 27, 16]).unwrap();
        let c = b.conv2d(x, 5, 3, 1, Padding::Same, true).unwrap();
        assert_eq!(b.shape(c), &[5, 27, 16]);
        let g = b.global_avg_pool(c).unwrap();
        assert_eq!(b.shape(g), &[5]);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let build = || {
            let mut b = GraphBuilder::new();
            let x = b.input("x", &[100]).unwrap();
            let d = b.dense(x, 10, true).unwrap();
            b.finish(d, None).unwrap()
        };
        let (mut a, mut c) = (build(), build());
        a.init_params(7);
        c.init_params(7);
        assert_eq!(a.params(), c.params());
        assert!(a.params()[1].data().iter().all(|&v| v == 0.0));
        c.init_params(8);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn he_init_variance() {
        // sample-variance oracle pooled over 10 seeds
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[100]).unwrap();
        let d = b.dense(x, 10, true).unwrap();
        let mut net = b.finish(d, None).unwrap();
        let mut vals = Vec::new();
        for seed in 0..10 {
            net.init_params(seed);
            vals.extend_from_slice(net.params()[0].data());
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / 0.02 - 1.0).abs() < 0.2, "variance {var}");
    }
}
