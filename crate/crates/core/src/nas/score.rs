use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use stressnas_nn::{Inputs, Network, Tensor};

use super::NasError;

/// Rows whose squared norm falls below this make a candidate degenerate.
pub const DEGENERATE_DIAG: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub batch_size: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            eps: 1e-5,
            seed: 0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), NasError> {
        if self.batch_size < 2 {
            return Err(NasError::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !(self.eps > 0.0) {
            return Err(NasError::InvalidConfig("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    /// `−Σ log(λ+ε) + 1/(λ+ε)`, or `−∞` when degenerate.
    pub value: f64,
    pub degenerate: bool,
    /// Eigenvalues of the correlation matrix, descending (empty when degenerate).
    pub eigenvalues: Vec<f64>,
}

/// Per-sample gradient of the summed logits with respect to every input,
/// flattened and concatenated in input-name order. Uses running statistics
/// for batch normalization so rows depend on their own sample only.
pub fn input_jacobian(net: &mut Network, inputs: &Inputs) -> Result<Vec<Vec<f64>>, NasError> {
    let logits = net.forward(inputs, false)?;
    let grads = net.backward_inputs(&Tensor::full(logits.shape(), 1.0))?;
    let n = logits.batch();
    Ok((0..n)
        .map(|i| grads.values().flat_map(|g| g.sample(i).iter().copied()).collect())
        .collect())
}

/// Score of a Jacobian with one row per sample.
pub fn score_from_jacobian(rows: &[Vec<f64>], eps: f64) -> Result<Score, NasError> {
    let n = rows.len();
    if n < 2 {
        return Err(NasError::InvalidConfig(format!("need at least 2 rows, got {n}")));
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
            r.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    if (0..n).any(|i| !(c[(i, i)] >= DEGENERATE_DIAG)) {
        return Ok(Score {
            value: f64::NEG_INFINITY,
            degenerate: true,
            eigenvalues: Vec::new(),
        });
    }
    let d: Vec<f64> = (0..n).map(|i| c[(i, i)].sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { c[(i, j)] / (d[i] * d[j]) });
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000).ok_or(NasError::EigenSolver)?;
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    // round-off can push zero eigenvalues slightly negative
    let value = -eigenvalues
        .iter()
        .map(|&l| {
            let l = l.max(0.0) + eps;
            l.ln() + 1.0 / l
        })
        .sum::<f64>();
    Ok(Score {
        value,
        degenerate: false,
        eigenvalues,
    })
}

/// Training-free score of a freshly initialized network on one batch.
pub fn naswot_score(net: &mut Network, batch: &Inputs, cfg: &ScoreConfig) -> Result<Score, NasError> {
    cfg.validate()?;
    let rows = input_jacobian(net, batch)?;
    score_from_jacobian(&rows, cfg.eps)
}
