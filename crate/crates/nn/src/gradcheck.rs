//! Central finite-difference gradient checking.
//!
//! The check projects the logits onto a fixed random direction `r`, so the
//! scalar objective is `L = Σ r ⊙ logits`, and compares the analytic gradient
//! from [`Network::backward`] against `(L(θ+h) − L(θ−h)) / 2h` for a sample of
//! coordinates of every parameter tensor and every input. Only `forward` is used
//! on the numeric side.
//!
//! ReLU and max-style ops are not differentiable everywhere. A coordinate whose
//! one-sided slopes `(L(θ+h) − L(θ))/h` and `(L(θ) − L(θ−h))/h` disagree by more
//! than `kink_tol` times the larger of its own slopes and the tensor's RMS
//! central difference has a kink inside `[θ−h, θ+h]`; the central difference is
//! meaningless there and the coordinate is skipped.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Inputs, Network};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates probed per tensor (all when the tensor is smaller).
    pub max_coords: usize,
    pub training: bool,
    pub seed: u64,
    pub kink_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 24,
            training: true,
            seed: 0,
            kink_tol: 1e-4,
        }
    }
}

/// Relative error of one tensor's probed coordinates.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub rel_err: f64,
    pub coords: usize,
    /// Probed coordinates dropped because a kink lies within the step.
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<TensorCheck>,
    pub inputs: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_param_err(&self) -> f64 {
        self.params.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn max_input_err(&self) -> f64 {
        self.inputs.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn max_err(&self) -> f64 {
        self.max_param_err().max(self.max_input_err())
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.params
            .iter()
            .chain(&self.inputs)
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both are negligible.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

fn objective(net: &mut Network, inputs: &Inputs, r: &Tensor, training: bool) -> Result<f64> {
    let y = net.forward(inputs, training)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Step ratio for re-probing a coordinate whose one-sided slopes disagree.
const RETRY: f64 = 16.0;

fn kinked(up: f64, mid: f64, down: f64, h: f64, floor: f64, tol: f64) -> bool {
    let (a, b) = ((up - mid) / h, (mid - down) / h);
    (a - b).abs() > tol * a.abs().max(b.abs()).max(floor)
}

/// Numeric gradients for `coords`, where `eval(i, d)` is the objective with
/// coordinate `i` shifted by `d`. A coordinate flagged as kinked at step `h` is
/// re-probed at `h / RETRY`; curvature shrinks the slope gap with the step, a
/// kink inside the interval does not. Returns `(coord, numeric)` pairs and the
/// number skipped.
fn numeric_grads(
    coords: &[usize],
    mid: f64,
    h: f64,
    tol: f64,
    eval: &mut dyn FnMut(usize, f64) -> Result<f64>,
) -> Result<(Vec<(usize, f64)>, usize)> {
    let mut probes = Vec::with_capacity(coords.len());
    for &i in coords {
        probes.push((i, eval(i, h)?, eval(i, -h)?));
    }
    let central = |up: f64, down: f64, h: f64| (up - down) / (2.0 * h);
    let rms = (probes.iter().map(|p| central(p.1, p.2, h).powi(2)).sum::<f64>()
        / probes.len().max(1) as f64)
        .sqrt();
    let (mut out, mut skipped) = (Vec::with_capacity(probes.len()), 0);
    for (i, up, down) in probes {
        if !kinked(up, mid, down, h, rms, tol) {
            out.push((i, central(up, down, h)));
            continue;
        }
        let h2 = h / RETRY;
        let (up, down) = (eval(i, h2)?, eval(i, -h2)?);
        if kinked(up, mid, down, h2, rms, tol) {
            skipped += 1;
        } else {
            out.push((i, central(up, down, h2)));
        }
    }
    Ok((out, skipped))
}

fn tensor_check(name: String, coords: usize, numeric: &[(usize, f64)], skipped: usize, grad: &Tensor) -> TensorCheck {
    let analytic: Vec<f64> = numeric.iter().map(|&(i, _)| grad.data()[i]).collect();
    let values: Vec<f64> = numeric.iter().map(|&(_, v)| v).collect();
    TensorCheck {
        name,
        rel_err: relative_error(&analytic, &values),
        coords,
        skipped,
    }
}

fn probe(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Runs the check; the network's parameters and buffers are restored afterwards.
pub fn check_gradients(
    net: &mut Network,
    inputs: &Inputs,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let saved = net.state();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let logits = net.forward(inputs, opts.training)?;
    let r_data = (0..logits.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let r = Tensor::from_vec(logits.shape(), r_data)?;
    let grads = net.backward(&r)?;
    let mid = objective(net, inputs, &r, opts.training)?;
    let (h, tol, training) = (opts.step, opts.kink_tol, opts.training);

    let mut params = Vec::new();
    for p in 0..net.params().len() {
        let coords = probe(net.params()[p].len(), opts.max_coords, &mut rng);
        let (numeric, skipped) = numeric_grads(&coords, mid, h, tol, &mut |i, d| {
            let orig = net.params()[p].data()[i];
            net.params_mut()[p].data_mut()[i] = orig + d;
            let v = objective(net, inputs, &r, training);
            net.params_mut()[p].data_mut()[i] = orig;
            v
        })?;
        let name = net.param_meta()[p].name.clone();
        params.push(tensor_check(name, coords.len(), &numeric, skipped, &grads.params[p]));
    }

    let mut checks = Vec::new();
    let mut perturbed = inputs.clone();
    for (name, t) in inputs {
        let coords = probe(t.len(), opts.max_coords, &mut rng);
        let (numeric, skipped) = numeric_grads(&coords, mid, h, tol, &mut |i, d| {
            perturbed.get_mut(name).expect("same keys").data_mut()[i] = t.data()[i] + d;
            let v = objective(net, &perturbed, &r, training);
            perturbed.get_mut(name).expect("same keys").data_mut()[i] = t.data()[i];
            v
        })?;
        checks.push(tensor_check(name.clone(), coords.len(), &numeric, skipped, &grads.inputs[name]));
    }
    net.load_state(saved)?;
    Ok(GradCheckReport {
        params,
        inputs: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    #[test]
    fn coordinates_straddling_a_relu_kink_are_skipped() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[4]).unwrap();
        let r = b.relu(x).unwrap();
        let mut net = b.finish(r, None).unwrap();
        // 1e-8 and -3e-8 lie within a step of zero even after the retry
        let t = Tensor::from_vec(&[1, 4], vec![1e-8, 0.5, -3e-8, -0.5]).unwrap();
        let inputs: Inputs = [("x".to_string(), t)].into_iter().collect();
        let report = check_gradients(&mut net, &inputs, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.inputs[0].skipped, 2);
        assert!(report.max_err() < 1e-9);

        let loose = GradCheckOptions {
            kink_tol: f64::INFINITY,
            ..Default::default()
        };
        let report = check_gradients(&mut net, &inputs, &loose).unwrap();
        assert_eq!(report.inputs[0].skipped, 0);
        assert!(report.max_err() > 0.1);
    }

    #[test]
    fn curvature_is_reprobed_and_kinks_are_skipped() {
        // coordinate 0: f = 2x + 20x² (slope gap 4e-4 at h = 1e-5, 2.5e-5 at h/16);
        // coordinate 1: f = |x − 1e-7| (kink within h/16)
        let mut eval = |i: usize, d: f64| -> Result<f64> {
            Ok(if i == 0 { 2.0 * d + 20.0 * d * d } else { (d - 1e-7).abs() - 1e-7 })
        };
        let (out, skipped) = numeric_grads(&[0, 1], 0.0, 1e-5, 1e-4, &mut eval).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, 0);
        assert!((out[0].1 - 2.0).abs() < 1e-9);
    }
}
