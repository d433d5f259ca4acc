//! Built models: finite-difference gradients, branch wiring, initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stressnas::featbank::MIXED_LEN;
use stressnas::models::{
    build_fcn, build_mlp, build_resnet, res_block, Branch, BranchShapes, ModelFamily, ModelSpec, StressNasAssembly,
};
use stressnas::nas::{MacroConfig, SearchSpace};
use stressnas_nn::gradcheck::{check_gradients, GradCheckOptions};
use stressnas_nn::{GraphBuilder, Inputs, Network, NodeId, ParamKind, Tensor};

fn shapes(branches: &[Branch], h: usize, w: usize) -> BranchShapes {
    branches
        .iter()
        .map(|&b| {
            let s = match b {
                Branch::Mixed => vec![MIXED_LEN],
                Branch::Acc => vec![3, h, w],
                _ => vec![1, h, w],
            };
            (b, s)
        })
        .collect()
}

fn random_inputs(net: &Network, batch: usize, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.input_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let mut s = vec![batch];
            s.extend(shape);
            let n = s.iter().product();
            let t = Tensor::from_vec(&s, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            (name, t)
        })
        .collect()
}

fn gradcheck(mut net: Network, label: &str) {
    net.init_params(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let inputs = random_inputs(&net, 3, 7);
    for training in [true, false] {
        let opts = GradCheckOptions {
            training,
            max_coords: 12,
            ..Default::default()
        };
        let report = check_gradients(&mut net, &inputs, &opts).unwrap();
        let worst = report.worst().unwrap();
        assert!(
            report.max_err() < 1e-4,
            "{label} (training {training}): {} rel err {:.3e}",
            worst.name,
            worst.rel_err
        );
        assert_eq!(report.inputs.len(), net.input_shapes().len());
        let all = || report.params.iter().chain(&report.inputs);
        let skipped: usize = all().map(|c| c.skipped).sum();
        assert!(skipped * 20 <= all().map(|c| c.coords).sum::<usize>(), "{label}: {skipped} kinked coordinates");
    }
}

#[test]
fn mlp_gradients() {
    gradcheck(build_mlp(20, 3).unwrap(), "MLP");
}

#[test]
fn fcn_gradients() {
    let s = shapes(&[Branch::Eda, Branch::Mixed], 6, 5);
    gradcheck(build_fcn(&s, 3).unwrap(), "FCN");
}

#[test]
fn resnet_gradients() {
    let s = shapes(&[Branch::Acc, Branch::Temp], 5, 4);
    gradcheck(build_resnet(&s, 2).unwrap(), "ResNet");
}

#[test]
fn stressnas_assembly_gradients() {
    let s = shapes(&[Branch::Bvp, Branch::Temp, Branch::Mixed], 6, 6);
    let space = SearchSpace::REDUCED;
    let assembly = StressNasAssembly {
        rank: 1,
        genotypes: BTreeMap::from([(Branch::Bvp, space.decode(93).unwrap()), (Branch::Temp, space.decode(61).unwrap())]),
        macro_cfg: MacroConfig {
            channels: 2,
            cells_per_stage: 1,
        },
    };
    gradcheck(assembly.build(&s, 3).unwrap(), "StressNAS");
}

#[test]
fn branches_do_not_see_each_other() {
    let s = shapes(&[Branch::Eda, Branch::Bvp, Branch::Mixed], 6, 5);
    let mut net = build_resnet(&s, 3).unwrap();
    net.init_params(1);
    let a = random_inputs(&net, 2, 1);
    let mut b = a.clone();
    for v in b.get_mut("EDA").unwrap().data_mut() {
        *v = -*v * 3.0;
    }
    let snapshot = |net: &mut Network, inputs: &Inputs| -> Vec<(String, Vec<f64>)> {
        net.forward(inputs, false).unwrap();
        net.nodes()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.name.starts_with("BVP/") || n.name.starts_with("MIXED/"))
            .map(|(i, n)| (n.name.clone(), net.activation(NodeId(i)).unwrap().data().to_vec()))
            .collect()
    };
    let before = snapshot(&mut net, &a);
    let after = snapshot(&mut net, &b);
    assert!(!before.is_empty());
    assert_eq!(before, after);

    // and the gradient of any logit reaches EDA only through its own branch
    let logits = net.forward(&a, false).unwrap();
    let grads = net.backward_inputs(&Tensor::full(logits.shape(), 1.0)).unwrap();
    assert!(grads["EDA"].data().iter().any(|v| *v != 0.0));
    assert!(grads["BVP"].data().iter().any(|v| *v != 0.0));
}

#[test]
fn residual_block_with_zero_weights_is_relu() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[4, 5, 5]).unwrap();
    let r = res_block(&mut b, x, 4).unwrap();
    let y = b.global_avg_pool(r).unwrap();
    let mut net = b.finish(y, None).unwrap();
    net.init_params(0);
    let meta = net.param_meta().to_vec();
    for (p, m) in net.params_mut().iter_mut().zip(&meta) {
        if matches!(m.kind, ParamKind::Weight { .. }) {
            p.fill(0.0);
        }
    }
    let inputs = {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut i = Inputs::new();
        i.insert(
            "x".into(),
            Tensor::from_vec(&[2, 4, 5, 5], (0..200).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        );
        i
    };
    net.forward(&inputs, false).unwrap();
    let out = net.activation(r).unwrap().data();
    for (o, v) in out.iter().zip(inputs["x"].data()) {
        assert!((o - v.max(0.0)).abs() < 1e-12);
    }
}

#[test]
fn fcn_with_zero_biases_maps_zeros_to_head_bias() {
    let s = shapes(&[Branch::Eda, Branch::Temp], 6, 5);
    let mut net = build_fcn(&s, 3).unwrap();
    net.init_params(4);
    let meta = net.param_meta().to_vec();
    let last_bias = meta.iter().rposition(|m| matches!(m.kind, ParamKind::Bias)).unwrap();
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        if matches!(meta[i].kind, ParamKind::Bias) {
            p.fill(if i == last_bias { 0.25 } else { 0.0 });
        }
    }
    let mut zeros = Inputs::new();
    for (name, shape) in net.input_shapes() {
        let mut sh = vec![2];
        sh.extend(shape);
        zeros.insert(name, Tensor::zeros(&sh));
    }
    let y = net.forward(&zeros, false).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.25));
}

#[test]
fn he_initialization_variance() {
    let mut net = build_mlp(500, 3).unwrap();
    net.init_params(9);
    let meta = net.param_meta().to_vec();
    for (p, m) in net.params().iter().zip(&meta) {
        match m.kind {
            ParamKind::Weight { fan_in } if p.len() >= 10_000 => {
                let n = p.len() as f64;
                let mean = p.data().iter().sum::<f64>() / n;
                let var = p.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let expected = 2.0 / fan_in as f64;
                assert!((var / expected - 1.0).abs() < 0.05, "{}: {var} vs {expected}", m.name);
                assert!(mean.abs() < 4.0 * (expected / n).sqrt());
            }
            ParamKind::Bias => assert!(p.data().iter().all(|&v| v == 0.0)),
            _ => {}
        }
    }
}

#[test]
fn specs_round_trip_and_rebuild() {
    let s = shapes(&[Branch::Eda, Branch::Mixed], 27, 16);
    for family in [ModelFamily::Mlp, ModelFamily::Fcn, ModelFamily::Resnet] {
        let spec = ModelSpec::manual(family, &s, 3).unwrap();
        let back: ModelSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.family(), family);
        assert_eq!(back.build().unwrap().param_count(), spec.build().unwrap().param_count());
    }
    assert!(ModelSpec::manual(ModelFamily::Stressnas, &s, 3).is_err());
}
