//! Acceptance checks. One PASS/FAIL line per criterion, with measured values,
//! tolerances and wall-clock time. Exits non-zero if any criterion fails.
//!
//! `STRESSNAS_DATA_DIR` points the real-data window count at a converted
//! dataset; it is skipped otherwise.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stressnas::dataset::{
    load_subjects, segment_windows, Channel, LabelRule, LoadOptions, RawRecording, Signal, TaskMode, WindowConfig,
    LABEL_RATE_HZ,
};
use stressnas::featbank::{power_spectrum, triangular_filterbank, MIXED_LEN};
use stressnas::harness::{run_fold, run_loso_on, ExperimentConfig, FeatureSet, Profile};
use stressnas::models::{build_fcn, build_mlp, build_resnet, Branch, BranchShapes, SensorCombination, StressNasAssembly};
use stressnas::nas::{
    input_jacobian, sample_genotypes, score_from_jacobian, Genotype, MacroConfig, SearchSpace,
};
use stressnas_nn::gradcheck::{check_gradients, GradCheckOptions};
use stressnas_nn::{GraphBuilder, Inputs, Network, NodeId, Padding, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = t.elapsed();
    let (mut pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let mut timing = format!("{:.1} s", elapsed.as_secs_f64());
    if let Some(l) = limit {
        timing.push_str(&format!(" / limit {} s", l.as_secs()));
        pass &= elapsed <= l;
    }
    println!("{} {name}: {detail} [{timing}]", if pass { "PASS" } else { "FAIL" });
    pass
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// ---- DSP ----

fn dsp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let nfft = 1usize << rng.random_range(3..=9);
        let len = rng.random_range(1..=nfft);
        let frame: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = power_spectrum(&frame, nfft).unwrap();
        let naive: Vec<f64> = (0..=nfft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let a = -2.0 * PI * ((k * n) % nfft) as f64 / nfft as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im) / nfft as f64
            })
            .collect();
        let num: f64 = fast.iter().zip(&naive).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = naive.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    let mut unity: f64 = 0.0;
    for (nfft, m) in [(32, 16), (512, 16), (256, 40), (64, 5)] {
        let f = triangular_filterbank(nfft, m).unwrap();
        let step = (nfft / 2) as f64 / (m + 1) as f64;
        for k in 0..=nfft / 2 {
            let kf = k as f64;
            if kf >= step && kf <= m as f64 * step {
                let s: f64 = f.iter().map(|r| r[k]).sum();
                unity = unity.max((s - 1.0).abs());
            }
        }
    }
    outcome(
        worst < 1e-9 && unity < 1e-9,
        format!("max rel err vs naive DFT {worst:.2e} (< 1e-9), partition of unity {unity:.2e} (< 1e-9)"),
    )
}

// ---- gradients ----

fn layer_nets() -> Vec<(&'static str, Network)> {
    fn head(mut b: GraphBuilder, x: NodeId) -> Network {
        let x = if b.shape(x).len() == 3 { b.global_avg_pool(x).unwrap() } else { x };
        let y = b.dense(x, 3, true).unwrap();
        b.finish(y, None).unwrap()
    }
    let mut nets = Vec::new();
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[6]).unwrap();
    nets.push(("dense", head(b, x)));
    for (name, k, stride, pad) in [
        ("conv same", 3, 1, Padding::Same),
        ("conv valid", 3, 1, Padding::Valid),
        ("conv stride 2", 3, 2, Padding::Same),
        ("conv 1x1", 1, 1, Padding::Same),
    ] {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[2, 6, 5]).unwrap();
        let c = b.conv2d(x, 3, k, stride, pad, true).unwrap();
        nets.push((name, head(b, c)));
    }
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[2, 4, 4]).unwrap();
    let n = b.batch_norm(x).unwrap();
    nets.push(("batch norm", head(b, n)));
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[8]).unwrap();
    let r = b.relu(x).unwrap();
    nets.push(("relu", head(b, r)));
    for (name, k, s) in [("avg pool 3/1", 3, 1), ("avg pool 2/2", 2, 2)] {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[2, 5, 5]).unwrap();
        let p = b.avg_pool(x, k, s, Padding::Same).unwrap();
        nets.push((name, head(b, p)));
    }
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[5]).unwrap();
    let s = b.softmax(x).unwrap();
    nets.push(("softmax", head(b, s)));
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[2, 3, 3]).unwrap();
    let y = b.input("y", &[2, 3, 3]).unwrap();
    let z = b.zeroize(y).unwrap();
    let a = b.add(&[x, y, z]).unwrap();
    let g1 = b.global_avg_pool(a).unwrap();
    let g2 = b.global_avg_pool(x).unwrap();
    let c = b.concat(&[g1, g2]).unwrap();
    nets.push(("add/concat/zeroize", head(b, c)));

    let img = |h, w| -> BranchShapes {
        BTreeMap::from([(Branch::Eda, vec![1, h, w]), (Branch::Mixed, vec![MIXED_LEN])])
    };
    nets.push(("MLP", build_mlp(12, 3).unwrap()));
    nets.push(("FCN", build_fcn(&img(6, 5), 3).unwrap()));
    nets.push(("ResNet", build_resnet(&img(5, 4), 3).unwrap()));
    let assembly = StressNasAssembly {
        rank: 1,
        genotypes: BTreeMap::from([(Branch::Eda, SearchSpace::REDUCED.decode(93).unwrap())]),
        macro_cfg: MacroConfig {
            channels: 2,
            cells_per_stage: 1,
        },
    };
    nets.push(("StressNAS", assembly.build(&img(6, 6), 3).unwrap()));
    nets
}

fn gradients() -> Outcome {
    let mut worst = (0.0, String::new());
    let (mut count, mut probed, mut skipped) = (0, 0, 0);
    for (name, mut net) in layer_nets() {
        net.init_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let mut inputs = Inputs::new();
        for (n, shape) in net.input_shapes() {
            let mut s = vec![3];
            s.extend(shape);
            inputs.insert(n, random_tensor(&s, &mut rng));
        }
        for training in [true, false] {
            let opts = GradCheckOptions {
                training,
                max_coords: 16,
                ..Default::default()
            };
            let r = check_gradients(&mut net, &inputs, &opts).unwrap();
            assert!(!r.params.is_empty() && !r.inputs.is_empty());
            for c in r.params.iter().chain(&r.inputs) {
                probed += c.coords;
                skipped += c.skipped;
            }
            if r.max_err() > worst.0 {
                let w = r.worst().unwrap();
                worst = (r.max_err(), format!("{name}: {}", w.name));
            }
            count += 1;
        }
    }
    outcome(
        worst.0 < 1e-4 && skipped * 20 <= probed,
        format!(
            "{count} checks on parameters and inputs, worst rel err {:.2e} at {} (< 1e-4); {skipped}/{probed} coordinates at ReLU kinks skipped (≤ 5%)",
            worst.0, worst.1
        ),
    )
}

// ---- codec ----

fn codec() -> Outcome {
    let space = SearchSpace::FULL;
    let round_trip = (0..space.size()).all(|i| space.decode(i).unwrap().encode() == i);
    let a = sample_genotypes(space, 10_000, 77).unwrap();
    let b = sample_genotypes(space, 10_000, 77).unwrap();
    let distinct = a.iter().map(Genotype::encode).collect::<HashSet<_>>().len();
    outcome(
        round_trip && distinct == 10_000 && a == b,
        format!(
            "{} genotypes round-trip: {round_trip}; sample of 10000 distinct: {distinct}; deterministic: {}",
            space.size(),
            a == b
        ),
    )
}

// ---- score ----

fn score() -> Outcome {
    let eps = 1e-5;
    let f = |l: f64| (l + eps).ln() + 1.0 / (l + eps);
    let n = 32;
    let ident: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = vec![0.0; 2 * n];
            r[2 * i] = 1.0;
            r[2 * i + 1] = -1.0;
            r
        })
        .collect();
    let s_id = score_from_jacobian(&ident, eps).unwrap().value;
    let id_err = (s_id - (-(n as f64) * f(1.0))).abs();

    let row: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
    let dup = vec![row; 8];
    let s_dup = score_from_jacobian(&dup, eps).unwrap().value;
    let dup_exact = -(f(8.0) + 7.0 * f(0.0));
    let dup_err = ((s_dup - dup_exact) / dup_exact).abs();

    let mut b = GraphBuilder::new();
    let x = b.input("x", &[4]).unwrap();
    let h = b.dense(x, 6, true).unwrap();
    let h = b.relu(h).unwrap();
    let y = b.dense(h, 2, true).unwrap();
    let mut net = b.finish(y, None).unwrap();
    net.init_params(8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inputs = Inputs::new();
    inputs.insert("x".into(), random_tensor(&[3, 4], &mut rng));
    let rows = input_jacobian(&mut net, &inputs).unwrap();
    let mut fd_err: f64 = 0.0;
    let step = 1e-6;
    for s in 0..3 {
        for k in 0..4 {
            let eval = |d: f64| {
                let mut v = inputs["x"].sample(s).to_vec();
                v[k] += d;
                let mut i = Inputs::new();
                i.insert("x".into(), Tensor::from_vec(&[1, 4], v).unwrap());
                net.infer(&i).unwrap().sum()
            };
            let fd = (eval(step) - eval(-step)) / (2.0 * step);
            fd_err = fd_err.max((rows[s][k] - fd).abs() / (1.0 + fd.abs()));
        }
    }
    outcome(
        id_err < 1e-9 && dup_err < 1e-9 && fd_err < 1e-6,
        format!(
            "identity N=32 → {s_id:.6} (closed form err {id_err:.1e}); rank-one N=8 rel err {dup_err:.1e}; \
             Jacobian vs finite differences {fd_err:.1e} (< 1e-6)"
        ),
    )
}

// ---- windowing ----

fn windowing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut total = 0;
    for id in 0..50u32 {
        let duration = rng.random_range(20.0..100.0_f64).round();
        let n_labels = (duration * LABEL_RATE_HZ) as usize;
        let mut labels = Vec::with_capacity(n_labels);
        while labels.len() < n_labels {
            let code = rng.random_range(0..=4u8);
            labels.extend(std::iter::repeat_n(code, rng.random_range(500..40_000)));
        }
        labels.truncate(n_labels);
        let channels = Channel::ALL
            .into_iter()
            .map(|ch| {
                let n = (duration * ch.rate_hz()) as usize;
                (
                    ch,
                    Signal {
                        rate_hz: ch.rate_hz(),
                        samples: (0..n).map(|i| i as f64).collect(),
                    },
                )
            })
            .collect();
        let rec = RawRecording {
            subject_id: id,
            channels,
            labels,
        };
        let cfg = WindowConfig {
            window_len_s: rng.random_range(2..=30) as f64,
            shift_s: [0.25, 0.5, 1.0, 3.0][rng.random_range(0..4)],
            label_rule: LabelRule::StrictHomogeneous,
        };
        let mode = if id % 3 == 0 { TaskMode::Binary } else { TaskMode::ThreeState };
        let got = segment_windows(&rec, &cfg, mode).unwrap();

        let mut want = Vec::new();
        let mut k = 0;
        while k as f64 * cfg.shift_s + cfg.window_len_s <= duration + 1e-9 {
            let t = k as f64 * cfg.shift_s;
            k += 1;
            let a = (t * LABEL_RATE_HZ).round() as usize;
            let b = ((t + cfg.window_len_s) * LABEL_RATE_HZ).round() as usize;
            let c: Vec<u8> = rec.labels[a..b].iter().map(|&l| mode.class_of(l)).collect();
            if c[0] != stressnas::dataset::IGNORE && c.iter().all(|&v| v == c[0]) {
                want.push((t, c[0], (t * 64.0).round()));
            }
        }
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, w)| {
                g.start_time_s == w.0 && g.class_label == w.1 && g.channel(Channel::Bvp).unwrap()[0] == w.2
            });
        if !same {
            return outcome(false, format!("recording {id}: {} windows vs {} expected", got.len(), want.len()));
        }
        total += got.len();
    }
    outcome(true, format!("50 random recordings, {total} windows agree in count, start, label and slice"))
}

// ---- end to end ----

fn desk_end_to_end() -> Outcome {
    let cfg = ExperimentConfig::profile(Profile::Desk, 42);
    let t = Instant::now();
    let recs = cfg.data.load().unwrap();
    let set = FeatureSet::extract(&recs, &cfg.combination, &cfg.window, &cfg.filterbank, cfg.task).unwrap();
    let table = run_loso_on(&set, &cfg).unwrap();
    let elapsed = t.elapsed();
    let (mean, sd) = table.accuracy();
    let per: Vec<String> = table.folds.iter().map(|f| format!("S{} {:.3}", f.held_out, f.accuracy)).collect();

    // rerun one fold from scratch and compare everything it reports
    let first = &table.folds[0];
    let train: Vec<u32> = set.subject_ids().into_iter().filter(|&s| s != first.held_out).collect();
    let again = run_fold(&set, first.held_out, &train, &cfg).unwrap();
    let deterministic = serde_json::to_value(first).unwrap() == serde_json::to_value(&again).unwrap();

    let ok = mean >= 0.90 && elapsed <= Duration::from_secs(15 * 60) && deterministic;
    outcome(
        ok,
        format!(
            "{} · mean accuracy {mean:.4} ± {sd:.4} (≥ 0.90) [{}] in {:.0} s (≤ 900 s); fold rerun identical: {deterministic}",
            cfg.combination,
            per.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn rank_study() -> Outcome {
    let mut cfg = ExperimentConfig::profile(Profile::Desk, 42);
    cfg.family = stressnas::models::ModelFamily::Stressnas;
    cfg.combination = SensorCombination::new(vec![Branch::Temp]).unwrap();
    cfg.search.n_candidates = 125;
    cfg.search.top_k = 125;
    cfg.train.epochs = 2;
    cfg.macro_cfg = MacroConfig {
        channels: 4,
        cells_per_stage: 1,
    };
    let recs = cfg.data.load().unwrap();
    let set = FeatureSet::extract(&recs, &cfg.combination, &cfg.window, &cfg.filterbank, cfg.task).unwrap();
    let ids = set.subject_ids();
    let held = ids[0];
    let fold = run_fold(&set, held, &ids[1..], &cfg).unwrap();
    let scored = &fold.search[&Branch::Temp];
    let scores: Vec<f64> = fold.candidates.iter().map(|c| scored[c.rank - 1].score).collect();
    let acc: Vec<f64> = fold.candidates.iter().map(|c| c.test_accuracy.unwrap()).collect();
    let rho = spearman(&scores, &acc);
    let degenerate = scored.iter().filter(|c| c.degenerate).count();
    outcome(
        true,
        format!(
            "informational · TEMP branch, all 125 reduced genotypes trained 2 epochs, held-out S{held}: \
             Spearman(score, accuracy) = {rho:.3} ({}), {degenerate} degenerate",
            if rho > 0.0 { "positive" } else { "not positive" }
        ),
    )
}

fn real_data_count(dir: std::ffi::OsString) -> Outcome {
    let recs = match load_subjects(std::path::Path::new(&dir), LoadOptions { interp_nan: true }) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("cannot load {}: {e}", dir.to_string_lossy())),
    };
    let cfg = WindowConfig::default();
    let total: usize = recs
        .iter()
        .map(|r| segment_windows(r, &cfg, TaskMode::ThreeState).unwrap().len())
        .sum();
    let rel = (total as f64 - 132_600.0) / 132_600.0;
    outcome(
        rel.abs() <= 0.05,
        format!("{} subjects, {total} windows ({:+.2} % of 132600, within ±5 %)", recs.len(), 100.0 * rel),
    )
}

fn main() {
    let mut ok = true;
    ok &= run("DSP oracle", Some(Duration::from_secs(10)), dsp);
    ok &= run("gradient suite", Some(Duration::from_secs(120)), gradients);
    ok &= run("genotype codec", Some(Duration::from_secs(5)), codec);
    ok &= run("score correctness", Some(Duration::from_secs(30)), score);
    ok &= run("windowing law", Some(Duration::from_secs(30)), windowing);
    ok &= run("end-to-end desk run", None, desk_end_to_end);
    ok &= run("reduced-space rank study", None, rank_study);
    match std::env::var_os("STRESSNAS_DATA_DIR") {
        Some(dir) => ok &= run("real-data window count", None, || real_data_count(dir)),
        None => println!("SKIP real-data window count: STRESSNAS_DATA_DIR not set"),
    }
    if !ok {
        std::process::exit(1);
    }
}
