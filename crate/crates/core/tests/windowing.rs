//! segment_windows against a brute-force scan of every candidate start time.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stressnas::dataset::{
    loso_folds, protocol, segment_windows, Channel, DataError, LabelRule, RawRecording, Signal, TaskMode,
    WindowConfig, LABEL_RATE_HZ,
};

fn random_recording(rng: &mut ChaCha8Rng, id: u32) -> RawRecording {
    let duration = rng.random_range(20.0..90.0_f64).round();
    let mut labels = Vec::new();
    let n_labels = (duration * LABEL_RATE_HZ) as usize;
    while labels.len() < n_labels {
        let code = rng.random_range(0..=5u8);
        let run = rng.random_range(700..30_000);
        labels.extend(std::iter::repeat_n(code, run));
    }
    labels.truncate(n_labels);
    let mut channels = BTreeMap::new();
    for ch in Channel::ALL {
        let n = (duration * ch.rate_hz()) as usize;
        let samples = (0..n).map(|i| i as f64 + ch.rate_hz() * 1e6).collect();
        channels.insert(
            ch,
            Signal {
                rate_hz: ch.rate_hz(),
                samples,
            },
        );
    }
    RawRecording {
        subject_id: id,
        channels,
        labels,
    }
}

struct Expected {
    start: f64,
    class: u8,
}

fn scan(rec: &RawRecording, w: f64, shift: f64, mode: TaskMode) -> Vec<Expected> {
    let duration = rec
        .channels
        .values()
        .map(|s| s.samples.len() as f64 / s.rate_hz)
        .fold(rec.labels.len() as f64 / LABEL_RATE_HZ, f64::min);
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * shift;
        if t + w > duration + 1e-9 {
            break;
        }
        k += 1;
        let a = (t * LABEL_RATE_HZ).round() as usize;
        let b = ((t + w) * LABEL_RATE_HZ).round() as usize;
        let classes: Vec<u8> = rec.labels[a..b].iter().map(|&c| mode.class_of(c)).collect();
        let first = classes[0];
        if first == stressnas::dataset::IGNORE || classes.iter().any(|&c| c != first) {
            continue;
        }
        let fits = rec.channels.values().all(|s| {
            (t * s.rate_hz).round() as usize + (w * s.rate_hz).round() as usize <= s.samples.len()
        });
        if fits {
            out.push(Expected { start: t, class: first });
        }
    }
    out
}

#[test]
fn agrees_with_brute_force_on_random_recordings() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut total = 0;
    for id in 0..50 {
        let rec = random_recording(&mut rng, id);
        let cfg = WindowConfig {
            window_len_s: rng.random_range(2..=20) as f64,
            shift_s: [0.25, 0.5, 1.0, 2.5][rng.random_range(0..4)],
            label_rule: LabelRule::StrictHomogeneous,
        };
        let mode = if id % 2 == 0 { TaskMode::ThreeState } else { TaskMode::Binary };
        let got = segment_windows(&rec, &cfg, mode).unwrap();
        let want = scan(&rec, cfg.window_len_s, cfg.shift_s, mode);
        assert_eq!(got.len(), want.len(), "recording {id}");
        total += got.len();
        for (g, e) in got.iter().zip(&want) {
            assert_eq!(g.start_time_s, e.start);
            assert_eq!(g.class_label, e.class);
            assert_eq!(g.subject_id, id);
            for ch in Channel::ALL {
                let rate = ch.rate_hz();
                let s = g.channel(ch).unwrap();
                let start = (e.start * rate).round() as usize;
                assert_eq!(s.len(), (cfg.window_len_s * rate).round() as usize);
                assert_eq!(s[0], start as f64 + rate * 1e6);
                assert_eq!(g.rate_hz(ch), Some(rate));
            }
        }
    }
    assert!(total > 0);
}

#[test]
fn every_window_start_is_a_multiple_of_the_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let rec = random_recording(&mut rng, 1);
    let cfg = WindowConfig {
        window_len_s: 5.0,
        shift_s: 0.25,
        label_rule: LabelRule::StrictHomogeneous,
    };
    for w in segment_windows(&rec, &cfg, TaskMode::ThreeState).unwrap() {
        let k = w.start_time_s / 0.25;
        assert_eq!(k, k.round());
    }
}

#[test]
fn homogeneous_baseline_gives_the_closed_form_count() {
    // D = 100 s, W = 60 s, shift 0.25 s → floor(40 / 0.25) + 1 = 161
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut rec = random_recording(&mut rng, 2);
    let d = rec.duration_s();
    rec.labels = vec![protocol::BASELINE; (d * LABEL_RATE_HZ) as usize];
    let cfg = WindowConfig::default();
    let n = segment_windows(&rec, &cfg, TaskMode::ThreeState).unwrap().len();
    if d >= 60.0 {
        assert_eq!(n, ((d - 60.0) / 0.25).floor() as usize + 1);
    } else {
        assert_eq!(n, 0);
    }
}

#[test]
fn loso_folds_cover_each_subject_once() {
    let ids = [9, 2, 5, 11];
    let folds = loso_folds(&ids).unwrap();
    assert_eq!(folds.len(), 4);
    for f in &folds {
        assert!(!f.train.contains(&f.held_out));
        assert_eq!(f.train.len(), 3);
    }
    let mut held: Vec<u32> = folds.iter().map(|f| f.held_out).collect();
    held.sort();
    assert_eq!(held, vec![2, 5, 9, 11]);
    assert!(matches!(loso_folds(&[3]), Err(DataError::TooFewSubjects(1))));
    assert!(matches!(loso_folds(&[3, 3]), Err(DataError::DuplicateSubject(3))));
}
