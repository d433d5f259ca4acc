//! Synthetic recordings for desk-scale runs. Each condition drives every channel
//! with its own sinusoid, placed on a filter-bank centre, under an amplitude
//! envelope whose depth and period depend on the condition, plus a condition
//! dependent level shift and white noise. Filter-bank images are mean
//! normalized per filter and the conv models pool globally, so the envelope,
//! not the tone position, is what separates classes there.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{protocol, Channel, RawRecording, Signal, LABEL_RATE_HZ};
use crate::seeds::derive_seed;

/// Subject ids of the wrist dataset after exclusions.
pub const SUBJECT_IDS: [u32; 15] = [2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 17];

/// Protocol code per block, cycling.
const BLOCK_CODES: [u8; 3] = [protocol::BASELINE, protocol::STRESS, protocol::AMUSEMENT];

/// Filter index (of 16 linear filters over [0, Nyquist]) each condition sits on.
const CLASS_FILTER: [f64; 3] = [3.0, 8.0, 13.0];

/// Envelope modulation depth, period (s) and level shift (in amplitudes) per condition.
const CLASS_DEPTH: [f64; 3] = [0.15, 0.9, 0.9];
const CLASS_PERIOD_S: [f64; 3] = [30.0, 16.0, 48.0];
const CLASS_LEVEL: [f64; 3] = [0.0, 1.5, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: f64,
    /// Length of each condition block.
    pub block_s: f64,
    /// Noise std relative to the sinusoid amplitude.
    pub noise: f64,
    /// Relative per-subject frequency jitter bound.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 5,
            duration_s: 600.0,
            block_s: 200.0,
            noise: 0.3,
            jitter: 0.03,
            seed: 0,
        }
    }
}

/// Nominal frequency for a block in position `block % 3` on channel `ch`.
pub fn class_frequency_hz(ch: Channel, block: usize) -> f64 {
    CLASS_FILTER[block % 3] / 17.0 * ch.rate_hz() / 2.0
}

/// (offset, amplitude) giving each channel a plausible physical range.
fn channel_scale(ch: Channel) -> (f64, f64) {
    match ch {
        Channel::AccX | Channel::AccY | Channel::AccZ => (0.0, 0.5),
        Channel::Eda => (2.0, 0.3),
        Channel::Bvp => (0.0, 50.0),
        Channel::Temp => (33.0, 0.2),
    }
}

pub fn subject_ids(n: usize) -> Vec<u32> {
    SUBJECT_IDS
        .iter()
        .copied()
        .chain(18..)
        .take(n)
        .collect()
}

fn synth_subject(cfg: &SynthConfig, subject_id: u32) -> RawRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, subject_id, "synth"));
    let jitter = 1.0 + rng.random_range(-cfg.jitter..=cfg.jitter);
    let block_of = |t: f64| (t / cfg.block_s).floor() as usize;

    let mut channels = BTreeMap::new();
    for ch in Channel::ALL {
        let (offset, amp) = channel_scale(ch);
        let rate = ch.rate_hz();
        let n = (cfg.duration_s * rate).round() as usize;
        let psi = rng.random_range(0.0..2.0 * PI);
        let phase = rng.random_range(0.0..2.0 * PI);
        let noise = Normal::new(0.0, cfg.noise * amp).expect("finite std");
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let block = block_of(t);
                let c = block % 3;
                let f = class_frequency_hz(ch, block) * jitter;
                let envelope = 1.0 + CLASS_DEPTH[c] * (2.0 * PI * t / CLASS_PERIOD_S[c] + psi).sin();
                offset
                    + amp * CLASS_LEVEL[c]
                    + amp * envelope * (2.0 * PI * f * t + phase).sin()
                    + noise.sample(&mut rng)
            })
            .collect();
        channels.insert(ch, Signal { rate_hz: rate, samples });
    }
    let n_labels = (cfg.duration_s * LABEL_RATE_HZ).round() as usize;
    let labels = (0..n_labels)
        .map(|i| BLOCK_CODES[block_of(i as f64 / LABEL_RATE_HZ) % 3])
        .collect();
    RawRecording {
        subject_id,
        channels,
        labels,
    }
}

/// `cfg.n_subjects` recordings with the wrist channel names and rates; labels
/// cycle baseline, stress, amusement in blocks of `cfg.block_s`.
pub fn synth_dataset(cfg: &SynthConfig) -> Vec<RawRecording> {
    let ids = subject_ids(cfg.n_subjects);
    stressnas_nn::par::map(&ids, |&s| synth_subject(cfg, s))
}
