//! Wrist-device recordings: on-disk format, condition labels, sliding windows,
//! leave-one-subject-out folds and a synthetic generator.

mod folds;
mod io;
mod labels;
mod synth;
mod windows;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use folds::{loso_folds, Fold};
pub use io::{load_subject, load_subjects, write_subject, ChannelEntry, LabelEntry, LoadOptions, LoadReport, SubjectManifest};
pub use labels::{map_conditions, protocol, TaskMode, IGNORE};
pub use synth::{class_frequency_hz, subject_ids, synth_dataset, SynthConfig, SUBJECT_IDS};
pub use windows::{segment_windows, LabelRule, Window, WindowConfig};

/// Label track sampling rate of the protocol annotations.
pub const LABEL_RATE_HZ: f64 = 700.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing channel {0}")]
    MissingChannel(String),

    #[error("{file}: length mismatch, expected {expected} bytes, found {actual}")]
    LengthMismatch {
        file: String,
        expected: u64,
        actual: u64,
    },

    #[error("NaN in {channel} at index {index}")]
    NaN { channel: String, index: usize },

    #[error("unreadable {path}: {detail}")]
    Unreadable { path: String, detail: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("inconsistent recording: {0}")]
    Inconsistent(String),

    #[error("invalid window config: {0}")]
    InvalidConfig(String),

    #[error("duplicate subject id {0}")]
    DuplicateSubject(u32),

    #[error("need at least 2 subjects for LOSO, got {0}")]
    TooFewSubjects(usize),
}

/// Wrist-device channels in their canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "ACC_x")]
    AccX,
    #[serde(rename = "ACC_y")]
    AccY,
    #[serde(rename = "ACC_z")]
    AccZ,
    #[serde(rename = "EDA")]
    Eda,
    #[serde(rename = "BVP")]
    Bvp,
    #[serde(rename = "TEMP")]
    Temp,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::AccX,
        Channel::AccY,
        Channel::AccZ,
        Channel::Eda,
        Channel::Bvp,
        Channel::Temp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::AccX => "ACC_x",
            Channel::AccY => "ACC_y",
            Channel::AccZ => "ACC_z",
            Channel::Eda => "EDA",
            Channel::Bvp => "BVP",
            Channel::Temp => "TEMP",
        }
    }

    /// Native sampling rate of the wrist device.
    pub fn rate_hz(self) -> f64 {
        match self {
            Channel::AccX | Channel::AccY | Channel::AccZ => 32.0,
            Channel::Eda | Channel::Temp => 4.0,
            Channel::Bvp => 64.0,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| DataError::Manifest(format!("unknown channel `{s}`")))
    }
}

/// One sampled channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub rate_hz: f64,
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }
}

/// One subject's channels plus the 700 Hz protocol label track.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub subject_id: u32,
    pub channels: BTreeMap<Channel, Signal>,
    pub labels: Vec<u8>,
}

impl RawRecording {
    /// Shortest duration over channels and the label track.
    pub fn duration_s(&self) -> f64 {
        self.channels
            .values()
            .map(Signal::duration_s)
            .fold(self.labels.len() as f64 / LABEL_RATE_HZ, f64::min)
    }

    /// Checks that channel durations agree within 1 s and the label track
    /// length is 700 × duration ± 700.
    pub fn check_consistency(&self) -> Result<(), DataError> {
        let durations: Vec<(Channel, f64)> = self
            .channels
            .iter()
            .map(|(c, s)| (*c, s.duration_s()))
            .collect();
        let lo = durations.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        let hi = durations.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1.0 {
            return Err(DataError::Inconsistent(format!(
                "subject {}: channel durations span {lo:.3}..{hi:.3} s",
                self.subject_id
            )));
        }
        let expect = LABEL_RATE_HZ * hi;
        if (self.labels.len() as f64 - expect).abs() > LABEL_RATE_HZ {
            return Err(DataError::Inconsistent(format!(
                "subject {}: {} labels for a {hi:.3} s recording",
                self.subject_id,
                self.labels.len()
            )));
        }
        Ok(())
    }
}
