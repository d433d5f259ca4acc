//! Neutral on-disk format: little-endian f32 channel files, a u8 label file and
//! `manifest.json` per subject directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Channel, DataError, RawRecording, Signal, LABEL_RATE_HZ};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub name: String,
    pub sample_rate_hz: f64,
    pub file: String,
    pub n_samples: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub file: String,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectManifest {
    pub subject_id: u32,
    pub channels: Vec<ChannelEntry>,
    pub label: LabelEntry,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Linearly interpolate interior NaN runs instead of failing.
    pub interp_nan: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub nan_repaired: usize,
}

fn unreadable(path: &Path, e: impl ToString) -> DataError {
    DataError::Unreadable {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

fn read_checked(path: &Path, expected: u64) -> Result<Vec<u8>, DataError> {
    let bytes = fs::read(path).map_err(|e| unreadable(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(DataError::LengthMismatch {
            file: path.display().to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

/// Fills interior NaN runs by linear interpolation; returns the count repaired.
fn interpolate_nans(channel: &str, x: &mut [f64]) -> Result<usize, DataError> {
    let mut repaired = 0;
    let mut i = 0;
    while i < x.len() {
        if !x[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < x.len() && x[i].is_nan() {
            i += 1;
        }
        if start == 0 || i == x.len() {
            // no neighbour on one side
            return Err(DataError::NaN {
                channel: channel.to_string(),
                index: if start == 0 { start } else { x.len() - 1 },
            });
        }
        let (a, b) = (x[start - 1], x[i]);
        let span = (i - start + 1) as f64;
        for (k, v) in x[start..i].iter_mut().enumerate() {
            *v = a + (b - a) * (k + 1) as f64 / span;
        }
        repaired += i - start;
    }
    Ok(repaired)
}

/// Loads one subject directory. Fails rather than repairing, except for interior
/// NaNs when `opts.interp_nan` is set.
pub fn load_subject(dir: &Path, opts: LoadOptions) -> Result<(RawRecording, LoadReport), DataError> {
    let mpath = dir.join(MANIFEST);
    let raw = fs::read(&mpath).map_err(|e| unreadable(&mpath, e))?;
    let manifest: SubjectManifest =
        serde_json::from_slice(&raw).map_err(|e| DataError::Manifest(format!("{}: {e}", mpath.display())))?;

    let mut report = LoadReport::default();
    let mut channels = BTreeMap::new();
    for ch in Channel::ALL {
        let entry = manifest
            .channels
            .iter()
            .find(|e| e.name == ch.name())
            .ok_or_else(|| DataError::MissingChannel(ch.name().to_string()))?;
        if entry.dtype != "f32le" {
            return Err(DataError::Manifest(format!(
                "{}: dtype `{}`, expected f32le",
                ch, entry.dtype
            )));
        }
        if !(entry.sample_rate_hz > 0.0) {
            return Err(DataError::Manifest(format!("{ch}: non-positive sample rate")));
        }
        let path = dir.join(&entry.file);
        let bytes = read_checked(&path, entry.n_samples as u64 * 4)?;
        let mut samples: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        if opts.interp_nan {
            report.nan_repaired += interpolate_nans(ch.name(), &mut samples)?;
        } else if let Some(index) = samples.iter().position(|v| v.is_nan()) {
            return Err(DataError::NaN {
                channel: ch.name().to_string(),
                index,
            });
        }
        channels.insert(
            ch,
            Signal {
                rate_hz: entry.sample_rate_hz,
                samples,
            },
        );
    }
    let label = &manifest.label;
    if label.dtype != "u8" || label.sample_rate_hz != LABEL_RATE_HZ {
        return Err(DataError::Manifest(format!(
            "label track must be u8 at 700 Hz, got {} at {}",
            label.dtype, label.sample_rate_hz
        )));
    }
    let labels = read_checked(&dir.join(&label.file), label.n_samples as u64)?;
    let rec = RawRecording {
        subject_id: manifest.subject_id,
        channels,
        labels,
    };
    rec.check_consistency()?;
    Ok((rec, report))
}

/// Loads every subject directory (one containing `manifest.json`) under `root`,
/// sorted by subject id.
pub fn load_subjects(root: &Path, opts: LoadOptions) -> Result<Vec<RawRecording>, DataError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| unreadable(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    let mut recs = dirs
        .iter()
        .map(|d| load_subject(d, opts).map(|(r, _)| r))
        .collect::<Result<Vec<_>, _>>()?;
    recs.sort_by_key(|r| r.subject_id);
    for pair in recs.windows(2) {
        if pair[0].subject_id == pair[1].subject_id {
            return Err(DataError::DuplicateSubject(pair[0].subject_id));
        }
    }
    Ok(recs)
}

/// Writes a recording in the neutral format (samples narrowed to f32).
pub fn write_subject(rec: &RawRecording, dir: &Path) -> Result<SubjectManifest, DataError> {
    fs::create_dir_all(dir).map_err(|e| unreadable(dir, e))?;
    let mut channels = Vec::new();
    for (ch, sig) in &rec.channels {
        let file = format!("{}.f32le", ch.name());
        let mut bytes = Vec::with_capacity(sig.samples.len() * 4);
        for &v in &sig.samples {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| unreadable(&path, e))?;
        channels.push(ChannelEntry {
            name: ch.name().to_string(),
            sample_rate_hz: sig.rate_hz,
            file,
            n_samples: sig.samples.len(),
            dtype: "f32le".into(),
        });
    }
    let lpath = dir.join("labels.u8");
    fs::write(&lpath, &rec.labels).map_err(|e| unreadable(&lpath, e))?;
    let manifest = SubjectManifest {
        subject_id: rec.subject_id,
        channels,
        label: LabelEntry {
            file: "labels.u8".into(),
            sample_rate_hz: LABEL_RATE_HZ,
            n_samples: rec.labels.len(),
            dtype: "u8".into(),
        },
    };
    let mpath = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, json).map_err(|e| unreadable(&mpath, e))?;
    Ok(manifest)
}
