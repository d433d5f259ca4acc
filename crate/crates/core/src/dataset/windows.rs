use serde::{Deserialize, Serialize};

use super::{map_conditions, Channel, DataError, RawRecording, TaskMode, IGNORE, LABEL_RATE_HZ};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Keep a window only if every label sample in its span maps to the same class.
    #[default]
    StrictHomogeneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_len_s: f64,
    pub shift_s: f64,
    pub label_rule: LabelRule,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len_s: 60.0,
            shift_s: 0.25,
            label_rule: LabelRule::StrictHomogeneous,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if !(self.window_len_s > 0.0) || !self.window_len_s.is_finite() {
            return bad("window_len_s must be positive");
        }
        if !(self.shift_s > 0.0) || !self.shift_s.is_finite() {
            return bad("shift_s must be positive");
        }
        if self.shift_s > self.window_len_s {
            return bad("shift_s must not exceed window_len_s");
        }
        Ok(())
    }

    /// Samples per window at `rate_hz`.
    pub fn samples_at(&self, rate_hz: f64) -> usize {
        (self.window_len_s * rate_hz).round() as usize
    }
}

/// A view of one window: borrowed per-channel slices plus the window class.
#[derive(Clone, Debug, PartialEq)]
pub struct Window<'a> {
    pub subject_id: u32,
    pub start_time_s: f64,
    pub class_label: u8,
    slices: Vec<(Channel, f64, &'a [f64])>,
}

impl<'a> Window<'a> {
    pub fn channel(&self, ch: Channel) -> Option<&'a [f64]> {
        self.slices.iter().find(|s| s.0 == ch).map(|s| s.2)
    }

    pub fn rate_hz(&self, ch: Channel) -> Option<f64> {
        self.slices.iter().find(|s| s.0 == ch).map(|s| s.1)
    }

    pub fn channels(&self) -> impl Iterator<Item = (Channel, f64, &'a [f64])> + '_ {
        self.slices.iter().copied()
    }
}

/// For every index, the exclusive end of the run of equal values containing it.
fn run_ends(x: &[u8]) -> Vec<usize> {
    let mut ends = vec![x.len(); x.len()];
    for i in (0..x.len().saturating_sub(1)).rev() {
        ends[i] = if x[i] == x[i + 1] { ends[i + 1] } else { i + 1 };
    }
    ends
}

/// Sliding windows at `t = k·shift`, kept when the whole span lies inside every
/// channel and the label track, and every label sample maps to one class.
///
/// Each channel slice starts at `round(t·rate)` and holds `round(W·rate)`
/// samples, so all windows of a channel have equal length.
pub fn segment_windows<'a>(
    rec: &'a RawRecording,
    cfg: &WindowConfig,
    mode: TaskMode,
) -> Result<Vec<Window<'a>>, DataError> {
    cfg.validate()?;
    let classes = map_conditions(&rec.labels, mode);
    let ends = run_ends(&classes);
    let duration = rec.duration_s();
    if duration + 1e-9 < cfg.window_len_s {
        return Ok(Vec::new());
    }
    let k_max = ((duration - cfg.window_len_s) / cfg.shift_s + 1e-9).floor() as usize;

    let mut out = Vec::new();
    'starts: for k in 0..=k_max {
        let t = k as f64 * cfg.shift_s;
        let a = (t * LABEL_RATE_HZ).round() as usize;
        let b = ((t + cfg.window_len_s) * LABEL_RATE_HZ).round() as usize;
        if b > classes.len() || a >= b {
            continue;
        }
        let class = classes[a];
        if class == IGNORE || ends[a] < b {
            continue;
        }
        let mut slices = Vec::with_capacity(rec.channels.len());
        for (&ch, sig) in &rec.channels {
            let start = (t * sig.rate_hz).round() as usize;
            let len = cfg.samples_at(sig.rate_hz);
            if start + len > sig.samples.len() {
                continue 'starts;
            }
            slices.push((ch, sig.rate_hz, &sig.samples[start..start + len]));
        }
        out.push(Window {
            subject_id: rec.subject_id,
            start_time_s: t,
            class_label: class,
            slices,
        });
    }
    Ok(out)
}
