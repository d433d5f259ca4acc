//! Filter-bank images (framing, per-frame pre-emphasis and Hamming taper, power spectra,
//! linear triangular filters, log, per-column mean removal) and the 36-value
//! mixed statistics vector.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Channel, Window};

/// Log floor so silent bands stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

pub const MIXED_LEN: usize = 36;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid filter-bank config: {0}")]
    InvalidConfig(String),

    #[error("nfft {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("signal of {got} samples is shorter than one frame of {needed}")]
    TooShort { needed: usize, got: usize },

    #[error("frame of {frame} samples exceeds nfft {nfft}")]
    FrameTooLong { frame: usize, nfft: usize },

    #[error("missing channel {0}")]
    MissingChannel(Channel),

    #[error("non-finite filter-bank value for {0}")]
    NonFinite(Channel),
}

impl FeatureError {
    /// True for errors caused by configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            FeatureError::InvalidConfig(_) | FeatureError::NotPowerOfTwo(_) | FeatureError::FrameTooLong { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterBankConfig {
    pub pre_emphasis_alpha: f64,
    pub frame_len_s: f64,
    pub frame_shift_s: f64,
    /// Defaults to the next power of two at or above the frame length.
    pub nfft: Option<usize>,
    /// Defaults to min(16, nfft/2).
    pub n_filters: Option<usize>,
    pub mean_normalize: bool,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        Self {
            pre_emphasis_alpha: 0.97,
            frame_len_s: 8.0,
            frame_shift_s: 2.0,
            nfft: None,
            n_filters: None,
            mean_normalize: true,
        }
    }
}

/// Sample-level parameters of a [`FilterBankConfig`] at one rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolved {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub nfft: usize,
    pub n_filters: usize,
}

impl FilterBankConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.pre_emphasis_alpha) {
            return bad("pre_emphasis_alpha must lie in [0, 1)");
        }
        if !(self.frame_len_s > 0.0) || !(self.frame_shift_s > 0.0) {
            return bad("frame length and shift must be positive");
        }
        if let Some(n) = self.nfft {
            if !n.is_power_of_two() {
                return Err(FeatureError::NotPowerOfTwo(n));
            }
        }
        if self.n_filters == Some(0) {
            return bad("n_filters must be at least 1");
        }
        Ok(())
    }

    pub fn resolve(&self, rate_hz: f64) -> Result<Resolved, FeatureError> {
        self.validate()?;
        let frame_len = (self.frame_len_s * rate_hz).round() as usize;
        let frame_shift = (self.frame_shift_s * rate_hz).round() as usize;
        if frame_len < 2 || frame_shift == 0 {
            return Err(FeatureError::InvalidConfig(format!(
                "frames of {frame_len} samples every {frame_shift} at {rate_hz} Hz"
            )));
        }
        let nfft = self.nfft.unwrap_or_else(|| frame_len.next_power_of_two());
        if frame_len > nfft {
            return Err(FeatureError::FrameTooLong { frame: frame_len, nfft });
        }
        let n_filters = self.n_filters.unwrap_or((nfft / 2).min(16));
        if n_filters > nfft / 2 {
            return Err(FeatureError::InvalidConfig(format!(
                "{n_filters} filters exceed nfft/2 = {}",
                nfft / 2
            )));
        }
        Ok(Resolved {
            frame_len,
            frame_shift,
            nfft,
            n_filters,
        })
    }

    /// Image shape (frames, filters) for a window of `n_samples` at `rate_hz`.
    pub fn image_shape(&self, n_samples: usize, rate_hz: f64) -> Result<(usize, usize), FeatureError> {
        let r = self.resolve(rate_hz)?;
        if n_samples < r.frame_len {
            return Err(FeatureError::TooShort {
                needed: r.frame_len,
                got: n_samples,
            });
        }
        Ok(((n_samples - r.frame_len) / r.frame_shift + 1, r.n_filters))
    }
}

pub fn pre_emphasis(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    y
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Overlapping frames with the Hamming taper applied.
pub fn frame_and_window(
    x: &[f64],
    rate_hz: f64,
    frame_len_s: f64,
    frame_shift_s: f64,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    let len = (frame_len_s * rate_hz).round() as usize;
    let shift = (frame_shift_s * rate_hz).round() as usize;
    if len == 0 || shift == 0 {
        return Err(FeatureError::InvalidConfig("frame of zero samples".into()));
    }
    frames(x, len, shift)
}

fn frames(x: &[f64], len: usize, shift: usize) -> Result<Vec<Vec<f64>>, FeatureError> {
    if x.len() < len {
        return Err(FeatureError::TooShort {
            needed: len,
            got: x.len(),
        });
    }
    let taper = hamming(len);
    let count = (x.len() - len) / shift + 1;
    Ok((0..count)
        .map(|f| {
            x[f * shift..f * shift + len]
                .iter()
                .zip(&taper)
                .map(|(v, w)| v * w)
                .collect()
        })
        .collect())
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(nfft: usize) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry(nfft)
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(nfft))
            .clone()
    })
}

/// `|DFT(frame zero-padded to nfft)|² / nfft` for bins `0..=nfft/2`.
pub fn power_spectrum(frame: &[f64], nfft: usize) -> Result<Vec<f64>, FeatureError> {
    if nfft == 0 || !nfft.is_power_of_two() {
        return Err(FeatureError::NotPowerOfTwo(nfft));
    }
    if frame.len() > nfft {
        return Err(FeatureError::FrameTooLong {
            frame: frame.len(),
            nfft,
        });
    }
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    plan(nfft).process(&mut buf);
    Ok(buf[..=nfft / 2].iter().map(|c| c.norm_sqr() / nfft as f64).collect())
}

/// `n_filters × (nfft/2 + 1)` triangular weights with corners on the linear
/// grid `f_i = i·(rate/2)/(m+1)`, i.e. fractional bins `b_i = i·(nfft/2)/(m+1)`.
/// The grid in bins does not depend on the sampling rate.
pub fn triangular_filterbank(nfft: usize, n_filters: usize) -> Result<Vec<Vec<f64>>, FeatureError> {
    if n_filters == 0 || n_filters > nfft / 2 {
        return Err(FeatureError::InvalidConfig(format!(
            "{n_filters} filters for nfft {nfft}"
        )));
    }
    let half = nfft / 2;
    let b: Vec<f64> = (0..n_filters + 2)
        .map(|i| i as f64 * half as f64 / (n_filters + 1) as f64)
        .collect();
    Ok((1..=n_filters)
        .map(|i| {
            (0..=half)
                .map(|k| {
                    let k = k as f64;
                    if k >= b[i - 1] && k <= b[i] {
                        (k - b[i - 1]) / (b[i] - b[i - 1])
                    } else if k > b[i] && k <= b[i + 1] {
                        (b[i + 1] - k) / (b[i + 1] - b[i])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// Frames × filters grid for one channel of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBankImage {
    pub channel: Channel,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub values: Vec<f64>,
}

impl FilterBankImage {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

pub fn compute_filterbank(
    x: &[f64],
    rate_hz: f64,
    channel: Channel,
    cfg: &FilterBankConfig,
) -> Result<FilterBankImage, FeatureError> {
    let r = cfg.resolve(rate_hz)?;
    if x.len() < r.frame_len {
        return Err(FeatureError::TooShort {
            needed: r.frame_len,
            got: x.len(),
        });
    }
    // each frame is pre-emphasized on its own, so identical raw frames stay identical
    let taper = hamming(r.frame_len);
    let count = (x.len() - r.frame_len) / r.frame_shift + 1;
    let frames: Vec<Vec<f64>> = (0..count)
        .map(|f| {
            let raw = &x[f * r.frame_shift..f * r.frame_shift + r.frame_len];
            pre_emphasis(raw, cfg.pre_emphasis_alpha)
                .iter()
                .zip(&taper)
                .map(|(v, w)| v * w)
                .collect()
        })
        .collect();
    let filters = triangular_filterbank(r.nfft, r.n_filters)?;
    let rows = frames.len();
    let cols = r.n_filters;
    let mut values = Vec::with_capacity(rows * cols);
    for frame in &frames {
        let p = power_spectrum(frame, r.nfft)?;
        for f in &filters {
            let e: f64 = f.iter().zip(&p).map(|(w, v)| w * v).sum();
            values.push((e + LOG_FLOOR).ln());
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(channel));
    }
    if cfg.mean_normalize {
        for c in 0..cols {
            let mean = (0..rows).map(|r| values[r * cols + c]).sum::<f64>() / rows as f64;
            for r in 0..rows {
                values[r * cols + c] -= mean;
            }
        }
    }
    Ok(FilterBankImage {
        channel,
        rows,
        cols,
        values,
    })
}

/// mean, population std, min, max, range, least-squares slope per second.
pub fn channel_stats(x: &[f64], rate_hz: f64) -> [f64; 6] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_mean = (n - 1.0) / 2.0 / rate_hz;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 / rate_hz - t_mean;
        sxy += dt * (v - mean);
        sxx += dt * dt;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    [mean, var.sqrt(), min, max, max - min, slope]
}

/// Six statistics for each channel in [`Channel::ALL`] order.
pub fn mixed_features(w: &Window<'_>) -> Result<[f64; MIXED_LEN], FeatureError> {
    let mut out = [0.0; MIXED_LEN];
    for (i, ch) in Channel::ALL.into_iter().enumerate() {
        let x = w.channel(ch).ok_or(FeatureError::MissingChannel(ch))?;
        let rate = w.rate_hz(ch).ok_or(FeatureError::MissingChannel(ch))?;
        if x.is_empty() {
            return Err(FeatureError::TooShort { needed: 1, got: 0 });
        }
        out[i * 6..i * 6 + 6].copy_from_slice(&channel_stats(x, rate));
    }
    Ok(out)
}
