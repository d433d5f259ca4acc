//! Per-window model inputs for every subject, fold-level standardization, and
//! batch gathering into named tensors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use stressnas_nn::{par, Inputs, Tensor};

use crate::dataset::{segment_windows, Channel, RawRecording, TaskMode, Window, WindowConfig};
use crate::error::{Error, Result};
use crate::featbank::{compute_filterbank, mixed_features, FilterBankConfig, MIXED_LEN};
use crate::models::{Branch, BranchShapes, SensorCombination, FLAT_INPUT};

/// Channels feeding an image branch, stacked as input channels.
pub fn branch_channels(b: Branch) -> &'static [Channel] {
    match b {
        Branch::Acc => &[Channel::AccX, Channel::AccY, Channel::AccZ],
        Branch::Eda => &[Channel::Eda],
        Branch::Bvp => &[Channel::Bvp],
        Branch::Temp => &[Channel::Temp],
        Branch::Mixed => &[],
    }
}

/// Features of one subject's windows, in window order.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectFeatures {
    pub subject_id: u32,
    pub labels: Vec<usize>,
    pub start_times: Vec<f64>,
    /// Row-major `windows × branch_len` values per branch.
    pub branches: BTreeMap<Branch, Vec<f64>>,
}

impl SubjectFeatures {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub shapes: BranchShapes,
    pub n_classes: usize,
    /// Sorted by subject id.
    pub subjects: Vec<SubjectFeatures>,
}

/// One window of one subject (indices into a [`FeatureSet`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SampleRef {
    pub subject: usize,
    pub window: usize,
}

fn window_features(
    w: &Window<'_>,
    shapes: &BranchShapes,
    fcfg: &FilterBankConfig,
    out: &mut BTreeMap<Branch, Vec<f64>>,
) -> Result<()> {
    for &branch in shapes.keys() {
        let dst = out.get_mut(&branch).expect("branch buffer");
        if branch == Branch::Mixed {
            dst.extend_from_slice(&mixed_features(w)?);
            continue;
        }
        for &ch in branch_channels(branch) {
            let x = w
                .channel(ch)
                .ok_or(crate::featbank::FeatureError::MissingChannel(ch))?;
            let rate = w.rate_hz(ch).expect("rate with channel");
            dst.extend(compute_filterbank(x, rate, ch, fcfg)?.values);
        }
    }
    Ok(())
}

impl FeatureSet {
    /// Segments every recording and computes the inputs of each branch in
    /// `combo`. Subjects are processed in parallel.
    pub fn extract(
        recs: &[RawRecording],
        combo: &SensorCombination,
        wcfg: &WindowConfig,
        fcfg: &FilterBankConfig,
        mode: TaskMode,
    ) -> Result<FeatureSet> {
        wcfg.validate()?;
        fcfg.validate()?;
        let mut shapes = BranchShapes::new();
        for &b in combo.branches() {
            let shape = if b == Branch::Mixed {
                vec![MIXED_LEN]
            } else {
                let ch = branch_channels(b)[0];
                let (rows, cols) = fcfg.image_shape(wcfg.samples_at(ch.rate_hz()), ch.rate_hz())?;
                vec![branch_channels(b).len(), rows, cols]
            };
            shapes.insert(b, shape);
        }
        let mut subjects = par::map(recs, |rec| -> Result<SubjectFeatures> {
            let windows = segment_windows(rec, wcfg, mode)?;
            let mut branches: BTreeMap<Branch, Vec<f64>> = shapes
                .iter()
                .map(|(b, s)| (*b, Vec::with_capacity(windows.len() * s.iter().product::<usize>())))
                .collect();
            for w in &windows {
                window_features(w, &shapes, fcfg, &mut branches)?;
            }
            Ok(SubjectFeatures {
                subject_id: rec.subject_id,
                labels: windows.iter().map(|w| w.class_label as usize).collect(),
                start_times: windows.iter().map(|w| w.start_time_s).collect(),
                branches,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        subjects.sort_by_key(|s| s.subject_id);
        Ok(FeatureSet {
            shapes,
            n_classes: mode.n_classes(),
            subjects,
        })
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.subjects.iter().map(|s| s.subject_id).collect()
    }

    pub fn n_windows(&self) -> usize {
        self.subjects.iter().map(SubjectFeatures::len).sum()
    }

    pub fn branch_len(&self, b: Branch) -> usize {
        self.shapes[&b].iter().product()
    }

    /// Every window of the listed subjects, in (subject, window) order.
    pub fn refs_for(&self, subject_ids: &[u32]) -> Vec<SampleRef> {
        self.subjects
            .iter()
            .enumerate()
            .filter(|(_, s)| subject_ids.contains(&s.subject_id))
            .flat_map(|(i, s)| (0..s.len()).map(move |w| SampleRef { subject: i, window: w }))
            .collect()
    }

    pub fn label(&self, r: SampleRef) -> usize {
        self.subjects[r.subject].labels[r.window]
    }

    pub fn subject_of(&self, r: SampleRef) -> u32 {
        self.subjects[r.subject].subject_id
    }

    fn row(&self, b: Branch, r: SampleRef) -> &[f64] {
        let n = self.branch_len(b);
        &self.subjects[r.subject].branches[&b][r.window * n..(r.window + 1) * n]
    }
}

/// Affine standardization fitted on training windows: per element for MIXED,
/// one scalar per image branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    stats: BTreeMap<Branch, (Vec<f64>, Vec<f64>)>,
}

impl Standardizer {
    pub fn fit(set: &FeatureSet, refs: &[SampleRef]) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::Config("cannot standardize on zero windows".into()));
        }
        let mut stats = BTreeMap::new();
        for &b in set.shapes.keys() {
            let n = set.branch_len(b);
            let groups = if b.is_image() { 1 } else { n };
            let mut sum = vec![0.0; groups];
            let mut sq = vec![0.0; groups];
            let mut count = vec![0usize; groups];
            for &r in refs {
                for (i, v) in set.row(b, r).iter().enumerate() {
                    let g = if groups == 1 { 0 } else { i };
                    sum[g] += v;
                    sq[g] += v * v;
                    count[g] += 1;
                }
            }
            let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, c)| s / *c as f64).collect();
            let std: Vec<f64> = sq
                .iter()
                .zip(&count)
                .zip(&mean)
                .map(|((q, c), m)| {
                    let var = (q / *c as f64 - m * m).max(0.0);
                    if var > 1e-24 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            stats.insert(b, (mean, std));
        }
        Ok(Self { stats })
    }

    fn apply(&self, b: Branch, row: &[f64], out: &mut Vec<f64>) {
        let (mean, std) = &self.stats[&b];
        if mean.len() == 1 {
            out.extend(row.iter().map(|v| (v - mean[0]) / std[0]));
        } else {
            out.extend(row.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s));
        }
    }
}

/// How windows become network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputLayout {
    /// One named tensor per branch.
    Branches,
    /// Every branch flattened into a single `flat` vector.
    Flat,
    /// A single branch under the name `x` (candidate scoring).
    Single(Branch),
}

/// A set of windows drawn from a [`FeatureSet`] with a fitted standardizer.
/// Construction fails if any window belongs to the excluded subject.
#[derive(Clone, Debug)]
pub struct Split<'a> {
    set: &'a FeatureSet,
    std: &'a Standardizer,
    refs: Vec<SampleRef>,
    layout: InputLayout,
    excluded: Option<u32>,
}

impl<'a> Split<'a> {
    pub fn new(
        set: &'a FeatureSet,
        std: &'a Standardizer,
        refs: Vec<SampleRef>,
        layout: InputLayout,
        excluded: Option<u32>,
    ) -> Result<Self> {
        let split = Self {
            set,
            std,
            refs,
            layout,
            excluded,
        };
        split.check_subjects(0..split.refs.len())?;
        Ok(split)
    }

    fn check_subjects(&self, idx: impl IntoIterator<Item = usize>) -> Result<()> {
        if let Some(ex) = self.excluded {
            for i in idx {
                if self.set.subject_of(self.refs[i]) == ex {
                    return Err(Error::Leakage(ex));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn refs(&self) -> &[SampleRef] {
        &self.refs
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.set.label(self.refs[i])).collect()
    }

    pub fn subject_ids(&self, idx: &[usize]) -> Vec<u32> {
        idx.iter().map(|&i| self.set.subject_of(self.refs[i])).collect()
    }

    /// Gathers the listed windows into named input tensors.
    pub fn inputs(&self, idx: &[usize]) -> Result<Inputs> {
        self.check_subjects(idx.iter().copied())?;
        let gather = |b: Branch| {
            let mut v = Vec::with_capacity(idx.len() * self.set.branch_len(b));
            for &i in idx {
                self.std.apply(b, self.set.row(b, self.refs[i]), &mut v);
            }
            v
        };
        let batch = |b: Branch, data: Vec<f64>| -> Result<Tensor> {
            let mut shape = vec![idx.len()];
            shape.extend(&self.set.shapes[&b]);
            Ok(Tensor::from_vec(&shape, data)?)
        };
        let mut inputs = Inputs::new();
        match self.layout {
            InputLayout::Branches => {
                for &b in self.set.shapes.keys() {
                    inputs.insert(b.name().to_string(), batch(b, gather(b))?);
                }
            }
            InputLayout::Single(b) => {
                inputs.insert("x".to_string(), batch(b, gather(b))?);
            }
            InputLayout::Flat => {
                let dim: usize = self.set.shapes.keys().map(|&b| self.set.branch_len(b)).sum();
                let mut v = Vec::with_capacity(idx.len() * dim);
                for &i in idx {
                    for &b in self.set.shapes.keys() {
                        self.std.apply(b, self.set.row(b, self.refs[i]), &mut v);
                    }
                }
                inputs.insert(FLAT_INPUT.to_string(), Tensor::from_vec(&[idx.len(), dim], v)?);
            }
        }
        Ok(inputs)
    }
}
