//! Model fitting (with per-fold search for StressNAS) and the
//! leave-one-subject-out protocol.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stressnas_nn::{par, Network, TrainConfig};

use super::config::ExperimentConfig;
use super::features::{FeatureSet, InputLayout, SampleRef, Split, Standardizer};
use super::metrics::{macro_recall, subject_accuracy, ConfusionMatrix};
use super::report::ReportTable;
use super::train::{evaluate, train, History};
use crate::dataset::{loso_folds, RawRecording};
use crate::error::{Error, Result};
use crate::models::{Branch, ModelFamily, ModelSpec, StressNasAssembly};
use crate::nas::{instantiate, rank_candidates, sample_genotypes, score_candidates, Head, ScoreConfig, ScoredCandidate};
use crate::seeds::derive_seed;

/// Inner-validation subjects: `max(1, round(frac·n))` of the training
/// subjects, chosen by a seeded shuffle. With a single training subject it
/// serves as both training and validation data.
pub fn inner_split(train_ids: &[u32], frac: f64, seed: u64) -> (Vec<u32>, Vec<u32>) {
    if train_ids.len() < 2 {
        return (train_ids.to_vec(), train_ids.to_vec());
    }
    let n_val = ((frac * train_ids.len() as f64).round() as usize).clamp(1, train_ids.len() - 1);
    let mut ids = train_ids.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = ids[..n_val].to_vec();
    let mut fit = ids[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    (fit, val)
}

/// Scores candidates of one branch on a batch drawn from `refs` (training
/// subjects only). Returns every candidate, best first.
pub fn search_branch(
    set: &FeatureSet,
    std: &Standardizer,
    refs: &[SampleRef],
    branch: Branch,
    cfg: &ExperimentConfig,
    key: u32,
    excluded: Option<u32>,
) -> Result<Vec<ScoredCandidate>> {
    let batch_seed = derive_seed(cfg.seed, key, &format!("score-batch-{branch}"));
    let n = cfg.score.batch_size.min(refs.len());
    if n < 2 {
        return Err(Error::Config(format!("{} windows are too few to score", refs.len())));
    }
    let picked: Vec<SampleRef> = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(batch_seed), refs.len(), n)
        .into_iter()
        .map(|i| refs[i])
        .collect();
    let split = Split::new(set, std, picked, InputLayout::Single(branch), excluded)?;
    let batch = split.inputs(&(0..n).collect::<Vec<_>>())?;

    let space = cfg.search.space();
    let genotypes = sample_genotypes(
        space,
        cfg.search.n_candidates,
        derive_seed(cfg.seed, key, &format!("sample-{branch}")),
    )?;
    let score_cfg = ScoreConfig {
        seed: derive_seed(cfg.seed, key, &format!("score-init-{branch}")),
        ..cfg.score.clone()
    };
    let shape = set.shapes[&branch].clone();
    let head = Head::Classifier(set.n_classes);
    let scored = score_candidates(
        &genotypes,
        |g| instantiate(g, &cfg.macro_cfg, &shape, head),
        &batch,
        &score_cfg,
        batch_seed,
    )?;
    Ok(rank_candidates(&scored, scored.len()))
}

/// One trained candidate model with its validation record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssemblyLog {
    /// 1-based search rank (StressNAS); 0 for manual families.
    pub rank: usize,
    pub spec: ModelSpec,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub history: History,
}

/// Result of [`fit`]: the selected network plus everything needed to reuse it.
pub struct Fitted {
    pub net: Network,
    pub spec: ModelSpec,
    pub standardizer: Standardizer,
    pub layout: InputLayout,
    pub fit_subjects: Vec<u32>,
    pub val_subjects: Vec<u32>,
    /// Index into `candidates` of the selected model.
    pub chosen: usize,
    pub candidates: Vec<(AssemblyLog, Network)>,
    pub search: BTreeMap<Branch, Vec<ScoredCandidate>>,
}

fn layout_for(family: ModelFamily) -> InputLayout {
    match family {
        ModelFamily::Mlp => InputLayout::Flat,
        _ => InputLayout::Branches,
    }
}

fn train_candidate(
    spec: ModelSpec,
    rank: usize,
    train_split: &Split<'_>,
    val_split: &Split<'_>,
    cfg: &ExperimentConfig,
    key: u32,
) -> Result<(AssemblyLog, Network)> {
    let mut net = spec.build()?;
    net.init_params(derive_seed(cfg.seed, key, &format!("init-{rank}")));
    let tcfg = TrainConfig {
        seed: derive_seed(cfg.seed, key, &format!("train-{rank}")),
        ..cfg.train.clone()
    };
    let history = train(&mut net, train_split, val_split, &tcfg)?;
    let val_accuracy = match history.best_val_accuracy {
        Some(a) => a,
        None => subject_accuracy(&evaluate(&net, val_split)?)?,
    };
    Ok((
        AssemblyLog {
            rank,
            spec,
            val_accuracy,
            test_accuracy: None,
            history,
        },
        net,
    ))
}

/// Fits the configured model family on `train_ids`. `key` keys every derived
/// seed (the held-out subject in LOSO); `excluded` is asserted absent from
/// every batch.
pub fn fit(set: &FeatureSet, train_ids: &[u32], cfg: &ExperimentConfig, key: u32, excluded: Option<u32>) -> Result<Fitted> {
    let (fit_ids, val_ids) = inner_split(train_ids, cfg.val_fraction, derive_seed(cfg.seed, key, "inner-val"));
    let fit_refs = set.refs_for(&fit_ids);
    let val_refs = set.refs_for(&val_ids);
    if fit_refs.is_empty() || val_refs.is_empty() {
        return Err(Error::Config(format!(
            "no windows for training subjects {fit_ids:?} / validation subjects {val_ids:?}"
        )));
    }
    let standardizer = Standardizer::fit(set, &fit_refs)?;
    let layout = layout_for(cfg.family);
    let train_split = Split::new(set, &standardizer, fit_refs.clone(), layout, excluded)?;
    let val_split = Split::new(set, &standardizer, val_refs, layout, excluded)?;

    let mut search = BTreeMap::new();
    let specs: Vec<(usize, ModelSpec)> = if cfg.family == ModelFamily::Stressnas {
        let mut fold_refs = fit_refs;
        fold_refs.extend(val_split.refs());
        let branches: Vec<Branch> = set.shapes.keys().copied().filter(|b| b.is_image()).collect();
        for &b in &branches {
            let ranked = search_branch(set, &standardizer, &fold_refs, b, cfg, key, excluded)?;
            search.insert(b, ranked);
        }
        (0..cfg.search.top_k)
            .map(|i| {
                let genotypes = branches
                    .iter()
                    .map(|b| (*b, search[b][i].genotype.clone()))
                    .collect();
                let assembly = StressNasAssembly {
                    rank: i + 1,
                    genotypes,
                    macro_cfg: cfg.macro_cfg.clone(),
                };
                let spec = ModelSpec::Stressnas {
                    shapes: set.shapes.clone(),
                    assembly,
                    n_classes: set.n_classes,
                };
                (i + 1, spec)
            })
            .collect()
    } else {
        vec![(0, ModelSpec::manual(cfg.family, &set.shapes, set.n_classes)?)]
    };

    let candidates = par::map(&specs, |(rank, spec)| {
        train_candidate(spec.clone(), *rank, &train_split, &val_split, cfg, key)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    // best validation accuracy, lower rank on ties
    let chosen = (0..candidates.len())
        .max_by(|&a, &b| {
            candidates[a]
                .0
                .val_accuracy
                .total_cmp(&candidates[b].0.val_accuracy)
                .then(b.cmp(&a))
        })
        .expect("at least one candidate");
    let spec = candidates[chosen].0.spec.clone();
    let mut net = spec.build()?;
    net.load_state(candidates[chosen].1.state())?;
    Ok(Fitted {
        net,
        spec,
        standardizer,
        layout,
        fit_subjects: fit_ids,
        val_subjects: val_ids,
        chosen,
        candidates,
        search,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: u32,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub macro_recall: f64,
    pub n_test: usize,
    /// Rank of the selected assembly (StressNAS only).
    pub chosen_rank: Option<usize>,
    pub val_subjects: Vec<u32>,
    pub candidates: Vec<AssemblyLog>,
    /// Top-k scored candidates per searched branch.
    pub search: BTreeMap<Branch, Vec<ScoredCandidate>>,
}

/// Trains on every other subject and tests on `held_out`.
pub fn run_fold(set: &FeatureSet, held_out: u32, train_ids: &[u32], cfg: &ExperimentConfig) -> Result<FoldResult> {
    let fitted = fit(set, train_ids, cfg, held_out, Some(held_out))?;
    let test_refs = set.refs_for(&[held_out]);
    if test_refs.is_empty() {
        return Err(Error::Config(format!("subject {held_out} has no windows")));
    }
    let test = Split::new(set, &fitted.standardizer, test_refs, fitted.layout, None)?;
    let confusion = evaluate(&fitted.net, &test)?;
    let mut candidates = Vec::with_capacity(fitted.candidates.len());
    for (mut log, net) in fitted.candidates {
        log.test_accuracy = Some(subject_accuracy(&evaluate(&net, &test)?)?);
        candidates.push(log);
    }
    let search = fitted
        .search
        .into_iter()
        .map(|(b, mut v)| {
            v.truncate(cfg.search.top_k);
            (b, v)
        })
        .collect();
    Ok(FoldResult {
        held_out,
        accuracy: subject_accuracy(&confusion)?,
        macro_recall: macro_recall(&confusion)?,
        n_test: test.len(),
        confusion,
        chosen_rank: (cfg.family == ModelFamily::Stressnas).then(|| candidates[fitted.chosen].rank),
        val_subjects: fitted.val_subjects,
        candidates,
        search,
    })
}

/// Leave-one-subject-out over pre-extracted features. Folds run in parallel;
/// results come back in ascending subject order.
pub fn run_loso_on(set: &FeatureSet, cfg: &ExperimentConfig) -> Result<ReportTable> {
    cfg.validate()?;
    let folds = loso_folds(&set.subject_ids())?;
    let results = par::map(&folds, |f| {
        run_fold(set, f.held_out, &f.train, cfg).map_err(|e| Error::Fold {
            subject: f.held_out,
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ReportTable::new(cfg, results))
}

/// Loads (or generates) the data, extracts features and runs LOSO.
pub fn run_loso(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let recs = cfg.data.load()?;
    run_loso_recordings(cfg, &recs)
}

pub fn run_loso_recordings(cfg: &ExperimentConfig, recs: &[RawRecording]) -> Result<ReportTable> {
    cfg.validate()?;
    let set = FeatureSet::extract(recs, &cfg.combination, &cfg.window, &cfg.filterbank, cfg.task)?;
    run_loso_on(&set, cfg)
}
