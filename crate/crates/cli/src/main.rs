use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use stressnas::dataset::{write_subject, SynthConfig};
use stressnas::harness::{
    fit, grid_markdown, search_branch, DataSource, ExperimentConfig, FeatureSet, Profile, ReportFormat, ReportTable,
    Standardizer,
};
use stressnas::models::Branch;
use stressnas::{Error, Result};

#[derive(Parser)]
#[command(name = "stressnas", version, about = "Filter-bank features, training-free architecture search and LOSO evaluation")]
struct Cli {
    /// Experiment configuration (JSON). Overrides the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in configuration profile.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,

    /// Master seed (required unless the config file provides one).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Read recordings from this directory instead of the configured source.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Linearly interpolate interior NaNs when reading recordings.
    #[arg(long, global = true)]
    interp_nan: bool,

    /// Sensor combination, e.g. `EDA+BVP+TEMP+MIXED`.
    #[arg(long, global = true)]
    sensors: Option<String>,

    /// Model family: mlp, fcn, resnet or stressnas.
    #[arg(long, global = true)]
    family: Option<String>,

    /// three_state or binary.
    #[arg(long, global = true)]
    task: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the on-disk recording format.
    Synth {
        #[arg(long, default_value_t = 5)]
        subjects: usize,
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        /// Condition block length in seconds.
        #[arg(long, default_value_t = 200.0)]
        block: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract per-window model inputs for every subject.
    Features {
        #[arg(long)]
        out: PathBuf,
    },
    /// Score candidate cells for one modality and write them ranked.
    Search {
        #[arg(long)]
        modality: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Leave this subject's windows out of the scoring batch.
        #[arg(long)]
        exclude: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the configured model on all subjects and save a checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-subject-out evaluation.
    Loso {
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine LOSO result directories into a sensors × models table.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::from_json_file(path)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg
        }
        None => {
            let seed = cli
                .seed
                .ok_or_else(|| Error::Config("--seed is required unless --config provides one".into()))?;
            ExperimentConfig::profile(cli.profile.parse::<Profile>()?, seed)
        }
    };
    if let Some(s) = &cli.sensors {
        cfg.combination = s.parse()?;
    }
    if let Some(f) = &cli.family {
        cfg.family = f.parse()?;
    }
    if let Some(t) = &cli.task {
        cfg.task = t.parse().map_err(Error::Config)?;
    }
    if let Some(dir) = &cli.data {
        cfg.data = DataSource::Dir {
            path: dir.clone(),
            interp_nan: cli.interp_nan,
        };
    } else if let DataSource::Dir { interp_nan, .. } = &mut cfg.data {
        *interp_nan |= cli.interp_nan;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Report(e.to_string()))
}

fn features(cfg: &ExperimentConfig) -> Result<FeatureSet> {
    let recs = cfg.data.load()?;
    FeatureSet::extract(&recs, &cfg.combination, &cfg.window, &cfg.filterbank, cfg.task)
}

#[derive(Serialize)]
struct BranchFile {
    name: String,
    shape: Vec<usize>,
    file: String,
    dtype: &'static str,
}

#[derive(Serialize)]
struct FeatureManifest {
    subject_id: u32,
    n_windows: usize,
    task: String,
    config_hash: String,
    branches: Vec<BranchFile>,
    labels: String,
    start_times_s: Vec<f64>,
}

fn cmd_features(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let set = features(cfg)?;
    for s in &set.subjects {
        let dir = out.join(format!("S{}", s.subject_id));
        mkdir(&dir)?;
        let mut branches = Vec::new();
        for (b, values) in &s.branches {
            let file = format!("{b}.f32le");
            let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
            write(&dir.join(&file), bytes)?;
            branches.push(BranchFile {
                name: b.to_string(),
                shape: set.shapes[b].clone(),
                file,
                dtype: "f32le",
            });
        }
        let labels: Vec<u8> = s.labels.iter().map(|&l| l as u8).collect();
        write(&dir.join("labels.u8"), labels)?;
        let manifest = FeatureManifest {
            subject_id: s.subject_id,
            n_windows: s.len(),
            task: cfg.task.to_string(),
            config_hash: cfg.hash(),
            branches,
            labels: "labels.u8".into(),
            start_times_s: s.start_times.clone(),
        };
        write(&dir.join("manifest.json"), json(&manifest)?)?;
    }
    println!("{} subjects, {} windows -> {}", set.subjects.len(), set.n_windows(), out.display());
    Ok(())
}

fn cmd_search(
    mut cfg: ExperimentConfig,
    modality: &str,
    n: Option<usize>,
    k: Option<usize>,
    exclude: Option<u32>,
    out: &Path,
) -> Result<()> {
    let branch: Branch = modality.parse()?;
    if !branch.is_image() {
        return Err(Error::Config(format!("{branch} has no filter-bank input to search over")));
    }
    cfg.combination = stressnas::models::SensorCombination::new(vec![branch])?;
    if let Some(n) = n {
        cfg.search.n_candidates = n;
    }
    if let Some(k) = k {
        cfg.search.top_k = k;
    }
    cfg.validate()?;
    let set = features(&cfg)?;
    let ids: Vec<u32> = set.subject_ids().into_iter().filter(|&s| Some(s) != exclude).collect();
    let refs = set.refs_for(&ids);
    let std = Standardizer::fit(&set, &refs)?;
    let ranked = search_branch(&set, &std, &refs, branch, &cfg, exclude.unwrap_or(0), exclude)?;

    let mut w = String::from("rank,genotype_index,score,degenerate,genotype\n");
    for (i, c) in ranked.iter().enumerate() {
        w.push_str(&format!(
            "{},{},{},{},\"{}\"\n",
            i + 1,
            c.genotype_index,
            c.score,
            c.degenerate,
            c.genotype
        ));
    }
    write(out, w)?;
    for (i, c) in ranked.iter().take(cfg.search.top_k).enumerate() {
        println!("{:>3}  {:>6}  {:>14.6}  {}", i + 1, c.genotype_index, c.score, c.genotype);
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let set = features(cfg)?;
    let fitted = fit(&set, &set.subject_ids(), cfg, 0, None)?;
    mkdir(out)?;
    stressnas_nn::checkpoint::save(&fitted.net, &out.join("checkpoint"))?;
    write(&out.join("model.json"), json(&fitted.spec)?)?;
    write(&out.join("standardizer.json"), json(&fitted.standardizer)?)?;
    let logs: Vec<_> = fitted.candidates.iter().map(|(log, _)| log).collect();
    write(&out.join("candidates.json"), json(&logs)?)?;
    write(&out.join("config.json"), json(cfg)?)?;
    let chosen = &fitted.candidates[fitted.chosen].0;
    println!(
        "{} on {} · validation subjects {:?} · val accuracy {:.4}",
        cfg.family, cfg.combination, fitted.val_subjects, chosen.val_accuracy
    );
    Ok(())
}

fn cmd_loso(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let table = stressnas::harness::run_loso(cfg)?;
    mkdir(out)?;
    table.emit(ReportFormat::Csv, &out.join("report.csv"))?;
    table.emit(ReportFormat::Markdown, &out.join("report.md"))?;
    table.write_json(&out.join("report.json"))?;
    write(&out.join("config.json"), json(cfg)?)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let tables = inputs
        .iter()
        .map(|d| {
            let p = if d.is_dir() { d.join("report.json") } else { d.clone() };
            ReportTable::read_json(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let md = grid_markdown(&tables);
    write(out, &md)?;
    print!("{md}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            subjects,
            duration,
            block,
            out,
        } => {
            let seed = cli
                .seed
                .ok_or_else(|| Error::Config("synth needs --seed".into()))?;
            if *subjects < 2 || !(*duration > 0.0) || !(*block > 0.0) {
                return Err(Error::Config("need ≥ 2 subjects and positive durations".into()));
            }
            let cfg = SynthConfig {
                n_subjects: *subjects,
                duration_s: *duration,
                block_s: *block,
                seed,
                ..Default::default()
            };
            for rec in stressnas::dataset::synth_dataset(&cfg) {
                write_subject(&rec, &out.join(format!("S{}", rec.subject_id)))?;
            }
            println!("{subjects} subjects × {duration} s -> {}", out.display());
            Ok(())
        }
        Command::Features { out } => cmd_features(&config(&cli)?, out),
        Command::Search {
            modality,
            n,
            k,
            exclude,
            out,
        } => cmd_search(config(&cli)?, modality, *n, *k, *exclude, out),
        Command::Train { out } => cmd_train(&config(&cli)?, out),
        Command::Loso { out } => cmd_loso(&config(&cli)?, out),
        Command::Report { inputs, out } => cmd_report(inputs, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
