//! The `moedep` command line.
//!
//! Exit codes: 0 on success, 1 for invalid input (bad arguments, configs,
//! manifests, shapes), 2 for failures while running (IO, non-finite
//! values, failed gradient checks). Errors are also reported as one JSON
//! object on stderr: `{"error":{"kind":"validation"|"runtime","message":...}}`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io::{
    dataset_from_container, dataset_to_container, featurize_manifest, parse_manifest,
    synth_dataset, SyntheticSpec, TensorContainer,
};
use crate::moe::{HeadConfig, HeadKind};
use crate::tensor::{GradCheckConfig, GradCheckReport, ParamStore, RngStream};
use crate::train::{
    check_head, check_model, cross_validate, default_seed, evaluate, fit_all, Dataset, Inputs,
    Model, ModelConfig, RunReport, METRIC_NAMES,
};

#[derive(Parser, Debug)]
#[command(
    name = "moedep",
    version,
    about = "Speech depression recognition with mixture-of-experts heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn the recordings of a manifest into a feature container.
    Featurize(FeaturizeArgs),
    /// Generate the synthetic two-class tone dataset.
    Synth(SynthArgs),
    /// Cross-validate a configuration and export weights fitted on all subjects.
    Train(TrainArgs),
    /// Evaluate exported weights on a manifest.
    Eval(EvalArgs),
    /// Finite-difference gradient check of a head or a whole model.
    Gradcheck(GradcheckArgs),
    /// Print a report file as a table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// both, read_only or interview_only
    #[arg(long, default_value = "both", value_parser = parse_inputs)]
    inputs: Inputs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    subjects: usize,
    /// Fraction of depression-class subjects.
    #[arg(long, default_value_t = 0.5)]
    balance: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to a synthetic dataset generated under `<out>/synth`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Precomputed feature container matching the manifest.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to `config.toml` next to the weights.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Check one head on random embeddings.
    #[arg(long, value_parser = parse_head, conflicts_with = "config")]
    head: Option<HeadKind>,
    /// Check the whole model described by a config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Coordinates sampled per parameter.
    #[arg(long)]
    coords: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    path: PathBuf,
}

fn parse_inputs(s: &str) -> std::result::Result<Inputs, String> {
    toml::Value::String(s.to_string()).try_into().map_err(|_| {
        format!("unknown input mode `{s}` (expected both, read_only or interview_only)")
    })
}

fn parse_head(s: &str) -> std::result::Result<HeadKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code != 0 {
                emit_error("validation", &e.kind().to_string());
            }
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let validation = e.is_validation();
            eprintln!("error: {e}");
            emit_error(
                if validation { "validation" } else { "runtime" },
                &e.to_string(),
            );
            if validation {
                1
            } else {
                2
            }
        }
    }
}

fn emit_error(kind: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({ "error": { "kind": kind, "message": message } })
    );
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Featurize(a) => featurize(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => {
            print!("{}", RunReport::read(&a.path)?.table());
            Ok(())
        }
    }
}

fn featurize(a: FeaturizeArgs) -> Result<()> {
    let entries = parse_manifest(&a.manifest)?;
    let data = featurize_manifest(&entries, a.inputs, a.workers)?;
    dataset_to_container(&data)?.write(&a.out)?;
    println!(
        "wrote features of {} subjects to {}",
        data.len(),
        a.out.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_subjects: a.subjects,
        class_balance: a.balance,
        noise_level: a.noise,
        seed: a.seed.unwrap_or_else(default_seed),
        ..Default::default()
    };
    let manifest = synth_dataset(&spec, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn load_dataset(manifest: &Path, features: Option<&Path>, inputs: Inputs) -> Result<Dataset> {
    let entries = parse_manifest(manifest)?;
    match features {
        Some(f) => dataset_from_container(&entries, &TensorContainer::read(f)?, inputs),
        None => featurize_manifest(&entries, inputs, 1),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = ModelConfig::load(&a.config)?;
    create_dir(&a.out)?;
    let manifest = match a.manifest {
        Some(m) => m,
        None => synth_dataset(
            &SyntheticSpec {
                seed: cfg.seed,
                ..Default::default()
            },
            a.out.join("synth"),
        )?,
    };
    let data = load_dataset(&manifest, a.features.as_deref(), cfg.inputs)?;
    let (report, outcomes) = cross_validate(&cfg, &data, a.workers)?;
    report.write(a.out.join("report.txt"))?;
    cfg.save(a.out.join("config.toml"))?;

    let trained = fit_all(&cfg, &data)?;
    Model::export_weights(&trained.store)?.write(a.out.join("weights.moet"))?;

    let log_path = a.out.join("train_log.csv");
    let mut log = csv::Writer::from_path(&log_path).map_err(|e| csv_error(&log_path, e))?;
    log.write_record([
        "run", "fold", "epoch", "step", "total", "ce", "l_imp", "l_load",
    ])
    .map_err(|e| csv_error(&log_path, e))?;
    let cells = outcomes
        .iter()
        .map(|o| (o.entry.run.to_string(), o.entry.fold.to_string(), &o.steps))
        .chain(std::iter::once((
            "all".to_string(),
            "all".to_string(),
            &trained.steps,
        )));
    for (run, fold, steps) in cells {
        for s in steps {
            let (imp, load) = s
                .aux
                .map(|(i, l)| (i.to_string(), l.to_string()))
                .unwrap_or_default();
            log.write_record([
                run.clone(),
                fold.clone(),
                s.epoch.to_string(),
                s.step.to_string(),
                s.total.to_string(),
                s.ce.to_string(),
                imp,
                load,
            ])
            .map_err(|e| csv_error(&log_path, e))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    print!("{}", report.table());
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let config = a.config.unwrap_or_else(|| {
        a.weights
            .parent()
            .unwrap_or(Path::new("."))
            .join("config.toml")
    });
    let cfg = ModelConfig::load(&config)?;
    let mut store = ParamStore::new();
    let model = Model::build(&cfg, &mut store, &mut RngStream::new(cfg.seed, 0))?;
    Model::import_weights(&mut store, &TensorContainer::read(&a.weights)?)?;
    let data = load_dataset(&a.manifest, a.features.as_deref(), cfg.inputs)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let m = evaluate(&model, &store, &data, &all, cfg.batch_size)?;
    println!("subjects = {}", data.len());
    println!(
        "tp = {}\nfp = {}\ntn = {}\nfn = {}",
        m.tp, m.fp, m.tn, m.fn_
    );
    for name in METRIC_NAMES {
        println!("{name} = {:.2}", 100.0 * m.get(name).unwrap());
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report: GradCheckReport = match (a.head, a.config) {
        (Some(kind), None) => {
            let cfg = GradCheckConfig {
                tolerance: a.tolerance,
                coords_per_param: a.coords.unwrap_or(50),
                ..Default::default()
            };
            check_head(&HeadConfig::new(kind), 4, 0.1, default_seed(), &cfg)?
        }
        (None, Some(path)) => {
            let model_cfg = ModelConfig::load(&path)?;
            let cfg = GradCheckConfig {
                tolerance: a.tolerance,
                coords_per_param: a.coords.unwrap_or(10),
                ..Default::default()
            };
            check_model(&model_cfg, 2, &cfg)?
        }
        _ => {
            return Err(Error::InvalidArgument(
                "gradcheck needs exactly one of --head or --config".into(),
            ))
        }
    };
    println!("{report}");
    report.into_result().map(|_| ())
}
