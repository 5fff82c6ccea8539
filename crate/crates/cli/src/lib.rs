//! Command-line driver: argument parsing, data loading and exit codes.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use datadyn::data::{
    generate_corpus, make_validation, specs_from_config, DomainSpec, ValidationMode,
};
use datadyn::io::{
    metrics_digest, parse_config, parse_data_config, read_corpus, read_lines, save_metrics,
    write_corpus, write_scores, write_trajectory, Strictness,
};
use datadyn::mixers::{simulate_mixer, LossTraceEntry};
use datadyn::model::snapshot;
use datadyn::trainers::score_pool;
use datadyn::{run, ComponentRegistry, Corpus, Error, MixtureWeights, Result, RunConfig};

/// Process exit code for each error variant.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::Parse { .. } => 4,
        Error::UnknownKey { .. } => 5,
        Error::UnknownTrainType(_) => 10,
        Error::BadSimplex(_) => 11,
        Error::BadSchedule { .. } => 12,
        Error::InvalidConfig { .. } => 13,
        Error::BadParams(_) => 14,
        Error::DuplicateName { .. } => 15,
        Error::UnknownComponent { .. } => 16,
        Error::InvalidCorpus(_) => 20,
        Error::TooShort { .. } => 21,
        Error::TokenOutOfRange { .. } => 22,
        Error::EmptyValidation => 23,
        Error::EmptyDomainWithMass { .. } => 24,
        Error::BadProportions(_) => 25,
        Error::BadMode(_) => 26,
        Error::LengthMismatch { .. } => 30,
        Error::NegativeWeight { .. } => 31,
        Error::EmptyBatch => 32,
        Error::NotAdam => 33,
        Error::ColdOptimizer => 34,
        Error::NonFiniteMetric(_) => 35,
        Error::NonFinite(_) => 36,
        Error::NegativeLoss { .. } => 37,
        Error::KTooLarge { .. } => 38,
        Error::ComponentMutatedModel(_) => 39,
        Error::Checkpoint(_) => 40,
    }
}

const EXIT_CODES: &str = "\
Exit codes:
   0  success
   2  bad command line
   3  file could not be read or written
   4  parse error (config, corpus, trace or metrics line)
   5  unknown config key
  10  unknown train_type
  11  init_mixture_proportions not on the simplex
  12  bad schedule (update_step 0 with update_times > 0)
  13  invalid config field
  14  bad component_params
  15  component name registered twice
  16  unknown component_name
  20  invalid corpus
  21  sample shorter than two tokens
  22  token outside the vocabulary
  23  empty validation set
  24  domain with mixture weight but no samples
  25  bad domain proportions
  26  bad validation mode
  30  length mismatch
  31  negative sample weight
  32  empty batch
  33  Adam preconditioning without Adam
  34  Adam preconditioning before the first step
  35  non-finite probe metric
  36  non-finite value
  37  negative loss
  38  selection size larger than the pool
  39  component modified the model outside a training step
  40  bad checkpoint";

#[derive(Debug, Parser)]
#[command(name = "dataflex-cli", version, about = "Train small language models with dynamic data selection, mixing and reweighting", after_help = EXIT_CODES)]
pub struct Cli {
    /// Override `train.seed` (for gen-data: `data.generate.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override `train.max_steps`.
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Override `train.eval_interval`.
    #[arg(long, global = true)]
    pub eval_interval: Option<usize>,
    /// Directory for run outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write metrics.jsonl, trajectory.jsonl, selections.jsonl and checkpoint.json.
    Train { config: PathBuf },
    /// Generate a synthetic corpus into OUT and its validation set next to it as <stem>.val.jsonl.
    GenData { spec_config: PathBuf, out: PathBuf },
    /// Warm up statically, then write the selector's score for every pool sample.
    Score { config: PathBuf, out: PathBuf },
    /// Replay `data.loss_trace` through the configured mixer and write the weight trajectory.
    MixSim { config: PathBuf, out: PathBuf },
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.max_steps {
        cfg.max_steps = m;
    }
    if let Some(e) = cli.eval_interval {
        cfg.eval_interval = e;
    }
}

/// Runs one parsed command and returns the line printed on success.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train { config } => {
            let mut cfg = parse_config(config)?;
            apply_overrides(cli, &mut cfg);
            train(&cfg, &cli.out_dir)
        }
        Command::GenData { spec_config, out } => {
            let mut cfg = parse_data_config(spec_config)?;
            if let (Some(s), Some(g)) = (cli.seed, cfg.data.generate.as_mut()) {
                g.seed = s;
            }
            gen_data(&cfg, out)
        }
        Command::Score { config, out } => {
            let mut cfg = parse_config(config)?;
            apply_overrides(cli, &mut cfg);
            let (corpus, val) = load_data(&cfg)?;
            let scores = score_pool(&cfg, &corpus, &val, &ComponentRegistry::with_builtins())?;
            write_scores(out, &scores)?;
            Ok(format!(
                "scored {} samples with {}",
                scores.len(),
                cfg.component_name
            ))
        }
        Command::MixSim { config, out } => {
            let mut cfg = parse_config(config)?;
            apply_overrides(cli, &mut cfg);
            let path = cfg
                .data
                .loss_trace
                .clone()
                .ok_or_else(|| Error::InvalidConfig {
                    field: "data.loss_trace".into(),
                    reason: "mix-sim needs a loss trace".into(),
                })?;
            let trace: Vec<LossTraceEntry> = read_lines(&path)?;
            let records = simulate_mixer(&cfg, &trace)?;
            write_trajectory(out, &records)?;
            let last = records
                .last()
                .map(|r| format!("{:?}", r.weights))
                .unwrap_or_default();
            Ok(format!("{} updates, final weights {last}", records.len()))
        }
    }
}

fn specs(cfg: &RunConfig) -> Result<Option<Vec<DomainSpec>>> {
    cfg.data
        .generate
        .as_ref()
        .map(|g| specs_from_config(g, cfg.model.vocab_size))
        .transpose()
}

fn validation_for(cfg: &RunConfig, specs: &[DomainSpec], corpus: &Corpus) -> Result<Corpus> {
    let (mode, m, seed) = match &cfg.data.validation_spec {
        Some(v) => (v.mode.clone(), v.m, v.seed),
        None => (ValidationMode::InDistribution, 200, 1),
    };
    make_validation(specs, corpus, &mode, m, seed)
}

/// Training corpus and validation set described by `cfg.data`. A corpus file
/// takes precedence over `generate`; a validation file over `validation_spec`.
pub fn load_data(cfg: &RunConfig) -> Result<(Corpus, Corpus)> {
    let specs = specs(cfg)?;
    let corpus = match (&cfg.data.corpus, &cfg.data.generate, &specs) {
        (Some(path), _, _) => read_corpus(path, None, Strictness::Strict)?.corpus,
        (None, Some(g), Some(s)) => generate_corpus(
            s,
            &MixtureWeights::from_config(g.proportions.clone())?,
            g.n,
            g.seed,
        )?,
        _ => {
            return Err(Error::InvalidConfig {
                field: "data".into(),
                reason: "needs `corpus` or `generate`".into(),
            })
        }
    };
    let val = match (&cfg.data.validation, &specs) {
        (Some(path), _) => {
            read_corpus(path, Some(corpus.domain_names()), Strictness::Strict)?.corpus
        }
        (None, Some(s)) => validation_for(cfg, s, &corpus)?,
        (None, None) => {
            return Err(Error::InvalidConfig {
                field: "data.validation".into(),
                reason: "needs a validation file or `generate` specs".into(),
            })
        }
    };
    Ok((corpus, val))
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<String> {
    let g = cfg
        .data
        .generate
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig {
            field: "data.generate".into(),
            reason: "gen-data needs a `generate` block".into(),
        })?;
    let specs = specs_from_config(g, cfg.model.vocab_size)?;
    let corpus = generate_corpus(
        &specs,
        &MixtureWeights::from_config(g.proportions.clone())?,
        g.n,
        g.seed,
    )?;
    let val = validation_for(cfg, &specs, &corpus)?;
    let val_path = val_path_for(out);
    write_corpus(out, &corpus)?;
    write_corpus(&val_path, &val)?;
    Ok(format!(
        "wrote {} samples to {} and {} to {}",
        corpus.len(),
        out.display(),
        val.len(),
        val_path.display()
    ))
}

/// `dir/name.jsonl` becomes `dir/name.val.jsonl`.
pub fn val_path_for(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.val.jsonl"))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::NonFinite(e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn train(cfg: &RunConfig, out_dir: &Path) -> Result<String> {
    let (corpus, val) = load_data(cfg)?;
    let out = run(cfg, &corpus, &val, &ComponentRegistry::with_builtins())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    save_metrics(&out_dir.join("metrics.jsonl"), &out.metrics)?;
    write_trajectory(&out_dir.join("trajectory.jsonl"), &out.trajectory)?;
    write_jsonl(&out_dir.join("selections.jsonl"), &out.selections)?;
    snapshot(&out.model, &out.optimizer).save(&out_dir.join("checkpoint.json"))?;
    let loss = out.final_metrics().map_or(f64::NAN, |m| m.overall_val_loss);
    Ok(format!(
        "{} steps, {} invocations, final overall_val_loss {loss:.6}, metrics digest {:016x}",
        cfg.max_steps,
        out.invocations.len(),
        metrics_digest(&out.metrics)
    ))
}
