//! Command-line driver: `perturb`, `simulate`, `label`, `metrics`, `train`,
//! `eval` and `report`.
//!
//! Exit codes: 0 success, 1 fatal error, 2 usage error.

mod config;
mod report;
mod train;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{FileConfig, TrainingConfig, DEFAULT_DIM};
pub use report::{read_label_rows, write_label_rows, Histogram, LabelRow, ReportBundle};
pub use train::{evaluate_model, featurize_rows, render_metrics, train_model, TrainRequest, DEFAULT_TAU};

use crate::agents::{Backend, RemoteClient, SimulatedAgentProfile, SimulatedBackend};
use crate::classifier::{FeatureSpec, HeadKind, ModelFile};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::matcher::MatchConfig;
use crate::metrics::{group_by_scenario, render_table, write_csv, AgreementReport};
use crate::orchestrator::{
    load_dataset, manifest_path, perturb_query, read_store, run_simulation, BackendKind, RunConfig,
};

/// Correct-answer probability for simulated agents when neither a profile
/// nor `--sim-prob` says otherwise.
pub const DEFAULT_SIM_PROB: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "hallucimc",
    version,
    about = "Monte Carlo hallucination labeling, agreement metrics and classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the n rewrites of every query.
    Perturb(PerturbArgs),
    /// Run the full Monte Carlo pipeline into a record store.
    Simulate(SimulateArgs),
    /// Extract labels from a record store.
    Label(LabelArgs),
    /// Agreement metrics and the label histogram.
    Metrics(MetricsArgs),
    /// Train a binary or ordinal head.
    Train(TrainArgs),
    /// Evaluate a trained model on a labeled split.
    Eval(EvalArgs),
    /// Summary report over a record store.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Remote,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Binary,
    Multiclass,
}

impl ModeArg {
    fn head(self) -> HeadKind {
        match self {
            ModeArg::Binary => HeadKind::Binary,
            ModeArg::Multiclass => HeadKind::Ordinal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupBy {
    Scenario,
}

#[derive(Debug, Clone, Args)]
pub struct ExecArgs {
    /// Run per-item work sequentially or on the thread pool.
    #[arg(long, default_value = "parallel")]
    pub exec: ExecMode,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "simulated")]
    pub backend: BackendArg,
    /// Simulated agents: RNG seed. Remote: the request seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of rewrites per query.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Maximum concurrent requests.
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    /// Remote endpoint base URL (otherwise HALLUCIMC_ENDPOINT).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Partial-ratio threshold in [0, 100].
    #[arg(long)]
    pub match_threshold: Option<u8>,
    /// Correct-answer probability for queries missing from the profile.
    #[arg(long)]
    pub sim_prob: Option<f64>,
    /// JSON simulated-agent profile.
    #[arg(long)]
    pub sim_profile: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub common: BackendArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: BackendArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip queries already in the store and append the rest.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_enum)]
    pub group_by: Option<GroupBy>,
    /// Write the agreement report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the class histogram as CSV.
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training split: label rows or a record store.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation split, used for threshold tuning.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hash the scenario-tagged query and append the scenario one-hot.
    #[arg(long)]
    pub scenario_encoding: bool,
    /// Pick τ by F1 on the validation split (training split if none).
    #[arg(long)]
    pub tune_threshold: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Must agree with the model's head when given.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Write the metrics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub exec: ExecArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Write the bundle as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub exec: ExecArgs,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Perturb(a) => cmd_perturb(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Label(a) => cmd_label(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

fn match_config(args: &BackendArgs, file: &FileConfig) -> Result<MatchConfig> {
    let mut cfg = file.matching;
    if let Some(t) = args.match_threshold {
        cfg.partial_ratio_threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_backend(args: &BackendArgs, cfg: &RunConfig) -> Result<Box<dyn Backend>> {
    match args.backend {
        BackendArg::Simulated => {
            let mut profile = match &args.sim_profile {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                    serde_json::from_str::<SimulatedAgentProfile>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SimulatedAgentProfile::default(),
            };
            if let Some(seed) = args.seed {
                profile.rng_seed = seed;
            }
            let default_prob = match (&args.sim_profile, args.sim_prob) {
                (_, Some(p)) => Some(p),
                (None, None) => Some(DEFAULT_SIM_PROB),
                (Some(_), None) => None,
            };
            Ok(Box::new(
                SimulatedBackend::new(profile, default_prob)?.with_match_config(cfg.match_config),
            ))
        }
        BackendArg::Remote => Ok(Box::new(RemoteClient::from_env(
            args.endpoint.as_deref(),
            cfg.generation.clone(),
            cfg.concurrency_cap,
        )?)),
    }
}

fn run_config(args: &BackendArgs, out: &Path, resume: bool) -> Result<RunConfig> {
    let file = FileConfig::load(args.config.as_deref())?;
    let kind = match args.backend {
        BackendArg::Remote => BackendKind::Remote,
        BackendArg::Simulated => BackendKind::Simulated,
    };
    let mut cfg = RunConfig::new(out, kind);
    cfg.n = args.n;
    cfg.concurrency_cap = args.concurrency;
    cfg.resume = resume;
    cfg.exec = args.exec.exec;
    cfg.match_config = match_config(args, &file)?;
    cfg.generation = file.generation.clone();
    if let (BackendArg::Remote, Some(seed)) = (args.backend, args.seed) {
        cfg.generation.seed = i64::try_from(seed).map_err(|_| Error::validation("seed out of range"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PerturbLine<'a> {
    id: &'a str,
    variants: &'a [String],
}

fn cmd_perturb(a: &PerturbArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = load_dataset(&a.common.dataset)?;
    let cfg = run_config(&a.common, &a.out, false)?;
    let backend = build_backend(&a.common, &cfg)?;
    let results = exec::with_pool(cfg.exec, cfg.concurrency_cap, || {
        exec::map(cfg.exec, &dataset, |q| {
            perturb_query(q, backend.as_ref(), cfg.n, cfg.perturbation_reasks)
        })
    });
    let f = File::create(&a.out).map_err(|e| Error::file(&a.out, e))?;
    let mut w = BufWriter::new(f);
    let (mut written, mut skipped) = (0, 0);
    for (q, res) in dataset.iter().zip(results) {
        match res {
            Ok((set, _)) => {
                serde_json::to_writer(
                    &mut w,
                    &PerturbLine {
                        id: &q.id,
                        variants: set.variants(),
                    },
                )?;
                w.write_all(b"\n")?;
                written += 1;
            }
            Err(skip) => {
                log::warn!("skipping {}: {}", skip.id, skip.reason);
                skipped += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::file(&a.out, e))?;
    writeln!(out, "perturbed {written} queries, skipped {skipped}")?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let dataset = load_dataset(&a.common.dataset)?;
    let cfg = run_config(&a.common, &a.out, a.resume)?;
    let backend = build_backend(&a.common, &cfg)?;
    let summary = run_simulation(dataset, backend.as_ref(), &cfg)?;
    let c = &summary.counts;
    writeln!(
        out,
        "input {} | already stored {} | written {} | skipped {} | failed agents {}",
        c.input, c.already_stored, c.written, c.skipped, c.failed_agents
    )?;
    if summary.usage.total_tokens > 0 {
        writeln!(out, "tokens used: {}", summary.usage.total_tokens)?;
    }
    Ok(())
}

fn load_nonempty_store(path: &Path) -> Result<Vec<crate::record::SimulationRecord>> {
    let records = read_store(path)?;
    if records.is_empty() {
        return Err(Error::validation(format!("{}: record store is empty", path.display())));
    }
    Ok(records)
}

fn cmd_label(a: &LabelArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_nonempty_store(&a.store)?;
    let rows: Vec<LabelRow> = records.iter().map(LabelRow::from_record).collect();
    write_label_rows(&a.out, &rows)?;
    let hist = Histogram::from_records(&records)?;
    writeln!(out, "labeled {} records", rows.len())?;
    write!(out, "{}", hist.render())?;
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::file(path, e))
}

fn cmd_metrics(a: &MetricsArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_nonempty_store(&a.store)?;
    let mode = a.exec.exec;
    let grouped;
    let overall;
    let rows: Vec<(&str, &AgreementReport)> = match a.group_by {
        Some(GroupBy::Scenario) => {
            grouped = group_by_scenario(&records, mode)?;
            let mut rows: Vec<(&str, &AgreementReport)> = grouped.groups.iter().map(|(g, r)| (g.as_str(), r)).collect();
            rows.push(("weighted", &grouped.weighted));
            rows
        }
        None => {
            overall = AgreementReport::compute(&records, mode)?;
            vec![("all", &overall)]
        }
    };
    let hist = Histogram::from_records(&records)?;
    if let Some(p) = &a.csv {
        write_file(p, |w| write_csv(w, &rows))?;
    }
    if let Some(p) = &a.histogram_csv {
        write_file(p, |w| hist.write_csv(w))?;
    }
    write!(out, "{}\n{}", render_table(&rows), hist.render())?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let mut tc = file.training;
    if let Some(v) = a.dim {
        tc.dim = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    tc.scenario_encoding |= a.scenario_encoding;
    let spec = FeatureSpec::new(tc.dim, tc.scenario_encoding)?;
    let train_rows = read_label_rows(&a.data)?;
    let valid_rows = a.valid.as_deref().map(read_label_rows).transpose()?;
    let kind = a.mode.head();
    if a.tune_threshold && kind != HeadKind::Binary {
        return Err(Error::validation("--tune-threshold applies to binary mode only"));
    }
    let tune_on = match (a.tune_threshold, &valid_rows) {
        (false, _) => None,
        (true, Some(v)) => Some(v.as_slice()),
        (true, None) => {
            log::warn!("no --valid split; tuning the threshold on the training split");
            Some(train_rows.as_slice())
        }
    };
    let model = train_model(&TrainRequest {
        kind,
        spec,
        hp: tc.hyperparams(),
        train: &train_rows,
        tune_on,
        exec: a.exec.exec,
    })?;
    model.save(&a.out)?;
    writeln!(
        out,
        "trained {:?} head on {} rows -> {}",
        kind,
        train_rows.len(),
        a.out.display()
    )?;
    if let Some(t) = model.tau {
        writeln!(out, "tau = {t:.3}")?;
    }
    if let Some(v) = &valid_rows {
        write!(
            out,
            "validation:\n{}",
            render_metrics(&evaluate_model(&model, v, a.exec.exec)?)
        )?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    if let Some(m) = a.mode {
        if m.head() != model.kind {
            return Err(Error::validation(format!(
                "--mode {m:?} does not match the model's head"
            )));
        }
    }
    let rows = read_label_rows(&a.data)?;
    let metrics = evaluate_model(&model, &rows, a.exec.exec)?;
    if let Some(p) = &a.out {
        write_file(p, |w| Ok(serde_json::to_writer_pretty(w, &metrics)?))?;
    }
    write!(out, "{}", render_metrics(&metrics))?;
    Ok(())
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_nonempty_store(&a.store)?;
    let agreement = AgreementReport::compute(&records, a.exec.exec)?;
    let manifest = Some(manifest_path(&a.store)).filter(|p| p.exists());
    let bundle = ReportBundle::build(&records, agreement, manifest)?;
    if let Some(p) = &a.out {
        write_file(p, |w| Ok(serde_json::to_writer_pretty(w, &bundle)?))?;
    }
    write!(out, "{}", bundle.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["hallucimc", "simulate"]), 2);
        assert_eq!(run(["hallucimc", "bogus"]), 2);
        assert_eq!(run(["hallucimc", "metrics", "--store", "x", "--exec", "sometimes"]), 2);
    }

    #[test]
    fn missing_dataset_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run.jsonl");
        let code = run([
            "hallucimc",
            "simulate",
            "--dataset",
            dir.path().join("missing.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn parses_full_flag_set() {
        let cli = Cli::try_parse_from([
            "hallucimc",
            "train",
            "--data",
            "t.jsonl",
            "--valid",
            "v.jsonl",
            "--mode",
            "multiclass",
            "--out",
            "m.json",
            "--dim",
            "64",
            "--epochs",
            "3",
            "--lr",
            "0.1",
            "--seed",
            "1",
            "--scenario-encoding",
            "--exec",
            "sequential",
        ])
        .unwrap();
        let Command::Train(t) = cli.command else { panic!() };
        assert_eq!((t.mode, t.dim, t.epochs), (ModeArg::Multiclass, Some(64), Some(3)));
        assert!(t.scenario_encoding);
        assert_eq!(t.exec.exec, ExecMode::Sequential);
    }
}
