//! End-to-end Monte Carlo pipeline with resumable JSONL persistence.
//!
//! Per query: one perturbation request, `n + 1` independent generations
//! (the original query included), grading, and label derivation. Queries
//! are processed in chunks; within a chunk they run concurrently up to the
//! configured cap, and a single writer thread appends the finished records
//! in input order, flushing after each line.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::agents::{
    parse_perturbations, render_output_prompt, render_perturbation_prompt, Backend, GenerationParams, Usage,
};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::matcher::{AnswerMatcher, MatchConfig, StringMatcher};
use crate::record::{make_perturbation_set, AgentOutput, PerturbationSet, QueryRecord, SimulationRecord};

pub use crate::agents::encode_with_scenario;

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub backend: BackendKind,
    pub concurrency_cap: usize,
    pub output_path: PathBuf,
    pub resume: bool,
    pub match_config: MatchConfig,
    pub generation: GenerationParams,
    /// Extra perturbation requests after a failed first one.
    pub perturbation_reasks: u32,
    pub exec: ExecMode,
}

impl RunConfig {
    pub fn new(output_path: impl Into<PathBuf>, backend: BackendKind) -> Self {
        RunConfig {
            n: 5,
            backend,
            concurrency_cap: 8,
            output_path: output_path.into(),
            resume: false,
            match_config: MatchConfig::default(),
            generation: GenerationParams::default(),
            perturbation_reasks: 2,
            exec: ExecMode::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::validation("n must be >= 1"));
        }
        if self.concurrency_cap < 1 {
            return Err(Error::validation("concurrency cap must be >= 1"));
        }
        self.match_config.validate()?;
        self.generation.validate()
    }
}

/// Why a query produced no record.
#[derive(Debug, Clone, PartialEq)]
pub struct Skip {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub input: usize,
    pub already_stored: usize,
    pub written: usize,
    pub skipped: usize,
    pub failed_agents: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub counts: RunCounts,
    pub usage: Usage,
    pub skipped_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub counts: RunCounts,
    pub usage: Usage,
}

fn add_usage(total: &mut Usage, u: &Usage) {
    total.prompt_tokens += u.prompt_tokens;
    total.completion_tokens += u.completion_tokens;
    total.total_tokens += u.total_tokens;
}

/// Requests and parses the `n` rewrites of a query, re-asking up to
/// `reasks` times. `Err` means the query is skipped.
pub fn perturb_query(
    query: &QueryRecord,
    backend: &dyn Backend,
    n: usize,
    reasks: u32,
) -> std::result::Result<(PerturbationSet, Usage), Skip> {
    let skip = |reason: String| Skip {
        id: query.id.clone(),
        reason,
    };
    let mut usage = Usage::default();
    let prompt = render_perturbation_prompt(&query.text, n).map_err(|e| skip(e.to_string()))?;
    let mut rewrites = None;
    let mut last_err = String::new();
    for attempt in 0..=reasks {
        match backend.perturb(query, &prompt, n, attempt) {
            Ok(resp) => {
                if let Some(u) = &resp.usage {
                    add_usage(&mut usage, u);
                }
                match parse_perturbations(&resp.text, n) {
                    Ok(r) => {
                        rewrites = Some(r);
                        break;
                    }
                    Err(e) => last_err = e.to_string(),
                }
            }
            Err(f) => last_err = format!("{:?}: {}", f.status, f.message),
        }
    }
    let rewrites = rewrites.ok_or_else(|| skip(format!("perturbation failed: {last_err}")))?;
    let set = make_perturbation_set(query, rewrites, n).map_err(|e| skip(e.to_string()))?;
    Ok((set, usage))
}

/// Runs the full pipeline for one query. `Err` means the query is skipped.
pub fn simulate_record(
    query: &QueryRecord,
    backend: &dyn Backend,
    matcher: &dyn AnswerMatcher,
    cfg: &RunConfig,
    sequence: u64,
) -> std::result::Result<(SimulationRecord, Usage), Skip> {
    let skip = |reason: String| Skip {
        id: query.id.clone(),
        reason,
    };
    let (set, mut usage) = perturb_query(query, backend, cfg.n, cfg.perturbation_reasks)?;

    let answers = exec::map_range(cfg.exec, set.len(), |i| {
        let prompt = render_output_prompt(
            &set.variants()[i],
            query.scenario,
            query.context.as_deref(),
            query.choices.as_deref(),
        );
        match prompt {
            Ok(p) => match backend.answer(query, i, &p) {
                Ok(resp) => (AgentOutput::ok(i, resp.text, &resp.raw), resp.usage),
                Err(f) => (AgentOutput::failed(i, f.status, &f.raw), None),
            },
            Err(e) => (
                AgentOutput::failed(i, crate::record::AgentStatus::ParseFailure, &e.to_string()),
                None,
            ),
        }
    });
    let mut outputs = Vec::with_capacity(answers.len());
    for (out, u) in answers {
        if let Some(u) = u {
            add_usage(&mut usage, &u);
        }
        outputs.push(out);
    }
    let indicators = outputs
        .iter()
        .map(|o| matcher.indicator(o, query))
        .collect::<Result<Vec<u8>>>()
        .map_err(|e| skip(e.to_string()))?;
    let record = SimulationRecord::assemble(query.clone(), set, outputs, indicators, sequence)
        .map_err(|e| skip(e.to_string()))?;
    Ok((record, usage))
}

/// Reads and validates a JSONL dataset. Unknown fields are ignored.
pub fn load_dataset(path: &Path) -> Result<Vec<QueryRecord>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::validation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        let rec = rec
            .validated()
            .map_err(|e| Error::validation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::validation(format!(
                "{}:{}: duplicate id {}",
                path.display(),
                lineno + 1,
                rec.id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads a record store, skipping (and logging) corrupt lines. A missing
/// file is an empty store.
pub fn read_store_lenient(path: &Path) -> Result<(Vec<SimulationRecord>, usize)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(Error::file(path, e)),
    };
    let mut records = Vec::new();
    let mut corrupt = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SimulationRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{}:{}: skipping corrupt record: {e}", path.display(), lineno + 1);
                corrupt += 1;
            }
        }
    }
    Ok((records, corrupt))
}

/// Reads a record store, failing on the first corrupt line.
pub fn read_store(path: &Path) -> Result<Vec<SimulationRecord>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str::<SimulationRecord>(&line)
            .map_err(|e| Error::validation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        records.push(r);
    }
    Ok(records)
}

/// Writes records as JSONL, one per line.
pub fn write_store(path: &Path, records: &[SimulationRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Dataset records whose id is not yet in the store.
pub fn resume_filter(dataset: Vec<QueryRecord>, store: &[SimulationRecord]) -> Vec<QueryRecord> {
    let done: HashSet<&str> = store.iter().map(|r| r.query.id.as_str()).collect();
    dataset.into_iter().filter(|q| !done.contains(q.id.as_str())).collect()
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Runs the pipeline over `dataset`, appending to `cfg.output_path`.
/// Per-query failures are counted and logged; only I/O errors abort.
pub fn run_simulation(dataset: Vec<QueryRecord>, backend: &dyn Backend, cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let matcher = StringMatcher::new(cfg.match_config);
    let mut summary = RunSummary::default();
    summary.counts.input = dataset.len();

    let (pending, next_sequence) = if cfg.resume {
        let (stored, _) = read_store_lenient(&cfg.output_path)?;
        let next = stored.iter().map(|r| r.sequence + 1).max().unwrap_or(0);
        let pending = resume_filter(dataset, &stored);
        summary.counts.already_stored = summary.counts.input - pending.len();
        (pending, next)
    } else {
        (dataset, 0)
    };

    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(cfg.resume)
        .truncate(!cfg.resume)
        .open(&cfg.output_path)
        .map_err(|e| Error::file(&cfg.output_path, e))?;

    let (tx, rx) = mpsc::sync_channel::<SimulationRecord>(CHUNK);
    let out_path = cfg.output_path.clone();
    let writer_result = std::thread::scope(|scope| {
        let writer = scope.spawn(move || -> Result<usize> {
            let mut w = BufWriter::new(file);
            let mut n = 0;
            for rec in rx {
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
                w.flush().map_err(|e| Error::file(&out_path, e))?;
                n += 1;
            }
            Ok(n)
        });

        let mut sequence = next_sequence;
        let mut send_failed = false;
        for chunk in pending.chunks(CHUNK) {
            let results = exec::with_pool(cfg.exec, cfg.concurrency_cap, || {
                exec::map(cfg.exec, chunk, |q| simulate_record(q, backend, &matcher, cfg, 0))
            });
            for res in results {
                match res {
                    Ok((mut rec, usage)) => {
                        rec.sequence = sequence;
                        sequence += 1;
                        summary.counts.failed_agents += rec.failed_agents;
                        add_usage(&mut summary.usage, &usage);
                        if tx.send(rec).is_err() {
                            send_failed = true;
                            break;
                        }
                    }
                    Err(skip) => {
                        log::warn!("skipping {}: {}", skip.id, skip.reason);
                        summary.counts.skipped += 1;
                        summary.skipped_ids.push(skip.id);
                    }
                }
            }
            if send_failed {
                break;
            }
        }
        drop(tx);
        writer.join().expect("writer thread panicked")
    });
    summary.counts.written = writer_result?;

    let manifest = RunManifest {
        config: cfg.clone(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        counts: summary.counts.clone(),
        usage: summary.usage,
    };
    let mpath = manifest_path(&cfg.output_path);
    let f = File::create(&mpath).map_err(|e| Error::file(&mpath, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
    Ok(summary)
}
