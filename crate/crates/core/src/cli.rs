//! Command-line front end. Exit codes: 0 success, 2 usage, 3 bad input,
//! 4 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::codec::{blob_size, synth_blob};
use crate::config::ScenarioConfig;
use crate::index::{build_index, read_chunks_jsonl, FlatIndex};
use crate::manifest::RunManifest;
use crate::net::CacheServer;
use crate::prefetch::Configuration;
use crate::service::CacheService;
use crate::sim::{run, sweep_rate, MetricsReport, QueryRecord, SimConfig, SweepRow};
use crate::store::{KvKey, KvStore, Residency};
use crate::workload::{load_trace, locality_curve, WorkItem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ragdcache", version, about = "Shared KV cache for retrieval-augmented serving")]
pub struct Cli {
    /// Scenario parameters; defaults to the built-in calibrated set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Single,
    #[value(name = "sharedA")]
    SharedA,
    #[value(name = "sharedB")]
    SharedB,
    Baseline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and store a KV cache for every chunk.
    Precompute {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long, env = "RAGDCACHE_STORE")]
        store: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a simulated experiment and write report.json, aggregates.csv
    /// and manifest.json.
    Bench {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        tries: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prefetch_threshold: Option<f64>,
        /// JSONL trace; defaults to the configured synthetic workload.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Index file used to resolve trace entries given as embeddings.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Single scenario: models to run; defaults to all configured.
        #[arg(long)]
        model: Vec<String>,
        /// Single scenario: batch sizes; defaults to all configured.
        #[arg(long, value_delimiter = ',')]
        batch_size: Vec<usize>,
        /// Also write every per-query record to records.jsonl.
        #[arg(long)]
        records: bool,
    },
    /// Top-1 document locality of a trace.
    AnalyzeLocality {
        trace: PathBuf,
        #[arg(long)]
        corpus_size: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a flat inner-product index from a chunk file.
    BuildIndex {
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a store over TCP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
        #[arg(long, env = "RAGDCACHE_STORE")]
        store: PathBuf,
        #[arg(long, default_value_t = 1 << 30)]
        memory_bytes: u64,
    },
    /// Latency decomposition of one instance over a range of arrival rates.
    SweepRate {
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let config = ScenarioConfig::load_or_builtin(cli.config.as_deref()).map_err(input)?;
    match cli.command {
        Command::Precompute {
            chunks,
            model,
            store,
            seed,
        } => precompute(&chunks, &model, &store, seed),
        Command::Bench {
            scenario,
            k,
            rate,
            tries,
            seed,
            out,
            prefetch_threshold,
            trace,
            index,
            model,
            batch_size,
            records,
        } => {
            let opts = BenchOptions {
                scenario,
                k,
                rate,
                tries,
                seed,
                prefetch_threshold,
                trace,
                index,
                models: model,
                batch_sizes: batch_size,
                write_records: records,
            };
            for run in bench(config, &opts, &out)? {
                println!(
                    "{:<24} throughput {:.3} q/s  mean latency {:.4} s  ttft {:.4} s  hits mem {:.3} disk {:.3}",
                    run.label,
                    run.report.throughput,
                    run.report.mean_latency,
                    run.report.ttft_mean,
                    run.report.memory_hit_ratio,
                    run.report.disk_hit_ratio
                );
            }
            Ok(())
        }
        Command::AnalyzeLocality { trace, corpus_size, out } => analyze_locality(&config, &trace, corpus_size, out.as_deref()),
        Command::BuildIndex { chunks, out } => build_index_cmd(&chunks, &out),
        Command::Serve {
            listen,
            store,
            memory_bytes,
        } => serve(&listen, &store, memory_bytes),
        Command::SweepRate {
            rates,
            queries,
            seed,
            out,
        } => sweep(config, rates, queries, seed, &out),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

/// Totals of one precompute run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrecomputeSummary {
    pub chunks: usize,
    pub written: usize,
    pub skipped: usize,
    /// Sum of payload sizes over every chunk, written or already present.
    pub total_payload_bytes: u64,
    pub failed: Vec<u64>,
}

/// Stores a cache for every chunk not already present. Failures are
/// collected per chunk so one bad entry does not abort the rest.
pub fn precompute_chunks(
    chunks: &[crate::index::DocChunk],
    profile: &crate::codec::ModelProfile,
    store: &KvStore,
    seed: u64,
) -> PrecomputeSummary {
    let mut s = PrecomputeSummary {
        chunks: chunks.len(),
        written: 0,
        skipped: 0,
        total_payload_bytes: 0,
        failed: Vec::new(),
    };
    let model_hash = profile.model_hash();
    for c in chunks {
        s.total_payload_bytes += blob_size(profile, c.token_count as u64);
        let key = KvKey::new(model_hash, vec![c.doc_id]);
        if store.contains(&key) != Residency::Absent {
            s.skipped += 1;
            continue;
        }
        let ok = synth_blob(profile, &key.doc_ids, c.token_count, seed)
            .map_err(|e| e.to_string())
            .and_then(|b| store.put(&key, b).map_err(|e| e.to_string()));
        match ok {
            Ok(_) => s.written += 1,
            Err(e) => {
                eprintln!("doc {}: {e}", c.doc_id);
                s.failed.push(c.doc_id);
            }
        }
    }
    s
}

fn precompute(chunks: &Path, model: &str, store: &Path, seed: u64) -> Result<(), CliError> {
    let profile = ScenarioConfig::model(model).map_err(input)?;
    let chunks = read_chunks_jsonl(chunks).map_err(input)?;
    let store = KvStore::open(store, 0).map_err(runtime)?;
    let s = precompute_chunks(&chunks, &profile, &store, seed);
    println!(
        "model {model}: {} chunks, {} written, {} already present, total payload {} bytes",
        s.chunks, s.written, s.skipped, s.total_payload_bytes
    );
    if s.failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("{} chunk(s) failed: {:?}", s.failed.len(), s.failed)))
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub scenario: Scenario,
    pub k: usize,
    pub rate: Option<f64>,
    pub tries: Option<usize>,
    pub seed: u64,
    pub prefetch_threshold: Option<f64>,
    pub trace: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub models: Vec<String>,
    pub batch_sizes: Vec<usize>,
    pub write_records: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRun {
    pub label: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutput {
    pub manifest: RunManifest,
    pub runs: Vec<BenchRun>,
}

pub type RunWithRecords = (BenchRun, Vec<QueryRecord>);

#[derive(Serialize)]
struct BenchParams<'a> {
    scenario: &'a str,
    k: usize,
    seed: u64,
    models: &'a [String],
    batch_sizes: &'a [usize],
    trace: bool,
}

/// Fills doc ids of embedding-only items by top-`k` search.
pub fn resolve_workload(items: &mut [WorkItem], index: Option<&FlatIndex>, k: usize) -> Result<(), CliError> {
    for item in items.iter_mut() {
        if item.doc_ids.is_some() {
            continue;
        }
        let (Some(ix), Some(emb)) = (index, item.embedding.as_ref()) else {
            return Err(input(format!("query {} has no doc ids and no index to resolve it", item.query_id)));
        };
        let hits = ix.search(emb, k).map_err(input)?;
        item.doc_tokens = hits.iter().map(|h| ix.token_count(h.doc_id).unwrap_or(1)).collect();
        item.doc_ids = Some(hits.into_iter().map(|h| h.doc_id).collect());
    }
    Ok(())
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::Single => "single",
        Scenario::SharedA => "sharedA",
        Scenario::SharedB => "sharedB",
        Scenario::Baseline => "baseline",
    }
}

/// Runs a bench scenario in memory; [`bench`] adds the file outputs.
pub fn bench_runs(mut config: ScenarioConfig, opts: &BenchOptions) -> Result<(ScenarioConfig, Vec<RunWithRecords>), CliError> {
    if let Some(r) = opts.rate {
        config.shared.rate = r;
        config.single.rate = r;
    }
    if let Some(t) = opts.tries {
        config.shared.tries = t;
    }
    if let Some(t) = opts.prefetch_threshold {
        config.shared.threshold = t;
    }
    if !opts.models.is_empty() {
        config.single.models = opts.models.clone();
    }
    if !opts.batch_sizes.is_empty() {
        config.single.batch_sizes = opts.batch_sizes.clone();
    }
    let trace = match &opts.trace {
        Some(p) => {
            let mut items = load_trace(p, config.tokens).map_err(input)?;
            let index = opts.index.as_deref().map(FlatIndex::load).transpose().map_err(input)?;
            resolve_workload(&mut items, index.as_ref(), opts.k)?;
            Some(items)
        }
        None => None,
    };
    let run_one = |sim: &SimConfig, workload: &[WorkItem], label: String| -> Result<RunWithRecords, CliError> {
        let (report, records) = run(sim, workload).map_err(|e| match e {
            crate::sim::SimError::Workload(_) | crate::sim::SimError::Topology(_) => input(e),
            _ => runtime(e),
        })?;
        Ok((BenchRun { label, report }, records))
    };
    let mut runs = Vec::new();
    match opts.scenario {
        Scenario::Single => {
            let workload = trace.unwrap_or_else(|| config.single_workload());
            for m in &config.single.models {
                for &b in &config.single.batch_sizes {
                    for cache in [false, true] {
                        let mut sim = config.single_config(m, b, cache, opts.seed).map_err(input)?;
                        sim.k = opts.k;
                        if let Some(t) = opts.tries {
                            sim.tries = t;
                        }
                        let label = format!("{m}/b{b}/{}", if cache { "cache" } else { "nocache" });
                        runs.push(run_one(&sim, &workload, label)?);
                    }
                }
            }
        }
        s => {
            let configuration = match s {
                Scenario::SharedA => Configuration::A,
                Scenario::SharedB => Configuration::B,
                _ => Configuration::Baseline,
            };
            let workload = trace.unwrap_or_else(|| config.shared_workload(opts.k));
            let sim = config.shared_config(configuration, opts.k, opts.seed).map_err(input)?;
            runs.push(run_one(&sim, &workload, format!("{}/k{}", scenario_name(s), opts.k))?);
        }
    }
    Ok((config, runs))
}

/// Runs [`bench_runs`] and writes the output files; returns the runs.
pub fn bench(config: ScenarioConfig, opts: &BenchOptions, out: &Path) -> Result<Vec<BenchRun>, CliError> {
    let trace_bytes = opts.trace.as_deref().map(read_file).transpose()?.unwrap_or_default();
    let (config, runs) = bench_runs(config, opts)?;
    ensure_dir(out)?;
    let params = BenchParams {
        scenario: scenario_name(opts.scenario),
        k: opts.k,
        seed: opts.seed,
        models: &config.single.models,
        batch_sizes: &config.single.batch_sizes,
        trace: opts.trace.is_some(),
    };
    let snapshot = serde_json::json!({ "params": params, "config": config });
    let mut outputs = vec!["report.json", "aggregates.csv", "manifest.json"];
    if opts.write_records {
        outputs.push("records.jsonl");
    }
    let manifest = RunManifest::new("bench", Some(opts.seed), snapshot, &[&trace_bytes]).with_outputs(&outputs);

    let mut csv = String::new();
    let mut records_out = String::new();
    for (i, (run, records)) in runs.iter().enumerate() {
        for (j, line) in run.report.to_csv().lines().enumerate() {
            if j == 0 {
                if i == 0 {
                    csv.push_str(&format!("run,{line}\n"));
                }
            } else {
                csv.push_str(&format!("{},{line}\n", run.label));
            }
        }
        if opts.write_records {
            for r in records {
                let v = serde_json::json!({ "run": run.label, "record": r });
                records_out.push_str(&v.to_string());
                records_out.push('\n');
            }
        }
    }
    let output = BenchOutput {
        manifest: manifest.clone(),
        runs: runs.into_iter().map(|(r, _)| r).collect(),
    };
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&output).map_err(runtime)? + "\n")?;
    write_file(&out.join("aggregates.csv"), csv)?;
    write_file(&out.join("manifest.json"), manifest.to_json_pretty())?;
    if opts.write_records {
        write_file(&out.join("records.jsonl"), records_out)?;
    }
    Ok(output.runs)
}

fn analyze_locality(config: &ScenarioConfig, trace: &Path, corpus_size: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    let items = load_trace(trace, config.tokens).map_err(input)?;
    let top1: Vec<u64> = items.iter().filter_map(|i| i.top1()).collect();
    if top1.len() != items.len() {
        return Err(input("locality needs resolved doc ids for every query"));
    }
    let curve = locality_curve(&top1, corpus_size).map_err(input)?;
    println!(
        "{} queries, {} distinct documents, {:.2}% of the corpus serves half the queries",
        curve.n_queries,
        curve.points.len(),
        100.0 * curve.coverage_at(0.5)
    );
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join("locality.csv"), curve.to_csv())?;
        let snapshot = serde_json::json!({ "corpus_size": corpus_size });
        let manifest = RunManifest::new("analyze-locality", None, snapshot, &[&read_file(trace)?])
            .with_outputs(&["locality.csv", "manifest.json"]);
        write_file(&dir.join("manifest.json"), manifest.to_json_pretty())?;
    }
    Ok(())
}

fn build_index_cmd(chunks: &Path, out: &Path) -> Result<(), CliError> {
    let index = build_index(read_chunks_jsonl(chunks).map_err(input)?).map_err(input)?;
    index.save(out).map_err(runtime)?;
    println!("indexed {} chunks of dimension {} into {}", index.len(), index.dim(), out.display());
    Ok(())
}

fn serve(listen: &str, store: &Path, memory_bytes: u64) -> Result<(), CliError> {
    let store = Arc::new(KvStore::open(store, memory_bytes).map_err(runtime)?);
    let server = CacheServer::start(listen, Arc::new(CacheService::new(store))).map_err(runtime)?;
    println!("listening on {}", server.local_addr());
    server.join();
    Ok(())
}

fn sweep(mut config: ScenarioConfig, rates: Option<Vec<f64>>, queries: Option<usize>, seed: u64, out: &Path) -> Result<(), CliError> {
    if let Some(r) = rates {
        config.sweep.rates = r;
    }
    if let Some(n) = queries {
        config.sweep.n_queries = n;
    }
    let sim = config.sweep_config(seed).map_err(input)?;
    let rows: Vec<SweepRow> = sweep_rate(&sim, &config.sweep_workload(), &config.sweep.rates).map_err(input)?;
    ensure_dir(out)?;
    let mut csv = format!("{}\n", SweepRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
        println!(
            "rate {:>8.3}  queue {:>5.1}%  processing {:>5.1}%  network {:>5.1}%  latency {:.4} s",
            r.rate,
            100.0 * r.queue_share,
            100.0 * r.processing_share,
            100.0 * r.network_share,
            r.mean_latency
        );
    }
    write_file(&out.join("sweep.csv"), csv)?;
    let snapshot = serde_json::json!({ "seed": seed, "config": config });
    let manifest = RunManifest::new("sweep-rate", Some(seed), snapshot, &[]).with_outputs(&["sweep.csv", "manifest.json"]);
    write_file(&out.join("manifest.json"), manifest.to_json_pretty())
}
