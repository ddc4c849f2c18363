//! One-time fitting of the free parameters in `configs/paper.json` against
//! published reference points. Every fit is a bisection over one scalar
//! with the simulator as the oracle.

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ScenarioConfig};
use crate::prefetch::Configuration;
use crate::sim::{run, run_single_instance, SimError};
use crate::workload::{fit_zipf_exponent, locality_curve};

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub model: String,
    pub throughput_no_cache: f64,
    pub throughput_cache: f64,
    pub uplift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub zipf_s: f64,
    pub coverage_at_half: f64,
    pub inference_gpu_rate: f64,
    pub baseline_throughput_k1: f64,
    pub single_gpu_rate: f64,
    pub single_decode_step: f64,
    pub single_n_docs: u64,
    pub models: Vec<ModelFit>,
}

/// Queries used when fitting the Zipf exponent.
pub const ZIPF_FIT_QUERIES: usize = 100_000;

/// Seeds the shared-topology fit averages over.
pub const FIT_SEEDS: [u64; 3] = [1, 2, 3];

fn bisect(mut lo: f64, mut hi: f64, iters: usize, mut go_up: impl FnMut(f64) -> Result<bool, CalibrationError>) -> Result<f64, CalibrationError> {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if go_up(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Coverage of half the queries by the fitted top-1 stream.
pub fn zipf_coverage(cfg: &ScenarioConfig, n_queries: usize) -> f64 {
    let w = &cfg.workload;
    let top1: Vec<u64> = crate::workload::zipf_stream(w.n_docs, w.zipf_s, n_queries, w.seed)
        .iter()
        .filter_map(|x| x.top1())
        .collect();
    locality_curve(&top1, Some(w.n_docs)).expect("non-empty").coverage_at(0.5)
}

pub fn fit_zipf(cfg: &mut ScenarioConfig) -> f64 {
    let w = &cfg.workload;
    cfg.workload.zipf_s = fit_zipf_exponent(w.n_docs, ZIPF_FIT_QUERIES, w.coverage_target, w.seed);
    cfg.workload.zipf_s
}

/// Mean over `seeds` of the per-try mean throughput of one configuration.
pub fn shared_throughput(cfg: &ScenarioConfig, configuration: Configuration, k: usize, seeds: &[u64]) -> Result<f64, CalibrationError> {
    let workload = cfg.shared_workload(k);
    let mut sum = 0.0;
    for &seed in seeds {
        let sim = cfg.shared_config(configuration, k, seed)?;
        sum += run(&sim, &workload)?.0.mean_try_throughput();
    }
    Ok(sum / seeds.len() as f64)
}

/// Fits the inference GPU rate so Baseline k=1 meets the target throughput.
/// The generator GPU matches it and the CPU keeps its configured ratio.
pub fn fit_shared_rate(cfg: &mut ScenarioConfig) -> Result<f64, CalibrationError> {
    let cpu_ratio = cfg.shared.cpu_rate / cfg.shared.inference_gpu_rate;
    let target = cfg.shared.target_baseline_throughput;
    let log_rate = bisect(20.0, 28.0, 40, |lr| {
        let mut c = cfg.clone();
        c.shared.inference_gpu_rate = lr.exp();
        Ok(shared_throughput(&c, Configuration::Baseline, 1, &FIT_SEEDS)? < target)
    })?;
    let rate = log_rate.exp();
    cfg.shared.inference_gpu_rate = rate;
    cfg.shared.generator_gpu_rate = rate;
    cfg.shared.cpu_rate = rate * cpu_ratio;
    Ok(rate)
}

/// Mean throughput over the configured batch sizes.
pub fn single_throughput(cfg: &ScenarioConfig, model: &str, cache: bool) -> Result<f64, CalibrationError> {
    let workload = cfg.single_workload();
    let mut sum = 0.0;
    for &b in &cfg.single.batch_sizes {
        let sim = cfg.single_config(model, b, cache, 1)?;
        sum += run_single_instance(&sim, &workload)?.0.throughput;
    }
    Ok(sum / cfg.single.batch_sizes.len() as f64)
}

pub fn single_uplift(cfg: &ScenarioConfig, model: &str) -> Result<f64, CalibrationError> {
    Ok(single_throughput(cfg, model, true)? / single_throughput(cfg, model, false)? - 1.0)
}

/// Corpus size whose total cache for the first model matches the
/// reference size.
pub fn fit_single_corpus(cfg: &mut ScenarioConfig) -> Result<u64, CalibrationError> {
    let first = ScenarioConfig::model(&cfg.single.models[0])?;
    let per_doc = crate::codec::blob_size(&first, cfg.tokens.doc_tokens as u64);
    cfg.single.n_docs = ((cfg.single.reference_cache_bytes as f64 / per_doc as f64).round() as u64).max(1);
    Ok(cfg.single.n_docs)
}

fn mean_over_models(cfg: &ScenarioConfig, f: impl Fn(&str) -> Result<f64, CalibrationError>) -> Result<f64, CalibrationError> {
    let mut sum = 0.0;
    for m in &cfg.single.models {
        sum += f(m)?;
    }
    Ok(sum / cfg.single.models.len() as f64)
}

/// Fits the shared decode step so the cache-off throughput, averaged over
/// models, meets the target.
pub fn fit_decode_step(cfg: &mut ScenarioConfig) -> Result<f64, CalibrationError> {
    let target = cfg.single.target_throughput;
    let step = bisect(0.0, 0.1, 50, |s| {
        let mut c = cfg.clone();
        c.single.decode_step = s;
        Ok(mean_over_models(&c, |m| single_throughput(&c, m, false))? > target)
    })?;
    cfg.single.decode_step = step;
    Ok(step)
}

/// Fits the single-instance GPU rate so the mean cache uplift meets the
/// target, refitting the decode step at each trial rate. Uplift falls as
/// the rate grows because decode takes a larger share of every batch.
pub fn fit_single(cfg: &mut ScenarioConfig) -> Result<f64, CalibrationError> {
    fit_single_corpus(cfg)?;
    let target = cfg.single.target_uplift;
    let log_rate = bisect(22.0, 30.0, 30, |lr| {
        let mut c = cfg.clone();
        c.single.gpu_rate = lr.exp();
        fit_decode_step(&mut c)?;
        Ok(mean_over_models(&c, |m| single_uplift(&c, m))? > target)
    })?;
    cfg.single.gpu_rate = log_rate.exp();
    fit_decode_step(cfg)?;
    Ok(cfg.single.gpu_rate)
}

/// Runs every fit in order and reports the achieved values.
pub fn calibrate(cfg: &mut ScenarioConfig) -> Result<CalibrationReport, CalibrationError> {
    fit_zipf(cfg);
    fit_shared_rate(cfg)?;
    fit_single(cfg)?;
    let mut models = Vec::new();
    for m in &cfg.single.models {
        let off = single_throughput(cfg, m, false)?;
        let on = single_throughput(cfg, m, true)?;
        models.push(ModelFit {
            model: m.clone(),
            throughput_no_cache: off,
            throughput_cache: on,
            uplift: on / off - 1.0,
        });
    }
    Ok(CalibrationReport {
        zipf_s: cfg.workload.zipf_s,
        coverage_at_half: zipf_coverage(cfg, ZIPF_FIT_QUERIES),
        inference_gpu_rate: cfg.shared.inference_gpu_rate,
        baseline_throughput_k1: shared_throughput(cfg, Configuration::Baseline, 1, &FIT_SEEDS)?,
        single_gpu_rate: cfg.single.gpu_rate,
        single_decode_step: cfg.single.decode_step,
        single_n_docs: cfg.single.n_docs,
        models,
    })
}
