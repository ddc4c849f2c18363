//! Calibrated scenario parameters. The single source is `configs/paper.json`,
//! compiled in as the built-in default and overridable by `--config`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::ModelProfile;
use crate::cost::{CostParams, DeviceKind, DeviceProfile};
use crate::prefetch::{Configuration, KeyScheme};
use crate::sim::{Arrival, ArrivalProcess, SimConfig};
use crate::workload::{zipf_stream_with, TokenDefaults, WorkItem, ZipfSpec};

pub const BUILTIN_JSON: &str = include_str!("../../../configs/paper.json");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown model profile {0:?}")]
    UnknownModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub n_docs: u64,
    pub n_queries: usize,
    /// Fitted so the top-1 locality curve covers half the queries with
    /// `coverage_target` of the corpus.
    pub zipf_s: f64,
    pub coverage_target: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    pub disk_read_bw: f64,
    pub disk_write_bw: f64,
    pub disk_seek: f64,
    pub mem_bw: f64,
    pub network_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedParams {
    pub model: String,
    pub inference_gpu_rate: f64,
    pub generator_gpu_rate: f64,
    pub cpu_rate: f64,
    pub rate: f64,
    pub arrival: ArrivalProcess,
    pub threshold: f64,
    pub tries: usize,
    pub memory_capacity_bytes: u64,
    pub store_on_miss: bool,
    pub key_scheme: KeyScheme,
    /// Baseline k=1 throughput the inference rate was fitted to.
    pub target_baseline_throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleParams {
    pub models: Vec<String>,
    pub gpu_rate: f64,
    /// Seconds per answer token for a whole batch, shared by all models.
    pub decode_step: f64,
    pub answer_tokens: u32,
    pub rate: f64,
    pub arrival: ArrivalProcess,
    /// Corpus size for this scenario; sized so the first model's total
    /// cache matches `reference_cache_bytes`.
    pub n_docs: u64,
    pub reference_cache_bytes: u64,
    pub n_queries: usize,
    pub batch_sizes: Vec<usize>,
    pub memory_capacity_bytes: u64,
    /// Cache-off throughput averaged over models and batch sizes.
    pub target_throughput: f64,
    /// Mean over models of the cache-on / cache-off throughput ratio, minus one.
    pub target_uplift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub rates: Vec<f64>,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub version: u32,
    pub tokens: TokenDefaults,
    pub workload: WorkloadParams,
    pub storage: StorageParams,
    pub shared: SharedParams,
    pub single: SingleParams,
    pub sweep: SweepParams,
}

impl ScenarioConfig {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_JSON).expect("built-in config parses")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `path` if given, otherwise the built-in defaults.
    pub fn load_or_builtin(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::builtin()),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn model(name: &str) -> Result<ModelProfile, ConfigError> {
        ModelProfile::builtin(name).ok_or_else(|| ConfigError::UnknownModel(name.to_string()))
    }

    pub fn cost_params(&self, model: ModelProfile) -> CostParams {
        let s = &self.storage;
        CostParams {
            model,
            disk_read_bw: s.disk_read_bw,
            disk_write_bw: s.disk_write_bw,
            disk_seek: s.disk_seek,
            mem_bw: s.mem_bw,
            network_delay: s.network_delay,
            decode_enabled: false,
            decode_step: 0.0,
            answer_tokens: 0,
        }
    }

    /// The multi-instance topology for `configuration` (Baseline, A or B).
    pub fn shared_config(&self, configuration: Configuration, k: usize, seed: u64) -> Result<SimConfig, ConfigError> {
        let sh = &self.shared;
        let gpu = |id: &str| DeviceProfile::new(id, DeviceKind::InferenceGpu, sh.inference_gpu_rate);
        let (devices, instances) = match configuration {
            Configuration::A => (
                vec![gpu("gpu0"), DeviceProfile::new("gpu1", DeviceKind::GeneratorGpu, sh.generator_gpu_rate)],
                vec!["gpu0".to_string()],
            ),
            Configuration::B => (
                vec![gpu("gpu0"), gpu("gpu1"), DeviceProfile::new("cpu", DeviceKind::Cpu, sh.cpu_rate)],
                vec!["gpu0".to_string(), "gpu1".to_string()],
            ),
            Configuration::Baseline => (vec![gpu("gpu0"), gpu("gpu1")], vec!["gpu0".to_string(), "gpu1".to_string()]),
            Configuration::SingleInstance => (vec![gpu("gpu0")], vec!["gpu0".to_string()]),
        };
        Ok(SimConfig {
            configuration,
            devices,
            instances,
            cost: self.cost_params(Self::model(&sh.model)?),
            threshold: sh.threshold,
            arrival: Arrival {
                rate: sh.rate,
                process: sh.arrival,
            },
            k,
            tries: sh.tries,
            seed,
            memory_capacity_bytes: sh.memory_capacity_bytes,
            key_scheme: sh.key_scheme,
            store_on_miss: sh.store_on_miss,
            batch_size: 1,
            cache_enabled: false,
        })
    }

    /// Batched single-instance topology for one model profile.
    pub fn single_config(&self, model: &str, batch_size: usize, cache_enabled: bool, seed: u64) -> Result<SimConfig, ConfigError> {
        let si = &self.single;
        let mut cost = self.cost_params(Self::model(model)?);
        cost.decode_enabled = true;
        cost.decode_step = si.decode_step;
        cost.answer_tokens = si.answer_tokens;
        Ok(SimConfig {
            configuration: Configuration::SingleInstance,
            devices: vec![DeviceProfile::new("gpu0", DeviceKind::InferenceGpu, si.gpu_rate)],
            instances: vec!["gpu0".to_string()],
            cost,
            threshold: 0.0,
            arrival: Arrival {
                rate: si.rate,
                process: si.arrival,
            },
            k: 1,
            tries: 1,
            seed,
            memory_capacity_bytes: si.memory_capacity_bytes,
            key_scheme: KeyScheme::Combination,
            store_on_miss: false,
            batch_size,
            cache_enabled,
        })
    }

    /// One instance of the shared model, no cache and no decode, Poisson
    /// arrivals; the rate is set per sweep point.
    pub fn sweep_config(&self, seed: u64) -> Result<SimConfig, ConfigError> {
        let mut cfg = self.shared_config(Configuration::SingleInstance, 1, seed)?;
        cfg.tries = 1;
        cfg.arrival.process = ArrivalProcess::Poisson;
        Ok(cfg)
    }

    pub fn zipf_spec(&self, n_queries: usize, k: usize) -> ZipfSpec {
        ZipfSpec {
            n_docs: self.workload.n_docs,
            s: self.workload.zipf_s,
            n_queries,
            k,
            q_tokens: self.tokens.q_tokens,
            doc_tokens: self.tokens.doc_tokens,
            seed: self.workload.seed,
        }
    }

    /// The shared-experiment dataset for top-`k` retrieval.
    pub fn shared_workload(&self, k: usize) -> Vec<WorkItem> {
        zipf_stream_with(&self.zipf_spec(self.workload.n_queries, k)).expect("valid workload params")
    }

    pub fn single_workload(&self) -> Vec<WorkItem> {
        let mut spec = self.zipf_spec(self.single.n_queries, 1);
        spec.n_docs = self.single.n_docs;
        zipf_stream_with(&spec).expect("valid workload params")
    }

    pub fn sweep_workload(&self) -> Vec<WorkItem> {
        zipf_stream_with(&self.zipf_spec(self.sweep.n_queries, 1)).expect("valid workload params")
    }
}
