//! Deterministic discrete-event simulator of the serving system: a central
//! FIFO queue, LLM instances, the prefetch generator and the shared cache.
//!
//! Time is simulated. Ties between events at the same instant are broken by
//! event class and then insertion order, so identical inputs give
//! bit-identical records.

mod engine;
pub mod metrics;
mod single;
mod sweep;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::codec::hash_doc_ids;
use crate::cost::{CostParams, DeviceKind, DeviceProfile, Tier};
use crate::lru::ByteLru;
use crate::prefetch::{Configuration, KeyScheme};
use crate::store::KvKey;
use crate::workload::{poisson_gaps, uniform_arrivals, WorkItem};

pub use engine::run;
pub use metrics::{DocOrigin, MetricsReport, QueryRecord, TryAggregate};
pub use single::{run_single_instance, run_single_instance_real_io};
pub use sweep::{sweep_rate, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArrivalProcess {
    Poisson,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    /// Queries per second.
    pub rate: f64,
    pub process: ArrivalProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub configuration: Configuration,
    pub devices: Vec<DeviceProfile>,
    /// Device ids of the inference instances, one entry per instance.
    pub instances: Vec<String>,
    pub cost: CostParams,
    pub threshold: f64,
    pub arrival: Arrival,
    pub k: usize,
    pub tries: usize,
    pub seed: u64,
    pub memory_capacity_bytes: u64,
    #[serde(default)]
    pub key_scheme: KeyScheme,
    /// Instances persist caches they computed on a miss (A and B only).
    #[serde(default)]
    pub store_on_miss: bool,
    /// Queries per batch in the single-instance topology.
    #[serde(default = "one")]
    pub batch_size: usize,
    /// Single-instance topology only: use the offline-prepared cache.
    #[serde(default)]
    pub cache_enabled: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
    #[error("real-io store failure: {0}")]
    Store(String),
}

impl SimConfig {
    pub fn device(&self, id: &str) -> Option<&DeviceProfile> {
        self.devices.iter().find(|d| d.device_id == id)
    }

    /// Inference devices in instance order.
    pub fn instance_devices(&self) -> Result<Vec<DeviceProfile>, SimError> {
        self.instances
            .iter()
            .map(|id| {
                let d = self
                    .device(id)
                    .ok_or_else(|| SimError::Topology(format!("instance bound to unknown device {id}")))?;
                if d.kind != DeviceKind::InferenceGpu {
                    return Err(SimError::Topology(format!("instance device {id} is not an inference GPU")));
                }
                Ok(d.clone())
            })
            .collect()
    }

    /// A: one inference GPU plus a generator GPU. B: two inference GPUs plus
    /// a CPU. Baseline: two inference GPUs. SingleInstance: one.
    pub fn validate(&self) -> Result<(), SimError> {
        self.cost.validate()?;
        for d in &self.devices {
            d.validate()?;
        }
        let inst = self.instance_devices()?;
        let has = |k: DeviceKind| self.devices.iter().any(|d| d.kind == k);
        let want = match self.configuration {
            Configuration::A => 1,
            Configuration::B | Configuration::Baseline => 2,
            Configuration::SingleInstance => 1,
        };
        if inst.len() != want {
            return Err(SimError::Topology(format!(
                "{:?} needs {want} inference instance(s), got {}",
                self.configuration,
                inst.len()
            )));
        }
        match self.configuration {
            Configuration::A if !has(DeviceKind::GeneratorGpu) => {
                return Err(SimError::Topology("A needs a generator GPU".into()))
            }
            Configuration::B if !has(DeviceKind::Cpu) => return Err(SimError::Topology("B needs a CPU generator".into())),
            _ => {}
        }
        if !(self.arrival.rate.is_finite() && self.arrival.rate > 0.0) {
            return Err(SimError::Topology("arrival rate must be > 0".into()));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(SimError::Topology("threshold must be >= 0".into()));
        }
        if self.k == 0 || self.tries == 0 || self.batch_size == 0 || self.batch_size > 32 {
            return Err(SimError::Topology("k and tries must be >= 1, batch_size in 1..=32".into()));
        }
        Ok(())
    }
}

/// A query ready for simulation: its documents truncated to `k` and its
/// cache keys under the configured scheme.
#[derive(Debug, Clone)]
pub(crate) struct SimQuery {
    pub query_id: u64,
    pub q_tokens: u64,
    pub doc_tokens: Vec<u64>,
    pub keys: Vec<(KvKey, u64)>,
}

pub(crate) fn prepare_queries(config: &SimConfig, workload: &[WorkItem]) -> Result<Vec<SimQuery>, SimError> {
    if workload.is_empty() {
        return Err(SimError::Workload("no work items".into()));
    }
    let model_hash = config.cost.model.model_hash();
    workload
        .iter()
        .map(|w| {
            let ids = w
                .doc_ids
                .as_ref()
                .ok_or_else(|| SimError::Workload(format!("query {} has no resolved doc ids", w.query_id)))?;
            if ids.len() < config.k || w.doc_tokens.len() != ids.len() {
                return Err(SimError::Workload(format!(
                    "query {} has {} docs, needs {} with matching token counts",
                    w.query_id,
                    ids.len(),
                    config.k
                )));
            }
            let ids = &ids[..config.k];
            let toks: Vec<u64> = w.doc_tokens[..config.k].iter().map(|&t| t as u64).collect();
            let keys = match config.key_scheme {
                KeyScheme::Combination => vec![(KvKey::new(model_hash, ids.to_vec()), toks.iter().sum())],
                KeyScheme::PerDocument => ids
                    .iter()
                    .zip(&toks)
                    .map(|(&d, &t)| (KvKey::new(model_hash, vec![d]), t))
                    .collect(),
            };
            Ok(SimQuery {
                query_id: w.query_id,
                q_tokens: w.q_tokens as u64,
                doc_tokens: toks,
                keys,
            })
        })
        .collect()
}

/// Simulated cache state: the disk tier holds every stored key, the memory
/// tier is a byte-bounded LRU over a subset.
#[derive(Debug, Clone)]
pub(crate) struct SimCache {
    disk: HashSet<KvKey>,
    memory: ByteLru<KvKey>,
}

impl SimCache {
    pub fn new(memory_capacity: u64) -> Self {
        Self {
            disk: HashSet::new(),
            memory: ByteLru::new(memory_capacity),
        }
    }

    pub fn contains(&self, key: &KvKey) -> bool {
        self.disk.contains(key)
    }

    /// Returns the serving tier and promotes disk hits into memory.
    pub fn lookup(&mut self, key: &KvKey, bytes: u64) -> Option<Tier> {
        if self.memory.touch(key) {
            return Some(Tier::Memory);
        }
        if self.disk.contains(key) {
            self.memory.insert(key.clone(), bytes);
            return Some(Tier::Disk);
        }
        None
    }

    pub fn insert(&mut self, key: KvKey, bytes: u64) {
        if self.disk.insert(key.clone()) {
            self.memory.insert(key, bytes);
        }
    }
}

/// Event classes in tie-break order at equal times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum EventClass {
    GenDone,
    InstanceDone,
    Arrival,
    FlagCheck,
}

#[derive(Debug, Clone)]
pub(crate) struct Event<T> {
    pub time: f64,
    pub class: EventClass,
    pub seq: u64,
    pub payload: T,
}

impl<T> PartialEq for Event<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Event<T> {}

impl<T> PartialOrd for Event<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Event<T> {
    // Reversed so BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.class.cmp(&self.class))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug)]
pub(crate) struct EventQueue<T> {
    heap: BinaryHeap<Event<T>>,
    seq: u64,
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    pub fn push(&mut self, time: f64, class: EventClass, payload: T) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            class,
            seq: self.seq,
            payload,
        });
    }

    pub fn pop(&mut self) -> Option<Event<T>> {
        self.heap.pop()
    }
}

/// Seed for the arrival process of a run; tries share it so that every
/// pass sees the same gaps and differs only in query order.
pub(crate) fn arrival_seed(seed: u64) -> u64 {
    hash_doc_ids(&[seed, 0x6172_7269_7661_6c73])
}

/// Seed for the query order of try `t`.
pub fn try_seed(seed: u64, t: usize) -> u64 {
    hash_doc_ids(&[seed, 0x7472_7900, t as u64])
}

pub(crate) fn arrival_times(arrival: &Arrival, n: usize, seed: u64) -> Vec<f64> {
    match arrival.process {
        ArrivalProcess::Poisson => poisson_gaps(n, arrival.rate, arrival_seed(seed)),
        ArrivalProcess::Uniform => uniform_arrivals(n, arrival.rate),
    }
}
