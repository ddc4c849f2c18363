//! Analytic timing model standing in for GPU execution.
//!
//! Work is measured in abstract units (`layers * tokens^2 * hidden_dim` for a
//! full prefill); a device converts work to seconds through its
//! `compute_rate`. All times are seconds as `f64`.

use serde::{Deserialize, Serialize};

use crate::codec::ModelProfile;
use crate::store::{LookupOutcome, LookupResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceKind {
    InferenceGpu,
    GeneratorGpu,
    Cpu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub kind: DeviceKind,
    /// Work units per second; > 0.
    pub compute_rate: f64,
    #[serde(default = "one")]
    pub concurrency: u32,
}

fn one() -> u32 {
    1
}

impl DeviceProfile {
    pub fn new(device_id: impl Into<String>, kind: DeviceKind, compute_rate: f64) -> Self {
        Self {
            device_id: device_id.into(),
            kind,
            compute_rate,
            concurrency: 1,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.compute_rate.is_finite() && self.compute_rate > 0.0) {
            return Err(CostError(format!("device {}: compute_rate must be > 0", self.device_id)));
        }
        if self.concurrency == 0 {
            return Err(CostError(format!("device {}: concurrency must be >= 1", self.device_id)));
        }
        Ok(())
    }

    pub fn seconds(&self, work: f64) -> f64 {
        work / self.compute_rate
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid cost parameters: {0}")]
pub struct CostError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub model: ModelProfile,
    pub disk_read_bw: f64,
    pub disk_write_bw: f64,
    pub disk_seek: f64,
    pub mem_bw: f64,
    pub network_delay: f64,
    #[serde(default)]
    pub decode_enabled: bool,
    /// Seconds per generated token for a whole batch; used only when
    /// `decode_enabled`.
    #[serde(default)]
    pub decode_step: f64,
    #[serde(default)]
    pub answer_tokens: u32,
}

impl CostParams {
    pub fn with_model(model: ModelProfile) -> Self {
        Self {
            model,
            disk_read_bw: 3.4e9,
            disk_write_bw: 2.4e9,
            disk_seek: 1e-4,
            mem_bw: 20e9,
            network_delay: 2e-3,
            decode_enabled: false,
            decode_step: 0.0,
            answer_tokens: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        self.model.validate().map_err(|e| CostError(e.to_string()))?;
        for (name, v) in [
            ("disk_read_bw", self.disk_read_bw),
            ("disk_write_bw", self.disk_write_bw),
            ("mem_bw", self.mem_bw),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostError(format!("{name} must be > 0")));
            }
        }
        for (name, v) in [
            ("disk_seek", self.disk_seek),
            ("network_delay", self.network_delay),
            ("decode_step", self.decode_step),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CostError(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    fn ld(&self) -> (u64, u64) {
        (self.model.layers as u64, self.model.hidden_dim as u64)
    }

    /// Decode time for one batch, zero unless decode is enabled.
    pub fn decode_time(&self) -> f64 {
        if self.decode_enabled {
            self.answer_tokens as f64 * self.decode_step
        } else {
            0.0
        }
    }

    pub fn kv_bytes(&self, tokens: u64) -> u64 {
        crate::codec::blob_size(&self.model, tokens)
    }
}

/// `L * n^2 * D`.
pub fn prefill_work(layers: u64, hidden_dim: u64, n_total: u64) -> f64 {
    (layers as f64) * (n_total as f64) * (n_total as f64) * (hidden_dim as f64)
}

/// `L * n_q * (n_q + n_c) * D`: new tokens attend over the whole context,
/// cached tokens cost nothing.
pub fn cached_prefill_work(layers: u64, hidden_dim: u64, n_query: u64, n_cached: u64) -> f64 {
    (layers as f64) * (n_query as f64) * ((n_query + n_cached) as f64) * (hidden_dim as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    Disk,
    Memory,
}

pub fn load_time(bytes: u64, tier: Tier, params: &CostParams) -> f64 {
    match tier {
        Tier::Disk => params.disk_seek + bytes as f64 / params.disk_read_bw,
        Tier::Memory => bytes as f64 / params.mem_bw,
    }
}

/// What a lookup produced, reduced to what the cost model needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheAccess {
    Miss,
    Hit { tier: Tier, bytes: u64 },
}

impl From<&LookupResult> for CacheAccess {
    fn from(r: &LookupResult) -> Self {
        match r.outcome {
            LookupOutcome::MemoryHit => CacheAccess::Hit {
                tier: Tier::Memory,
                bytes: r.load_cost_bytes,
            },
            LookupOutcome::DiskHit => CacheAccess::Hit {
                tier: Tier::Disk,
                bytes: r.load_cost_bytes,
            },
            LookupOutcome::Miss => CacheAccess::Miss,
        }
    }
}

/// `kv_load + prefill == ttft` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtftBreakdown {
    pub ttft: f64,
    pub kv_load: f64,
    pub prefill: f64,
}

/// Time to first token on `device`, excluding queueing and network.
/// On a miss the `n_cached` document tokens are prefilled as raw text.
pub fn ttft(params: &CostParams, device: &DeviceProfile, n_query: u64, n_cached: u64, access: CacheAccess) -> TtftBreakdown {
    let (l, d) = params.ld();
    let (kv_load, work) = match access {
        CacheAccess::Miss => (0.0, prefill_work(l, d, n_query + n_cached)),
        CacheAccess::Hit { tier, bytes } => (load_time(bytes, tier, params), cached_prefill_work(l, d, n_query, n_cached)),
    };
    let prefill = device.seconds(work);
    TtftBreakdown {
        ttft: kv_load + prefill,
        kv_load,
        prefill,
    }
}

/// Time for a generator device to produce and persist the cache of
/// `n_tokens` document tokens.
pub fn generation_time(params: &CostParams, device: &DeviceProfile, n_tokens: u64) -> f64 {
    let (l, d) = params.ld();
    device.seconds(prefill_work(l, d, n_tokens)) + params.kv_bytes(n_tokens) as f64 / params.disk_write_bw
}

/// True when a hit from `tier` is predicted to beat the miss path.
pub fn hit_beats_miss(params: &CostParams, device: &DeviceProfile, n_query: u64, n_cached: u64, tier: Tier) -> bool {
    let (l, d) = params.ld();
    let saved = device.seconds(prefill_work(l, d, n_query + n_cached) - cached_prefill_work(l, d, n_query, n_cached));
    load_time(params.kv_bytes(n_cached), tier, params) < saved
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn work_examples() {
        assert_eq!(prefill_work(24, 2048, 0), 0.0);
        assert_eq!(prefill_work(24, 2048, 128), 805_306_368.0);
        assert_eq!(prefill_work(24, 2048, 256), 4.0 * prefill_work(24, 2048, 128));
        assert_eq!(cached_prefill_work(24, 2048, 16, 112), 100_663_296.0);
        assert_eq!(cached_prefill_work(24, 2048, 16, 0), prefill_work(24, 2048, 16));
        // Independent ratio check: n_q (n_q + n_c) / (n_q + n_c)^2.
        let ratio = cached_prefill_work(24, 2048, 16, 112) / prefill_work(24, 2048, 128);
        assert_eq!(ratio, 16.0 / 128.0);
    }

    #[test]
    fn load_time_examples() {
        let p = CostParams::with_model(ModelProfile::opt_1_3b());
        assert_eq!(load_time(0, Tier::Disk, &p), p.disk_seek);
        assert!((load_time(3_400_000_000, Tier::Disk, &p) - (p.disk_seek + 1.0)).abs() < 1e-12);
        assert!(load_time(1 << 20, Tier::Memory, &p) < load_time(1 << 20, Tier::Disk, &p));
    }

    #[test]
    fn miss_equals_empty_hit_without_seek() {
        let p = CostParams::with_model(ModelProfile::opt_1_3b());
        let dev = DeviceProfile::new("g", DeviceKind::InferenceGpu, 1e10);
        let miss = ttft(&p, &dev, 40, 0, CacheAccess::Miss);
        let hit = ttft(&p, &dev, 40, 0, CacheAccess::Hit { tier: Tier::Disk, bytes: 0 });
        assert!((hit.ttft - p.disk_seek - miss.ttft).abs() < 1e-15);
    }
}
