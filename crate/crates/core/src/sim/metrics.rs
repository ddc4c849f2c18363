use serde::{Deserialize, Serialize};

use crate::prefetch::Configuration;

/// Where the cache for one key of a query came from at dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DocOrigin {
    MemoryHit,
    DiskHit,
    /// Disk hit on a cache the generator produced for this query.
    Generated,
    /// No usable cache; the documents were prefilled as raw text.
    MissRaw,
}

/// One query's timeline. `queue_wait + kv_load + prefill + network ==
/// first_token - arrival`. In batched runs `kv_load`, `prefill` and
/// `full_prefill` are batch totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub try_index: usize,
    pub instance: usize,
    pub arrival: f64,
    pub dispatch: f64,
    pub first_token: f64,
    /// First token plus decode, when decode is modeled.
    pub completion: f64,
    pub queue_wait: f64,
    pub kv_load: f64,
    pub prefill: f64,
    pub network: f64,
    /// Prefill time had every document been raw text.
    pub full_prefill: f64,
    pub origins: Vec<DocOrigin>,
}

impl QueryRecord {
    pub fn latency(&self) -> f64 {
        self.completion - self.arrival
    }

    pub fn ttft(&self) -> f64 {
        self.first_token - self.arrival
    }

    pub fn is_hit(&self) -> bool {
        self.origins.iter().any(|o| *o != DocOrigin::MissRaw)
    }

    pub fn is_full_hit(&self) -> bool {
        !self.origins.is_empty() && self.origins.iter().all(|o| *o != DocOrigin::MissRaw)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TryAggregate {
    pub try_index: usize,
    pub queries: usize,
    pub makespan: f64,
    pub throughput: f64,
    pub mean_latency: f64,
    pub ttft_mean: f64,
    pub memory_hit_ratio: f64,
    pub disk_hit_ratio: f64,
    pub miss_ratio: f64,
    pub generations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub configuration: Configuration,
    pub k: usize,
    pub queries: usize,
    /// Completed queries over the summed per-try makespans.
    pub throughput: f64,
    pub makespan: f64,
    pub mean_latency: f64,
    pub median_latency: f64,
    pub p95_latency: f64,
    pub ttft_mean: f64,
    pub mean_queue_wait: f64,
    pub mean_kv_load: f64,
    pub mean_prefill: f64,
    /// Fractions of key lookups; disk includes generator-produced caches.
    pub memory_hit_ratio: f64,
    pub disk_hit_ratio: f64,
    pub generated_ratio: f64,
    pub miss_ratio: f64,
    pub generations: usize,
    pub per_try: Vec<TryAggregate>,
}

impl MetricsReport {
    pub fn mean_try_throughput(&self) -> f64 {
        mean(self.per_try.iter().map(|t| t.throughput))
    }

    /// One header line plus one row per try and an `all` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scope,configuration,k,queries,makespan,throughput,mean_latency,ttft_mean,memory_hit_ratio,disk_hit_ratio,miss_ratio,generations\n",
        );
        let cfg = format!("{:?}", self.configuration);
        for t in &self.per_try {
            out.push_str(&format!(
                "try{},{cfg},{},{},{},{},{},{},{},{},{},{}\n",
                t.try_index,
                self.k,
                t.queries,
                t.makespan,
                t.throughput,
                t.mean_latency,
                t.ttft_mean,
                t.memory_hit_ratio,
                t.disk_hit_ratio,
                t.miss_ratio,
                t.generations
            ));
        }
        out.push_str(&format!(
            "all,{cfg},{},{},{},{},{},{},{},{},{},{}\n",
            self.k,
            self.queries,
            self.makespan,
            self.throughput,
            self.mean_latency,
            self.ttft_mean,
            self.memory_hit_ratio,
            self.disk_hit_ratio,
            self.miss_ratio,
            self.generations
        ));
        out
    }
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Nearest-rank percentile, `p` in [0, 100].
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[derive(Debug, Default, Clone, Copy)]
struct OriginCounts {
    memory: usize,
    disk: usize,
    generated: usize,
    miss: usize,
}

impl OriginCounts {
    fn of<'a>(records: impl IntoIterator<Item = &'a QueryRecord>) -> Self {
        let mut c = Self::default();
        for r in records {
            for o in &r.origins {
                match o {
                    DocOrigin::MemoryHit => c.memory += 1,
                    DocOrigin::DiskHit => c.disk += 1,
                    DocOrigin::Generated => c.generated += 1,
                    DocOrigin::MissRaw => c.miss += 1,
                }
            }
        }
        c
    }

    fn total(&self) -> f64 {
        (self.memory + self.disk + self.generated + self.miss).max(1) as f64
    }
}

/// Makespan of one try: last completion minus first arrival.
pub fn makespan(records: &[&QueryRecord]) -> f64 {
    let first = records.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min);
    let last = records.iter().map(|r| r.completion).fold(f64::NEG_INFINITY, f64::max);
    last - first
}

/// Builds the report from records; `generations[t]` counts generator tasks
/// completed during try `t`.
pub fn summarize(configuration: Configuration, k: usize, records: &[QueryRecord], generations: &[usize]) -> MetricsReport {
    let tries = records.iter().map(|r| r.try_index + 1).max().unwrap_or(0);
    let mut per_try = Vec::with_capacity(tries);
    for t in 0..tries {
        let rs: Vec<&QueryRecord> = records.iter().filter(|r| r.try_index == t).collect();
        let c = OriginCounts::of(rs.iter().copied());
        let ms = makespan(&rs);
        per_try.push(TryAggregate {
            try_index: t,
            queries: rs.len(),
            makespan: ms,
            throughput: rs.len() as f64 / ms,
            mean_latency: mean(rs.iter().map(|r| r.latency())),
            ttft_mean: mean(rs.iter().map(|r| r.ttft())),
            memory_hit_ratio: c.memory as f64 / c.total(),
            disk_hit_ratio: (c.disk + c.generated) as f64 / c.total(),
            miss_ratio: c.miss as f64 / c.total(),
            generations: generations.get(t).copied().unwrap_or(0),
        });
    }
    let c = OriginCounts::of(records);
    let total_makespan: f64 = per_try.iter().map(|t| t.makespan).sum();
    let latencies: Vec<f64> = records.iter().map(|r| r.latency()).collect();
    MetricsReport {
        configuration,
        k,
        queries: records.len(),
        throughput: records.len() as f64 / total_makespan,
        makespan: total_makespan,
        mean_latency: mean(latencies.iter().copied()),
        median_latency: percentile(&latencies, 50.0),
        p95_latency: percentile(&latencies, 95.0),
        ttft_mean: mean(records.iter().map(|r| r.ttft())),
        mean_queue_wait: mean(records.iter().map(|r| r.queue_wait)),
        mean_kv_load: mean(records.iter().map(|r| r.kv_load)),
        mean_prefill: mean(records.iter().map(|r| r.prefill)),
        memory_hit_ratio: c.memory as f64 / c.total(),
        disk_hit_ratio: (c.disk + c.generated) as f64 / c.total(),
        generated_ratio: c.generated as f64 / c.total(),
        miss_ratio: c.miss as f64 / c.total(),
        generations: generations.iter().sum(),
        per_try,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&xs, 50.0), 3.0);
        assert_eq!(percentile(&xs, 95.0), 5.0);
        assert_eq!(percentile(&xs, 0.0), 1.0);
    }
}
