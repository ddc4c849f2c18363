use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{summarize, DocOrigin, MetricsReport, QueryRecord};
use super::{arrival_times, prepare_queries, try_seed, SimCache, SimConfig, SimError, SimQuery};
use crate::codec::synth_blob;
use crate::cost::{cached_prefill_work, load_time, prefill_work, Tier};
use crate::prefetch::Configuration;
use crate::store::{KvKey, KvStore, LookupOutcome, Residency};
use crate::workload::WorkItem;

/// Source of cache loads for the single-instance run.
trait Loader {
    /// Tier and load seconds, or `None` on a miss.
    fn load(&mut self, key: &KvKey, bytes: u64) -> Result<Option<(Tier, f64)>, SimError>;
}

struct ModeledLoader<'a> {
    cache: SimCache,
    config: &'a SimConfig,
}

impl Loader for ModeledLoader<'_> {
    fn load(&mut self, key: &KvKey, bytes: u64) -> Result<Option<(Tier, f64)>, SimError> {
        Ok(self
            .cache
            .lookup(key, bytes)
            .map(|tier| (tier, load_time(bytes, tier, &self.config.cost))))
    }
}

struct RealLoader<'a> {
    store: &'a KvStore,
}

impl Loader for RealLoader<'_> {
    fn load(&mut self, key: &KvKey, _bytes: u64) -> Result<Option<(Tier, f64)>, SimError> {
        let start = Instant::now();
        let r = self.store.get(key).map_err(|e| SimError::Store(e.to_string()))?;
        let secs = start.elapsed().as_secs_f64();
        Ok(match r.outcome {
            LookupOutcome::MemoryHit => Some((Tier::Memory, secs)),
            LookupOutcome::DiskHit => Some((Tier::Disk, secs)),
            LookupOutcome::Miss => None,
        })
    }
}

struct NoCache;

impl Loader for NoCache {
    fn load(&mut self, _: &KvKey, _: u64) -> Result<Option<(Tier, f64)>, SimError> {
        Ok(None)
    }
}

fn check_topology(config: &SimConfig) -> Result<(), SimError> {
    config.validate()?;
    if config.configuration != Configuration::SingleInstance {
        return Err(SimError::Topology("single-instance run needs the SingleInstance topology".into()));
    }
    Ok(())
}

/// One inference GPU serving batches of up to `batch_size` queued queries.
/// With `cache_enabled` every document cache is prepared offline first
/// (disk plus the memory tier up to its capacity) and loaded at dispatch.
pub fn run_single_instance(config: &SimConfig, workload: &[WorkItem]) -> Result<(MetricsReport, Vec<QueryRecord>), SimError> {
    check_topology(config)?;
    let queries = prepare_queries(config, workload)?;
    if !config.cache_enabled {
        return drive(config, &queries, &mut NoCache);
    }
    let mut cache = SimCache::new(config.memory_capacity_bytes);
    for q in &queries {
        for (key, toks) in &q.keys {
            cache.insert(key.clone(), config.cost.kv_bytes(*toks));
        }
    }
    drive(config, &queries, &mut ModeledLoader { cache, config })
}

/// As [`run_single_instance`], but caches are written to and read from a
/// real [`KvStore`] and load times are measured wall-clock. Compute stays
/// modeled, so records are not reproducible bit for bit.
pub fn run_single_instance_real_io(
    config: &SimConfig,
    workload: &[WorkItem],
    store: &KvStore,
) -> Result<(MetricsReport, Vec<QueryRecord>), SimError> {
    check_topology(config)?;
    let queries = prepare_queries(config, workload)?;
    if !config.cache_enabled {
        return drive(config, &queries, &mut NoCache);
    }
    for q in &queries {
        for (key, toks) in &q.keys {
            if store.contains(key) == Residency::Absent {
                let blob = synth_blob(&config.cost.model, &key.doc_ids, *toks as u32, config.seed)
                    .map_err(|e| SimError::Store(e.to_string()))?;
                store.put(key, blob).map_err(|e| SimError::Store(e.to_string()))?;
            }
        }
    }
    drive(config, &queries, &mut RealLoader { store })
}

fn drive(config: &SimConfig, queries: &[SimQuery], loader: &mut dyn Loader) -> Result<(MetricsReport, Vec<QueryRecord>), SimError> {
    let arrivals = arrival_times(&config.arrival, queries.len(), config.seed);
    let mut records = Vec::with_capacity(queries.len() * config.tries);
    for t in 0..config.tries {
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(try_seed(config.seed, t)));
        let batch: Vec<&SimQuery> = order.iter().map(|&i| &queries[i]).collect();
        records.extend(run_try(config, &batch, &arrivals, loader, t)?);
    }
    let generations = vec![0; config.tries];
    Ok((summarize(config.configuration, config.k, &records, &generations), records))
}

/// A single server over a FIFO queue: when free, it takes every queued
/// query up to the batch size (at least the head, waiting for it if needed).
fn run_try(
    config: &SimConfig,
    queries: &[&SimQuery],
    arrivals: &[f64],
    loader: &mut dyn Loader,
    try_index: usize,
) -> Result<Vec<QueryRecord>, SimError> {
    let cost = &config.cost;
    let dev = &config.instance_devices()?[0];
    let (l, d) = (cost.model.layers as u64, cost.model.hidden_dim as u64);
    let mut records = Vec::with_capacity(queries.len());
    let mut free_at = 0.0f64;
    let mut next = 0;
    while next < queries.len() {
        let dispatch = free_at.max(arrivals[next]);
        let mut end = next + 1;
        while end < queries.len() && end - next < config.batch_size && arrivals[end] <= dispatch {
            end += 1;
        }
        let mut members = Vec::with_capacity(end - next);
        let (mut load_sum, mut prefill_sum, mut full_sum) = (0.0, 0.0, 0.0);
        for q in &queries[next..end] {
            let (mut cached, mut raw) = (0u64, 0u64);
            let mut origins = Vec::with_capacity(q.keys.len());
            for (key, toks) in &q.keys {
                match loader.load(key, cost.kv_bytes(*toks))? {
                    Some((tier, secs)) => {
                        load_sum += secs;
                        cached += toks;
                        origins.push(match tier {
                            Tier::Memory => DocOrigin::MemoryHit,
                            Tier::Disk => DocOrigin::DiskHit,
                        });
                    }
                    None => {
                        raw += toks;
                        origins.push(DocOrigin::MissRaw);
                    }
                }
            }
            prefill_sum += dev.seconds(cached_prefill_work(l, d, q.q_tokens + raw, cached));
            full_sum += dev.seconds(prefill_work(l, d, q.q_tokens + q.doc_tokens.iter().sum::<u64>()));
            members.push(origins);
        }
        let first_token = dispatch + load_sum + prefill_sum + cost.network_delay;
        let busy = load_sum + prefill_sum + cost.decode_time();
        for (offset, origins) in members.into_iter().enumerate() {
            let i = next + offset;
            records.push(QueryRecord {
                query_id: queries[i].query_id,
                try_index,
                instance: 0,
                arrival: arrivals[i],
                dispatch,
                first_token,
                completion: dispatch + busy + cost.network_delay,
                queue_wait: dispatch - arrivals[i],
                kv_load: load_sum,
                prefill: prefill_sum,
                network: cost.network_delay,
                full_prefill: full_sum,
                origins,
            });
        }
        free_at = dispatch + busy;
        next = end;
    }
    Ok(records)
}
