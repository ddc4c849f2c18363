use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{summarize, DocOrigin, MetricsReport, QueryRecord};
use super::{
    arrival_times, prepare_queries, try_seed, EventClass, EventQueue, SimCache, SimConfig, SimError, SimQuery,
};
use crate::cost::{cached_prefill_work, generation_time, load_time, prefill_work, DeviceProfile, Tier};
use crate::prefetch::{assign_device, Configuration};
use crate::store::KvKey;
use crate::workload::WorkItem;

#[derive(Debug, Clone)]
enum Ev {
    Arrival(usize),
    FlagCheck(usize),
    InstanceDone { instance: usize, puts: Vec<usize>, query: usize },
    GenDone { query: usize, key: usize },
}

/// Runs every try of the workload through the configured topology.
/// Tries share cache state; each replays the same arrival gaps over a
/// freshly shuffled query order.
pub fn run(config: &SimConfig, workload: &[WorkItem]) -> Result<(MetricsReport, Vec<QueryRecord>), SimError> {
    if config.configuration == Configuration::SingleInstance {
        return super::run_single_instance(config, workload);
    }
    config.validate()?;
    let queries = prepare_queries(config, workload)?;
    let instances = config.instance_devices()?;
    let generator = assign_device(config.configuration, &config.devices);
    let arrivals = arrival_times(&config.arrival, queries.len(), config.seed);
    let mut cache = SimCache::new(config.memory_capacity_bytes);
    let mut records = Vec::with_capacity(queries.len() * config.tries);
    let mut generations = Vec::with_capacity(config.tries);
    for t in 0..config.tries {
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(try_seed(config.seed, t)));
        let batch: Vec<&SimQuery> = order.iter().map(|&i| &queries[i]).collect();
        let mut tr = TryRun::new(config, &instances, generator.as_ref(), &batch, &arrivals, &mut cache, t);
        tr.execute();
        generations.push(tr.generations);
        records.extend(tr.records.into_iter().map(|r| r.expect("every query dispatched")));
    }
    Ok((summarize(config.configuration, config.k, &records, &generations), records))
}

struct TryRun<'a> {
    config: &'a SimConfig,
    instances: &'a [DeviceProfile],
    generator: Option<&'a DeviceProfile>,
    queries: &'a [&'a SimQuery],
    arrivals: &'a [f64],
    cache: &'a mut SimCache,
    try_index: usize,
    cache_on: bool,
    events: EventQueue<Ev>,
    queue: VecDeque<usize>,
    idle: BTreeSet<usize>,
    dispatched: Vec<bool>,
    prepared: Vec<Vec<bool>>,
    gen_fifo: VecDeque<(usize, usize)>,
    gen_busy: u32,
    in_flight: HashSet<KvKey>,
    records: Vec<Option<QueryRecord>>,
    generations: usize,
}

impl<'a> TryRun<'a> {
    fn new(
        config: &'a SimConfig,
        instances: &'a [DeviceProfile],
        generator: Option<&'a DeviceProfile>,
        queries: &'a [&'a SimQuery],
        arrivals: &'a [f64],
        cache: &'a mut SimCache,
        try_index: usize,
    ) -> Self {
        let n = queries.len();
        Self {
            config,
            instances,
            generator,
            queries,
            arrivals,
            cache,
            try_index,
            cache_on: config.configuration != Configuration::Baseline,
            events: EventQueue::new(),
            queue: VecDeque::new(),
            idle: (0..instances.len()).collect(),
            dispatched: vec![false; n],
            prepared: queries.iter().map(|q| vec![false; q.keys.len()]).collect(),
            gen_fifo: VecDeque::new(),
            gen_busy: 0,
            in_flight: HashSet::new(),
            records: vec![None; n],
            generations: 0,
        }
    }

    fn execute(&mut self) {
        for i in 0..self.queries.len() {
            self.events.push(self.arrivals[i], EventClass::Arrival, Ev::Arrival(i));
        }
        while let Some(ev) = self.events.pop() {
            let now = ev.time;
            match ev.payload {
                Ev::Arrival(i) => {
                    self.queue.push_back(i);
                    if self.generator.is_some() {
                        self.events.push(now + self.config.threshold, EventClass::FlagCheck, Ev::FlagCheck(i));
                    }
                    self.dispatch(now);
                }
                Ev::FlagCheck(i) => {
                    if !self.dispatched[i] {
                        for j in 0..self.queries[i].keys.len() {
                            self.gen_fifo.push_back((i, j));
                        }
                        self.start_generation(now);
                    }
                }
                Ev::InstanceDone { instance, puts, query } => {
                    let q = self.queries[query];
                    for j in puts {
                        let (key, toks) = &q.keys[j];
                        self.cache.insert(key.clone(), self.config.cost.kv_bytes(*toks));
                    }
                    self.idle.insert(instance);
                    self.dispatch(now);
                }
                Ev::GenDone { query, key } => {
                    let (k, toks) = &self.queries[query].keys[key];
                    self.cache.insert(k.clone(), self.config.cost.kv_bytes(*toks));
                    self.in_flight.remove(k);
                    self.prepared[query][key] = true;
                    self.gen_busy -= 1;
                    self.generations += 1;
                    self.start_generation(now);
                }
            }
        }
    }

    /// FIFO by flag time. Tasks whose query already left the queue, whose
    /// cache exists, or whose key is being generated are dropped.
    fn start_generation(&mut self, now: f64) {
        let Some(dev) = self.generator else { return };
        while self.gen_busy < dev.concurrency {
            let Some((i, j)) = self.gen_fifo.pop_front() else { return };
            if self.dispatched[i] {
                continue;
            }
            let (key, toks) = &self.queries[i].keys[j];
            if self.cache.contains(key) || self.in_flight.contains(key) {
                continue;
            }
            self.in_flight.insert(key.clone());
            self.gen_busy += 1;
            let dt = generation_time(&self.config.cost, dev, *toks);
            self.events.push(now + dt, EventClass::GenDone, Ev::GenDone { query: i, key: j });
        }
    }

    fn dispatch(&mut self, now: f64) {
        while !self.queue.is_empty() {
            let Some(instance) = self.idle.pop_first() else { return };
            let i = self.queue.pop_front().expect("non-empty");
            self.dispatched[i] = true;
            let q = self.queries[i];
            let dev = &self.instances[instance];
            let cost = &self.config.cost;
            let (l, d) = (cost.model.layers as u64, cost.model.hidden_dim as u64);

            let mut kv_load = 0.0;
            let (mut cached, mut raw) = (0u64, 0u64);
            let mut origins = Vec::with_capacity(q.keys.len());
            let mut puts = Vec::new();
            for (j, (key, toks)) in q.keys.iter().enumerate() {
                let bytes = cost.kv_bytes(*toks);
                let tier = if self.cache_on { self.cache.lookup(key, bytes) } else { None };
                match tier {
                    Some(tier) => {
                        kv_load += load_time(bytes, tier, cost);
                        cached += toks;
                        origins.push(match (tier, self.prepared[i][j]) {
                            (_, true) => DocOrigin::Generated,
                            (Tier::Memory, false) => DocOrigin::MemoryHit,
                            (Tier::Disk, false) => DocOrigin::DiskHit,
                        });
                    }
                    None => {
                        raw += toks;
                        origins.push(DocOrigin::MissRaw);
                        if self.cache_on && self.config.store_on_miss {
                            puts.push(j);
                        }
                    }
                }
            }
            let n_new = q.q_tokens + raw;
            let prefill = dev.seconds(cached_prefill_work(l, d, n_new, cached));
            let full = dev.seconds(prefill_work(l, d, q.q_tokens + q.doc_tokens.iter().sum::<u64>()));
            let busy_until = now + kv_load + prefill;
            let first_token = busy_until + cost.network_delay;
            self.records[i] = Some(QueryRecord {
                query_id: q.query_id,
                try_index: self.try_index,
                instance,
                arrival: self.arrivals[i],
                dispatch: now,
                first_token,
                completion: first_token,
                queue_wait: now - self.arrivals[i],
                kv_load,
                prefill,
                network: cost.network_delay,
                full_prefill: full,
                origins,
            });
            self.events.push(busy_until, EventClass::InstanceDone, Ev::InstanceDone { instance, puts, query: i });
        }
    }
}
