//! The KV cache generator: flags queries that have waited past a threshold,
//! resolves their documents early, and fills missing caches through the
//! shared service so duplicate work is free.

use serde::{Deserialize, Serialize};

use crate::codec::KvBlob;
use crate::cost::{DeviceKind, DeviceProfile};
use crate::index::FlatIndex;
use crate::service::{CacheService, Origin};
use crate::store::KvKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Configuration {
    /// Two inference GPUs, no generator.
    Baseline,
    /// One inference GPU, one GPU dedicated to generation.
    A,
    /// Two inference GPUs, generation on the CPU.
    B,
    /// One inference GPU serving batches; caches prepared offline.
    SingleInstance,
}

impl Configuration {
    pub fn prefetch_enabled(self) -> bool {
        matches!(self, Configuration::A | Configuration::B)
    }
}

/// How retrieved documents map to cache keys.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyScheme {
    /// One cache per ordered top-k combination.
    #[default]
    Combination,
    /// One cache per document.
    PerDocument,
}

impl KeyScheme {
    pub fn keys(self, model_hash: u64, doc_ids: &[u64]) -> Vec<KvKey> {
        match self {
            KeyScheme::Combination => vec![KvKey::new(model_hash, doc_ids.to_vec())],
            KeyScheme::PerDocument => doc_ids.iter().map(|&d| KvKey::new(model_hash, vec![d])).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrefetchState {
    #[default]
    None,
    Searching,
    Generating,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub query_id: u64,
    pub arrival_time: f64,
    pub doc_ids: Option<Vec<u64>>,
    pub embedding: Option<Vec<f32>>,
    pub doc_tokens: Vec<u32>,
    pub k: usize,
    pub q_token_count: u32,
    pub flagged: bool,
    pub flag_time: Option<f64>,
    pub prefetch_state: PrefetchState,
}

impl PendingQuery {
    pub fn with_docs(query_id: u64, arrival_time: f64, doc_ids: Vec<u64>, doc_tokens: Vec<u32>, q_tokens: u32) -> Self {
        Self {
            query_id,
            arrival_time,
            k: doc_ids.len(),
            doc_ids: Some(doc_ids),
            embedding: None,
            doc_tokens,
            q_token_count: q_tokens,
            flagged: false,
            flag_time: None,
            prefetch_state: PrefetchState::None,
        }
    }
}

/// Flags every unflagged query that has waited at least `threshold`.
/// Returns the newly flagged ids in queue order.
pub fn scan(queue: &mut [PendingQuery], now: f64, threshold: f64) -> Vec<u64> {
    let mut flagged = Vec::new();
    for q in queue.iter_mut() {
        if !q.flagged && now - q.arrival_time >= threshold {
            q.flagged = true;
            q.flag_time = Some(now);
            flagged.push(q.query_id);
        }
    }
    flagged
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefetchTask {
    pub key: KvKey,
    pub assigned_device: DeviceProfile,
    pub est_work: f64,
}

/// A: the dedicated generator GPU. B: the CPU. Otherwise no device, which
/// disables prefetch.
pub fn assign_device(configuration: Configuration, devices: &[DeviceProfile]) -> Option<DeviceProfile> {
    let kind = match configuration {
        Configuration::A => DeviceKind::GeneratorGpu,
        Configuration::B => DeviceKind::Cpu,
        Configuration::Baseline | Configuration::SingleInstance => return None,
    };
    devices.iter().find(|d| d.kind == kind).cloned()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub doc_ids: Vec<u64>,
    pub generated: usize,
    pub reused: usize,
    pub waited: usize,
    pub failure: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PrefetchError {
    #[error("query {0} has neither doc ids nor an embedding")]
    Unresolvable(u64),
    #[error("query {0} needs an index to resolve its embedding")]
    NoIndex(u64),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
}

/// Resolves the query's documents and makes sure every cache it needs is
/// in the store. Generation failures are best-effort: the state drops back
/// to `None` and the failure is reported, the query stays serviceable.
pub fn prepare<G>(
    query: &mut PendingQuery,
    index: Option<&FlatIndex>,
    service: &CacheService,
    model_hash: u64,
    scheme: KeyScheme,
    mut generate: G,
) -> Result<PrepareReport, PrefetchError>
where
    G: FnMut(&KvKey) -> Result<KvBlob, String>,
{
    if query.doc_ids.is_none() {
        query.prefetch_state = PrefetchState::Searching;
        let emb = query.embedding.as_ref().ok_or(PrefetchError::Unresolvable(query.query_id))?;
        let index = index.ok_or(PrefetchError::NoIndex(query.query_id))?;
        let hits = index.search(emb, query.k)?;
        query.doc_tokens = hits.iter().map(|h| index.token_count(h.doc_id).unwrap_or(0)).collect();
        query.doc_ids = Some(hits.into_iter().map(|h| h.doc_id).collect());
    }
    let doc_ids = query.doc_ids.clone().unwrap_or_default();
    query.prefetch_state = PrefetchState::Generating;
    let mut report = PrepareReport {
        doc_ids: doc_ids.clone(),
        ..Default::default()
    };
    for key in scheme.keys(model_hash, &doc_ids) {
        match service.get_or_generate(&key, || generate(&key)) {
            Ok((_, Origin::Generated)) => report.generated += 1,
            Ok((_, Origin::WaitedOnInFlight)) => report.waited += 1,
            Ok((_, _)) => report.reused += 1,
            Err(e) => {
                report.failure = Some(e.to_string());
                query.prefetch_state = PrefetchState::None;
                return Ok(report);
            }
        }
    }
    query.prefetch_state = PrefetchState::Ready;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: u64, arrival: f64) -> PendingQuery {
        PendingQuery::with_docs(id, arrival, vec![id], vec![10], 4)
    }

    #[test]
    fn scan_examples() {
        let mut queue = vec![q(1, 0.0), q(2, 1.0)];
        assert_eq!(scan(&mut queue, 1.0, 0.0), vec![1, 2]);

        let now = 3.1;
        let mut queue = vec![q(1, now - 0.5), q(2, now - 2.0), q(3, now - 3.1)];
        assert_eq!(scan(&mut queue, now, 2.0), vec![2, 3]);
        assert!(scan(&mut queue, now, 2.0).is_empty());
    }

    #[test]
    fn device_assignment() {
        let devs = vec![
            DeviceProfile::new("gpu0", DeviceKind::InferenceGpu, 1.0),
            DeviceProfile::new("gpu1", DeviceKind::GeneratorGpu, 1.0),
            DeviceProfile::new("cpu", DeviceKind::Cpu, 1.0),
        ];
        assert_eq!(assign_device(Configuration::A, &devs).unwrap().kind, DeviceKind::GeneratorGpu);
        assert_eq!(assign_device(Configuration::B, &devs).unwrap().kind, DeviceKind::Cpu);
        assert!(assign_device(Configuration::Baseline, &devs).is_none());
        assert!(assign_device(Configuration::A, &devs[..1]).is_none());
    }

    #[test]
    fn key_schemes() {
        assert_eq!(KeyScheme::Combination.keys(9, &[3, 1]), vec![KvKey::new(9, vec![3, 1])]);
        assert_eq!(
            KeyScheme::PerDocument.keys(9, &[3, 1]),
            vec![KvKey::new(9, vec![3]), KvKey::new(9, vec![1])]
        );
    }
}
