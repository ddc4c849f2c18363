//! The retrieval path of one instance: resolve each query's documents with
//! the index, then make sure the combination cache exists, generating it
//! once and reusing it for later queries.
//!
//! cargo run --example rag_pipeline

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ragdcache::codec::{synth_blob, ModelProfile};
use ragdcache::index::{DocChunk, FlatIndex};
use ragdcache::prefetch::{prepare, KeyScheme, PendingQuery, PrefetchState};
use ragdcache::service::CacheService;
use ragdcache::store::KvStore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut index = FlatIndex::new(8);
    for doc_id in 0..50 {
        index.add(DocChunk {
            doc_id,
            text: String::new(),
            token_count: 64,
            embedding: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })?;
    }
    let dir = tempfile::tempdir()?;
    let service = CacheService::new(Arc::new(KvStore::open(dir.path(), 32 << 20)?));
    let profile = ModelProfile::llama_3_2_1b();

    // A few distinct query embeddings, each asked several times.
    let topics: Vec<Vec<f32>> = (0..4).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let (mut generated, mut reused) = (0, 0);
    for query_id in 0..20u64 {
        let mut q = PendingQuery::with_docs(query_id, 0.0, vec![], vec![], 16);
        q.doc_ids = None;
        q.k = 2;
        q.embedding = Some(topics[rng.random_range(0..topics.len())].clone());
        let report = prepare(&mut q, Some(&index), &service, profile.model_hash(), KeyScheme::Combination, |key| {
            let tokens = 64 * key.doc_ids.len() as u32;
            synth_blob(&profile, &key.doc_ids, tokens, 0).map_err(|e| e.to_string())
        })?;
        assert_eq!(q.prefetch_state, PrefetchState::Ready);
        generated += report.generated;
        reused += report.reused;
        println!("query {query_id:>2} docs {:?}: generated {}, reused {}", report.doc_ids, report.generated, report.reused);
    }
    println!("{generated} caches generated, {reused} reused");
    Ok(())
}
