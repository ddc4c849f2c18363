//! Precomputes per-document caches into a disk store, then reads them back
//! through the memory tier.
//!
//! cargo run --example precompute_store

use ragdcache::cli::precompute_chunks;
use ragdcache::codec::{blob_size, ModelProfile};
use ragdcache::index::DocChunk;
use ragdcache::store::{KvKey, KvStore, LookupOutcome};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let profile = ModelProfile::opt_1_3b();
    let chunks: Vec<DocChunk> = (0..20)
        .map(|doc_id| DocChunk {
            doc_id,
            text: String::new(),
            token_count: 8,
            embedding: vec![0.0],
        })
        .collect();

    // Room for five caches in memory; the rest stay on disk only.
    let per_blob = blob_size(&profile, 8);
    let store = KvStore::open(dir.path(), 5 * (per_blob + 256))?;
    let first = precompute_chunks(&chunks, &profile, &store, 0);
    let again = precompute_chunks(&chunks, &profile, &store, 0);
    println!("{} bytes per cache; first pass {first:?}", per_blob);
    println!("second pass writes {}, skips {}", again.written, again.skipped);

    let reopened = KvStore::open(dir.path(), 5 * (per_blob + 256))?;
    let mut counts = [0usize; 3];
    for round in 0..2 {
        for doc in 0..4 {
            let r = reopened.get(&KvKey::new(profile.model_hash(), vec![doc]))?;
            counts[match r.outcome {
                LookupOutcome::MemoryHit => 0,
                LookupOutcome::DiskHit => 1,
                LookupOutcome::Miss => 2,
            }] += 1;
            if round == 0 && doc == 0 {
                println!("cold read of doc 0 loaded {} bytes from disk", r.load_cost_bytes);
            }
        }
    }
    println!("memory hits {}, disk hits {}, misses {}", counts[0], counts[1], counts[2]);
    println!("{:?}", reopened.stats());
    Ok(())
}
