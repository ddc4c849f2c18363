//! Builds a flat inner-product index from a JSONL chunk file, saves it,
//! reloads it and runs a query.
//!
//! cargo run --example build_index

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ragdcache::index::{build_index, read_chunks_jsonl, DocChunk, FlatIndex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let chunks_path = dir.path().join("chunks.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lines = String::new();
    for doc_id in 0..200u64 {
        let chunk = DocChunk {
            doc_id,
            text: format!("passage {doc_id}"),
            token_count: rng.random_range(80..160),
            embedding: (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        lines.push_str(&serde_json::to_string(&chunk)?);
        lines.push('\n');
    }
    std::fs::write(&chunks_path, lines)?;

    let index = build_index(read_chunks_jsonl(&chunks_path)?)?;
    let index_path = dir.path().join("index.bin");
    index.save(&index_path)?;
    let index = FlatIndex::load(&index_path)?;
    println!("{} chunks, dimension {}", index.len(), index.dim());

    let query: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    for hit in index.search(&query, 5)? {
        println!(
            "doc {:>3}  score {:+.4}  tokens {:>3}  {:?}",
            hit.doc_id,
            hit.score,
            index.token_count(hit.doc_id).unwrap(),
            index.text(hit.doc_id).unwrap()
        );
    }
    Ok(())
}
