//! Serves a store over TCP and talks to it with the client; then shows
//! concurrent requests for one missing cache collapsing into one
//! generation.
//!
//! cargo run --example cache_server

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ragdcache::codec::{synth_blob, ModelProfile};
use ragdcache::net::{CacheClient, CacheServer};
use ragdcache::service::CacheService;
use ragdcache::store::{KvKey, KvStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let service = Arc::new(CacheService::new(Arc::new(KvStore::open(dir.path(), 64 << 20)?)));
    let server = CacheServer::start("127.0.0.1:0", service.clone())?;
    println!("listening on {}", server.local_addr());

    let profile = ModelProfile::llama_3_2_1b();
    let key = KvKey::new(profile.model_hash(), vec![11, 42]);
    let blob = synth_blob(&profile, &key.doc_ids, 32, 0)?;
    let mut client = CacheClient::connect(server.local_addr())?;
    println!("before put: {:?}", client.contains(&key)?);
    println!("put: {:?}", client.put(&key, &blob)?);
    let got = client.get(&key)?;
    println!(
        "get: {:?}, {} payload bytes, identical {}",
        got.outcome,
        got.blob.as_ref().map_or(0, |b| b.payload.len()),
        got.blob.as_ref() == Some(&blob)
    );

    let missing = KvKey::new(profile.model_hash(), vec![7]);
    let generated = Arc::new(AtomicUsize::new(0));
    let threads: Vec<_> = (0..16)
        .map(|_| {
            let (service, key, generated, profile) = (service.clone(), missing.clone(), generated.clone(), profile.clone());
            std::thread::spawn(move || {
                service
                    .get_or_generate(&key, || {
                        generated.fetch_add(1, Ordering::SeqCst);
                        synth_blob(&profile, &key.doc_ids, 16, 0)
                    })
                    .map(|(_, origin)| origin)
            })
        })
        .collect();
    let origins: Vec<_> = threads.into_iter().map(|t| t.join().unwrap()).collect::<Result<_, _>>()?;
    println!("16 callers, {} generation(s), origins {:?}", generated.load(Ordering::SeqCst), origins);
    println!("server stats: {:?}", client.stats()?);
    server.shutdown();
    Ok(())
}
