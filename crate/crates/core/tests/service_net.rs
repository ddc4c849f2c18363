mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::time::Duration;

use ragdcache::codec::{encode, synth_blob};
use ragdcache::net::{CacheClient, CacheServer, ClientError};
use ragdcache::service::{CacheService, Origin, ServiceError};
use ragdcache::store::{KvKey, KvStore, LookupOutcome, Residency};
use ragdcache::wire::{ErrorCode, Request, Response};

use common::tiny_profile;

fn server(memory: u64) -> (tempfile::TempDir, Arc<KvStore>, CacheServer) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(KvStore::open(dir.path(), memory).unwrap());
    let server = CacheServer::start("127.0.0.1:0", Arc::new(CacheService::new(store.clone()))).unwrap();
    (dir, store, server)
}

#[test]
fn concurrent_misses_generate_once() {
    let dir = tempfile::tempdir().unwrap();
    let service = Arc::new(CacheService::new(Arc::new(KvStore::open(dir.path(), 1 << 20).unwrap())));
    let key = KvKey::new(tiny_profile().model_hash(), vec![1, 2]);
    let calls = Arc::new(AtomicUsize::new(0));
    let barrier = Arc::new(Barrier::new(12));
    let handles: Vec<_> = (0..12)
        .map(|_| {
            let (service, key, calls, barrier) = (service.clone(), key.clone(), calls.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                service
                    .get_or_generate(&key, || {
                        calls.fetch_add(1, Ordering::SeqCst);
                        std::thread::sleep(Duration::from_millis(5));
                        synth_blob(&tiny_profile(), &key.doc_ids, 4, 0)
                    })
                    .unwrap()
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(calls.load(Ordering::SeqCst), 1);
    assert_eq!(results.iter().filter(|r| r.1 == Origin::Generated).count(), 1);
    assert!(results.iter().all(|r| r.0 == results[0].0));
    let (_, origin) = service.get_or_generate(&key, || Err::<_, String>("unused".into())).unwrap();
    assert_eq!(origin, Origin::MemoryHit);
}

#[test]
fn failed_generation_reaches_caller_and_allows_retry() {
    let dir = tempfile::tempdir().unwrap();
    let service = CacheService::new(Arc::new(KvStore::open(dir.path(), 1 << 20).unwrap()));
    let key = KvKey::new(tiny_profile().model_hash(), vec![5]);
    let err = service.get_or_generate(&key, || Err::<ragdcache::codec::KvBlob, _>("gpu fell over")).unwrap_err();
    assert!(matches!(err, ServiceError::GenerationFailed { .. }));
    assert!(!service.is_in_flight(&key));
    let (_, origin) = service
        .get_or_generate(&key, || synth_blob(&tiny_profile(), &key.doc_ids, 4, 0))
        .unwrap();
    assert_eq!(origin, Origin::Generated);
}

#[test]
fn large_blob_roundtrips_over_loopback() {
    let (_dir, _store, server) = server(0);
    let mut client = CacheClient::connect(server.local_addr()).unwrap();
    // 64 bytes per token for the tiny profile.
    let blob = synth_blob(&tiny_profile(), &[1, 2, 3], 1024, 7).unwrap();
    assert_eq!(blob.payload.len(), 64 * 1024);
    let key = KvKey::for_blob(&blob);
    assert_eq!(client.get(&key).unwrap().outcome, LookupOutcome::Miss);
    assert_eq!(client.put(&key, &blob).unwrap(), Residency::OnDisk);
    let got = client.get(&key).unwrap();
    assert_eq!(got.outcome, LookupOutcome::DiskHit);
    let back = got.blob.unwrap();
    assert_eq!(back.header.checksum, blob.header.checksum);
    assert_eq!(encode(&back), encode(&blob));
    assert_eq!(got.load_cost_bytes, blob.encoded_len());
}

#[test]
fn malformed_frame_keeps_the_connection() {
    let (_dir, _store, server) = server(1 << 20);
    let mut client = CacheClient::connect(server.local_addr()).unwrap();
    client.send_raw(&[0, 0, 0, 3, 0x01, 0xde, 0xad]).unwrap();
    match client.read_response().unwrap() {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::Malformed),
        other => panic!("{other:?}"),
    }
    assert!(matches!(client.call(&Request::Stats).unwrap(), Response::StatsBody(_)));
}

#[test]
fn oversize_frame_is_refused_and_closed() {
    let (_dir, _store, server) = server(1 << 20);
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(&(300u32 << 20).to_be_bytes()).unwrap();
    s.write_all(&[0x02]).unwrap();
    let mut reply = Vec::new();
    s.read_to_end(&mut reply).unwrap();
    let (op, body) = ragdcache::wire::read_frame(&mut reply.as_slice(), 1 << 20).unwrap().unwrap();
    match Response::decode(op, &body).unwrap() {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::Oversize),
        other => panic!("{other:?}"),
    }
    // Server still accepts new connections.
    assert!(CacheClient::connect(server.local_addr()).unwrap().stats().is_ok());
}

#[test]
fn corrupt_file_is_reported_as_corrupt() {
    let (_dir, store, server) = server(0);
    let mut client = CacheClient::connect(server.local_addr()).unwrap();
    let blob = synth_blob(&tiny_profile(), &[9], 16, 0).unwrap();
    let key = KvKey::for_blob(&blob);
    client.put(&key, &blob).unwrap();
    let path = store.path_for(&key);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    match client.get(&key) {
        Err(ClientError::Remote { code, .. }) => assert_eq!(code, ErrorCode::Corrupt),
        other => panic!("{other:?}"),
    }
    assert_eq!(client.stats().unwrap().corruptions, 1);
}
