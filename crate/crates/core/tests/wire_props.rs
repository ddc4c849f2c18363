mod common;

use proptest::prelude::*;

use ragdcache::codec::{synth_blob, KvBlob};
use ragdcache::store::{KvKey, LookupOutcome, Residency, StoreStats};
use ragdcache::wire::{read_frame, write_frame, ErrorCode, Request, Response, WireError};

fn key() -> impl Strategy<Value = KvKey> {
    (any::<u64>(), prop::collection::vec(any::<u64>(), 1..6)).prop_map(|(m, ids)| KvKey::new(m, ids))
}

fn blob() -> impl Strategy<Value = KvBlob> {
    (prop::collection::vec(any::<u64>(), 1..4), 1u32..6, any::<u64>())
        .prop_map(|(ids, t, s)| synth_blob(&common::tiny_profile(), &ids, t, s).unwrap())
}

fn request() -> impl Strategy<Value = Request> {
    prop_oneof![
        key().prop_map(Request::Get),
        blob().prop_map(|b| Request::Put(KvKey::new(b.header.model_hash, b.header.doc_ids.clone()), b)),
        key().prop_map(Request::Contains),
        Just(Request::Stats),
    ]
}

fn response() -> impl Strategy<Value = Response> {
    // A miss is answered with State(Absent), never with a blob.
    let outcome = prop_oneof![Just(LookupOutcome::MemoryHit), Just(LookupOutcome::DiskHit)];
    let residency = prop_oneof![Just(Residency::InMemory), Just(Residency::OnDisk), Just(Residency::Absent)];
    let code = prop_oneof![
        Just(ErrorCode::Absent),
        Just(ErrorCode::Corrupt),
        Just(ErrorCode::Malformed),
        Just(ErrorCode::Oversize),
        Just(ErrorCode::Internal)
    ];
    prop_oneof![
        (outcome, any::<u64>(), blob()).prop_map(|(outcome, load_cost_bytes, blob)| Response::Blob {
            outcome,
            load_cost_bytes,
            blob
        }),
        residency.prop_map(Response::State),
        prop::array::uniform8(any::<u64>()).prop_map(|v| Response::StatsBody(StoreStats {
            memory_hits: v[0],
            disk_hits: v[1],
            misses: v[2],
            evictions: v[3],
            corruptions: v[4],
            memory_bytes_used: v[5],
            memory_capacity_bytes: v[6],
            disk_bytes_used: v[7],
        })),
        (code, ".{0,40}").prop_map(|(code, message)| Response::Error { code, message }),
    ]
}

proptest! {
    #[test]
    fn requests_roundtrip_through_frames(reqs in prop::collection::vec(request(), 1..6)) {
        let mut buf = Vec::new();
        for r in &reqs {
            let (op, body) = r.encode();
            write_frame(&mut buf, op, &body).unwrap();
        }
        let mut cursor = buf.as_slice();
        for r in &reqs {
            let (op, body) = read_frame(&mut cursor, 1 << 20).unwrap().unwrap();
            prop_assert_eq!(&Request::decode(op, &body).unwrap(), r);
        }
        prop_assert!(read_frame(&mut cursor, 1 << 20).unwrap().is_none());
    }

    #[test]
    fn responses_roundtrip(resp in response()) {
        let (op, body) = resp.encode();
        prop_assert_eq!(Response::decode(op, &body).unwrap(), resp);
    }

    #[test]
    fn arbitrary_bodies_never_panic(op in any::<u8>(), body in prop::collection::vec(any::<u8>(), 0..80)) {
        let _ = Request::decode(op, &body);
        let _ = Response::decode(op, &body);
    }

    #[test]
    fn oversize_length_is_refused_before_reading(len in 101u32..u32::MAX) {
        let mut bytes = len.to_be_bytes().to_vec();
        bytes.push(1);
        let is_oversize = matches!(read_frame(&mut bytes.as_slice(), 100), Err(WireError::Oversize(n)) if n == len as usize);
        prop_assert!(is_oversize);
    }
}

#[test]
fn frame_layout_is_big_endian_length_then_opcode() {
    let mut buf = Vec::new();
    write_frame(&mut buf, 0x04, &[]).unwrap();
    assert_eq!(buf, vec![0, 0, 0, 1, 0x04]);
    let (op, body) = Request::Stats.encode();
    assert_eq!((op, body.len()), (0x04, 0));
}

#[test]
fn zero_length_and_unknown_opcode_are_malformed() {
    assert!(matches!(read_frame(&mut [0u8, 0, 0, 0].as_slice(), 100), Err(WireError::Malformed(_))));
    assert!(matches!(Request::decode(0x7e, &[]), Err(WireError::Malformed(_))));
}
