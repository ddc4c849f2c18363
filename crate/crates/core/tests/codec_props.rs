mod common;

use proptest::prelude::*;

use ragdcache::codec::{blob_size, decode, decode_header, encode, synth_blob, CodecError, ModelProfile};

fn profile() -> impl Strategy<Value = ModelProfile> {
    (1u16..=4, 1u16..=4, 1u16..=8, prop_oneof![Just(2u8), Just(4u8)])
        .prop_map(|(l, h, d, ew)| ModelProfile::new("p", l, h, d, ew).unwrap())
}

proptest! {
    #[test]
    fn roundtrip_is_exact(p in profile(), ids in prop::collection::vec(any::<u64>(), 1..5), tokens in 1u32..24, seed in any::<u64>()) {
        let blob = synth_blob(&p, &ids, tokens, seed).unwrap();
        let bytes = encode(&blob);
        prop_assert_eq!(bytes.len() as u64, blob.encoded_len());
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &blob);
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn payload_size_matches_formula(p in profile(), tokens in 1u32..64) {
        let expected = 2 * p.layers as u64 * p.kv_heads as u64 * p.head_dim as u64 * tokens as u64 * p.elem_width as u64;
        prop_assert_eq!(blob_size(&p, tokens as u64), expected);
        prop_assert_eq!(synth_blob(&p, &[1], tokens, 0).unwrap().payload.len() as u64, expected);
    }

    #[test]
    fn payload_bit_flip_is_a_checksum_error(p in profile(), tokens in 1u32..16, at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let blob = synth_blob(&p, &[3, 4], tokens, 9).unwrap();
        let mut bytes = encode(&blob);
        let hdr = bytes.len() - blob.payload.len();
        let i = hdr + at.index(blob.payload.len());
        bytes[i] ^= 1 << bit;
        let is_mismatch = matches!(decode(&bytes), Err(CodecError::ChecksumMismatch { .. }));
        prop_assert!(is_mismatch);
    }

    #[test]
    fn any_strict_prefix_is_rejected(tokens in 1u32..8, cut in any::<prop::sample::Index>()) {
        let blob = synth_blob(&common::tiny_profile(), &[1], tokens, 0).unwrap();
        let bytes = encode(&blob);
        let n = cut.index(bytes.len());
        prop_assert!(decode(&bytes[..n]).is_err());
    }

    #[test]
    fn header_prefix_parses_alone(tokens in 1u32..8) {
        let blob = synth_blob(&common::tiny_profile(), &[1, 2, 3], tokens, 0).unwrap();
        let bytes = encode(&blob);
        let hdr = bytes.len() - blob.payload.len();
        prop_assert_eq!(decode_header(&bytes[..hdr]).unwrap(), blob.header);
    }
}

#[test]
fn seeds_change_the_checksum() {
    let p = common::tiny_profile();
    let a = synth_blob(&p, &[1], 8, 1).unwrap();
    let b = synth_blob(&p, &[1], 8, 2).unwrap();
    assert_eq!(a, synth_blob(&p, &[1], 8, 1).unwrap());
    assert_ne!(a.header.checksum, b.header.checksum);
}

#[test]
fn distinct_errors_per_failure_kind() {
    let blob = synth_blob(&common::tiny_profile(), &[1], 2, 0).unwrap();
    let good = encode(&blob);
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(decode(&magic), Err(CodecError::BadMagic(_))));
    let mut version = good.clone();
    version[4] = 9;
    assert!(matches!(decode(&version), Err(CodecError::UnsupportedVersion(9))));
    assert!(matches!(decode(&good[..good.len() - 1]), Err(CodecError::Truncated { .. })));
}
