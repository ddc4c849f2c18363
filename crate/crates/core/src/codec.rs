//! Binary format for KV-cache blobs.
//!
//! A blob holds the key/value tensors produced by prefilling one ordered
//! combination of document chunks. Payload bytes are synthetic: they have
//! the size a real cache would have but are never interpreted numerically.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic(4) "RDKV" | version(2) | model_hash(8) | doc_count(2) | doc_ids(8*n)
//! | token_count(4) | layers(2) | kv_heads(2) | head_dim(2) | elem_width(1)
//! | reserved(3) | payload_len(8) | checksum(8) | payload
//! ```

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"RDKV";
pub const FORMAT_VERSION: u16 = 1;

/// Bytes in the fixed part of the header, excluding the doc id list.
const FIXED_HEADER_LEN: usize = 4 + 2 + 8 + 2 + 4 + 2 + 2 + 2 + 1 + 3 + 8 + 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

fn fnv1a64_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// FNV-1a over the little-endian encoding of an id list.
pub fn hash_doc_ids(doc_ids: &[u64]) -> u64 {
    doc_ids
        .iter()
        .fold(FNV_OFFSET, |h, id| fnv1a64_extend(h, &id.to_le_bytes()))
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: header {expected:016x}, payload {actual:016x}")]
    ChecksumMismatch { expected: u64, actual: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("invalid model profile: {0}")]
    InvalidProfile(String),
}

/// Transformer dimensions that determine KV-cache size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub layers: u16,
    pub hidden_dim: u32,
    pub kv_heads: u16,
    pub head_dim: u16,
    /// Bytes per stored element, 2 (half precision) or 4.
    #[serde(default = "default_elem_width")]
    pub elem_width: u8,
}

fn default_elem_width() -> u8 {
    2
}

impl ModelProfile {
    pub fn new(
        model_id: impl Into<String>,
        layers: u16,
        kv_heads: u16,
        head_dim: u16,
        elem_width: u8,
    ) -> Result<Self, CodecError> {
        let profile = Self {
            model_id: model_id.into(),
            layers,
            hidden_dim: u32::from(kv_heads) * u32::from(head_dim),
            kv_heads,
            head_dim,
            elem_width,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.layers == 0 || self.kv_heads == 0 || self.head_dim == 0 || self.hidden_dim == 0 {
            return Err(CodecError::InvalidProfile(format!(
                "{}: all dimensions must be positive",
                self.model_id
            )));
        }
        if u32::from(self.kv_heads) * u32::from(self.head_dim) != self.hidden_dim {
            return Err(CodecError::InvalidProfile(format!(
                "{}: kv_heads * head_dim = {} but hidden_dim = {}",
                self.model_id,
                u32::from(self.kv_heads) * u32::from(self.head_dim),
                self.hidden_dim
            )));
        }
        if !matches!(self.elem_width, 2 | 4) {
            return Err(CodecError::InvalidProfile(format!(
                "{}: elem_width must be 2 or 4, got {}",
                self.model_id, self.elem_width
            )));
        }
        Ok(())
    }

    /// Stable identifier of the profile, stored in every blob header.
    pub fn model_hash(&self) -> u64 {
        let mut h = fnv1a64(self.model_id.as_bytes());
        h = fnv1a64_extend(h, &self.layers.to_le_bytes());
        h = fnv1a64_extend(h, &self.hidden_dim.to_le_bytes());
        h = fnv1a64_extend(h, &self.kv_heads.to_le_bytes());
        h = fnv1a64_extend(h, &self.head_dim.to_le_bytes());
        fnv1a64_extend(h, &[self.elem_width])
    }

    /// Keys plus values for one token across all layers.
    pub fn bytes_per_token(&self) -> u64 {
        2 * u64::from(self.layers)
            * u64::from(self.kv_heads)
            * u64::from(self.head_dim)
            * u64::from(self.elem_width)
    }

    // Built-in profiles. Dimensions follow the public model cards; kv_heads
    // counts full attention heads so that kv_heads * head_dim == hidden_dim.

    pub fn opt_1_3b() -> Self {
        Self::new("opt-1.3b", 24, 32, 64, 2).expect("valid builtin")
    }

    pub fn opt_2_7b() -> Self {
        Self::new("opt-2.7b", 32, 32, 80, 2).expect("valid builtin")
    }

    pub fn opt_6_7b() -> Self {
        Self::new("opt-6.7b", 32, 32, 128, 2).expect("valid builtin")
    }

    pub fn llama_3_2_1b() -> Self {
        Self::new("llama-3.2-1b", 16, 32, 64, 2).expect("valid builtin")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "opt-1.3b" => Some(Self::opt_1_3b()),
            "opt-2.7b" => Some(Self::opt_2_7b()),
            "opt-6.7b" => Some(Self::opt_6_7b()),
            "llama-3.2-1b" => Some(Self::llama_3_2_1b()),
            _ => None,
        }
    }

    pub const BUILTIN_NAMES: [&'static str; 4] = ["opt-1.3b", "opt-2.7b", "opt-6.7b", "llama-3.2-1b"];
}

/// Payload bytes for `token_count` tokens: 2 * L * H * d_h * N * elem_width.
pub fn blob_size(profile: &ModelProfile, token_count: u64) -> u64 {
    profile.bytes_per_token() * token_count
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvBlobHeader {
    pub version: u16,
    pub model_hash: u64,
    pub doc_ids: Vec<u64>,
    pub token_count: u32,
    pub layers: u16,
    pub kv_heads: u16,
    pub head_dim: u16,
    pub elem_width: u8,
    pub payload_len: u64,
    pub checksum: u64,
}

impl KvBlobHeader {
    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER_LEN + 8 * self.doc_ids.len()
    }

    fn expected_payload_len(&self) -> u64 {
        2 * u64::from(self.layers)
            * u64::from(self.kv_heads)
            * u64::from(self.head_dim)
            * u64::from(self.token_count)
            * u64::from(self.elem_width)
    }

    fn validate(&self) -> Result<(), CodecError> {
        if self.doc_ids.is_empty() {
            return Err(CodecError::InvalidHeader("empty doc_ids".into()));
        }
        if self.doc_ids.len() > usize::from(u16::MAX) {
            return Err(CodecError::InvalidHeader("too many doc_ids".into()));
        }
        if self.token_count == 0 {
            return Err(CodecError::InvalidHeader("token_count is zero".into()));
        }
        if self.payload_len != self.expected_payload_len() {
            return Err(CodecError::InvalidHeader(format!(
                "payload_len {} does not match dimensions ({} expected)",
                self.payload_len,
                self.expected_payload_len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvBlob {
    pub header: KvBlobHeader,
    pub payload: Vec<u8>,
}

impl KvBlob {
    /// Size of the encoded form; this is what the store accounts against capacity.
    pub fn encoded_len(&self) -> u64 {
        (self.header.encoded_len() + self.payload.len()) as u64
    }

    pub fn checksum(&self) -> u64 {
        self.header.checksum
    }
}

/// Deterministic stand-in for the output of prefilling `doc_ids`.
pub fn synth_blob(
    profile: &ModelProfile,
    doc_ids: &[u64],
    token_count: u32,
    seed: u64,
) -> Result<KvBlob, CodecError> {
    profile.validate()?;
    if doc_ids.is_empty() {
        return Err(CodecError::InvalidHeader("empty doc_ids".into()));
    }
    if token_count == 0 {
        return Err(CodecError::InvalidHeader("token_count is zero".into()));
    }
    let model_hash = profile.model_hash();
    let mut h = fnv1a64(&seed.to_le_bytes());
    h = fnv1a64_extend(h, &model_hash.to_le_bytes());
    h = fnv1a64_extend(h, &hash_doc_ids(doc_ids).to_le_bytes());
    h = fnv1a64_extend(h, &(doc_ids.len() as u64).to_le_bytes());
    h = fnv1a64_extend(h, &token_count.to_le_bytes());

    let len = blob_size(profile, u64::from(token_count));
    let mut payload = vec![0u8; len as usize];
    ChaCha8Rng::seed_from_u64(h).fill_bytes(&mut payload);

    let header = KvBlobHeader {
        version: FORMAT_VERSION,
        model_hash,
        doc_ids: doc_ids.to_vec(),
        token_count,
        layers: profile.layers,
        kv_heads: profile.kv_heads,
        head_dim: profile.head_dim,
        elem_width: profile.elem_width,
        payload_len: len,
        checksum: fnv1a64(&payload),
    };
    Ok(KvBlob { header, payload })
}

pub fn encode(blob: &KvBlob) -> Vec<u8> {
    let h = &blob.header;
    let mut out = Vec::with_capacity(h.encoded_len() + blob.payload.len());
    encode_header_into(h, &mut out);
    out.extend_from_slice(&blob.payload);
    out
}

fn encode_header_into(h: &KvBlobHeader, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.extend_from_slice(&h.model_hash.to_le_bytes());
    out.extend_from_slice(&(h.doc_ids.len() as u16).to_le_bytes());
    for id in &h.doc_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out.extend_from_slice(&h.token_count.to_le_bytes());
    out.extend_from_slice(&h.layers.to_le_bytes());
    out.extend_from_slice(&h.kv_heads.to_le_bytes());
    out.extend_from_slice(&h.head_dim.to_le_bytes());
    out.push(h.elem_width);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&h.payload_len.to_le_bytes());
    out.extend_from_slice(&h.checksum.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated {
            needed: usize::MAX,
            available: self.buf.len(),
        })?;
        if end > self.buf.len() {
            return Err(CodecError::Truncated {
                needed: end,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses only the header; `bytes` may be a prefix of a full blob.
pub fn decode_header(bytes: &[u8]) -> Result<KvBlobHeader, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let model_hash = r.u64()?;
    let doc_count = r.u16()? as usize;
    let doc_ids = (0..doc_count).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let token_count = r.u32()?;
    let layers = r.u16()?;
    let kv_heads = r.u16()?;
    let head_dim = r.u16()?;
    let elem_width = r.u8()?;
    if r.take(3)? != [0, 0, 0] {
        return Err(CodecError::InvalidHeader("reserved bytes are not zero".into()));
    }
    let payload_len = r.u64()?;
    let checksum = r.u64()?;
    let header = KvBlobHeader {
        version,
        model_hash,
        doc_ids,
        token_count,
        layers,
        kv_heads,
        head_dim,
        elem_width,
        payload_len,
        checksum,
    };
    header.validate()?;
    Ok(header)
}

pub fn decode(bytes: &[u8]) -> Result<KvBlob, CodecError> {
    let header = decode_header(bytes)?;
    let start = header.encoded_len();
    let payload_len = usize::try_from(header.payload_len).map_err(|_| CodecError::Truncated {
        needed: usize::MAX,
        available: bytes.len(),
    })?;
    let end = start.saturating_add(payload_len);
    if bytes.len() < end {
        return Err(CodecError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(CodecError::TrailingBytes(bytes.len() - end));
    }
    let payload = bytes[start..end].to_vec();
    let actual = fnv1a64(&payload);
    if actual != header.checksum {
        return Err(CodecError::ChecksumMismatch {
            expected: header.checksum,
            actual,
        });
    }
    Ok(KvBlob { header, payload })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelProfile {
        ModelProfile::new("tiny", 2, 2, 4, 2).unwrap()
    }

    #[test]
    fn blob_size_examples() {
        let p = ModelProfile::new("p", 24, 32, 64, 2).unwrap();
        assert_eq!(blob_size(&p, 1), 196_608);
        assert_eq!(blob_size(&p, 0), 0);
        // 196,608 * 120 computed by hand: 196,608 * 100 + 196,608 * 20
        assert_eq!(blob_size(&p, 120), 19_660_800 + 3_932_160);
        assert_eq!(blob_size(&p, 120), 23_592_960);
    }

    #[test]
    fn profile_rejects_bad_dims() {
        assert!(ModelProfile::new("x", 0, 1, 1, 2).is_err());
        assert!(ModelProfile::new("x", 1, 1, 1, 3).is_err());
        let mut p = small();
        p.hidden_dim = 9;
        assert!(p.validate().is_err());
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn synth_is_deterministic_and_seed_sensitive() {
        let p = small();
        let a = synth_blob(&p, &[1, 2], 3, 9).unwrap();
        let b = synth_blob(&p, &[1, 2], 3, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_blob(&p, &[1, 2], 3, 10).unwrap();
        assert_ne!(a.checksum(), c.checksum());
        let d = synth_blob(&p, &[2, 1], 3, 9).unwrap();
        assert_ne!(a.payload, d.payload);
        assert_ne!(a.header.doc_ids, d.header.doc_ids);
    }

    #[test]
    fn synth_rejects_empty_ids() {
        assert!(matches!(
            synth_blob(&small(), &[], 1, 0),
            Err(CodecError::InvalidHeader(_))
        ));
    }

    #[test]
    fn layout_is_bit_exact() {
        let p = small();
        let blob = synth_blob(&p, &[7], 1, 0).unwrap();
        let bytes = encode(&blob);
        assert_eq!(&bytes[0..4], b"RDKV");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(&bytes[6..14], &p.model_hash().to_le_bytes());
        assert_eq!(&bytes[14..16], &1u16.to_le_bytes());
        assert_eq!(&bytes[16..24], &7u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &1u32.to_le_bytes());
        assert_eq!(&bytes[28..30], &2u16.to_le_bytes());
        assert_eq!(&bytes[30..32], &2u16.to_le_bytes());
        assert_eq!(&bytes[32..34], &4u16.to_le_bytes());
        assert_eq!(bytes[34], 2);
        assert_eq!(&bytes[35..38], &[0, 0, 0]);
        assert_eq!(&bytes[38..46], &64u64.to_le_bytes());
        assert_eq!(&bytes[46..54], &fnv1a64(&blob.payload).to_le_bytes());
        assert_eq!(bytes.len(), 54 + 64);
        assert_eq!(blob.encoded_len(), bytes.len() as u64);
    }

    #[test]
    fn decode_error_kinds() {
        let blob = synth_blob(&small(), &[1, 2, 3], 5, 1).unwrap();
        let good = encode(&blob);
        assert_eq!(decode(&good).unwrap(), blob);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(CodecError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(decode(&bad), Err(CodecError::UnsupportedVersion(2)));

        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x01;
        assert!(matches!(decode(&bad), Err(CodecError::ChecksumMismatch { .. })));

        let bad = &good[..good.len() - 1];
        assert!(matches!(decode(bad), Err(CodecError::Truncated { .. })));

        let bad = &good[..10];
        assert!(matches!(decode(bad), Err(CodecError::Truncated { .. })));

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(decode(&bad), Err(CodecError::TrailingBytes(1)));
    }
}
