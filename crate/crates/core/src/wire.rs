//! Length-prefixed request/response protocol for the shared cache manager.
//!
//! Every frame is `len: u32 BE | opcode: u8 | body`, where `len` counts the
//! opcode and body. Integers inside bodies are little-endian, matching the
//! blob format. A key is `model_hash u64 | count u16 | doc_ids u64*count`.
//!
//! | opcode | message    | body                                       |
//! |--------|------------|--------------------------------------------|
//! | 0x01   | Get        | key                                        |
//! | 0x02   | Put        | key, encoded blob                          |
//! | 0x03   | Contains   | key                                        |
//! | 0x04   | Stats      | empty                                      |
//! | 0x81   | Blob       | outcome u8 (0 memory, 1 disk), load u64, blob |
//! | 0x82   | State      | residency u8 (0 memory, 1 disk, 2 absent)  |
//! | 0x83   | StatsBody  | JSON store stats                           |
//! | 0x8f   | Error      | code u8, UTF-8 message                     |

use std::io::{self, Read, Write};

use crate::codec::{self, KvBlob};
use crate::store::{KvKey, LookupOutcome, Residency, StoreStats};

pub const MAX_FRAME: usize = 256 * 1024 * 1024;

pub const OP_GET: u8 = 0x01;
pub const OP_PUT: u8 = 0x02;
pub const OP_CONTAINS: u8 = 0x03;
pub const OP_STATS: u8 = 0x04;
pub const OP_BLOB: u8 = 0x81;
pub const OP_STATE: u8 = 0x82;
pub const OP_STATS_BODY: u8 = 0x83;
pub const OP_ERROR: u8 = 0x8f;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    Absent = 1,
    Corrupt = 2,
    Malformed = 3,
    Oversize = 4,
    Internal = 5,
}

impl ErrorCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Absent,
            2 => Self::Corrupt,
            3 => Self::Malformed,
            4 => Self::Oversize,
            5 => Self::Internal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Get(KvKey),
    Put(KvKey, KvBlob),
    Contains(KvKey),
    Stats,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Blob {
        outcome: LookupOutcome,
        load_cost_bytes: u64,
        blob: KvBlob,
    },
    State(Residency),
    StatsBody(StoreStats),
    Error { code: ErrorCode, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    Oversize(usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("corrupt blob in frame: {0}")]
    Corrupt(#[from] codec::CodecError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(msg: impl Into<String>) -> WireError {
    WireError::Malformed(msg.into())
}

/// Writes one frame.
pub fn write_frame(w: &mut impl Write, opcode: u8, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len() + 1).map_err(|_| io::Error::other("frame too large"))?;
    let mut buf = Vec::with_capacity(5 + body.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.push(opcode);
    buf.extend_from_slice(body);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any byte of
/// the next frame. An oversize length is reported without reading the body.
pub fn read_frame(r: &mut impl Read, max: usize) -> Result<Option<(u8, Vec<u8>)>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > max {
        return Err(WireError::Oversize(len));
    }
    if len == 0 {
        return Err(malformed("zero-length frame"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let opcode = buf[0];
    buf.remove(0);
    Ok(Some((opcode, buf)))
}

fn put_key(out: &mut Vec<u8>, key: &KvKey) {
    out.extend_from_slice(&key.model_hash.to_le_bytes());
    out.extend_from_slice(&(key.doc_ids.len() as u16).to_le_bytes());
    for id in &key.doc_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.0.len() < n {
            return Err(malformed("body too short"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn key(&mut self) -> Result<KvKey, WireError> {
        let model_hash = self.u64()?;
        let n = self.u16()? as usize;
        if n == 0 {
            return Err(malformed("key with no doc ids"));
        }
        let ids = (0..n).map(|_| self.u64()).collect::<Result<Vec<_>, _>>()?;
        Ok(KvKey::new(model_hash, ids))
    }

    fn end(self) -> Result<(), WireError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(malformed(format!("{} unexpected trailing bytes", self.0.len())))
        }
    }
}

impl Request {
    pub fn encode(&self) -> (u8, Vec<u8>) {
        let mut body = Vec::new();
        let op = match self {
            Request::Get(k) => {
                put_key(&mut body, k);
                OP_GET
            }
            Request::Put(k, b) => {
                put_key(&mut body, k);
                body.extend_from_slice(&codec::encode(b));
                OP_PUT
            }
            Request::Contains(k) => {
                put_key(&mut body, k);
                OP_CONTAINS
            }
            Request::Stats => OP_STATS,
        };
        (op, body)
    }

    pub fn decode(opcode: u8, body: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor(body);
        let req = match opcode {
            OP_GET => Request::Get(c.key()?),
            OP_CONTAINS => Request::Contains(c.key()?),
            OP_STATS => Request::Stats,
            OP_PUT => {
                let key = c.key()?;
                let blob = codec::decode(c.0)?;
                c.0 = &[];
                Request::Put(key, blob)
            }
            other => return Err(malformed(format!("unknown request opcode {other:#04x}"))),
        };
        c.end()?;
        Ok(req)
    }
}

fn residency_byte(r: Residency) -> u8 {
    match r {
        Residency::InMemory => 0,
        Residency::OnDisk => 1,
        Residency::Absent => 2,
    }
}

impl Response {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error {
            code,
            message: message.into(),
        }
    }

    pub fn encode(&self) -> (u8, Vec<u8>) {
        let mut body = Vec::new();
        let op = match self {
            Response::Blob {
                outcome,
                load_cost_bytes,
                blob,
            } => {
                body.push(match outcome {
                    LookupOutcome::MemoryHit => 0,
                    LookupOutcome::DiskHit => 1,
                    LookupOutcome::Miss => 2,
                });
                body.extend_from_slice(&load_cost_bytes.to_le_bytes());
                body.extend_from_slice(&codec::encode(blob));
                OP_BLOB
            }
            Response::State(r) => {
                body.push(residency_byte(*r));
                OP_STATE
            }
            Response::StatsBody(s) => {
                body = serde_json::to_vec(s).expect("stats serialize");
                OP_STATS_BODY
            }
            Response::Error { code, message } => {
                body.push(*code as u8);
                body.extend_from_slice(message.as_bytes());
                OP_ERROR
            }
        };
        (op, body)
    }

    pub fn decode(opcode: u8, body: &[u8]) -> Result<Self, WireError> {
        let mut c = Cursor(body);
        let resp = match opcode {
            OP_BLOB => {
                let outcome = match c.u8()? {
                    0 => LookupOutcome::MemoryHit,
                    1 => LookupOutcome::DiskHit,
                    v => return Err(malformed(format!("bad blob outcome {v}"))),
                };
                let load_cost_bytes = c.u64()?;
                let blob = codec::decode(c.0)?;
                c.0 = &[];
                Response::Blob {
                    outcome,
                    load_cost_bytes,
                    blob,
                }
            }
            OP_STATE => Response::State(match c.u8()? {
                0 => Residency::InMemory,
                1 => Residency::OnDisk,
                2 => Residency::Absent,
                v => return Err(malformed(format!("bad residency {v}"))),
            }),
            OP_STATS_BODY => {
                let stats = serde_json::from_slice(c.0).map_err(|e| malformed(format!("stats: {e}")))?;
                c.0 = &[];
                Response::StatsBody(stats)
            }
            OP_ERROR => {
                let code = c.u8()?;
                let code = ErrorCode::from_u8(code).ok_or_else(|| malformed(format!("bad error code {code}")))?;
                let message = String::from_utf8(c.0.to_vec()).map_err(|_| malformed("error text is not utf-8"))?;
                c.0 = &[];
                Response::Error { code, message }
            }
            other => return Err(malformed(format!("unknown response opcode {other:#04x}"))),
        };
        c.end()?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{synth_blob, ModelProfile};

    #[test]
    fn frame_header_is_big_endian() {
        let mut out = Vec::new();
        write_frame(&mut out, OP_STATS, &[]).unwrap();
        assert_eq!(out, vec![0, 0, 0, 1, OP_STATS]);
        let (op, body) = read_frame(&mut out.as_slice(), MAX_FRAME).unwrap().unwrap();
        assert_eq!((op, body.len()), (OP_STATS, 0));
    }

    #[test]
    fn oversize_and_eof() {
        let frame = [0xff, 0xff, 0xff, 0xff, 1];
        assert!(matches!(read_frame(&mut &frame[..], MAX_FRAME), Err(WireError::Oversize(_))));
        assert!(read_frame(&mut &[][..], MAX_FRAME).unwrap().is_none());
        assert!(matches!(read_frame(&mut &[0, 0][..], MAX_FRAME), Err(WireError::Io(_))));
    }

    #[test]
    fn put_roundtrip_and_bad_bodies() {
        let p = ModelProfile::new("t", 1, 1, 2, 2).unwrap();
        let blob = synth_blob(&p, &[3, 1], 2, 5).unwrap();
        let key = KvKey::new(p.model_hash(), vec![3, 1]);
        let req = Request::Put(key.clone(), blob);
        let (op, body) = req.encode();
        assert_eq!(Request::decode(op, &body).unwrap(), req);

        let (op, mut body) = Request::Get(key).encode();
        body.push(0);
        assert!(matches!(Request::decode(op, &body), Err(WireError::Malformed(_))));
        assert!(matches!(Request::decode(0x55, &[]), Err(WireError::Malformed(_))));
        assert!(matches!(Request::decode(OP_GET, &[1, 2]), Err(WireError::Malformed(_))));
    }
}
