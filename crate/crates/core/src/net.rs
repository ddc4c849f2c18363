//! TCP server and client for the shared cache manager.
//!
//! One listener, a thread per connection, one request in flight per
//! connection. Malformed frames get an `Error` reply and the connection
//! stays open; an oversize frame gets an `Error` reply and the connection
//! is closed because the stream can no longer be resynchronized.

use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::codec::KvBlob;
use crate::service::CacheService;
use crate::store::{KvKey, LookupOutcome, Residency, StoreError, StoreStats};
use crate::wire::{read_frame, write_frame, ErrorCode, Request, Response, WireError, MAX_FRAME};

pub struct CacheServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl CacheServer {
    /// Binds `addr` and starts accepting connections in the background.
    pub fn start(addr: impl ToSocketAddrs, service: Arc<CacheService>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let acceptor = std::thread::Builder::new()
            .name("cache-accept".into())
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop_flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let service = service.clone();
                    let _ = std::thread::Builder::new()
                        .name("cache-conn".into())
                        .spawn(move || {
                            let _ = handle_connection(stream, &service);
                        });
                }
            })?;
        Ok(Self {
            addr,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the acceptor exits (it only does after `shutdown`).
    pub fn join(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_acceptor();
    }

    fn stop_acceptor(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for CacheServer {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_acceptor();
        }
    }
}

fn handle_connection(stream: TcpStream, service: &CacheService) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream.try_clone()?);
    loop {
        let frame = match read_frame(&mut reader, MAX_FRAME) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(WireError::Oversize(n)) => {
                let (op, body) = Response::error(ErrorCode::Oversize, format!("frame of {n} bytes")).encode();
                write_frame(&mut writer, op, &body)?;
                let _ = stream.shutdown(Shutdown::Both);
                return Ok(());
            }
            Err(WireError::Malformed(msg)) => {
                let (op, body) = Response::error(ErrorCode::Malformed, msg).encode();
                write_frame(&mut writer, op, &body)?;
                continue;
            }
            Err(_) => return Ok(()),
        };
        let response = match Request::decode(frame.0, &frame.1) {
            Ok(req) => execute(service, req),
            Err(WireError::Corrupt(e)) => Response::error(ErrorCode::Corrupt, e.to_string()),
            Err(e) => Response::error(ErrorCode::Malformed, e.to_string()),
        };
        let (op, body) = response.encode();
        write_frame(&mut writer, op, &body)?;
    }
}

/// Applies one request to the local store, exactly as a local caller would.
pub fn execute(service: &CacheService, req: Request) -> Response {
    let store = service.store();
    match req {
        Request::Get(key) => match store.get(&key) {
            Ok(r) => match r.blob {
                Some(blob) => Response::Blob {
                    outcome: r.outcome,
                    load_cost_bytes: r.load_cost_bytes,
                    blob: (*blob).clone(),
                },
                None => Response::State(Residency::Absent),
            },
            Err(e) => store_error(e),
        },
        Request::Put(key, blob) => match store.put(&key, blob) {
            Ok(_) => Response::State(store.contains(&key)),
            Err(e) => store_error(e),
        },
        Request::Contains(key) => Response::State(store.contains(&key)),
        Request::Stats => Response::StatsBody(store.stats()),
    }
}

fn store_error(e: StoreError) -> Response {
    let code = match &e {
        StoreError::Corrupt { .. } => ErrorCode::Corrupt,
        StoreError::KeyMismatch { .. } => ErrorCode::Malformed,
        _ => ErrorCode::Internal,
    };
    Response::error(code, e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
}

impl From<WireError> for ClientError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::Io(io) => ClientError::Transport(io),
            other => ClientError::Protocol(other.to_string()),
        }
    }
}

/// Result of a remote `Get`, mirroring the local lookup result.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteLookup {
    pub outcome: LookupOutcome,
    pub blob: Option<KvBlob>,
    pub load_cost_bytes: u64,
}

pub struct CacheClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl CacheClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn call(&mut self, req: &Request) -> Result<Response, ClientError> {
        let (op, body) = req.encode();
        write_frame(&mut self.writer, op, &body)?;
        self.read_response()
    }

    /// Sends raw bytes; for protocol tests.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        use std::io::Write;
        self.writer.write_all(bytes)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn read_response(&mut self) -> Result<Response, ClientError> {
        match read_frame(&mut self.reader, MAX_FRAME)? {
            Some((op, body)) => Ok(Response::decode(op, &body)?),
            None => Err(ClientError::Transport(io::ErrorKind::UnexpectedEof.into())),
        }
    }

    pub fn get(&mut self, key: &KvKey) -> Result<RemoteLookup, ClientError> {
        match self.call(&Request::Get(key.clone()))? {
            Response::Blob {
                outcome,
                load_cost_bytes,
                blob,
            } => Ok(RemoteLookup {
                outcome,
                blob: Some(blob),
                load_cost_bytes,
            }),
            Response::State(Residency::Absent) => Ok(RemoteLookup {
                outcome: LookupOutcome::Miss,
                blob: None,
                load_cost_bytes: 0,
            }),
            other => unexpected(other),
        }
    }

    pub fn put(&mut self, key: &KvKey, blob: &KvBlob) -> Result<Residency, ClientError> {
        match self.call(&Request::Put(key.clone(), blob.clone()))? {
            Response::State(r) => Ok(r),
            other => unexpected(other),
        }
    }

    pub fn contains(&mut self, key: &KvKey) -> Result<Residency, ClientError> {
        match self.call(&Request::Contains(key.clone()))? {
            Response::State(r) => Ok(r),
            other => unexpected(other),
        }
    }

    pub fn stats(&mut self) -> Result<StoreStats, ClientError> {
        match self.call(&Request::Stats)? {
            Response::StatsBody(s) => Ok(s),
            other => unexpected(other),
        }
    }
}

fn unexpected<T>(resp: Response) -> Result<T, ClientError> {
    match resp {
        Response::Error { code, message } => Err(ClientError::Remote { code, message }),
        other => Err(ClientError::Protocol(format!("unexpected response {other:?}"))),
    }
}
