//! Shared KV cache manager: a thread-safe facade over [`KvStore`] that
//! guarantees one generation per absent key across concurrent callers.

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::codec::KvBlob;
use crate::store::{KvKey, KvStore, LookupOutcome, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    MemoryHit,
    DiskHit,
    Generated,
    WaitedOnInFlight,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("generation failed for {key:?}: {message}")]
    GenerationFailed { key: KvKey, message: String },
    #[error(transparent)]
    Store(#[from] StoreError),
}

type FlightResult = Result<Arc<KvBlob>, String>;

#[derive(Default)]
struct Flight {
    result: Mutex<Option<FlightResult>>,
    done: Condvar,
}

impl Flight {
    fn complete(&self, result: FlightResult) {
        *self.result.lock().unwrap() = Some(result);
        self.done.notify_all();
    }

    fn wait(&self) -> FlightResult {
        let mut guard = self.result.lock().unwrap();
        loop {
            if let Some(r) = guard.as_ref() {
                return r.clone();
            }
            guard = self.done.wait(guard).unwrap();
        }
    }
}

#[derive(Debug)]
pub struct CacheService {
    store: Arc<KvStore>,
    in_flight: Mutex<HashMap<KvKey, Arc<Flight>>>,
}

impl std::fmt::Debug for Flight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Flight")
    }
}

impl CacheService {
    pub fn new(store: Arc<KvStore>) -> Self {
        Self {
            store,
            in_flight: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Arc<KvStore> {
        &self.store
    }

    pub fn is_in_flight(&self, key: &KvKey) -> bool {
        self.in_flight.lock().unwrap().contains_key(key)
    }

    /// Returns the blob for `key`, running `generate` only if no cache exists
    /// and no other caller is already generating it. The generated blob is
    /// stored before any waiter is released. On failure every waiter sees the
    /// error and the key becomes eligible for a retry.
    pub fn get_or_generate<F, E>(&self, key: &KvKey, generate: F) -> Result<(Arc<KvBlob>, Origin), ServiceError>
    where
        F: FnOnce() -> Result<KvBlob, E>,
        E: std::fmt::Display,
    {
        if let Some(hit) = self.lookup(key)? {
            return Ok(hit);
        }

        let flight = {
            let mut map = self.in_flight.lock().unwrap();
            match map.get(key) {
                Some(f) => Err(f.clone()),
                None => {
                    let f = Arc::new(Flight::default());
                    map.insert(key.clone(), f.clone());
                    Ok(f)
                }
            }
        };

        let flight = match flight {
            Err(existing) => {
                return existing
                    .wait()
                    .map(|b| (b, Origin::WaitedOnInFlight))
                    .map_err(|message| ServiceError::GenerationFailed {
                        key: key.clone(),
                        message,
                    });
            }
            Ok(f) => f,
        };

        // A previous leader may have finished between our lookup and taking
        // the flight; check again before generating.
        let outcome = match self.lookup(key) {
            Ok(Some((blob, origin))) => Ok((blob, origin)),
            Ok(None) => self.generate_and_put(key, generate),
            Err(e) => Err(e),
        };
        match &outcome {
            Ok((blob, _)) => flight.complete(Ok(blob.clone())),
            Err(e) => flight.complete(Err(e.to_string())),
        }
        self.in_flight.lock().unwrap().remove(key);
        outcome
    }

    fn lookup(&self, key: &KvKey) -> Result<Option<(Arc<KvBlob>, Origin)>, ServiceError> {
        let r = self.store.get(key)?;
        Ok(match (r.outcome, r.blob) {
            (LookupOutcome::MemoryHit, Some(b)) => Some((b, Origin::MemoryHit)),
            (LookupOutcome::DiskHit, Some(b)) => Some((b, Origin::DiskHit)),
            _ => None,
        })
    }

    fn generate_and_put<F, E>(&self, key: &KvKey, generate: F) -> Result<(Arc<KvBlob>, Origin), ServiceError>
    where
        F: FnOnce() -> Result<KvBlob, E>,
        E: std::fmt::Display,
    {
        let blob = generate().map_err(|e| ServiceError::GenerationFailed {
            key: key.clone(),
            message: e.to_string(),
        })?;
        self.store.put(key, blob.clone())?;
        Ok((Arc::new(blob), Origin::Generated))
    }
}
