//! Query workloads: trace replay, synthetic Zipf streams, arrival processes,
//! and the document-locality CDF.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no work items")]
    Empty,
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// One query. Exactly one of `doc_ids` and `embedding` is set; when
/// `doc_ids` is set, `doc_tokens` has the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkItem {
    pub query_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_ids: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    pub q_tokens: u32,
    #[serde(default)]
    pub doc_tokens: Vec<u32>,
}

impl WorkItem {
    pub fn resolved(query_id: u64, doc_ids: Vec<u64>, q_tokens: u32, doc_tokens: Vec<u32>) -> Self {
        Self {
            query_id,
            doc_ids: Some(doc_ids),
            embedding: None,
            q_tokens,
            doc_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match (&self.doc_ids, &self.embedding) {
            (Some(ids), None) => {
                if ids.is_empty() {
                    return Err("doc_ids is empty".into());
                }
                if ids.len() != self.doc_tokens.len() {
                    return Err(format!(
                        "doc_ids has {} entries but doc_tokens has {}",
                        ids.len(),
                        self.doc_tokens.len()
                    ));
                }
                Ok(())
            }
            (None, Some(e)) if !e.is_empty() => Ok(()),
            (None, Some(_)) => Err("embedding is empty".into()),
            (Some(_), Some(_)) => Err("both doc_ids and embedding are present".into()),
            (None, None) => Err("one of doc_ids or embedding is required".into()),
        }
    }

    pub fn top1(&self) -> Option<u64> {
        self.doc_ids.as_ref().and_then(|d| d.first().copied())
    }
}

/// Token counts applied when a trace line omits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDefaults {
    pub q_tokens: u32,
    pub doc_tokens: u32,
}

impl Default for TokenDefaults {
    fn default() -> Self {
        Self {
            q_tokens: 16,
            doc_tokens: 120,
        }
    }
}

#[derive(Deserialize)]
struct TraceLine {
    query_id: Option<u64>,
    doc_ids: Option<Vec<u64>>,
    embedding: Option<Vec<f32>>,
    q_tokens: Option<u32>,
    doc_tokens: Option<Vec<u32>>,
}

pub fn load_trace(path: &Path, defaults: TokenDefaults) -> Result<Vec<WorkItem>, WorkloadError> {
    let file = File::open(path).map_err(|source| WorkloadError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| WorkloadError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| WorkloadError::Parse { line: line_no, msg };
        let raw: TraceLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let query_id = raw.query_id.ok_or_else(|| parse_err("missing field `query_id`".into()))?;
        let doc_tokens = match (&raw.doc_ids, raw.doc_tokens) {
            (_, Some(t)) => t,
            (Some(ids), None) => vec![defaults.doc_tokens; ids.len()],
            (None, None) => Vec::new(),
        };
        let item = WorkItem {
            query_id,
            doc_ids: raw.doc_ids,
            embedding: raw.embedding,
            q_tokens: raw.q_tokens.unwrap_or(defaults.q_tokens),
            doc_tokens,
        };
        item.validate().map_err(|m| parse_err(format!("field `doc_ids`/`doc_tokens`: {m}")))?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(WorkloadError::Empty);
    }
    Ok(items)
}

pub fn save_trace(path: &Path, items: &[WorkItem]) -> Result<(), WorkloadError> {
    let io_err = |source| WorkloadError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// A work item with its arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedItem {
    pub arrival: f64,
    pub item: WorkItem,
}

/// First arrival at 0, then exponential gaps of mean `1/rate`.
pub fn poissonize(items: &[WorkItem], rate: f64, seed: u64) -> Vec<TimedItem> {
    let gaps = poisson_gaps(items.len(), rate, seed);
    items
        .iter()
        .zip(gaps)
        .map(|(item, arrival)| TimedItem {
            arrival,
            item: item.clone(),
        })
        .collect()
}

/// Arrival times for `n` queries: 0 then cumulative exponential gaps.
pub fn poisson_gaps(n: usize, rate: f64, seed: u64) -> Vec<f64> {
    let exp = Exp::new(rate).expect("rate must be > 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    (0..n)
        .map(|i| {
            if i > 0 {
                t += exp.sample(&mut rng);
            }
            t
        })
        .collect()
}

/// Arrival times `i / rate`.
pub fn uniform_arrivals(n: usize, rate: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 / rate).collect()
}

/// Parameters for a synthetic stream. Doc id `r - 1` has popularity rank `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    pub n_docs: u64,
    pub s: f64,
    pub n_queries: usize,
    pub k: usize,
    pub q_tokens: u32,
    pub doc_tokens: u32,
    pub seed: u64,
}

/// Number of co-retrieval candidates per document when `k > 1`.
pub const NEIGHBORS: usize = 4;

/// Zipf rank weights `r^-s` for ranks `1..=n`.
pub fn zipf_weights(n: u64, s: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-s)).collect()
}

pub fn zipf_stream(n_docs: u64, s: f64, n_queries: usize, seed: u64) -> Vec<WorkItem> {
    zipf_stream_with(&ZipfSpec {
        n_docs,
        s,
        n_queries,
        k: 1,
        q_tokens: TokenDefaults::default().q_tokens,
        doc_tokens: TokenDefaults::default().doc_tokens,
        seed,
    })
    .expect("valid zipf spec")
}

/// Top-1 documents follow Zipf(s). Documents 2..k of a query are drawn
/// without replacement from a fixed per-document neighbor table (weights
/// `1/j` over the table), so combinations recur as often as their top-1.
pub fn zipf_stream_with(spec: &ZipfSpec) -> Result<Vec<WorkItem>, WorkloadError> {
    if spec.n_docs == 0 {
        return Err(WorkloadError::Invalid("n_docs must be >= 1".into()));
    }
    if !(spec.s >= 0.0 && spec.s.is_finite()) {
        return Err(WorkloadError::Invalid("s must be >= 0".into()));
    }
    if spec.k == 0 || spec.k as u64 > spec.n_docs {
        return Err(WorkloadError::Invalid("k must be in 1..=n_docs".into()));
    }
    let rank = WeightedIndex::new(zipf_weights(spec.n_docs, spec.s)).expect("positive weights");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let neighbors = neighbor_table(spec.n_docs, (spec.k - 1).max(NEIGHBORS), spec.seed);
    let table_w: Vec<f64> = (1..=neighbors.width).map(|j| 1.0 / j as f64).collect();
    let mut items = Vec::with_capacity(spec.n_queries);
    for q in 0..spec.n_queries {
        let top1 = rank.sample(&mut rng) as u64;
        let mut ids = vec![top1];
        let mut cands: Vec<u64> = neighbors.of(top1).to_vec();
        let mut w = table_w.clone();
        while ids.len() < spec.k {
            let pick = WeightedIndex::new(&w).expect("remaining weights").sample(&mut rng);
            ids.push(cands.remove(pick));
            w.remove(pick);
        }
        let n = ids.len();
        items.push(WorkItem::resolved(q as u64, ids, spec.q_tokens, vec![spec.doc_tokens; n]));
    }
    Ok(items)
}

struct NeighborTable {
    width: usize,
    ids: Vec<u64>,
}

impl NeighborTable {
    fn of(&self, doc: u64) -> &[u64] {
        let start = doc as usize * self.width;
        &self.ids[start..start + self.width]
    }
}

fn neighbor_table(n_docs: u64, width: usize, seed: u64) -> NeighborTable {
    let width = width.min(n_docs.saturating_sub(1) as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_6967_6862_6f72);
    let mut ids = Vec::with_capacity(n_docs as usize * width);
    for doc in 0..n_docs {
        let mut row: Vec<u64> = Vec::with_capacity(width);
        while row.len() < width {
            let c = rng.random_range(0..n_docs);
            if c != doc && !row.contains(&c) {
                row.push(c);
            }
        }
        ids.extend(row);
    }
    NeighborTable { width, ids }
}

/// Running coverage of queries by documents ranked by retrieval frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityCurve {
    pub corpus_size: u64,
    pub n_queries: u64,
    /// `(fraction_of_documents, fraction_of_queries_covered)` per ranked doc.
    pub points: Vec<(f64, f64)>,
    /// Cumulative query counts aligned with `points`.
    pub cumulative: Vec<u64>,
}

/// Ranks documents by count descending, ties by id ascending. The document
/// fraction is over `corpus_size`, defaulting to the distinct docs seen.
pub fn locality_curve(top1: &[u64], corpus_size: Option<u64>) -> Result<LocalityCurve, WorkloadError> {
    if top1.is_empty() {
        return Err(WorkloadError::Empty);
    }
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for &d in top1 {
        *counts.entry(d).or_default() += 1;
    }
    let mut ranked: Vec<(u64, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let distinct = ranked.len() as u64;
    let corpus = corpus_size.unwrap_or(distinct);
    if corpus < distinct {
        return Err(WorkloadError::Invalid(format!(
            "corpus size {corpus} is smaller than the {distinct} distinct documents in the trace"
        )));
    }
    let n = top1.len() as u64;
    let mut acc = 0;
    let mut points = Vec::with_capacity(ranked.len());
    let mut cumulative = Vec::with_capacity(ranked.len());
    for (i, (_, c)) in ranked.iter().enumerate() {
        acc += c;
        cumulative.push(acc);
        points.push(((i + 1) as f64 / corpus as f64, acc as f64 / n as f64));
    }
    Ok(LocalityCurve {
        corpus_size: corpus,
        n_queries: n,
        points,
        cumulative,
    })
}

impl LocalityCurve {
    /// Smallest document fraction whose queries cover at least `q`.
    pub fn coverage_at(&self, q: f64) -> f64 {
        let need = (q * self.n_queries as f64).ceil().max(0.0) as u64;
        let idx = self.cumulative.partition_point(|&c| c < need);
        let idx = idx.min(self.points.len() - 1);
        self.points[idx].0
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank_fraction,coverage\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// Bisects the Zipf exponent so that `coverage_at(0.5)` of a generated
/// stream lands on `target` (coverage falls as `s` grows).
pub fn fit_zipf_exponent(n_docs: u64, n_queries: usize, target: f64, seed: u64) -> f64 {
    let cov = |s: f64| {
        let top1: Vec<u64> = zipf_stream(n_docs, s, n_queries, seed).iter().filter_map(|w| w.top1()).collect();
        locality_curve(&top1, Some(n_docs)).expect("non-empty").coverage_at(0.5)
    };
    let (mut lo, mut hi) = (0.0f64, 4.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if cov(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Shuffles `items` deterministically for one pass over the dataset.
pub fn shuffled(items: &[WorkItem], seed: u64) -> Vec<WorkItem> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
