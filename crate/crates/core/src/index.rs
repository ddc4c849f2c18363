//! Flat inner-product index over document-chunk embeddings.
//!
//! Each entry carries the chunk's id, text and token count next to its
//! embedding; the chunk's KV cache is resolved through the store by id.
//! Embeddings are used as supplied; normalize them first if cosine
//! similarity is wanted.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate doc_id {0}")]
    DuplicateId(u64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("malformed index file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocChunk {
    pub doc_id: u64,
    #[serde(default)]
    pub text: String,
    pub token_count: u32,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub doc_id: u64,
    pub score: f32,
}

#[derive(Debug, Clone)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<u64>,
    token_counts: Vec<u32>,
    texts: Vec<String>,
    vectors: Vec<f32>,
    id_set: HashSet<u64>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            token_counts: Vec::new(),
            texts: Vec::new(),
            vectors: Vec::new(),
            id_set: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn add(&mut self, chunk: DocChunk) -> Result<(), IndexError> {
        if chunk.embedding.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: chunk.embedding.len(),
            });
        }
        if !self.id_set.insert(chunk.doc_id) {
            return Err(IndexError::DuplicateId(chunk.doc_id));
        }
        self.ids.push(chunk.doc_id);
        self.token_counts.push(chunk.token_count);
        self.texts.push(chunk.text);
        self.vectors.extend_from_slice(&chunk.embedding);
        Ok(())
    }

    pub fn token_count(&self, doc_id: u64) -> Option<u32> {
        self.position(doc_id).map(|i| self.token_counts[i])
    }

    pub fn text(&self, doc_id: u64) -> Option<&str> {
        self.position(doc_id).map(|i| self.texts[i].as_str())
    }

    fn position(&self, doc_id: u64) -> Option<usize> {
        if !self.id_set.contains(&doc_id) {
            return None;
        }
        self.ids.iter().position(|&id| id == doc_id)
    }

    /// The `k` largest inner products, score descending, ties by ascending id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut hits: Vec<SearchHit> = self
            .ids
            .iter()
            .zip(self.vectors.chunks_exact(self.dim.max(1)))
            .map(|(&doc_id, v)| SearchHit {
                doc_id,
                // `+ 0.0` folds -0.0 into 0.0 so equal scores tie by id.
                score: v.iter().zip(query).map(|(a, b)| a * b).sum::<f32>() + 0.0,
            })
            .collect();
        let by_rank = |a: &SearchHit, b: &SearchHit| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, by_rank);
            hits.truncate(k);
        }
        hits.sort_by(by_rank);
        Ok(hits)
    }

    /// Writes the index as: u32 LE manifest length | JSON manifest |
    /// f32 LE vectors (count * dim) | (u64 id, u32 tokens) LE table |
    /// (u32 len, utf8) texts.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let manifest = serde_json::to_vec(&IndexManifest {
            version: 1,
            dim: self.dim,
            count: self.len(),
        })
        .expect("manifest serializes");
        let mut out = Vec::with_capacity(4 + manifest.len() + self.vectors.len() * 4 + self.len() * 12);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for x in &self.vectors {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for (id, tokens) in self.ids.iter().zip(&self.token_counts) {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&tokens.to_le_bytes());
        }
        for text in &self.texts {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        fs::write(path, out).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], IndexError> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| IndexError::Format("truncated".into()))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let mlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let manifest: IndexManifest = serde_json::from_slice(take(mlen)?)
            .map_err(|e| IndexError::Format(format!("manifest: {e}")))?;
        if manifest.version != 1 {
            return Err(IndexError::Format(format!("unsupported version {}", manifest.version)));
        }
        let mut index = FlatIndex::new(manifest.dim);
        let floats = take(manifest.count * manifest.dim * 4)?;
        let vectors: Vec<f32> = floats
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut table = Vec::with_capacity(manifest.count);
        for _ in 0..manifest.count {
            let id = u64::from_le_bytes(take(8)?.try_into().unwrap());
            let tokens = u32::from_le_bytes(take(4)?.try_into().unwrap());
            table.push((id, tokens));
        }
        for (i, (doc_id, token_count)) in table.into_iter().enumerate() {
            let tlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let text = String::from_utf8(take(tlen)?.to_vec())
                .map_err(|_| IndexError::Format("text is not utf-8".into()))?;
            let embedding = vectors[i * manifest.dim..(i + 1) * manifest.dim].to_vec();
            index.add(DocChunk {
                doc_id,
                text,
                token_count,
                embedding,
            })?;
        }
        if pos != bytes.len() {
            return Err(IndexError::Format("trailing bytes".into()));
        }
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexManifest {
    version: u32,
    dim: usize,
    count: usize,
}

/// Reads a JSONL chunk file: one `{doc_id, token_count, embedding, text?}` per line.
pub fn read_chunks_jsonl(path: &Path) -> Result<Vec<DocChunk>, IndexError> {
    let file = fs::File::open(path).map_err(|source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut chunks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: DocChunk = serde_json::from_str(&line).map_err(|e| IndexError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if chunk.token_count == 0 {
            return Err(IndexError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "token_count must be positive".into(),
            });
        }
        chunks.push(chunk);
    }
    Ok(chunks)
}

/// Builds an index from chunks; the dimension is taken from the first chunk.
pub fn build_index(chunks: Vec<DocChunk>) -> Result<FlatIndex, IndexError> {
    let dim = chunks.first().map(|c| c.embedding.len()).unwrap_or(0);
    let mut index = FlatIndex::new(dim);
    for chunk in chunks {
        index.add(chunk)?;
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(id: u64, e: Vec<f32>) -> DocChunk {
        DocChunk {
            doc_id: id,
            text: String::new(),
            token_count: 10,
            embedding: e,
        }
    }

    #[test]
    fn self_is_top1() {
        let mut idx = FlatIndex::new(3);
        let e = vec![0.6, 0.8, 0.0];
        idx.add(chunk(5, e.clone())).unwrap();
        idx.add(chunk(6, vec![0.0, 0.0, 1.0])).unwrap();
        let hits = idx.search(&e, 1).unwrap();
        assert_eq!(hits[0].doc_id, 5);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_docs() {
        let mut idx = FlatIndex::new(2);
        idx.add(chunk(1, vec![1.0, 0.0])).unwrap();
        idx.add(chunk(2, vec![0.0, 1.0])).unwrap();
        let hits = idx.search(&[2.0, 0.0], 2).unwrap();
        assert_eq!(hits[0].doc_id, 1);
        assert!(hits[0].score > 0.0);
        assert_eq!(hits[1].score, 0.0);
    }

    #[test]
    fn add_errors() {
        let mut idx = FlatIndex::new(2);
        idx.add(chunk(1, vec![1.0, 0.0])).unwrap();
        assert!(matches!(idx.add(chunk(1, vec![0.0, 1.0])), Err(IndexError::DuplicateId(1))));
        assert!(matches!(
            idx.add(chunk(2, vec![0.0])),
            Err(IndexError::DimensionMismatch { .. })
        ));
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn empty_index_and_ties() {
        let idx = FlatIndex::new(2);
        assert!(idx.search(&[1.0, 1.0], 3).unwrap().is_empty());

        let mut idx = FlatIndex::new(1);
        for id in [9, 3, 7] {
            idx.add(chunk(id, vec![1.0])).unwrap();
        }
        let ids: Vec<u64> = idx.search(&[1.0], 3).unwrap().iter().map(|h| h.doc_id).collect();
        assert_eq!(ids, vec![3, 7, 9]);
        assert!(matches!(idx.search(&[1.0], 0), Err(IndexError::ZeroK)));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut idx = FlatIndex::new(2);
        idx.add(DocChunk {
            doc_id: 4,
            text: "hello".into(),
            token_count: 3,
            embedding: vec![0.5, -1.5],
        })
        .unwrap();
        idx.add(chunk(8, vec![1.0, 2.0])).unwrap();
        let path = dir.path().join("i.idx");
        idx.save(&path).unwrap();
        let back = FlatIndex::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.text(4), Some("hello"));
        assert_eq!(back.token_count(8), Some(10));
        assert_eq!(
            back.search(&[1.0, 1.0], 2).unwrap(),
            idx.search(&[1.0, 1.0], 2).unwrap()
        );
    }
}
