//! Oracles and generators shared by the integration tests. Each oracle is a
//! deliberately naive reimplementation, independent of the library code.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ragdcache::codec::{synth_blob, KvBlob, ModelProfile};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_profile() -> ModelProfile {
    ModelProfile::new("tiny", 2, 2, 4, 2).unwrap()
}

pub fn random_profile(r: &mut impl Rng) -> ModelProfile {
    let ew = if r.random_bool(0.5) { 2 } else { 4 };
    ModelProfile::new(
        format!("m{}", r.random_range(0..4u32)),
        r.random_range(1..=4),
        r.random_range(1..=4),
        r.random_range(1..=8),
        ew,
    )
    .unwrap()
}

pub fn random_blob(r: &mut impl Rng) -> KvBlob {
    let profile = random_profile(r);
    let n = r.random_range(1..=4);
    let ids: Vec<u64> = (0..n).map(|_| r.random()).collect();
    synth_blob(&profile, &ids, r.random_range(1..=16), r.random()).unwrap()
}

/// LRU over a plain vector, least recent first.
#[derive(Debug, Default)]
pub struct RefLru {
    pub capacity: u64,
    pub items: Vec<(u64, u64)>,
    pub evictions: usize,
}

impl RefLru {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn touch(&mut self, key: u64) -> bool {
        match self.items.iter().position(|&(k, _)| k == key) {
            Some(i) => {
                let it = self.items.remove(i);
                self.items.push(it);
                true
            }
            None => false,
        }
    }

    pub fn insert(&mut self, key: u64, size: u64) -> Vec<u64> {
        if self.touch(key) || size > self.capacity {
            return Vec::new();
        }
        self.items.push((key, size));
        let mut out = Vec::new();
        while self.items.iter().map(|&(_, s)| s).sum::<u64>() > self.capacity {
            out.push(self.items.remove(0).0);
        }
        self.evictions += out.len();
        out
    }

    pub fn keys(&self) -> Vec<u64> {
        self.items.iter().map(|&(k, _)| k).collect()
    }
}

/// Exhaustive top-k: score descending, ties by ascending id.
pub fn brute_topk(rows: &[(u64, Vec<f32>)], query: &[f32], k: usize) -> Vec<(u64, f32)> {
    let mut scored: Vec<(u64, f32)> = rows
        .iter()
        .map(|(id, v)| {
            let mut s = 0.0f32;
            for i in 0..v.len() {
                s += v[i] * query[i];
            }
            (*id, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Fraction of the corpus whose most frequent documents cover half the
/// queries, by counting.
pub fn brute_coverage_half(top1: &[u64], corpus: u64) -> f64 {
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for &d in top1 {
        *counts.entry(d).or_default() += 1;
    }
    let mut c: Vec<u64> = counts.into_values().collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    let n = top1.len() as u64;
    let mut acc = 0;
    for (i, x) in c.iter().enumerate() {
        acc += x;
        if 2 * acc >= n {
            return (i + 1) as f64 / corpus as f64;
        }
    }
    c.len() as f64 / corpus as f64
}

/// Small-integer vectors so score ties are frequent.
pub fn random_rows(r: &mut impl Rng, n: usize, dim: usize) -> Vec<(u64, Vec<f32>)> {
    let mut ids: Vec<u64> = (0..n as u64 * 3).collect();
    use rand::seq::SliceRandom;
    ids.shuffle(r);
    ids.truncate(n);
    ids.into_iter()
        .map(|id| (id, (0..dim).map(|_| r.random_range(-2..=2) as f32).collect()))
        .collect()
}
