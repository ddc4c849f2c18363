mod common;

use proptest::prelude::*;

use common::{brute_topk, random_rows, rng};
use ragdcache::index::{build_index, DocChunk, FlatIndex, IndexError};

fn index_of(rows: &[(u64, Vec<f32>)], dim: usize) -> FlatIndex {
    let mut ix = FlatIndex::new(dim);
    for (id, v) in rows {
        ix.add(DocChunk {
            doc_id: *id,
            text: format!("t{id}"),
            token_count: (*id as u32 % 7) + 1,
            embedding: v.clone(),
        })
        .unwrap();
    }
    ix
}

proptest! {
    #[test]
    fn search_matches_exhaustive_scan(seed in any::<u64>(), n in 1usize..40, dim in 1usize..6, k in 1usize..45) {
        let mut r = rng(seed);
        let rows = random_rows(&mut r, n, dim);
        let ix = index_of(&rows, dim);
        let q: Vec<f32> = random_rows(&mut r, 1, dim).remove(0).1;
        let got: Vec<(u64, f32)> = ix.search(&q, k).unwrap().iter().map(|h| (h.doc_id, h.score)).collect();
        prop_assert_eq!(got, brute_topk(&rows, &q, k));
    }

    #[test]
    fn save_load_preserves_results(seed in any::<u64>(), n in 1usize..30) {
        let mut r = rng(seed);
        let rows = random_rows(&mut r, n, 4);
        let ix = index_of(&rows, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ix.bin");
        ix.save(&path).unwrap();
        let back = FlatIndex::load(&path).unwrap();
        prop_assert_eq!(back.len(), ix.len());
        let q = vec![1.0, -1.0, 0.5, 2.0];
        prop_assert_eq!(back.search(&q, 5).unwrap(), ix.search(&q, 5).unwrap());
        for (id, _) in &rows {
            prop_assert_eq!(back.token_count(*id), ix.token_count(*id));
            prop_assert_eq!(back.text(*id), ix.text(*id));
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let rows = vec![(1u64, vec![1.0, 0.0])];
    let ix = index_of(&rows, 2);
    assert!(matches!(ix.search(&[1.0], 1), Err(IndexError::DimensionMismatch { .. })));
    assert!(matches!(ix.search(&[1.0, 0.0], 0), Err(IndexError::ZeroK)));
    let dup = vec![
        DocChunk { doc_id: 1, text: String::new(), token_count: 1, embedding: vec![0.0] },
        DocChunk { doc_id: 1, text: String::new(), token_count: 1, embedding: vec![1.0] },
    ];
    assert!(build_index(dup).is_err());
}

#[test]
fn ties_break_by_ascending_id() {
    let rows = vec![(9u64, vec![1.0]), (3, vec![1.0]), (5, vec![1.0]), (1, vec![0.0])];
    let ix = index_of(&rows, 1);
    let ids: Vec<u64> = ix.search(&[1.0], 3).unwrap().iter().map(|h| h.doc_id).collect();
    assert_eq!(ids, vec![3, 5, 9]);
}
