//! Simulator invariants and a golden trace.

use std::path::PathBuf;

use ragdcache::config::ScenarioConfig;
use ragdcache::prefetch::Configuration;
use ragdcache::sim::{run, run_single_instance, sweep_rate, ArrivalProcess, DocOrigin, QueryRecord, SimConfig};
use ragdcache::workload::WorkItem;

fn small_workload(n: u64, k: usize) -> Vec<WorkItem> {
    (0..n)
        .map(|i| {
            let ids: Vec<u64> = (0..k as u64).map(|j| (i * 7 + j * 3) % 5 + j * 100).collect();
            WorkItem::resolved(i, ids, 32, vec![100; k])
        })
        .collect()
}

fn shared(c: Configuration, k: usize) -> SimConfig {
    let mut cfg = ScenarioConfig::builtin().shared_config(c, k, 5).unwrap();
    cfg.arrival.process = ArrivalProcess::Uniform;
    cfg.tries = 2;
    cfg
}

fn check_invariants(cfg: &SimConfig, n: usize, records: &[QueryRecord]) {
    assert_eq!(records.len(), n * cfg.tries);
    for r in records {
        assert!(r.dispatch >= r.arrival);
        assert!(r.first_token <= r.completion);
        assert_eq!(r.queue_wait, r.dispatch - r.arrival);
        assert_eq!(r.origins.len(), match cfg.key_scheme {
            ragdcache::prefetch::KeyScheme::Combination => 1,
            ragdcache::prefetch::KeyScheme::PerDocument => cfg.k,
        });
    }
    for t in 0..cfg.tries {
        let mut in_try: Vec<&QueryRecord> = records.iter().filter(|r| r.try_index == t).collect();
        // A single FIFO queue dispatches in arrival order.
        in_try.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
        assert!(in_try.windows(2).all(|w| w[0].dispatch <= w[1].dispatch));
        for inst in 0..cfg.instances.len() {
            let mut busy: Vec<(f64, f64)> = in_try
                .iter()
                .filter(|r| r.instance == inst)
                .map(|r| (r.dispatch, r.completion - r.network))
                .collect();
            busy.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(busy.windows(2).all(|w| w[0].1 <= w[1].0 + 1e-12), "instance {inst} overlaps");
        }
    }
}

#[test]
fn invariants_hold_for_every_configuration() {
    for k in [1, 2] {
        let w = small_workload(40, k);
        for c in [Configuration::Baseline, Configuration::A, Configuration::B] {
            let cfg = shared(c, k);
            let (report, records) = run(&cfg, &w).unwrap();
            check_invariants(&cfg, w.len(), &records);
            if c == Configuration::Baseline {
                assert_eq!(report.generations, 0);
                assert!(records.iter().all(|r| r.origins.iter().all(|o| *o == DocOrigin::MissRaw)));
            }
        }
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let w = small_workload(60, 2);
    let mut cfg = shared(Configuration::B, 2);
    cfg.arrival.process = ArrivalProcess::Poisson;
    let a = run(&cfg, &w).unwrap();
    let b = run(&cfg, &w).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(serde_json::to_string(&a.0).unwrap(), serde_json::to_string(&b.0).unwrap());
    cfg.seed += 1;
    assert_ne!(run(&cfg, &w).unwrap().1, a.1);
}

#[test]
fn per_document_keys_cover_each_doc() {
    let w = small_workload(30, 2);
    let mut cfg = shared(Configuration::A, 2);
    cfg.key_scheme = ragdcache::prefetch::KeyScheme::PerDocument;
    let (_, records) = run(&cfg, &w).unwrap();
    check_invariants(&cfg, w.len(), &records);
}

#[test]
fn single_instance_cache_toggles_hits() {
    let cfg = ScenarioConfig::builtin();
    let w = small_workload(50, 1);
    for cache in [false, true] {
        let sim = cfg.single_config("opt-1.3b", 4, cache, 1).unwrap();
        let (report, records) = run_single_instance(&sim, &w).unwrap();
        assert_eq!(records.len(), 50);
        assert!(records.iter().all(|r| r.is_hit() == cache));
        assert!(records.iter().all(|r| !cache || r.kv_load + r.prefill < r.full_prefill));
        assert!(report.throughput > 0.0);
    }
}

#[test]
fn topology_errors_are_reported() {
    let mut cfg = shared(Configuration::A, 1);
    cfg.devices.retain(|d| d.kind != ragdcache::cost::DeviceKind::GeneratorGpu);
    assert!(run(&cfg, &small_workload(5, 1)).is_err());
    let cfg = shared(Configuration::Baseline, 3);
    assert!(run(&cfg, &small_workload(5, 1)).is_err());
    let sweep = ScenarioConfig::builtin().sweep_config(1).unwrap();
    assert!(sweep_rate(&sweep, &small_workload(5, 1), &[2.0, 1.0]).is_err());
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Uniform arrivals and a hand-built workload keep every operation exact,
/// so the records are stable across platforms. Set UPDATE_GOLDEN=1 to
/// rewrite after an intended model change.
#[test]
fn golden_records() {
    // Enough distinct combinations and load that queries queue past the
    // prefetch threshold.
    let w: Vec<WorkItem> = (0..24u64)
        .map(|i| WorkItem::resolved(i, vec![i % 11, 100 + i % 7], 32, vec![100, 100]))
        .collect();
    let mut out = String::new();
    for c in [Configuration::Baseline, Configuration::A, Configuration::B] {
        let mut cfg = shared(c, 2);
        cfg.arrival.rate = 400.0;
        let (_, records) = run(&cfg, &w).unwrap();
        for r in records {
            out.push_str(&format!("{c:?} {}\n", serde_json::to_string(&r).unwrap()));
        }
    }
    let path = golden_path("shared_k2_uniform.txt");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &out).unwrap();
    }
    let expected = std::fs::read_to_string(&path).expect("golden file; run with UPDATE_GOLDEN=1 to create");
    assert!(out == expected, "records differ from {}", path.display());
}
