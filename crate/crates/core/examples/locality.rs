//! Query locality of the synthetic workload: how small a share of the
//! corpus serves half of all top-1 retrievals.
//!
//! cargo run --example locality

use ragdcache::config::ScenarioConfig;
use ragdcache::workload::{locality_curve, zipf_stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::builtin();
    let w = &cfg.workload;
    for s in [0.0, 0.5, w.zipf_s, 1.5] {
        let top1: Vec<u64> = zipf_stream(w.n_docs, s, 20_000, w.seed)
            .iter()
            .filter_map(|q| q.top1())
            .collect();
        let curve = locality_curve(&top1, Some(w.n_docs))?;
        println!(
            "s = {s:.3}: half the queries hit {:>5.1}% of the corpus, 80% hit {:>5.1}%",
            100.0 * curve.coverage_at(0.5),
            100.0 * curve.coverage_at(0.8)
        );
    }
    Ok(())
}
