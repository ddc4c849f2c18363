//! Batched single-instance serving with and without the document cache,
//! for three model sizes; then one modeled-compute run with real disk IO.
//!
//! cargo run --release --example single_instance

use ragdcache::config::ScenarioConfig;
use ragdcache::sim::{run_single_instance, run_single_instance_real_io};
use ragdcache::store::KvStore;
use ragdcache::workload::WorkItem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::builtin();
    let workload = cfg.single_workload();
    for model in &cfg.single.models {
        print!("{model:<10}");
        for &b in &cfg.single.batch_sizes {
            let off = run_single_instance(&cfg.single_config(model, b, false, 1)?, &workload)?.0;
            let on = run_single_instance(&cfg.single_config(model, b, true, 1)?, &workload)?.0;
            print!("  b={b}: {:.2} -> {:.2} q/s", off.throughput, on.throughput);
        }
        println!();
    }

    // Real IO: a small corpus with short chunks keeps the store to a few MB.
    let dir = tempfile::tempdir()?;
    let store = KvStore::open(dir.path(), 0)?;
    let small: Vec<WorkItem> = (0..60).map(|i| WorkItem::resolved(i, vec![i % 6], 16, vec![16])).collect();
    let mut sim = cfg.single_config("opt-1.3b", 4, true, 1)?;
    sim.memory_capacity_bytes = 0;
    store.set_memory_capacity(0);
    let (report, records) = run_single_instance_real_io(&sim, &small, &store)?;
    let hit = records.iter().find(|r| r.is_hit()).unwrap();
    println!(
        "real IO: {} queries, disk hit ratio {:.2}, batch kv load {:.6} s (measured), prefill {:.6} s, full prefill {:.6} s",
        report.queries, report.disk_hit_ratio, hit.kv_load, hit.prefill, hit.full_prefill
    );
    Ok(())
}
