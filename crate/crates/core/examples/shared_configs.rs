//! Two GPUs shared three ways: both inferring with no cache, one inferring
//! and one generating caches, or both inferring with the CPU generating.
//!
//! cargo run --release --example shared_configs

use ragdcache::config::ScenarioConfig;
use ragdcache::prefetch::Configuration;
use ragdcache::sim::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::builtin();
    for k in [1, 2] {
        let workload = cfg.shared_workload(k);
        for c in [Configuration::Baseline, Configuration::A, Configuration::B] {
            let (report, _) = run(&cfg.shared_config(c, k, 1)?, &workload)?;
            let per_try: Vec<String> = report
                .per_try
                .iter()
                .map(|t| format!("{:.1} q/s hit {:.2}", t.throughput, t.disk_hit_ratio + t.memory_hit_ratio))
                .collect();
            println!(
                "k={k} {:<8} {:>6.2} q/s  latency {:>6.2} s  generations {:>4}  tries [{}]",
                format!("{c:?}"),
                report.mean_try_throughput(),
                report.mean_latency,
                report.generations,
                per_try.join(", ")
            );
        }
    }
    Ok(())
}
