//! Splits one instance's latency into queueing, processing and network as
//! the arrival rate grows past what the instance can serve.
//!
//! cargo run --release --example sweep_rate

use ragdcache::config::ScenarioConfig;
use ragdcache::sim::{sweep_rate, SweepRow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::builtin();
    let rows = sweep_rate(&cfg.sweep_config(1)?, &cfg.sweep_workload(), &cfg.sweep.rates)?;
    println!("capacity {:.2} q/s", rows[0].service_capacity());
    println!("{}", SweepRow::CSV_HEADER);
    for r in &rows {
        println!("{}", r.csv_line());
    }
    Ok(())
}
