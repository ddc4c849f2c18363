//! Fits the free parameters of `configs/paper.json` and rewrites the file.
//!
//! cargo run --release --example calibrate [-- path/to/paper.json]

use std::path::PathBuf;

use ragdcache::calibrate::calibrate;
use ragdcache::config::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/paper.json")));
    let mut cfg = ScenarioConfig::load(&path)?;
    let report = calibrate(&mut cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    std::fs::write(&path, cfg.to_json_pretty())?;
    println!("wrote {}", path.display());
    Ok(())
}
