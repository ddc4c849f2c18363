use serde::{Deserialize, Serialize};

use super::metrics::mean;
use super::{run, SimConfig, SimError};
use crate::workload::WorkItem;

/// Mean latency decomposition at one offered rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub queries: usize,
    pub mean_queue_wait: f64,
    pub mean_processing: f64,
    pub mean_network: f64,
    pub mean_latency: f64,
    pub queue_share: f64,
    pub processing_share: f64,
    pub network_share: f64,
    pub throughput: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "rate,queries,mean_queue_wait,mean_processing,mean_network,mean_latency,queue_share,processing_share,network_share,throughput";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.rate,
            self.queries,
            self.mean_queue_wait,
            self.mean_processing,
            self.mean_network,
            self.mean_latency,
            self.queue_share,
            self.processing_share,
            self.network_share,
            self.throughput
        )
    }

    /// Queries per second one instance can serve at this row's mean
    /// processing time.
    pub fn service_capacity(&self) -> f64 {
        1.0 / self.mean_processing
    }
}

/// Runs the same workload at each rate (ascending) and splits mean latency
/// into queue wait, processing and network.
pub fn sweep_rate(config: &SimConfig, workload: &[WorkItem], rates: &[f64]) -> Result<Vec<SweepRow>, SimError> {
    if rates.windows(2).any(|w| w[0] > w[1]) {
        return Err(SimError::Topology("rates must be sorted ascending".into()));
    }
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut cfg = config.clone();
        cfg.arrival.rate = rate;
        let (report, records) = run(&cfg, workload)?;
        let queue = mean(records.iter().map(|r| r.queue_wait));
        let processing = mean(records.iter().map(|r| r.completion - r.dispatch - r.network));
        let network = mean(records.iter().map(|r| r.network));
        let latency = mean(records.iter().map(|r| r.latency()));
        rows.push(SweepRow {
            rate,
            queries: records.len(),
            mean_queue_wait: queue,
            mean_processing: processing,
            mean_network: network,
            mean_latency: latency,
            queue_share: queue / latency,
            processing_share: processing / latency,
            network_share: network / latency,
            throughput: report.throughput,
        });
    }
    Ok(rows)
}
