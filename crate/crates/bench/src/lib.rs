//! ResNet-50 layer table, FLOP accounting and the timing/verification runner
//! behind the `bench` binary.

pub mod efficiency;
pub mod flops;
pub mod suite;
pub mod table;

pub use efficiency::{weighted_efficiency, weighted_rate};
pub use flops::{flops_conv, flops_fc, flops_lstm_fwd};
pub use suite::{run_suite, write_csv, BenchResult, SuiteConfig, Workload, CSV_HEADER};
pub use table::{derive_occurrence_counts, parse_layers, resnet50_table, LayerRecord};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] brgemm_core::Error),
    #[error("no results to aggregate")]
    Empty,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
