//! Range-test data reduction: record import/export, PDR per distance bin,
//! per-configuration summaries and RSSI/SNR series.

mod pdr;
mod record;
mod senderlog;

pub use pdr::{
    abrupt_cutoff, pdr_bins, series, summarize, write_bins_csv, write_series_csv, write_summary_csv, BinnedPdr,
    ConfigLabels, Metric, SenderTotals, SeriesPoint, SummaryRow, TotalsMode, DEFAULT_BIN_WIDTH_M, SUMMARY_HEADER,
};
pub use record::{
    canonical_csv_string, import_meshtastic_csv, import_meshtastic_reader, parse_node_id, parse_time,
    write_canonical_csv, CsvFormat, ImportReport, RangeTestRecord, RejectedRow, CANONICAL_HEADER,
};
pub use senderlog::{read_sender_log, sender_log_string, write_sender_log, SenderLogEntry, SENDER_LOG_HEADER};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("import failed: {0}")]
    Import(String),
    #[error("bin width must be a positive number, got {0}")]
    BinWidth(f64),
    #[error("unknown metric {0:?} (expected rssi or snr)")]
    Metric(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
