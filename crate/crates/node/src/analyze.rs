use std::path::PathBuf;

use offgrid_core::analysis::{
    import_meshtastic_csv, pdr_bins, read_sender_log, series, summarize, write_bins_csv, write_series_csv,
    write_summary_csv, AnalysisError, ConfigLabels, Metric, SenderTotals, TotalsMode, DEFAULT_BIN_WIDTH_M,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Emit {
    Summary,
    Bins,
    Series,
}

#[derive(Debug, Clone)]
pub struct AnalyzeRequest {
    pub input: PathBuf,
    pub bin_width_m: f64,
    pub mode: TotalsMode,
    pub sender_log: Option<PathBuf>,
    pub emit: Emit,
    pub metric: Metric,
    pub frequency: Option<String>,
    pub channel: Option<String>,
}

impl AnalyzeRequest {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            bin_width_m: DEFAULT_BIN_WIDTH_M,
            mode: TotalsMode::Inferred,
            sender_log: None,
            emit: Emit::Summary,
            metric: Metric::Rssi,
            frequency: None,
            channel: None,
        }
    }
}

/// Runs one analysis and returns the CSV text. Rejected input rows are
/// returned alongside so the caller can report them.
pub fn analyze(req: &AnalyzeRequest) -> Result<(String, Vec<String>), AnalysisError> {
    let report = import_meshtastic_csv(&req.input)?;
    let rejects = report
        .rejects
        .iter()
        .map(|r| format!("line {}: {}", r.line, r.reason))
        .collect();
    let log = match (&req.sender_log, req.mode) {
        (Some(path), _) => {
            Some(read_sender_log(std::fs::File::open(path).map_err(|e| {
                AnalysisError::Import(format!("{}: {e}", path.display()))
            })?)?)
        }
        (None, TotalsMode::SenderLog) => {
            return Err(AnalysisError::Import("sender-log mode needs --sender-log".into()))
        }
        (None, TotalsMode::Inferred) => None,
    };
    let totals = match (&log, req.mode) {
        (Some(log), TotalsMode::SenderLog) => SenderTotals::Log(log),
        _ => SenderTotals::Inferred,
    };
    let stem = req
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    let labels = ConfigLabels::new(
        req.frequency.clone().unwrap_or_else(|| stem.clone()),
        req.channel.clone().unwrap_or_else(|| "-".into()),
    );
    let mut out = Vec::new();
    match req.emit {
        Emit::Summary => {
            let rows: Vec<_> = summarize(&report.records, &labels, totals).into_iter().collect();
            write_summary_csv(&rows, &mut out)?;
        }
        Emit::Bins => write_bins_csv(&pdr_bins(&report.records, totals, req.bin_width_m)?, &mut out)?,
        Emit::Series => write_series_csv(&series(&report.records, req.metric), req.metric, &mut out)?,
    }
    Ok((String::from_utf8(out).expect("csv writers emit utf-8"), rejects))
}
