//! Packet delivery ratio per distance bin, run summaries and plot series.
//!
//! Without a sender log the total number of messages sent is inferred from
//! sequence numbers: a receiver that logged seqs {1, 5} must have missed 2, 3
//! and 4, so 2 of 5 were delivered. Each receiver's records are split into
//! runs of consecutive records in the same distance bin; a run's window is the
//! range of sequences after the previous run's window up to the highest seq in
//! the run. That estimate is optimistic when the last messages at a position
//! were all lost, which is what the sender-log mode corrects.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::record::RangeTestRecord;
use super::senderlog::SenderLogEntry;
use super::AnalysisError;
use crate::mesh::NodeId;

pub const DEFAULT_BIN_WIDTH_M: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TotalsMode {
    /// Totals inferred from the highest received sequence.
    Inferred,
    /// Totals taken from the sender's log.
    SenderLog,
}

/// Where the "messages sent" denominator comes from.
#[derive(Debug, Clone, Copy)]
pub enum SenderTotals<'a> {
    Inferred,
    /// Only the sender's final sequence number is known; each receiver's last
    /// window is extended to it.
    Total(u32),
    Log(&'a [SenderLogEntry]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedPdr {
    pub low_m: f64,
    pub high_m: f64,
    pub received: u64,
    pub total: u64,
    /// `None` when the bin saw no traffic.
    pub pdr: Option<f64>,
}

impl BinnedPdr {
    fn new(index: usize, width: f64, received: u64, total: u64) -> Self {
        Self {
            low_m: index as f64 * width,
            high_m: (index + 1) as f64 * width,
            received,
            total,
            pdr: (total > 0).then(|| 100.0 * received as f64 / total as f64),
        }
    }

    pub fn contains(&self, distance_m: f64) -> bool {
        distance_m >= self.low_m && distance_m < self.high_m
    }
}

fn bin_index(distance_m: f64, width: f64) -> usize {
    (distance_m.max(0.0) / width).floor() as usize
}

fn by_node(records: &[RangeTestRecord]) -> BTreeMap<NodeId, Vec<&RangeTestRecord>> {
    let mut map: BTreeMap<NodeId, Vec<&RangeTestRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.node_id).or_default().push(r);
    }
    for list in map.values_mut() {
        list.sort_by(|a, b| a.seq.cmp(&b.seq).then(a.time.cmp(&b.time)));
    }
    map
}

pub fn pdr_bins(
    records: &[RangeTestRecord],
    totals: SenderTotals<'_>,
    bin_width_m: f64,
) -> Result<Vec<BinnedPdr>, AnalysisError> {
    if !(bin_width_m > 0.0) || !bin_width_m.is_finite() {
        return Err(AnalysisError::BinWidth(bin_width_m));
    }
    // bin index -> (received, total)
    let mut acc: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    match totals {
        SenderTotals::Log(log) => {
            let received: BTreeSet<(NodeId, u32)> = records.iter().map(|r| (r.node_id, r.seq)).collect();
            let sent: BTreeMap<(NodeId, u32), f64> = log.iter().map(|e| ((e.node_id, e.seq), e.distance_m)).collect();
            for (&key, &d) in &sent {
                let slot = acc.entry(bin_index(d, bin_width_m)).or_default();
                slot.1 += 1;
                if received.contains(&key) {
                    slot.0 += 1;
                }
            }
            // Receptions the sender never logged (should not happen) still count
            // toward their own bin so they are not silently lost.
            for r in records {
                if !sent.contains_key(&(r.node_id, r.seq)) {
                    let slot = acc.entry(bin_index(r.distance_m, bin_width_m)).or_default();
                    slot.0 += 1;
                    slot.1 += 1;
                }
            }
        }
        SenderTotals::Inferred | SenderTotals::Total(_) => {
            let sender_max = match totals {
                SenderTotals::Total(t) => Some(t),
                _ => None,
            };
            for list in by_node(records).values() {
                let mut window_end = 0u32;
                let mut i = 0;
                while i < list.len() {
                    let bin = bin_index(list[i].distance_m, bin_width_m);
                    let mut seqs = BTreeSet::new();
                    let mut j = i;
                    while j < list.len() && bin_index(list[j].distance_m, bin_width_m) == bin {
                        seqs.insert(list[j].seq);
                        j += 1;
                    }
                    let mut hi = *seqs.last().expect("run is non-empty");
                    if j == list.len() {
                        if let Some(t) = sender_max {
                            hi = hi.max(t);
                        }
                    }
                    let slot = acc.entry(bin).or_default();
                    slot.0 += seqs.range(window_end + 1..).count() as u64;
                    slot.1 += u64::from(hi.saturating_sub(window_end));
                    window_end = window_end.max(hi);
                    i = j;
                }
            }
        }
    }
    let Some(&last) = acc.keys().next_back() else {
        return Ok(Vec::new());
    };
    Ok((0..=last)
        .map(|i| {
            let (rx, tot) = acc.get(&i).copied().unwrap_or_default();
            BinnedPdr::new(i, bin_width_m, rx, tot)
        })
        .collect())
}

/// True when delivery stops abruptly: the last bin with receptions has a
/// positive PDR and the bin after it carried traffic of which nothing arrived.
pub fn abrupt_cutoff(bins: &[BinnedPdr]) -> bool {
    let Some(last_rx) = bins.iter().rposition(|b| b.received > 0) else {
        return false;
    };
    match bins.get(last_rx + 1) {
        Some(next) => bins[last_rx].pdr.unwrap_or(0.0) > 0.0 && next.total > 0 && next.received == 0,
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigLabels {
    pub frequency: String,
    pub channel: String,
}

impl ConfigLabels {
    pub fn new(frequency: impl Into<String>, channel: impl Into<String>) -> Self {
        Self {
            frequency: frequency.into(),
            channel: channel.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub frequency: String,
    pub channel: String,
    pub mean_snr_db: Option<f64>,
    pub mean_rssi_dbm: Option<f64>,
    pub max_distance_m: f64,
    pub overall_pdr_percent: f64,
    pub records: usize,
}

pub const SUMMARY_HEADER: &str = "frequency,channel,mean_snr_db,mean_rssi_dbm,max_distance_m,overall_pdr_percent";

impl SummaryRow {
    /// Table-style line with two decimals.
    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.2},{:.2}",
            self.frequency,
            self.channel,
            f(self.mean_snr_db),
            f(self.mean_rssi_dbm),
            self.max_distance_m,
            self.overall_pdr_percent
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Means over present values, maximum received distance, and the overall
/// delivery ratio. Returns `None` for an empty run.
pub fn summarize(records: &[RangeTestRecord], labels: &ConfigLabels, totals: SenderTotals<'_>) -> Option<SummaryRow> {
    if records.is_empty() {
        return None;
    }
    let (received, total) = match totals {
        SenderTotals::Log(log) => {
            let sent: BTreeSet<(NodeId, u32)> = log.iter().map(|e| (e.node_id, e.seq)).collect();
            let got: BTreeSet<(NodeId, u32)> = records.iter().map(|r| (r.node_id, r.seq)).collect();
            (got.len() as u64, sent.union(&got).count() as u64)
        }
        _ => {
            let cap = match totals {
                SenderTotals::Total(t) => t,
                _ => 0,
            };
            by_node(records).values().fold((0u64, 0u64), |(rx, tot), list| {
                let distinct: BTreeSet<u32> = list.iter().map(|r| r.seq).collect();
                let hi = (*distinct.last().unwrap()).max(cap);
                (rx + distinct.len() as u64, tot + u64::from(hi))
            })
        }
    };
    Some(SummaryRow {
        frequency: labels.frequency.clone(),
        channel: labels.channel.clone(),
        mean_snr_db: mean(records.iter().filter_map(|r| r.snr_db)),
        mean_rssi_dbm: mean(records.iter().filter_map(|r| r.rssi_dbm)),
        max_distance_m: records.iter().map(|r| r.distance_m).fold(0.0, f64::max),
        overall_pdr_percent: if total == 0 {
            0.0
        } else {
            100.0 * received as f64 / total as f64
        },
        records: records.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rssi,
    Snr,
}

impl std::str::FromStr for Metric {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rssi" => Ok(Metric::Rssi),
            "snr" => Ok(Metric::Snr),
            other => Err(AnalysisError::Metric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub distance_m: f64,
    pub value: f64,
    pub node_id: NodeId,
    pub hops: u8,
}

/// Points sorted by distance; ties keep time order. Records without the
/// metric are skipped.
pub fn series(records: &[RangeTestRecord], metric: Metric) -> Vec<SeriesPoint> {
    let mut picked: Vec<&RangeTestRecord> = records
        .iter()
        .filter(|r| match metric {
            Metric::Rssi => r.rssi_dbm.is_some(),
            Metric::Snr => r.snr_db.is_some(),
        })
        .collect();
    picked.sort_by_key(|r| r.time);
    picked.sort_by(|a, b| a.distance_m.total_cmp(&b.distance_m));
    picked
        .into_iter()
        .map(|r| SeriesPoint {
            distance_m: r.distance_m,
            value: match metric {
                Metric::Rssi => r.rssi_dbm.unwrap(),
                Metric::Snr => r.snr_db.unwrap(),
            },
            node_id: r.node_id,
            hops: r.hops,
        })
        .collect()
}

pub fn write_bins_csv<W: Write>(bins: &[BinnedPdr], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["low_m", "high_m", "received", "total", "pdr_percent"])?;
    for b in bins {
        w.write_record([
            b.low_m.to_string(),
            b.high_m.to_string(),
            b.received.to_string(),
            b.total.to_string(),
            b.pdr.map(|p| format!("{p:.2}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_csv<W: Write>(points: &[SeriesPoint], metric: Metric, out: W) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let name = match metric {
        Metric::Rssi => "rssi_dbm",
        Metric::Snr => "snr_db",
    };
    w.write_record(["distance_m", name, "node_id", "hops"])?;
    for p in points {
        w.write_record([
            p.distance_m.to_string(),
            p.value.to_string(),
            p.node_id.to_string(),
            p.hops.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> Result<(), AnalysisError> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}
