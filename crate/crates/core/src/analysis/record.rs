//! Range-test records and their CSV formats.
//!
//! The canonical export has the header
//! `time_iso8601,node_id,seq,distance_m,rssi_dbm,snr_db,hops`. Missing RSSI or
//! SNR values are written as empty fields. Meshtastic-style exports (sequence
//! inside a `payload` column as `seq N`, a `distance` column, `rx snr`) are
//! accepted by the importer as well.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::mesh::{parse_range_test_payload, NodeId};

pub const CANONICAL_HEADER: &str = "time_iso8601,node_id,seq,distance_m,rssi_dbm,snr_db,hops";

/// One received numbered message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeTestRecord {
    pub time: DateTime<Utc>,
    pub node_id: NodeId,
    pub seq: u32,
    pub distance_m: f64,
    pub rssi_dbm: Option<f64>,
    pub snr_db: Option<f64>,
    pub hops: u8,
}

impl RangeTestRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.seq == 0 {
            return Err("sequence numbers start at 1".into());
        }
        if !(self.distance_m >= 0.0) || !self.distance_m.is_finite() {
            return Err(format!("distance {} must be a finite value >= 0", self.distance_m));
        }
        Ok(())
    }

    pub fn time_iso8601(&self) -> String {
        self.time.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    fn canonical_fields(&self) -> [String; 7] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.time_iso8601(),
            self.node_id.to_string(),
            self.seq.to_string(),
            self.distance_m.to_string(),
            opt(self.rssi_dbm),
            opt(self.snr_db),
            self.hops.to_string(),
        ]
    }

    /// Length in bytes of this record's canonical CSV line, including LF.
    pub fn canonical_line_len(&self) -> usize {
        let f = self.canonical_fields();
        f.iter().map(String::len).sum::<usize>() + f.len()
    }
}

pub fn write_canonical_csv<W: Write>(records: &[RangeTestRecord], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CANONICAL_HEADER.split(','))?;
    for r in records {
        w.write_record(r.canonical_fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn canonical_csv_string(records: &[RangeTestRecord]) -> String {
    let mut buf = Vec::new();
    write_canonical_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CsvFormat {
    Canonical,
    Meshtastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the input, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportReport {
    pub format: CsvFormat,
    pub records: Vec<RangeTestRecord>,
    pub rejects: Vec<RejectedRow>,
}

pub fn import_meshtastic_csv(path: &Path) -> Result<ImportReport, AnalysisError> {
    let file = File::open(path).map_err(|e| AnalysisError::Import(format!("{}: {e}", path.display())))?;
    import_meshtastic_reader(file, 0)
}

/// Imports either format. `default_node` is used when the export has no
/// receiver column (a Meshtastic file is one device's log).
pub fn import_meshtastic_reader<R: Read>(input: R, default_node: NodeId) -> Result<ImportReport, AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| AnalysisError::Import(format!("unreadable header: {e}")))?
        .clone();
    let cols: HashMap<String, usize> = headers.iter().enumerate().map(|(i, h)| (normalise(h), i)).collect();
    let find = |names: &[&str]| names.iter().find_map(|n| cols.get(*n).copied());

    let canonical = headers.iter().collect::<Vec<_>>().join(",") == CANONICAL_HEADER;
    let layout = if canonical {
        Layout {
            time: Some(0),
            date: None,
            node: Some(1),
            seq: SeqColumn::Plain(2),
            distance: 3,
            rssi: Some(4),
            snr: Some(5),
            hops: Some(6),
            hop_limit: None,
            hop_start: None,
        }
    } else {
        let seq = match (find(&["payload", "message", "text"]), find(&["seq"])) {
            (Some(i), _) => SeqColumn::Payload(i),
            (None, Some(i)) => SeqColumn::Plain(i),
            (None, None) => {
                return Err(AnalysisError::Import("header has no payload or seq column".into()));
            }
        };
        let distance = find(&["distance", "distance_m", "distance(m)", "distance (m)", "dist"])
            .ok_or_else(|| AnalysisError::Import("header has no distance column".into()))?;
        Layout {
            time: find(&[
                "time_iso8601",
                "timestamp",
                "rx time",
                "rx_time",
                "datetime",
                "date time",
                "time",
            ]),
            date: find(&["date"]),
            node: find(&["node_id", "rx node", "rx_node", "receiver", "to"]),
            seq,
            distance,
            rssi: find(&["rx rssi", "rx_rssi", "rssi", "rssi_dbm"]),
            snr: find(&["rx snr", "rx_snr", "snr", "snr_db"]),
            hops: find(&["hops"]),
            hop_limit: find(&["hop limit", "hop_limit"]),
            hop_start: find(&["hop start", "hop_start"]),
        }
    };

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejects.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match layout.parse(&row, default_node) {
            Ok(r) => match r.validate() {
                Ok(()) => records.push(r),
                Err(reason) => rejects.push(RejectedRow { line, reason }),
            },
            Err(reason) => rejects.push(RejectedRow { line, reason }),
        }
    }
    Ok(ImportReport {
        format: if canonical {
            CsvFormat::Canonical
        } else {
            CsvFormat::Meshtastic
        },
        records,
        rejects,
    })
}

fn normalise(h: &str) -> String {
    h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase()
}

enum SeqColumn {
    Plain(usize),
    Payload(usize),
}

struct Layout {
    time: Option<usize>,
    date: Option<usize>,
    node: Option<usize>,
    seq: SeqColumn,
    distance: usize,
    rssi: Option<usize>,
    snr: Option<usize>,
    hops: Option<usize>,
    hop_limit: Option<usize>,
    hop_start: Option<usize>,
}

impl Layout {
    fn parse(&self, row: &csv::StringRecord, default_node: NodeId) -> Result<RangeTestRecord, String> {
        let get = |i: usize| row.get(i).map(str::trim).filter(|s| !s.is_empty());
        let seq = match self.seq {
            SeqColumn::Plain(i) => get(i)
                .ok_or("missing seq")?
                .parse::<u32>()
                .map_err(|e| format!("bad seq: {e}"))?,
            SeqColumn::Payload(i) => {
                let payload = get(i).ok_or("missing payload")?;
                parse_range_test_payload(payload).ok_or_else(|| format!("payload {payload:?} is not `seq N`"))?
            }
        };
        let distance_m = get(self.distance)
            .ok_or("missing distance")?
            .parse::<f64>()
            .map_err(|e| format!("bad distance: {e}"))?;
        let opt_f64 = |col: Option<usize>, what: &str| -> Result<Option<f64>, String> {
            match col.and_then(get) {
                None => Ok(None),
                Some(s) => s.parse::<f64>().map(Some).map_err(|e| format!("bad {what}: {e}")),
            }
        };
        let rssi_dbm = opt_f64(self.rssi, "rssi")?;
        let snr_db = opt_f64(self.snr, "snr")?;
        let time = match (self.date.and_then(get), self.time.and_then(get)) {
            (Some(d), Some(t)) if !t.contains('-') => parse_time(&format!("{d} {t}")),
            (_, Some(t)) => parse_time(t),
            (Some(d), None) => parse_time(d),
            (None, None) => Err("missing time".into()),
        }?;
        let node_id = match self.node.and_then(get) {
            Some(s) => parse_node_id(s)?,
            None => default_node,
        };
        let hops = if let Some(h) = self.hops.and_then(get) {
            h.parse::<u8>().map_err(|e| format!("bad hops: {e}"))?
        } else if let (Some(start), Some(limit)) = (self.hop_start.and_then(get), self.hop_limit.and_then(get)) {
            let start: u8 = start.parse().map_err(|e| format!("bad hop start: {e}"))?;
            let limit: u8 = limit.parse().map_err(|e| format!("bad hop limit: {e}"))?;
            start.saturating_sub(limit) + 1
        } else {
            1
        };
        Ok(RangeTestRecord {
            time,
            node_id,
            seq,
            distance_m,
            rssi_dbm,
            snr_db,
            hops,
        })
    }
}

/// Accepts RFC 3339 and the common `YYYY-MM-DD HH:MM:SS` variants (UTC).
pub fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in [
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%d.%m.%Y %H:%M:%S",
        "%Y/%m/%d %H:%M:%S",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(Utc.from_utc_datetime(&t));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(Utc.from_utc_datetime(&d.and_time(NaiveTime::MIN)));
    }
    Err(format!("unrecognised time {s:?}"))
}

/// Decimal ids or Meshtastic `!hex` ids.
pub fn parse_node_id(s: &str) -> Result<NodeId, String> {
    if let Some(hex) = s.strip_prefix('!') {
        return u32::from_str_radix(hex, 16).map_err(|e| format!("bad node id {s:?}: {e}"));
    }
    s.parse::<u32>().map_err(|e| format!("bad node id {s:?}: {e}"))
}
