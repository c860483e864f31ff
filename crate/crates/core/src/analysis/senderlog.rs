//! The sender's own log: one row per transmitted sequence per tracked
//! receiver, with that receiver's distance at send time.

use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::record::parse_time;
use super::AnalysisError;
use crate::mesh::NodeId;

pub const SENDER_LOG_HEADER: &str = "time_iso8601,seq,node_id,distance_m";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderLogEntry {
    pub time: DateTime<Utc>,
    pub seq: u32,
    pub node_id: NodeId,
    pub distance_m: f64,
}

pub fn write_sender_log<W: Write>(entries: &[SenderLogEntry], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(SENDER_LOG_HEADER.split(','))?;
    for e in entries {
        w.write_record([
            e.time.to_rfc3339_opts(SecondsFormat::Millis, true),
            e.seq.to_string(),
            e.node_id.to_string(),
            e.distance_m.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sender_log_string(entries: &[SenderLogEntry]) -> String {
    let mut buf = Vec::new();
    write_sender_log(entries, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_sender_log<R: Read>(input: R) -> Result<Vec<SenderLogEntry>, AnalysisError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != SENDER_LOG_HEADER {
        return Err(AnalysisError::Import(format!(
            "sender log header {header:?} not recognised"
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |what: &str| AnalysisError::Import(format!("sender log line {line}: bad {what}"));
        out.push(SenderLogEntry {
            time: parse_time(&row[0]).map_err(|_| bad("time"))?,
            seq: row[1].parse().map_err(|_| bad("seq"))?,
            node_id: row[2].parse().map_err(|_| bad("node_id"))?,
            distance_m: row[3].parse().map_err(|_| bad("distance"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn round_trip() {
        let entries = vec![
            SenderLogEntry {
                time: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
                seq: 1,
                node_id: 2,
                distance_m: 50.0,
            },
            SenderLogEntry {
                time: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 30).unwrap(),
                seq: 2,
                node_id: 2,
                distance_m: 100.5,
            },
        ];
        let text = sender_log_string(&entries);
        assert!(text.starts_with(SENDER_LOG_HEADER));
        assert_eq!(read_sender_log(text.as_bytes()).unwrap(), entries);
        assert!(read_sender_log("a,b\n".as_bytes()).is_err());
    }
}
