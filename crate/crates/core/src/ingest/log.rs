//! Append-only session logs.
//!
//! A session directory holds one file per stream kind. Every line starts with
//! a session-wide sequence number, so the original interleaving can be
//! rebuilt by merging the files on it. Lines are tab separated:
//!
//! ```text
//! rssi.log       seq  t_ms  tech  source_id  rssi_dbm  tag_id
//! labels.log     seq  t_ms  x_px  y_px  session_id
//! positions.log  seq  t_ms  tag_id  P  x_px  y_px  room|-  model|label
//! positions.log  seq  t_ms  tag_id  G
//! ```
//!
//! Reals are written in shortest round-trip form, so reading a log and
//! writing it again reproduces it byte for byte.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{IngestError, LabelSample, RssiSample, Tech};

pub const RSSI_FILE: &str = "rssi.log";
pub const LABEL_FILE: &str = "labels.log";
pub const POSITION_FILE: &str = "positions.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionSource {
    Model,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    pub t_ms: i64,
    pub tag_id: String,
    pub x_px: f64,
    pub y_px: f64,
    pub room: Option<String>,
    pub source: PositionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Rssi(RssiSample),
    Label(LabelSample),
    Position(PositionRecord),
    Gap { t_ms: i64, tag_id: String },
}

impl LogRecord {
    pub fn t_ms(&self) -> i64 {
        match self {
            LogRecord::Rssi(s) => s.t_ms,
            LogRecord::Label(l) => l.t_ms,
            LogRecord::Position(p) => p.t_ms,
            LogRecord::Gap { t_ms, .. } => *t_ms,
        }
    }

    fn file_name(&self) -> &'static str {
        match self {
            LogRecord::Rssi(_) => RSSI_FILE,
            LogRecord::Label(_) => LABEL_FILE,
            LogRecord::Position(_) | LogRecord::Gap { .. } => POSITION_FILE,
        }
    }
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

fn encode(seq: u64, rec: &LogRecord) -> String {
    match rec {
        LogRecord::Rssi(s) => format!(
            "{seq}\t{}\t{}\t{}\t{}\t{}",
            s.t_ms,
            s.tech,
            clean(&s.source_id),
            s.rssi_dbm,
            clean(&s.tag_id)
        ),
        LogRecord::Label(l) => format!("{seq}\t{}\t{}\t{}\t{}", l.t_ms, l.x_px, l.y_px, clean(&l.session_id)),
        LogRecord::Position(p) => format!(
            "{seq}\t{}\t{}\tP\t{}\t{}\t{}\t{}",
            p.t_ms,
            clean(&p.tag_id),
            p.x_px,
            p.y_px,
            p.room.as_deref().map(clean).unwrap_or_else(|| "-".into()),
            match p.source {
                PositionSource::Model => "model",
                PositionSource::Label => "label",
            }
        ),
        LogRecord::Gap { t_ms, tag_id } => format!("{seq}\t{t_ms}\t{}\tG", clean(tag_id)),
    }
}

fn bad(path: &Path, line: usize, reason: &str) -> IngestError {
    IngestError::malformed(reason).at(path, line)
}

fn decode(path: &Path, file: &str, line_no: usize, line: &str) -> Result<(u64, LogRecord), IngestError> {
    let f: Vec<&str> = line.split('\t').collect();
    let num = |i: usize| -> Result<f64, IngestError> {
        f.get(i)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| bad(path, line_no, "bad real field"))
    };
    let int = |i: usize| -> Result<i64, IngestError> {
        f.get(i)
            .and_then(|s| s.parse::<i64>().ok())
            .ok_or_else(|| bad(path, line_no, "bad integer field"))
    };
    let text = |i: usize| -> Result<String, IngestError> {
        f.get(i)
            .map(|s| (*s).to_owned())
            .ok_or_else(|| bad(path, line_no, "missing field"))
    };
    let seq = f
        .first()
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| bad(path, line_no, "bad sequence number"))?;
    let t_ms = int(1)?;
    let rec = match file {
        RSSI_FILE => LogRecord::Rssi(RssiSample {
            t_ms,
            tech: text(2)?.parse::<Tech>().map_err(|e| e.at(path, line_no))?,
            source_id: text(3)?,
            rssi_dbm: num(4)?,
            tag_id: text(5)?,
        }),
        LABEL_FILE => LogRecord::Label(LabelSample {
            t_ms,
            x_px: num(2)?,
            y_px: num(3)?,
            session_id: text(4)?,
        }),
        _ => match f.get(3).copied() {
            Some("G") => LogRecord::Gap { t_ms, tag_id: text(2)? },
            Some("P") => LogRecord::Position(PositionRecord {
                t_ms,
                tag_id: text(2)?,
                x_px: num(4)?,
                y_px: num(5)?,
                room: match text(6)?.as_str() {
                    "-" => None,
                    r => Some(r.to_owned()),
                },
                source: match text(7)?.as_str() {
                    "model" => PositionSource::Model,
                    "label" => PositionSource::Label,
                    _ => return Err(bad(path, line_no, "bad position source")),
                },
            }),
            _ => return Err(bad(path, line_no, "bad position kind")),
        },
    };
    Ok((seq, rec))
}

/// Writer for one session directory. Existing logs are appended to.
#[derive(Debug)]
pub struct SessionLog {
    dir: PathBuf,
    next_seq: u64,
    rssi: BufWriter<File>,
    labels: BufWriter<File>,
    positions: BufWriter<File>,
}

impl SessionLog {
    pub fn open(dir: &Path) -> Result<Self, IngestError> {
        std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let next_seq = read_session(dir)?.last().map_or(0, |(s, _)| s + 1);
        let open = |name: &str| -> Result<BufWriter<File>, IngestError> {
            let path = dir.join(name);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map(BufWriter::new)
                .map_err(|source| IngestError::Io { path, source })
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            next_seq,
            rssi: open(RSSI_FILE)?,
            labels: open(LABEL_FILE)?,
            positions: open(POSITION_FILE)?,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, rec: &LogRecord) -> Result<u64, IngestError> {
        let seq = self.next_seq;
        let line = encode(seq, rec);
        let name = rec.file_name();
        let w = match name {
            RSSI_FILE => &mut self.rssi,
            LABEL_FILE => &mut self.labels,
            _ => &mut self.positions,
        };
        writeln!(w, "{line}").map_err(|source| IngestError::Io {
            path: self.dir.join(name),
            source,
        })?;
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn flush(&mut self) -> Result<(), IngestError> {
        for (w, name) in [
            (&mut self.rssi, RSSI_FILE),
            (&mut self.labels, LABEL_FILE),
            (&mut self.positions, POSITION_FILE),
        ] {
            w.flush().map_err(|source| IngestError::Io {
                path: self.dir.join(name),
                source,
            })?;
        }
        Ok(())
    }
}

impl Drop for SessionLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Reads a session directory back, merged into original append order.
pub fn read_session(dir: &Path) -> Result<Vec<(u64, LogRecord)>, IngestError> {
    let mut out = Vec::new();
    for name in [RSSI_FILE, LABEL_FILE, POSITION_FILE] {
        let path = dir.join(name);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(source) => return Err(IngestError::Io { path, source }),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| IngestError::Io {
                path: path.clone(),
                source,
            })?;
            if line.is_empty() {
                continue;
            }
            out.push(decode(&path, name, i + 1, &line)?);
        }
    }
    out.sort_by_key(|(seq, _)| *seq);
    Ok(out)
}
