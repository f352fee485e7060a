//! Loading recorded datasets from disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::{parse_label_record, parse_rssi_record};
use super::{IngestError, LabelSample, RecordKind, RecordSchema, RssiSample, StreamSet};
use crate::floorplan::{FlatConfig, FloorPlan};

/// Rejections kept verbatim per file; the rest are only counted.
const MAX_KEPT_REJECTIONS: usize = 50;

#[derive(Debug, Clone)]
pub struct DataFile {
    pub path: PathBuf,
    pub schema: RecordSchema,
}

impl DataFile {
    pub fn new(path: impl Into<PathBuf>, schema: RecordSchema) -> Self {
        Self {
            path: path.into(),
            schema,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Abort on the first bad line instead of counting it.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

/// Per-file accounting. Blank lines are not records and are not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub kind: RecordKind,
    pub total_lines: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub samples: usize,
    /// Readings outside the technology's plausibility band (kept, not dropped).
    pub implausible: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: Vec<FileReport>,
    pub per_source: BTreeMap<String, SourceStats>,
    pub rssi_samples: usize,
    pub labels: usize,
    pub rejected: usize,
    /// Live only: samples that arrived after the reorder window closed.
    pub late_dropped: u64,
    /// Live only: malformed bus messages.
    pub malformed_messages: u64,
    /// Live only: connection outages as (lost_at_ms, restored_at_ms).
    pub connection_gaps: Vec<(i64, Option<i64>)>,
}

impl IngestReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rssi samples: {}", self.rssi_samples);
        let _ = writeln!(out, "labels:       {}", self.labels);
        let _ = writeln!(out, "rejected:     {}", self.rejected);
        for f in &self.files {
            let _ = writeln!(
                out,
                "  {} [{:?}] lines={} accepted={} rejected={}",
                f.path.display(),
                f.kind,
                f.total_lines,
                f.accepted,
                f.rejected
            );
            for r in f.rejections.iter().take(5) {
                let _ = writeln!(out, "    line {}: {}", r.line, r.reason);
            }
        }
        if !self.per_source.is_empty() {
            let _ = writeln!(out, "per source:");
            for (id, s) in &self.per_source {
                let _ = writeln!(out, "  {id:<20} samples={:<7} implausible={}", s.samples, s.implausible);
            }
        }
        if self.late_dropped > 0 || self.malformed_messages > 0 {
            let _ = writeln!(
                out,
                "late dropped: {}  malformed messages: {}",
                self.late_dropped, self.malformed_messages
            );
        }
        for (lost, back) in &self.connection_gaps {
            match back {
                Some(b) => {
                    let _ = writeln!(out, "connection gap: {lost} .. {b} ({} ms)", b - lost);
                }
                None => {
                    let _ = writeln!(out, "connection gap: {lost} .. (open)");
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub streams: StreamSet,
    /// Sorted by time, then file order, then line order.
    pub labels: Vec<LabelSample>,
    pub report: IngestReport,
}

enum Parsed {
    Rssi(RssiSample),
    Label(LabelSample),
}

struct ParsedFile {
    records: Vec<(usize, Parsed)>,
    report: FileReport,
}

fn parse_file(file: &DataFile, floorplan: Option<&FloorPlan>, opts: LoadOptions) -> Result<ParsedFile, IngestError> {
    let text = std::fs::read_to_string(&file.path).map_err(|source| IngestError::Io {
        path: file.path.clone(),
        source,
    })?;
    let mut report = FileReport {
        path: file.path.clone(),
        kind: file.schema.kind,
        total_lines: 0,
        accepted: 0,
        rejected: 0,
        rejections: Vec::new(),
    };
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.total_lines += 1;
        let line_no = idx + 1;
        let parsed = match file.schema.kind {
            RecordKind::Label => parse_label_record(line, &file.schema).and_then(|l| match floorplan {
                Some(fp) if !fp.contains(l.x_px, l.y_px) => Err(IngestError::LabelOutOfCanvas { x: l.x_px, y: l.y_px }),
                _ => Ok(Parsed::Label(l)),
            }),
            RecordKind::Uwb | RecordKind::Ble => parse_rssi_record(line, &file.schema).map(Parsed::Rssi),
        };
        match parsed {
            Ok(p) => {
                report.accepted += 1;
                records.push((line_no, p));
            }
            Err(e) if opts.strict => return Err(e.at(&file.path, line_no)),
            Err(e) => {
                report.rejected += 1;
                if report.rejections.len() < MAX_KEPT_REJECTIONS {
                    report.rejections.push(Rejection {
                        line: line_no,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
    Ok(ParsedFile { records, report })
}

/// Loads and merges recorded files. Files are parsed in parallel and merged
/// deterministically by timestamp, then file order, then line order.
pub fn load_dataset(
    files: &[DataFile],
    floorplan: Option<&FloorPlan>,
    opts: LoadOptions,
) -> Result<LoadedDataset, IngestError> {
    let parsed: Vec<ParsedFile> = files
        .par_iter()
        .map(|f| parse_file(f, floorplan, opts))
        .collect::<Result<_, _>>()?;

    let mut report = IngestReport::default();
    let mut samples: Vec<(i64, usize, usize, RssiSample)> = Vec::new();
    let mut labels: Vec<(i64, usize, usize, LabelSample)> = Vec::new();
    for (file_idx, pf) in parsed.into_iter().enumerate() {
        report.rejected += pf.report.rejected;
        report.files.push(pf.report);
        for (line, rec) in pf.records {
            match rec {
                Parsed::Rssi(s) => samples.push((s.t_ms, file_idx, line, s)),
                Parsed::Label(l) => labels.push((l.t_ms, file_idx, line, l)),
            }
        }
    }
    samples.sort_by_key(|(t, f, l, _)| (*t, *f, *l));
    labels.sort_by_key(|(t, f, l, _)| (*t, *f, *l));

    for (_, _, _, s) in &samples {
        let entry = report.per_source.entry(s.source_id.clone()).or_default();
        entry.samples += 1;
        if s.is_implausible() {
            entry.implausible += 1;
        }
    }
    report.rssi_samples = samples.len();
    report.labels = labels.len();
    if samples.is_empty() && labels.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    Ok(LoadedDataset {
        streams: StreamSet::from_samples(samples.into_iter().map(|(_, _, _, s)| s)),
        labels: labels.into_iter().map(|(_, _, _, l)| l).collect(),
        report,
    })
}

/// Files bound to a flat config, each with the schema implied by its section.
pub fn flat_data_files(cfg: &FlatConfig) -> Vec<DataFile> {
    let schema = |kind| {
        let mut s = RecordSchema::new(kind)
            .with_delimiter(cfg.data.delimiter)
            .with_epoch_unit(cfg.data.epoch_unit)
            .with_tag(cfg.data.tag.clone());
        s.default_session = session_from_tag(&cfg.data.tag);
        s
    };
    let mut files = Vec::new();
    let mut push = |paths: &[PathBuf], kind| {
        for p in paths {
            files.push(DataFile::new(cfg.resolve(p), schema(kind)));
        }
    };
    push(&cfg.data.labels, RecordKind::Label);
    push(&cfg.data.uwb, RecordKind::Uwb);
    push(&cfg.data.ble, RecordKind::Ble);
    files
}

fn session_from_tag(tag: &str) -> String {
    format!("recorded-{tag}")
}

pub fn load_flat(cfg: &FlatConfig, opts: LoadOptions) -> Result<LoadedDataset, IngestError> {
    load_dataset(&flat_data_files(cfg), Some(&cfg.floorplan), opts)
}

/// Convenience for tests and tools that build a dataset from one directory.
pub fn data_file(dir: &Path, name: &str, kind: RecordKind) -> DataFile {
    DataFile::new(dir.join(name), RecordSchema::new(kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const LABELS: &str = "\
2022-11-15\t15:16:19\t1668521779\t288\t525
2022-11-15\t15:16:19\t1668521779\t288\t525
2022-11-15\t15:16:24\t1668521784\t300\t520
2022-11-15\t15:16:26\t1668521786\t305\t527
2022-11-15\t15:16:26\t1668521786\t305\t527
2022-11-15\t15:16:26\t1668521786\t317\t528
";
    const UWB: &str = "\
1668519249\t2022-11-15\t14:34:09\t4842\t-95.53
1668519249\t2022-11-15\t14:34:09\t4908\t-90.9
1668519249\t2022-11-15\t14:34:09\t8139\t-91.75
1668519249\t2022-11-15\t14:34:09\t28079\t-82.29
1668519249\t2022-11-15\t14:34:09\t31176\t-84.37
1668519249\t2022-11-15\t14:34:09\t38719\t-92.97
";
    const BLE: &str = "\
1668519251\t-74\tc8:5b:4f:86:ed:a2
1668519256\t-73\tc8:5b:4f:86:ed:a2
1668519258\tinf\tc8:5b:4f:86:ed:a2
garbage line

1668519262\t-83\tc8:5b:4f:86:ed:a2
";

    fn write(dir: &Path, name: &str, body: &str) {
        let mut f = std::fs::File::create(dir.join(name)).unwrap();
        f.write_all(body.as_bytes()).unwrap();
    }

    fn files(dir: &Path) -> Vec<DataFile> {
        vec![
            data_file(dir, "labels.txt", RecordKind::Label),
            data_file(dir, "uwb.txt", RecordKind::Uwb),
            data_file(dir, "ble.txt", RecordKind::Ble),
        ]
    }

    #[test]
    fn loads_recorded_formats() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "labels.txt", LABELS);
        write(dir.path(), "uwb.txt", UWB);
        write(dir.path(), "ble.txt", BLE);
        let ds = load_dataset(&files(dir.path()), None, LoadOptions::default()).unwrap();
        assert_eq!(ds.labels.len(), 6);
        assert_eq!(ds.report.rssi_samples, 6 + 3);
        assert_eq!(ds.streams.len(), 7);
        assert_eq!(ds.report.rejected, 2);
        for f in &ds.report.files {
            assert_eq!(f.accepted + f.rejected, f.total_lines);
        }
        let ble = &ds.report.files[2];
        assert_eq!(ble.total_lines, 5);
        assert_eq!(ble.rejections[0].line, 3);
        assert_eq!(ble.rejections[1].line, 4);
        // equal-timestamp labels keep file order
        assert_eq!(ds.labels[5].x_px, 317.0);
    }

    #[test]
    fn strict_mode_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "labels.txt", LABELS);
        write(dir.path(), "uwb.txt", UWB);
        write(dir.path(), "ble.txt", BLE);
        let err = load_dataset(&files(dir.path()), None, LoadOptions { strict: true }).unwrap_err();
        match err {
            IngestError::AtLine { line, source, .. } => {
                assert_eq!(line, 3);
                assert!(matches!(*source, IngestError::NonFiniteRssi(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_files_are_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "labels.txt", "");
        write(dir.path(), "uwb.txt", "\n\n");
        write(dir.path(), "ble.txt", "");
        let err = load_dataset(&files(dir.path()), None, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::EmptyDataset));
        let err = load_dataset(&[], None, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, IngestError::EmptyDataset));
    }

    #[test]
    fn labels_validated_against_canvas() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "labels.txt", LABELS);
        let fp = FloorPlan::bare("small", 310, 600, 3100.0, 6000.0);
        let ds = load_dataset(
            &[data_file(dir.path(), "labels.txt", RecordKind::Label)],
            Some(&fp),
            LoadOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.labels.len(), 5);
        assert_eq!(ds.report.rejected, 1);
    }
}
