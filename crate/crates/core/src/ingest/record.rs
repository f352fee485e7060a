//! Text record formats for labels, UWB readings and BLE readings.
//!
//! Column orders:
//!
//! | kind  | columns                              |
//! |-------|--------------------------------------|
//! | LABEL | `date time epoch x_px y_px`          |
//! | UWB   | `epoch date time anchor_id rssi`     |
//! | BLE   | `epoch rssi mac`                     |

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

use super::IngestError;

/// Epoch values below this are taken to be seconds under [`EpochUnit::Auto`].
pub const AUTO_MILLIS_THRESHOLD: i64 = 1_000_000_000_000;

/// Plausible band for UWB RSSI readings, in dBm.
pub const UWB_PLAUSIBLE_DBM: (f64, f64) = (-120.0, -40.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tech {
    Uwb,
    Ble,
}

impl fmt::Display for Tech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tech::Uwb => "uwb",
            Tech::Ble => "ble",
        })
    }
}

impl FromStr for Tech {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uwb" => Ok(Tech::Uwb),
            "ble" => Ok(Tech::Ble),
            other => Err(IngestError::malformed(format!("unknown technology `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Label,
    Uwb,
    Ble,
}

impl RecordKind {
    pub fn tech(self) -> Option<Tech> {
        match self {
            RecordKind::Label => None,
            RecordKind::Uwb => Some(Tech::Uwb),
            RecordKind::Ble => Some(Tech::Ble),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochUnit {
    Seconds,
    Milliseconds,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    /// Any run of spaces or tabs.
    #[default]
    Whitespace,
    Comma,
    Tab,
}

impl Delimiter {
    fn split<'a>(self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
        }
    }

    fn separator(self) -> char {
        match self {
            Delimiter::Whitespace | Delimiter::Tab => '\t',
            Delimiter::Comma => ',',
        }
    }
}

/// How to read one line of a recorded file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSchema {
    pub kind: RecordKind,
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub epoch_unit: EpochUnit,
    /// Tag assigned to RSSI records; recorded single-tag sessions do not carry one.
    #[serde(default = "default_tag")]
    pub default_tag: String,
    /// Session assigned to label records.
    #[serde(default = "default_session")]
    pub default_session: String,
    /// Offset used when writing the human-readable date/time columns.
    #[serde(default)]
    pub utc_offset_min: i32,
}

pub fn default_tag() -> String {
    "tag0".to_owned()
}

pub fn default_session() -> String {
    "recorded".to_owned()
}

impl RecordSchema {
    pub fn new(kind: RecordKind) -> Self {
        Self {
            kind,
            delimiter: Delimiter::Whitespace,
            epoch_unit: EpochUnit::Auto,
            default_tag: default_tag(),
            default_session: default_session(),
            utc_offset_min: 0,
        }
    }

    pub fn with_delimiter(mut self, delimiter: Delimiter) -> Self {
        self.delimiter = delimiter;
        self
    }

    pub fn with_epoch_unit(mut self, unit: EpochUnit) -> Self {
        self.epoch_unit = unit;
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.default_tag = tag.into();
        self
    }
}

/// One (anchor, tag) signal strength reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub t_ms: i64,
    pub source_id: String,
    pub tech: Tech,
    pub rssi_dbm: f64,
    pub tag_id: String,
}

impl RssiSample {
    /// Outside the UWB plausibility band. BLE readings are never flagged.
    pub fn is_implausible(&self) -> bool {
        self.tech == Tech::Uwb && !(UWB_PLAUSIBLE_DBM.0..=UWB_PLAUSIBLE_DBM.1).contains(&self.rssi_dbm)
    }
}

/// One user-clicked ground-truth position in floor-plan pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSample {
    pub t_ms: i64,
    pub x_px: f64,
    pub y_px: f64,
    pub session_id: String,
}

/// Converts a raw epoch field into epoch milliseconds.
///
/// Integer fields keep full precision; fractional fields are rounded to the
/// nearest millisecond after unit scaling.
pub fn normalize_epoch(raw: &str, unit: EpochUnit) -> Result<i64, IngestError> {
    let raw = raw.trim();
    let (whole, fraction) = match raw.parse::<i64>() {
        Ok(v) => (v, None),
        Err(_) => {
            let v: f64 = raw
                .parse()
                .map_err(|_| IngestError::malformed(format!("epoch `{raw}` is not numeric")))?;
            if !v.is_finite() {
                return Err(IngestError::TimestampOutOfRange(raw.to_owned()));
            }
            (v.trunc() as i64, Some(v))
        }
    };
    if whole <= 0 {
        return Err(IngestError::TimestampOutOfRange(raw.to_owned()));
    }
    let seconds = match unit {
        EpochUnit::Seconds => true,
        EpochUnit::Milliseconds => false,
        EpochUnit::Auto => whole < AUTO_MILLIS_THRESHOLD,
    };
    let t_ms = match (seconds, fraction) {
        (true, None) => whole.checked_mul(1000),
        (true, Some(v)) => Some((v * 1000.0).round() as i64),
        (false, None) => Some(whole),
        (false, Some(v)) => Some(v.round() as i64),
    };
    match t_ms {
        Some(t) if t > 0 => Ok(t),
        _ => Err(IngestError::TimestampOutOfRange(raw.to_owned())),
    }
}

fn parse_coord(field: &str, what: &str) -> Result<f64, IngestError> {
    let v: f64 = field
        .parse()
        .map_err(|_| IngestError::malformed(format!("{what} `{field}` is not numeric")))?;
    if !v.is_finite() {
        return Err(IngestError::malformed(format!("{what} `{field}` is not finite")));
    }
    Ok(v)
}

fn parse_rssi(field: &str) -> Result<f64, IngestError> {
    let v: f64 = field
        .parse()
        .map_err(|_| IngestError::malformed(format!("rssi `{field}` is not numeric")))?;
    if !v.is_finite() {
        return Err(IngestError::NonFiniteRssi(field.to_owned()));
    }
    Ok(v)
}

fn require_arity(fields: &[&str], min: usize, kind: RecordKind) -> Result<(), IngestError> {
    if fields.len() < min {
        return Err(IngestError::malformed(format!(
            "{kind:?} record needs {min} fields, found {}",
            fields.len()
        )));
    }
    Ok(())
}

/// Parses `date time epoch x_px y_px`.
pub fn parse_label_record(line: &str, schema: &RecordSchema) -> Result<LabelSample, IngestError> {
    let fields = schema.delimiter.split(line);
    require_arity(&fields, 5, RecordKind::Label)?;
    let t_ms = normalize_epoch(fields[2], schema.epoch_unit)?;
    Ok(LabelSample {
        t_ms,
        x_px: parse_coord(fields[3], "x")?,
        y_px: parse_coord(fields[4], "y")?,
        session_id: fields
            .get(5)
            .map(|s| (*s).to_owned())
            .unwrap_or_else(|| schema.default_session.clone()),
    })
}

/// Parses a UWB (`epoch date time anchor_id rssi`) or BLE (`epoch rssi mac`) line.
pub fn parse_rssi_record(line: &str, schema: &RecordSchema) -> Result<RssiSample, IngestError> {
    let fields = schema.delimiter.split(line);
    let (t_field, source, rssi_field, tag_idx) = match schema.kind {
        RecordKind::Uwb => {
            require_arity(&fields, 5, schema.kind)?;
            (fields[0], fields[3], fields[4], 5)
        }
        RecordKind::Ble => {
            require_arity(&fields, 3, schema.kind)?;
            (fields[0], fields[2], fields[1], 3)
        }
        RecordKind::Label => {
            return Err(IngestError::malformed("label schema used for an RSSI record"));
        }
    };
    let t_ms = normalize_epoch(t_field, schema.epoch_unit)?;
    let rssi_dbm = parse_rssi(rssi_field)?;
    if source.is_empty() {
        return Err(IngestError::malformed("empty source id"));
    }
    Ok(RssiSample {
        t_ms,
        source_id: source.to_owned(),
        tech: schema.kind.tech().expect("rssi kinds carry a technology"),
        rssi_dbm,
        tag_id: fields
            .get(tag_idx)
            .map(|s| (*s).to_owned())
            .unwrap_or_else(|| schema.default_tag.clone()),
    })
}

fn format_epoch(t_ms: i64, unit: EpochUnit) -> String {
    match unit {
        EpochUnit::Milliseconds => t_ms.to_string(),
        EpochUnit::Seconds | EpochUnit::Auto => {
            if t_ms % 1000 == 0 {
                (t_ms / 1000).to_string()
            } else {
                format!("{}.{:03}", t_ms / 1000, t_ms % 1000)
            }
        }
    }
}

fn format_wall_clock(t_ms: i64, utc_offset_min: i32) -> (String, String) {
    let offset =
        FixedOffset::east_opt(utc_offset_min * 60).unwrap_or_else(|| FixedOffset::east_opt(0).expect("zero offset"));
    match DateTime::from_timestamp_millis(t_ms) {
        Some(dt) => {
            let local = dt.with_timezone(&offset);
            (
                local.format("%Y-%m-%d").to_string(),
                local.format("%H:%M:%S").to_string(),
            )
        }
        None => ("0000-00-00".to_owned(), "00:00:00".to_owned()),
    }
}

pub fn serialize_label_record(label: &LabelSample, schema: &RecordSchema) -> String {
    let sep = schema.delimiter.separator();
    let (date, time) = format_wall_clock(label.t_ms, schema.utc_offset_min);
    format!(
        "{date}{sep}{time}{sep}{}{sep}{}{sep}{}",
        format_epoch(label.t_ms, schema.epoch_unit),
        label.x_px,
        label.y_px
    )
}

pub fn serialize_rssi_record(sample: &RssiSample, schema: &RecordSchema) -> String {
    let sep = schema.delimiter.separator();
    let epoch = format_epoch(sample.t_ms, schema.epoch_unit);
    match sample.tech {
        Tech::Uwb => {
            let (date, time) = format_wall_clock(sample.t_ms, schema.utc_offset_min);
            format!(
                "{epoch}{sep}{date}{sep}{time}{sep}{}{sep}{}",
                sample.source_id, sample.rssi_dbm
            )
        }
        Tech::Ble => format!("{epoch}{sep}{}{sep}{}", sample.rssi_dbm, sample.source_id),
    }
}
