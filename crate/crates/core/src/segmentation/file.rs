//! Dataset container for segmented training pairs.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic      4 bytes  "HLDS"
//! version    u32
//! header_len u32
//! header     JSON     {config, floorplan, discards, records, frame_len}
//! records    repeated `records` times:
//!   t_star_ms  i64
//!   x_px, y_px f64, f64
//!   room       i32   (-1 when the point lies in no room)
//!   session    u16 length + UTF-8 bytes
//!   values     f64 x frame_len   (source-major, then aggregation, then step)
//!   mask       u8  x frame_len   (1 = imputed)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::frame::FeatureFrame;
use super::training::{DiscardReport, SegmentConfig, TargetPoint, TrainingSample, TrainingSet};
use super::SegmentError;
use crate::floorplan::FloorPlan;

pub const DATASET_MAGIC: &[u8; 4] = b"HLDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: SegmentConfig,
    floorplan: FloorPlan,
    discards: DiscardReport,
    records: usize,
    frame_len: usize,
}

fn fmt_err(msg: impl Into<String>) -> SegmentError {
    SegmentError::Format(msg.into())
}

pub fn encode_training_set<W: Write>(set: &TrainingSet, mut w: W) -> Result<(), SegmentError> {
    let (n_sources, n_steps) = set.frame_shape();
    let frame_len = n_sources * super::N_AGG * n_steps;
    let header = Header {
        config: set.config.clone(),
        floorplan: set.floorplan.clone(),
        discards: set.discards,
        records: set.samples.len(),
        frame_len,
    };
    let json = serde_json::to_vec(&header).map_err(|e| fmt_err(e.to_string()))?;
    let io = |e: std::io::Error| fmt_err(e.to_string());
    w.write_all(DATASET_MAGIC).map_err(io)?;
    w.write_all(&DATASET_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for s in &set.samples {
        if s.frame.values.len() != frame_len {
            return Err(fmt_err(format!(
                "frame at t*={} has {} cells, expected {frame_len}",
                s.frame.t_star_ms,
                s.frame.values.len()
            )));
        }
        let session = s.session_id.as_bytes();
        let session_len = u16::try_from(session.len()).map_err(|_| fmt_err("session id too long"))?;
        let room = s.target.room.as_ref().map_or(-1, |r| r.index as i32);
        let mut buf = Vec::with_capacity(32 + session.len() + frame_len * 9);
        buf.extend_from_slice(&s.frame.t_star_ms.to_le_bytes());
        buf.extend_from_slice(&s.target.x_px.to_le_bytes());
        buf.extend_from_slice(&s.target.y_px.to_le_bytes());
        buf.extend_from_slice(&room.to_le_bytes());
        buf.extend_from_slice(&session_len.to_le_bytes());
        buf.extend_from_slice(session);
        for v in &s.frame.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(s.frame.missing.iter().map(|&m| u8::from(m)));
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], SegmentError> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| fmt_err(format!("truncated: {e}")))?;
        Ok(b)
    }

    fn vec(&mut self, n: usize) -> Result<Vec<u8>, SegmentError> {
        let mut b = vec![0u8; n];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| fmt_err(format!("truncated: {e}")))?;
        Ok(b)
    }
}

pub fn decode_training_set<R: Read>(r: R) -> Result<TrainingSet, SegmentError> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<4>()? != DATASET_MAGIC {
        return Err(fmt_err("not a dataset file (bad magic)"));
    }
    let version = u32::from_le_bytes(c.bytes()?);
    if version != DATASET_VERSION {
        return Err(fmt_err(format!("unsupported dataset version {version}")));
    }
    let header_len = u32::from_le_bytes(c.bytes()?) as usize;
    let header: Header = serde_json::from_slice(&c.vec(header_len)?).map_err(|e| fmt_err(e.to_string()))?;
    let (n_sources, n_steps) = (header.config.roster.len(), header.config.spec.n_steps);
    if header.frame_len != n_sources * super::N_AGG * n_steps {
        return Err(fmt_err("frame length disagrees with roster and window"));
    }
    let mut samples = Vec::with_capacity(header.records);
    for _ in 0..header.records {
        let t_star_ms = i64::from_le_bytes(c.bytes()?);
        let x_px = f64::from_le_bytes(c.bytes()?);
        let y_px = f64::from_le_bytes(c.bytes()?);
        let _room = i32::from_le_bytes(c.bytes()?);
        let session_len = u16::from_le_bytes(c.bytes()?) as usize;
        let session_id = String::from_utf8(c.vec(session_len)?).map_err(|_| fmt_err("session id is not UTF-8"))?;
        let raw = c.vec(header.frame_len * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        let missing = c.vec(header.frame_len)?.into_iter().map(|b| b != 0).collect();
        samples.push(TrainingSample {
            frame: FeatureFrame {
                t_star_ms,
                tag_id: header.config.tag_id.clone(),
                n_sources,
                n_steps,
                values,
                missing,
            },
            target: TargetPoint::new(x_px, y_px, &header.floorplan),
            session_id,
        });
    }
    Ok(TrainingSet {
        config: header.config,
        floorplan: header.floorplan,
        samples,
        discards: header.discards,
    })
}

pub fn write_training_set(set: &TrainingSet, path: &Path) -> Result<(), SegmentError> {
    let f = File::create(path).map_err(|source| SegmentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    encode_training_set(set, BufWriter::new(f))
}

pub fn read_training_set(path: &Path) -> Result<TrainingSet, SegmentError> {
    let f = File::open(path).map_err(|source| SegmentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_training_set(BufReader::new(f))
}
