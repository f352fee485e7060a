//! Floor plans: canvas geometry, pixel/millimetre scale, rooms and anchors.
//!
//! A flat is described by a TOML file:
//!
//! ```toml
//! name = "flat-a"
//! width_px = 460
//! height_px = 753
//! width_mm = 5800.0
//! height_mm = 9500.0
//! image = "flat-a.png"
//!
//! [[anchors]]
//! id = "4842"
//! x_px = 20.0
//! y_px = 30.0
//! tech = "uwb"
//!
//! [[rooms]]
//! name = "living"
//! polygon = [[0.0, 0.0], [460.0, 0.0], [460.0, 300.0], [0.0, 300.0]]
//!
//! [data]
//! labels = ["labels.txt"]
//! uwb = ["uwb.txt"]
//! ble = ["ble.txt"]
//! ```
//!
//! Paths under `[data]` are resolved relative to the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Delimiter, EpochUnit, Tech};

const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FloorPlanError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing flat config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid floor plan: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoomLabel {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub label: RoomLabel,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: String,
    pub x_px: f64,
    pub y_px: f64,
    pub tech: Tech,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub name: String,
    pub width_px: u32,
    pub height_px: u32,
    pub width_mm: f64,
    pub height_mm: f64,
    pub image: Option<String>,
    pub rooms: Vec<Room>,
    pub anchors: Vec<Anchor>,
}

impl FloorPlan {
    /// A plan with no rooms or anchors; mostly useful in tests.
    pub fn bare(name: &str, width_px: u32, height_px: u32, width_mm: f64, height_mm: f64) -> Self {
        Self {
            name: name.to_owned(),
            width_px,
            height_px,
            width_mm,
            height_mm,
            image: None,
            rooms: Vec::new(),
            anchors: Vec::new(),
        }
    }

    pub fn scale_x(&self) -> f64 {
        self.width_mm / f64::from(self.width_px)
    }

    pub fn scale_y(&self) -> f64 {
        self.height_mm / f64::from(self.height_px)
    }

    pub fn contains(&self, x_px: f64, y_px: f64) -> bool {
        (0.0..=f64::from(self.width_px)).contains(&x_px) && (0.0..=f64::from(self.height_px)).contains(&y_px)
    }

    /// Millimetre coordinates of a pixel position. Out-of-canvas points are still converted.
    pub fn px_to_mm(&self, x_px: f64, y_px: f64) -> (f64, f64) {
        (x_px * self.scale_x(), y_px * self.scale_y())
    }

    /// Anchor ids for one technology, in declaration order.
    pub fn roster(&self, tech: Tech) -> Vec<String> {
        self.anchors
            .iter()
            .filter(|a| a.tech == tech)
            .map(|a| a.id.clone())
            .collect()
    }

    pub fn room_names(&self) -> Vec<String> {
        self.rooms.iter().map(|r| r.label.name.clone()).collect()
    }

    /// Room containing the point. Boundary points count as inside, and the
    /// first room in declaration order wins when several contain the point.
    pub fn room_of(&self, x_px: f64, y_px: f64) -> Option<&RoomLabel> {
        self.rooms
            .iter()
            .find(|room| on_boundary(&room.polygon, x_px, y_px) || even_odd_inside(&room.polygon, x_px, y_px))
            .map(|room| &room.label)
    }

    pub fn validate(&self) -> Result<(), FloorPlanError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(FloorPlanError::Invalid("canvas has zero size".into()));
        }
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(FloorPlanError::Invalid("floor dimensions must be positive".into()));
        }
        for (i, room) in self.rooms.iter().enumerate() {
            if room.label.index != i {
                return Err(FloorPlanError::Invalid(format!(
                    "room `{}` has index {} but is declared at position {i}",
                    room.label.name, room.label.index
                )));
            }
            if room.polygon.len() < 3 {
                return Err(FloorPlanError::Invalid(format!(
                    "room `{}` needs at least 3 vertices",
                    room.label.name
                )));
            }
            if !is_simple(&room.polygon) {
                return Err(FloorPlanError::Invalid(format!(
                    "room `{}` polygon self-intersects",
                    room.label.name
                )));
            }
        }
        for a in &self.anchors {
            if !self.contains(a.x_px, a.y_px) {
                return Err(FloorPlanError::Invalid(format!(
                    "anchor `{}` lies outside the canvas",
                    a.id
                )));
            }
        }
        Ok(())
    }
}

fn even_odd_inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn on_segment(a: [f64; 2], b: [f64; 2], x: f64, y: f64) -> bool {
    let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt().max(1.0);
    if cross.abs() > EDGE_EPS * len {
        return false;
    }
    x >= a[0].min(b[0]) - EDGE_EPS
        && x <= a[0].max(b[0]) + EDGE_EPS
        && y >= a[1].min(b[1]) - EDGE_EPS
        && y <= a[1].max(b[1]) + EDGE_EPS
}

fn on_boundary(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    (0..poly.len()).any(|i| on_segment(poly[i], poly[(i + 1) % poly.len()], x, y))
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1[0], p1[1]))
        || (d2 == 0.0 && on_segment(q1, q2, p2[0], p2[1]))
        || (d3 == 0.0 && on_segment(p1, p2, q1[0], q1[1]))
        || (d4 == 0.0 && on_segment(p1, p2, q2[0], q2[1]))
}

/// No two non-adjacent edges touch.
fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// Which recorded files feed each stream and how to read them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataBindings {
    #[serde(default)]
    pub labels: Vec<PathBuf>,
    #[serde(default)]
    pub uwb: Vec<PathBuf>,
    #[serde(default)]
    pub ble: Vec<PathBuf>,
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default)]
    pub epoch_unit: EpochUnit,
    #[serde(default = "crate::ingest::record::default_tag")]
    pub tag: String,
}

/// A parsed flat config: the floor plan plus its data bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatConfig {
    pub floorplan: FloorPlan,
    pub data: DataBindings,
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
struct RawRoom {
    name: String,
    polygon: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct RawFlat {
    name: String,
    width_px: u32,
    height_px: u32,
    width_mm: f64,
    height_mm: f64,
    image: Option<String>,
    #[serde(default)]
    anchors: Vec<Anchor>,
    #[serde(default)]
    rooms: Vec<RawRoom>,
    #[serde(default)]
    data: DataBindings,
}

impl FlatConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, FloorPlanError> {
        let raw: RawFlat = toml::from_str(text).map_err(|e| FloorPlanError::Parse {
            path: base_dir.to_path_buf(),
            message: e.to_string(),
        })?;
        let floorplan = FloorPlan {
            name: raw.name,
            width_px: raw.width_px,
            height_px: raw.height_px,
            width_mm: raw.width_mm,
            height_mm: raw.height_mm,
            image: raw.image,
            rooms: raw
                .rooms
                .into_iter()
                .enumerate()
                .map(|(index, r)| Room {
                    label: RoomLabel { name: r.name, index },
                    polygon: r.polygon,
                })
                .collect(),
            anchors: raw.anchors,
        };
        floorplan.validate()?;
        Ok(Self {
            floorplan,
            data: raw.data,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, FloorPlanError> {
        let text = std::fs::read_to_string(path).map_err(|source| FloorPlanError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            FloorPlanError::Parse { message, .. } => FloorPlanError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Serializes back to the TOML layout accepted by [`FlatConfig::from_toml_str`].
    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct OutRoom<'a> {
            name: &'a str,
            polygon: &'a [[f64; 2]],
        }
        #[derive(Serialize)]
        struct Out<'a> {
            name: &'a str,
            width_px: u32,
            height_px: u32,
            width_mm: f64,
            height_mm: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            image: Option<&'a str>,
            anchors: &'a [Anchor],
            rooms: Vec<OutRoom<'a>>,
            data: &'a DataBindings,
        }
        let fp = &self.floorplan;
        let out = Out {
            name: &fp.name,
            width_px: fp.width_px,
            height_px: fp.height_px,
            width_mm: fp.width_mm,
            height_mm: fp.height_mm,
            image: fp.image.as_deref(),
            anchors: &fp.anchors,
            rooms: fp
                .rooms
                .iter()
                .map(|r| OutRoom {
                    name: &r.label.name,
                    polygon: &r.polygon,
                })
                .collect(),
            data: &self.data,
        };
        toml::to_string(&out).expect("flat config serializes")
    }
}
