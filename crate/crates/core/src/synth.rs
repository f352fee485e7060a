//! Log-distance path-loss simulator producing labeled RSSI datasets.
//!
//! A tag performs a bounded random walk over a rectangular flat while fixed
//! anchors report `rssi = p0 - 10 n log10(d / 1 m) + noise` at jittered
//! intervals. Labels are the true position sampled at a fixed cadence.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::floorplan::{Anchor, DataBindings, FlatConfig, FloorPlan, Room, RoomLabel};
use crate::ingest::{
    serialize_label_record, serialize_rssi_record, Delimiter, EpochUnit, IngestError, LabelSample, RecordKind,
    RecordSchema, RssiSample, StreamSet, Tech,
};

/// Session id given to labels read back from a recorded label file.
pub const SYNTH_SESSION: &str = "recorded-tag0";
pub const SYNTH_TAG: &str = "tag0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub name: String,
    pub width_px: u32,
    pub height_px: u32,
    pub width_mm: f64,
    pub height_mm: f64,
    pub tech: Tech,
    /// Anchor positions in pixels.
    pub anchors_px: Vec<[f64; 2]>,
    /// RSSI at 1 m.
    pub p0_dbm: f64,
    pub path_loss_exponent: f64,
    pub noise_sigma_db: f64,
    pub duration_s: f64,
    pub start_ms: i64,
    pub label_interval_ms: i64,
    /// Nominal per-anchor report interval; each report is jittered by up to half of it.
    pub report_interval_ms: i64,
    /// Probability that a report is lost.
    pub drop_probability: f64,
    pub walk_speed_mm_s: f64,
    /// Standard deviation of the heading change per second, radians.
    pub turn_sigma_rad: f64,
    /// Distance from the walls the walk keeps.
    pub margin_mm: f64,
}

impl Default for SynthConfig {
    /// A 460 x 753 px flat of 5.8 x 9.5 m with an anchor near each corner and
    /// half an hour of walking.
    fn default() -> Self {
        Self {
            seed: 1,
            name: "synthetic".into(),
            width_px: 460,
            height_px: 753,
            width_mm: 5800.0,
            height_mm: 9500.0,
            tech: Tech::Uwb,
            anchors_px: vec![[20.0, 20.0], [440.0, 20.0], [20.0, 733.0], [440.0, 733.0]],
            p0_dbm: -45.0,
            path_loss_exponent: 2.2,
            noise_sigma_db: 2.0,
            duration_s: 1800.0,
            start_ms: 1_668_521_779_000,
            label_interval_ms: 1000,
            report_interval_ms: 250,
            drop_probability: 0.05,
            walk_speed_mm_s: 300.0,
            turn_sigma_rad: 0.6,
            margin_mm: 300.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub floorplan: FloorPlan,
    /// Time sorted, all for [`SYNTH_TAG`].
    pub samples: Vec<RssiSample>,
    pub labels: Vec<LabelSample>,
}

impl SynthDataset {
    pub fn streams(&self) -> StreamSet {
        StreamSet::from_samples(self.samples.iter().cloned())
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Floor plan with a 2 x 2 grid of rooms and the configured anchors.
pub fn synth_floorplan(cfg: &SynthConfig) -> FloorPlan {
    let (w, h) = (f64::from(cfg.width_px), f64::from(cfg.height_px));
    let mut fp = FloorPlan::bare(&cfg.name, cfg.width_px, cfg.height_px, cfg.width_mm, cfg.height_mm);
    let quads = [
        ("living", rect(0.0, 0.0, w / 2.0, h / 2.0)),
        ("kitchen", rect(w / 2.0, 0.0, w, h / 2.0)),
        ("bathroom", rect(0.0, h / 2.0, w / 2.0, h)),
        ("bedroom", rect(w / 2.0, h / 2.0, w, h)),
    ];
    fp.rooms = quads
        .into_iter()
        .enumerate()
        .map(|(index, (name, polygon))| Room {
            label: RoomLabel {
                name: name.into(),
                index,
            },
            polygon,
        })
        .collect();
    fp.anchors = cfg
        .anchors_px
        .iter()
        .enumerate()
        .map(|(i, p)| Anchor {
            id: format!("a{}", i + 1),
            x_px: p[0],
            y_px: p[1],
            tech: cfg.tech,
        })
        .collect();
    fp
}

/// Position of the walk at every `tick_ms`, in millimetres.
fn random_walk(cfg: &SynthConfig, rng: &mut ChaCha8Rng, n_ticks: usize, tick_ms: i64) -> Vec<(f64, f64)> {
    let dt = tick_ms as f64 / 1000.0;
    let turn = Normal::new(0.0, cfg.turn_sigma_rad * dt.sqrt()).expect("finite sigma");
    let (lo_x, hi_x) = (cfg.margin_mm, cfg.width_mm - cfg.margin_mm);
    let (lo_y, hi_y) = (cfg.margin_mm, cfg.height_mm - cfg.margin_mm);
    let mut x = rng.random_range(lo_x..hi_x);
    let mut y = rng.random_range(lo_y..hi_y);
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut out = Vec::with_capacity(n_ticks);
    for _ in 0..n_ticks {
        out.push((x, y));
        heading += turn.sample(rng);
        let step = cfg.walk_speed_mm_s * dt;
        let (mut nx, mut ny) = (x + step * heading.cos(), y + step * heading.sin());
        if !(lo_x..=hi_x).contains(&nx) {
            heading = std::f64::consts::PI - heading;
            nx = nx.clamp(lo_x, hi_x);
        }
        if !(lo_y..=hi_y).contains(&ny) {
            heading = -heading;
            ny = ny.clamp(lo_y, hi_y);
        }
        (x, y) = (nx, ny);
    }
    out
}

/// Deterministic for a given config.
pub fn generate(cfg: &SynthConfig) -> SynthDataset {
    let floorplan = synth_floorplan(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tick_ms = 50;
    let duration_ms = (cfg.duration_s * 1000.0).round() as i64;
    let n_ticks = (duration_ms / tick_ms + 1) as usize;
    let track = random_walk(cfg, &mut rng, n_ticks, tick_ms);
    let at = |t_ms: i64| {
        let i = ((t_ms - cfg.start_ms) / tick_ms).clamp(0, n_ticks as i64 - 1) as usize;
        track[i]
    };
    let (sx, sy) = (floorplan.scale_x(), floorplan.scale_y());

    let labels: Vec<LabelSample> = (0..)
        .map(|k| cfg.start_ms + k * cfg.label_interval_ms)
        .take_while(|t| *t <= cfg.start_ms + duration_ms)
        .map(|t_ms| {
            let (x, y) = at(t_ms);
            LabelSample {
                t_ms,
                x_px: x / sx,
                y_px: y / sy,
                session_id: SYNTH_SESSION.into(),
            }
        })
        .collect();

    let noise = Normal::new(0.0, cfg.noise_sigma_db).expect("finite sigma");
    let mut samples = Vec::new();
    for anchor in &floorplan.anchors {
        let (ax, ay) = (anchor.x_px * sx, anchor.y_px * sy);
        let jitter = cfg.report_interval_ms / 2;
        let mut t = cfg.start_ms + rng.random_range(0..cfg.report_interval_ms.max(1));
        while t <= cfg.start_ms + duration_ms {
            if !rng.random_bool(cfg.drop_probability) {
                let (x, y) = at(t);
                let d_m = ((x - ax).hypot(y - ay) / 1000.0).max(0.1);
                let rssi = cfg.p0_dbm - 10.0 * cfg.path_loss_exponent * d_m.log10() + noise.sample(&mut rng);
                samples.push(RssiSample {
                    t_ms: t,
                    source_id: anchor.id.clone(),
                    tech: cfg.tech,
                    rssi_dbm: (rssi * 100.0).round() / 100.0,
                    tag_id: SYNTH_TAG.into(),
                });
            }
            t += cfg.report_interval_ms + rng.random_range(-jitter..=jitter);
        }
    }
    samples.sort_by(|a, b| (a.t_ms, &a.source_id).cmp(&(b.t_ms, &b.source_id)));
    SynthDataset {
        floorplan,
        samples,
        labels,
    }
}

/// Writes the label and RSSI files plus a flat config binding them into
/// `dir`, and returns the config's path.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<PathBuf, IngestError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let label_schema = RecordSchema::new(RecordKind::Label).with_epoch_unit(EpochUnit::Milliseconds);
    let mut text = String::new();
    for l in &ds.labels {
        text.push_str(&serialize_label_record(l, &label_schema));
        text.push('\n');
    }
    let label_path = dir.join("labels.txt");
    std::fs::write(&label_path, text).map_err(io(&label_path))?;

    let mut data = DataBindings {
        labels: vec!["labels.txt".into()],
        delimiter: Delimiter::Whitespace,
        epoch_unit: EpochUnit::Milliseconds,
        tag: SYNTH_TAG.into(),
        ..DataBindings::default()
    };
    for tech in [Tech::Uwb, Tech::Ble] {
        let kind = match tech {
            Tech::Uwb => RecordKind::Uwb,
            Tech::Ble => RecordKind::Ble,
        };
        let schema = RecordSchema::new(kind).with_epoch_unit(EpochUnit::Milliseconds);
        let lines: Vec<String> = ds
            .samples
            .iter()
            .filter(|s| s.tech == tech)
            .map(|s| serialize_rssi_record(s, &schema))
            .collect();
        if lines.is_empty() {
            continue;
        }
        let name = format!("{tech}.txt");
        let path = dir.join(&name);
        std::fs::write(&path, lines.join("\n") + "\n").map_err(io(&path))?;
        match tech {
            Tech::Uwb => data.uwb.push(name.into()),
            Tech::Ble => data.ble.push(name.into()),
        }
    }
    let flat = FlatConfig {
        floorplan: ds.floorplan.clone(),
        data,
        base_dir: dir.to_path_buf(),
    };
    let cfg_path = dir.join("flat.toml");
    std::fs::write(&cfg_path, flat.to_toml_string()).map_err(io(&cfg_path))?;
    Ok(cfg_path)
}
