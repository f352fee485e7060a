use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::external::ExternalScore;
use super::ExperimentError;
use crate::ingest::Tech;
use crate::model::ModelKind;
use crate::segmentation::WindowMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RowStatus {
    Ok,
    Failed(String),
}

impl RowStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RowStatus::Ok)
    }
}

/// One evaluated configuration. Metric fields are `None` for failed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub flat: String,
    pub tech: Option<Tech>,
    pub windowing: Option<WindowMode>,
    /// Model kind label, or the external system name.
    pub model: String,
    pub window_s: Option<f64>,
    pub sub_window_s: Option<f64>,
    pub k_folds: usize,
    pub n_samples: usize,
    pub mae_x_m: Option<f64>,
    pub mae_y_m: Option<f64>,
    pub mae_m: Option<f64>,
    /// Population standard deviation of the per-fold combined MAE.
    pub fold_std_m: Option<f64>,
    pub room_accuracy: Option<f64>,
    pub lost_fraction: Option<f64>,
    pub status: RowStatus,
    /// Not written to the CSV table, which must be reproducible.
    pub wall_time_s: f64,
}

impl EvalRow {
    pub fn failed(
        flat: &str,
        tech: Tech,
        windowing: WindowMode,
        model: ModelKind,
        window_s: f64,
        sub_window_s: f64,
        k_folds: usize,
        reason: String,
    ) -> Self {
        Self {
            flat: flat.to_owned(),
            tech: Some(tech),
            windowing: Some(windowing),
            model: model.label().to_owned(),
            window_s: Some(window_s),
            sub_window_s: Some(sub_window_s),
            k_folds,
            n_samples: 0,
            mae_x_m: None,
            mae_y_m: None,
            mae_m: None,
            fold_std_m: None,
            room_accuracy: None,
            lost_fraction: None,
            status: RowStatus::Failed(reason),
            wall_time_s: 0.0,
        }
    }

    /// Row for positions produced by a system outside this crate.
    pub fn external(flat: &str, system: &str, score: &ExternalScore) -> Self {
        Self {
            flat: flat.to_owned(),
            tech: None,
            windowing: None,
            model: system.to_owned(),
            window_s: None,
            sub_window_s: None,
            k_folds: 0,
            n_samples: score.n_matched,
            mae_x_m: score.mae_x_m,
            mae_y_m: score.mae_y_m,
            mae_m: score.mae_m(),
            fold_std_m: None,
            room_accuracy: None,
            lost_fraction: Some(score.lost_fraction),
            status: RowStatus::Ok,
            wall_time_s: 0.0,
        }
    }
}

pub const CSV_HEADER: [&str; 15] = [
    "flat",
    "tech",
    "windowing",
    "model",
    "window_s",
    "sub_window_s",
    "k_folds",
    "n_samples",
    "mae_x_m",
    "mae_y_m",
    "mae_m",
    "fold_std_m",
    "room_accuracy",
    "lost_fraction",
    "status",
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>, ExperimentError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| ExperimentError::Parse(format!("bad number `{s}` in report")))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Comma-separated table with a header row. Floats use the shortest
    /// representation that reads back to the same value.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            let status = match &r.status {
                RowStatus::Ok => "ok".to_owned(),
                RowStatus::Failed(msg) => format!("failed: {msg}"),
            };
            w.write_record([
                r.flat.clone(),
                r.tech.map(|t| t.to_string()).unwrap_or_default(),
                r.windowing.map(|m| m.label().to_owned()).unwrap_or_default(),
                r.model.clone(),
                opt(r.window_s),
                opt(r.sub_window_s),
                r.k_folds.to_string(),
                r.n_samples.to_string(),
                opt(r.mae_x_m),
                opt(r.mae_y_m),
                opt(r.mae_m),
                opt(r.fold_std_m),
                opt(r.room_accuracy),
                opt(r.lost_fraction),
                status,
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn from_csv(text: &str) -> Result<Self, ExperimentError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| ExperimentError::Parse(e.to_string()))?
            .clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(ExperimentError::Parse("unexpected report header".into()));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| ExperimentError::Parse(e.to_string()))?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            let int = |i: usize| {
                f(i).parse::<usize>()
                    .map_err(|_| ExperimentError::Parse(format!("bad count `{}`", f(i))))
            };
            let tech = match f(1) {
                "" => None,
                s => Some(s.parse()?),
            };
            let windowing = match f(2) {
                "" => None,
                s => Some(s.parse()?),
            };
            let status = match f(14) {
                "ok" => RowStatus::Ok,
                s => RowStatus::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_owned()),
            };
            rows.push(EvalRow {
                flat: f(0).to_owned(),
                tech,
                windowing,
                model: f(3).to_owned(),
                window_s: parse_opt(f(4))?,
                sub_window_s: parse_opt(f(5))?,
                k_folds: int(6)?,
                n_samples: int(7)?,
                mae_x_m: parse_opt(f(8))?,
                mae_y_m: parse_opt(f(9))?,
                mae_m: parse_opt(f(10))?,
                fold_std_m: parse_opt(f(11))?,
                room_accuracy: parse_opt(f(12))?,
                lost_fraction: parse_opt(f(13))?,
                status,
                wall_time_s: 0.0,
            });
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        std::fs::write(path, self.to_csv()).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fixed-width table in the WINDOWING / MODEL / W. SIZE / MAE layout.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "WINDOWING", "MODEL", "W. SIZE", "MAE", "MAE X", "MAE Y", "FOLD SD", "ROOM", "TIME S"
        );
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.3}"));
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<12} {:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8.1}",
                r.windowing.map_or("-", |m| m.label()),
                r.model,
                r.window_s.map_or_else(|| "-".to_owned(), |w| format!("{w}")),
                cell(r.mae_m),
                cell(r.mae_x_m),
                cell(r.mae_y_m),
                cell(r.fold_std_m),
                cell(r.room_accuracy),
                r.wall_time_s,
            );
            if let Some(l) = r.lost_fraction {
                let _ = write!(out, "  lost {:.1}%", 100.0 * l);
            }
            if let RowStatus::Failed(msg) = &r.status {
                let _ = write!(out, "  FAILED: {msg}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes one `.dat` file per (windowing, model) pair with columns
    /// `window_s mae_m fold_std_m`, sorted by window size. Returns the paths.
    pub fn write_plot_series(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, ExperimentError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExperimentError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut series: Vec<((String, String), Vec<(f64, f64, f64)>)> = Vec::new();
        for r in &self.rows {
            let (Some(mode), Some(w), Some(mae)) = (r.windowing, r.window_s, r.mae_m) else {
                continue;
            };
            let key = (mode.label().to_owned(), r.model.clone());
            let point = (w, mae, r.fold_std_m.unwrap_or(0.0));
            match series.iter_mut().find(|(k, _)| *k == key) {
                Some((_, pts)) => pts.push(point),
                None => series.push((key, vec![point])),
            }
        }
        let mut paths = Vec::new();
        for ((mode, model), mut pts) in series {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let slug = |s: &str| {
                s.to_ascii_lowercase()
                    .replace(|c: char| !c.is_ascii_alphanumeric(), "_")
            };
            let path = dir.join(format!("mae_vs_window_{}_{}.dat", slug(&mode), slug(&model)));
            let mut text = format!("# {mode} {model}\n# window_s mae_m fold_std_m\n");
            for (w, m, s) in pts {
                let _ = writeln!(text, "{w} {m} {s}");
            }
            std::fs::write(&path, text).map_err(io(&path))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mae_x: f64, mae_y: f64) -> EvalRow {
        EvalRow {
            flat: "A".into(),
            tech: Some(Tech::Uwb),
            windowing: Some(WindowMode::PastAndFuture),
            model: ModelKind::CnnLstm.label().into(),
            window_s: Some(12.0),
            sub_window_s: Some(1.0),
            k_folds: 10,
            n_samples: 900,
            mae_x_m: Some(mae_x),
            mae_y_m: Some(mae_y),
            mae_m: Some((mae_x + mae_y) / 2.0),
            fold_std_m: Some(0.01),
            room_accuracy: Some(0.85),
            lost_fraction: None,
            status: RowStatus::Ok,
            wall_time_s: 3.5,
        }
    }

    #[test]
    fn csv_round_trip_drops_only_wall_time() {
        let mut report = EvalReport {
            rows: vec![
                row(0.1 + 0.2, 1.0 / 3.0),
                EvalRow::failed(
                    "A",
                    Tech::Ble,
                    WindowMode::OnlyPast,
                    ModelKind::Rf,
                    4.0,
                    1.0,
                    10,
                    "x, \"y\"".into(),
                ),
            ],
        };
        let back = EvalReport::from_csv(&report.to_csv()).unwrap();
        report.rows[0].wall_time_s = 0.0;
        assert_eq!(back, report);
    }

    #[test]
    fn csv_has_header_and_no_wall_time() {
        let csv = EvalReport {
            rows: vec![row(0.14, 0.23)],
        }
        .to_csv();
        let first = csv.lines().next().unwrap();
        assert_eq!(first, CSV_HEADER.join(","));
        assert!(!csv.contains("3.5"));
    }

    #[test]
    fn plot_series_sorted_by_window() {
        let mut a = row(0.3, 0.3);
        a.window_s = Some(30.0);
        let b = row(0.6, 0.6);
        let dir = tempfile::tempdir().unwrap();
        let paths = EvalReport { rows: vec![a, b] }.write_plot_series(dir.path()).unwrap();
        assert_eq!(paths.len(), 1);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, ["12 0.6 0.01", "30 0.3 0.01"]);
    }
}
