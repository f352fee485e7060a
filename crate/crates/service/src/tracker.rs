//! Rolling buffer of live readings and the per-tick predictor.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use homeloc_core::ingest::{PositionSource, RssiSample};
use homeloc_core::model::{PositionEstimate, Prediction};
use homeloc_core::segmentation::{build_feature_frame, SegmentError};
use homeloc_core::{FloorPlan, Room, StreamSet, TrainedModel, WindowMode};
use tracing::{debug, warn};

use crate::error::ServiceError;
use crate::events::{Event, LivePosition};

/// Extra history kept behind the oldest sub-window.
const PRUNE_SLACK_MS: i64 = 1000;

pub struct Tracker {
    floorplan: FloorPlan,
    /// Emit positions for `now - lookahead`, which lets windows that reach
    /// into the future be used live.
    delayed: bool,
    model: RwLock<Option<Arc<TrainedModel>>>,
    buffer: Mutex<StreamSet>,
    tags: Mutex<BTreeSet<String>>,
    latest: Mutex<HashMap<String, LivePosition>>,
}

fn centroid(room: &Room) -> (f64, f64) {
    let n = room.polygon.len().max(1) as f64;
    let (sx, sy) = room.polygon.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    (sx / n, sy / n)
}

impl Tracker {
    pub fn new(floorplan: FloorPlan, delayed: bool) -> Self {
        Self {
            floorplan,
            delayed,
            model: RwLock::new(None),
            buffer: Mutex::new(StreamSet::new()),
            tags: Mutex::new(BTreeSet::new()),
            latest: Mutex::new(HashMap::new()),
        }
    }

    pub fn floorplan(&self) -> &FloorPlan {
        &self.floorplan
    }

    pub fn model(&self) -> Option<Arc<TrainedModel>> {
        self.model.read().expect("model lock").clone()
    }

    /// Installs a model. A window that looks into the future needs delayed output.
    pub fn load_model(&self, model: TrainedModel) -> Result<(), ServiceError> {
        let window = model.window();
        if window.mode == WindowMode::PastAndFuture && !self.delayed {
            return Err(ServiceError::ModeMismatch(format!(
                "model uses a {} window ({} ms lookahead); start the service in delayed mode",
                window.mode.label(),
                window.lookahead_ms()
            )));
        }
        if model.metadata.floorplan != self.floorplan.name {
            warn!(
                model_flat = %model.metadata.floorplan,
                flat = %self.floorplan.name,
                "model was trained on another flat"
            );
        }
        *self.model.write().expect("model lock") = Some(Arc::new(model));
        Ok(())
    }

    pub fn ingest(&self, sample: &RssiSample) {
        self.tags.lock().expect("tags lock").insert(sample.tag_id.clone());
        self.buffer.lock().expect("buffer lock").push(sample);
    }

    pub fn latest(&self, tag_id: &str) -> Result<LivePosition, ServiceError> {
        self.latest
            .lock()
            .expect("latest lock")
            .get(tag_id)
            .cloned()
            .ok_or_else(|| ServiceError::NoPosition(tag_id.to_owned()))
    }

    /// Time the output for a tick at `now_ms` refers to.
    pub fn t_star(&self, now_ms: i64) -> Result<i64, ServiceError> {
        let model = self.model().ok_or(ServiceError::ModelNotLoaded)?;
        Ok(if self.delayed {
            now_ms - model.window().lookahead_ms()
        } else {
            now_ms
        })
    }

    /// One prediction per tag ever heard: a position, or a gap marker when
    /// the whole window is silent.
    pub fn tick(&self, now_ms: i64) -> Result<Vec<Event>, ServiceError> {
        let model = self.model().ok_or(ServiceError::ModelNotLoaded)?;
        let t_star = self.t_star(now_ms)?;
        let spec = model.window();
        let tags: Vec<String> = self.tags.lock().expect("tags lock").iter().cloned().collect();
        let mut out = Vec::with_capacity(tags.len());
        {
            let buffer = self.buffer.lock().expect("buffer lock");
            for tag_id in tags {
                match build_feature_frame(&buffer, &tag_id, &model.metadata.roster, spec, t_star) {
                    Ok(frame) => {
                        let pos = self.to_position(&tag_id, model.predict_one(&frame)?);
                        out.push(Event::Position(pos));
                    }
                    Err(SegmentError::AllMissing { .. }) => {
                        debug!(tag = %tag_id, t_star, "window silent");
                        out.push(Event::Gap { t_ms: t_star, tag_id });
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let keep_from = t_star - spec.past_steps() as i64 * spec.sub_span_ms - PRUNE_SLACK_MS;
        self.buffer.lock().expect("buffer lock").prune_before(keep_from);
        let mut latest = self.latest.lock().expect("latest lock");
        for e in &out {
            if let Event::Position(p) = e {
                latest.insert(p.tag_id.clone(), p.clone());
            }
        }
        Ok(out)
    }

    fn to_position(&self, tag_id: &str, prediction: Prediction) -> LivePosition {
        let fp = &self.floorplan;
        let (estimate, room) = match prediction {
            Prediction::Position(p) => (p, fp.room_of(p.x_px, p.y_px).cloned()),
            Prediction::Rooms(r) => {
                // A room head has no coordinates; report the room's centroid.
                let room = fp.rooms.get(r.argmax());
                let (x, y) = room
                    .map(centroid)
                    .unwrap_or((fp.width_px as f64 / 2.0, fp.height_px as f64 / 2.0));
                let est = PositionEstimate {
                    t_star_ms: r.t_star_ms,
                    x_norm: x / fp.width_px as f64,
                    y_norm: y / fp.height_px as f64,
                    x_px: x,
                    y_px: y,
                };
                (est, room.map(|r| r.label.clone()))
            }
        };
        LivePosition {
            t_ms: estimate.t_star_ms,
            tag_id: tag_id.to_owned(),
            estimate,
            room,
            source: PositionSource::Model,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use homeloc_core::model::{train, ModelConfig, ModelKind, TrainConfig};
    use homeloc_core::segmentation::{generate_training_set, SegmentConfig};
    use homeloc_core::synth::{generate, SynthConfig, SYNTH_TAG};
    use homeloc_core::{Tech, WindowSpec};

    fn knn(mode: WindowMode) -> (TrainedModel, homeloc_core::synth::SynthDataset) {
        let ds = generate(&SynthConfig {
            duration_s: 120.0,
            ..SynthConfig::default()
        });
        let roster = ds.floorplan.roster(Tech::Uwb);
        let cfg = SegmentConfig::new(WindowSpec::new(4.0, 1.0, mode).unwrap(), roster, SYNTH_TAG);
        let set = generate_training_set(&ds.streams(), &ds.labels, &ds.floorplan, &cfg).unwrap();
        let model = train(
            &ModelConfig::regression(ModelKind::Knn, 1),
            &TrainConfig::default(),
            &set,
        )
        .unwrap();
        (model, ds)
    }

    #[test]
    fn future_window_needs_delayed_mode() {
        let (model, ds) = knn(WindowMode::PastAndFuture);
        let live = Tracker::new(ds.floorplan.clone(), false);
        assert!(matches!(
            live.load_model(model.clone()),
            Err(ServiceError::ModeMismatch(_))
        ));
        let delayed = Tracker::new(ds.floorplan, true);
        delayed.load_model(model).unwrap();
        assert_eq!(delayed.t_star(10_000).unwrap(), 8_000);
    }

    #[test]
    fn tick_emits_positions_then_gaps() {
        let (model, ds) = knn(WindowMode::OnlyPast);
        let tracker = Tracker::new(ds.floorplan.clone(), false);
        assert!(matches!(tracker.tick(0), Err(ServiceError::ModelNotLoaded)));
        tracker.load_model(model).unwrap();
        let t0 = ds.samples[0].t_ms;
        for s in ds.samples.iter().filter(|s| s.t_ms < t0 + 10_000) {
            tracker.ingest(s);
        }
        let events = tracker.tick(t0 + 10_000).unwrap();
        let [Event::Position(p)] = events.as_slice() else {
            panic!("expected one position, got {events:?}");
        };
        assert_eq!(p.t_ms, t0 + 10_000);
        assert!(ds.floorplan.contains(p.estimate.x_px, p.estimate.y_px));
        assert_eq!(tracker.latest(SYNTH_TAG).unwrap(), *p);

        // Nothing heard for longer than the window.
        let events = tracker.tick(t0 + 20_000).unwrap();
        assert_eq!(
            events,
            vec![Event::Gap {
                t_ms: t0 + 20_000,
                tag_id: SYNTH_TAG.into()
            }]
        );
        assert!(matches!(tracker.latest("other"), Err(ServiceError::NoPosition(_))));
    }
}
