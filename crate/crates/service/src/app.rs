//! Shared state, the background tasks and the HTTP routes.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use homeloc_core::ingest::{
    subscribe_live, BusSource, Clock, LiveOptions, LiveRecord, LiveStats, LogRecord, PositionRecord, PositionSource,
    Stamped, SubscriptionHandle,
};
use homeloc_core::{FloorPlan, TrainedModel};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use crate::error::ServiceError;
use crate::events::{Event, LabelEcho, LivePosition};
use crate::replay::{recomputed_frames, recorded_frames, ReplayLine, ReplaySource};
use crate::session::{Session, SessionStore};
use crate::tracker::Tracker;

const NDJSON: &str = "application/x-ndjson";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub floorplan: FloorPlan,
    /// Session logs live under `data_dir/sessions`.
    pub data_dir: PathBuf,
    /// Emit positions one lookahead behind real time.
    pub delayed: bool,
    pub tick: Duration,
    /// Events buffered per `/events` subscriber before it starts missing some.
    pub event_capacity: usize,
}

impl ServiceConfig {
    pub fn new(floorplan: FloorPlan, data_dir: PathBuf) -> Self {
        Self {
            floorplan,
            data_dir,
            delayed: false,
            tick: Duration::from_secs(1),
            event_capacity: 1024,
        }
    }
}

pub struct AppState {
    pub tracker: Tracker,
    pub sessions: SessionStore,
    pub events: broadcast::Sender<Event>,
    pub clock: Arc<dyn Clock>,
}

impl AppState {
    fn floorplan_named(&self, flat: &str) -> Result<&FloorPlan, ServiceError> {
        let fp = self.tracker.floorplan();
        if fp.name == flat {
            Ok(fp)
        } else {
            Err(ServiceError::UnknownFlat(flat.to_owned()))
        }
    }

    fn publish(&self, event: Event) {
        // No subscribers is fine.
        let _ = self.events.send(event);
    }

    /// Runs one predict step and fans the results out to logs and subscribers.
    pub fn predict_once(&self) -> Result<usize, ServiceError> {
        let events = self.tracker.tick(self.clock.now_ms())?;
        for e in &events {
            let (tag, rec) = match e {
                Event::Position(p) => (
                    &p.tag_id,
                    LogRecord::Position(PositionRecord {
                        t_ms: p.t_ms,
                        tag_id: p.tag_id.clone(),
                        x_px: p.estimate.x_px,
                        y_px: p.estimate.y_px,
                        room: p.room.as_ref().map(|r| r.name.clone()),
                        source: PositionSource::Model,
                    }),
                ),
                Event::Gap { t_ms, tag_id } => (
                    tag_id,
                    LogRecord::Gap {
                        t_ms: *t_ms,
                        tag_id: tag_id.clone(),
                    },
                ),
                _ => continue,
            };
            self.sessions.record_output(tag, &rec)?;
        }
        let n = events.len();
        for e in events {
            self.publish(e);
        }
        Ok(n)
    }

    fn handle_stamped(&self, item: Stamped) {
        match item.record {
            LiveRecord::Rssi(s) => {
                self.tracker.ingest(&s);
                if let Err(e) = self.sessions.record_sample(&s) {
                    warn!(%e, "could not log reading");
                }
            }
            LiveRecord::Label(l) => {
                let fp = self.tracker.floorplan();
                if let Err(e) = self.sessions.submit_label(&l.session_id, l.t_ms, l.x_px, l.y_px, fp) {
                    warn!(%e, session = %l.session_id, "bus label rejected");
                }
            }
        }
    }
}

/// The running service: state plus its background tasks.
pub struct Service {
    state: Arc<AppState>,
    tick: Duration,
    tasks: Vec<JoinHandle<()>>,
    subscriptions: Vec<SubscriptionHandle>,
}

impl Service {
    pub fn new(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let (events, _) = broadcast::channel(config.event_capacity.max(1));
        let sessions = SessionStore::open(&config.data_dir.join("sessions"), events.clone())?;
        let state = AppState {
            tracker: Tracker::new(config.floorplan, config.delayed),
            sessions,
            events,
            clock,
        };
        Ok(Self {
            state: Arc::new(state),
            tick: config.tick,
            tasks: Vec::new(),
            subscriptions: Vec::new(),
        })
    }

    pub fn state(&self) -> Arc<AppState> {
        Arc::clone(&self.state)
    }

    pub fn load_model(&self, model: TrainedModel) -> Result<(), ServiceError> {
        self.state.tracker.load_model(model)
    }

    pub fn router(&self) -> Router {
        router(self.state())
    }

    /// Subscribes to a bus; readings feed the tracker and open sessions,
    /// labels are validated like HTTP submissions.
    pub fn attach_bus<B: BusSource>(&mut self, bus: B, opts: LiveOptions) {
        let (tx, mut rx) = mpsc::unbounded_channel::<Stamped>();
        self.subscriptions
            .push(subscribe_live(bus, Arc::clone(&self.state.clock), opts, tx));
        let state = self.state();
        self.tasks.push(tokio::spawn(async move {
            while let Some(item) = rx.recv().await {
                state.handle_stamped(item);
            }
            debug!("bus pipeline closed");
        }));
    }

    /// Counters for each attached bus.
    pub fn bus_stats(&self) -> Vec<LiveStats> {
        self.subscriptions.iter().map(SubscriptionHandle::stats).collect()
    }

    /// Starts predicting once per tick.
    pub fn spawn_predict_loop(&mut self) {
        let state = self.state();
        let period = self.tick;
        self.tasks.push(tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                interval.tick().await;
                match state.predict_once() {
                    Ok(_) | Err(ServiceError::ModelNotLoaded) => {}
                    Err(e) => warn!(%e, "predict step failed"),
                }
            }
        }));
    }

    /// Serves HTTP until the listener fails.
    pub async fn serve(mut self, listener: tokio::net::TcpListener) -> std::io::Result<()> {
        if self.tasks.is_empty() {
            self.spawn_predict_loop();
        }
        info!(addr = ?listener.local_addr()?, "serving");
        let result = axum::serve(listener, self.router()).await;
        self.shutdown();
        result
    }

    pub fn shutdown(&mut self) {
        for s in self.subscriptions.drain(..) {
            s.stop();
        }
        for t in self.tasks.drain(..) {
            t.abort();
        }
        if let Err(e) = self.state.sessions.flush() {
            warn!(%e, "flushing session logs");
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/floorplan/{flat}", get(get_floorplan))
        .route("/sessions", get(list_sessions).post(start_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/stop", post(stop_session))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/replay", post(replay))
        .route("/live/{tag_id}", get(live))
        .route("/events", get(events))
        .with_state(state)
}

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Serialize)]
struct Health {
    status: &'static str,
    flat: String,
    model: Option<String>,
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        flat: s.tracker.floorplan().name.clone(),
        model: s.tracker.model().map(|m| m.kind().label().to_owned()),
    })
}

async fn get_floorplan(State(s): State<Arc<AppState>>, Path(flat): Path<String>) -> ApiResult<Json<FloorPlan>> {
    Ok(Json(s.floorplan_named(&flat)?.clone()))
}

#[derive(Debug, Deserialize)]
pub struct StartSession {
    pub tag_id: String,
    /// Defaults to the served flat.
    pub flat: Option<String>,
}

async fn start_session(State(s): State<Arc<AppState>>, Json(req): Json<StartSession>) -> ApiResult<Json<Session>> {
    let flat = match req.flat {
        Some(f) => s.floorplan_named(&f)?.name.clone(),
        None => s.tracker.floorplan().name.clone(),
    };
    if req.tag_id.trim().is_empty() {
        return Err(ServiceError::BadRequest("tag_id is empty".into()));
    }
    Ok(Json(s.sessions.start(&flat, &req.tag_id, s.clock.now_ms())?))
}

async fn list_sessions(State(s): State<Arc<AppState>>) -> Json<Vec<Session>> {
    Json(s.sessions.list())
}

async fn get_session(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(s.sessions.get(&id)?))
}

async fn stop_session(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(s.sessions.stop(&id, s.clock.now_ms())?))
}

#[derive(Debug, Deserialize)]
pub struct SubmitLabel {
    pub x_px: f64,
    pub y_px: f64,
    /// Defaults to the service clock.
    pub t_ms: Option<i64>,
}

async fn submit_label(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<SubmitLabel>,
) -> ApiResult<Json<LabelEcho>> {
    let session = s.sessions.get(&id)?;
    let fp = s.floorplan_named(&session.flat)?;
    let t_ms = req.t_ms.unwrap_or_else(|| s.clock.now_ms());
    Ok(Json(s.sessions.submit_label(&id, t_ms, req.x_px, req.y_px, fp)?))
}

async fn live(State(s): State<Arc<AppState>>, Path(tag_id): Path<String>) -> ApiResult<Json<LivePosition>> {
    Ok(Json(s.tracker.latest(&tag_id)?))
}

fn ndjson<S>(lines: S) -> Response
where
    S: Stream<Item = String> + Send + 'static,
{
    let body = Body::from_stream(lines.map(Ok::<_, std::convert::Infallible>));
    ([(header::CONTENT_TYPE, NDJSON)], body).into_response()
}

async fn events(State(s): State<Arc<AppState>>) -> Response {
    let rx = s.events.subscribe();
    let lines = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(e) => return Some((e.to_line(), rx)),
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    warn!(missed = n, "event subscriber fell behind");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    ndjson(lines)
}

#[derive(Debug, Deserialize)]
pub struct ReplayParams {
    pub speed: Option<f64>,
    pub source: Option<String>,
}

async fn replay(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ReplayParams>,
) -> ApiResult<Response> {
    let speed = q.speed.unwrap_or(1.0);
    if !(speed.is_finite() && speed > 0.0) {
        return Err(ServiceError::BadRequest(format!("speed must be positive, got {speed}")));
    }
    let source: ReplaySource = q.source.as_deref().map(str::parse).transpose()?.unwrap_or_default();
    let session = s.sessions.get(&id)?;
    let records = s.sessions.records(&id)?;
    let frames = match source {
        ReplaySource::Recorded => recorded_frames(&records),
        ReplaySource::Recomputed => {
            let model = s.tracker.model().ok_or(ServiceError::ModelNotLoaded)?;
            recomputed_frames(&records, &session.tag_id, &model, s.tracker.floorplan(), 1000)?
        }
    };
    let n = frames.len();
    let t0 = frames.first().map(|f| f.t_ms).unwrap_or(0);
    let start = tokio::time::Instant::now();
    let paced = stream::iter(frames).then(move |f| async move {
        let offset = Duration::from_secs_f64((f.t_ms - t0).max(0) as f64 / 1000.0 / speed);
        tokio::time::sleep_until(start + offset).await;
        ReplayLine::Frame(f).to_line()
    });
    let end = stream::once(async move { ReplayLine::End { frames: n }.to_line() });
    Ok(ndjson(paced.chain(end)))
}
