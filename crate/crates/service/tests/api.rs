use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use homeloc_core::ingest::{loopback, Clock, LiveOptions, LogRecord, ManualClock, PositionSource};
use homeloc_core::model::{train, ModelConfig, ModelKind, TrainConfig};
use homeloc_core::segmentation::{generate_training_set, SegmentConfig};
use homeloc_core::synth::{generate, SynthConfig, SynthDataset, SYNTH_TAG};
use homeloc_core::{Tech, TrainedModel, WindowMode, WindowSpec};
use homeloc_service::{Event, ReplayLine, ReplaySource, Service, ServiceConfig, ServiceError};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn dataset() -> SynthDataset {
    generate(&SynthConfig {
        duration_s: 120.0,
        ..SynthConfig::default()
    })
}

fn knn(ds: &SynthDataset, mode: WindowMode) -> TrainedModel {
    let roster = ds.floorplan.roster(Tech::Uwb);
    let cfg = SegmentConfig::new(WindowSpec::new(4.0, 1.0, mode).unwrap(), roster, SYNTH_TAG);
    let set = generate_training_set(&ds.streams(), &ds.labels, &ds.floorplan, &cfg).unwrap();
    train(
        &ModelConfig::regression(ModelKind::Knn, 1),
        &TrainConfig::default(),
        &set,
    )
    .unwrap()
}

struct Fixture {
    ds: SynthDataset,
    clock: Arc<ManualClock>,
    service: Service,
    _dir: tempfile::TempDir,
}

fn fixture(with_model: bool) -> Fixture {
    let ds = dataset();
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(ds.labels[0].t_ms));
    let service = Service::new(
        ServiceConfig::new(ds.floorplan.clone(), dir.path().to_path_buf()),
        clock.clone(),
    )
    .unwrap();
    if with_model {
        service.load_model(knn(&ds, WindowMode::OnlyPast)).unwrap();
    }
    Fixture {
        ds,
        clock,
        service,
        _dir: dir,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

/// Feeds one second of synthetic readings and labels, then runs a predict step.
fn play_second(f: &Fixture, session: Option<&str>, t_end: i64) {
    let state = f.service.state();
    for s in f.ds.samples.iter().filter(|s| s.t_ms > t_end - 1000 && s.t_ms <= t_end) {
        state.tracker.ingest(s);
        state.sessions.record_sample(s).unwrap();
    }
    if let Some(id) = session {
        for l in f.ds.labels.iter().filter(|l| l.t_ms > t_end - 1000 && l.t_ms <= t_end) {
            state
                .sessions
                .submit_label(id, l.t_ms, l.x_px, l.y_px, &f.ds.floorplan)
                .unwrap();
        }
    }
    f.clock.set(t_end);
    state.predict_once().unwrap();
}

#[tokio::test]
async fn session_endpoints() {
    let f = fixture(true);
    let app = f.service.router();

    let (st, health) = call(&app, "GET", "/health", None).await;
    assert_eq!((st, health["model"].as_str()), (StatusCode::OK, Some("KNN")));

    let (st, fp) = call(&app, "GET", "/floorplan/synthetic", None).await;
    assert_eq!((st, fp["width_px"].as_u64()), (StatusCode::OK, Some(460)));
    let (st, err) = call(&app, "GET", "/floorplan/nowhere", None).await;
    assert_eq!(
        (st, err["error"].as_str()),
        (StatusCode::NOT_FOUND, Some("UnknownFlat"))
    );

    let (st, session) = call(&app, "POST", "/sessions", Some(json!({"tag_id": "tag0"}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(session["state"], "RECORDING");
    let id = session["session_id"].as_str().unwrap().to_owned();
    let (st, err) = call(&app, "POST", "/sessions", Some(json!({"tag_id": "tag0"}))).await;
    assert_eq!(
        (st, err["error"].as_str()),
        (StatusCode::CONFLICT, Some("AlreadyRecording"))
    );

    let (st, echo) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/labels"),
        Some(json!({"x_px": 100.0, "y_px": 200.0})),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(echo["label"]["t_ms"].as_i64(), Some(f.clock.now_ms()));
    assert_eq!(echo["room"]["name"], "living");
    let (st, err) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/labels"),
        Some(json!({"x_px": 461.0, "y_px": 5.0})),
    )
    .await;
    assert_eq!(
        (st, err["error"].as_str()),
        (StatusCode::UNPROCESSABLE_ENTITY, Some("OutOfCanvas"))
    );
    let (st, err) = call(
        &app,
        "POST",
        "/sessions/missing/labels",
        Some(json!({"x_px": 1.0, "y_px": 1.0})),
    )
    .await;
    assert_eq!(
        (st, err["error"].as_str()),
        (StatusCode::NOT_FOUND, Some("NoSuchSession"))
    );

    let (st, stopped) = call(&app, "POST", &format!("/sessions/{id}/stop"), None).await;
    assert_eq!((st, stopped["state"].as_str()), (StatusCode::OK, Some("STOPPED")));
    let (st, err) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/labels"),
        Some(json!({"x_px": 1.0, "y_px": 1.0})),
    )
    .await;
    assert_eq!(
        (st, err["error"].as_str()),
        (StatusCode::CONFLICT, Some("SessionNotRecording"))
    );

    let (st, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!((st, list.as_array().map(Vec::len)), (StatusCode::OK, Some(1)));
    let (_, one) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(one, stopped);
}

#[tokio::test]
async fn live_position_and_gap() {
    let f = fixture(true);
    let app = f.service.router();
    let (st, err) = call(&app, "GET", "/live/tag0", None).await;
    assert_eq!((st, err["error"].as_str()), (StatusCode::NOT_FOUND, Some("NoPosition")));

    let t0 = f.ds.labels[0].t_ms;
    for k in 1..=6 {
        play_second(&f, None, t0 + k * 1000);
    }
    let (st, pos) = call(&app, "GET", "/live/tag0", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(pos["t_ms"].as_i64(), Some(t0 + 6000));
    assert_eq!(pos["source"], "model");

    // The tag goes silent: once the window is empty a gap is emitted instead of a position.
    let mut rx = f.service.state().events.subscribe();
    f.clock.set(t0 + 11_000);
    f.service.state().predict_once().unwrap();
    let gap = rx.try_recv().unwrap();
    assert_eq!(
        gap,
        Event::Gap {
            t_ms: t0 + 11_000,
            tag_id: SYNTH_TAG.into()
        }
    );
}

#[tokio::test]
async fn predict_without_model_is_unavailable() {
    let f = fixture(false);
    assert!(matches!(
        f.service.state().predict_once(),
        Err(ServiceError::ModelNotLoaded)
    ));
    let (st, health) = call(&f.service.router(), "GET", "/health", None).await;
    assert_eq!((st, health["model"].clone()), (StatusCode::OK, Value::Null));
}

#[tokio::test]
async fn future_window_requires_delayed_service() {
    let f = fixture(false);
    let model = knn(&f.ds, WindowMode::PastAndFuture);
    assert!(matches!(
        f.service.load_model(model.clone()),
        Err(ServiceError::ModeMismatch(_))
    ));

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::new(f.ds.floorplan.clone(), dir.path().to_path_buf());
    cfg.delayed = true;
    let delayed = Service::new(cfg, f.clock.clone()).unwrap();
    delayed.load_model(model).unwrap();
    f.clock.set(1_000_000);
    assert_eq!(delayed.state().tracker.t_star(1_000_000).unwrap(), 998_000);
}

#[tokio::test]
async fn event_stream_delivers_label_echo() {
    let f = fixture(true);
    let app = f.service.router();
    let resp = app
        .clone()
        .oneshot(Request::get("/events").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
    let mut body = resp.into_body();

    let (_, session) = call(&app, "POST", "/sessions", Some(json!({"tag_id": "tag0"}))).await;
    let id = session["session_id"].as_str().unwrap();
    call(
        &app,
        "POST",
        &format!("/sessions/{id}/labels"),
        Some(json!({"x_px": 10.0, "y_px": 20.0, "t_ms": 5})),
    )
    .await;

    let mut lines = Vec::new();
    while lines.len() < 2 {
        let frame = tokio::time::timeout(Duration::from_secs(5), body.frame())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        let text = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
        lines.extend(text.lines().map(str::to_owned));
    }
    let events: Vec<Event> = lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(matches!(&events[0], Event::Session(s) if s.session_id == id));
    let Event::Label(echo) = &events[1] else {
        panic!("expected label echo, got {:?}", events[1]);
    };
    assert_eq!((echo.label.t_ms, echo.label.x_px, echo.label.y_px), (5, 10.0, 20.0));
}

#[tokio::test]
async fn bus_feeds_tracker_and_session() {
    let mut f = fixture(true);
    let (publisher, source) = loopback();
    f.service.attach_bus(source, LiveOptions::default());
    let state = f.service.state();
    let session = state.sessions.start("synthetic", "tag0", f.clock.now_ms()).unwrap();

    f.clock.set(2_000_000);
    assert!(publisher.publish("tags/tag0/uwb", "1668521779000 a1 -61.5"));
    assert!(publisher.publish(&format!("labels/{}", session.session_id), "1668521779000 30 40"));
    assert!(publisher.publish("labels/unknown", "1668521779000 30 40"));
    assert!(publisher.publish("tags/tag0/uwb", "garbage"));

    let records = tokio::time::timeout(Duration::from_secs(5), async {
        loop {
            let r = state.sessions.records(&session.session_id).unwrap();
            if r.len() >= 2 && f.service.bus_stats()[0].received == 4 {
                break r;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    })
    .await
    .expect("bus records reach the session log");
    let stats = f.service.bus_stats();
    assert_eq!((stats[0].received, stats[0].malformed), (4, 1));
    let LogRecord::Rssi(s) = &records[0].1 else {
        panic!("expected reading first: {records:?}");
    };
    assert_eq!((s.t_ms, s.rssi_dbm), (2_000_000, -61.5));
    assert!(matches!(&records[1].1, LogRecord::Label(l) if (l.t_ms, l.x_px) == (2_000_000, 30.0)));
    // The reading reached the tracker too.
    f.clock.set(2_000_500);
    state.predict_once().unwrap();
    assert_eq!(state.tracker.latest("tag0").unwrap().t_ms, 2_000_500);
}

async fn replay_lines(app: &Router, uri: &str) -> Vec<(Duration, ReplayLine)> {
    let start = tokio::time::Instant::now();
    let resp = app
        .clone()
        .oneshot(Request::post(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let mut body = resp.into_body();
    let mut out = Vec::new();
    while let Some(frame) = body.frame().await {
        let data = frame.unwrap().into_data().unwrap();
        for line in std::str::from_utf8(&data).unwrap().lines() {
            out.push((start.elapsed(), serde_json::from_str(line).unwrap()));
        }
    }
    out
}

#[tokio::test(start_paused = true)]
async fn replay_is_paced_and_scored_against_labels() {
    let f = fixture(true);
    let app = f.service.router();
    let state = f.service.state();
    let t0 = f.ds.labels[0].t_ms;
    let id = state.sessions.start("synthetic", SYNTH_TAG, t0).unwrap().session_id;
    for k in 1..=10 {
        play_second(&f, Some(&id), t0 + k * 1000);
    }
    state.sessions.stop(&id, t0 + 10_000).unwrap();

    for speed in [1.0, 4.0] {
        let lines = replay_lines(&app, &format!("/sessions/{id}/replay?speed={speed}")).await;
        assert_eq!(lines.len(), 11);
        assert_eq!(lines.last().unwrap().1, ReplayLine::End { frames: 10 });
        let frames: Vec<_> = lines
            .iter()
            .filter_map(|(at, l)| match l {
                ReplayLine::Frame(fr) => Some((*at, fr.clone())),
                ReplayLine::End { .. } => None,
            })
            .collect();
        let first_t = frames[0].1.t_ms;
        for (at, fr) in &frames {
            assert_eq!(fr.source, ReplaySource::Recorded);
            let due = Duration::from_secs_f64((fr.t_ms - first_t) as f64 / 1000.0 / speed);
            assert!(*at >= due && *at < due + Duration::from_millis(5), "{at:?} vs {due:?}");
            assert!(fr.estimate.is_some());
            let truth = fr.truth.expect("replayed inside the labeled span");
            let logged = f.ds.labels.iter().find(|l| l.t_ms == fr.t_ms).unwrap();
            assert_eq!(truth, [logged.x_px, logged.y_px]);
        }
    }

    // Recomputing with the same model reproduces the recorded positions.
    let recorded: Vec<_> = state
        .sessions
        .records(&id)
        .unwrap()
        .into_iter()
        .filter_map(|(_, r)| match r {
            LogRecord::Position(p) if p.source == PositionSource::Model => Some((p.t_ms, [p.x_px, p.y_px])),
            _ => None,
        })
        .collect();
    let lines = replay_lines(&app, &format!("/sessions/{id}/replay?speed=1000&source=recomputed")).await;
    for (_, l) in lines {
        if let ReplayLine::Frame(fr) = l {
            assert_eq!(fr.source, ReplaySource::Recomputed);
            if let Some((_, xy)) = recorded.iter().find(|(t, _)| *t == fr.t_ms) {
                assert_eq!(fr.estimate, Some(*xy), "t={}", fr.t_ms);
            }
        }
    }

    let (st, err) = call(&app, "POST", &format!("/sessions/{id}/replay?speed=0"), None).await;
    assert_eq!(
        (st, err["error"].as_str()),
        (StatusCode::BAD_REQUEST, Some("BadRequest"))
    );
}

#[tokio::test(start_paused = true)]
async fn empty_session_replays_immediately() {
    let f = fixture(false);
    let app = f.service.router();
    let id = f
        .service
        .state()
        .sessions
        .start("synthetic", "tag9", 0)
        .unwrap()
        .session_id;
    let lines = replay_lines(&app, &format!("/sessions/{id}/replay")).await;
    assert_eq!(lines, vec![(Duration::ZERO, ReplayLine::End { frames: 0 })]);
    let (st, err) = call(&app, "POST", &format!("/sessions/{id}/replay?source=recomputed"), None).await;
    assert_eq!(
        (st, err["error"].as_str()),
        (StatusCode::SERVICE_UNAVAILABLE, Some("ModelNotLoaded"))
    );
}

#[tokio::test]
async fn serves_over_tcp() {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let f = fixture(true);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(f.service.serve(listener));
    let mut conn = tokio::net::TcpStream::connect(addr).await.unwrap();
    conn.write_all(b"GET /health HTTP/1.1\r\nHost: test\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut resp = String::new();
    conn.read_to_string(&mut resp).await.unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"status\":\"ok\""));
    server.abort();
}
