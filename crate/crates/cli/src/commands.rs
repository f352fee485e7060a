use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use homeloc_core::experiment::{
    evaluate_regression, read_estimates, run_matrix, score_external_estimates, EvalReport, EvalRow, MatrixData,
    MatrixPreset, MatrixSpec,
};
use homeloc_core::ingest::{
    load_dataset, load_flat, subscribe_live, Clock, DataFile, LiveOptions, LiveRecord, LoadOptions, LoadedDataset,
    LogRecord, MqttConfig, MqttSource, RecordKind, RecordSchema, SessionLog, SystemClock, TimestampMode,
};
use homeloc_core::model::{self, load_model, save_model, Head, ModelConfig, ModelKind, TrainConfig};
use homeloc_core::segmentation::{
    generate_training_set, read_training_set, summarize_dataset, write_training_set, SegmentConfig,
};
use homeloc_core::synth::{generate, write_dataset, SynthConfig};
use homeloc_core::{FlatConfig, RssiSample, Tech, WindowMode, WindowSpec};
use homeloc_service::{Service, ServiceConfig, TokioClock};
use tracing::info;

use crate::{
    EvalArgs, IngestArgs, PredictArgs, ScoreExternalArgs, SegmentArgs, ServeArgs, SummarizeArgs, SynthArgs, TrainArgs,
    TrainBudget,
};

fn load_flat_config(path: &Path) -> Result<FlatConfig> {
    FlatConfig::load(path).with_context(|| format!("loading flat config {}", path.display()))
}

fn load_flat_data(cfg: &FlatConfig, strict: bool) -> Result<LoadedDataset> {
    load_flat(cfg, LoadOptions { strict }).with_context(|| format!("loading data for flat `{}`", cfg.floorplan.name))
}

fn parse_tech(s: &str) -> Result<Tech> {
    Ok(s.parse()?)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Runtime::new()?)
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let mut log = SessionLog::open(&a.out)?;
    if a.live {
        let uri = a.bus.as_deref().expect("clap requires --bus with --live");
        let report = runtime()?.block_on(async {
            let bus = MqttSource::new(&MqttConfig::from_uri(uri)?);
            let opts = LiveOptions {
                mode: if a.recorded_timestamps {
                    TimestampMode::Recorded
                } else {
                    TimestampMode::Live
                },
                ..LiveOptions::default()
            };
            let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
            let handle = subscribe_live(bus, Arc::new(SystemClock::new()), opts, tx);
            let deadline = async {
                match a.duration_s {
                    Some(s) => tokio::time::sleep(Duration::from_secs_f64(s)).await,
                    None => std::future::pending().await,
                }
            };
            tokio::pin!(deadline);
            loop {
                tokio::select! {
                    item = rx.recv() => {
                        let Some(item) = item else { break };
                        let rec = match item.record {
                            LiveRecord::Rssi(s) => LogRecord::Rssi(s),
                            LiveRecord::Label(l) => LogRecord::Label(l),
                        };
                        log.append(&rec)?;
                    }
                    _ = &mut deadline => break,
                    _ = tokio::signal::ctrl_c() => break,
                }
            }
            log.flush()?;
            let stats = handle.stats();
            handle.stop();
            anyhow::Ok(stats.to_report())
        })?;
        if a.stats {
            print!("{}", report.render());
        }
        return Ok(());
    }

    let Some(flat) = a.flat.as_deref() else {
        bail!("--flat is required unless --live is given");
    };
    let cfg = load_flat_config(flat)?;
    let data = load_flat_data(&cfg, a.strict)?;
    let mut samples: Vec<RssiSample> = data
        .streams
        .iter()
        .flat_map(|s| {
            s.readings().iter().map(|r| RssiSample {
                t_ms: r.t_ms,
                source_id: s.key.source_id.clone(),
                tech: s.tech,
                rssi_dbm: r.rssi_dbm,
                tag_id: s.key.tag_id.clone(),
            })
        })
        .collect();
    samples.sort_by(|x, y| (x.t_ms, &x.source_id).cmp(&(y.t_ms, &y.source_id)));
    for l in &data.labels {
        log.append(&LogRecord::Label(l.clone()))?;
    }
    for s in samples {
        log.append(&LogRecord::Rssi(s))?;
    }
    log.flush()?;
    println!(
        "stored {} readings and {} labels in {}",
        data.report.rssi_samples,
        data.report.labels,
        a.out.display()
    );
    if a.stats {
        print!("{}", data.report.render());
    }
    Ok(())
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let cfg = load_flat_config(&a.flat)?;
    let tech = parse_tech(&a.tech)?;
    let mode: WindowMode = a.mode.parse()?;
    let mut spec = WindowSpec::new(a.window, a.sub, mode)?;
    if let Some(n) = a.steps {
        spec = spec.with_steps(n)?;
    }
    let data = load_flat_data(&cfg, false)?;
    let mut roster = cfg.floorplan.roster(tech);
    if roster.is_empty() {
        let tech_streams = data.streams.with_tech(tech);
        roster = tech_streams.iter().map(|s| s.key.source_id.clone()).collect();
        roster.sort();
        roster.dedup();
    }
    let mut seg = SegmentConfig::new(spec, roster, cfg.data.tag.clone()).with_tech(tech);
    seg.step_ms = a.step_ms;
    let set = generate_training_set(&data.streams.with_tech(tech), &data.labels, &cfg.floorplan, &seg)?;
    write_training_set(&set, &a.out)?;
    let d = &set.discards;
    println!(
        "{} samples ({} grid points, {} in labeling gaps, {} silent) with {} steps x {} sources -> {}",
        set.len(),
        d.grid_points,
        d.gap_dropped,
        d.all_missing_dropped,
        spec.n_steps,
        set.config.roster.len(),
        a.out.display()
    );
    Ok(())
}

fn apply_budget(train: &mut TrainConfig, model: &mut ModelConfig, b: &TrainBudget) {
    if let Some(v) = b.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = b.patience {
        train.patience = v;
    }
    if let Some(v) = b.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = b.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = b.trees {
        model.forest.n_trees = v;
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let set = read_training_set(&a.dataset)?;
    let kind: ModelKind = a.model.parse()?;
    let head = if a.rooms {
        if set.floorplan.rooms.is_empty() {
            bail!("flat `{}` has no rooms to classify", set.floorplan.name);
        }
        Head::ClassifyRoom {
            n_rooms: set.floorplan.rooms.len(),
        }
    } else {
        Head::RegressionXy
    };
    let mut model_cfg = ModelConfig::new(kind, head, a.seed);
    model_cfg.binary_cross_entropy = a.binary_rooms;
    model_cfg.mask_channels = a.mask_channels;
    if let Some(k) = a.k {
        model_cfg.knn_k = k;
    }
    let mut train_cfg = TrainConfig::default();
    apply_budget(&mut train_cfg, &mut model_cfg, &a.budget);
    let model = model::train(&model_cfg, &train_cfg, &set)?;
    save_model(&model, &a.out)?;
    let m = &model.metadata;
    println!(
        "{} trained on {} samples ({} validation), {} epochs, best {} -> {}",
        kind.label(),
        m.n_train,
        m.n_val,
        m.epochs_run,
        m.best_epoch,
        a.out.display()
    );
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let set = read_training_set(&a.dataset)?;
    let frames: Vec<_> = set.samples.iter().map(|s| &s.frame).collect();
    let preds = model.predict(&frames)?;
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let room_name = |i: usize| {
        set.floorplan
            .rooms
            .get(i)
            .map_or_else(String::new, |r| r.label.name.clone())
    };
    w.write_record(["t_ms", "x_px", "y_px", "room", "truth_x_px", "truth_y_px", "truth_room"])?;
    for (p, s) in preds.iter().zip(&set.samples) {
        let (x, y, room) = match p.position() {
            Some(e) => (
                e.x_px.to_string(),
                e.y_px.to_string(),
                set.floorplan
                    .room_of(e.x_px, e.y_px)
                    .map_or_else(String::new, |r| r.name.clone()),
            ),
            None => (
                String::new(),
                String::new(),
                p.rooms().map_or_else(String::new, |r| room_name(r.argmax())),
            ),
        };
        let truth_room = s.target.room.as_ref().map_or_else(String::new, |r| r.name.clone());
        w.write_record([
            s.frame.t_star_ms.to_string(),
            x,
            y,
            room,
            s.target.x_px.to_string(),
            s.target.y_px.to_string(),
            truth_room,
        ])?;
    }
    w.flush()?;
    if model.config.head == Head::RegressionXy && !set.is_empty() {
        let m = evaluate_regression(&model, &set)?;
        println!(
            "{} predictions -> {}; MAE x {:.3} m, y {:.3} m, combined {:.3} m",
            preds.len(),
            a.out.display(),
            m.mae_x_m,
            m.mae_y_m,
            m.mae_m
        );
    } else {
        println!("{} predictions -> {}", preds.len(), a.out.display());
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let cfg = load_flat_config(&a.flat)?;
    let tech = parse_tech(&a.tech)?;
    let preset: MatrixPreset = a.matrix.parse()?;
    let mut spec = MatrixSpec::preset(preset);
    if let Some(k) = a.folds {
        spec.k_folds = k;
    }
    if !a.models.is_empty() {
        spec.models = a.models.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    }
    spec.grouped_folds |= a.grouped;
    apply_budget(&mut spec.train, &mut spec.template, &a.budget);
    let data = load_flat_data(&cfg, false)?;
    let configs = spec.configs(&cfg.floorplan.name, tech, a.seed)?;
    info!(cells = configs.len(), "running matrix");
    let report = run_matrix(
        &configs,
        MatrixData {
            floorplan: &cfg.floorplan,
            streams: &data.streams,
            labels: &data.labels,
            tag_id: &cfg.data.tag,
        },
    );
    report.write_csv(&a.out)?;
    print!("{}", report.summary());
    if let Some(dir) = &a.emit_plots {
        let files = report.write_plot_series(dir)?;
        println!("wrote {} plot series to {}", files.len(), dir.display());
    }
    let failed = report.rows.iter().filter(|r| !r.status.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see the status column", report.rows.len());
    }
    Ok(())
}

pub fn score_external(a: ScoreExternalArgs) -> Result<()> {
    let cfg = load_flat_config(&a.flat)?;
    let estimates = read_estimates(&a.estimates)?;
    let schema = RecordSchema::new(RecordKind::Label)
        .with_delimiter(cfg.data.delimiter)
        .with_epoch_unit(cfg.data.epoch_unit);
    let labels = load_dataset(
        &[DataFile::new(&a.labels, schema)],
        Some(&cfg.floorplan),
        LoadOptions::default(),
    )?
    .labels;
    let score = score_external_estimates(&estimates, &labels, &cfg.floorplan, a.max_gap_ms)?;
    print!("{}", score.render());
    if let Some(out) = &a.out {
        EvalReport {
            rows: vec![EvalRow::external(&cfg.floorplan.name, &a.system, &score)],
        }
        .write_csv(out)?;
    }
    Ok(())
}

fn listen_addr(s: &str) -> Result<SocketAddr> {
    let full = if s.starts_with(':') {
        format!("0.0.0.0{s}")
    } else {
        s.to_owned()
    };
    full.parse().with_context(|| format!("bad listen address `{s}`"))
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let cfg = load_flat_config(&a.flat)?;
    let addr = listen_addr(&a.listen)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    runtime()?.block_on(async move {
        let clock = Arc::new(TokioClock::starting_at(SystemClock::new().now_ms()));
        let mut config = ServiceConfig::new(cfg.floorplan, a.data_dir);
        config.delayed = a.delayed;
        let mut service = Service::new(config, clock)?;
        if let Some(m) = model {
            service.load_model(m)?;
        }
        if let Some(uri) = &a.bus {
            service.attach_bus(MqttSource::new(&MqttConfig::from_uri(uri)?), LiveOptions::default());
        }
        service.spawn_predict_loop();
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on {}", listener.local_addr()?);
        tokio::select! {
            r = service.serve(listener) => r?,
            _ = tokio::signal::ctrl_c() => {}
        }
        anyhow::Ok(())
    })
}

pub fn summarize(a: SummarizeArgs) -> Result<()> {
    let cfg = load_flat_config(&a.flat)?;
    let data = load_flat_data(&cfg, false)?;
    let streams = match a.tech.as_deref() {
        Some(t) => data.streams.with_tech(parse_tech(t)?),
        None => data.streams,
    };
    print!("{}", summarize_dataset(&streams, &data.labels, &cfg.floorplan).render());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        duration_s: a.duration_s,
        noise_sigma_db: a.noise_db,
        ..SynthConfig::default()
    };
    let ds = generate(&cfg);
    let flat = write_dataset(&ds, &a.out)?;
    println!(
        "{} readings and {} labels; flat config {}",
        ds.samples.len(),
        ds.labels.len(),
        flat.display()
    );
    Ok(())
}
