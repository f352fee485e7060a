//! Live ingestion from a publish/subscribe bus.
//!
//! Topics and payloads (UTF-8, whitespace separated):
//!
//! | topic                 | payload               |
//! |-----------------------|-----------------------|
//! | `tags/{tag_id}/uwb`   | `epoch anchor_id rssi`|
//! | `tags/{tag_id}/ble`   | `epoch rssi mac`      |
//! | `labels/{session_id}` | `epoch x_px y_px`     |

use std::future::Future;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use super::record::normalize_epoch;
use super::reorder::{ReorderBuffer, DEFAULT_REORDER_MS};
use super::{EpochUnit, IngestError, IngestReport, LabelSample, RssiSample, Tech};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Topic {
    Rssi { tag_id: String, tech: Tech },
    Label { session_id: String },
}

impl Topic {
    pub fn parse(topic: &str) -> Option<Topic> {
        let parts: Vec<&str> = topic.split('/').collect();
        match parts.as_slice() {
            ["tags", tag, "uwb"] if !tag.is_empty() => Some(Topic::Rssi {
                tag_id: (*tag).to_owned(),
                tech: Tech::Uwb,
            }),
            ["tags", tag, "ble"] if !tag.is_empty() => Some(Topic::Rssi {
                tag_id: (*tag).to_owned(),
                tech: Tech::Ble,
            }),
            ["labels", session] if !session.is_empty() => Some(Topic::Label {
                session_id: (*session).to_owned(),
            }),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Topic::Rssi { tag_id, tech } => format!("tags/{tag_id}/{tech}"),
            Topic::Label { session_id } => format!("labels/{session_id}"),
        }
    }

    /// Wildcard filters covering every topic above.
    pub fn filters() -> [&'static str; 3] {
        ["tags/+/uwb", "tags/+/ble", "labels/+"]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LiveRecord {
    Rssi(RssiSample),
    Label(LabelSample),
}

impl LiveRecord {
    pub fn t_ms(&self) -> i64 {
        match self {
            LiveRecord::Rssi(s) => s.t_ms,
            LiveRecord::Label(l) => l.t_ms,
        }
    }

    fn set_t_ms(&mut self, t: i64) {
        match self {
            LiveRecord::Rssi(s) => s.t_ms = t,
            LiveRecord::Label(l) => l.t_ms = t,
        }
    }
}

/// Parses one bus message. The payload epoch is validated even when the
/// receive clock will replace it.
pub fn parse_message(topic: &str, payload: &[u8]) -> Result<LiveRecord, IngestError> {
    let topic = Topic::parse(topic).ok_or_else(|| IngestError::malformed(format!("unknown topic `{topic}`")))?;
    let text = std::str::from_utf8(payload).map_err(|_| IngestError::malformed("payload is not UTF-8"))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() < 3 {
        return Err(IngestError::malformed(format!(
            "payload needs 3 fields, found {}",
            fields.len()
        )));
    }
    let t_ms = normalize_epoch(fields[0], EpochUnit::Auto)?;
    let real = |s: &str, what: &str| -> Result<f64, IngestError> {
        s.parse::<f64>()
            .map_err(|_| IngestError::malformed(format!("{what} `{s}` is not numeric")))
    };
    match topic {
        Topic::Rssi { tag_id, tech } => {
            let (source, rssi) = match tech {
                Tech::Uwb => (fields[1], fields[2]),
                Tech::Ble => (fields[2], fields[1]),
            };
            let rssi_dbm = real(rssi, "rssi")?;
            if !rssi_dbm.is_finite() {
                return Err(IngestError::NonFiniteRssi(rssi.to_owned()));
            }
            Ok(LiveRecord::Rssi(RssiSample {
                t_ms,
                source_id: source.to_owned(),
                tech,
                rssi_dbm,
                tag_id,
            }))
        }
        Topic::Label { session_id } => {
            let x_px = real(fields[1], "x")?;
            let y_px = real(fields[2], "y")?;
            if !x_px.is_finite() || !y_px.is_finite() {
                return Err(IngestError::malformed("non-finite label coordinate"));
            }
            Ok(LiveRecord::Label(LabelSample {
                t_ms,
                x_px,
                y_px,
                session_id,
            }))
        }
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

/// Wall-clock milliseconds anchored once at construction and advanced by a
/// monotonic timer, so readings never go backwards.
#[derive(Debug, Clone)]
pub struct SystemClock {
    base_ms: i64,
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        let base_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        Self {
            base_ms,
            start: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        self.base_ms + self.start.elapsed().as_millis() as i64
    }
}

/// Test clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(t_ms: i64) -> Self {
        Self(AtomicI64::new(t_ms))
    }

    pub fn set(&self, t_ms: i64) {
        self.0.store(t_ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestampMode {
    /// The subscriber clock stamps every message.
    #[default]
    Live,
    /// Sender epochs are kept (replaying a recording through the bus).
    Recorded,
}

/// Applies the timestamp policy and returns the time now attached to the record.
pub fn stamp_receive_time(record: &mut LiveRecord, clock: &dyn Clock, mode: TimestampMode) -> i64 {
    if mode == TimestampMode::Live {
        record.set_t_ms(clock.now_ms());
    }
    record.t_ms()
}

/// A parsed record with its arrival sequence number; equal timestamps are
/// ordered by `seq`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamped {
    pub seq: u64,
    pub record: LiveRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub topic: String,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BusEvent {
    Message(BusMessage),
    ConnectionLost(String),
    Reconnected,
}

/// Something that yields bus events. `None` means the bus is closed for good.
pub trait BusSource: Send + 'static {
    fn next_event(&mut self) -> impl Future<Output = Option<BusEvent>> + Send;
}

/// In-process bus used for tests and local wiring.
pub fn loopback() -> (LoopbackPublisher, LoopbackSource) {
    let (tx, rx) = mpsc::unbounded_channel();
    (LoopbackPublisher { tx }, LoopbackSource { rx })
}

#[derive(Debug, Clone)]
pub struct LoopbackPublisher {
    tx: mpsc::UnboundedSender<BusEvent>,
}

impl LoopbackPublisher {
    pub fn publish(&self, topic: &str, payload: impl Into<Vec<u8>>) -> bool {
        self.tx
            .send(BusEvent::Message(BusMessage {
                topic: topic.to_owned(),
                payload: payload.into(),
            }))
            .is_ok()
    }

    pub fn inject(&self, event: BusEvent) -> bool {
        self.tx.send(event).is_ok()
    }
}

#[derive(Debug)]
pub struct LoopbackSource {
    rx: mpsc::UnboundedReceiver<BusEvent>,
}

impl BusSource for LoopbackSource {
    fn next_event(&mut self) -> impl Future<Output = Option<BusEvent>> + Send {
        self.rx.recv()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MqttConfig {
    pub host: String,
    pub port: u16,
    pub client_id: String,
    pub keep_alive: Duration,
    pub max_backoff: Duration,
}

impl MqttConfig {
    /// Accepts `mqtt://host[:port][?client_id=..]`.
    pub fn from_uri(uri: &str) -> Result<Self, IngestError> {
        let url = url::Url::parse(uri).map_err(|e| IngestError::Bus(format!("{uri}: {e}")))?;
        if url.scheme() != "mqtt" && url.scheme() != "tcp" {
            return Err(IngestError::Bus(format!("unsupported bus scheme `{}`", url.scheme())));
        }
        let host = url
            .host_str()
            .ok_or_else(|| IngestError::Bus(format!("{uri}: missing host")))?
            .to_owned();
        let client_id = url
            .query_pairs()
            .find(|(k, _)| k == "client_id")
            .map(|(_, v)| v.into_owned())
            .unwrap_or_else(|| format!("homeloc-{}", std::process::id()));
        Ok(Self {
            host,
            port: url.port().unwrap_or(1883),
            client_id,
            keep_alive: Duration::from_secs(30),
            max_backoff: Duration::from_secs(5),
        })
    }
}

/// MQTT subscriber over `rumqttc`. Reconnects with exponential backoff and
/// re-subscribes after every reconnect.
pub struct MqttSource {
    client: rumqttc::AsyncClient,
    eventloop: rumqttc::EventLoop,
    disconnected: bool,
    backoff: Duration,
    max_backoff: Duration,
}

impl MqttSource {
    pub fn new(config: &MqttConfig) -> Self {
        let mut opts = rumqttc::MqttOptions::new(&config.client_id, &config.host, config.port);
        opts.set_keep_alive(config.keep_alive);
        let (client, eventloop) = rumqttc::AsyncClient::new(opts, 64);
        Self {
            client,
            eventloop,
            disconnected: false,
            backoff: Duration::from_millis(100),
            max_backoff: config.max_backoff,
        }
    }

    fn subscribe_all(&self) -> Result<(), rumqttc::ClientError> {
        for f in Topic::filters() {
            self.client.try_subscribe(f, rumqttc::QoS::AtMostOnce)?;
        }
        Ok(())
    }
}

impl BusSource for MqttSource {
    async fn next_event(&mut self) -> Option<BusEvent> {
        use rumqttc::{Event, Packet};
        loop {
            match self.eventloop.poll().await {
                Ok(Event::Incoming(Packet::ConnAck(_))) => {
                    self.backoff = Duration::from_millis(100);
                    if let Err(e) = self.subscribe_all() {
                        tracing::warn!(%e, "mqtt subscribe failed");
                    }
                    if self.disconnected {
                        self.disconnected = false;
                        return Some(BusEvent::Reconnected);
                    }
                }
                Ok(Event::Incoming(Packet::Publish(p))) => {
                    return Some(BusEvent::Message(BusMessage {
                        topic: p.topic,
                        payload: p.payload.to_vec(),
                    }));
                }
                Ok(_) => {}
                Err(e) => {
                    let delay = self.backoff;
                    self.backoff = (self.backoff * 2).min(self.max_backoff);
                    tracing::warn!(%e, ?delay, "mqtt connection lost, retrying");
                    tokio::time::sleep(delay).await;
                    if !self.disconnected {
                        self.disconnected = true;
                        return Some(BusEvent::ConnectionLost(e.to_string()));
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveOptions {
    pub mode: TimestampMode,
    /// Reorder horizon applied in recorded mode; receive stamps are already monotonic.
    pub reorder_ms: i64,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self {
            mode: TimestampMode::Live,
            reorder_ms: DEFAULT_REORDER_MS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LiveStats {
    pub received: u64,
    pub delivered: u64,
    pub malformed: u64,
    pub late_dropped: u64,
    pub gaps: Vec<(i64, Option<i64>)>,
}

impl LiveStats {
    pub fn to_report(&self) -> IngestReport {
        IngestReport {
            rssi_samples: 0,
            late_dropped: self.late_dropped,
            malformed_messages: self.malformed,
            connection_gaps: self.gaps.clone(),
            ..IngestReport::default()
        }
    }
}

pub struct SubscriptionHandle {
    stats: Arc<Mutex<LiveStats>>,
    task: JoinHandle<()>,
}

impl SubscriptionHandle {
    pub fn stats(&self) -> LiveStats {
        self.stats.lock().expect("stats lock").clone()
    }

    pub fn stop(&self) {
        self.task.abort();
    }

    /// Waits for the bus to close (or the sink to be dropped).
    pub async fn finished(self) -> LiveStats {
        let _ = self.task.await;
        let stats = self.stats.lock().expect("stats lock").clone();
        stats
    }
}

/// Spawns the subscriber loop. Each message is parsed, stamped and sent to
/// `sink` in arrival order; malformed messages are counted and skipped.
pub fn subscribe_live<B: BusSource>(
    mut bus: B,
    clock: Arc<dyn Clock>,
    opts: LiveOptions,
    sink: mpsc::UnboundedSender<Stamped>,
) -> SubscriptionHandle {
    let stats = Arc::new(Mutex::new(LiveStats::default()));
    let shared = Arc::clone(&stats);
    let task = tokio::spawn(async move {
        let mut seq = 0u64;
        let mut reorder: ReorderBuffer<Stamped> = ReorderBuffer::new(opts.reorder_ms);
        let deliver = |items: Vec<Stamped>, stats: &Mutex<LiveStats>| -> bool {
            for item in items {
                if sink.send(item).is_err() {
                    return false;
                }
                stats.lock().expect("stats lock").delivered += 1;
            }
            true
        };
        while let Some(event) = bus.next_event().await {
            match event {
                BusEvent::Message(msg) => {
                    shared.lock().expect("stats lock").received += 1;
                    let mut record = match parse_message(&msg.topic, &msg.payload) {
                        Ok(r) => r,
                        Err(e) => {
                            tracing::debug!(topic = %msg.topic, %e, "skipping malformed message");
                            shared.lock().expect("stats lock").malformed += 1;
                            continue;
                        }
                    };
                    let t = stamp_receive_time(&mut record, clock.as_ref(), opts.mode);
                    let item = Stamped { seq, record };
                    seq += 1;
                    let ready = match opts.mode {
                        TimestampMode::Live => vec![item],
                        TimestampMode::Recorded => {
                            let before = reorder.late_dropped();
                            let out = reorder.push(t, item);
                            if reorder.late_dropped() > before {
                                shared.lock().expect("stats lock").late_dropped += 1;
                            }
                            out
                        }
                    };
                    if !deliver(ready, &shared) {
                        return;
                    }
                }
                BusEvent::ConnectionLost(reason) => {
                    tracing::warn!(%reason, "bus connection lost");
                    shared.lock().expect("stats lock").gaps.push((clock.now_ms(), None));
                }
                BusEvent::Reconnected => {
                    let now = clock.now_ms();
                    if let Some(gap) = shared.lock().expect("stats lock").gaps.last_mut() {
                        if gap.1.is_none() {
                            gap.1 = Some(now);
                        }
                    }
                }
            }
        }
        deliver(reorder.flush(), &shared);
    });
    SubscriptionHandle { stats, task }
}
