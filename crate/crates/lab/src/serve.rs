//! The annotation service: an HTTP API over a shared inbox that an
//! [`InteractiveAnnotator`] blocks on during annotation rounds.
//!
//! | method | path                         | purpose                          |
//! |--------|------------------------------|----------------------------------|
//! | GET    | `/api/status`                | epoch, phase, latest metrics     |
//! | GET    | `/api/queries?state=pending` | queries with trajectory payload  |
//! | GET    | `/api/samples/{id}`          | one training sample              |
//! | POST   | `/api/queries/{id}/label`    | `{"label":"stable"\|"unstable"}` |

use std::net::SocketAddr;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mmr_core::data::{Class, Dataset, SoftLabel};
use mmr_core::hil::{Annotator, Answer, HilConfig, LabelSource, QueryItem, QueryStatus, TimeoutPolicy};
use mmr_core::metrics::MetricsSnapshot;
use mmr_core::trainer::{Method, Observer, Phase};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{LabError, Result};

/// Environment variable holding the default listen address.
pub const LISTEN_ENV: &str = "MMR_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStatus {
    pub round: usize,
    pub pending: usize,
    pub total: usize,
    /// Seconds until the round times out, if a timeout is configured.
    pub remaining_secs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub method: Method,
    pub epochs: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub done: bool,
    pub latest: Option<MetricsSnapshot>,
    pub round: Option<RoundStatus>,
}

#[derive(Clone, Debug)]
struct Slot {
    id: usize,
    item: QueryItem,
    train_label: SoftLabel,
}

#[derive(Debug)]
struct Inner {
    method: Method,
    epochs: usize,
    epoch: usize,
    phase: Phase,
    done: bool,
    latest: Option<MetricsSnapshot>,
    slots: Vec<Slot>,
    open_round: Option<(usize, Option<Instant>)>,
}

#[derive(Debug)]
struct Shared {
    inner: Mutex<Inner>,
    changed: Condvar,
    h: usize,
    w: usize,
    features: Vec<f32>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn sample(&self, id: usize) -> Option<&[f32]> {
        let len = self.h * self.w;
        self.features.get(id * len..(id + 1) * len)
    }

    fn status(&self) -> Status {
        let g = self.lock();
        let round = g.open_round.map(|(r, deadline)| {
            let items = g.slots.iter().filter(|s| s.item.round == r);
            RoundStatus {
                round: r,
                pending: items.clone().filter(|s| s.item.status == QueryStatus::Pending).count(),
                total: items.count(),
                remaining_secs: deadline.map(|d| d.saturating_duration_since(Instant::now()).as_secs_f64()),
            }
        });
        Status {
            method: g.method,
            epochs: g.epochs,
            epoch: g.epoch,
            phase: g.phase,
            done: g.done,
            latest: g.latest.clone(),
            round,
        }
    }
}

/// Wire form of a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub id: usize,
    pub sample_id: usize,
    pub round: usize,
    pub issued_epoch: usize,
    pub p_false: f64,
    pub direction: String,
    pub status: String,
    pub label: Option<String>,
    pub source: Option<String>,
    /// Training label when the query was issued.
    pub train_label: [f64; 2],
    pub shape: [usize; 3],
    pub features: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleView {
    pub id: usize,
    pub shape: [usize; 3],
    pub features: Vec<f32>,
}

fn view(shared: &Shared, s: &Slot) -> QueryView {
    QueryView {
        id: s.id,
        sample_id: s.item.sample_id,
        round: s.item.round,
        issued_epoch: s.item.issued_epoch,
        p_false: s.item.p_false,
        direction: s.item.direction.name().into(),
        status: s.item.status.name().into(),
        label: s.item.label.map(|c| c.name().into()),
        source: s.item.source.map(|c| c.name().into()),
        train_label: s.train_label.probs(),
        shape: [1, shared.h, shared.w],
        features: shared.sample(s.item.sample_id).unwrap_or(&[]).to_vec(),
    }
}

fn error(code: StatusCode, message: impl Into<String>) -> Response {
    (code, Json(json!({ "error": message.into() }))).into_response()
}

async fn get_status(State(shared): State<Arc<Shared>>) -> Json<Status> {
    Json(shared.status())
}

#[derive(Deserialize)]
struct QueryFilter {
    state: Option<String>,
}

async fn get_queries(State(shared): State<Arc<Shared>>, Query(filter): Query<QueryFilter>) -> Response {
    let wanted = match filter.state.as_deref() {
        None | Some("all") => None,
        Some(s) => match QueryStatus::parse(s) {
            Some(st) => Some(st),
            None => return error(StatusCode::BAD_REQUEST, format!("unknown state {s:?}")),
        },
    };
    let g = shared.lock();
    let items: Vec<QueryView> = g
        .slots
        .iter()
        .filter(|s| wanted.is_none_or(|w| s.item.status == w))
        .map(|s| view(&shared, s))
        .collect();
    Json(items).into_response()
}

async fn get_sample(State(shared): State<Arc<Shared>>, UrlPath(id): UrlPath<usize>) -> Response {
    match shared.sample(id) {
        Some(f) => Json(SampleView {
            id,
            shape: [1, shared.h, shared.w],
            features: f.to_vec(),
        })
        .into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no sample {id}")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    label: String,
}

async fn post_label(State(shared): State<Arc<Shared>>, UrlPath(id): UrlPath<usize>, body: Bytes) -> Response {
    let label = match serde_json::from_slice::<LabelBody>(&body) {
        Ok(b) => match Class::parse(&b.label) {
            Some(c) => c,
            None => return error(StatusCode::BAD_REQUEST, format!("label must be stable or unstable, got {:?}", b.label)),
        },
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let mut g = shared.lock();
    let Some(slot) = g.slots.iter_mut().find(|s| s.id == id) else {
        return error(StatusCode::NOT_FOUND, format!("no query {id}"));
    };
    if slot.item.status != QueryStatus::Pending {
        return error(StatusCode::CONFLICT, format!("query {id} is {}", slot.item.status.name()));
    }
    slot.item.status = QueryStatus::Labeled;
    slot.item.label = Some(label);
    slot.item.source = Some(LabelSource::Human);
    let v = view(&shared, slot);
    drop(g);
    shared.changed.notify_all();
    Json(v).into_response()
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/api/status", get(get_status))
        .route("/api/queries", get(get_queries))
        .route("/api/samples/{id}", get(get_sample))
        .route("/api/queries/{id}/label", post(post_label))
        .with_state(shared)
}

/// A running HTTP service bound to one training set.
pub struct Service {
    shared: Arc<Shared>,
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Service {
    pub fn start(listen: &str, train: &Dataset, method: Method, epochs: usize) -> Result<Service> {
        let shared = Arc::new(Shared {
            inner: Mutex::new(Inner {
                method,
                epochs,
                epoch: 0,
                phase: Phase::Classification,
                done: false,
                latest: None,
                slots: Vec::new(),
                open_round: None,
            }),
            changed: Condvar::new(),
            h: train.height(),
            w: train.width(),
            features: train.features().to_vec(),
        });
        let std_listener = std::net::TcpListener::bind(listen)
            .map_err(|e| LabError::Server(format!("cannot listen on {listen}: {e}")))?;
        std_listener
            .set_nonblocking(true)
            .map_err(|e| LabError::Server(e.to_string()))?;
        let addr = std_listener.local_addr().map_err(|e| LabError::Server(e.to_string()))?;
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let app = router(shared.clone());
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| LabError::Server(e.to_string()))?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener registers with runtime");
                let shutdown = async {
                    let _ = stopped.await;
                };
                let _ = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
            });
        });
        Ok(Service {
            shared,
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn status(&self) -> Status {
        self.shared.status()
    }

    pub fn annotator(&self, hil: &HilConfig) -> InteractiveAnnotator {
        InteractiveAnnotator {
            shared: self.shared.clone(),
            timeout: hil.timeout_secs.map(Duration::from_secs_f64),
            policy: hil.timeout_policy,
        }
    }

    pub fn observer(&self) -> StatusObserver {
        StatusObserver {
            shared: self.shared.clone(),
        }
    }

    /// Marks the run finished and stops the server.
    pub fn shutdown(mut self) {
        self.shared.lock().done = true;
        self.stop_server();
    }

    fn stop_server(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop_server();
    }
}

/// Publishes trainer progress to `/api/status`.
pub struct StatusObserver {
    shared: Arc<Shared>,
}

impl Observer for StatusObserver {
    fn phase(&mut self, epoch: usize, phase: Phase) {
        let mut g = self.shared.lock();
        g.epoch = epoch;
        g.phase = phase;
        if phase == Phase::Done {
            g.done = true;
        }
    }

    fn epoch(&mut self, snapshot: &MetricsSnapshot) {
        self.shared.lock().latest = Some(snapshot.clone());
    }
}

/// Publishes each round to the inbox and blocks until every query is
/// labeled over HTTP or the timeout fires.
pub struct InteractiveAnnotator {
    shared: Arc<Shared>,
    timeout: Option<Duration>,
    policy: TimeoutPolicy,
}

impl Annotator for InteractiveAnnotator {
    fn annotate(&mut self, items: &[QueryItem], train: &Dataset) -> mmr_core::Result<Vec<Answer>> {
        let Some(round) = items.first().map(|q| q.round) else {
            return Ok(Vec::new());
        };
        let deadline = self.timeout.map(|t| Instant::now() + t);
        let mut g = self.shared.lock();
        let first = g.slots.len();
        for (k, q) in items.iter().enumerate() {
            g.slots.push(Slot {
                id: first + k,
                item: q.clone(),
                train_label: train.labels_train()[q.sample_id],
            });
        }
        g.open_round = Some((round, deadline));
        self.shared.changed.notify_all();
        let range = first..first + items.len();
        loop {
            if g.slots[range.clone()].iter().all(|s| s.item.status != QueryStatus::Pending) {
                break;
            }
            match deadline {
                None => g = self.shared.changed.wait(g).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        for s in &mut g.slots[range.clone()] {
                            if s.item.status != QueryStatus::Pending {
                                continue;
                            }
                            s.item.source = Some(LabelSource::TimeoutFallback);
                            match self.policy {
                                TimeoutPolicy::Skip => s.item.status = QueryStatus::Expired,
                                TimeoutPolicy::Oracle => {
                                    s.item.status = QueryStatus::Labeled;
                                    s.item.label = Some(train.labels_true()[s.item.sample_id]);
                                }
                            }
                        }
                        break;
                    }
                    g = self
                        .shared
                        .changed
                        .wait_timeout(g, d - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
            }
        }
        g.open_round = None;
        Ok(g.slots[range]
            .iter()
            .map(|s| Answer {
                label: s.item.label,
                source: s.item.source.unwrap_or(LabelSource::Human),
            })
            .collect())
    }
}
