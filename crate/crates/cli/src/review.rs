//! The review service: one greedy descent per session, answered by a person
//! one pairwise question at a time.
//!
//! | route                      | body                          |
//! |----------------------------|-------------------------------|
//! | `GET /datasets`            |                               |
//! | `POST /session`            | `{dataset_id, seed, budget?}` |
//! | `POST /session/{id}/answer`| `{choice, asked?}`            |
//! | `GET /session/{id}`        |                               |
//!
//! Anything else is served from the UI bundle directory, when one is given.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use keys::data::Role;
use keys::explain::contrast;
use keys::optimize::{auto_budget, most_variable_columns, Choice, Descent, SearchConfig, Step};
use keys::{Dataset, RowId};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;
use uuid::Uuid;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("session {0} is finished")]
    Finished(String),
    #[error("question {got} was already answered; the session is at question {expected}")]
    Stale { expected: usize, got: usize },
    #[error("dataset {0} has no rows")]
    Empty(String),
    /// The request body did not parse; keeps axum's status code.
    #[error("{message}")]
    Body { status: StatusCode, message: String },
}

impl From<JsonRejection> for ReviewError {
    fn from(r: JsonRejection) -> Self {
        ReviewError::Body {
            status: r.status(),
            message: r.body_text(),
        }
    }
}

impl ReviewError {
    pub fn status(&self) -> StatusCode {
        match self {
            ReviewError::UnknownSession(_) | ReviewError::UnknownDataset(_) => {
                StatusCode::NOT_FOUND
            }
            ReviewError::Finished(_) | ReviewError::Stale { .. } => StatusCode::CONFLICT,
            ReviewError::Empty(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Body { status, .. } => *status,
        }
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.to_string() }));
        (self.status(), body).into_response()
    }
}

/// A row as shown to the reviewer: decision and ignored columns, with raw
/// values. Objectives are never shown because nothing is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowRender {
    pub id: RowId,
    pub columns: Vec<String>,
    pub values: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objectives: Option<Vec<f64>>,
}

impl RowRender {
    fn new(ds: &Dataset, id: RowId) -> Self {
        let shown = ds
            .columns()
            .iter()
            .zip(&ds.row(id).cells)
            .filter(|(c, _)| !matches!(c.role, Role::Objective(_)));
        let (columns, values) = shown.map(|(c, v)| (c.name.clone(), v.to_string())).unzip();
        RowRender {
            id,
            columns,
            values,
            objectives: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub a: RowRender,
    pub b: RowRender,
    /// Questions answered so far.
    pub asked: usize,
    pub budget: usize,
    /// The most variable half of the decision columns over the current pool.
    pub emphasis: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingAnswer,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// The pool shrank to the stop size or could not be split.
    Converged,
    Budget,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub dataset_id: String,
    pub status: Status,
    pub asked: usize,
    pub budget: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub question: Option<Question>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<FinishReason>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best: Option<RowRender>,
    /// Contrast of the surviving rows against the whole dataset; absent when
    /// no range tells them apart.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub prototypes: Vec<RowRender>,
    pub trace: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    /// `numeric`, `symbolic`, `maximize`, `minimize` or `ignored`.
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub rows: usize,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct NewSession {
    pub dataset_id: String,
    #[serde(default)]
    pub seed: u64,
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Answer {
    pub choice: Choice,
    /// The `asked` count of the question being answered. A mismatch means
    /// the answer is a replay and is refused.
    pub asked: Option<usize>,
}

#[derive(Debug, Clone)]
struct Verdict {
    reason: FinishReason,
    best: RowId,
    rule: Option<String>,
    prototypes: Vec<RowId>,
}

struct Session {
    dataset_id: String,
    ds: Arc<Dataset>,
    descent: Descent,
    asked: usize,
    budget: usize,
    pending: Option<(RowId, RowId)>,
    verdict: Option<Verdict>,
    touched: Instant,
}

impl Session {
    /// Moves to the next question, or finishes.
    fn advance(&mut self, top_n: usize) {
        if self.verdict.is_some() {
            return;
        }
        let metric = self.ds.distance().expect("datasets are checked at load");
        if self.asked >= self.budget {
            self.finish(FinishReason::Budget, top_n);
            return;
        }
        self.pending = self.descent.question(&metric);
        if self.pending.is_none() {
            self.finish(FinishReason::Converged, top_n);
        }
    }

    fn finish(&mut self, reason: FinishReason, top_n: usize) {
        self.descent.stop();
        self.pending = None;
        let ds = &self.ds;
        let pool = self.descent.pool().to_vec();
        let best = self.descent.last_winner().unwrap_or(pool[0]);
        let rule = contrast(ds, &pool, &ds.ids(), top_n)
            .ok()
            .map(|r| r.best().to_string());
        // Survivors, most central first.
        let metric = ds.distance().expect("datasets are checked at load");
        let mut ranked: Vec<(f64, RowId)> = pool
            .iter()
            .map(|&r| (pool.iter().map(|&o| metric.between(r, o)).sum(), r))
            .collect();
        ranked.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)));
        self.verdict = Some(Verdict {
            reason,
            best,
            rule,
            prototypes: ranked.into_iter().map(|(_, r)| r).collect(),
        });
    }

    fn view(&self, id: &str) -> SessionView {
        let ds = &self.ds;
        let question = self.pending.map(|(a, b)| Question {
            a: RowRender::new(ds, a),
            b: RowRender::new(ds, b),
            asked: self.asked,
            budget: self.budget,
            emphasis: most_variable_columns(ds, self.descent.pool())
                .into_iter()
                .map(|j| ds.columns()[j].name.clone())
                .collect(),
        });
        let v = self.verdict.as_ref();
        SessionView {
            session_id: id.to_string(),
            dataset_id: self.dataset_id.clone(),
            status: if v.is_some() {
                Status::Finished
            } else {
                Status::AwaitingAnswer
            },
            asked: self.asked,
            budget: self.budget,
            question,
            reason: v.map(|v| v.reason),
            best: v.map(|v| RowRender::new(ds, v.best)),
            rule: v.and_then(|v| v.rule.clone()),
            prototypes: v
                .map(|v| {
                    v.prototypes
                        .iter()
                        .map(|&r| RowRender::new(ds, r))
                        .collect()
                })
                .unwrap_or_default(),
            trace: self.descent.trace().to_vec(),
        }
    }
}

/// Datasets and live sessions. Each session is mutated under the store's
/// lock, so concurrent answers to one session are serialized.
pub struct Store {
    datasets: BTreeMap<String, Arc<Dataset>>,
    sessions: Mutex<HashMap<String, Session>>,
    timeout: Duration,
    top_n: usize,
    stop_leaf: usize,
}

impl Store {
    pub fn new(datasets: BTreeMap<String, Dataset>, timeout: Duration) -> Self {
        Store {
            datasets: datasets
                .into_iter()
                .map(|(k, v)| (k, Arc::new(v)))
                .collect(),
            sessions: Mutex::new(HashMap::new()),
            timeout,
            top_n: 10,
            stop_leaf: 4,
        }
    }

    pub fn with_search(mut self, top_n: usize, stop_leaf: usize) -> Self {
        self.top_n = top_n;
        self.stop_leaf = stop_leaf;
        self
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<String, Session>> {
        // A panic while holding the lock leaves sessions readable.
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn datasets(&self) -> Vec<DatasetInfo> {
        self.datasets
            .iter()
            .map(|(id, ds)| DatasetInfo {
                id: id.clone(),
                rows: ds.len(),
                columns: ds
                    .columns()
                    .iter()
                    .map(|c| ColumnSpec {
                        name: c.name.clone(),
                        role: match c.role {
                            Role::NumericDecision => "numeric",
                            Role::SymbolicDecision => "symbolic",
                            Role::Objective(keys::data::Goal::Maximize) => "maximize",
                            Role::Objective(keys::data::Goal::Minimize) => "minimize",
                            Role::Ignored => "ignored",
                        }
                        .to_string(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn create(&self, req: NewSession) -> Result<SessionView, ReviewError> {
        let ds = self
            .datasets
            .get(&req.dataset_id)
            .ok_or_else(|| ReviewError::UnknownDataset(req.dataset_id.clone()))?
            .clone();
        if ds.is_empty() {
            return Err(ReviewError::Empty(req.dataset_id));
        }
        let cfg = SearchConfig {
            stop_leaf: self.stop_leaf,
            ..SearchConfig::with_seed(req.seed)
        };
        let mut session = Session {
            dataset_id: req.dataset_id,
            budget: req.budget.unwrap_or_else(|| auto_budget(ds.len())),
            descent: Descent::new(ds.ids(), &cfg),
            ds,
            asked: 0,
            pending: None,
            verdict: None,
            touched: Instant::now(),
        };
        session.advance(self.top_n);
        let id = Uuid::new_v4().to_string();
        let view = session.view(&id);
        self.lock().insert(id, session);
        Ok(view)
    }

    /// Closes idle sessions as they are touched.
    fn expire(&self, s: &mut Session) {
        if s.verdict.is_none() && s.touched.elapsed() > self.timeout {
            s.finish(FinishReason::Timeout, self.top_n);
        }
    }

    pub fn get(&self, id: &str) -> Result<SessionView, ReviewError> {
        let mut sessions = self.lock();
        let s = sessions
            .get_mut(id)
            .ok_or_else(|| ReviewError::UnknownSession(id.to_string()))?;
        self.expire(s);
        Ok(s.view(id))
    }

    pub fn answer(&self, id: &str, answer: Answer) -> Result<SessionView, ReviewError> {
        let mut sessions = self.lock();
        let s = sessions
            .get_mut(id)
            .ok_or_else(|| ReviewError::UnknownSession(id.to_string()))?;
        self.expire(s);
        if s.verdict.is_some() {
            return Err(ReviewError::Finished(id.to_string()));
        }
        if let Some(got) = answer.asked {
            if got != s.asked {
                return Err(ReviewError::Stale {
                    expected: s.asked,
                    got,
                });
            }
        }
        s.descent.answer(answer.choice);
        s.asked += 1;
        s.touched = Instant::now();
        s.advance(self.top_n);
        Ok(s.view(id))
    }
}

async fn list(State(store): State<Arc<Store>>) -> Json<Vec<DatasetInfo>> {
    Json(store.datasets())
}

async fn create(
    State(store): State<Arc<Store>>,
    req: Result<Json<NewSession>, JsonRejection>,
) -> Result<Json<SessionView>, ReviewError> {
    store.create(req?.0).map(Json)
}

async fn poll(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ReviewError> {
    store.get(&id).map(Json)
}

async fn answer(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    req: Result<Json<Answer>, JsonRejection>,
) -> Result<Json<SessionView>, ReviewError> {
    store.answer(&id, req?.0).map(Json)
}

pub fn router(store: Arc<Store>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/datasets", get(list))
        .route("/session", post(create))
        .route("/session/{id}", get(poll))
        .route("/session/{id}/answer", post(answer))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use keys::synth::{generate, SyntheticSpec};

    fn store(rows: usize, timeout: Duration) -> Store {
        let mut sets = BTreeMap::new();
        sets.insert(
            "sphere".to_string(),
            generate(&SyntheticSpec::sphere(rows, 4, 1)),
        );
        Store::new(sets, timeout)
    }

    fn new_session(seed: u64, budget: Option<usize>) -> NewSession {
        NewSession {
            dataset_id: "sphere".into(),
            seed,
            budget,
        }
    }

    fn answer(choice: Choice) -> Answer {
        Answer {
            choice,
            asked: None,
        }
    }

    #[test]
    fn session_runs_to_a_verdict() {
        let st = store(1000, Duration::from_secs(60));
        let mut v = st.create(new_session(3, None)).unwrap();
        assert_eq!(v.budget, 20);
        let q = v.question.clone().unwrap();
        assert_eq!(q.emphasis.len(), 2);
        assert_eq!(q.a.columns, ["x1", "x2", "x3", "x4"]);
        while v.status == Status::AwaitingAnswer {
            v = st.answer(&v.session_id, answer(Choice::A)).unwrap();
        }
        assert_eq!(v.reason, Some(FinishReason::Converged));
        assert!(v.asked <= 10);
        assert_eq!(v.trace.len(), v.asked);
        assert!(v.best.is_some() && !v.prototypes.is_empty());
        assert!(v.rule.is_some());
        let err = st.answer(&v.session_id, answer(Choice::B)).unwrap_err();
        assert_eq!(err.status(), StatusCode::CONFLICT);
        assert_eq!(st.get(&v.session_id).unwrap(), v);
    }

    #[test]
    fn budget_ends_the_session() {
        let st = store(1000, Duration::from_secs(60));
        let mut v = st.create(new_session(3, Some(2))).unwrap();
        for _ in 0..2 {
            v = st.answer(&v.session_id, answer(Choice::B)).unwrap();
        }
        assert_eq!(v.status, Status::Finished);
        assert_eq!(v.reason, Some(FinishReason::Budget));
        assert_eq!(v.asked, 2);
    }

    #[test]
    fn stale_answers_are_refused() {
        let st = store(500, Duration::from_secs(60));
        let v = st.create(new_session(0, None)).unwrap();
        let ok = Answer {
            choice: Choice::A,
            asked: Some(0),
        };
        let again = Answer {
            choice: Choice::B,
            asked: Some(0),
        };
        st.answer(&v.session_id, ok).unwrap();
        let err = st.answer(&v.session_id, again).unwrap_err();
        assert!(matches!(
            err,
            ReviewError::Stale {
                expected: 1,
                got: 0
            }
        ));
        assert_eq!(st.get(&v.session_id).unwrap().asked, 1);
    }

    #[test]
    fn idle_sessions_time_out() {
        let st = store(500, Duration::from_millis(1));
        let v = st.create(new_session(0, None)).unwrap();
        std::thread::sleep(Duration::from_millis(5));
        let now = st.get(&v.session_id).unwrap();
        assert_eq!(now.reason, Some(FinishReason::Timeout));
        assert!(st.answer(&v.session_id, answer(Choice::A)).is_err());
    }

    #[test]
    fn unknown_ids() {
        let st = store(10, Duration::from_secs(60));
        assert_eq!(st.get("nope").unwrap_err().status(), StatusCode::NOT_FOUND);
        let err = st
            .create(NewSession {
                dataset_id: "none".into(),
                seed: 0,
                budget: None,
            })
            .unwrap_err();
        assert_eq!(err.status(), StatusCode::NOT_FOUND);
    }

    #[test]
    fn same_seed_same_answers_same_verdict() {
        let st = store(2000, Duration::from_secs(60));
        let run = || {
            let mut v = st.create(new_session(11, None)).unwrap();
            while v.status == Status::AwaitingAnswer {
                v = st.answer(&v.session_id, answer(Choice::A)).unwrap();
            }
            (v.trace, v.best, v.rule)
        };
        assert_eq!(run(), run());
    }
}
