//! JSON-over-HTTP view of a single project.
//!
//! Every GET is a pure read. Groups are the only mutable resource; each
//! mutation must echo the project revision it was based on and is rejected
//! with 409 when that revision is stale.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use topicscope_core::analysis::{
    self, Correlation, EnsembleSummary, FilterSpec, Heatmap, SimilarityFilter, StabilityClass, TopicGroup,
    UncertaintyBound,
};
use topicscope_core::docviews::{self, DocRanking, HighlightRule, HighlightedDocument, DEFAULT_DOC_LIMIT};
use topicscope_core::embedding::EmbeddingConfig;
use topicscope_core::ensemble::EnsembleOrigin;
use topicscope_core::lda::LdaConfig;
use topicscope_core::metrics::{Measure, UncertaintyRecord};
use topicscope_core::{Error as CoreError, TopicRef};

use crate::project::{CorpusRef, CorpusStatus, Project, ProjectError, ViewConfig, FORMAT_VERSION};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    /// The project lacks the data this view needs (corpus files, doc-topic
    /// proportions).
    fn capability(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "capability_unavailable", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UnknownTopic { .. } => ApiError::not_found(e.to_string()),
            CoreError::Unavailable(_) => ApiError::capability(e.to_string()),
            CoreError::Invalid(_) | CoreError::Dimension(_) | CoreError::ZeroVariance(_) => {
                ApiError::bad_request(e.to_string())
            }
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        match e {
            ProjectError::Core(core) => core.into(),
            ProjectError::UnknownGroup(_) => ApiError::not_found(e.to_string()),
            ProjectError::Missing(_) => ApiError::new(StatusCode::CONFLICT, "incomplete_project", e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub struct AppState {
    project: RwLock<Project>,
    /// Where group mutations are persisted, if anywhere.
    path: Option<PathBuf>,
}

impl AppState {
    /// Serving requires a fully analysed project.
    pub fn new(project: Project, path: Option<PathBuf>) -> Result<Arc<Self>, ProjectError> {
        project.analysed()?;
        project.validate()?;
        Ok(Arc::new(AppState {
            project: RwLock::new(project),
            path,
        }))
    }

    fn read(&self) -> RwLockReadGuard<'_, Project> {
        self.project.read().unwrap_or_else(PoisonError::into_inner)
    }

    fn write(&self) -> RwLockWriteGuard<'_, Project> {
        self.project.write().unwrap_or_else(PoisonError::into_inner)
    }

    /// Copy of the current project, for inspection in tests and tools.
    pub fn snapshot(&self) -> Project {
        self.read().clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/project", get(project_info))
        .route("/api/topics", get(topics))
        .route("/api/topics/{model}/{topic}", get(topic_detail))
        .route("/api/topics/{model}/{topic}/documents", get(topic_documents))
        .route("/api/similarity", get(similarity))
        .route("/api/heatmap", get(heatmap))
        .route("/api/vocabulary", get(vocabulary))
        .route("/api/embedding", get(embedding))
        .route("/api/documents/{id}", get(document))
        .route("/api/groups", get(list_groups).post(create_group))
        .route(
            "/api/groups/{id}",
            get(get_group).put(update_group).delete(delete_group),
        )
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Query parameters with strict parsing: unknown keys and malformed values
/// are rejected rather than ignored.
struct Params(HashMap<String, String>);

impl Params {
    fn new(raw: HashMap<String, String>, allowed: &[&str]) -> Result<Self, ApiError> {
        if let Some(k) = raw.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ApiError::bad_request(format!("unknown query parameter {k:?}")));
        }
        Ok(Params(raw))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, ApiError> {
        self.0
            .get(key)
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| ApiError::bad_request(format!("{key}={v:?} is not {what}")))
            })
            .transpose()
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ApiError> {
        match self.parse::<f64>(key, "a number")? {
            Some(x) if !x.is_finite() => Err(ApiError::bad_request(format!("{key} must be finite"))),
            other => Ok(other),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, ApiError> {
        self.parse(key, "a non-negative integer")
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, ApiError> {
        self.parse(key, "true or false")
    }

    fn topic(&self, key: &str) -> Result<Option<TopicRef>, ApiError> {
        self.parse(key, "a topic reference like 0,3")
    }

    /// `m,t;m,t;…`
    fn topics(&self, key: &str) -> Result<Option<Vec<TopicRef>>, ApiError> {
        self.0
            .get(key)
            .map(|v| {
                v.split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| ApiError::bad_request(format!("{s:?} in {key} is not a topic reference")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.0.get(key).map(|v| {
            v.split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }
}

fn parse_topic_path(model: &str, topic: &str) -> Result<TopicRef, ApiError> {
    match (model.parse(), topic.parse()) {
        (Ok(m), Ok(t)) => Ok(TopicRef::new(m, t)),
        _ => Err(ApiError::bad_request(format!(
            "{model}/{topic} is not a topic reference"
        ))),
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Serialize)]
struct Capabilities {
    documents: bool,
    doc_topics: bool,
}

#[derive(Serialize)]
struct ProjectInfo<'a> {
    id: &'a str,
    format_version: u32,
    revision: u64,
    corpus: Option<&'a CorpusRef>,
    corpus_status: &'a CorpusStatus,
    capabilities: Capabilities,
    origin: &'a EnsembleOrigin,
    members: Vec<MemberInfo>,
    total_topics: usize,
    vocabulary_size: usize,
    summary: EnsembleSummary,
    correlation: Option<Correlation>,
    embedding_config: Option<EmbeddingConfig>,
    view: &'a ViewConfig,
}

#[derive(Serialize)]
struct MemberInfo {
    model_index: usize,
    k: usize,
    config: Option<LdaConfig>,
}

async fn project_info(State(s): State<Arc<AppState>>) -> Response {
    let p = s.read();
    let result: Result<Response, ApiError> = (|| {
        let a = p.analysed()?;
        let info = ProjectInfo {
            id: &p.id,
            format_version: FORMAT_VERSION,
            revision: p.revision,
            corpus: p.corpus.as_ref(),
            corpus_status: &p.corpus_status,
            capabilities: Capabilities {
                documents: p.documents.is_some(),
                doc_topics: a.ensemble.members.iter().all(|m| m.theta.is_some()),
            },
            origin: &a.ensemble.origin,
            members: a
                .ensemble
                .members
                .iter()
                .enumerate()
                .map(|(i, m)| MemberInfo {
                    model_index: i,
                    k: m.k(),
                    config: m.config,
                })
                .collect(),
            total_topics: a.ensemble.total_topics(),
            vocabulary_size: a.ensemble.vocabulary.len(),
            summary: analysis::ensemble_summary(a.records, p.view.thresholds)?,
            correlation: analysis::correlation(a.records).ok(),
            embedding_config: p.embedding_config,
            view: &p.view,
        };
        Ok(Json(info).into_response())
    })();
    result.unwrap_or_else(IntoResponse::into_response)
}

#[derive(Serialize)]
struct TermWeight {
    term: String,
    probability: f64,
}

#[derive(Serialize)]
struct TopicRow {
    #[serde(flatten)]
    topic: TopicRef,
    x: f64,
    y: f64,
    u_match: f64,
    u_exist: f64,
    u_match_class: StabilityClass,
    u_exist_class: StabilityClass,
    top_terms: Vec<TermWeight>,
}

#[derive(Serialize)]
struct TopicList {
    topics: Vec<TopicRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

fn top_terms(p: &Project, r: TopicRef, n: usize) -> Vec<TermWeight> {
    let e = p.ensemble.as_ref().expect("analysed project");
    e.members[r.model]
        .top_terms(r.topic, n)
        .into_iter()
        .map(|w| TermWeight {
            term: e.vocabulary.terms()[w].clone(),
            probability: e.members[r.model].phi[r.topic][w],
        })
        .collect()
}

fn record(records: &[UncertaintyRecord], r: TopicRef) -> &UncertaintyRecord {
    // records are stored in ensemble order, which is sorted by ref
    let i = records
        .binary_search_by(|x| x.topic.cmp(&r))
        .expect("validated project");
    &records[i]
}

const TOPIC_PARAMS: &[&str] = &[
    "selected",
    "terms",
    "top_n",
    "u_match_min",
    "u_match_max",
    "u_exist_min",
    "u_exist_max",
    "anchor",
    "min_similarity",
    "best_per_model",
];

fn filter_from(params: &Params, top_n: usize) -> Result<FilterSpec, ApiError> {
    let mut uncertainty = Vec::new();
    for (measure, prefix) in [(Measure::Match, "u_match"), (Measure::Exist, "u_exist")] {
        let min = params.f64(&format!("{prefix}_min"))?;
        let max = params.f64(&format!("{prefix}_max"))?;
        if min.is_some() || max.is_some() {
            uncertainty.push(UncertaintyBound { measure, min, max });
        }
    }
    let similar_to = match params.topic("anchor")? {
        Some(anchor) => Some(SimilarityFilter {
            anchor,
            min_similarity: params.f64("min_similarity")?.unwrap_or(0.0),
            best_per_model: params.bool("best_per_model")?.unwrap_or(false),
        }),
        None if params.0.contains_key("min_similarity") || params.0.contains_key("best_per_model") => {
            return Err(ApiError::bad_request("similarity criteria need an anchor"));
        }
        None => None,
    };
    Ok(FilterSpec {
        selected: params.topics("selected")?.map(|v| v.into_iter().collect()),
        terms: params.list("terms"),
        top_n,
        uncertainty,
        similar_to,
    })
}

async fn topics(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<TopicList> {
    let p = s.read();
    let a = p.analysed()?;
    let params = Params::new(q, TOPIC_PARAMS)?;
    let top_n = params.usize("top_n")?.unwrap_or(p.view.top_n);
    let spec = filter_from(&params, top_n)?;
    let (refs, warnings) = if spec.is_empty() {
        (a.ensemble.refs(), Vec::new())
    } else {
        let r = analysis::apply_filter(&spec, a.ensemble, a.records, a.similarity)?;
        (r.refs, r.warnings)
    };
    let th = p.view.thresholds;
    let topics = refs
        .into_iter()
        .map(|r| {
            let rec = record(a.records, r);
            let [x, y] = a.embedding.coord(r).expect("validated project");
            TopicRow {
                topic: r,
                x,
                y,
                u_match: rec.u_match,
                u_exist: rec.u_exist,
                u_match_class: th.classify(rec.u_match),
                u_exist_class: th.classify(rec.u_exist),
                top_terms: top_terms(&p, r, top_n),
            }
        })
        .collect();
    Ok(Json(TopicList { topics, warnings }))
}

#[derive(Serialize)]
struct TopicDetail<'a> {
    #[serde(flatten)]
    topic: TopicRef,
    /// Full topic-term row as shortest round-trip decimal strings, aligned
    /// with `/api/vocabulary`.
    phi: Vec<String>,
    top_terms: Vec<TermWeight>,
    record: &'a UncertaintyRecord,
    coords: [f64; 2],
    config: Option<LdaConfig>,
}

async fn topic_detail(
    State(s): State<Arc<AppState>>,
    Path((m, t)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let p = s.read();
    let result: Result<Response, ApiError> = (|| {
        let a = p.analysed()?;
        let r = parse_topic_path(&m, &t)?;
        a.ensemble.check(r)?;
        let params = Params::new(q, &["top_n"])?;
        let top_n = params.usize("top_n")?.unwrap_or(p.view.top_n);
        let detail = TopicDetail {
            topic: r,
            phi: a.ensemble.phi(r).iter().map(|x| x.to_string()).collect(),
            top_terms: top_terms(&p, r, top_n),
            record: record(a.records, r),
            coords: a.embedding.coord(r).expect("validated project"),
            config: a.ensemble.members[r.model].config,
        };
        Ok(Json(detail).into_response())
    })();
    result.unwrap_or_else(IntoResponse::into_response)
}

async fn topic_documents(
    State(s): State<Arc<AppState>>,
    Path((m, t)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<DocRanking> {
    let p = s.read();
    let a = p.analysed()?;
    let r = parse_topic_path(&m, &t)?;
    a.ensemble.check(r)?;
    let params = Params::new(q, &["limit"])?;
    let limit = params.usize("limit")?.unwrap_or(DEFAULT_DOC_LIMIT);
    if limit == 0 {
        return Err(ApiError::bad_request("limit must be positive"));
    }
    Ok(Json(docviews::rank_documents(r, a.ensemble, limit)?))
}

#[derive(Serialize)]
struct SimilarityHit {
    #[serde(flatten)]
    topic: TopicRef,
    similarity: f64,
}

#[derive(Serialize)]
struct SimilarityResult {
    anchor: TopicRef,
    results: Vec<SimilarityHit>,
}

async fn similarity(
    State(s): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<SimilarityResult> {
    let p = s.read();
    let a = p.analysed()?;
    let params = Params::new(q, &["anchor", "best_per_model", "min"])?;
    let anchor = params
        .topic("anchor")?
        .ok_or_else(|| ApiError::bad_request("anchor is required"))?;
    let min_similarity = params.f64("min")?.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&min_similarity) {
        return Err(ApiError::bad_request("min must lie in [0, 1]"));
    }
    let filter = SimilarityFilter {
        anchor,
        min_similarity,
        best_per_model: params.bool("best_per_model")?.unwrap_or(false),
    };
    let results = analysis::similar_topics(&filter, a.ensemble, a.similarity)?
        .into_iter()
        .map(|(topic, similarity)| SimilarityHit { topic, similarity })
        .collect();
    Ok(Json(SimilarityResult { anchor, results }))
}

async fn heatmap(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Heatmap> {
    let p = s.read();
    let a = p.analysed()?;
    let params = Params::new(q, &["refs", "top_n"])?;
    let refs = params
        .topics("refs")?
        .filter(|r| !r.is_empty())
        .ok_or_else(|| ApiError::bad_request("refs is required"))?;
    let top_n = params.usize("top_n")?.unwrap_or(p.view.top_n);
    if top_n == 0 {
        return Err(ApiError::bad_request("top_n must be positive"));
    }
    Ok(Json(analysis::heatmap(&refs, a.ensemble, top_n)?))
}

#[derive(Serialize)]
struct VocabularyInfo<'a> {
    terms: &'a [String],
    content_hash: String,
}

async fn vocabulary(State(s): State<Arc<AppState>>) -> Response {
    let p = s.read();
    match p.analysed() {
        Ok(a) => Json(VocabularyInfo {
            terms: a.ensemble.vocabulary.terms(),
            content_hash: a.ensemble.vocabulary.content_hash(),
        })
        .into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}

#[derive(Serialize)]
struct Point {
    #[serde(flatten)]
    topic: TopicRef,
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct EmbeddingInfo {
    config: Option<EmbeddingConfig>,
    final_kl: f64,
    points: Vec<Point>,
}

async fn embedding(State(s): State<Arc<AppState>>) -> ApiResult<EmbeddingInfo> {
    let p = s.read();
    let a = p.analysed()?;
    Ok(Json(EmbeddingInfo {
        config: p.embedding_config,
        final_kl: a.embedding.final_kl,
        points: a
            .embedding
            .refs
            .iter()
            .zip(&a.embedding.coords)
            .map(|(&topic, c)| Point {
                topic,
                x: c[0],
                y: c[1],
            })
            .collect(),
    }))
}

async fn document(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<HighlightedDocument> {
    let p = s.read();
    let a = p.analysed()?;
    let params = Params::new(q, &["model", "rule"])?;
    let model = params.usize("model")?.unwrap_or(0);
    let rule: HighlightRule = params.parse("rule", "contextual or global")?.unwrap_or_default();
    let member = a
        .ensemble
        .members
        .get(model)
        .ok_or_else(|| ApiError::not_found(format!("no ensemble member {model}")))?;
    let corpus = match (&p.documents, &p.corpus_status) {
        (Some(c), _) => c,
        (None, CorpusStatus::Missing(reason)) => {
            return Err(ApiError::capability(format!("document view disabled: {reason}")))
        }
        (None, _) => return Err(ApiError::capability("document view disabled: project has no corpus")),
    };
    let doc = corpus
        .document(&id)
        .ok_or_else(|| ApiError::not_found(format!("no document {id:?}")))?;
    if rule == HighlightRule::Contextual && member.theta.is_some() && member.doc_index(&id).is_none() {
        return Err(ApiError::not_found(format!(
            "document {id:?} is not part of model {model}"
        )));
    }
    Ok(Json(docviews::highlight(doc, member, &a.ensemble.vocabulary, rule)?))
}

#[derive(Serialize)]
struct GroupList<'a> {
    revision: u64,
    groups: &'a [TopicGroup],
}

async fn list_groups(State(s): State<Arc<AppState>>) -> Response {
    let p = s.read();
    Json(GroupList {
        revision: p.revision,
        groups: &p.groups,
    })
    .into_response()
}

async fn get_group(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<TopicGroup> {
    let id = parse_group_id(&id)?;
    let p = s.read();
    p.group(id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no group with id {id}")))
}

fn parse_group_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("{raw:?} is not a group id")))
}

#[derive(Serialize)]
struct GroupMutation {
    revision: u64,
    group: TopicGroup,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateGroup {
    #[serde(default)]
    label: String,
    members: Vec<TopicRef>,
    revision: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UpdateGroup {
    label: Option<String>,
    members: Option<Vec<TopicRef>>,
    revision: u64,
}

fn member_set(members: Vec<TopicRef>) -> Result<BTreeSet<TopicRef>, ApiError> {
    if members.is_empty() {
        return Err(ApiError::bad_request("a group needs at least one member"));
    }
    Ok(members.into_iter().collect())
}

/// Runs a group mutation under the write lock. A stale revision, a failed
/// mutation or a failed save leaves the project exactly as it was.
fn mutate<T>(
    s: &AppState,
    revision: u64,
    f: impl FnOnce(&mut Project) -> Result<T, ApiError>,
) -> Result<(u64, T), ApiError> {
    let mut p = s.write();
    if p.revision != revision {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "revision_conflict",
            format!("project is at revision {}, request was based on {revision}", p.revision),
        ));
    }
    let saved = (p.groups.clone(), p.next_group_id, p.revision);
    let out = f(&mut p);
    let persisted = match (&out, &s.path) {
        (Ok(_), Some(path)) => p.save(path).map_err(ApiError::from),
        _ => Ok(()),
    };
    match out.and_then(|v| persisted.map(|_| v)) {
        Ok(v) => Ok((p.revision, v)),
        Err(e) => {
            (p.groups, p.next_group_id, p.revision) = saved;
            Err(e)
        }
    }
}

async fn create_group(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<GroupMutation>), ApiError> {
    let req: CreateGroup = parse_body(&body)?;
    let members = member_set(req.members)?;
    let (revision, group) = mutate(&s, req.revision, |p| Ok(p.create_group(req.label, members)?.clone()))?;
    Ok((StatusCode::CREATED, Json(GroupMutation { revision, group })))
}

async fn update_group(State(s): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<GroupMutation> {
    let id = parse_group_id(&id)?;
    let req: UpdateGroup = parse_body(&body)?;
    let members = req.members.map(member_set).transpose()?;
    let (revision, group) = mutate(&s, req.revision, |p| {
        Ok(p.update_group(id, req.label, members)?.clone())
    })?;
    Ok(Json(GroupMutation { revision, group }))
}

async fn delete_group(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<GroupMutation> {
    let id = parse_group_id(&id)?;
    let params = Params::new(q, &["revision"])?;
    let expected = params
        .parse::<u64>("revision", "a revision number")?
        .ok_or_else(|| ApiError::bad_request("revision is required"))?;
    let (revision, group) = mutate(&s, expected, |p| Ok(p.delete_group(id)?))?;
    Ok(Json(GroupMutation { revision, group }))
}
