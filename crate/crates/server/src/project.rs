//! A project bundles a corpus reference with everything derived from it:
//! the ensemble, similarities, uncertainty records, layout and groups.
//!
//! On disk a project is one JSON document plus a binary similarity sidecar
//! next to it, referenced by relative path and SHA-256.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topicscope_core::analysis::{Thresholds, TopicGroup, DEFAULT_TOP_N};
use topicscope_core::corpus::{Corpus, CorpusSource, PreprocessConfig};
use topicscope_core::embedding::{embed, Embedding, EmbeddingConfig};
use topicscope_core::ensemble::{generate, EnsembleSpec};
use topicscope_core::metrics::{compute_all, SimilarityMatrix, UncertaintyRecord};
use topicscope_core::synthbench::{generate_corpus, SyntheticSpec};
use topicscope_core::{Ensemble, TopicRef};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error(transparent)]
    Core(#[from] topicscope_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("project format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("{path}: content hash does not match the project file")]
    HashMismatch { path: PathBuf },
    #[error("inconsistent project: {0}")]
    Inconsistent(String),
    #[error("project has no {0} yet")]
    Missing(&'static str),
    #[error("no group with id {0}")]
    UnknownGroup(u64),
}

pub type Result<T, E = ProjectError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProjectError + '_ {
    move |source| ProjectError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializable subset of the tokenizer settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub lowercase: bool,
    /// Sorted, already lowercased.
    pub stopwords: Vec<String>,
    pub min_token_len: usize,
    pub min_doc_freq: usize,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            lowercase: true,
            stopwords: Vec::new(),
            min_token_len: 1,
            min_doc_freq: 1,
        }
    }
}

impl Preprocessing {
    pub fn config(&self) -> PreprocessConfig {
        PreprocessConfig {
            lowercase: self.lowercase,
            min_token_len: self.min_token_len,
            ..PreprocessConfig::default()
        }
        .with_stopwords(&self.stopwords)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusRef {
    Files {
        source: CorpusSource,
        preprocessing: Preprocessing,
    },
    /// Regenerated deterministically from its spec on open.
    Synthetic { spec: SyntheticSpec },
}

impl CorpusRef {
    pub fn load(&self) -> topicscope_core::Result<Corpus> {
        match self {
            CorpusRef::Files { source, preprocessing } => {
                Corpus::build(source.load()?, &preprocessing.config(), preprocessing.min_doc_freq)
            }
            CorpusRef::Synthetic { spec } => generate_corpus(spec)?.build(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub top_n: usize,
    pub thresholds: Thresholds,
    /// Identifier of the client's categorical palette.
    pub color_map: String,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            top_n: DEFAULT_TOP_N,
            thresholds: Thresholds::default(),
            color_map: "tableau10".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    /// Relative to the project file's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize)]
struct ProjectFile {
    format_version: u32,
    id: String,
    revision: u64,
    corpus: Option<CorpusRef>,
    ensemble: Option<Ensemble>,
    similarity: Option<Sidecar>,
    #[serde(default)]
    records: Vec<UncertaintyRecord>,
    embedding_config: Option<EmbeddingConfig>,
    embedding: Option<Embedding>,
    #[serde(default)]
    groups: Vec<TopicGroup>,
    next_group_id: u64,
    view: ViewConfig,
}

/// Whether close reading is possible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum CorpusStatus {
    Available,
    Missing(String),
    NotConfigured,
}

#[derive(Debug, Clone)]
pub struct Project {
    pub id: String,
    /// Bumped by every mutation after creation.
    pub revision: u64,
    pub corpus: Option<CorpusRef>,
    pub ensemble: Option<Ensemble>,
    pub similarity: Option<SimilarityMatrix>,
    pub records: Vec<UncertaintyRecord>,
    pub embedding_config: Option<EmbeddingConfig>,
    pub embedding: Option<Embedding>,
    pub groups: Vec<TopicGroup>,
    pub next_group_id: u64,
    pub view: ViewConfig,
    /// Loaded documents; not persisted.
    pub documents: Option<Corpus>,
    pub corpus_status: CorpusStatus,
}

/// Borrowed view of a fully analysed project.
pub struct Analysed<'a> {
    pub ensemble: &'a Ensemble,
    pub similarity: &'a SimilarityMatrix,
    pub records: &'a [UncertaintyRecord],
    pub embedding: &'a Embedding,
}

/// Caps the default perplexity for small ensembles; an explicit value is
/// left for validation to reject.
pub fn fitted_perplexity(explicit: Option<f64>, points: usize) -> f64 {
    let default = EmbeddingConfig::default().perplexity;
    explicit.unwrap_or_else(|| default.min(points.saturating_sub(1) as f64 / 3.0).max(1.0))
}

impl Project {
    pub fn new(corpus: Option<CorpusRef>) -> Self {
        Project {
            id: uuid::Uuid::new_v4().to_string(),
            revision: 0,
            corpus,
            ensemble: None,
            similarity: None,
            records: Vec::new(),
            embedding_config: None,
            embedding: None,
            groups: Vec::new(),
            next_group_id: 1,
            view: ViewConfig::default(),
            documents: None,
            corpus_status: CorpusStatus::NotConfigured,
        }
    }

    /// Generates, analyses and embeds an ensemble in one go.
    pub fn create(corpus: CorpusRef, spec: &EnsembleSpec, embedding: Option<EmbeddingConfig>) -> Result<Self> {
        let mut project = Project::new(Some(corpus));
        project.load_documents();
        let docs = project
            .documents
            .as_ref()
            .ok_or(ProjectError::Missing("readable corpus"))?;
        let ensemble = generate(&docs.matrix, &docs.vocabulary, spec)?;
        project.set_ensemble(ensemble);
        project.analyse()?;
        let cfg = embedding.unwrap_or_else(|| {
            EmbeddingConfig::default().with_perplexity(fitted_perplexity(None, project.topic_count()))
        });
        project.layout(cfg)?;
        Ok(project)
    }

    fn topic_count(&self) -> usize {
        self.ensemble.as_ref().map_or(0, Ensemble::total_topics)
    }

    /// Tries to load the corpus; failure only disables the document views.
    pub fn load_documents(&mut self) {
        self.documents = None;
        self.corpus_status = match &self.corpus {
            None => CorpusStatus::NotConfigured,
            Some(c) => match c.load() {
                Ok(corpus) => {
                    self.documents = Some(corpus);
                    CorpusStatus::Available
                }
                Err(e) => {
                    log::warn!("corpus unavailable, document views disabled: {e}");
                    CorpusStatus::Missing(e.to_string())
                }
            },
        };
    }

    /// Replaces the ensemble and drops everything derived from the old one.
    pub fn set_ensemble(&mut self, ensemble: Ensemble) {
        self.ensemble = Some(ensemble);
        self.similarity = None;
        self.records.clear();
        self.embedding = None;
        self.embedding_config = None;
        self.groups.clear();
        self.revision += 1;
    }

    pub fn analyse(&mut self) -> Result<()> {
        let ensemble = self.ensemble.as_ref().ok_or(ProjectError::Missing("ensemble"))?;
        let (sim, records) = compute_all(ensemble)?;
        self.similarity = Some(sim);
        self.records = records;
        self.revision += 1;
        Ok(())
    }

    /// Embeds the topics; groups are kept and their hulls recomputed.
    pub fn layout(&mut self, config: EmbeddingConfig) -> Result<()> {
        let sim = self
            .similarity
            .as_ref()
            .ok_or(ProjectError::Missing("similarity matrix"))?;
        let embedding = embed(sim, &config)?;
        let ensemble = self.ensemble.as_ref().ok_or(ProjectError::Missing("ensemble"))?;
        let groups = self
            .groups
            .iter()
            .map(|g| TopicGroup::new(g.id, g.label.clone(), g.members.clone(), ensemble, &embedding))
            .collect::<topicscope_core::Result<Vec<_>>>()?;
        self.embedding = Some(embedding);
        self.embedding_config = Some(config);
        self.groups = groups;
        self.revision += 1;
        Ok(())
    }

    pub fn analysed(&self) -> Result<Analysed<'_>> {
        Ok(Analysed {
            ensemble: self.ensemble.as_ref().ok_or(ProjectError::Missing("ensemble"))?,
            similarity: self
                .similarity
                .as_ref()
                .ok_or(ProjectError::Missing("similarity matrix"))?,
            records: if self.records.is_empty() {
                return Err(ProjectError::Missing("uncertainty records"));
            } else {
                &self.records
            },
            embedding: self.embedding.as_ref().ok_or(ProjectError::Missing("embedding"))?,
        })
    }

    pub fn group(&self, id: u64) -> Option<&TopicGroup> {
        self.groups.iter().find(|g| g.id == id)
    }

    pub fn create_group(&mut self, label: String, members: BTreeSet<TopicRef>) -> Result<&TopicGroup> {
        let a = self.analysed()?;
        let group = TopicGroup::new(self.next_group_id, label, members, a.ensemble, a.embedding)?;
        self.next_group_id += 1;
        self.groups.push(group);
        self.revision += 1;
        Ok(self.groups.last().expect("just pushed"))
    }

    pub fn update_group(
        &mut self,
        id: u64,
        label: Option<String>,
        members: Option<BTreeSet<TopicRef>>,
    ) -> Result<&TopicGroup> {
        let a = self.analysed()?;
        let index = self
            .groups
            .iter()
            .position(|g| g.id == id)
            .ok_or(ProjectError::UnknownGroup(id))?;
        let old = &self.groups[index];
        let group = TopicGroup::new(
            id,
            label.unwrap_or_else(|| old.label.clone()),
            members.unwrap_or_else(|| old.members.clone()),
            a.ensemble,
            a.embedding,
        )?;
        self.groups[index] = group;
        self.revision += 1;
        Ok(&self.groups[index])
    }

    pub fn delete_group(&mut self, id: u64) -> Result<TopicGroup> {
        let index = self
            .groups
            .iter()
            .position(|g| g.id == id)
            .ok_or(ProjectError::UnknownGroup(id))?;
        self.revision += 1;
        Ok(self.groups.remove(index))
    }

    /// Checks that every stored topic reference exists in the ensemble and
    /// that derived artifacts line up with it.
    pub fn validate(&self) -> Result<()> {
        let inconsistent = |m: String| Err(ProjectError::Inconsistent(m));
        let Some(ensemble) = &self.ensemble else {
            if self.similarity.is_some()
                || !self.records.is_empty()
                || self.embedding.is_some()
                || !self.groups.is_empty()
            {
                return inconsistent("derived data without an ensemble".into());
            }
            return Ok(());
        };
        ensemble.validate()?;
        let refs = ensemble.refs();
        if let Some(sim) = &self.similarity {
            if sim.refs != refs {
                return inconsistent("similarity matrix rows do not match the ensemble".into());
            }
        }
        if !self.records.is_empty() && self.records.iter().map(|r| r.topic).ne(refs.iter().copied()) {
            return inconsistent("uncertainty records do not match the ensemble".into());
        }
        if let Some(emb) = &self.embedding {
            if emb.refs != refs || emb.coords.iter().any(|c| !(c[0].is_finite() && c[1].is_finite())) {
                return inconsistent("embedding does not match the ensemble".into());
            }
        }
        let mut ids = BTreeSet::new();
        for g in &self.groups {
            if !ids.insert(g.id) || g.id >= self.next_group_id {
                return inconsistent(format!("duplicate or out-of-range group id {}", g.id));
            }
            if let Some(r) = g.members.iter().find(|r| !ensemble.contains(**r)) {
                return inconsistent(format!("group {} references unknown topic {r}", g.id));
            }
        }
        Ok(())
    }

    fn sidecar_name(path: &Path) -> String {
        let stem = path
            .file_stem()
            .map_or_else(|| "project".into(), |s| s.to_string_lossy().into_owned());
        format!("{stem}.sim.bin")
    }

    /// Writes the project JSON and, when present, the similarity sidecar.
    /// Both are written to temporary files first and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let similarity = match &self.similarity {
            None => None,
            Some(sim) => {
                let name = Self::sidecar_name(path);
                let mut bytes = Vec::with_capacity(16 + 8 * sim.values().len());
                sim.write_binary(&mut bytes).map_err(io_err(path))?;
                let target = dir.join(&name);
                write_atomic(&target, &bytes)?;
                Some(Sidecar {
                    path: name,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            }
        };
        let file = ProjectFile {
            format_version: FORMAT_VERSION,
            id: self.id.clone(),
            revision: self.revision,
            corpus: self.corpus.clone(),
            ensemble: self.ensemble.clone(),
            similarity,
            records: self.records.clone(),
            embedding_config: self.embedding_config,
            embedding: self.embedding.clone(),
            groups: self.groups.clone(),
            next_group_id: self.next_group_id,
            view: self.view.clone(),
        };
        let json = serde_json::to_vec_pretty(&file).map_err(|source| ProjectError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        write_atomic(path, &json)
    }

    /// Reads a project. A corpus that can no longer be loaded only disables
    /// the document views.
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|source| ProjectError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| ProjectError::Inconsistent("missing format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(ProjectError::Version {
                found: found.try_into().unwrap_or(u32::MAX),
            });
        }
        let file: ProjectFile = serde_json::from_value(value).map_err(|source| ProjectError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let similarity = match (&file.similarity, &file.ensemble) {
            (None, _) => None,
            (Some(_), None) => {
                return Err(ProjectError::Inconsistent(
                    "similarity matrix without an ensemble".into(),
                ))
            }
            (Some(sidecar), Some(ensemble)) => {
                let dir = path
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .unwrap_or(Path::new("."));
                let sim_path = dir.join(&sidecar.path);
                let raw = fs::read(&sim_path).map_err(io_err(&sim_path))?;
                if hex::encode(Sha256::digest(&raw)) != sidecar.sha256 {
                    return Err(ProjectError::HashMismatch { path: sim_path });
                }
                Some(SimilarityMatrix::read_binary(raw.as_slice(), ensemble.refs())?)
            }
        };
        let mut project = Project {
            id: file.id,
            revision: file.revision,
            corpus: file.corpus,
            ensemble: file.ensemble,
            similarity,
            records: file.records,
            embedding_config: file.embedding_config,
            embedding: file.embedding,
            groups: file.groups,
            next_group_id: file.next_group_id,
            view: file.view,
            documents: None,
            corpus_status: CorpusStatus::NotConfigured,
        };
        project.validate()?;
        project.load_documents();
        Ok(project)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use topicscope_core::lda::LdaConfig;

    fn small() -> Project {
        let spec = SyntheticSpec {
            docs: 40,
            vocab_size: 120,
            true_k: 4,
            ..SyntheticSpec::default()
        };
        let ens = EnsembleSpec::sampling(LdaConfig::new(5).with_iterations(30), 3);
        Project::create(CorpusRef::Synthetic { spec }, &ens, None).unwrap()
    }

    #[test]
    fn create_fills_every_artifact() {
        let p = small();
        let a = p.analysed().unwrap();
        assert_eq!(a.records.len(), 15);
        assert_eq!(a.embedding.refs.len(), 15);
        assert_eq!(p.corpus_status, CorpusStatus::Available);
        p.validate().unwrap();
    }

    #[test]
    fn perplexity_fits_small_ensembles() {
        assert_eq!(fitted_perplexity(None, 200), 30.0);
        assert_eq!(fitted_perplexity(None, 16), 5.0);
        assert_eq!(fitted_perplexity(Some(50.0), 16), 50.0);
    }

    #[test]
    fn group_lifecycle_bumps_revision() {
        let mut p = small();
        let r0 = p.revision;
        let members: BTreeSet<_> = [TopicRef::new(0, 0), TopicRef::new(1, 2)].into();
        let g = p.create_group("a".into(), members).unwrap();
        assert!((g.completeness - 2.0 / 3.0).abs() < 1e-15);
        let id = g.id;
        p.update_group(id, Some("b".into()), None).unwrap();
        assert_eq!(p.group(id).unwrap().label, "b");
        assert!(p.update_group(99, None, None).is_err());
        p.delete_group(id).unwrap();
        assert_eq!(p.revision, r0 + 3);
    }

    #[test]
    fn rejects_other_versions_and_tampered_sidecars() {
        let p = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();

        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        v["format_version"] = 7.into();
        let other = dir.path().join("other.json");
        fs::write(&other, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(Project::open(&other), Err(ProjectError::Version { found: 7 })));

        let sidecar = dir.path().join("p.sim.bin");
        let mut raw = fs::read(&sidecar).unwrap();
        let last = raw.len() - 1;
        raw[last] ^= 1;
        fs::write(&sidecar, raw).unwrap();
        assert!(matches!(Project::open(&path), Err(ProjectError::HashMismatch { .. })));
    }
}
