//! Corpus ingestion: tokenization, vocabulary and the document-term matrix.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Why a token does not contribute to the document-term matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Stopword,
    TooShort,
    /// Dropped by the minimum document frequency cutoff.
    Rare,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    /// Byte range `[start, end)` into the document's raw text.
    pub span: (usize, usize),
    pub filtered: Option<FilterReason>,
}

impl Token {
    pub fn is_retained(&self) -> bool {
        self.filtered.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub raw_text: String,
    pub tokens: Vec<Token>,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: title.into(),
            raw_text: raw_text.into(),
            tokens: Vec::new(),
        }
    }

    pub fn tokenized(mut self, config: &PreprocessConfig) -> Self {
        self.tokens = tokenize(&self.raw_text, config);
        self
    }

    pub fn retained_tokens(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.is_retained())
    }
}

/// Normalizer hook applied after lowercasing (e.g. a stemmer).
pub type Normalizer = Arc<dyn Fn(&str) -> String + Send + Sync>;

#[derive(Clone)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub stopwords: HashSet<String>,
    /// Minimum length in characters of a retained token.
    pub min_token_len: usize,
    pub normalizer: Option<Normalizer>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            lowercase: true,
            stopwords: HashSet::new(),
            min_token_len: 1,
            normalizer: None,
        }
    }
}

impl fmt::Debug for PreprocessConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreprocessConfig")
            .field("lowercase", &self.lowercase)
            .field("stopwords", &self.stopwords.len())
            .field("min_token_len", &self.min_token_len)
            .field("normalizer", &self.normalizer.is_some())
            .finish()
    }
}

impl PreprocessConfig {
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = words.into_iter().map(|w| w.as_ref().to_lowercase()).collect();
        self
    }

    pub fn with_min_token_len(mut self, len: usize) -> Self {
        self.min_token_len = len;
        self
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Self {
        self.normalizer = Some(normalizer);
        self
    }

    fn normalize(&self, surface: &str) -> String {
        let base = if self.lowercase {
            surface.to_lowercase()
        } else {
            surface.to_string()
        };
        match &self.normalizer {
            Some(hook) => hook(&base),
            None => base,
        }
    }
}

/// Splits `raw_text` into maximal runs of alphabetic characters.
///
/// Stopwords and tokens shorter than the configured minimum are kept in the
/// output but marked as filtered, so that the document view can still render
/// them at their original position.
pub fn tokenize(raw_text: &str, config: &PreprocessConfig) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (pos, ch) in raw_text.char_indices() {
        match (ch.is_alphabetic(), start) {
            (true, None) => start = Some(pos),
            (false, Some(s)) => {
                tokens.push(make_token(raw_text, s, pos, config));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(make_token(raw_text, s, raw_text.len(), config));
    }
    tokens
}

fn make_token(raw_text: &str, start: usize, end: usize, config: &PreprocessConfig) -> Token {
    let surface = &raw_text[start..end];
    let normalized = config.normalize(surface);
    let filtered = if config.stopwords.contains(&normalized) || config.stopwords.contains(&surface.to_lowercase()) {
        Some(FilterReason::Stopword)
    } else if normalized.chars().count() < config.min_token_len {
        Some(FilterReason::TooShort)
    } else {
        None
    };
    Token {
        surface: surface.to_string(),
        normalized,
        span: (start, end),
        filtered,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from unique terms, keeping their order.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (id, term) in terms.iter().enumerate() {
            if index.insert(term.clone(), id).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary term {term:?}")));
            }
        }
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn lookup(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// SHA-256 over the newline-joined term list.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for term in &self.terms {
            hasher.update(term.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(terms: Vec<String>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { terms, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(vocab: Vocabulary) -> Self {
        vocab.terms
    }
}

/// Sparse document-term count matrix; each row is sorted by term id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTermMatrix {
    pub doc_ids: Vec<String>,
    rows: Vec<Vec<(usize, u32)>>,
    n_terms: usize,
}

impl DocTermMatrix {
    /// Builds a matrix from per-document sparse rows. Zero entries are
    /// dropped and duplicate term ids are summed.
    pub fn from_rows(doc_ids: Vec<String>, rows: Vec<Vec<(usize, u32)>>, n_terms: usize) -> Result<Self> {
        if doc_ids.len() != rows.len() {
            return Err(Error::dimension(format!(
                "{} document ids for {} rows",
                doc_ids.len(),
                rows.len()
            )));
        }
        let mut clean = Vec::with_capacity(rows.len());
        for row in rows {
            let mut merged: BTreeMap<usize, u32> = BTreeMap::new();
            for (term, count) in row {
                if term >= n_terms {
                    return Err(Error::dimension(format!("term id {term} out of range 0..{n_terms}")));
                }
                if count > 0 {
                    *merged.entry(term).or_insert(0) += count;
                }
            }
            clean.push(merged.into_iter().collect());
        }
        Ok(DocTermMatrix {
            doc_ids,
            rows: clean,
            n_terms,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn row(&self, doc: usize) -> &[(usize, u32)] {
        &self.rows[doc]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, u32)]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn get(&self, doc: usize, term: usize) -> u32 {
        self.rows[doc]
            .binary_search_by_key(&term, |&(t, _)| t)
            .map(|i| self.rows[doc][i].1)
            .unwrap_or(0)
    }

    pub fn row_sum(&self, doc: usize) -> u64 {
        self.rows[doc].iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.n_docs()).map(|d| self.row_sum(d)).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0; self.n_terms];
                for &(t, c) in row {
                    dense[t] = c;
                }
                dense
            })
            .collect()
    }
}

/// Builds the vocabulary and document-term matrix.
///
/// The vocabulary holds every non-filtered normalized form occurring in at
/// least `min_doc_freq` documents, sorted lexicographically. Tokens of terms
/// that fall below the cutoff are marked [`FilterReason::Rare`] in place so
/// that every retained token maps to a vocabulary entry.
pub fn build_matrix(documents: &mut [Document], min_doc_freq: usize) -> Result<(Vocabulary, DocTermMatrix)> {
    if min_doc_freq == 0 {
        return Err(Error::invalid("min_doc_freq must be at least 1"));
    }
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    for doc in documents.iter() {
        let distinct: HashSet<&str> = doc.retained_tokens().map(|t| t.normalized.as_str()).collect();
        for term in distinct {
            *doc_freq.entry(term).or_insert(0) += 1;
        }
    }
    let mut terms: Vec<String> = doc_freq
        .into_iter()
        .filter(|&(_, df)| df >= min_doc_freq)
        .map(|(t, _)| t.to_string())
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    terms.sort_unstable();
    let vocab = Vocabulary::from(terms);

    let rows: Vec<Vec<(usize, u32)>> = documents
        .par_iter_mut()
        .map(|doc| {
            let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
            for token in doc.tokens.iter_mut().filter(|t| t.is_retained()) {
                match vocab.lookup(&token.normalized) {
                    Some(id) => *counts.entry(id).or_insert(0) += 1,
                    None => token.filtered = Some(FilterReason::Rare),
                }
            }
            counts.into_iter().collect()
        })
        .collect();
    let doc_ids = documents.iter().map(|d| d.id.clone()).collect();
    let matrix = DocTermMatrix::from_rows(doc_ids, rows, vocab.len())?;
    Ok((vocab, matrix))
}

/// Tokenizes documents in parallel.
pub fn tokenize_all(documents: &mut [Document], config: &PreprocessConfig) {
    documents
        .par_iter_mut()
        .for_each(|doc| doc.tokens = tokenize(&doc.raw_text, config));
}

/// Reads a stopword file: one term per line, `#` starts a comment.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stopwords(&text))
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Where a corpus was loaded from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "snake_case")]
pub enum CorpusSource {
    Directory(PathBuf),
    JsonLines(PathBuf),
}

impl CorpusSource {
    /// Directories are read as `.txt` collections, anything else as JSON lines.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            CorpusSource::Directory(path.to_path_buf())
        } else {
            CorpusSource::JsonLines(path.to_path_buf())
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            CorpusSource::Directory(p) | CorpusSource::JsonLines(p) => p,
        }
    }

    pub fn exists(&self) -> bool {
        self.path().exists()
    }

    pub fn load(&self) -> Result<Vec<Document>> {
        match self {
            CorpusSource::Directory(p) => load_directory(p),
            CorpusSource::JsonLines(p) => load_json_lines(p),
        }
    }
}

/// Loads every `.txt` file of a directory; the file stem is the document id.
/// Documents are ordered by id.
pub fn load_directory(dir: &Path) -> Result<Vec<Document>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(Document::new(id.clone(), id, text))
        })
        .collect()
}

#[derive(Deserialize)]
struct JsonLineRecord {
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

/// Loads a JSON-lines corpus with `{"id", "title", "text"}` objects.
pub fn load_json_lines(path: &Path) -> Result<Vec<Document>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonLineRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let title = rec.title.unwrap_or_else(|| rec.id.clone());
        docs.push(Document::new(rec.id, title, rec.text));
    }
    Ok(docs)
}

/// A loaded, tokenized corpus with its matrix.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    pub matrix: DocTermMatrix,
}

impl Corpus {
    pub fn build(mut documents: Vec<Document>, config: &PreprocessConfig, min_doc_freq: usize) -> Result<Self> {
        tokenize_all(&mut documents, config);
        let (vocabulary, matrix) = build_matrix(&mut documents, min_doc_freq)?;
        Ok(Corpus {
            documents,
            vocabulary,
            matrix,
        })
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(tokens: &[Token]) -> Vec<(usize, usize)> {
        tokens.iter().map(|t| t.span).collect()
    }

    #[test]
    fn tokenize_marks_stopwords() {
        let cfg = PreprocessConfig::default().with_stopwords(["the"]);
        let tokens = tokenize("The soul lives.", &cfg);
        assert_eq!(spans(&tokens), vec![(0, 3), (4, 8), (9, 14)]);
        assert_eq!(tokens[0].filtered, Some(FilterReason::Stopword));
        assert_eq!(tokens[1].normalized, "soul");
        assert!(tokens[1].is_retained());
        assert_eq!(tokens[2].normalized, "lives");
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("", &PreprocessConfig::default()).is_empty());
    }

    #[test]
    fn tokenize_strips_punctuation() {
        let tokens = tokenize("Seele, Seele!", &PreprocessConfig::default());
        assert_eq!(tokens.len(), 2);
        assert!(tokens.iter().all(|t| t.normalized == "seele"));
        assert_ne!(tokens[0].span, tokens[1].span);
    }

    #[test]
    fn tokenize_unicode_spans_are_bytes() {
        let text = "Größe über";
        let tokens = tokenize(text, &PreprocessConfig::default());
        assert_eq!(tokens.len(), 2);
        for t in &tokens {
            assert_eq!(&text[t.span.0..t.span.1], t.surface);
        }
        assert_eq!(tokens[0].normalized, "größe");
    }

    #[test]
    fn short_tokens_filtered() {
        let cfg = PreprocessConfig::default().with_min_token_len(3);
        let tokens = tokenize("a bc def", &cfg);
        assert_eq!(tokens[0].filtered, Some(FilterReason::TooShort));
        assert_eq!(tokens[1].filtered, Some(FilterReason::TooShort));
        assert!(tokens[2].is_retained());
    }

    #[test]
    fn normalizer_hook_runs() {
        let cfg = PreprocessConfig::default().with_normalizer(Arc::new(|s: &str| s.trim_end_matches('s').to_string()));
        let tokens = tokenize("Souls", &cfg);
        assert_eq!(tokens[0].normalized, "soul");
    }

    fn docs(texts: &[&str]) -> Vec<Document> {
        let cfg = PreprocessConfig::default();
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), "", *t).tokenized(&cfg))
            .collect()
    }

    #[test]
    fn build_matrix_counts() {
        let mut d = docs(&["a b a", "b c"]);
        let (vocab, m) = build_matrix(&mut d, 1).unwrap();
        assert_eq!(vocab.terms(), ["a", "b", "c"]);
        assert_eq!(m.to_dense(), vec![vec![2, 1, 0], vec![0, 1, 1]]);
    }

    #[test]
    fn build_matrix_min_doc_freq() {
        let mut d = docs(&["a b a", "b c"]);
        let (vocab, m) = build_matrix(&mut d, 2).unwrap();
        assert_eq!(vocab.terms(), ["b"]);
        assert_eq!(m.to_dense(), vec![vec![1], vec![1]]);
        // dropped terms are marked, so every retained token maps into the vocabulary
        for doc in &d {
            for t in doc.retained_tokens() {
                assert!(vocab.lookup(&t.normalized).is_some());
            }
        }
        assert_eq!(d[0].tokens[0].filtered, Some(FilterReason::Rare));
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let cfg = PreprocessConfig::default().with_stopwords(["a", "b"]);
        let mut d = vec![Document::new("x", "", "a b").tokenized(&cfg)];
        assert!(matches!(build_matrix(&mut d, 1), Err(Error::EmptyVocabulary)));
        let mut d = docs(&["", ""]);
        assert!(build_matrix(&mut d, 1).is_err());
    }

    #[test]
    fn zero_min_doc_freq_rejected() {
        let mut d = docs(&["a"]);
        assert!(build_matrix(&mut d, 0).is_err());
    }

    #[test]
    fn vocabulary_lookup_roundtrip() {
        let vocab = Vocabulary::from_terms(vec!["x".into(), "y".into()]).unwrap();
        for id in 0..vocab.len() {
            assert_eq!(vocab.lookup(vocab.term(id).unwrap()), Some(id));
        }
        assert!(Vocabulary::from_terms(vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn stopword_file_format() {
        let words = parse_stopwords("# comment\nder\n  Die  \n\nund # trailing\n");
        let expected: HashSet<String> = ["der", "die", "und"].iter().map(|s| s.to_string()).collect();
        assert_eq!(words, expected);
    }
}
