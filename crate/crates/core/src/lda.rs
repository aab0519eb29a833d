//! Latent Dirichlet allocation trained by collapsed Gibbs sampling.
//!
//! Sampling order is document-major: tokens of a document are visited in the
//! order of their expansion from the sparse count row (ascending term id,
//! repeated by count). Random numbers come from ChaCha8 seeded with
//! [`LdaConfig::seed`], so a run is reproducible bit for bit given the matrix
//! and the configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocTermMatrix, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_ITERATIONS: usize = 10_000;

/// Tolerance for probability rows summing to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// Default priors for `k` topics: alpha = 5/k, beta = 0.01, 10,000 sweeps.
    pub fn new(k: usize) -> Self {
        LdaConfig {
            k,
            alpha: 5.0 / k.max(1) as f64,
            beta: DEFAULT_BETA,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        Ok(())
    }
}

/// A trained or imported topic model.
///
/// `phi` holds one term distribution per topic; `theta` one topic
/// distribution per document. Imported models may lack `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub model_id: usize,
    pub config: Option<LdaConfig>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Option<Vec<Vec<f64>>>,
    pub doc_ids: Vec<String>,
}

impl TopicModel {
    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn n_terms(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    pub fn topic(&self, t: usize) -> &[f64] {
        &self.phi[t]
    }

    pub fn theta(&self) -> Result<&[Vec<f64>]> {
        self.theta
            .as_deref()
            .ok_or(Error::Unavailable("document-topic distribution"))
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    /// Indices of the `n` most probable terms of topic `t`, ties broken by
    /// ascending term id.
    pub fn top_terms(&self, t: usize, n: usize) -> Vec<usize> {
        let row = &self.phi[t];
        let mut ids: Vec<usize> = (0..row.len()).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.truncate(n);
        ids
    }

    /// Checks that every phi and theta row is a probability distribution.
    pub fn validate(&self) -> Result<()> {
        if self.phi.is_empty() {
            return Err(Error::invalid("model has no topics"));
        }
        let v = self.n_terms();
        for (t, row) in self.phi.iter().enumerate() {
            if row.len() != v {
                return Err(Error::dimension(format!(
                    "phi row {t} has {} terms, expected {v}",
                    row.len()
                )));
            }
            check_distribution(row).map_err(|m| Error::invalid(format!("phi row {t}: {m}")))?;
        }
        if let Some(theta) = &self.theta {
            if theta.len() != self.doc_ids.len() {
                return Err(Error::dimension(format!(
                    "{} theta rows for {} documents",
                    theta.len(),
                    self.doc_ids.len()
                )));
            }
            for (d, row) in theta.iter().enumerate() {
                if row.len() != self.k() {
                    return Err(Error::dimension(format!(
                        "theta row {d} has {} entries, k = {}",
                        row.len(),
                        self.k()
                    )));
                }
                check_distribution(row).map_err(|m| Error::invalid(format!("theta row {d}: {m}")))?;
            }
        }
        Ok(())
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = row.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(format!("entry {x} is not a nonnegative number"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Collapsed Gibbs sampler state for one training run.
pub struct GibbsSampler<'a> {
    config: LdaConfig,
    matrix: &'a DocTermMatrix,
    n_terms: usize,
    words: Vec<usize>,
    doc_offsets: Vec<usize>,
    assignments: Vec<usize>,
    doc_topic: Vec<u32>,
    topic_term: Vec<u32>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
    weights: Vec<f64>,
    sweeps: usize,
}

impl<'a> GibbsSampler<'a> {
    /// Expands the matrix into tokens and assigns each a uniformly random topic.
    pub fn new(matrix: &'a DocTermMatrix, config: LdaConfig) -> Result<Self> {
        config.validate()?;
        if matrix.total() == 0 {
            return Err(Error::NoTokens);
        }
        let k = config.k;
        let n_terms = matrix.n_terms();
        let mut words = Vec::with_capacity(matrix.total() as usize);
        let mut doc_offsets = Vec::with_capacity(matrix.n_docs() + 1);
        doc_offsets.push(0);
        for row in matrix.rows() {
            for &(w, c) in row {
                words.extend(std::iter::repeat_n(w, c as usize));
            }
            doc_offsets.push(words.len());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sampler = GibbsSampler {
            config,
            matrix,
            n_terms,
            assignments: Vec::with_capacity(words.len()),
            words,
            doc_offsets,
            doc_topic: vec![0; matrix.n_docs() * k],
            topic_term: vec![0; k * n_terms],
            topic_total: vec![0; k],
            rng: ChaCha8Rng::seed_from_u64(0),
            weights: vec![0.0; k],
            sweeps: 0,
        };
        for d in 0..matrix.n_docs() {
            for i in sampler.doc_offsets[d]..sampler.doc_offsets[d + 1] {
                let t = rng.random_range(0..k);
                sampler.assignments.push(t);
                sampler.add(d, sampler.words[i], t);
            }
        }
        sampler.rng = rng;
        Ok(sampler)
    }

    #[inline]
    fn add(&mut self, d: usize, w: usize, t: usize) {
        self.doc_topic[d * self.config.k + t] += 1;
        self.topic_term[t * self.n_terms + w] += 1;
        self.topic_total[t] += 1;
    }

    #[inline]
    fn remove(&mut self, d: usize, w: usize, t: usize) {
        self.doc_topic[d * self.config.k + t] -= 1;
        self.topic_term[t * self.n_terms + w] -= 1;
        self.topic_total[t] -= 1;
    }

    /// One full pass resampling every token's topic.
    pub fn sweep(&mut self) {
        let k = self.config.k;
        let alpha = self.config.alpha;
        let beta = self.config.beta;
        let v_beta = self.n_terms as f64 * beta;
        for d in 0..self.matrix.n_docs() {
            for i in self.doc_offsets[d]..self.doc_offsets[d + 1] {
                let w = self.words[i];
                let old = self.assignments[i];
                self.remove(d, w, old);

                let doc_row = &self.doc_topic[d * k..(d + 1) * k];
                let mut total = 0.0;
                for (t, &n_dt) in doc_row.iter().enumerate() {
                    let p = (n_dt as f64 + alpha) * (self.topic_term[t * self.n_terms + w] as f64 + beta)
                        / (self.topic_total[t] as f64 + v_beta);
                    total += p;
                    self.weights[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[i] = new;
                self.add(d, w, new);
            }
        }
        self.sweeps += 1;
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Verifies the count tables against the current assignments.
    pub fn check_counts(&self) -> std::result::Result<(), String> {
        let k = self.config.k;
        let mut doc_topic = vec![0u32; self.doc_topic.len()];
        let mut topic_term = vec![0u32; self.topic_term.len()];
        for d in 0..self.matrix.n_docs() {
            for i in self.doc_offsets[d]..self.doc_offsets[d + 1] {
                let t = self.assignments[i];
                doc_topic[d * k + t] += 1;
                topic_term[t * self.n_terms + self.words[i]] += 1;
            }
            let len = (self.doc_offsets[d + 1] - self.doc_offsets[d]) as u64;
            let counted: u64 = self.doc_topic[d * k..(d + 1) * k].iter().map(|&c| c as u64).sum();
            if counted != len {
                return Err(format!("document {d}: topic counts sum to {counted}, length {len}"));
            }
        }
        for t in 0..k {
            let row: u64 = self.topic_term[t * self.n_terms..(t + 1) * self.n_terms]
                .iter()
                .map(|&c| c as u64)
                .sum();
            if row != self.topic_total[t] as u64 {
                return Err(format!(
                    "topic {t}: term counts sum to {row}, total {}",
                    self.topic_total[t]
                ));
            }
        }
        if doc_topic != self.doc_topic {
            return Err("document-topic counts disagree with assignments".into());
        }
        if topic_term != self.topic_term {
            return Err("topic-term counts disagree with assignments".into());
        }
        Ok(())
    }

    /// Smoothed point estimates from the current state.
    pub fn to_model(&self, model_id: usize) -> TopicModel {
        let k = self.config.k;
        let alpha = self.config.alpha;
        let beta = self.config.beta;
        let v_beta = self.n_terms as f64 * beta;
        let phi = (0..k)
            .map(|t| {
                let denom = self.topic_total[t] as f64 + v_beta;
                self.topic_term[t * self.n_terms..(t + 1) * self.n_terms]
                    .iter()
                    .map(|&c| (c as f64 + beta) / denom)
                    .collect()
            })
            .collect();
        let k_alpha = k as f64 * alpha;
        let theta = (0..self.matrix.n_docs())
            .map(|d| {
                let len = (self.doc_offsets[d + 1] - self.doc_offsets[d]) as f64;
                self.doc_topic[d * k..(d + 1) * k]
                    .iter()
                    .map(|&c| (c as f64 + alpha) / (len + k_alpha))
                    .collect()
            })
            .collect();
        TopicModel {
            model_id,
            config: Some(self.config),
            phi,
            theta: Some(theta),
            doc_ids: self.matrix.doc_ids.clone(),
        }
    }
}

/// Trains a model with `config.iterations` Gibbs sweeps.
pub fn train(matrix: &DocTermMatrix, config: LdaConfig) -> Result<TopicModel> {
    train_with_id(matrix, config, 0)
}

pub(crate) fn train_with_id(matrix: &DocTermMatrix, config: LdaConfig, model_id: usize) -> Result<TopicModel> {
    let mut sampler = GibbsSampler::new(matrix, config)?;
    for _ in 0..config.iterations {
        sampler.sweep();
        debug_assert!(sampler.check_counts().is_ok());
    }
    Ok(sampler.to_model(model_id))
}

/// Corpus log-likelihood `sum_{d,w} n_{dw} * ln(sum_t theta_dt * phi_tw)`.
pub fn log_likelihood(model: &TopicModel, matrix: &DocTermMatrix) -> Result<f64> {
    let theta = model.theta()?;
    if theta.len() != matrix.n_docs() {
        return Err(Error::dimension(format!(
            "model has {} documents, matrix {}",
            theta.len(),
            matrix.n_docs()
        )));
    }
    if model.n_terms() != matrix.n_terms() {
        return Err(Error::dimension(format!(
            "model has {} terms, matrix {}",
            model.n_terms(),
            matrix.n_terms()
        )));
    }
    let mut ll = 0.0;
    for (d, row) in matrix.rows().enumerate() {
        for &(w, c) in row {
            let p: f64 = (0..model.k()).map(|t| theta[d][t] * model.phi[t][w]).sum();
            ll += c as f64 * p.ln();
        }
    }
    Ok(ll)
}

/// JSON export of a single model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub config: Option<LdaConfig>,
    pub vocabulary_hash: String,
    pub doc_ids: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Option<Vec<Vec<f64>>>,
}

impl ModelExport {
    pub fn new(model: &TopicModel, vocabulary: &Vocabulary) -> Self {
        ModelExport {
            config: model.config,
            vocabulary_hash: vocabulary.content_hash(),
            doc_ids: model.doc_ids.clone(),
            phi: model.phi.clone(),
            theta: model.theta.clone(),
        }
    }

    pub fn into_model(self, model_id: usize, vocabulary: &Vocabulary) -> Result<TopicModel> {
        if self.vocabulary_hash != vocabulary.content_hash() {
            return Err(Error::invalid("model was exported against a different vocabulary"));
        }
        let model = TopicModel {
            model_id,
            config: self.config,
            phi: self.phi,
            theta: self.theta,
            doc_ids: self.doc_ids,
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_matrix() -> DocTermMatrix {
        DocTermMatrix::from_rows(
            (0..5).map(|i| format!("d{i}")).collect(),
            vec![
                vec![(0, 3), (1, 2)],
                vec![(1, 1), (2, 4)],
                vec![(0, 1), (3, 2)],
                vec![(2, 2), (3, 3)],
                vec![(0, 2), (1, 1), (2, 1), (3, 1)],
            ],
            4,
        )
        .unwrap()
    }

    #[test]
    fn default_priors() {
        let cfg = LdaConfig::new(20);
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.beta, 0.01);
        assert_eq!(cfg.iterations, 10_000);
    }

    #[test]
    fn invalid_configs_rejected() {
        let m = tiny_matrix();
        for cfg in [
            LdaConfig::new(0),
            LdaConfig::new(2).with_alpha(0.0),
            LdaConfig::new(2).with_beta(-1.0),
            LdaConfig::new(2).with_iterations(0),
            LdaConfig::new(2).with_alpha(f64::NAN),
        ] {
            assert!(matches!(train(&m, cfg), Err(Error::Invalid(_))), "{cfg:?}");
        }
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = DocTermMatrix::from_rows(vec!["a".into()], vec![vec![]], 3).unwrap();
        assert!(matches!(
            train(&m, LdaConfig::new(2).with_iterations(1)),
            Err(Error::NoTokens)
        ));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let m = tiny_matrix();
        let cfg = LdaConfig::new(2).with_iterations(100).with_seed(42);
        let a = train(&m, cfg).unwrap();
        let b = train(&m, cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&m, cfg.with_seed(43)).unwrap();
        assert!(a.phi != c.phi || a.theta != c.theta);
    }

    #[test]
    fn single_topic_closed_form() {
        let m = tiny_matrix();
        let cfg = LdaConfig::new(1).with_iterations(5).with_seed(7);
        let model = train(&m, cfg).unwrap();
        for row in model.theta.as_ref().unwrap() {
            assert_eq!(row, &vec![1.0]);
        }
        let n_total = m.total() as f64;
        let v = m.n_terms() as f64;
        for w in 0..m.n_terms() {
            let n_w: u32 = (0..m.n_docs()).map(|d| m.get(d, w)).sum();
            let expected = (n_w as f64 + cfg.beta) / (n_total + v * cfg.beta);
            assert_eq!(model.phi[0][w], expected);
        }
    }

    #[test]
    fn counts_conserved_every_sweep() {
        let m = tiny_matrix();
        let mut s = GibbsSampler::new(&m, LdaConfig::new(3).with_seed(1)).unwrap();
        s.check_counts().unwrap();
        for _ in 0..20 {
            s.sweep();
            s.check_counts().unwrap();
        }
        assert_eq!(s.sweeps(), 20);
        s.to_model(0).validate().unwrap();
    }

    #[test]
    fn log_likelihood_trivial() {
        let m = DocTermMatrix::from_rows(vec!["d".into()], vec![vec![(0, 2)]], 1).unwrap();
        let model = TopicModel {
            model_id: 0,
            config: None,
            phi: vec![vec![1.0]],
            theta: Some(vec![vec![1.0]]),
            doc_ids: vec!["d".into()],
        };
        assert_eq!(log_likelihood(&model, &m).unwrap(), 0.0);
    }

    #[test]
    fn log_likelihood_dimension_mismatch() {
        let m = tiny_matrix();
        let model = train(&m, LdaConfig::new(2).with_iterations(2)).unwrap();
        let other = DocTermMatrix::from_rows(vec!["d".into()], vec![vec![(0, 2)]], 1).unwrap();
        assert!(matches!(log_likelihood(&model, &other), Err(Error::Dimension(_))));
        let ll = log_likelihood(&model, &m).unwrap();
        assert!(ll.is_finite() && ll <= 0.0);
    }

    #[test]
    fn validate_catches_bad_rows() {
        let model = TopicModel {
            model_id: 0,
            config: None,
            phi: vec![vec![0.5, 0.4]],
            theta: None,
            doc_ids: vec![],
        };
        assert!(model.validate().is_err());
    }

    #[test]
    fn export_roundtrip() {
        let m = tiny_matrix();
        let vocab = Vocabulary::from(vec!["a".to_string(), "b".into(), "c".into(), "d".into()]);
        let model = train(&m, LdaConfig::new(2).with_iterations(10).with_seed(3)).unwrap();
        let json = serde_json::to_string(&ModelExport::new(&model, &vocab)).unwrap();
        let back: ModelExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_model(0, &vocab).unwrap(), model);
        let other = Vocabulary::from(vec!["z".to_string()]);
        let back: ModelExport = serde_json::from_str(&json).unwrap();
        assert!(back.into_model(0, &other).is_err());
    }
}
