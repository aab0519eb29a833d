//! Synthetic corpora drawn from a known LDA model, and an end-to-end
//! experiment harness that checks what an ensemble recovers from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, Correlation, EnsembleSummary, Thresholds};
use crate::corpus::{Corpus, Document, PreprocessConfig};
use crate::ensemble::{self, Ensemble, EnsembleMode, Preset, TopicRef};
use crate::error::{Error, Result};
use crate::metrics::{self, cosine_similarity, SimilarityMatrix, UncertaintyRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DocLength {
    Fixed { tokens: usize },
    Uniform { min: usize, max: usize },
    Poisson { mean: f64 },
}

impl DocLength {
    fn sample(&self, rng: &mut impl Rng) -> usize {
        match *self {
            DocLength::Fixed { tokens } => tokens,
            DocLength::Uniform { min, max } => rng.random_range(min..=max),
            DocLength::Poisson { mean } => {
                let n: f64 = Poisson::new(mean).expect("mean validated positive").sample(rng);
                (n as usize).max(1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub true_k: usize,
    pub vocab_size: usize,
    pub docs: usize,
    pub doc_length: DocLength,
    /// Fraction of the vocabulary split into per-topic exclusive pools; the
    /// rest is shared by all topics.
    pub separation: f64,
    /// Dirichlet concentration of each document's topic mixture.
    pub doc_alpha: f64,
    /// Gamma shape of the per-term weights inside a topic's pool.
    pub term_concentration: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            true_k: 10,
            vocab_size: 400,
            docs: 200,
            doc_length: DocLength::Uniform { min: 60, max: 100 },
            separation: 0.8,
            doc_alpha: 0.1,
            term_concentration: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn exclusive_per_topic(&self) -> usize {
        (self.separation * self.vocab_size as f64 / self.true_k as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_k == 0 || self.vocab_size == 0 || self.docs == 0 {
            return Err(Error::invalid("true_k, vocab_size and docs must be positive"));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(Error::invalid("separation must lie in [0, 1]"));
        }
        if self.true_k * self.exclusive_per_topic() > self.vocab_size {
            return Err(Error::invalid("exclusive pools exceed the vocabulary"));
        }
        if self.exclusive_per_topic() == 0 && self.separation == 1.0 {
            return Err(Error::invalid("vocabulary too small for fully separated topics"));
        }
        if !(self.doc_alpha > 0.0 && self.term_concentration > 0.0) {
            return Err(Error::invalid("concentrations must be positive"));
        }
        match self.doc_length {
            DocLength::Fixed { tokens: 0 } => Err(Error::invalid("documents need tokens")),
            DocLength::Uniform { min, max } if min == 0 || min > max => Err(Error::invalid("bad length range")),
            DocLength::Poisson { mean } if mean.is_nan() || mean <= 0.0 => {
                Err(Error::invalid("Poisson mean must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Pseudo-word for term `i`: at least three lowercase letters.
pub fn synthetic_term(i: usize) -> String {
    let mut letters = Vec::new();
    let mut x = i;
    loop {
        letters.push(b'a' + (x % 26) as u8);
        x /= 26;
        if x == 0 {
            break;
        }
    }
    while letters.len() < 3 {
        letters.push(b'a');
    }
    letters.reverse();
    String::from_utf8(letters).expect("ascii")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub terms: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub documents: Vec<Document>,
    pub ground_truth: GroundTruth,
}

fn dirichlet(rng: &mut impl Rng, concentration: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated positive");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|x| *x /= sum);
    } else {
        // every draw underflowed: all mass on one component
        draws.iter_mut().for_each(|x| *x = 0.0);
        draws[rng.random_range(0..n)] = 1.0;
    }
    draws
}

fn sample_index(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Samples documents from a ground-truth LDA model.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let v = spec.vocab_size;
    let exclusive = spec.exclusive_per_topic();
    let shared_start = spec.true_k * exclusive;
    let terms: Vec<String> = (0..v).map(synthetic_term).collect();

    let phi: Vec<Vec<f64>> = (0..spec.true_k)
        .map(|t| {
            let pool: Vec<usize> = (t * exclusive..(t + 1) * exclusive).chain(shared_start..v).collect();
            let weights = dirichlet(&mut rng, spec.term_concentration, pool.len());
            let mut row = vec![0.0; v];
            for (w, p) in pool.into_iter().zip(weights) {
                row[w] = p;
            }
            row
        })
        .collect();

    let mut theta = Vec::with_capacity(spec.docs);
    let mut documents = Vec::with_capacity(spec.docs);
    for d in 0..spec.docs {
        let mix = dirichlet(&mut rng, spec.doc_alpha, spec.true_k);
        let len = spec.doc_length.sample(&mut rng);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let t = sample_index(&mut rng, &mix);
                terms[sample_index(&mut rng, &phi[t])].as_str()
            })
            .collect();
        let id = format!("doc{d:04}");
        documents.push(Document::new(id.clone(), id, words.join(" ")));
        theta.push(mix);
    }
    Ok(SyntheticCorpus {
        spec: *spec,
        documents,
        ground_truth: GroundTruth { terms, phi, theta },
    })
}

impl SyntheticCorpus {
    pub fn build(&self) -> Result<Corpus> {
        Corpus::build(self.documents.clone(), &PreprocessConfig::default(), 1)
    }

    /// Ground-truth topics re-indexed onto a corpus vocabulary. Terms that
    /// never occurred in the sample are dropped.
    pub fn aligned_truth(&self, vocabulary: &crate::corpus::Vocabulary) -> Vec<Vec<f64>> {
        self.ground_truth
            .phi
            .iter()
            .map(|row| {
                let mut aligned = vec![0.0; vocabulary.len()];
                for (w, term) in self.ground_truth.terms.iter().enumerate() {
                    if let Some(id) = vocabulary.lookup(term) {
                        aligned[id] = row[w];
                    }
                }
                aligned
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Topics per member; presets default to 20 (E5 varies it).
    pub k: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
    /// Train every member from the same seed so only the varied parameter
    /// differs.
    pub pin_seed: bool,
    /// Minimum cosine similarity for a trained topic to count as a match
    /// of a ground-truth topic.
    pub match_threshold: f64,
    /// Completeness at which a cluster counts as recovered.
    pub complete_at: f64,
    pub thresholds: Thresholds,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            k: None,
            iterations: 500,
            seed: 1,
            pin_seed: false,
            match_threshold: 0.7,
            complete_at: 0.8,
            thresholds: Thresholds::default(),
        }
    }
}

/// Trained topics matched to one ground-truth topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCandidate {
    pub truth_topic: usize,
    pub members: Vec<TopicRef>,
    pub similarities: Vec<f64>,
    pub completeness: f64,
    pub recovered: bool,
    pub mean_u_exist: f64,
    pub mean_u_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSimilarity {
    pub model_index: usize,
    /// Value of the varied parameter, when the ensemble varies one.
    pub parameter: Option<f64>,
    /// Mean cosine similarity over pairs of the member's own topics.
    pub mean_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub preset: Preset,
    pub synthetic: SyntheticSpec,
    pub options: ExperimentOptions,
    pub members: usize,
    pub total_topics: usize,
    pub summary: EnsembleSummary,
    pub correlation: Option<Correlation>,
    pub clusters: Vec<ClusterCandidate>,
    pub recovered_clusters: usize,
    /// Mean U_E over topics of recovered clusters.
    pub clustered_mean_u_exist: Option<f64>,
    /// Mean U_E over topics in no cluster candidate.
    pub isolated_mean_u_exist: Option<f64>,
    pub isolated_topics: usize,
    pub member_similarity: Vec<MemberSimilarity>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Greedy best match of every ground-truth topic in every member.
pub fn match_ground_truth(
    truth: &[Vec<f64>],
    ensemble: &Ensemble,
    records: &[UncertaintyRecord],
    options: &ExperimentOptions,
) -> Result<Vec<ClusterCandidate>> {
    let by_ref: std::collections::HashMap<TopicRef, &UncertaintyRecord> =
        records.iter().map(|r| (r.topic, r)).collect();
    truth
        .iter()
        .enumerate()
        .map(|(g, gt)| {
            let mut members = Vec::new();
            let mut similarities = Vec::new();
            for (m, model) in ensemble.members.iter().enumerate() {
                let mut best = (0, f64::NEG_INFINITY);
                for t in 0..model.k() {
                    let s = cosine_similarity(gt, model.topic(t))?;
                    if s > best.1 {
                        best = (t, s);
                    }
                }
                if best.1 >= options.match_threshold {
                    members.push(TopicRef::new(m, best.0));
                    similarities.push(best.1);
                }
            }
            let completeness = members.len() as f64 / ensemble.len() as f64;
            let ue: Vec<f64> = members.iter().map(|r| by_ref[r].u_exist).collect();
            let um: Vec<f64> = members.iter().map(|r| by_ref[r].u_match).collect();
            Ok(ClusterCandidate {
                truth_topic: g,
                completeness,
                recovered: completeness >= options.complete_at,
                mean_u_exist: mean(&ue).unwrap_or(f64::NAN),
                mean_u_match: mean(&um).unwrap_or(f64::NAN),
                members,
                similarities,
            })
        })
        .collect()
}

/// Mean pairwise similarity among each member's own topics.
pub fn member_similarity(ensemble: &Ensemble, sim: &SimilarityMatrix) -> Vec<MemberSimilarity> {
    let spec = ensemble.spec();
    ensemble
        .members
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let idx: Vec<usize> = (0..model.k())
                .filter_map(|t| sim.index_of(TopicRef::new(m, t)))
                .collect();
            let mut pairs = Vec::new();
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    pairs.push(sim.get(i, j));
                }
            }
            let parameter = spec.and_then(|s| match s.mode {
                EnsembleMode::Sampling => None,
                _ => Some(s.parameter_values[m]),
            });
            MemberSimilarity {
                model_index: m,
                parameter,
                mean_similarity: mean(&pairs).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

/// Runs a preset end to end on a synthetic corpus.
pub fn run_experiment(
    preset: Preset,
    synthetic: &SyntheticSpec,
    options: &ExperimentOptions,
) -> Result<ExperimentReport> {
    let sample = generate_corpus(synthetic)?;
    let corpus = sample.build()?;
    let mut spec = match options.k {
        Some(k) => preset.spec_with_k(k)?,
        None => preset.spec()?,
    };
    spec = spec.with_iterations(options.iterations).with_seed(options.seed);
    spec.pin_seed = options.pin_seed;
    let ensemble = ensemble::generate(&corpus.matrix, &corpus.vocabulary, &spec)?;
    let (sim, records) = metrics::compute_all(&ensemble)?;
    let summary = analysis::ensemble_summary(&records, options.thresholds)?;
    let correlation = analysis::correlation(&records).ok();

    let truth = sample.aligned_truth(&corpus.vocabulary);
    let clusters = match_ground_truth(&truth, &ensemble, &records, options)?;
    let in_cluster: std::collections::HashSet<TopicRef> =
        clusters.iter().flat_map(|c| c.members.iter().copied()).collect();
    let clustered: Vec<f64> = clusters
        .iter()
        .filter(|c| c.recovered)
        .flat_map(|c| c.members.iter())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|r| records.iter().find(|x| x.topic == *r).map_or(f64::NAN, |x| x.u_exist))
        .collect();
    let isolated: Vec<f64> = records
        .iter()
        .filter(|r| !in_cluster.contains(&r.topic))
        .map(|r| r.u_exist)
        .collect();

    Ok(ExperimentReport {
        preset,
        synthetic: *synthetic,
        options: *options,
        members: ensemble.len(),
        total_topics: ensemble.total_topics(),
        summary,
        correlation,
        recovered_clusters: clusters.iter().filter(|c| c.recovered).count(),
        clusters,
        clustered_mean_u_exist: mean(&clustered),
        isolated_mean_u_exist: mean(&isolated),
        isolated_topics: isolated.len(),
        member_similarity: member_similarity(&ensemble, &sim),
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

impl ExperimentReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "preset {}: {} members, {} topics (synthetic true_k = {}, {} docs, V = {})\n",
            self.preset,
            self.members,
            self.total_topics,
            self.synthetic.true_k,
            self.synthetic.docs,
            self.synthetic.vocab_size
        ));
        for (name, m) in [("U_M", &self.summary.u_match), ("U_E", &self.summary.u_exist)] {
            out.push_str(&format!(
                "  {name}: mean {:.3}, median {:.3}, stable {}, grey {}, unstable {}\n",
                m.mean, m.median, m.stable, m.grey, m.unstable
            ));
        }
        match &self.correlation {
            Some(c) => out.push_str(&format!(
                "  correlation U_M/U_E: pearson {:.3}, spearman {:.3}\n",
                c.pearson, c.spearman
            )),
            None => out.push_str("  correlation U_M/U_E: undefined\n"),
        }
        out.push_str(&format!(
            "  recovered clusters: {}/{}; mean U_E clustered {}, isolated {} ({} topics)\n",
            self.recovered_clusters,
            self.clusters.len(),
            fmt_opt(self.clustered_mean_u_exist),
            fmt_opt(self.isolated_mean_u_exist),
            self.isolated_topics
        ));
        for c in &self.clusters {
            out.push_str(&format!(
                "    truth {:>2}: completeness {:.1}, mean U_E {:.3}\n",
                c.truth_topic, c.completeness, c.mean_u_exist
            ));
        }
        if self.member_similarity.iter().any(|m| m.parameter.is_some()) {
            out.push_str("  within-member mean similarity:\n");
            for m in &self.member_similarity {
                out.push_str(&format!(
                    "    member {:>2} (param {}): {:.4}\n",
                    m.model_index,
                    fmt_opt(m.parameter),
                    m.mean_similarity
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_names() {
        assert_eq!(synthetic_term(0), "aaa");
        assert_eq!(synthetic_term(27), "abb");
        let names: std::collections::HashSet<String> = (0..2000).map(synthetic_term).collect();
        assert_eq!(names.len(), 2000);
    }

    #[test]
    fn fully_separated_pools_are_disjoint() {
        let spec = SyntheticSpec {
            true_k: 2,
            vocab_size: 40,
            docs: 20,
            separation: 1.0,
            ..Default::default()
        };
        let c = generate_corpus(&spec).unwrap();
        let phi = &c.ground_truth.phi;
        for (a, b) in phi[0].iter().zip(&phi[1]) {
            assert!(*a == 0.0 || *b == 0.0);
        }
        for row in phi {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = SyntheticSpec {
            docs: 10,
            ..Default::default()
        };
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.ground_truth, b.ground_truth);
        let c = generate_corpus(&SyntheticSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a.documents, c.documents);
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSpec {
            true_k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            separation: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SyntheticSpec {
            doc_length: DocLength::Uniform { min: 5, max: 2 },
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
