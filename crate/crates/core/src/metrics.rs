//! Topic similarity and the two ensemble uncertainty measures.
//!
//! Matching uncertainty `U_M` asks how unambiguously a topic matches a
//! single topic of every other ensemble member; existence uncertainty `U_E`
//! asks whether near-duplicates of the topic exist in the other members at
//! all. All logarithms are natural; `U_M` is a ratio of divergences so the
//! base cancels.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, TopicRef};
use crate::error::{Error, Result};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Cosine of the angle between two nonnegative vectors, clamped to `[0, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // sqrt(fl(x * x)) == x, so identical vectors give exactly 1
    Ok((dot / (na * nb).sqrt()).clamp(0.0, 1.0))
}

/// `KL(a || b) = sum_x a(x) ln(a(x) / b(x))` with `0 ln 0 = 0`.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let mut sum = 0.0;
    for (i, (&p, &q)) in a.iter().zip(b).enumerate() {
        if p > 0.0 {
            if q <= 0.0 {
                return Err(Error::InfiniteDivergence(i));
            }
            sum += p * (p / q).ln();
        }
    }
    Ok(sum)
}

/// Jensen-Shannon divergence, symmetric and bounded by `ln 2`.
pub fn js_divergence(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let m: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    // m > 0 wherever a or b is, so neither term can be infinite
    Ok(0.5 * kl_divergence(a, &m)? + 0.5 * kl_divergence(b, &m)?)
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Dense symmetric matrix of pairwise cosine similarities over every topic
/// of an ensemble, rows ordered as `refs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub refs: Vec<TopicRef>,
    values: Vec<f64>,
}

pub const SIMILARITY_MAGIC: &[u8; 8] = b"TPSIM\0\x01\0";

impl SimilarityMatrix {
    pub fn compute(ensemble: &Ensemble) -> Result<Self> {
        let refs = ensemble.refs();
        let n = refs.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let a = ensemble.phi(refs[i]);
                (0..n)
                    .map(|j| {
                        if i == j {
                            Ok(1.0)
                        } else if j < i {
                            // filled from the upper triangle below
                            Ok(0.0)
                        } else {
                            cosine_similarity(a, ensemble.phi(refs[j]))
                        }
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                values[i * n + j] = rows[i][j];
                values[j * n + i] = rows[i][j];
            }
        }
        Ok(SimilarityMatrix { refs, values })
    }

    pub fn from_values(refs: Vec<TopicRef>, values: Vec<f64>) -> Result<Self> {
        let n = refs.len();
        if values.len() != n * n {
            return Err(Error::dimension(format!("{} values for {n} topics", values.len())));
        }
        Ok(SimilarityMatrix { refs, values })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn index_of(&self, r: TopicRef) -> Option<usize> {
        // refs are member-major and sorted
        self.refs.binary_search(&r).ok()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn between(&self, a: TopicRef, b: TopicRef) -> Result<f64> {
        let i = self.index_of(a).ok_or(Error::UnknownTopic {
            model: a.model,
            topic: a.topic,
        })?;
        let j = self.index_of(b).ok_or(Error::UnknownTopic {
            model: b.model,
            topic: b.topic,
        })?;
        Ok(self.get(i, j))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Similarities of topic `source` to every topic of member `model`.
    pub fn against_model(&self, source: TopicRef, model: usize) -> Result<Vec<f64>> {
        let i = self.index_of(source).ok_or(Error::UnknownTopic {
            model: source.model,
            topic: source.topic,
        })?;
        let row = self.row(i);
        Ok(self
            .refs
            .iter()
            .zip(row)
            .filter(|(r, _)| r.model == model)
            .map(|(_, &s)| s)
            .collect())
    }

    /// Row-major little-endian f64 values behind an 8-byte magic and the
    /// dimension as a little-endian u64.
    pub fn write_binary(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(SIMILARITY_MAGIC)?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the binary format written by [`SimilarityMatrix::write_binary`].
    pub fn read_binary(mut input: impl Read, refs: Vec<TopicRef>) -> Result<Self> {
        let io_err = |e: std::io::Error| Error::invalid(format!("similarity sidecar: {e}"));
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io_err)?;
        if &magic != SIMILARITY_MAGIC {
            return Err(Error::invalid("similarity sidecar has the wrong magic"));
        }
        let mut dim = [0u8; 8];
        input.read_exact(&mut dim).map_err(io_err)?;
        let n = u64::from_le_bytes(dim) as usize;
        if n != refs.len() {
            return Err(Error::dimension(format!(
                "sidecar holds {n} topics, ensemble {}",
                refs.len()
            )));
        }
        let mut values = Vec::with_capacity(n * n);
        let mut buf = [0u8; 8];
        for _ in 0..n * n {
            input.read_exact(&mut buf).map_err(io_err)?;
            values.push(f64::from_le_bytes(buf));
        }
        Ok(SimilarityMatrix { refs, values })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ref");
        for r in &self.refs {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
        for (i, r) in self.refs.iter().enumerate() {
            out.push_str(&r.to_string());
            for v in self.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Normalized similarities of one topic against the topics of another model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDistribution {
    pub source: TopicRef,
    pub target_model: usize,
    pub s: Vec<f64>,
}

/// Normalizes raw similarities of `source` to each topic of `target_model`.
pub fn match_distribution_from(
    source: TopicRef,
    target_model: usize,
    similarities: &[f64],
) -> Result<MatchDistribution> {
    if similarities.is_empty() {
        return Err(Error::invalid(format!("model {target_model} has no topics")));
    }
    let total: f64 = similarities.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateMatch(target_model));
    }
    Ok(MatchDistribution {
        source,
        target_model,
        s: similarities.iter().map(|x| x / total).collect(),
    })
}

pub fn match_distribution(
    source: TopicRef,
    target_model: usize,
    ensemble: &Ensemble,
    sim: &SimilarityMatrix,
) -> Result<MatchDistribution> {
    ensemble.check(source)?;
    if target_model == source.model {
        return Err(Error::invalid("target model must differ from the source topic's model"));
    }
    if target_model >= ensemble.len() {
        return Err(Error::invalid(format!("no ensemble member {target_model}")));
    }
    let raw = sim.against_model(source, target_model)?;
    match_distribution_from(source, target_model, &raw)
}

/// `1 - KL(s || uniform) / KL(one-hot || uniform)`.
///
/// Zero for a one-hot match, one for a uniform one. A single-topic target
/// matches trivially and yields zero.
pub fn matching_uncertainty_pair(s: &MatchDistribution) -> f64 {
    let k = s.s.len();
    if k <= 1 {
        return 0.0;
    }
    let uniform = vec![1.0 / k as f64; k];
    let mut one_hot = vec![0.0; k];
    one_hot[0] = 1.0;
    let num = kl_divergence(&s.s, &uniform).expect("uniform reference has full support");
    let den = kl_divergence(&one_hot, &uniform).expect("uniform reference has full support");
    (1.0 - num / den).clamp(0.0, 1.0)
}

/// Outcome of matching one topic against one other member.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PairOutcome {
    Value(f64),
    /// No similarity to any topic of the target: maximal uncertainty.
    Degenerate,
    /// Target has a single topic: defined as zero.
    SingleTopic,
}

impl PairOutcome {
    fn value(self) -> f64 {
        match self {
            PairOutcome::Value(v) => v,
            PairOutcome::Degenerate => 1.0,
            PairOutcome::SingleTopic => 0.0,
        }
    }
}

fn pair_outcome(source: TopicRef, target: usize, ensemble: &Ensemble, sim: &SimilarityMatrix) -> Result<PairOutcome> {
    if ensemble.members[target].k() == 1 {
        return Ok(PairOutcome::SingleTopic);
    }
    match match_distribution(source, target, ensemble, sim) {
        Ok(s) => Ok(PairOutcome::Value(matching_uncertainty_pair(&s))),
        Err(Error::DegenerateMatch(_)) => Ok(PairOutcome::Degenerate),
        Err(e) => Err(e),
    }
}

fn require_pairs(ensemble: &Ensemble) -> Result<()> {
    if ensemble.len() < 2 {
        return Err(Error::invalid("uncertainty needs an ensemble of at least 2 members"));
    }
    Ok(())
}

/// Mean pairwise matching uncertainty against every other member.
pub fn matching_uncertainty(topic: TopicRef, ensemble: &Ensemble, sim: &SimilarityMatrix) -> Result<f64> {
    require_pairs(ensemble)?;
    ensemble.check(topic)?;
    let mut total = 0.0;
    for target in (0..ensemble.len()).filter(|&l| l != topic.model) {
        total += pair_outcome(topic, target, ensemble, sim)?.value();
    }
    Ok(total / (ensemble.len() - 1) as f64)
}

/// One minus the mean, over other members, of the best similarity to any of
/// their topics.
pub fn existence_uncertainty(topic: TopicRef, ensemble: &Ensemble, sim: &SimilarityMatrix) -> Result<f64> {
    require_pairs(ensemble)?;
    ensemble.check(topic)?;
    let mut total = 0.0;
    for target in (0..ensemble.len()).filter(|&l| l != topic.model) {
        let best = sim.against_model(topic, target)?.into_iter().fold(0.0_f64, f64::max);
        total += best;
    }
    Ok((1.0 - total / (ensemble.len() - 1) as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    #[serde(rename = "ref")]
    pub topic: TopicRef,
    pub u_match: f64,
    pub u_exist: f64,
    /// Members against which the match distribution was all zeros.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub degenerate_matches: usize,
    /// Single-topic members, whose pairwise matching uncertainty is zero.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub single_topic_targets: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl UncertaintyRecord {
    pub fn value(&self, measure: Measure) -> f64 {
        match measure {
            Measure::Match => self.u_match,
            Measure::Exist => self.u_exist,
        }
    }
}

/// Which uncertainty measure to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "u_match")]
    Match,
    #[serde(rename = "u_exist")]
    Exist,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u_match" | "um" | "u_m" | "match" => Ok(Measure::Match),
            "u_exist" | "ue" | "u_e" | "exist" => Ok(Measure::Exist),
            other => Err(Error::invalid(format!("unknown measure {other:?}"))),
        }
    }
}

/// Similarity matrix plus one uncertainty record per topic.
pub fn compute_all(ensemble: &Ensemble) -> Result<(SimilarityMatrix, Vec<UncertaintyRecord>)> {
    require_pairs(ensemble)?;
    let sim = SimilarityMatrix::compute(ensemble)?;
    let records = sim
        .refs
        .par_iter()
        .map(|&topic| {
            let mut u_match = 0.0;
            let mut degenerate_matches = 0;
            let mut single_topic_targets = 0;
            for target in (0..ensemble.len()).filter(|&l| l != topic.model) {
                let outcome = pair_outcome(topic, target, ensemble, &sim)?;
                match outcome {
                    PairOutcome::Degenerate => degenerate_matches += 1,
                    PairOutcome::SingleTopic => single_topic_targets += 1,
                    PairOutcome::Value(_) => {}
                }
                u_match += outcome.value();
            }
            Ok(UncertaintyRecord {
                topic,
                u_match: u_match / (ensemble.len() - 1) as f64,
                u_exist: existence_uncertainty(topic, ensemble, &sim)?,
                degenerate_matches,
                single_topic_targets,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((sim, records))
}

/// CSV with columns `model_index,topic_index,u_match,u_exist`.
pub fn records_to_csv(records: &[UncertaintyRecord]) -> String {
    let mut out = String::from("model_index,topic_index,u_match,u_exist\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.topic.model, r.topic.topic, r.u_match, r.u_exist
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;
    use crate::ensemble::EnsembleOrigin;
    use crate::lda::TopicModel;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    pub(crate) fn ensemble_of(phis: Vec<Vec<Vec<f64>>>) -> Ensemble {
        let v = phis[0][0].len();
        let vocab = Vocabulary::from((0..v).map(|i| format!("t{i}")).collect::<Vec<_>>());
        let members = phis
            .into_iter()
            .enumerate()
            .map(|(i, phi)| TopicModel {
                model_id: i,
                config: None,
                phi,
                theta: None,
                doc_ids: vec![],
            })
            .collect();
        Ensemble::new(
            members,
            EnsembleOrigin::Imported {
                label: None,
                smoothing_floors: vec![],
            },
            vocab,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!(close(cosine_similarity(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!(close(
            cosine_similarity(&[0.5, 0.5, 0.0], &[0.5, 0.0, 0.5]).unwrap(),
            0.5,
            1e-15
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(close(
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            2f64.ln(),
            1e-15
        ));
        // 0.5 ln 2 + 0.5 ln(2/3)
        assert!(close(
            kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap(),
            0.143_841_036_225_890_2,
            1e-12
        ));
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::InfiniteDivergence(1))
        ));
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!(close(
            js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            2f64.ln(),
            1e-15
        ));
        assert!(js_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn match_distribution_examples() {
        let r = TopicRef::new(0, 0);
        assert_eq!(
            match_distribution_from(r, 1, &[1.0, 0.0, 0.0]).unwrap().s,
            vec![1.0, 0.0, 0.0]
        );
        let s = match_distribution_from(r, 1, &[0.3; 4]).unwrap().s;
        assert!(s.iter().all(|x| close(*x, 0.25, 1e-15)));
        let s = match_distribution_from(r, 1, &[0.6, 0.2, 0.2]).unwrap().s;
        assert!(close(s[0], 0.6, 1e-15) && close(s[1], 0.2, 1e-15));
        assert!(matches!(
            match_distribution_from(r, 1, &[0.0, 0.0]),
            Err(Error::DegenerateMatch(1))
        ));
    }

    #[test]
    fn pair_uncertainty_examples() {
        let md = |s: Vec<f64>| MatchDistribution {
            source: TopicRef::new(0, 0),
            target_model: 1,
            s,
        };
        assert_eq!(matching_uncertainty_pair(&md(vec![1.0, 0.0, 0.0])), 0.0);
        assert!(close(matching_uncertainty_pair(&md(vec![0.25; 4])), 1.0, 1e-15));
        // 1 - KL((0.8,0.2) || (0.5,0.5)) / ln 2 = H(0.8,0.2) / ln 2
        assert!(close(
            matching_uncertainty_pair(&md(vec![0.8, 0.2])),
            0.721_928_094_887_362_3,
            1e-12
        ));
        assert_eq!(matching_uncertainty_pair(&md(vec![1.0])), 0.0);
    }

    #[test]
    fn orthogonal_duplicates_have_zero_uncertainty() {
        let model = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let e = ensemble_of(vec![model.clone(), model]);
        let (sim, records) = compute_all(&e).unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            assert_eq!(r.u_exist, 0.0);
            assert_eq!(r.u_match, 0.0);
            assert_eq!(matching_uncertainty(r.topic, &e, &sim).unwrap(), r.u_match);
        }
    }

    #[test]
    fn identical_topics_have_full_matching_uncertainty() {
        let model = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]];
        let e = ensemble_of(vec![model.clone(), model.clone(), model]);
        let (_, records) = compute_all(&e).unwrap();
        for r in &records {
            assert!(close(r.u_match, 1.0, 1e-12));
            assert!(close(r.u_exist, 0.0, 1e-12));
        }
    }

    #[test]
    fn existence_arithmetic() {
        // best matches of 0/0: 0.9 in member 1, 0.7 in member 2
        let c1 = (1.0 - 0.9f64 * 0.9).sqrt();
        let c2 = (1.0 - 0.7f64 * 0.7).sqrt();
        // cosine is scale invariant, so normalizing keeps the similarities
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let e = ensemble_of(vec![
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![norm(vec![0.9, c1, 0.0]), vec![0.0, 0.0, 1.0]],
            vec![norm(vec![0.7, c2, 0.0]), vec![0.0, 0.0, 1.0]],
        ]);
        let sim = SimilarityMatrix::compute(&e).unwrap();
        let u = existence_uncertainty(TopicRef::new(0, 0), &e, &sim).unwrap();
        assert!(close(u, 0.2, 1e-12), "{u}");
    }

    #[test]
    fn orthogonal_topic_has_full_existence_uncertainty() {
        let e = ensemble_of(vec![
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
        ]);
        let (_, records) = compute_all(&e).unwrap();
        for r in records {
            assert_eq!(r.u_exist, 1.0);
            assert_eq!(r.u_match, 1.0);
            assert_eq!(r.degenerate_matches, 1);
        }
    }

    #[test]
    fn single_member_ensemble_rejected() {
        let e = ensemble_of(vec![vec![vec![1.0, 0.0]]]);
        assert!(compute_all(&e).is_err());
        let sim = SimilarityMatrix::compute(&e).unwrap();
        assert!(matching_uncertainty(TopicRef::new(0, 0), &e, &sim).is_err());
        assert!(existence_uncertainty(TopicRef::new(0, 0), &e, &sim).is_err());
    }

    #[test]
    fn single_topic_target_counts_as_zero() {
        let e = ensemble_of(vec![vec![vec![0.5, 0.5], vec![1.0, 0.0]], vec![vec![0.5, 0.5]]]);
        let (_, records) = compute_all(&e).unwrap();
        assert_eq!(records[0].u_match, 0.0);
        assert_eq!(records[0].single_topic_targets, 1);
    }

    #[test]
    fn binary_sidecar_roundtrip() {
        let e = ensemble_of(vec![
            vec![vec![0.2, 0.8], vec![0.6, 0.4]],
            vec![vec![0.1, 0.9], vec![0.7, 0.3]],
        ]);
        let sim = SimilarityMatrix::compute(&e).unwrap();
        let mut buf = Vec::new();
        sim.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], SIMILARITY_MAGIC);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 4);
        assert_eq!(buf.len(), 16 + 16 * 8);
        let back = SimilarityMatrix::read_binary(&buf[..], sim.refs.clone()).unwrap();
        assert_eq!(back, sim);
        assert!(SimilarityMatrix::read_binary(&buf[..], sim.refs[..2].to_vec()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SimilarityMatrix::read_binary(&bad[..], sim.refs.clone()).is_err());
    }

    #[test]
    fn csv_header() {
        let r = UncertaintyRecord {
            topic: TopicRef::new(1, 2),
            u_match: 0.5,
            u_exist: 0.25,
            degenerate_matches: 0,
            single_topic_targets: 0,
        };
        assert_eq!(
            records_to_csv(&[r]),
            "model_index,topic_index,u_match,u_exist\n1,2,0.5,0.25\n"
        );
    }
}
