//! Topic-model ensembles: generation under sampling or model variation, and
//! import/export of MALLET output files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocTermMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::lda::{self, LdaConfig, TopicModel};

/// Identifies topic `topic_index` of ensemble member `model_index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TopicRef {
    #[serde(rename = "model_index")]
    pub model: usize,
    #[serde(rename = "topic_index")]
    pub topic: usize,
}

impl TopicRef {
    pub fn new(model: usize, topic: usize) -> Self {
        TopicRef { model, topic }
    }
}

impl fmt::Display for TopicRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.model, self.topic)
    }
}

impl FromStr for TopicRef {
    type Err = Error;

    /// Accepts `m/t`, `m:t` or `m,t`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(['/', ':', ',']);
        let parse = |p: Option<&str>| -> Result<usize> {
            p.map(str::trim)
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| Error::invalid(format!("malformed topic reference {s:?}")))
        };
        let model = parse(parts.next())?;
        let topic = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::invalid(format!("malformed topic reference {s:?}")));
        }
        Ok(TopicRef { model, topic })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Same parameters, different seeds.
    Sampling,
    VaryAlpha,
    VaryBeta,
    VaryK,
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampling" => Ok(EnsembleMode::Sampling),
            "vary_alpha" | "vary-alpha" => Ok(EnsembleMode::VaryAlpha),
            "vary_beta" | "vary-beta" => Ok(EnsembleMode::VaryBeta),
            "vary_k" | "vary-k" => Ok(EnsembleMode::VaryK),
            other => Err(Error::invalid(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

/// How to build an ensemble.
///
/// In `vary_k` mode the base alpha is read as a multiple of `1/k`, so the
/// default `5/k` tracks each member's topic count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub mode: EnsembleMode,
    pub base_config: LdaConfig,
    pub members: usize,
    #[serde(default)]
    pub parameter_values: Vec<f64>,
    /// Member `i` uses `base_config.seed + i` unless pinned.
    #[serde(default)]
    pub pin_seed: bool,
}

impl EnsembleSpec {
    pub fn sampling(base_config: LdaConfig, members: usize) -> Self {
        EnsembleSpec {
            mode: EnsembleMode::Sampling,
            base_config,
            members,
            parameter_values: Vec::new(),
            pin_seed: false,
        }
    }

    pub fn varying(mode: EnsembleMode, base_config: LdaConfig, parameter_values: Vec<f64>) -> Self {
        EnsembleSpec {
            mode,
            base_config,
            members: parameter_values.len(),
            parameter_values,
            pin_seed: false,
        }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.base_config.iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_config.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base_config.validate()?;
        if self.members < 2 {
            return Err(Error::invalid("an ensemble needs at least 2 members"));
        }
        if self.mode == EnsembleMode::Sampling {
            return Ok(());
        }
        if self.parameter_values.len() != self.members {
            return Err(Error::invalid(format!(
                "{} parameter values for {} members",
                self.parameter_values.len(),
                self.members
            )));
        }
        if self.parameter_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("parameter values must be strictly increasing"));
        }
        for &v in &self.parameter_values {
            let ok = match self.mode {
                EnsembleMode::VaryK => v >= 1.0 && v.fract() == 0.0,
                _ => v.is_finite() && v > 0.0,
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "invalid parameter value {v} for {:?}",
                    self.mode
                )));
            }
        }
        Ok(())
    }

    /// Configuration of member `index`.
    pub fn member_config(&self, index: usize) -> LdaConfig {
        let base = self.base_config;
        let mut cfg = base;
        if !self.pin_seed {
            cfg.seed = base.seed.wrapping_add(index as u64);
        }
        match self.mode {
            EnsembleMode::Sampling => {}
            EnsembleMode::VaryAlpha => cfg.alpha = self.parameter_values[index],
            EnsembleMode::VaryBeta => cfg.beta = self.parameter_values[index],
            EnsembleMode::VaryK => {
                let k = self.parameter_values[index] as usize;
                cfg.alpha = base.alpha * base.k as f64 / k as f64;
                cfg.k = k;
            }
        }
        cfg
    }
}

/// Named ensemble configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    E1,
    /// Hyperparameter-optimized runs; only available by import.
    E2,
    E3,
    E4,
    E5,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(Preset::E1),
            "E2" => Ok(Preset::E2),
            "E3" => Ok(Preset::E3),
            "E4" => Ok(Preset::E4),
            "E5" => Ok(Preset::E5),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub const PRESET_MEMBERS: usize = 10;
pub const PRESET_K: usize = 20;

impl Preset {
    /// The preset's ensemble specification with `k = 20` and ten members.
    pub fn spec(self) -> Result<EnsembleSpec> {
        self.spec_with_k(PRESET_K)
    }

    /// Same as [`Preset::spec`] but with a different base topic count. For
    /// E5 the varied k values are unaffected.
    pub fn spec_with_k(self, k: usize) -> Result<EnsembleSpec> {
        let base = LdaConfig::new(k);
        let kf = k as f64;
        match self {
            Preset::E1 => Ok(EnsembleSpec::sampling(base, PRESET_MEMBERS)),
            Preset::E2 => Err(Error::invalid(
                "E2 uses hyperparameter optimization and can only be imported",
            )),
            Preset::E3 => Ok(EnsembleSpec::varying(
                EnsembleMode::VaryAlpha,
                base,
                logspace(0.5 / kf, 20.0 / kf, PRESET_MEMBERS),
            )),
            Preset::E4 => Ok(EnsembleSpec::varying(
                EnsembleMode::VaryBeta,
                base,
                linspace(0.01, 0.23, PRESET_MEMBERS),
            )),
            Preset::E5 => {
                let ks = linspace(20.0, 50.0, PRESET_MEMBERS)
                    .into_iter()
                    .map(f64::round)
                    .collect();
                Ok(EnsembleSpec::varying(EnsembleMode::VaryK, LdaConfig::new(PRESET_K), ks))
            }
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut values: Vec<f64> = linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect();
    // pin the endpoints exactly
    if let Some(first) = values.first_mut() {
        *first = lo;
    }
    if n > 1 {
        values[n - 1] = hi;
    }
    values
}

/// Where an ensemble came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleOrigin {
    Generated {
        spec: EnsembleSpec,
    },
    Imported {
        #[serde(default)]
        label: Option<String>,
        /// Weight assigned to terms a member's file does not list.
        smoothing_floors: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<TopicModel>,
    pub origin: EnsembleOrigin,
    pub vocabulary: Vocabulary,
}

impl Ensemble {
    pub fn new(members: Vec<TopicModel>, origin: EnsembleOrigin, vocabulary: Vocabulary) -> Result<Self> {
        let ensemble = Ensemble {
            members,
            origin,
            vocabulary,
        };
        ensemble.validate()?;
        Ok(ensemble)
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("ensemble has no members"));
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.n_terms() != self.vocabulary.len() {
                return Err(Error::dimension(format!(
                    "member {i} has {} terms, vocabulary {}",
                    m.n_terms(),
                    self.vocabulary.len()
                )));
            }
            m.validate()?;
        }
        if let EnsembleOrigin::Generated { spec } = &self.origin {
            if spec.members != self.members.len() {
                return Err(Error::invalid("member count differs from the ensemble spec"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total_topics(&self) -> usize {
        self.members.iter().map(TopicModel::k).sum()
    }

    /// All topic references in member-major order.
    pub fn refs(&self) -> Vec<TopicRef> {
        self.members
            .iter()
            .enumerate()
            .flat_map(|(m, model)| (0..model.k()).map(move |t| TopicRef::new(m, t)))
            .collect()
    }

    pub fn contains(&self, r: TopicRef) -> bool {
        self.members.get(r.model).is_some_and(|m| r.topic < m.k())
    }

    pub fn check(&self, r: TopicRef) -> Result<()> {
        if self.contains(r) {
            Ok(())
        } else {
            Err(Error::UnknownTopic {
                model: r.model,
                topic: r.topic,
            })
        }
    }

    pub fn phi(&self, r: TopicRef) -> &[f64] {
        self.members[r.model].topic(r.topic)
    }

    pub fn spec(&self) -> Option<&EnsembleSpec> {
        match &self.origin {
            EnsembleOrigin::Generated { spec } => Some(spec),
            EnsembleOrigin::Imported { .. } => None,
        }
    }
}

/// Trains every member of `spec` in parallel.
pub fn generate(matrix: &DocTermMatrix, vocabulary: &Vocabulary, spec: &EnsembleSpec) -> Result<Ensemble> {
    spec.validate()?;
    if matrix.n_terms() != vocabulary.len() {
        return Err(Error::dimension("matrix and vocabulary disagree on the term count"));
    }
    let members = (0..spec.members)
        .into_par_iter()
        .map(|i| lda::train_with_id(matrix, spec.member_config(i), i))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(
        members,
        EnsembleOrigin::Generated { spec: spec.clone() },
        vocabulary.clone(),
    )
}

/// Files produced by one MALLET run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalletMember {
    pub doc_topics: Option<PathBuf>,
    pub topic_word_weights: PathBuf,
}

struct ParsedWeights {
    topics: Vec<BTreeMap<String, f64>>,
    floor: f64,
}

fn parse_topic_word_weights(path: &Path) -> Result<ParsedWeights> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut topics: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    let mut floor = f64::INFINITY;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            file: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let topic: usize = cols[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("topic id {:?} is not an integer", cols[0])))?;
        let weight: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("weight {:?} is not a number", cols[2])))?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(parse_err(format!("weight {weight} is negative or not finite")));
        }
        let term = cols[1].to_string();
        if term.is_empty() {
            return Err(parse_err("empty term".into()));
        }
        floor = floor.min(weight);
        *topics.entry(topic).or_default().entry(term).or_insert(0.0) += weight;
    }
    let k = topics.len();
    if k == 0 {
        return Err(Error::Structure {
            file: path.to_path_buf(),
            message: "no topics found".into(),
        });
    }
    if topics.keys().copied().ne(0..k) {
        return Err(Error::Structure {
            file: path.to_path_buf(),
            message: format!("topic ids are not contiguous 0..{k}"),
        });
    }
    Ok(ParsedWeights {
        topics: topics.into_values().collect(),
        floor,
    })
}

struct ParsedDocTopics {
    doc_ids: Vec<String>,
    theta: Vec<Vec<f64>>,
}

/// Reads a doc-topics file, either one proportion column per topic or the
/// older sparse `topic proportion` pairs.
fn parse_doc_topics(path: &Path, k: usize) -> Result<ParsedDocTopics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            file: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let cols: Vec<&str> = line.split(['\t', ' ']).filter(|c| !c.is_empty()).collect();
        if cols.len() < 3 {
            return Err(parse_err(format!("expected at least 3 columns, found {}", cols.len())));
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(format!("document index {:?} is not an integer", cols[0])))?;
        let values = cols[2..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| parse_err(format!("{c:?} is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut row = vec![0.0; k];
        if values.len() == k {
            row = values;
        } else if values.len() % 2 == 0 {
            for pair in values.chunks(2) {
                let topic = pair[0];
                if topic < 0.0 || topic.fract() != 0.0 || topic as usize >= k {
                    return Err(Error::Structure {
                        file: path.to_path_buf(),
                        message: format!("line {}: topic {topic} outside 0..{k}", lineno + 1),
                    });
                }
                row[topic as usize] += pair[1];
            }
        } else {
            return Err(Error::Structure {
                file: path.to_path_buf(),
                message: format!(
                    "line {}: {} proportion columns match neither {k} topics nor topic/proportion pairs",
                    lineno + 1,
                    values.len()
                ),
            });
        }
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(parse_err("negative or non-finite proportion".into()));
        }
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(parse_err("proportions sum to zero".into()));
        }
        row.iter_mut().for_each(|p| *p /= sum);
        if rows.insert(index, (cols[1].to_string(), row)).is_some() {
            return Err(parse_err(format!("duplicate document index {index}")));
        }
    }
    let (doc_ids, theta) = rows.into_values().unzip();
    Ok(ParsedDocTopics { doc_ids, theta })
}

/// Imports one ensemble member per MALLET run.
///
/// The vocabulary is the sorted union of terms across all weight files. A
/// term a file does not list for some topic receives that file's smallest
/// listed weight (MALLET writes `beta + count`, so this is the beta
/// baseline; zero when the file lists zeros) before normalization.
pub fn import_mallet(members: &[MalletMember]) -> Result<Ensemble> {
    if members.is_empty() {
        return Err(Error::invalid("no MALLET files given"));
    }
    let parsed = members
        .iter()
        .map(|m| parse_topic_word_weights(&m.topic_word_weights))
        .collect::<Result<Vec<_>>>()?;
    let terms: BTreeSet<&String> = parsed
        .iter()
        .flat_map(|p| p.topics.iter().flat_map(|t| t.keys()))
        .collect();
    let vocabulary = Vocabulary::from(terms.into_iter().cloned().collect::<Vec<_>>());

    let mut models = Vec::with_capacity(members.len());
    let mut floors = Vec::with_capacity(members.len());
    for (i, (files, weights)) in members.iter().zip(&parsed).enumerate() {
        let phi = weights
            .topics
            .iter()
            .enumerate()
            .map(|(t, listed)| {
                let mut row: Vec<f64> = vocabulary
                    .terms()
                    .iter()
                    .map(|term| listed.get(term).copied().unwrap_or(weights.floor))
                    .collect();
                let sum: f64 = row.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::Structure {
                        file: files.topic_word_weights.clone(),
                        message: format!("topic {t} has zero total weight"),
                    });
                }
                row.iter_mut().for_each(|x| *x /= sum);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let (doc_ids, theta) = match &files.doc_topics {
            Some(path) => {
                let dt = parse_doc_topics(path, phi.len())?;
                (dt.doc_ids, Some(dt.theta))
            }
            None => (Vec::new(), None),
        };
        floors.push(weights.floor);
        models.push(TopicModel {
            model_id: i,
            config: None,
            phi,
            theta,
            doc_ids,
        });
    }
    Ensemble::new(
        models,
        EnsembleOrigin::Imported {
            label: None,
            smoothing_floors: floors,
        },
        vocabulary,
    )
}

/// Writes each member as `member-<i>.doc-topics.txt` and
/// `member-<i>.topic-word-weights.txt` in `dir`.
pub fn export_mallet(ensemble: &Ensemble, dir: &Path) -> Result<Vec<MalletMember>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (i, model) in ensemble.members.iter().enumerate() {
        let weights_path = dir.join(format!("member-{i}.topic-word-weights.txt"));
        let mut out = String::new();
        for (t, row) in model.phi.iter().enumerate() {
            for (w, p) in row.iter().enumerate() {
                out.push_str(&format!("{t}\t{}\t{p}\n", ensemble.vocabulary.terms()[w]));
            }
        }
        write_file(&weights_path, &out)?;

        let doc_topics = match &model.theta {
            Some(theta) => {
                let path = dir.join(format!("member-{i}.doc-topics.txt"));
                let mut out = String::from("#doc name topic proportion ...\n");
                for (d, row) in theta.iter().enumerate() {
                    out.push_str(&format!("{d}\t{}", model.doc_ids[d]));
                    for p in row {
                        out.push_str(&format!("\t{p}"));
                    }
                    out.push('\n');
                }
                write_file(&path, &out)?;
                Some(path)
            }
            None => None,
        };
        written.push(MalletMember {
            doc_topics,
            topic_word_weights: weights_path,
        });
    }
    Ok(written)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn topic_ref_parsing() {
        assert_eq!("3/4".parse::<TopicRef>().unwrap(), TopicRef::new(3, 4));
        assert_eq!("3:4".parse::<TopicRef>().unwrap(), TopicRef::new(3, 4));
        assert_eq!("3,4".parse::<TopicRef>().unwrap(), TopicRef::new(3, 4));
        assert!("3".parse::<TopicRef>().is_err());
        assert!("3/x".parse::<TopicRef>().is_err());
        assert!("1/2/3".parse::<TopicRef>().is_err());
    }

    #[test]
    fn preset_values() {
        let e1 = Preset::E1.spec().unwrap();
        assert_eq!(e1.mode, EnsembleMode::Sampling);
        assert_eq!(e1.members * e1.base_config.k, 200);
        assert_eq!(e1.base_config.alpha, 5.0 / 20.0);

        let e3 = Preset::E3.spec().unwrap();
        assert_eq!(e3.parameter_values.len(), 10);
        assert_eq!(e3.parameter_values[0], 0.5 / 20.0);
        assert_eq!(e3.parameter_values[9], 20.0 / 20.0);
        let ratios: Vec<f64> = e3.parameter_values.windows(2).map(|w| w[1] / w[0]).collect();
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-12);
        }

        let e4 = Preset::E4.spec().unwrap();
        assert!((e4.parameter_values[0] - 0.01).abs() < 1e-15);
        assert!((e4.parameter_values[9] - 0.23).abs() < 1e-15);

        let e5 = Preset::E5.spec().unwrap();
        assert_eq!(
            e5.parameter_values,
            vec![20.0, 23.0, 27.0, 30.0, 33.0, 37.0, 40.0, 43.0, 47.0, 50.0]
        );
        let cfg = e5.member_config(9);
        assert_eq!(cfg.k, 50);
        assert!((cfg.alpha - 5.0 / 50.0).abs() < 1e-15);

        assert!(Preset::E2.spec().is_err());
        for p in [Preset::E1, Preset::E3, Preset::E4, Preset::E5] {
            p.spec().unwrap().validate().unwrap();
        }
    }

    #[test]
    fn member_configs_differ_in_one_field() {
        for preset in [Preset::E3, Preset::E4, Preset::E5] {
            let spec = Preset::spec(preset).unwrap();
            let base = spec.member_config(0);
            for i in 1..spec.members {
                let cfg = spec.member_config(i);
                assert_eq!(cfg.seed, base.seed + i as u64);
                let diffs = [cfg.alpha != base.alpha, cfg.beta != base.beta, cfg.k != base.k];
                match spec.mode {
                    EnsembleMode::VaryAlpha => assert_eq!(diffs, [true, false, false]),
                    EnsembleMode::VaryBeta => assert_eq!(diffs, [false, true, false]),
                    // alpha follows k
                    EnsembleMode::VaryK => assert_eq!(diffs, [true, false, true]),
                    EnsembleMode::Sampling => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn spec_validation() {
        let base = LdaConfig::new(2);
        assert!(EnsembleSpec::sampling(base, 1).validate().is_err());
        let mut s = EnsembleSpec::varying(EnsembleMode::VaryBeta, base, vec![0.1, 0.2]);
        s.members = 3;
        assert!(s.validate().is_err());
        assert!(EnsembleSpec::varying(EnsembleMode::VaryBeta, base, vec![0.2, 0.1])
            .validate()
            .is_err());
        assert!(EnsembleSpec::varying(EnsembleMode::VaryK, base, vec![2.0, 2.5])
            .validate()
            .is_err());
    }

    #[test]
    fn generate_pinned_seed_gives_identical_members() {
        let vocab = Vocabulary::from(vec!["a".to_string(), "b".into(), "c".into()]);
        let m = DocTermMatrix::from_rows(
            vec!["x".into(), "y".into()],
            vec![vec![(0, 3), (1, 1)], vec![(1, 2), (2, 3)]],
            3,
        )
        .unwrap();
        let mut spec = EnsembleSpec::sampling(LdaConfig::new(2).with_iterations(20).with_seed(9), 2);
        spec.pin_seed = true;
        let e = generate(&m, &vocab, &spec).unwrap();
        assert_eq!(e.members[0].phi, e.members[1].phi);
        assert_eq!(e.members[0].theta, e.members[1].theta);
        assert_eq!(e.total_topics(), 4);
        assert_eq!(e.refs().len(), 4);
    }

    #[test]
    fn import_normalizes_weights() {
        let dir = tempfile::tempdir().unwrap();
        let w = write(
            dir.path(),
            "w.txt",
            "0\ta\t2\n0\tb\t1\n0\tc\t0\n1\ta\t0\n1\tb\t1\n1\tc\t2\n",
        );
        let dt = write(
            dir.path(),
            "dt.txt",
            "#doc name topic proportion\n0\tdoc1.txt\t0.7\t0.3\n",
        );
        let e = import_mallet(&[MalletMember {
            doc_topics: Some(dt),
            topic_word_weights: w,
        }])
        .unwrap();
        let phi = &e.members[0].phi;
        let expected = [[2.0 / 3.0, 1.0 / 3.0, 0.0], [0.0, 1.0 / 3.0, 2.0 / 3.0]];
        for t in 0..2 {
            for w in 0..3 {
                assert!((phi[t][w] - expected[t][w]).abs() < 1e-15);
            }
        }
        let theta = e.members[0].theta.as_ref().unwrap();
        assert!((theta[0][0] - 0.7).abs() < 1e-15 && (theta[0][1] - 0.3).abs() < 1e-15);
        assert_eq!(e.members[0].doc_ids, vec!["doc1.txt"]);
    }

    #[test]
    fn import_sparse_doc_topics() {
        let dir = tempfile::tempdir().unwrap();
        let w = write(dir.path(), "w.txt", "0\ta\t1\n1\tb\t1\n2\tc\t1\n");
        let dt = write(dir.path(), "dt.txt", "0\tx\t2\t0.6\t0\t0.4\n1\ty\t1\t1.0\n");
        let e = import_mallet(&[MalletMember {
            doc_topics: Some(dt),
            topic_word_weights: w,
        }])
        .unwrap();
        let theta = e.members[0].theta.as_ref().unwrap();
        assert_eq!(theta[0], vec![0.4, 0.0, 0.6]);
        assert_eq!(theta[1], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn import_union_vocabulary_uses_floor() {
        let dir = tempfile::tempdir().unwrap();
        let w0 = write(dir.path(), "w0.txt", "0\ta\t1.01\n0\tb\t0.01\n1\ta\t0.01\n1\tb\t2.01\n");
        let w1 = write(dir.path(), "w1.txt", "0\tb\t1\n0\tc\t1\n");
        let e = import_mallet(&[
            MalletMember {
                doc_topics: None,
                topic_word_weights: w0,
            },
            MalletMember {
                doc_topics: None,
                topic_word_weights: w1,
            },
        ])
        .unwrap();
        assert_eq!(e.vocabulary.terms(), ["a", "b", "c"]);
        // member 0 never lists "c": it gets the 0.01 baseline
        let row = &e.members[0].phi[0];
        assert!((row[2] - 0.01 / 1.03).abs() < 1e-15);
        match &e.origin {
            EnsembleOrigin::Imported { smoothing_floors, .. } => assert_eq!(smoothing_floors, &vec![0.01, 1.0]),
            _ => panic!(),
        }
        assert!(e.members[0].theta.is_none());
    }

    #[test]
    fn malformed_lines_report_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let w = write(dir.path(), "bad.txt", "0\ta\t1\n0\tb\tnope\n");
        let err = import_mallet(&[MalletMember {
            doc_topics: None,
            topic_word_weights: w.clone(),
        }])
        .unwrap_err();
        match err {
            Error::Parse { file, line, .. } => {
                assert_eq!(file, w);
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        let w = write(dir.path(), "cols.txt", "0\ta\n");
        assert!(matches!(
            import_mallet(&[MalletMember {
                doc_topics: None,
                topic_word_weights: w
            }]),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn inconsistent_topic_counts_are_structural() {
        let dir = tempfile::tempdir().unwrap();
        let gap = write(dir.path(), "gap.txt", "0\ta\t1\n2\ta\t1\n");
        assert!(matches!(
            import_mallet(&[MalletMember {
                doc_topics: None,
                topic_word_weights: gap
            }]),
            Err(Error::Structure { .. })
        ));
        let w = write(dir.path(), "w.txt", "0\ta\t1\n1\ta\t1\n2\ta\t1\n");
        let dt = write(dir.path(), "dt.txt", "0\tx\t0.5\t0.5\t0.0\n1\ty\t0.5\t0.5\t0.0\t0.1\n");
        assert!(matches!(
            import_mallet(&[MalletMember {
                doc_topics: Some(dt),
                topic_word_weights: w
            }]),
            Err(Error::Structure { .. })
        ));
    }
}
