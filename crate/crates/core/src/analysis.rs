//! Analyst-side computations over a finished ensemble: topic groups and
//! their completeness, stability classes, filters, convex hulls and summary
//! statistics.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::ensemble::{Ensemble, TopicRef};
use crate::error::{Error, Result};
use crate::metrics::{Measure, SimilarityMatrix, UncertaintyRecord};

pub const DEFAULT_TOP_N: usize = 10;

/// Fraction of ensemble members represented among `members`.
pub fn completeness<'a>(members: impl IntoIterator<Item = &'a TopicRef>, ensemble_size: usize) -> Result<f64> {
    let models: HashSet<usize> = members.into_iter().map(|r| r.model).collect();
    if models.is_empty() {
        return Err(Error::invalid("group has no members"));
    }
    if ensemble_size == 0 {
        return Err(Error::invalid("ensemble is empty"));
    }
    Ok(models.len() as f64 / ensemble_size as f64)
}

/// A labelled cluster of topics drawn by the analyst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicGroup {
    pub id: u64,
    pub label: String,
    pub members: BTreeSet<TopicRef>,
    pub completeness: f64,
    pub hull: Vec<[f64; 2]>,
}

impl TopicGroup {
    /// Validates the members against the ensemble and derives completeness
    /// and the hull of the members' layout positions.
    pub fn new(
        id: u64,
        label: impl Into<String>,
        members: BTreeSet<TopicRef>,
        ensemble: &Ensemble,
        embedding: &Embedding,
    ) -> Result<Self> {
        for &r in &members {
            ensemble.check(r)?;
        }
        let completeness = completeness(&members, ensemble.len())?;
        let points = members
            .iter()
            .map(|&r| {
                embedding.coord(r).ok_or(Error::UnknownTopic {
                    model: r.model,
                    topic: r.topic,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TopicGroup {
            id,
            label: label.into(),
            members,
            completeness,
            hull: convex_hull(&points)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    Grey,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Topics strictly below are stable.
    pub stable_below: f64,
    /// Topics strictly above are unstable.
    pub unstable_above: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            stable_below: 0.3,
            unstable_above: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.stable_below)
            || !(0.0..=1.0).contains(&self.unstable_above)
            || self.stable_below > self.unstable_above
        {
            return Err(Error::invalid("thresholds must be ordered values in [0, 1]"));
        }
        Ok(())
    }

    pub fn classify(&self, u: f64) -> StabilityClass {
        if u < self.stable_below {
            StabilityClass::Stable
        } else if u > self.unstable_above {
            StabilityClass::Unstable
        } else {
            StabilityClass::Grey
        }
    }
}

pub fn classify_stability(
    records: &[UncertaintyRecord],
    measure: Measure,
    thresholds: Thresholds,
) -> Result<Vec<StabilityClass>> {
    thresholds.validate()?;
    Ok(records.iter().map(|r| thresholds.classify(r.value(measure))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBound {
    pub measure: Measure,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl UncertaintyBound {
    /// `min` is inclusive, `max` exclusive, so `max = 0.3` selects exactly
    /// the stable topics.
    pub fn admits(&self, u: f64) -> bool {
        self.min.is_none_or(|m| u >= m) && self.max.is_none_or(|m| u < m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityFilter {
    pub anchor: TopicRef,
    #[serde(default)]
    pub min_similarity: f64,
    /// Keep only the most similar topic of each other member.
    #[serde(default)]
    pub best_per_model: bool,
}

/// Conjunction of optional topic criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    #[serde(default)]
    pub selected: Option<BTreeSet<TopicRef>>,
    /// Every listed term must be among the topic's `top_n` terms.
    #[serde(default)]
    pub terms: Option<Vec<String>>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default)]
    pub uncertainty: Vec<UncertaintyBound>,
    #[serde(default)]
    pub similar_to: Option<SimilarityFilter>,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            selected: None,
            terms: None,
            top_n: DEFAULT_TOP_N,
            uncertainty: Vec::new(),
            similar_to: None,
        }
    }
}

impl FilterSpec {
    pub fn is_empty(&self) -> bool {
        self.selected.is_none() && self.terms.is_none() && self.uncertainty.is_empty() && self.similar_to.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("filter has no criteria"));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        for b in &self.uncertainty {
            if b.min.is_some_and(|m| !unit(m)) || b.max.is_some_and(|m| !unit(m)) {
                return Err(Error::invalid("uncertainty thresholds must lie in [0, 1]"));
            }
        }
        if let Some(s) = &self.similar_to {
            if !unit(s.min_similarity) {
                return Err(Error::invalid("similarity threshold must lie in [0, 1]"));
            }
        }
        if self.top_n == 0 {
            return Err(Error::invalid("top_n must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub refs: Vec<TopicRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Applies every active criterion of `spec`; the result is sorted.
pub fn apply_filter(
    spec: &FilterSpec,
    ensemble: &Ensemble,
    records: &[UncertaintyRecord],
    sim: &SimilarityMatrix,
) -> Result<FilterResult> {
    spec.validate()?;
    let mut warnings = Vec::new();
    let mut keep: BTreeSet<TopicRef> = ensemble.refs().into_iter().collect();

    if let Some(selected) = &spec.selected {
        for &r in selected {
            ensemble.check(r)?;
        }
        keep.retain(|r| selected.contains(r));
    }

    if let Some(terms) = &spec.terms {
        let mut ids = Vec::with_capacity(terms.len());
        for term in terms {
            match ensemble.vocabulary.lookup(term) {
                Some(id) => ids.push(id),
                None => warnings.push(format!("unknown term {term:?}")),
            }
        }
        if ids.len() < terms.len() {
            keep.clear();
        } else {
            keep.retain(|r| {
                let top = ensemble.members[r.model].top_terms(r.topic, spec.top_n);
                ids.iter().all(|id| top.contains(id))
            });
        }
    }

    if !spec.uncertainty.is_empty() {
        let by_ref: std::collections::HashMap<TopicRef, &UncertaintyRecord> =
            records.iter().map(|r| (r.topic, r)).collect();
        keep.retain(|r| {
            by_ref
                .get(r)
                .is_some_and(|rec| spec.uncertainty.iter().all(|b| b.admits(rec.value(b.measure))))
        });
    }

    if let Some(f) = &spec.similar_to {
        let similar: BTreeSet<TopicRef> = similar_topics(f, ensemble, sim)?.into_iter().map(|(r, _)| r).collect();
        keep.retain(|r| similar.contains(r));
    }

    Ok(FilterResult {
        refs: keep.into_iter().collect(),
        warnings,
    })
}

/// Topics similar to the anchor (the anchor itself excluded), sorted by
/// descending similarity.
pub fn similar_topics(
    filter: &SimilarityFilter,
    ensemble: &Ensemble,
    sim: &SimilarityMatrix,
) -> Result<Vec<(TopicRef, f64)>> {
    ensemble.check(filter.anchor)?;
    let mut hits: Vec<(TopicRef, f64)> = if filter.best_per_model {
        (0..ensemble.len())
            .filter(|&m| m != filter.anchor.model)
            .map(|m| {
                let row = sim.against_model(filter.anchor, m)?;
                // first maximum wins ties
                let (t, s) =
                    row.iter().enumerate().fold(
                        (0, f64::NEG_INFINITY),
                        |best, (t, &s)| if s > best.1 { (t, s) } else { best },
                    );
                Ok((TopicRef::new(m, t), s))
            })
            .collect::<Result<_>>()?
    } else {
        ensemble
            .refs()
            .into_iter()
            .filter(|&r| r != filter.anchor)
            .map(|r| Ok((r, sim.between(filter.anchor, r)?)))
            .collect::<Result<_>>()?
    };
    hits.retain(|&(_, s)| s >= filter.min_similarity);
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(hits)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain. Counter-clockwise, collinear points dropped; a
/// single distinct point gives one vertex and collinear input a segment.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    if points.is_empty() {
        return Err(Error::invalid("convex hull of no points"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Ok(pts);
    }
    let mut lower: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 2 {
        // all points collinear collapse to the two extremes
        return Ok(vec![pts[0], pts[pts.len() - 1]]);
    }
    Ok(lower)
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(polygon: &[[f64; 2]]) -> f64 {
    let n = polygon.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let a = polygon[i];
            let b = polygon[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

/// Whether `p` lies inside or on a counter-clockwise hull, up to `eps`.
pub fn hull_contains(hull: &[[f64; 2]], p: [f64; 2], eps: f64) -> bool {
    match hull.len() {
        0 => false,
        1 => (hull[0][0] - p[0]).abs() <= eps && (hull[0][1] - p[1]).abs() <= eps,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let off_line = cross(a, b, p).abs() / len.max(f64::MIN_POSITIVE);
            let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
            off_line <= eps && (-eps..=1.0 + eps).contains(&t)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= -eps),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dimension("correlation inputs differ in length"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first variable"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second variable"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties receiving the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
}

/// Correlation between matching and existence uncertainty across topics.
pub fn correlation(records: &[UncertaintyRecord]) -> Result<Correlation> {
    if records.len() < 3 {
        return Err(Error::invalid("correlation needs at least 3 records"));
    }
    let um: Vec<f64> = records.iter().map(|r| r.u_match).collect();
    let ue: Vec<f64> = records.iter().map(|r| r.u_exist).collect();
    Ok(Correlation {
        pearson: pearson(&um, &ue)?,
        spearman: spearman(&um, &ue)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub mean: f64,
    pub median: f64,
    pub stable: usize,
    pub grey: usize,
    pub unstable: usize,
}

impl MeasureSummary {
    pub fn of(values: &[f64], thresholds: Thresholds) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("summary of no values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let mut summary = MeasureSummary {
            mean: mean(values),
            median,
            stable: 0,
            grey: 0,
            unstable: 0,
        };
        for &u in values {
            match thresholds.classify(u) {
                StabilityClass::Stable => summary.stable += 1,
                StabilityClass::Grey => summary.grey += 1,
                StabilityClass::Unstable => summary.unstable += 1,
            }
        }
        Ok(summary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub topics: usize,
    pub thresholds: Thresholds,
    pub u_match: MeasureSummary,
    pub u_exist: MeasureSummary,
}

pub fn ensemble_summary(records: &[UncertaintyRecord], thresholds: Thresholds) -> Result<EnsembleSummary> {
    thresholds.validate()?;
    let um: Vec<f64> = records.iter().map(|r| r.u_match).collect();
    let ue: Vec<f64> = records.iter().map(|r| r.u_exist).collect();
    Ok(EnsembleSummary {
        topics: records.len(),
        thresholds,
        u_match: MeasureSummary::of(&um, thresholds)?,
        u_exist: MeasureSummary::of(&ue, thresholds)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    #[serde(rename = "ref")]
    pub topic: TopicRef,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub terms: Vec<String>,
    pub rows: Vec<HeatmapRow>,
}

/// Columns are the union of each topic's top-`top_n` terms, ordered by mean
/// probability over the selected topics (descending, ties by term id).
pub fn heatmap(refs: &[TopicRef], ensemble: &Ensemble, top_n: usize) -> Result<Heatmap> {
    for &r in refs {
        ensemble.check(r)?;
    }
    let columns: BTreeSet<usize> = refs
        .iter()
        .flat_map(|r| ensemble.members[r.model].top_terms(r.topic, top_n))
        .collect();
    let mut columns: Vec<(usize, f64)> = columns
        .into_iter()
        .map(|w| {
            let total: f64 = refs.iter().map(|&r| ensemble.phi(r)[w]).sum();
            (w, total / refs.len().max(1) as f64)
        })
        .collect();
    columns.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Heatmap {
        terms: columns
            .iter()
            .map(|&(w, _)| ensemble.vocabulary.terms()[w].clone())
            .collect(),
        rows: refs
            .iter()
            .map(|&r| HeatmapRow {
                topic: r,
                values: columns.iter().map(|&(w, _)| ensemble.phi(r)[w]).collect(),
            })
            .collect(),
    })
}
