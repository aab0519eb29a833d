//! Exact t-SNE over a precomputed topic distance matrix.
//!
//! Distances are `1 - cosine similarity` and enter the Gaussian kernel as
//! given, i.e. `p_{j|i} ∝ exp(-beta_i * d_ij)`, the same way a precomputed
//! metric is treated by common t-SNE libraries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::TopicRef;
use crate::error::{Error, Result};
use crate::metrics::SimilarityMatrix;

/// Bisection stops once the row entropy is this close to `log2(perplexity)`.
pub const ENTROPY_TOLERANCE: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 50;
const SYMMETRY_TOLERANCE: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Number of initial iterations run with exaggerated affinities.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Standard deviation of the Gaussian initial layout.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_scale: 1e-4,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn with_perplexity(mut self, perplexity: f64) -> Self {
        self.perplexity = perplexity;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_learning_rate(mut self, learning_rate: f64) -> Self {
        self.learning_rate = learning_rate;
        self
    }

    /// Checks the configuration against a point count. The perplexity may
    /// be at most `(n - 1) / 3`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::invalid(format!("t-SNE needs at least 4 points, got {n}")));
        }
        if !(self.perplexity.is_finite() && self.perplexity >= 1.0) {
            return Err(Error::invalid(format!(
                "perplexity must be at least 1, got {}",
                self.perplexity
            )));
        }
        if 3.0 * self.perplexity > (n - 1) as f64 {
            return Err(Error::invalid(format!(
                "perplexity {} is too large for {n} points (at most {})",
                self.perplexity,
                (n - 1) as f64 / 3.0
            )));
        }
        let positive = [
            self.learning_rate,
            self.early_exaggeration,
            self.initial_momentum,
            self.final_momentum,
            self.init_scale,
        ];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) || self.iterations == 0 {
            return Err(Error::invalid("optimizer settings must be positive"));
        }
        Ok(())
    }
}

/// Square distance matrix with row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub refs: Vec<TopicRef>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Rows are labelled `0/0, 0/1, ...` when no topic refs apply.
    pub fn new(values: Vec<f64>, n: usize) -> Result<Self> {
        Self::with_refs((0..n).map(|i| TopicRef::new(0, i)).collect(), values)
    }

    pub fn with_refs(refs: Vec<TopicRef>, values: Vec<f64>) -> Result<Self> {
        let n = refs.len();
        if values.len() != n * n {
            return Err(Error::dimension(format!(
                "{} values for a {n}x{n} matrix",
                values.len()
            )));
        }
        Ok(DistanceMatrix { refs, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dimension("distance matrix is not square"));
        }
        Self::new(rows.concat(), n)
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(Error::invalid(format!(
                    "distance matrix diagonal entry {i} is not zero"
                )));
            }
            for j in 0..n {
                let d = self.get(i, j);
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::invalid(format!(
                        "distance ({i},{j}) = {d} is not a nonnegative number"
                    )));
                }
                if (d - self.get(j, i)).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::invalid(format!("distance matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }
}

/// `d_ij = 1 - S_ij`, with an exact zero diagonal.
pub fn similarity_to_distance(sim: &SimilarityMatrix) -> DistanceMatrix {
    let n = sim.len();
    let mut values: Vec<f64> = sim.values().iter().map(|s| (1.0 - s).max(0.0)).collect();
    for i in 0..n {
        values[i * n + i] = 0.0;
    }
    DistanceMatrix {
        refs: sim.refs.clone(),
        values,
    }
}

/// Per-row conditional affinities `p_{j|i}` and the achieved entropies.
#[derive(Debug, Clone)]
pub struct ConditionalAffinities {
    pub n: usize,
    /// Row-major, zero diagonal, each row sums to one.
    pub values: Vec<f64>,
    pub precisions: Vec<f64>,
    /// Entropy of each row in bits.
    pub entropies: Vec<f64>,
}

/// Gaussian row entropy (bits) and probabilities for precision `beta`.
fn row_distribution(distances: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = distances
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, &d) in distances.iter().enumerate() {
        out[j] = if j == i { 0.0 } else { (-(d - min) * beta).exp() };
        sum += out[j];
    }
    let mut weighted = 0.0;
    for (j, p) in out.iter_mut().enumerate() {
        *p /= sum;
        if j != i {
            weighted += *p * (distances[j] - min);
        }
    }
    // H = ln(sum) + beta * E[d - min], converted to bits
    (sum.ln() + beta * weighted) / std::f64::consts::LN_2
}

/// Finds per-row kernel precisions matching `perplexity` by bisection.
pub fn conditional_affinities(distances: &DistanceMatrix, perplexity: f64) -> ConditionalAffinities {
    let n = distances.len();
    let target = perplexity.log2();
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = distances.row(i);
            let mut p = vec![0.0; n];
            let mut beta = 1.0;
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut h = row_distribution(d, i, beta, &mut p);
            for _ in 0..MAX_BISECTION_STEPS {
                let diff = h - target;
                if diff.abs() <= ENTROPY_TOLERANCE {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_infinite() {
                        beta * 2.0
                    } else {
                        (beta + hi) / 2.0
                    };
                } else {
                    hi = beta;
                    beta = if lo.is_infinite() {
                        beta / 2.0
                    } else {
                        (beta + lo) / 2.0
                    };
                }
                h = row_distribution(d, i, beta, &mut p);
            }
            (p, beta, h)
        })
        .collect();
    let mut values = Vec::with_capacity(n * n);
    let mut precisions = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for (p, beta, h) in rows {
        values.extend(p);
        precisions.push(beta);
        entropies.push(h);
    }
    ConditionalAffinities {
        n,
        values,
        precisions,
        entropies,
    }
}

/// Symmetrized joint affinities `p_ij = (p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(cond: &ConditionalAffinities) -> Vec<f64> {
    let n = cond.n;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond.values[i * n + j] + cond.values[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

fn student_kernel(coords: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = coords.len();
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
            total += 2.0 * k;
        }
    }
    (num, total)
}

/// `KL(P || Q) = sum_{i != j} p_ij ln(p_ij / q_ij)` for the layout `coords`.
pub fn kl_objective(p: &[f64], coords: &[[f64; 2]]) -> f64 {
    let n = coords.len();
    let (num, total) = student_kernel(coords);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (num[i * n + j] / total).max(f64::MIN_POSITIVE);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Analytic gradient `4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|^2)^-1`.
pub fn kl_gradient(p: &[f64], coords: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = coords.len();
    let (num, total) = student_kernel(coords);
    (0..n)
        .map(|i| {
            let mut g = [0.0, 0.0];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = num[i * n + j];
                let mult = (p[i * n + j] - k / total) * k;
                g[0] += mult * (coords[i][0] - coords[j][0]);
                g[1] += mult * (coords[i][1] - coords[j][1]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub refs: Vec<TopicRef>,
    pub coords: Vec<[f64; 2]>,
    pub initial_kl: f64,
    pub final_kl: f64,
}

impl Embedding {
    pub fn coord(&self, r: TopicRef) -> Option<[f64; 2]> {
        self.refs.iter().position(|&x| x == r).map(|i| self.coords[i])
    }

    /// CSV with columns `model_index,topic_index,x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_index,topic_index,x,y\n");
        for (r, c) in self.refs.iter().zip(&self.coords) {
            out.push_str(&format!("{},{},{},{}\n", r.model, r.topic, c[0], c[1]));
        }
        out
    }
}

fn center(coords: &mut [[f64; 2]]) {
    let n = coords.len() as f64;
    let mx = coords.iter().map(|c| c[0]).sum::<f64>() / n;
    let my = coords.iter().map(|c| c[1]).sum::<f64>() / n;
    for c in coords.iter_mut() {
        c[0] -= mx;
        c[1] -= my;
    }
}

pub fn initial_layout(n: usize, config: &EmbeddingConfig) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_scale).expect("init scale is validated positive");
    (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect()
}

/// Gradient descent with momentum, per-coordinate gains and early
/// exaggeration. The returned layout is mean-centered.
pub fn tsne(distances: &DistanceMatrix, config: &EmbeddingConfig) -> Result<Embedding> {
    let n = distances.len();
    config.validate(n)?;
    distances.validate()?;

    let cond = conditional_affinities(distances, config.perplexity);
    let p = joint_affinities(&cond);
    let mut coords = initial_layout(n, config);
    let initial_kl = kl_objective(&p, &coords);

    let mut p_run: Vec<f64> = p.iter().map(|x| x * config.early_exaggeration).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    for iter in 0..config.iterations {
        if iter == config.exaggeration_iterations {
            p_run.copy_from_slice(&p);
        }
        let momentum = if iter < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let grad = kl_gradient(&p_run, &coords);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (velocity[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(MIN_GAIN)
                };
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * g;
                coords[i][d] += velocity[i][d];
            }
        }
        center(&mut coords);
    }
    let final_kl = kl_objective(&p, &coords);
    if coords.iter().any(|c| !(c[0].is_finite() && c[1].is_finite())) {
        return Err(Error::invalid("t-SNE diverged"));
    }
    Ok(Embedding {
        refs: distances.refs.clone(),
        coords,
        initial_kl,
        final_kl,
    })
}

/// Embeds every topic of a similarity matrix.
pub fn embed(sim: &SimilarityMatrix, config: &EmbeddingConfig) -> Result<Embedding> {
    tsne(&similarity_to_distance(sim), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pairs() -> DistanceMatrix {
        DistanceMatrix::from_rows(&[
            vec![0.0, 0.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    #[test]
    fn distance_conversion() {
        let refs = vec![TopicRef::new(0, 0), TopicRef::new(1, 0)];
        let sim = SimilarityMatrix::from_values(refs, vec![1.0, 0.25, 0.25, 1.0]).unwrap();
        let d = similarity_to_distance(&sim);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(0, 1), 0.75);
        assert_eq!(d.get(0, 1), d.get(1, 0));
        let sim =
            SimilarityMatrix::from_values(vec![TopicRef::new(0, 0), TopicRef::new(1, 0)], vec![1.0, 0.0, 0.0, 1.0])
                .unwrap();
        assert_eq!(similarity_to_distance(&sim).get(1, 0), 1.0);
    }

    // four points cannot absorb the default step size under 12x exaggeration
    fn tiny() -> EmbeddingConfig {
        EmbeddingConfig::default().with_perplexity(1.0).with_learning_rate(1.0)
    }

    #[test]
    fn two_identical_pairs_separate() {
        for seed in 0..10 {
            let e = tsne(&two_pairs(), &tiny().with_seed(seed)).unwrap();
            let c = &e.coords;
            let within = dist(c[0], c[1]).max(dist(c[2], c[3]));
            for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
                assert!(within < dist(c[i], c[j]), "seed {seed}");
            }
            assert!(e.final_kl <= e.initial_kl);
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let cfg = tiny().with_iterations(200).with_seed(11);
        assert_eq!(tsne(&two_pairs(), &cfg).unwrap(), tsne(&two_pairs(), &cfg).unwrap());
    }

    #[test]
    fn output_is_centered() {
        let e = tsne(&two_pairs(), &tiny()).unwrap();
        let mx: f64 = e.coords.iter().map(|c| c[0]).sum();
        let my: f64 = e.coords.iter().map(|c| c[1]).sum();
        assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = EmbeddingConfig::default();
        // perplexity 30 with 4 points
        assert!(tsne(&two_pairs(), &cfg).is_err());
        let cfg = cfg.with_perplexity(1.0);
        let asym = DistanceMatrix::from_rows(&[
            vec![0.0, 0.5, 1.0, 1.0],
            vec![0.4, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!(tsne(&asym, &cfg).is_err());
        let small = DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(tsne(&small, &cfg).is_err());
        assert!(DistanceMatrix::from_rows(&[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn equilateral_objective_matches_hand_sum() {
        // uniform P over the 6 ordered pairs; all q_ij equal too, so KL = 0
        let p = vec![
            0.0,
            1.0 / 6.0,
            1.0 / 6.0,
            1.0 / 6.0,
            0.0,
            1.0 / 6.0,
            1.0 / 6.0,
            1.0 / 6.0,
            0.0,
        ];
        let h = 3f64.sqrt() / 2.0;
        let coords = [[0.0, 0.0], [1.0, 0.0], [0.5, h]];
        assert!(kl_objective(&p, &coords).abs() < 1e-15);
        // skewed P against the same layout: sum p ln(p / (1/6))
        let p = vec![0.0, 0.25, 0.125, 0.25, 0.0, 0.125, 0.125, 0.125, 0.0];
        let expected = 2.0 * 0.25 * (0.25f64 * 6.0).ln() + 4.0 * 0.125 * (0.125f64 * 6.0).ln();
        assert!((kl_objective(&p, &coords) - expected).abs() < 1e-14);
    }
}
