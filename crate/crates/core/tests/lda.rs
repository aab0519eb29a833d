use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicscope_core::corpus::{Corpus, DocTermMatrix, Document, PreprocessConfig};
use topicscope_core::lda::{log_likelihood, train, GibbsSampler, LdaConfig};
use topicscope_core::synthbench::{generate_corpus, SyntheticSpec};

/// 25 pure documents over terms 0..half and 25 over half..2*half.
fn two_vocabularies(seed: u64, half: usize, len: usize) -> DocTermMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<(usize, u32)>> = (0..50)
        .map(|d| {
            let offset = if d < 25 { 0 } else { half };
            let mut counts = vec![0u32; half];
            for _ in 0..len {
                counts[rng.random_range(0..half)] += 1;
            }
            counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .map(|(w, c)| (w + offset, c))
                .collect()
        })
        .collect();
    DocTermMatrix::from_rows((0..50).map(|d| format!("d{d}")).collect(), rows, 2 * half).unwrap()
}

#[test]
fn single_topic_closed_form() {
    let m = two_vocabularies(1, 10, 30);
    let cfg = LdaConfig::new(1).with_iterations(5).with_seed(9);
    let model = train(&m, cfg).unwrap();
    let n = m.total() as f64;
    let v = m.n_terms() as f64;
    for w in 0..m.n_terms() {
        let nw: f64 = (0..m.n_docs()).map(|d| m.get(d, w) as f64).sum();
        assert_eq!(model.phi[0][w], (nw + cfg.beta) / (n + v * cfg.beta));
    }
    assert!(model.theta().unwrap().iter().all(|row| row == &[1.0]));
}

#[test]
fn counts_conserved_after_every_sweep() {
    let m = two_vocabularies(2, 15, 40);
    let mut s = GibbsSampler::new(&m, LdaConfig::new(4).with_seed(3)).unwrap();
    for _ in 0..50 {
        s.sweep();
        s.check_counts().unwrap();
    }
}

#[test]
fn disjoint_vocabularies_separate() {
    let half = 100;
    let start = Instant::now();
    let separated = (0..20u64)
        .filter(|&seed| {
            let m = two_vocabularies(seed, half, 80);
            let model = train(&m, LdaConfig::new(2).with_iterations(500).with_seed(seed)).unwrap();
            // Some(true) when a topic's top terms all come from the first half
            let side = |t: usize| {
                let top = model.top_terms(t, 10);
                if top.iter().all(|&w| w < half) {
                    Some(true)
                } else if top.iter().all(|&w| w >= half) {
                    Some(false)
                } else {
                    None
                }
            };
            let (a, b) = (side(0), side(1));
            a.is_some() && b.is_some() && a != b
        })
        .count();
    assert!(separated >= 19, "{separated}/20");
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn fixed_seed_is_bit_identical() {
    let cfg = PreprocessConfig::default();
    let docs = vec![
        Document::new("1", "", "geist seele geist welt"),
        Document::new("2", "", "seele natur natur"),
        Document::new("3", "", "welt geist kunst"),
        Document::new("4", "", "kunst natur seele seele"),
        Document::new("5", "", "geist geist welt natur"),
    ];
    let corpus = Corpus::build(docs, &cfg, 1).unwrap();
    let cfg = LdaConfig::new(2).with_iterations(100).with_seed(42);
    let a = train(&corpus.matrix, cfg).unwrap();
    let b = train(&corpus.matrix, cfg).unwrap();
    assert_eq!(a, b);
    let c = train(&corpus.matrix, cfg.with_seed(43)).unwrap();
    assert_ne!(a.theta, c.theta);
}

#[test]
fn trained_model_beats_random_initialization() {
    let synth = generate_corpus(&SyntheticSpec {
        docs: 60,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let corpus = synth.build().unwrap();
    let wins = (0..20u64)
        .filter(|&seed| {
            let cfg = LdaConfig::new(10).with_iterations(200).with_seed(seed);
            let random = GibbsSampler::new(&corpus.matrix, cfg).unwrap().to_model(0);
            let trained = train(&corpus.matrix, cfg).unwrap();
            let lr = log_likelihood(&random, &corpus.matrix).unwrap();
            let lt = log_likelihood(&trained, &corpus.matrix).unwrap();
            assert!(lr.is_finite() && lt.is_finite() && lt <= 0.0);
            lt >= lr
        })
        .count();
    assert!(wins >= 19, "{wins}/20");
}

#[test]
fn few_terms_carry_each_topic() {
    let synth = generate_corpus(&SyntheticSpec::default()).unwrap();
    let corpus = synth.build().unwrap();
    let model = train(&corpus.matrix, LdaConfig::new(10).with_iterations(300).with_seed(5)).unwrap();
    for t in 0..model.k() {
        let mass: f64 = model.top_terms(t, 50).iter().map(|&w| model.phi[t][w]).sum();
        assert!(mass >= 0.5, "topic {t}: {mass}");
    }
}
