use std::fs;
use std::path::PathBuf;

use topicscope_core::ensemble::{export_mallet, generate, import_mallet, EnsembleSpec, MalletMember};
use topicscope_core::lda::LdaConfig;
use topicscope_core::synthbench::{generate_corpus, SyntheticSpec};
use topicscope_core::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/mallet")
        .join(name)
}

fn member(stem: &str) -> MalletMember {
    MalletMember {
        doc_topics: Some(fixture(&format!("{stem}.doc-topics.txt"))),
        topic_word_weights: fixture(&format!("{stem}.topic-word-weights.txt")),
    }
}

fn assert_row(got: &[f64], raw: &[f64]) {
    let sum: f64 = raw.iter().sum();
    assert_eq!(got.len(), raw.len());
    for (g, r) in got.iter().zip(raw) {
        assert!((g - r / sum).abs() < 1e-15, "{got:?} vs {raw:?}");
    }
}

#[test]
fn both_doc_topic_layouts_import() {
    let e = import_mallet(&[member("dense"), member("sparse")]).unwrap();
    assert_eq!(e.vocabulary.terms(), ["geist", "kunst", "natur", "seele", "welt"]);
    assert_eq!(e.members[0].k(), 3);
    assert_eq!(e.members[1].k(), 2);

    // terms a file never lists fall back to its smallest listed weight
    assert_row(&e.members[0].phi[0], &[4.01, 0.01, 0.01, 2.01, 1.01]);
    assert_row(&e.members[0].phi[2], &[1.01, 0.01, 1.01, 3.01, 0.01]);
    assert_row(&e.members[1].phi[0], &[3.01, 1.01, 1.01, 3.01, 1.01]);
    assert_row(&e.members[1].phi[1], &[1.01, 1.01, 6.01, 1.01, 2.01]);

    let dense = e.members[0].theta().unwrap();
    assert_eq!(e.members[0].doc_ids, ["brief-001", "brief-002", "brief-003"]);
    assert_row(&dense[2], &[0.25, 0.5, 0.25]);
    let sparse = e.members[1].theta().unwrap();
    assert_row(&sparse[0], &[0.6, 0.4]);
    assert_row(&sparse[1], &[0.1, 0.9]);
    e.validate().unwrap();
}

#[test]
fn weights_only_import_has_no_theta() {
    let e = import_mallet(&[MalletMember {
        doc_topics: None,
        topic_word_weights: fixture("dense.topic-word-weights.txt"),
    }])
    .unwrap();
    assert!(matches!(e.members[0].theta(), Err(Error::Unavailable(_))));
}

#[test]
fn export_then_import_round_trips() {
    let synth = generate_corpus(&SyntheticSpec {
        docs: 40,
        vocab_size: 120,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let corpus = synth.build().unwrap();
    let spec = EnsembleSpec::sampling(LdaConfig::new(6).with_iterations(30), 3);
    let original = generate(&corpus.matrix, &corpus.vocabulary, &spec).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let files = export_mallet(&original, dir.path()).unwrap();
    let back = import_mallet(&files).unwrap();

    assert_eq!(back.vocabulary, original.vocabulary);
    for (a, b) in original.members.iter().zip(&back.members) {
        assert_eq!(a.doc_ids, b.doc_ids);
        for (ra, rb) in a.phi.iter().zip(&b.phi) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
        for (ra, rb) in a.theta().unwrap().iter().zip(b.theta().unwrap()) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn malformed_lines_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("bad.topic-word-weights.txt");
    fs::write(&weights, "0\tgeist\t1.0\n0\tseele\tviel\n").unwrap();
    let err = import_mallet(&[MalletMember {
        doc_topics: None,
        topic_word_weights: weights.clone(),
    }])
    .unwrap_err();
    match err {
        Error::Parse { file, line, .. } => {
            assert_eq!(file, weights);
            assert_eq!(line, 2);
        }
        other => panic!("{other:?}"),
    }

    let docs = dir.path().join("bad.doc-topics.txt");
    fs::write(
        &docs,
        "#doc name topic proportion\n0\ta\t0.5\t0.2\t0.3\n1\tb\t0.5\tx\t0.5\n",
    )
    .unwrap();
    let err = import_mallet(&[MalletMember {
        doc_topics: Some(docs.clone()),
        topic_word_weights: fixture("dense.topic-word-weights.txt"),
    }])
    .unwrap_err();
    let text = err.to_string();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    assert!(text.contains("bad.doc-topics.txt") && text.contains('3'), "{text}");
}
