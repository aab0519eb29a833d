use topicscope_core::ensemble::Preset;
use topicscope_core::synthbench::{run_experiment, ExperimentOptions, SyntheticSpec};

#[test]
fn sampling_ensemble_separates_clustered_from_isolated_topics() {
    let synth = SyntheticSpec::default();
    let report = run_experiment(Preset::E1, &synth, &ExperimentOptions::default()).unwrap();
    let threshold = report.options.thresholds.stable_below;
    assert!(
        report.recovered_clusters * 10 >= synth.true_k * 8,
        "{}/{}",
        report.recovered_clusters,
        synth.true_k
    );
    let clustered = report.clustered_mean_u_exist.unwrap();
    let isolated = report.isolated_mean_u_exist.unwrap();
    assert!(clustered < threshold, "{clustered}");
    assert!(isolated > threshold, "{isolated}");
    assert_eq!(report.total_topics, 200);
}

#[test]
fn larger_beta_makes_topics_more_alike() {
    let synth = SyntheticSpec {
        separation: 1.0,
        ..SyntheticSpec::default()
    };
    let report = run_experiment(Preset::E4, &synth, &ExperimentOptions::default()).unwrap();
    let sims: Vec<(f64, f64)> = report
        .member_similarity
        .iter()
        .map(|m| (m.parameter.unwrap(), m.mean_similarity))
        .collect();
    assert_eq!(sims.len(), 10);
    for w in sims.windows(2) {
        assert!(w[0].0 < w[1].0);
        assert!(w[0].1 < w[1].1, "{sims:?}");
    }
}
