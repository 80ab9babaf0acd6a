use wavedag_sim::estimate::{estimate_direct_commit_rate, EstimateConfig};

#[test]
fn more_leaders_than_faults_always_commit_directly() {
    let e = estimate_direct_commit_rate(&EstimateConfig::new(1, 2, 5, 1_000, 3)).unwrap();
    assert_eq!(e.waves, 1_000);
    assert_eq!(e.hits, 1_000);
    assert_eq!(e.bound, 1.0);
    assert!(e.meets_bound());
}

#[test]
fn crashed_validators_lower_the_rate_towards_the_bound() {
    let mut config = EstimateConfig::new(1, 1, 5, 1_000, 9);
    config.crashed = 1;
    let e = estimate_direct_commit_rate(&config).unwrap();
    assert_eq!(e.bound, 0.75);
    // Only waves electing the crashed validator miss.
    assert!(e.rate > 0.65 && e.rate < 0.85, "{e:?}");
    assert!(e.meets_bound(), "{e:?}");
}
