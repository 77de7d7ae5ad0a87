mod common;

#[test]
fn every_primitive_matches_central_differences() {
    for (name, err) in common::primitive_errors() {
        assert!(err < 1e-3, "{name}: relative error {err:e}");
    }
}

#[test]
fn random_micro_networks_match_central_differences() {
    for seed in 0..20 {
        let err = common::micro_network_error(seed);
        assert!(err < 1e-3, "network {seed}: relative error {err:e}");
    }
}

#[test]
fn relative_error_oracle() {
    assert_eq!(common::relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert!((common::relative_error(&[3.0, 4.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
}
