mod common;

use proptest::prelude::*;
use scoreguide::logic::stable_or;

#[test]
fn log_weights_are_bounded_on_random_pairs() {
    common::suites::boundedness(1000, 100).assert();
}

#[test]
fn stable_or_matches_the_literal_formula() {
    common::suites::stable_or_grid().assert();
}

#[test]
fn nnf_preserves_soft_and_crisp_semantics() {
    common::suites::de_morgan(1000).assert();
}

#[test]
fn gradients_match_finite_differences() {
    common::suites::gradients(500).assert();
}

proptest! {
    #[test]
    fn stable_or_is_a_commutative_log_weight(x in -2000.0f64..0.0, y in -2000.0f64..0.0) {
        let v = stable_or(x, y).unwrap();
        prop_assert!(v.is_finite());
        prop_assert!(v <= 0.0);
        prop_assert!(v >= x.max(y));
        prop_assert_eq!(v, stable_or(y, x).unwrap());
    }

    #[test]
    fn stable_or_with_certainty_is_certain(x in -50.0f64..0.0) {
        prop_assert!(stable_or(x, 0.0).unwrap().abs() < 1e-15);
    }
}
