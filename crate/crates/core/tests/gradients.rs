use tempseg::gradcheck::{
    finite_difference_check, finite_difference_check_in, run_suite, tolerance, DEFAULT_EPSILON, PRIMITIVES,
};
use tempseg::tensor::Precision;
use tempseg::Error;

#[test]
fn every_primitive_passes_for_ten_seeds_in_double() {
    for &p in PRIMITIVES {
        for seed in 1..=10 {
            let err = finite_difference_check(p, seed, DEFAULT_EPSILON).unwrap();
            assert!(err < tolerance(p), "{p} seed {seed}: {err}");
        }
    }
}

#[test]
fn relu_is_essentially_exact() {
    for seed in 1..=10 {
        assert!(finite_difference_check("relu", seed, DEFAULT_EPSILON).unwrap() < 1e-6);
    }
}

#[test]
fn single_precision_suite_passes() {
    let results = run_suite(1, Precision::Single).unwrap();
    assert_eq!(results.len(), PRIMITIVES.len());
    for r in results {
        assert!(r.passed, "{} {}", r.primitive, r.max_rel_error);
        assert!(r.max_rel_error < 1e-4);
    }
}

#[test]
fn unknown_primitive_is_rejected() {
    let e = finite_difference_check_in("conv2d", 1, 1e-5, Precision::Double).unwrap_err();
    assert!(matches!(e, Error::UnknownPrimitive(ref n) if n == "conv2d"));
}
