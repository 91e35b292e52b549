use cpapr_core::microbench::{stream_triad, STREAM_SCALAR};
use cpapr_core::{run_stream, StreamKernel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stream_validates_for_any_length_and_reps(len in 1usize..5000, reps in 2usize..6) {
        let res = run_stream(len, reps, &StreamKernel::ALL).unwrap();
        prop_assert!(res.iter().all(|r| r.validated && r.reps == reps));
    }

    #[test]
    fn triad_matches_closed_form(a0 in -10.0f64..10.0, b0 in -10.0f64..10.0, c0 in -10.0f64..10.0, k in 1usize..6) {
        let mut a = vec![a0; 64];
        let b = vec![b0; 64];
        let c = vec![c0; 64];
        let mut expect = a0;
        for _ in 0..k {
            stream_triad(&mut a, &b, &c, STREAM_SCALAR);
            expect = b0 + STREAM_SCALAR * c0;
        }
        prop_assert!(a.iter().all(|&x| x == expect));
    }
}
