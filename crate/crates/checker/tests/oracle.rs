use genstore_checker::program::first_divergence;
use genstore_checker::{random_program, run_reference, run_store};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn store_matches_reference(seed in any::<u64>(), len in 1usize..=50) {
        let ops = random_program(seed, len);
        let a = run_store(&ops);
        let b = run_reference(&ops);
        prop_assert_eq!(first_divergence(&a, &b), None, "ops {:?}", ops);
    }
}
