mod common;

use cin_core::planner::HyperParams;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reverse_pass_matches_central_differences(
        seed in any::<u64>(),
        side in 4usize..7,
        k in prop::sample::select(vec![1usize, 3, 10]),
        pick in any::<prop::sample::Index>(),
    ) {
        let (map, goal, queries, experts) = common::random_task(side, seed);
        let net = common::jittered_net(seed ^ 0x5eed);
        let mut hp = HyperParams::learned(side);
        hp.iterations = k;
        let q = pick.index(queries.len());
        let worst = common::gradient_check(&map, &net, goal, &queries[q..q + 1], &experts[q..q + 1], &hp, 1e-5);
        prop_assert!(worst < 1e-4, "relative error {worst:e}");
    }
}
