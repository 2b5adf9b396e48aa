mod common;

use common::*;
use mspc::grouping::GroupingMethod;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn conv2d_gradients(seed in 0u64..1000, cin in 1usize..4, cout in 1usize..4, k in prop::sample::select(vec![1usize, 3]), h in 2usize..6, w in 2usize..6) {
        let e = conv2d_error(seed, cin, cout, k, h, w);
        prop_assert!(e <= OP_TOL, "rel err {e}");
    }

    #[test]
    fn elementwise_gradients(seed in 0u64..1000) {
        let e = elementwise_error(seed);
        prop_assert!(e <= OP_TOL, "rel err {e}");
    }

    #[test]
    fn mask_and_reduction_gradients(seed in 0u64..1000) {
        let e = mask_error(seed);
        prop_assert!(e <= OP_TOL, "rel err {e}");
    }

    #[test]
    fn dmol_nll_gradients(seed in 0u64..1000, mixtures in 1usize..4) {
        let e = dmol_nll_error(seed, mixtures);
        prop_assert!(e <= OP_TOL, "rel err {e}");
    }
}

#[test]
fn batch_loss_gradient_fixed_a() {
    let e = batch_loss_error(GroupingMethod::FixedA, false);
    assert!(e <= END_TO_END_TOL, "rel err {e}");
}

#[test]
fn batch_loss_gradient_dynamic() {
    let e = batch_loss_error(GroupingMethod::Dynamic, false);
    assert!(e <= END_TO_END_TOL, "rel err {e}");
}

#[test]
fn batch_loss_gradient_shared_weights() {
    let e = batch_loss_error(GroupingMethod::FixedB, true);
    assert!(e <= END_TO_END_TOL, "rel err {e}");
}
