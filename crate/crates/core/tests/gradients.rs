use voxinv_core::gradcheck::{grad_check, network_cases, op_cases, NETWORK_STEP, OP_STEP};

#[test]
fn op_gradients_across_seeds() {
    for seed in 0..5 {
        for case in op_cases(seed) {
            let r = grad_check(case.as_ref(), OP_STEP);
            assert!(r.max_relative_error < 1e-4, "seed {seed}: {r:?}");
        }
    }
}

#[test]
fn tiny_networks_end_to_end() {
    for case in network_cases(7).unwrap() {
        let r = grad_check(case.as_ref(), NETWORK_STEP);
        println!("{} {:.3e} over {} coordinates", r.name, r.max_relative_error, r.coordinates);
        assert!(r.max_relative_error < 1e-3, "{r:?}");
    }
}
