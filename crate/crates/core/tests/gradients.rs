use lrnr_core::training::gradcheck_default;

#[test]
fn default_network_gradients_match_finite_differences() {
    for seed in 0..10 {
        let r = gradcheck_default(seed).unwrap();
        println!("{r:?}");
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
