mod common;

use common::{dense_phi, max_rel_diff, random_instance, weighted_factor};
use cpapr_core::{compute_phi, compute_pi, KernelConfig, PerturbationMode, PhiStrategy, PolicyParams};
use proptest::prelude::*;

const EPS: f64 = 1e-10;

fn policies() -> [PolicyParams; 3] {
    [
        PolicyParams::SEQUENTIAL,
        PolicyParams::new(2, 1, 3).unwrap(),
        PolicyParams::new(4, 2, 8).unwrap(),
    ]
}

fn config(strategy: PhiStrategy, policy: PolicyParams) -> KernelConfig {
    KernelConfig {
        strategy,
        policy,
        worker_budget: 4,
        perturbation: PerturbationMode::None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strategies_match_dense_oracle(seed in any::<u64>()) {
        let inst = random_instance(seed, &[2, 3, 4]);
        let t = &inst.tensor;
        let perms = t.permutations();
        let nnz = t.nnz();
        for mode in 0..t.order() {
            let b = weighted_factor(&inst.model, mode);
            let pi = compute_pi(&inst.model, t, mode).unwrap();
            let want = dense_phi(t, &b, inst.model.factors(), mode, EPS);
            let mut strategies = vec![PhiStrategy::AtomicPerNonzero];
            strategies.extend([1, 3, 7, nnz].map(|v| PhiStrategy::ChunkedSorted { chunk_size: v }));
            for strategy in strategies {
                for policy in policies() {
                    let got = compute_phi(t, &b, &pi, Some(&perms[mode]), EPS, &config(strategy, policy)).unwrap();
                    let d = max_rel_diff(&got.phi, &want);
                    prop_assert!(d <= 1e-10, "{strategy} {policy} mode {mode}: {d}");
                }
            }
        }
    }

    #[test]
    fn policy_never_changes_phi(seed in any::<u64>(), league in 1usize..9, team in 1usize..5, vector in 1usize..65) {
        let inst = random_instance(seed, &[3]);
        let t = &inst.tensor;
        let perms = t.permutations();
        let policy = PolicyParams::new(league, team, vector).unwrap();
        for mode in 0..t.order() {
            let b = weighted_factor(&inst.model, mode);
            let pi = compute_pi(&inst.model, t, mode).unwrap();
            for strategy in [PhiStrategy::AtomicPerNonzero, PhiStrategy::ChunkedSorted { chunk_size: 5 }] {
                let base = compute_phi(t, &b, &pi, Some(&perms[mode]), EPS, &KernelConfig::sequential(strategy)).unwrap();
                let got = compute_phi(t, &b, &pi, Some(&perms[mode]), EPS, &config(strategy, policy)).unwrap();
                prop_assert!(max_rel_diff(&got.phi, &base.phi) <= 1e-10);
            }
        }
    }
}

#[test]
fn chunked_without_permutation_is_rejected() {
    let inst = random_instance(3, &[3]);
    let b = weighted_factor(&inst.model, 0);
    let pi = compute_pi(&inst.model, &inst.tensor, 0).unwrap();
    let cfg = KernelConfig::sequential(PhiStrategy::ChunkedSorted { chunk_size: 4 });
    assert!(compute_phi(&inst.tensor, &b, &pi, None, EPS, &cfg).is_err());
}
