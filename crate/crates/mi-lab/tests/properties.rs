//! Property-based checks of the algebraic invariants the estimators and
//! adversarial constructions are built on.

use mi_lab::distributions::{mix_adversarial, Categorical};
use mi_lab::estimators::{cpc_from_score_matrix, dv_from_scores};
use mi_lab::numerics::{logsumexp, Matrix};
use mi_lab::oracles::{exact_kl, type_statistics};
use mi_lab::rng::{derive_seed, RunRng};
use proptest::collection::vec;
use proptest::prelude::*;

proptest! {
    #[test]
    fn logsumexp_shift_identity(
        xs in vec(-30.0..30.0f64, 1..20),
        c in -20.0..20.0f64,
    ) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let base = logsumexp(&xs).unwrap();
        let moved = logsumexp(&shifted).unwrap();
        prop_assert!((moved - base - c).abs() < 1e-9, "{moved} vs {base} + {c}");
    }

    #[test]
    fn dv_is_shift_invariant(
        joint in vec(-10.0..10.0f64, 1..16),
        marginal in vec(-10.0..10.0f64, 1..16),
        c in -10.0..10.0f64,
    ) {
        let a = dv_from_scores(&joint, &marginal).unwrap();
        let js: Vec<f64> = joint.iter().map(|x| x + c).collect();
        let ms: Vec<f64> = marginal.iter().map(|x| x + c).collect();
        let b = dv_from_scores(&js, &ms).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn cpc_stays_below_ln_n(n in 2..12usize, seed in any::<u64>()) {
        let mut rng = RunRng::new(seed);
        let scores = Matrix::from_shape_fn((n, n), |_| rng.uniform() * 20.0 - 10.0);
        let est = cpc_from_score_matrix(&scores).unwrap();
        prop_assert!(est <= (n as f64).ln() + 1e-9, "{est} above ln {n}");
    }

    #[test]
    fn mixture_dominates_and_caps_kl(
        pairs in vec((0.01..1.0f64, 0.01..1.0f64), 2..10),
        n in 2..200usize,
    ) {
        let (pw, qw): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let p = Categorical::normalized(pw).unwrap();
        let q = Categorical::normalized(qw).unwrap();
        let mixed = mix_adversarial(&q, &p, n).unwrap();
        let w = 1.0 / n as f64;
        for i in 0..p.len() {
            // each component is present at its mixture weight
            prop_assert!(mixed.probs()[i] >= w * p.probs()[i] - 1e-15);
            prop_assert!(mixed.probs()[i] >= (1.0 - w) * q.probs()[i] - 1e-15);
        }
        let kl = exact_kl(&p, &mixed).unwrap();
        prop_assert!(kl <= (n as f64).ln() + 1e-9, "KL {kl} above ln {n}");
    }

    #[test]
    fn type_statistics_conserve_counts(sample in vec(0..50usize, 0..200)) {
        let stats = type_statistics(sample.iter().copied());
        prop_assert_eq!(stats.sample_size(), sample.len());
        let weighted: usize = stats
            .profile()
            .iter()
            .map(|(multiplicity, atoms)| multiplicity * atoms)
            .sum();
        prop_assert_eq!(weighted, sample.len());
        let mut unique = sample.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(stats.distinct_atoms(), unique.len());
        prop_assert_eq!(stats.has_repeats(), unique.len() != sample.len());
    }

    #[test]
    fn derived_streams_differ_and_reproduce(
        master in any::<u64>(),
        a in 0..1000u64,
        b in 0..1000u64,
    ) {
        let seed = derive_seed(master, a, b);
        prop_assert_eq!(seed, derive_seed(master, a, b));
        // a neighbouring index gives a different stream
        let other = derive_seed(master, a, b + 1);
        prop_assert_ne!(seed, other);
        let x = RunRng::new(seed).uniform();
        let y = RunRng::new(other).uniform();
        prop_assert_ne!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn uniform_below_stays_in_range(seed in any::<u64>(), n in 1..1_000_000usize) {
        let mut rng = RunRng::new(seed);
        for _ in 0..8 {
            prop_assert!(rng.below(n) < n);
            let u = rng.uniform();
            prop_assert!((0.0..1.0).contains(&u));
        }
    }
}
