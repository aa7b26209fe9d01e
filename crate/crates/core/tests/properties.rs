use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coagfrag_core::functionals::Constant;
use coagfrag_core::pd::{density_mk, sample_pd_stick, PdParams, PoissonSampler};
use coagfrag_core::{apply_kernel, enumerate_transitions, step, KernelParams, Partition, SigmaSpec};

fn partition(max_parts: usize) -> impl Strategy<Value = Partition> {
    (1..=max_parts, any::<u64>()).prop_map(|(n, seed)| Partition::uniform_random(n, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn atomic() -> impl Strategy<Value = SigmaSpec> {
    prop::collection::vec((0.01f64..=0.5, 0.1f64..1.0), 1..4).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        SigmaSpec::Atomic { atoms: atoms.into_iter().map(|(x, w)| (x, w / total)).collect() }
    })
}

fn sigma() -> impl Strategy<Value = SigmaSpec> {
    prop_oneof![
        Just(SigmaSpec::Uniform),
        (0.1f64..5.0).prop_map(|a| SigmaSpec::PowerLaw { a }),
        atomic(),
        Just(SigmaSpec::Tabulated { knots: vec![(0.0, 0.05), (0.3, 0.2), (0.6, 0.2), (1.0, 0.5)] }),
    ]
}

fn rates() -> impl Strategy<Value = KernelParams> {
    (0.05f64..=1.0, 0.05f64..=1.0).prop_map(|(m, s)| KernelParams::new(m, s).unwrap())
}

fn sorted(p: &Partition) -> bool {
    p.parts().windows(2).all(|w| w[0] >= w[1])
}

proptest! {
    #[test]
    fn merge_preserves_mass_exactly(p in partition(12), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        prop_assume!(p.len() >= 2);
        let (i, j) = (a.index(p.len()), b.index(p.len()));
        prop_assume!(i != j);
        let q = p.merge(i, j).unwrap();
        let merged = p.parts()[i] + p.parts()[j];
        prop_assert_eq!(q.len(), p.len() - 1);
        prop_assert!(sorted(&q));
        prop_assert!(q.parts().contains(&merged));
        prop_assert!((q.mass() - p.mass()).abs() <= 4.0 * f64::EPSILON * p.mass());
    }

    #[test]
    fn split_preserves_mass_and_inverts(p in partition(12), a in any::<prop::sample::Index>(), u in 0.001f64..0.999) {
        let i = a.index(p.len());
        let x = p.parts()[i];
        let q = p.split(i, u).unwrap();
        prop_assert_eq!(q.len(), p.len() + 1);
        prop_assert!(sorted(&q));
        prop_assert!((q.mass() - p.mass()).abs() <= 1e-15 * p.mass().max(1.0) + 4.0 * f64::EPSILON);
        let (lo, hi) = (u * x, (1.0 - u) * x);
        let li = q.parts().iter().position(|&y| y == lo.min(hi)).unwrap();
        let hi_index = q.parts().iter().enumerate().position(|(k, &y)| k != li && y == lo.max(hi)).unwrap();
        let back = q.merge(li, hi_index).unwrap();
        prop_assert_eq!(back.len(), p.len());
        for (r, s) in back.parts().iter().zip(p.parts()) {
            prop_assert!((r - s).abs() <= 1e-15);
        }
    }

    #[test]
    fn sigma_draws_lie_in_half_interval(s in sigma(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let u = s.sample(&mut rng);
            prop_assert!(u > 0.0 && u <= 0.5, "{u}");
        }
    }

    #[test]
    fn enumeration_totals_one(p in partition(8), s in atomic(), k in rates()) {
        let table = enumerate_transitions(&p, &k, &s).unwrap();
        prop_assert!((table.total() - 1.0).abs() <= 1e-12);
        prop_assert!(table.outcomes.iter().all(|t| t.prob > 0.0 && sorted(&t.p)));
    }

    #[test]
    fn kernel_of_constant_is_constant(p in partition(8), s in sigma(), k in rates()) {
        let v = apply_kernel(&Constant(1.0), &p, &k, &s, 32);
        prop_assert!((v - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn step_changes_count_by_at_most_one(p in partition(8), s in sigma(), k in rates(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cur = p;
        for _ in 0..50 {
            let next = step(&cur, &k, &s, &mut rng);
            let d = next.len() as i64 - cur.len() as i64;
            prop_assert!((-1..=1).contains(&d));
            prop_assert!(sorted(&next));
            prop_assert!((next.mass() - cur.mass()).abs() <= 1e-15 * cur.mass() + 4.0 * f64::EPSILON);
            cur = next;
        }
    }

    #[test]
    fn pd_samples_are_sorted_with_mass_near_one(theta in 0.2f64..4.0, seed in any::<u64>()) {
        let pd = PdParams::new(theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poisson = PoissonSampler::new(&pd).unwrap();
        for p in [sample_pd_stick(&pd, &mut rng), poisson.sample(&mut rng)] {
            prop_assert!(sorted(&p));
            let m = p.mass();
            prop_assert!(m <= 1.0 + 1e-12 && m >= 1.0 - pd.truncation - 1e-12, "{m}");
        }
    }

    #[test]
    fn density_base_recursion(theta in 0.1f64..6.0, k in 1usize..=6) {
        let hi = density_mk(theta, &vec![0.0; k]).unwrap();
        let lo = density_mk(theta, &vec![0.0; k - 1]).unwrap();
        prop_assert!((hi / lo - theta).abs() <= 1e-12 * theta);
    }
}
