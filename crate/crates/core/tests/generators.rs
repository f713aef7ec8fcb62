use proptest::prelude::*;
use semicont::error::Error;
use semicont::generators::{generate, Dominance, Family, GenSpec};
use semicont::linalg::min_eigenvalue;
use semicont::model::validate;

fn spec() -> impl Strategy<Value = GenSpec> {
    (any::<bool>(), 2..16usize, 0..3usize, any::<u64>(), 1..8usize).prop_map(|(mv, n, d, seed, k)| {
        let k = k.min(n);
        if mv {
            GenSpec::mv(n, k, [Dominance::Minus, Dominance::Zero, Dominance::Plus][d], seed)
        } else {
            GenSpec::ssp(n, k, seed)
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_instances_are_valid_and_convex(s in spec()) {
        let inst = generate(&s).unwrap();
        prop_assert!(validate(&inst).is_valid());
        prop_assert_eq!(inst.n, s.n);
        prop_assert_eq!(inst.cardinality, s.k);
        let lam = min_eigenvalue(&inst.q).unwrap();
        prop_assert!(lam >= -1e-10 * inst.q.trace(), "min eig {lam:e}");
        if s.family == Family::Mv {
            // budget as a pair of opposite rows, plus the return target
            prop_assert_eq!(inst.m, 3);
        }
    }

    #[test]
    fn same_seed_same_instance(s in spec()) {
        prop_assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
    }

    #[test]
    fn sections_need_a_divisor(n in 2..24usize, sections in 1..8usize, seed in any::<u64>()) {
        let r = generate(&GenSpec::mv(n, 2, Dominance::Zero, seed).with_sections(sections));
        if n % sections == 0 {
            let inst = r.unwrap();
            let eq = inst.equality.as_ref().unwrap();
            prop_assert_eq!(eq.rows(), sections);
            for i in 0..n {
                let col: f64 = (0..sections).map(|s| eq.f.get(s, i)).sum();
                prop_assert_eq!(col, 1.0);
            }
        } else {
            let is_indivisible = matches!(r, Err(Error::IndivisibleSections { .. }));
            prop_assert!(is_indivisible);
        }
    }
}
