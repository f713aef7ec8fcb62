mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use semicont::linalg::{Matrix, SymMatrix};
use semicont::model::{instance_from_json, instance_to_json, objective, read_instance, write_instance, EqualityBlock, Instance};
use semicont::reformulate::{build_lcr, lifted_value, plain_value};

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO | prop::num::f64::NEGATIVE
}

fn raw_instance() -> impl Strategy<Value = Instance> {
    (1..6usize, 0..4usize, 0..3usize).prop_flat_map(|(n, m, e)| {
        let v = move |len| prop::collection::vec(finite(), len);
        (v(n * n), v(n), v(n), v(m * n), v(m * n), v(m), v(n), v(n), v(e * (2 * n + 1)), 0..=n).prop_map(
            move |(q, c, h, a, b, d, lb, ub, eq, k)| {
                let mut inst = Instance::unconstrained(
                    SymMatrix::from_lower_fn(n, |i, j| q[i * n + j]),
                    c,
                    h,
                    lb,
                    ub,
                );
                inst.a = Matrix::from_row_major(m, n, a).unwrap();
                inst.b = Matrix::from_row_major(m, n, b).unwrap();
                inst.d = d;
                inst.m = m;
                inst.cardinality = (k > 0).then_some(k);
                if e > 0 {
                    inst.equality = Some(EqualityBlock {
                        e: Matrix::from_fn(e, n, |r, j| eq[r * (2 * n + 1) + j]),
                        f: Matrix::from_fn(e, n, |r, j| eq[r * (2 * n + 1) + n + j]),
                        g: (0..e).map(|r| eq[r * (2 * n + 1) + 2 * n]).collect(),
                    });
                }
                inst
            },
        )
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn same_bits(a: &Instance, b: &Instance) -> bool {
    let mats = |i: &Instance| {
        let mut v = bits(&i.q.to_rows().concat());
        v.extend(bits(i.a.as_slice()));
        v.extend(bits(i.b.as_slice()));
        if let Some(e) = &i.equality {
            v.extend(bits(e.e.as_slice()));
            v.extend(bits(e.f.as_slice()));
            v.extend(bits(&e.g));
        }
        v
    };
    a.n == b.n
        && a.m == b.m
        && a.cardinality == b.cardinality
        && a.equality.is_some() == b.equality.is_some()
        && mats(a) == mats(b)
        && [(&a.c, &b.c), (&a.h, &b.h), (&a.d, &b.d), (&a.lb, &b.lb), (&a.ub, &b.ub)]
            .iter()
            .all(|(x, y)| bits(x) == bits(y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn json_round_trip_is_bit_exact(inst in raw_instance()) {
        let text = instance_to_json(&inst).unwrap();
        let back = instance_from_json(&text).unwrap();
        prop_assert!(same_bits(&inst, &back), "{text}");
        prop_assert_eq!(instance_to_json(&back).unwrap(), text);
    }
}

#[test]
fn file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, inst) in common::mixed_instances(6, 6, 9, 11).iter().enumerate() {
        let path = dir.path().join(format!("{i}.json"));
        write_instance(inst, &path).unwrap();
        let back = read_instance(&path).unwrap();
        assert!(same_bits(inst, &back));
        assert_eq!(&back, inst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lift_leaves_binary_feasible_objectives_unchanged(seed in any::<u64>()) {
        let inst = &common::mixed_instances(2, 6, 10, seed % 1000)[(seed % 2) as usize];
        let mut rng = SplitMix64::seed_from_u64(seed);
        let lp = common::random_feasible_lift(inst, &mut rng);
        let model = build_lcr(inst, &lp).unwrap();
        for _ in 0..10 {
            let p = common::binary_feasible_point(inst, &mut rng);
            let f = objective(inst, &p).unwrap();
            prop_assert_eq!(f, plain_value(inst, &p.x, &p.y));
            let lifted = lifted_value(inst, &lp, &p.x, &p.y);
            let via_model = model.objective(&model.embed(inst, &p));
            prop_assert!((lifted - f).abs() <= 1e-9 * (1.0 + f.abs()), "{lifted} vs {f}");
            prop_assert!((via_model - f).abs() <= 1e-9 * (1.0 + f.abs()), "{via_model} vs {f}");
        }
    }
}
