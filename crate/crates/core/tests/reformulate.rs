mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use semicont::bnb::enumerate_oracle;
use semicont::conic::{extract, solve_conic, ConicSettings, ConicStatus};
use semicont::generators::{generate, Dominance, GenSpec};
use semicont::linalg::{is_numerically_psd, min_eigenvalue};
use semicont::model::{objective, Instance};
use semicont::reformulate::{
    bound_compare, build_qcr, build_sdp_a, build_sdp_q, lcr_parameters, lift_params_to_rho, lifted_hessian,
    lifted_value, perspective_cut_row, perspective_value, recover_lift_params, rho_uniform_mineig, BoundOptions, LiftParams, RhoChoice,
    PerspectiveCut, Y_ZERO_TOL,
};

fn instance(seed: u64) -> Instance {
    common::mixed_instances(2, 5, 8, seed)[(seed % 2) as usize].clone()
}

/// `(grad_x, grad_y)` of the lifted objective.
fn lifted_gradient(inst: &Instance, lp: &LiftParams, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let qx = inst.q.mul_vec(x);
    let gx = (0..inst.n).map(|i| 2.0 * qx[i] + inst.c[i] + lp.u[i] * y[i] - lp.u[i]).collect();
    let gy = (0..inst.n).map(|i| inst.h[i] + lp.u[i] * x[i] + 2.0 * lp.v[i] * y[i] - lp.v[i]).collect();
    (gx, gy)
}

/// `(grad_x, grad_y)` of the perspective objective, for `y > 0`.
fn perspective_gradient(inst: &Instance, rho: &[f64], x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let qx = inst.q.minus_diag(rho).mul_vec(x);
    let gx = (0..inst.n).map(|i| 2.0 * qx[i] + inst.c[i] + 2.0 * rho[i] * x[i] / y[i]).collect();
    let gy = (0..inst.n).map(|i| inst.h[i] - rho[i] * x[i] * x[i] / (y[i] * y[i])).collect();
    (gx, gy)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn recovered_lift_is_convex_and_maps_back_to_feasible_rho(seed in 0u64..10_000) {
        let inst = instance(seed);
        let p = lcr_parameters(&inst, RhoChoice::Optimal, &ConicSettings::default()).unwrap();
        let lp = &p.lift;
        prop_assert!(is_numerically_psd(&lifted_hessian(&inst.q, lp)).unwrap());
        for i in 0..inst.n {
            if lp.v[i] == 0.0 {
                prop_assert_eq!(lp.u[i], 0.0);
            }
        }
        let plain = recover_lift_params(&p.rho, &p.socp_point.x, &p.socp_point.y).unwrap();
        for i in (0..inst.n).filter(|&i| p.socp_point.y[i] <= Y_ZERO_TOL) {
            prop_assert_eq!((plain.u[i], plain.v[i]), (0.0, 0.0));
            // the completed lift is a tangent of the perspective there
            prop_assert!((lp.v[i] * 4.0 * p.rho.rho[i] - lp.u[i] * lp.u[i]).abs() <= 1e-9 * (1.0 + lp.u[i] * lp.u[i]));
        }
        let bar = lift_params_to_rho(lp);
        prop_assert!(bar.is_feasible_for(&inst.q).unwrap());
        for i in 0..inst.n {
            if lp.v[i] == 0.0 {
                prop_assert_eq!(bar.rho[i], 0.0);
            }
        }

        // pointwise ordering on relaxation points with y in (0, 1]
        let mut rng = SplitMix64::seed_from_u64(seed);
        for _ in 0..20 {
            let Some(pt) = common::relaxed_point(&inst, 1e-3, &mut rng) else { continue };
            let d = perspective_value(&inst, &bar.rho, &pt.x, &pt.y) - lifted_value(&inst, lp, &pt.x, &pt.y);
            prop_assert!(d >= -1e-8, "f_rho - f_uv = {d:e}");
        }

        // gradients agree at the relaxation optimum where y* > 0
        let (x, y) = (&p.socp_point.x, &p.socp_point.y);
        let (gx_l, gy_l) = lifted_gradient(&inst, lp, x, y);
        let (gx_p, gy_p) = perspective_gradient(&inst, &p.rho.rho, x, y);
        for i in (0..inst.n).filter(|&i| y[i] > 1e-6) {
            prop_assert!((gx_l[i] - gx_p[i]).abs() <= 1e-6 * (1.0 + gx_p[i].abs()), "x {i}: {} {}", gx_l[i], gx_p[i]);
            prop_assert!((gy_l[i] - gy_p[i]).abs() <= 1e-6 * (1.0 + gy_p[i].abs()), "y {i}: {} {}", gy_l[i], gy_p[i]);
        }
    }

    #[test]
    fn bound_chain_holds(seed in 0u64..10_000) {
        let inst = instance(seed);
        let r = bound_compare(&inst, &BoundOptions { qcr: false, ..BoundOptions::default() });
        let (_, opt) = enumerate_oracle(&inst).unwrap();
        prop_assert!(r.bound_plain <= r.bound_lcr + 1e-6, "{r:?}");
        prop_assert!((r.bound_lcr - r.bound_pr).abs() <= 1e-5 * (1.0 + r.bound_pr.abs()), "{r:?}");
        prop_assert!(r.bound_lcr <= opt + 1e-6, "{} > {opt}", r.bound_lcr);
    }

    #[test]
    fn perspective_cuts_envelope_the_square(x in -50.0..50.0f64, a in -60.0..-0.1f64, b in 0.1..60.0f64) {
        let x = x.clamp(a, b);
        let cuts = [a, x, b].map(|xbar| PerspectiveCut { xbar, violation: 0.0 });
        let sup = cuts.iter().map(|c| c.lower_bound(x, 1.0)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((sup - x * x).abs() <= 1e-9 * (1.0 + x * x));
        for c in &cuts {
            prop_assert!(c.lower_bound(x, 1.0) <= x * x + 1e-9 * (1.0 + x * x));
        }
        let link = semicont::reformulate::IndicatorLink { y: 1, x: 0, phi: Some(2) };
        let row = perspective_cut_row(&link, x);
        prop_assert!(row.violation(&[x, 1.0, x * x]).abs() <= 1e-9 * (1.0 + x * x));
    }
}

#[test]
fn uniform_rho_is_the_clipped_smallest_eigenvalue() {
    for inst in common::mixed_instances(6, 5, 9, 3) {
        let lam = min_eigenvalue(&inst.q).unwrap().max(0.0);
        let r = rho_uniform_mineig(&inst).unwrap();
        assert!(r.rho.iter().all(|&v| v == lam));
        assert!(r.is_feasible_for(&inst.q).unwrap());
    }
}

#[test]
fn sdp_q_lift_is_convex_and_bounds_the_optimum() {
    for inst in common::mixed_instances(4, 5, 7, 21) {
        let p = build_sdp_q(&inst);
        let s = solve_conic(&p, &ConicSettings::default()).unwrap();
        assert!(s.status == ConicStatus::Optimal || s.dual_usable(1e-7), "{:?}", s.status);
        let lp = LiftParams { u: extract(&s, &p.layout, "u").unwrap(), v: extract(&s, &p.layout, "v").unwrap() };
        assert!(is_numerically_psd(&lifted_hessian(&inst.q, &lp)).unwrap());
        let tau = extract(&s, &p.layout, "tau").unwrap()[0];
        let (_, opt) = enumerate_oracle(&inst).unwrap();
        assert!(tau <= opt + 1e-6, "{tau} > {opt}");
    }
}

#[test]
fn qcr_bounds_the_optimum_and_keeps_feasible_objectives() {
    let mut rng = SplitMix64::seed_from_u64(5);
    for seed in 0..3 {
        let inst = generate(&GenSpec::mv(6, 3, Dominance::Zero, seed).with_sections(3)).unwrap();
        let r = bound_compare(&inst, &BoundOptions::default());
        let (_, opt) = enumerate_oracle(&inst).unwrap();
        let tau = r.bound_qcr.expect("QCR bound");
        assert!(tau <= opt + 1e-6, "{tau} > {opt}");
        let qp = r.qcr_params.expect("QCR parameters");
        let model = build_qcr(&inst, &qp).unwrap();
        assert!(is_numerically_psd(&model.hessian).unwrap());
        for _ in 0..20 {
            let p = common::binary_feasible_point(&inst, &mut rng);
            let f = objective(&inst, &p).unwrap();
            let g = model.objective(&model.embed(&inst, &p));
            assert!((g - f).abs() <= 1e-9 * (1.0 + f.abs()), "{g} vs {f}");
        }
    }
}

#[test]
fn sdp_a_builds_for_sectioned_instances() {
    let inst = generate(&GenSpec::mv(6, 3, Dominance::Plus, 1).with_sections(2)).unwrap();
    let p = build_sdp_a(&inst);
    p.check().unwrap();
    assert!(p.layout.span("w").unwrap().len() == inst.equality.as_ref().unwrap().rows());
}
