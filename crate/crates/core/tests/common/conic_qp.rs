use rand::Rng;
use rand_xoshiro::SplitMix64;
use semicont::conic::{svec_len, svec_to_matrix, AffineExpr, ConicBuilder, ConicProblem, ConicSolution};
use semicont::linalg::{cholesky, dot, min_eigenvalue, Matrix, SymMatrix};
use semicont::qp::QpProblem;

/// Strictly convex QP with a known interior point, so it is feasible.
pub fn random_qp(rng: &mut SplitMix64) -> QpProblem {
    let n = rng.gen_range(1..=30);
    let k = rng.gen_range(1..=n + 2);
    let m = Matrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = SymMatrix::from_lower_fn(n, |i, j| {
        (0..k).map(|r| m.get(r, i) * m.get(r, j)).sum::<f64>() + if i == j { 0.1 } else { 0.0 }
    });
    let linear: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut p = QpProblem::new(h, linear);
    let z0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for i in 0..n {
        match rng.gen_range(0..3) {
            0 => {}
            1 => p.lower[i] = z0[i] - rng.gen_range(0.1..1.0),
            _ => {
                p.lower[i] = z0[i] - rng.gen_range(0.1..1.0);
                p.upper[i] = z0[i] + rng.gen_range(0.1..1.0);
            }
        }
    }
    for _ in 0..rng.gen_range(0..=n) {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rhs = dot(&row, &z0) + rng.gen_range(0.0..1.0);
        p.push_ineq(&row, rhs);
    }
    for _ in 0..rng.gen_range(0..=n / 3) {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rhs = dot(&row, &z0);
        p.push_eq(&row, rhs);
    }
    p
}

/// The same QP as a cone program, with the quadratic moved into a rotated
/// second-order cone: `z'Hz / 2 <= t  <=>  (t + 1/2, t - 1/2, L'z) in SOC`.
pub fn as_conic(p: &QpProblem) -> ConicProblem {
    let n = p.dim();
    let l = cholesky(&p.hessian).unwrap().factor_matrix();
    let mut b = ConicBuilder::new();
    let z = b.add_var("z", n).start;
    let t = b.add_var("t", 1).start;
    for i in 0..n {
        b.minimize(z + i, p.linear[i]);
    }
    b.minimize(t, 1.0);
    let mut cone = vec![AffineExpr::var(t, 1.0).plus_const(0.5), AffineExpr::var(t, 1.0).plus_const(-0.5)];
    for j in 0..n {
        let mut e = AffineExpr::zero();
        for i in j..n {
            e.add_term(z + i, l.get(i, j));
        }
        cone.push(e);
    }
    b.soc(cone);
    let row_expr = |row: &[f64], rhs: f64| {
        let mut e = AffineExpr::constant(rhs);
        for (i, &a) in row.iter().enumerate() {
            e.add_term(z + i, -a);
        }
        e
    };
    for k in 0..p.ineq_rhs.len() {
        b.nonneg(row_expr(p.ineq_matrix.row(k), p.ineq_rhs[k]));
    }
    for k in 0..p.eq_rhs.len() {
        b.zero(row_expr(p.eq_matrix.row(k), p.eq_rhs[k]));
    }
    for i in 0..n {
        if p.lower[i].is_finite() {
            b.nonneg(AffineExpr::var(z + i, 1.0).plus_const(-p.lower[i]));
        }
        if p.upper[i].is_finite() {
            b.nonneg(AffineExpr::constant(p.upper[i]).plus(z + i, -1.0));
        }
    }
    b.build()
}

/// `A z + s = b` and `s` in the cone, both within `eps`.
pub fn assert_conic_certificate(p: &ConicProblem, s: &ConicSolution, eps: f64) {
    let az = p.constraint_matrix.mul_vec(&s.z);
    let scale = 1.0 + p.constraint_rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..az.len() {
        assert!((az[k] + s.slack[k] - p.constraint_rhs[k]).abs() <= eps * scale, "row {k}");
    }
    let mut off = p.cones.zero_dim;
    for k in 0..p.cones.zero_dim {
        assert!(s.slack[k].abs() <= eps * scale);
    }
    for k in off..off + p.cones.nonneg_dim {
        assert!(s.slack[k] >= -eps * scale);
    }
    off += p.cones.nonneg_dim;
    for &d in &p.cones.soc_dims {
        let blk = &s.slack[off..off + d];
        assert!(blk[0] >= dot(&blk[1..], &blk[1..]).sqrt() - eps * scale);
        off += d;
    }
    for &side in &p.cones.psd_dims {
        let m = svec_to_matrix(&s.slack[off..off + svec_len(side)], side);
        assert!(min_eigenvalue(&m).unwrap() >= -1e-7 * (1.0 + m.norm_inf()));
        off += svec_len(side);
    }
}
