use std::f64::consts::TAU;

use ligament_bands::asymptotics::{
    lambda_prime, predicted_band, rigid_corrections, rigid_coupling_vectors, rigid_kernel_vectors, Convention,
    CorrectionCurve, CouplingVector, MultiplicityMatrix,
};
use num_complex::Complex64 as C;
use proptest::prelude::*;

fn spd() -> impl Strategy<Value = [[f64; 3]; 3]> {
    (prop::array::uniform9(-1.0..1.0f64), 0.05..1.0f64).prop_map(|(l, shift)| {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..3).map(|k| l[3 * i + k] * l[3 * j + k]).sum();
            }
            m[i][i] += shift;
        }
        m
    })
}

fn trace() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-2.0..2.0f64)
}

fn convention() -> impl Strategy<Value = Convention> {
    prop_oneof![Just(Convention::Factor1), Just(Convention::Factor2)]
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-11 * scale.max(1.0)
}

proptest! {
    #[test]
    fn eigenfunction_sign_does_not_change_the_correction(
        top in trace(), bottom in trace(), m in spd(), eta in 0.0..TAU, lambda in 0.0..50.0f64,
        a in prop_oneof![Just(0.0), Just(1.0)], conv in convention(),
    ) {
        let cv = CouplingVector::from_traces(top, bottom);
        let neg = CouplingVector::from_traces(top.map(|v| -v), bottom.map(|v| -v));
        let x = lambda_prime(lambda, a, &cv, &m, eta, conv);
        let y = lambda_prime(lambda, a, &neg, &m, eta, conv);
        prop_assert!(close(x, y, x.abs()));
    }

    #[test]
    fn correction_is_bounded_below_by_the_volume_term(
        top in trace(), bottom in trace(), m in spd(), eta in 0.0..TAU, lambda in 0.0..50.0f64,
        a in prop_oneof![Just(0.0), Just(1.0)], conv in convention(),
    ) {
        let cv = CouplingVector::from_traces(top, bottom);
        let x = lambda_prime(lambda, a, &cv, &m, eta, conv);
        prop_assert!(x.is_finite());
        prop_assert!(x >= 2.0 * a * lambda - 1e-12 * (1.0 + x.abs()));
    }

    #[test]
    fn correction_is_even_in_eta(
        top in trace(), bottom in trace(), m in spd(), eta in 0.0..TAU, conv in convention(),
    ) {
        let cv = CouplingVector::from_traces(top, bottom);
        let x = lambda_prime(3.0, 0.0, &cv, &m, eta, conv);
        let y = lambda_prime(3.0, 0.0, &cv, &m, TAU - eta, conv);
        prop_assert!(close(x, y, x.abs()));
    }

    #[test]
    fn curve_is_a_cosine_inside_its_band(
        top in trace(), bottom in trace(), m in spd(), lambda in 0.0..50.0f64, h in 0.01..0.1f64,
        a in prop_oneof![Just(0.0), Just(1.0)], conv in convention(),
    ) {
        let cv = CouplingVector::from_traces(top, bottom);
        let etas: Vec<f64> = (0..=32).map(|i| TAU * i as f64 / 32.0).collect();
        let curve = CorrectionCurve::new(0, lambda, a, &cv, &m, conv, &etas);
        let band = predicted_band(&curve, h);
        for (&e, &v) in curve.etas.iter().zip(&curve.values) {
            prop_assert!(close(v, curve.c0 + curve.c1 * e.cos(), v.abs()));
            prop_assert!(close(v, lambda_prime(lambda, a, &cv, &m, e, conv), v.abs()));
            let d = lambda + h * v;
            prop_assert!(d >= band.lower - 1e-12 * d.abs() && d <= band.upper + 1e-12 * d.abs());
        }
    }

    #[test]
    fn one_dimensional_multiplicity_matrix_reproduces_the_simple_formula(
        top in trace(), bottom in trace(), m in spd(), eta in 0.0..TAU, lambda in 0.0..50.0f64,
        a in prop_oneof![Just(0.0), Just(1.0)], conv in convention(),
    ) {
        let cv = CouplingVector::from_traces(top, bottom);
        let b = MultiplicityMatrix::new(std::slice::from_ref(&cv), &m, eta).unwrap();
        let x = b.corrections(lambda, a, conv)[0];
        let y = lambda_prime(lambda, a, &cv, &m, eta, conv);
        prop_assert!(close(x, y, y.abs()));
    }

    #[test]
    fn multiplicity_matrix_is_hermitian_psd_with_rank_at_most_three(
        traces in prop::collection::vec((trace(), trace()), 1..7), m in spd(), eta in 0.0..TAU,
    ) {
        let cvs: Vec<CouplingVector> = traces.iter().map(|(t, b)| CouplingVector::from_traces(*t, *b)).collect();
        let b = MultiplicityMatrix::new(&cvs, &m, eta).unwrap();
        let n = b.dim();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((b.matrix[i][j] - b.matrix[j][i].conj()).norm() < 1e-12 * (1.0 + b.matrix[i][j].norm()));
            }
        }
        let top = b.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        prop_assert!(b.eigenvalues.iter().all(|&v| v >= -1e-12 * top.max(1.0)));
        prop_assert!(b.rank(1e-9) <= 3);
    }

    #[test]
    fn rigid_closed_form_matches_the_multiplicity_matrix(
        t in 0.5..3.0f64, rot in prop::array::uniform3(0.5..3.0f64), m in spd(), eta in 0.0..TAU,
        conv in convention(),
    ) {
        // translations share one normalization
        let betas = [t, t, t, rot[0], rot[1], rot[2]];
        let cvs = rigid_coupling_vectors(&betas);
        let b = MultiplicityMatrix::new(&cvs, &m, eta).unwrap();
        let mut direct = b.corrections(0.0, 0.0, conv);
        direct.sort_by(f64::total_cmp);
        let closed = rigid_corrections(&betas, &m, eta, conv);
        let scale = closed[5].abs().max(1.0);
        for (x, y) in direct.iter().zip(&closed) {
            prop_assert!((x - y).abs() <= 1e-10 * scale);
        }
        for kv in rigid_kernel_vectors(&betas, eta) {
            let r = b.apply(&kv);
            let nv = kv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(r.iter().all(|z| z.norm() <= 1e-10 * scale * nv.max(1.0)));
        }
    }

    #[test]
    fn unitary_change_of_eigenbasis_leaves_the_splitting_unchanged(
        traces in prop::collection::vec((trace(), trace()), 2..4), m in spd(), eta in 0.0..TAU,
        angle in 0.0..TAU, phase in 0.0..TAU,
    ) {
        let cvs: Vec<CouplingVector> = traces.iter().map(|(t, b)| CouplingVector::from_traces(*t, *b)).collect();
        let b = MultiplicityMatrix::new(&cvs, &m, eta).unwrap();
        let mut jumps: Vec<[C; 3]> = cvs.iter().map(|c| c.jump(eta)).collect();
        // a complex Givens rotation of the first two basis functions
        let (c, s) = (angle.cos(), C::from_polar(angle.sin(), phase));
        let (j0, j1) = (jumps[0], jumps[1]);
        jumps[0] = std::array::from_fn(|i| j0[i] * c - s.conj() * j1[i]);
        jumps[1] = std::array::from_fn(|i| s * j0[i] + j1[i] * c);
        let r = MultiplicityMatrix::from_jumps(&jumps, &m, eta).unwrap();
        let top = b.eigenvalues.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        for (x, y) in b.eigenvalues.iter().zip(&r.eigenvalues) {
            prop_assert!((x - y).abs() <= 1e-11 * top);
        }
    }
}

#[test]
fn factor2_doubles_the_junction_term() {
    let m = [[0.7, 0.1, 0.0], [0.1, 0.6, 0.05], [0.0, 0.05, 0.4]];
    let cv = CouplingVector::from_traces([0.3, -0.2, 0.9], [0.1, 0.4, -0.5]);
    for eta in [0.0, 1.0, 2.5] {
        let f1 = lambda_prime(0.0, 0.0, &cv, &m, eta, Convention::Factor1);
        let f2 = lambda_prime(0.0, 0.0, &cv, &m, eta, Convention::Factor2);
        assert!((f2 - 2.0 * f1).abs() < 1e-14);
    }
}
