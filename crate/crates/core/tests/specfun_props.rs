//! Identities of the spherical Bessel family and Gauss–Legendre rules.

use metastab::specfun::{gauss_legendre, sph_h1_table, sph_j_table, sph_y_table};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

/// 20 moduli log-spaced in `[1e-2, 1e3]` times 10 arguments spanning
/// `(−π, π)` up to `1e-3` from the cut, with `|Im z|` clipped to 5.
fn wronskian_grid() -> Vec<Complex64> {
    let mut out = Vec::with_capacity(200);
    for i in 0..20 {
        let r = 10f64.powf(-2.0 + 5.0 * i as f64 / 19.0);
        for k in 0..10 {
            let theta = -PI + 1e-3 + k as f64 * (2.0 * PI - 2e-3) / 9.0;
            let z = Complex64::from_polar(r, theta);
            out.push(Complex64::new(z.re, z.im.clamp(-5.0, 5.0)));
        }
    }
    out
}

#[test]
fn wronskian_on_complex_grid() {
    let grid = wronskian_grid();
    assert_eq!(grid.len(), 200);
    let mut worst = 0.0f64;
    for z in grid {
        let j = sph_j_table(10, z).unwrap();
        let y = sph_y_table(10, z).unwrap();
        for n in 0..=10 {
            let w = z * z * (j[n].0 * y[n].1 - j[n].1 * y[n].0);
            worst = worst.max((w - 1.0).norm());
        }
    }
    assert!(worst <= 1e-10, "worst Wronskian error {worst:e}");
}

#[test]
fn hankel_wronskian_on_complex_grid() {
    for z in wronskian_grid() {
        let j = sph_j_table(10, z).unwrap();
        let h = sph_h1_table(10, z).unwrap();
        for n in 0..=10 {
            let w = z * z * (j[n].0 * h[n].1 - j[n].1 * h[n].0);
            let err = (w - Complex64::new(0.0, 1.0)).norm();
            assert!(err <= 1e-10, "n = {n}, z = {z}: {err:e}");
        }
    }
}

#[test]
fn gauss_legendre_degree_exactness() {
    for order in [1, 2, 3, 5, 8, 16, 32, 64] {
        let rule = gauss_legendre(order).unwrap();
        for k in 0..2 * order {
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            let got = rule.integrate(-1.0, 1.0, |x| x.powi(k as i32));
            assert!((got - exact).abs() <= 1e-13, "order {order}, degree {k}: {got} vs {exact}");
        }
    }
}

proptest! {
    #[test]
    fn parity_identities(re in -30.0f64..30.0, im in -5.0f64..5.0) {
        let z = Complex64::new(re, im);
        prop_assume!(z.norm() > 1e-3);
        let jp = sph_j_table(8, z).unwrap();
        let jm = sph_j_table(8, -z).unwrap();
        let yp = sph_y_table(8, z).unwrap();
        let ym = sph_y_table(8, -z).unwrap();
        for n in 0..=8 {
            let s = if n % 2 == 0 { 1.0 } else { -1.0 };
            let tol_j = 1e-12 * jp[n].0.norm().max(1e-300);
            let tol_y = 1e-12 * yp[n].0.norm();
            prop_assert!((jm[n].0 - s * jp[n].0).norm() <= tol_j, "j_{} at {}", n, z);
            prop_assert!((ym[n].0 + s * yp[n].0).norm() <= tol_y, "y_{} at {}", n, z);
        }
    }

    #[test]
    fn three_term_recurrence(re in 0.1f64..50.0, im in -5.0f64..5.0) {
        let z = Complex64::new(re, im);
        let j = sph_j_table(12, z).unwrap();
        let h = sph_h1_table(12, z).unwrap();
        for n in 1..12 {
            let c = (2 * n + 1) as f64 / z;
            let rj = j[n - 1].0 + j[n + 1].0 - c * j[n].0;
            let scale = j[n - 1].0.norm() + j[n + 1].0.norm() + (c * j[n].0).norm();
            prop_assert!(rj.norm() <= 1e-12 * scale);
            let rh = h[n - 1].0 + h[n + 1].0 - c * h[n].0;
            let scale = h[n - 1].0.norm() + h[n + 1].0.norm() + (c * h[n].0).norm();
            prop_assert!(rh.norm() <= 1e-12 * scale);
        }
    }
}
