//! Spherical Bessel and Hankel functions of complex argument, and
//! Gauss–Legendre quadrature.
//!
//! `j_n` is computed by Miller's downward recurrence normalized against the
//! closed forms of `j_0`/`j_1` (power series below `|z| = 0.5`); `y_n` and
//! `h¹_n` by upward recurrence from their closed forms. Derivatives use
//! `f_n' = f_{n-1} - (n+1)/z f_n` and `f_0' = -f_1`.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 5000;
const SERIES_RADIUS: f64 = 0.5;
const SERIES_TERMS: usize = 20;
const RESCALE_AT: f64 = 1e250;

/// Values and derivatives of `j_n`, `y_n`, `h¹_n` at one argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselEval {
    pub n: usize,
    pub z: Complex64,
    pub j: Complex64,
    pub dj: Complex64,
    pub y: Complex64,
    pub dy: Complex64,
    pub h1: Complex64,
    pub dh1: Complex64,
}

fn check_order(n: usize) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::Overflow(format!("order {n} exceeds supported maximum {MAX_ORDER}")));
    }
    Ok(())
}

fn check_finite(values: &[Complex64], what: &str, z: Complex64) -> Result<()> {
    if values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow(format!("{what} not representable at z = {z}")))
    }
}

/// `j_0 .. j_{n_max+1}` by power series (small `|z|`).
fn j_series(n_max: usize, z: Complex64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n_max + 2);
    let mz2 = -z * z * 0.5;
    let mut prefactor = Complex64::new(1.0, 0.0);
    for n in 0..=n_max + 1 {
        if n > 0 {
            prefactor *= z / (2 * n + 1) as f64;
        }
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for k in 1..SERIES_TERMS {
            term *= mz2 / (k * (2 * n + 2 * k + 1)) as f64;
            sum += term;
        }
        out.push(prefactor * sum);
    }
    out
}

fn j0_closed(z: Complex64) -> Complex64 {
    z.sin() / z
}

fn j1_closed(z: Complex64) -> Complex64 {
    z.sin() / (z * z) - z.cos() / z
}

/// `j_0 .. j_{n_max+1}` by Miller's downward recurrence.
fn j_miller(n_max: usize, z: Complex64) -> Vec<Complex64> {
    let top = n_max + 1;
    let start = top + 20usize.max((1.5 * z.norm()).ceil() as usize);
    let mut f = vec![Complex64::new(0.0, 0.0); start + 2];
    f[start] = Complex64::new(1e-30, 0.0);
    for k in (1..=start).rev() {
        f[k - 1] = f[k] * ((2 * k + 1) as f64) / z - f[k + 1];
        let mag = f[k - 1].norm();
        if mag > RESCALE_AT {
            let s = 1.0 / mag;
            for v in f[k - 1..].iter_mut() {
                *v *= s;
            }
        }
    }
    f.truncate(top + 1);
    let exact0 = j0_closed(z);
    let exact1 = j1_closed(z);
    let factor = if exact0.norm() >= exact1.norm() { exact0 / f[0] } else { exact1 / f[1] };
    for v in f.iter_mut() {
        *v *= factor;
    }
    f
}

fn j_values(n_max: usize, z: Complex64) -> Vec<Complex64> {
    if z.norm() < SERIES_RADIUS {
        j_series(n_max, z)
    } else {
        j_miller(n_max, z)
    }
}

fn with_derivatives(vals: &[Complex64], n_max: usize, z: Complex64) -> Vec<(Complex64, Complex64)> {
    (0..=n_max)
        .map(|n| {
            let d = if n == 0 { -vals[1] } else { vals[n - 1] - vals[n] * ((n + 1) as f64) / z };
            (vals[n], d)
        })
        .collect()
}

/// `(j_n(z), j_n'(z))` for `n = 0..=n_max`.
pub fn sph_j_table(n_max: usize, z: Complex64) -> Result<Vec<(Complex64, Complex64)>> {
    check_order(n_max)?;
    if z == Complex64::new(0.0, 0.0) {
        return Ok((0..=n_max)
            .map(|n| match n {
                0 => (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
                1 => (Complex64::new(0.0, 0.0), Complex64::new(1.0 / 3.0, 0.0)),
                _ => (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
            })
            .collect());
    }
    let vals = j_values(n_max, z);
    check_finite(&vals, "j_n", z)?;
    Ok(with_derivatives(&vals, n_max, z))
}

fn upward(n_max: usize, z: Complex64, f0: Complex64, f1: Complex64) -> Vec<Complex64> {
    let mut vals = Vec::with_capacity(n_max + 2);
    vals.push(f0);
    vals.push(f1);
    for k in 1..=n_max {
        let next = vals[k] * ((2 * k + 1) as f64) / z - vals[k - 1];
        vals.push(next);
    }
    vals
}

fn nonzero(z: Complex64, what: &str) -> Result<()> {
    if z == Complex64::new(0.0, 0.0) {
        Err(Error::InvalidInput(format!("{what} is singular at z = 0")))
    } else {
        Ok(())
    }
}

/// `(y_n(z), y_n'(z))` for `n = 0..=n_max`.
pub fn sph_y_table(n_max: usize, z: Complex64) -> Result<Vec<(Complex64, Complex64)>> {
    check_order(n_max)?;
    nonzero(z, "y_n")?;
    let y0 = -z.cos() / z;
    let y1 = -z.cos() / (z * z) - z.sin() / z;
    let vals = upward(n_max, z, y0, y1);
    check_finite(&vals, "y_n", z)?;
    Ok(with_derivatives(&vals, n_max, z))
}

/// `(h¹_n(z), h¹_n'(z))` for `n = 0..=n_max`.
///
/// Recurs upward from `h¹_0 = -i e^{iz}/z` rather than forming `j + i y`,
/// which cancels catastrophically for `Im z ≫ 1`.
pub fn sph_h1_table(n_max: usize, z: Complex64) -> Result<Vec<(Complex64, Complex64)>> {
    check_order(n_max)?;
    nonzero(z, "h1_n")?;
    let i = Complex64::new(0.0, 1.0);
    let e = (i * z).exp();
    let h0 = -i * e / z;
    let h1 = -e * (z + i) / (z * z);
    let vals = upward(n_max, z, h0, h1);
    check_finite(&vals, "h1_n", z)?;
    Ok(with_derivatives(&vals, n_max, z))
}

pub fn sph_bessel_j(n: usize, z: Complex64) -> Result<(Complex64, Complex64)> {
    Ok(sph_j_table(n, z)?[n])
}

pub fn sph_bessel_y(n: usize, z: Complex64) -> Result<(Complex64, Complex64)> {
    Ok(sph_y_table(n, z)?[n])
}

pub fn sph_hankel1(n: usize, z: Complex64) -> Result<(Complex64, Complex64)> {
    Ok(sph_h1_table(n, z)?[n])
}

pub fn bessel_eval(n: usize, z: Complex64) -> Result<BesselEval> {
    let (j, dj) = sph_bessel_j(n, z)?;
    let (y, dy) = sph_bessel_y(n, z)?;
    let (h1, dh1) = sph_hankel1(n, z)?;
    Ok(BesselEval { n, z, j, dj, y, dy, h1, dh1 })
}

/// Derivative of the Riccati–Bessel function `ψ(z) = z f(z)`: `f + z f'`.
#[inline]
pub fn riccati_derivative(f: Complex64, df: Complex64, z: Complex64) -> Complex64 {
    f + z * df
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Integrates `f` over `[a, b]` with the affinely mapped rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let terms: Vec<f64> = self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).collect();
        half * crate::numeric::pairwise_sum(&terms)
    }

    /// Mapped `(node, weight)` pairs on `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, half * w))
    }
}

pub const MAX_QUADRATURE_ORDER: usize = 512;

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn build_rule(order: usize) -> QuadratureRule {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let half = order.div_ceil(2);
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                let (_, d) = legendre_with_derivative(order, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[order - 1 - i] = x;
        weights[order - 1 - i] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    QuadratureRule { order, nodes, weights }
}

/// Gauss–Legendre rule of the given order (`1..=512`), computed once per
/// order and cached for the life of the process.
pub fn gauss_legendre(order: usize) -> Result<&'static QuadratureRule> {
    static TABLE: OnceLock<Vec<OnceLock<QuadratureRule>>> = OnceLock::new();
    if order == 0 || order > MAX_QUADRATURE_ORDER {
        return Err(Error::InvalidInput(format!(
            "Gauss-Legendre order {order} outside 1..={MAX_QUADRATURE_ORDER}"
        )));
    }
    let table = TABLE.get_or_init(|| (0..=MAX_QUADRATURE_ORDER).map(|_| OnceLock::new()).collect());
    Ok(table[order].get_or_init(|| build_rule(order)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn closed_form_values() {
        let (j0, _) = sph_bessel_j(0, c(1.0, 0.0)).unwrap();
        assert!(rel(j0, c(1f64.sin(), 0.0)) < 1e-14);
        let (j1, _) = sph_bessel_j(1, c(1.0, 0.0)).unwrap();
        assert!(rel(j1, c(1f64.sin() - 1f64.cos(), 0.0)) < 1e-14);
        let (y0, _) = sph_bessel_y(0, c(1.0, 0.0)).unwrap();
        assert!(rel(y0, c(-1f64.cos(), 0.0)) < 1e-14);
        let (h0, _) = sph_hankel1(0, c(1.0, 0.0)).unwrap();
        let want = -c(0.0, 1.0) * c(0.0, 1.0).exp();
        assert!(rel(h0, want) < 1e-14);
    }

    #[test]
    fn values_at_zero() {
        let t = sph_j_table(3, c(0.0, 0.0)).unwrap();
        assert_eq!(t[0].0, c(1.0, 0.0));
        assert_eq!(t[1].1, c(1.0 / 3.0, 0.0));
        assert_eq!(t[2].0, c(0.0, 0.0));
        assert!(sph_bessel_y(0, c(0.0, 0.0)).is_err());
    }

    #[test]
    fn series_and_recurrence_agree_at_the_switch() {
        for n in 0..8 {
            let z = c(0.4999, 0.01);
            let s = j_series(n + 1, z)[n];
            let m = j_miller(n + 1, z)[n];
            assert!(rel(s, m) < 1e-13, "n={n}: {s} vs {m}");
        }
    }

    #[test]
    fn known_value_higher_order() {
        // j_5(10) = -0.05553451162145216
        let (j5, _) = sph_bessel_j(5, c(10.0, 0.0)).unwrap();
        assert!((j5.re + 0.055_534_511_621_452_16).abs() < 1e-14, "{j5}");
        let (y3, _) = sph_bessel_y(3, c(2.5, 0.0)).unwrap();
        let expect = {
            // closed form: y_3 = (-15/z^4 + 6/z^2) cos z - (15/z^3 - 1/z) sin z
            let z: f64 = 2.5;
            (-15.0 / z.powi(4) + 6.0 / (z * z)) * z.cos() - (15.0 / z.powi(3) - 1.0 / z) * z.sin()
        };
        assert!((y3.re - expect).abs() < 1e-13 * expect.abs());
    }

    #[test]
    fn excessive_order_is_reported() {
        assert!(matches!(sph_bessel_j(5001, c(1.0, 0.0)), Err(Error::Overflow(_))));
        assert!(matches!(sph_bessel_y(300, c(1e-3, 0.0)), Err(Error::Overflow(_))));
    }

    #[test]
    fn gauss_legendre_small_orders() {
        let r1 = gauss_legendre(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - 2.0).abs() < 1e-15);
        let r2 = gauss_legendre(2).unwrap();
        assert!((r2.nodes[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((r2.nodes[0] + 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((r2.weights[0] - 1.0).abs() < 1e-15 && (r2.weights[1] - 1.0).abs() < 1e-15);
        let r4 = gauss_legendre(4).unwrap();
        let v = r4.integrate(-1.0, 1.0, |x| x.powi(6));
        assert!((v - 2.0 / 7.0).abs() <= 1e-14);
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(513).is_err());
    }
}
