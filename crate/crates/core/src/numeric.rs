//! Deterministic reductions shared by the sweep drivers.

use num_complex::Complex64;

/// Pairwise (cascade) summation in fixed index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1..=8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

pub fn pairwise_sum_complex(values: &[Complex64]) -> Complex64 {
    match values.len() {
        0 => Complex64::new(0.0, 0.0),
        1..=8 => values.iter().sum(),
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum_complex(lo) + pairwise_sum_complex(hi)
        }
    }
}

pub type CVec3 = [Complex64; 3];

pub fn czero3() -> CVec3 {
    [Complex64::new(0.0, 0.0); 3]
}

pub fn cadd3(a: CVec3, b: CVec3) -> CVec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn csub3(a: CVec3, b: CVec3) -> CVec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn cscale3(s: Complex64, a: CVec3) -> CVec3 {
    [s * a[0], s * a[1], s * a[2]]
}

pub fn ccross3(a: CVec3, b: CVec3) -> CVec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Hermitian norm `sqrt(Σ |a_i|²)`.
pub fn cnorm3(a: CVec3) -> f64 {
    (a[0].norm_sqr() + a[1].norm_sqr() + a[2].norm_sqr()).sqrt()
}

pub fn real_to_c3(a: [f64; 3]) -> CVec3 {
    [Complex64::new(a[0], 0.0), Complex64::new(a[1], 0.0), Complex64::new(a[2], 0.0)]
}
