//! The Cauchy complementing condition for a pair of positive definite
//! matrices meeting across the plane `⟨x, e⟩ = 0`.
//!
//! Two independent decision procedures live here:
//!
//! * [`check_complementing`] restricts the quadratic forms
//!   `q_A(e, ξ) = ⟨Ae,e⟩⟨Aξ,ξ⟩ − ⟨Ae,ξ⟩²` to the tangent plane and asks whether
//!   their difference is definite (a 2×2 determinant test);
//! * [`mode_oracle`] solves the constant-coefficient ODE pair obtained from a
//!   plane-wave ansatz along a given tangent direction and reports whether a
//!   nonzero decaying solution glues across the interface.
//!
//! [`agreement_scan`] runs the oracle over a refined tangent grid so the two
//! can be compared on random inputs.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    dot, eig_sym2, norm, scale, tangent_frame, SymMatrix2, SymMatrix3, TangentFrame, Vec3,
};
use crate::error::{Error, Result};

/// Relative threshold below which `det Q` counts as zero.
pub const DET_TOL: f64 = 1e-12;

/// Two uniformly elliptic coefficient matrices and the interface normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyPair {
    a1: SymMatrix3,
    a2: SymMatrix3,
    e: Vec3,
}

impl CauchyPair {
    pub fn new(a1: SymMatrix3, a2: SymMatrix3, e: Vec3) -> Result<Self> {
        for (name, a) in [("A1", &a1), ("A2", &a2)] {
            let min_eig = a.min_eigenvalue();
            if !(min_eig > 0.0) {
                return Err(Error::NotPositiveDefinite { what: name.into(), min_eig });
            }
        }
        let n = norm(e);
        if !((n - 1.0).abs() <= 1e-12) {
            return Err(Error::InvalidInput(format!(
                "normal direction must be a unit vector, |e| = {n}"
            )));
        }
        Ok(Self { a1, a2, e })
    }

    pub fn a1(&self) -> &SymMatrix3 {
        &self.a1
    }

    pub fn a2(&self) -> &SymMatrix3 {
        &self.a2
    }

    pub fn e(&self) -> Vec3 {
        self.e
    }

    /// The same pair with both matrices multiplied by `t > 0`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.a1.scaled(t), self.a2.scaled(t), self.e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CauchyStatus {
    Satisfied,
    Violated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyVerdict {
    pub status: CauchyStatus,
    /// `det Q / scale²`; positive exactly when the condition holds robustly.
    pub margin: f64,
    /// Unit tangent with `q_{A2} = q_{A1}`, present only when violated.
    pub witness: Option<Vec3>,
    /// `‖M_{A1}‖ + ‖M_{A2}‖` (Frobenius), the scale used for tolerances.
    pub scale: f64,
}

impl CauchyVerdict {
    pub fn is_satisfied(&self) -> bool {
        self.status == CauchyStatus::Satisfied
    }
}

/// `q_A(e, ξ) = ⟨Ae,e⟩⟨Aξ,ξ⟩ − ⟨Ae,ξ⟩²`.
pub fn cauchy_form(a: &SymMatrix3, e: Vec3, xi: Vec3) -> f64 {
    let ae = a.mul_vec(e);
    let b = dot(ae, xi);
    dot(ae, e) * a.form(xi, xi) - b * b
}

/// Matrix of `ξ ↦ q_A(e, ξ)` in the tangent basis `(t1, t2)`.
pub fn restriction_matrix(a: &SymMatrix3, frame: &TangentFrame) -> SymMatrix2 {
    let ae = a.mul_vec(frame.e);
    let aee = dot(ae, frame.e);
    let g1 = dot(ae, frame.t1);
    let g2 = dot(ae, frame.t2);
    SymMatrix2::new(
        aee * a.form(frame.t1, frame.t1) - g1 * g1,
        aee * a.form(frame.t1, frame.t2) - g1 * g2,
        aee * a.form(frame.t2, frame.t2) - g2 * g2,
    )
}

/// Decide the complementing condition using the canonical tangent frame of `e`.
pub fn check_complementing(pair: &CauchyPair) -> CauchyVerdict {
    let frame = tangent_frame(pair.e).expect("CauchyPair stores a unit normal");
    check_complementing_in_frame(pair, &frame)
}

/// Same as [`check_complementing`] with an explicitly supplied frame.
pub fn check_complementing_in_frame(pair: &CauchyPair, frame: &TangentFrame) -> CauchyVerdict {
    let m1 = restriction_matrix(&pair.a1, frame);
    let m2 = restriction_matrix(&pair.a2, frame);
    let q = m2.sub(&m1);
    let scale_ = m1.norm() + m2.norm();
    let det = q.det();
    let margin = det / (scale_ * scale_);
    if det > DET_TOL * scale_ * scale_ {
        return CauchyVerdict { status: CauchyStatus::Satisfied, margin, witness: None, scale: scale_ };
    }

    let eig = eig_sym2(&q);
    let [l1, l2] = eig.values;
    let [v1, v2] = eig.vectors;
    let uv = if q.norm() == 0.0 {
        [1.0, 0.0]
    } else if l1 >= 0.0 && l2 <= 0.0 {
        let a = (-l2).sqrt();
        let b = l1.sqrt();
        [a * v1[0] + b * v2[0], a * v1[1] + b * v2[1]]
    } else if l1.abs() <= l2.abs() {
        v1
    } else {
        v2
    };
    let w = frame.lift(uv);
    let witness = scale(1.0 / norm(w), w);
    CauchyVerdict { status: CauchyStatus::Violated, margin, witness: Some(witness), scale: scale_ }
}

/// Result of the half-space mode computation along one tangent direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOracle {
    pub nontrivial_mode: bool,
    /// Decay exponents `λ_j` of `v_j(t) = e^{λ_j t}` on `t > 0` in the
    /// coordinate that points away from the interface on side `j`.
    pub decay_rates: [Complex64; 2],
    /// The discriminants `s_j = √(a_j c_j − b_j²)`.
    pub s: [f64; 2],
}

/// Brute-force half-space test along the tangent direction `xi`.
///
/// With `u_j = e^{i⟨y,ξ⟩} v_j(t)` the equation `div(A_j ∇u_j) = 0` becomes
/// `a_j v'' + 2i b_j v' − c_j v = 0`. Its decaying root is
/// `λ_j = (−i b_j − s_j)/a_j`, where `t` measures distance from the interface
/// into side `j`. Matching values and conormal fluxes at `t = 0` admits a
/// nonzero pair exactly when `s_1 = s_2`.
pub fn mode_oracle(pair: &CauchyPair, xi: Vec3, tol: f64) -> Result<ModeOracle> {
    let e = pair.e;
    if dot(xi, e).abs() > 1e-10 || (norm(xi) - 1.0).abs() > 1e-10 {
        return Err(Error::NotTangent(xi));
    }
    let mut rates = [Complex64::new(0.0, 0.0); 2];
    let mut s = [0.0; 2];
    for (j, a) in [&pair.a1, &pair.a2].into_iter().enumerate() {
        let aj = a.form(e, e);
        let bj = a.form(e, xi);
        let cj = a.form(xi, xi);
        let disc = aj * cj - bj * bj;
        if !(aj > 0.0) || !(disc > 0.0) {
            return Err(Error::InvalidInput(format!(
                "degenerate coefficient matrix on side {}: a = {aj:e}, ac - b² = {disc:e}",
                j + 1
            )));
        }
        s[j] = disc.sqrt();
        rates[j] = Complex64::new(-s[j], -bj) / aj;
    }
    let nontrivial_mode = (s[0] - s[1]).abs() <= tol * (s[0] + s[1]);
    Ok(ModeOracle { nontrivial_mode, decay_rates: rates, s })
}

/// Outcome of scanning the tangent circle with [`mode_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanResult {
    pub mode_found: bool,
    /// Direction at which a mode was found, or the best candidate otherwise.
    pub direction: Vec3,
    /// `|s_1 − s_2| / (s_1 + s_2)` at `direction`.
    pub relative_gap: f64,
}

/// Search the tangent circle of `e` for a direction admitting a mode.
///
/// The circle is sampled at `n_grid` angles in `[0, π)` (`ξ` and `−ξ` are
/// equivalent). Sign changes of `s_2 − s_1` are bisected, and the grid
/// minimum of `|s_2 − s_1|` together with the eigen-directions of the
/// restricted difference form are refined by golden-section search.
pub fn agreement_scan(pair: &CauchyPair, n_grid: usize, tol: f64) -> Result<ScanResult> {
    let frame = tangent_frame(pair.e)?;
    let dir = |theta: f64| frame.lift([theta.cos(), theta.sin()]);
    let gap = |theta: f64| -> Result<(f64, ModeOracle)> {
        let o = mode_oracle(pair, dir(theta), tol)?;
        Ok((o.s[1] - o.s[0], o))
    };

    let n_grid = n_grid.max(4);
    let h = PI / n_grid as f64;
    let mut values = Vec::with_capacity(n_grid + 1);
    for k in 0..=n_grid {
        values.push(gap(k as f64 * h)?.0);
    }

    let mut best = ScanResult { mode_found: false, direction: dir(0.0), relative_gap: f64::INFINITY };
    let consider = |theta: f64, best: &mut ScanResult| -> Result<bool> {
        let (_, o) = gap(theta)?;
        let rel = (o.s[0] - o.s[1]).abs() / (o.s[0] + o.s[1]);
        if rel < best.relative_gap {
            *best = ScanResult { mode_found: o.nontrivial_mode, direction: dir(theta), relative_gap: rel };
        }
        Ok(o.nontrivial_mode)
    };

    for k in 0..n_grid {
        let (fa, fb) = (values[k], values[k + 1]);
        if fa == 0.0 || fa.signum() != fb.signum() {
            let root = bisect(|t| gap(t).map(|g| g.0).unwrap_or(f64::NAN), k as f64 * h, (k + 1) as f64 * h, fa);
            if consider(root, &mut best)? {
                return Ok(best);
            }
        }
    }

    let mut seeds = Vec::new();
    let k_min = (0..=n_grid)
        .min_by(|&i, &j| values[i].abs().total_cmp(&values[j].abs()))
        .unwrap_or(0);
    seeds.push(k_min as f64 * h);
    let q = restriction_matrix(&pair.a2, &frame).sub(&restriction_matrix(&pair.a1, &frame));
    for v in eig_sym2(&q).vectors {
        seeds.push(v[1].atan2(v[0]).rem_euclid(PI));
    }
    for theta0 in seeds {
        let theta = golden_min(|t| gap(t).map(|g| g.0.abs()).unwrap_or(f64::INFINITY), theta0 - h, theta0 + h);
        if consider(theta, &mut best)? {
            return Ok(best);
        }
    }
    Ok(best)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    if fa == 0.0 {
        return a;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-15 {
            break;
        }
    }
    0.5 * (a + b)
}

/// A random symmetric positive definite matrix with spectrum in
/// `[lo, hi]` (log-uniform) and a uniformly random eigenbasis.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> SymMatrix3 {
    let basis = random_rotation(rng);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let lambdas: [f64; 3] = std::array::from_fn(|_| rng.gen_range(llo..=lhi).exp());
    let mut out = SymMatrix3::scalar(0.0);
    for k in 0..3 {
        let v = basis[k];
        let outer = SymMatrix3::new(
            v[0] * v[0],
            v[0] * v[1],
            v[0] * v[2],
            v[1] * v[1],
            v[1] * v[2],
            v[2] * v[2],
        );
        out = out.add(&outer.scaled(lambdas[k]));
    }
    out
}

/// Uniformly distributed unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        let n = norm(v);
        if n > 1e-3 && n <= 1.0 {
            return scale(1.0 / n, v);
        }
    }
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [Vec3; 3] {
    let a = random_unit(rng);
    let f = tangent_frame(a).expect("unit vector");
    let theta = rng.gen_range(0.0..2.0 * PI);
    let g = f.rotated(theta);
    [a, g.t1, g.t2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const E3: Vec3 = [0.0, 0.0, 1.0];

    fn failing_pair() -> CauchyPair {
        CauchyPair::new(SymMatrix3::identity(), SymMatrix3::diag(4.0, 0.25, 1.0), E3).unwrap()
    }

    #[test]
    fn cauchy_form_examples() {
        assert_eq!(cauchy_form(&SymMatrix3::identity(), E3, [1.0, 0.0, 0.0]), 1.0);
        assert_eq!(cauchy_form(&SymMatrix3::diag(4.0, 0.25, 1.0), E3, [1.0, 2.0, 0.0]), 5.0);
        assert_eq!(cauchy_form(&SymMatrix3::scalar(2.0), E3, [1.0, 0.0, 0.0]), 4.0);
    }

    #[test]
    fn restriction_examples() {
        let f = tangent_frame(E3).unwrap();
        assert_eq!(restriction_matrix(&SymMatrix3::identity(), &f), SymMatrix2::new(1.0, 0.0, 1.0));
        assert_eq!(
            restriction_matrix(&SymMatrix3::diag(4.0, 0.25, 1.0), &f),
            SymMatrix2::new(4.0, 0.0, 0.25)
        );
        assert_eq!(restriction_matrix(&SymMatrix3::scalar(2.0), &f), SymMatrix2::new(4.0, 0.0, 4.0));
    }

    #[test]
    fn ordered_pair_is_satisfied() {
        for e in [E3, [1.0, 0.0, 0.0], [0.6, 0.0, 0.8]] {
            let p = CauchyPair::new(SymMatrix3::identity(), SymMatrix3::scalar(2.0), e).unwrap();
            let v = check_complementing(&p);
            assert!(v.is_satisfied());
            assert!(v.margin > 0.0);
            assert!(v.witness.is_none());
        }
    }

    #[test]
    fn constructed_pair_is_violated_with_expected_witness() {
        let p = failing_pair();
        let v = check_complementing(&p);
        assert_eq!(v.status, CauchyStatus::Violated);
        let w = v.witness.unwrap();
        let expected = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt(), 0.0];
        let aligned = (dot(w, expected).abs() - 1.0).abs();
        assert!(aligned < 1e-12, "witness {w:?}");
        let q1 = cauchy_form(p.a1(), E3, w);
        let q2 = cauchy_form(p.a2(), E3, w);
        assert!((q1 - q2).abs() <= 1e-9 * v.scale);
    }

    #[test]
    fn equal_pair_is_violated() {
        let p = CauchyPair::new(SymMatrix3::identity(), SymMatrix3::identity(), E3).unwrap();
        let v = check_complementing(&p);
        assert_eq!(v.status, CauchyStatus::Violated);
        assert_eq!(v.margin, 0.0);
        let w = v.witness.unwrap();
        assert!(dot(w, E3).abs() < 1e-12);
        assert!((norm(w) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let neg = SymMatrix3::scalar(-1.0);
        assert!(matches!(
            CauchyPair::new(neg, SymMatrix3::identity(), E3),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(CauchyPair::new(SymMatrix3::identity(), SymMatrix3::identity(), [0.0, 0.0, 2.0]).is_err());
        let p = failing_pair();
        assert!(matches!(mode_oracle(&p, E3, 1e-9), Err(Error::NotTangent(_))));
    }

    #[test]
    fn oracle_examples() {
        let p = CauchyPair::new(SymMatrix3::identity(), SymMatrix3::scalar(2.0), E3).unwrap();
        let o = mode_oracle(&p, [1.0, 0.0, 0.0], 1e-9).unwrap();
        assert!(!o.nontrivial_mode);
        assert_eq!(o.s, [1.0, 2.0]);
        assert!(o.decay_rates.iter().all(|l| l.re < 0.0));

        let xi = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt(), 0.0];
        let o = mode_oracle(&failing_pair(), xi, 1e-9).unwrap();
        assert!(o.nontrivial_mode);
        assert!((o.s[0] - 1.0).abs() < 1e-15 && (o.s[1] - 1.0).abs() < 1e-15);

        let same = CauchyPair::new(SymMatrix3::diag(1.0, 2.0, 3.0), SymMatrix3::diag(1.0, 2.0, 3.0), E3).unwrap();
        for k in 0..16 {
            let t = k as f64 * PI / 16.0;
            assert!(mode_oracle(&same, [t.cos(), t.sin(), 0.0], 1e-9).unwrap().nontrivial_mode);
        }
    }

    #[test]
    fn scan_finds_the_constructed_mode() {
        let r = agreement_scan(&failing_pair(), 720, 1e-9).unwrap();
        assert!(r.mode_found);
        let p = CauchyPair::new(SymMatrix3::identity(), SymMatrix3::scalar(2.0), E3).unwrap();
        assert!(!agreement_scan(&p, 720, 1e-9).unwrap().mode_found);
    }

    #[test]
    fn random_agreement_small_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let p = CauchyPair::new(random_spd(&mut rng, 0.1, 10.0), random_spd(&mut rng, 0.1, 10.0), random_unit(&mut rng)).unwrap();
            let verdict = check_complementing(&p);
            let scan = agreement_scan(&p, 720, 1e-9).unwrap();
            assert_eq!(!verdict.is_satisfied(), scan.mode_found, "{p:?} {verdict:?} {scan:?}");
        }
    }

    fn arb_spd() -> impl Strategy<Value = SymMatrix3> {
        any::<u64>().prop_map(|s| random_spd(&mut ChaCha8Rng::seed_from_u64(s), 0.05, 20.0))
    }

    fn arb_unit() -> impl Strategy<Value = Vec3> {
        any::<u64>().prop_map(|s| random_unit(&mut ChaCha8Rng::seed_from_u64(s)))
    }

    proptest! {
        #[test]
        fn discriminant_equals_cauchy_form(a in arb_spd(), e in arb_unit(), theta in 0.0..PI) {
            let xi = tangent_frame(e).unwrap().lift([theta.cos(), theta.sin()]);
            let p = CauchyPair::new(a, a, e).unwrap();
            let o = mode_oracle(&p, xi, 1e-9).unwrap();
            let q = cauchy_form(&a, e, xi);
            prop_assert!((o.s[0] * o.s[0] - q).abs() <= 1e-12 * q.abs().max(1e-300) * 10.0);
        }

        #[test]
        fn restriction_represents_form(a in arb_spd(), e in arb_unit(), u in -3.0..3.0f64, v in -3.0..3.0f64) {
            let f = tangent_frame(e).unwrap();
            let m = restriction_matrix(&a, &f);
            let lhs = cauchy_form(&a, e, f.lift([u, v]));
            let rhs = m.form([u, v]);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + m.norm() * (u * u + v * v)));
            prop_assert!(eig_sym2(&m).values[1] > 0.0);
        }

        #[test]
        fn verdict_is_frame_invariant(a1 in arb_spd(), a2 in arb_spd(), e in arb_unit(), angle in 0.0..2.0 * PI) {
            let p = CauchyPair::new(a1, a2, e).unwrap();
            let f = tangent_frame(e).unwrap();
            let v0 = check_complementing_in_frame(&p, &f);
            let v1 = check_complementing_in_frame(&p, &f.rotated(angle));
            prop_assert_eq!(v0.status, v1.status);
            prop_assert!((v0.margin - v1.margin).abs() <= 1e-12 * v0.margin.abs().max(1.0));
        }

        #[test]
        fn ordered_perturbation_is_sufficient(a1 in arb_spd(), p in arb_spd(), e in arb_unit(), c in 1e-3..10.0f64) {
            let a2 = a1.add(&p).add(&SymMatrix3::scalar(c));
            let pair = CauchyPair::new(a1, a2, e).unwrap();
            prop_assert!(check_complementing(&pair).is_satisfied());
        }

        #[test]
        fn status_is_scale_invariant(a1 in arb_spd(), a2 in arb_spd(), e in arb_unit(), t in 1e-3..1e3f64) {
            let p = CauchyPair::new(a1, a2, e).unwrap();
            let v0 = check_complementing(&p);
            let v1 = check_complementing(&p.scaled(t).unwrap());
            prop_assert_eq!(v0.status, v1.status);
        }

        #[test]
        fn witness_equalizes_forms(a1 in arb_spd(), a2 in arb_spd(), e in arb_unit()) {
            let p = CauchyPair::new(a1, a2, e).unwrap();
            let v = check_complementing(&p);
            if let Some(w) = v.witness {
                prop_assert!(dot(w, e).abs() <= 1e-12);
                let d = cauchy_form(&a1, e, w) - cauchy_form(&a2, e, w);
                prop_assert!(d.abs() <= 1e-9 * v.scale, "gap {d:e}");
            }
        }
    }
}
