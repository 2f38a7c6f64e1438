//! Numerical checks of two analytic inequalities.
//!
//! The anti-curl `F(x) = −∫₀¹ t x × f(tx) dt` inverts the curl on
//! divergence-free fields in the unit ball, and satisfies the weighted bound
//! `∫|F|² ≤ C ∫(1−|x|)^α |f|²` for `0 ≤ α < 2`. The trace estimate bounds
//! `‖u·ν‖²_{H^{-1/2}}` of a field on the half-space `{x₃ > 0}` by
//! `‖u‖(‖u‖ + ‖div u‖)`; here the half-space is modelled by the box
//! `[−π,π]² × [0,π]`, periodic in `x₁, x₂`, so the `H^{-1/2}` norm of the trace is
//! exact in the discrete Fourier basis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::algebra::{cross, dot, norm, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::specfun::gauss_legendre;

/// Default Gauss–Legendre order for the anti-curl line integral.
pub const ANTI_CURL_ORDER: usize = 64;

/// Monomial `c · x^i y^j z^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: [u32; 3],
}

/// Scalar polynomial in three variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

fn ipow(x: f64, p: u32) -> f64 {
    x.powi(p as i32)
}

impl Polynomial {
    pub fn new(terms: Vec<Monomial>) -> Self {
        Polynomial { terms }
    }

    pub fn monomial(coef: f64, powers: [u32; 3]) -> Self {
        Polynomial { terms: vec![Monomial { coef, powers }] }
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|t| t.powers.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * ipow(x[0], t.powers[0]) * ipow(x[1], t.powers[1]) * ipow(x[2], t.powers[2]))
            .sum()
    }

    pub fn derivative(&self, axis: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.powers[axis] > 0)
            .map(|t| {
                let mut powers = t.powers;
                powers[axis] -= 1;
                Monomial { coef: t.coef * t.powers[axis] as f64, powers }
            })
            .collect();
        Polynomial { terms }
    }
}

/// Divergence-free fields on the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestField {
    /// `f = ∇×G` for a polynomial vector potential `G`.
    CurlOfPolynomial { id: String, potential: [Polynomial; 3] },
    /// `f = k²(1−r)e^{−k(1−r)} (x × a)`, concentrated where `1 − |x| ≈ 1/k`.
    BoundaryConcentrated { k: f64, axis: Vec3 },
}

impl TestField {
    /// `f = (0, 0, 1) = ∇×(−y/2, x/2, 0)`.
    pub fn uniform_z() -> Self {
        TestField::CurlOfPolynomial {
            id: "uniform_z".into(),
            potential: [
                Polynomial::monomial(-0.5, [0, 1, 0]),
                Polynomial::monomial(0.5, [1, 0, 0]),
                Polynomial::default(),
            ],
        }
    }

    /// `f = (0, 0, x₁) = ∇×(0, x₁²/2, 0)`.
    pub fn shear_z() -> Self {
        TestField::CurlOfPolynomial {
            id: "shear_z".into(),
            potential: [Polynomial::default(), Polynomial::monomial(0.5, [2, 0, 0]), Polynomial::default()],
        }
    }

    pub fn id(&self) -> String {
        match self {
            TestField::CurlOfPolynomial { id, .. } => id.clone(),
            TestField::BoundaryConcentrated { k, .. } => format!("boundary_k{k}"),
        }
    }

    pub fn eval(&self, x: Vec3) -> Vec3 {
        match self {
            TestField::CurlOfPolynomial { potential: g, .. } => {
                let d = |c: usize, a: usize| g[c].derivative(a).eval(x);
                [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)]
            }
            TestField::BoundaryConcentrated { k, axis } => {
                let s = 1.0 - norm(x);
                let g = k * k * s * (-k * s).exp();
                let c = cross(x, *axis);
                [g * c[0], g * c[1], g * c[2]]
            }
        }
    }

    /// Analytic Jacobian `J[i][j] = ∂_j f_i`.
    pub fn jacobian(&self, x: Vec3) -> Mat3 {
        let mut jac = [[0.0; 3]; 3];
        match self {
            TestField::CurlOfPolynomial { potential: g, .. } => {
                let dd = |c: usize, a: usize, b: usize| g[c].derivative(a).derivative(b).eval(x);
                for (j, _) in [0, 1, 2].iter().enumerate() {
                    jac[0][j] = dd(2, 1, j) - dd(1, 2, j);
                    jac[1][j] = dd(0, 2, j) - dd(2, 0, j);
                    jac[2][j] = dd(1, 0, j) - dd(0, 1, j);
                }
            }
            TestField::BoundaryConcentrated { k, axis } => {
                let r = norm(x);
                let s = 1.0 - r;
                let g = k * k * s * (-k * s).exp();
                // d g / d r = −k²(1 − k s) e^{−k s}
                let dg = -k * k * (1.0 - k * s) * (-k * s).exp();
                let c = cross(x, *axis);
                let a = axis;
                // ∂_j (x × a)_i = ε_{i j m} a_m
                let eps = [[0.0, a[2], -a[1]], [-a[2], 0.0, a[0]], [a[1], -a[0], 0.0]];
                for i in 0..3 {
                    for j in 0..3 {
                        let radial = if r > 0.0 { dg * x[j] / r * c[i] } else { 0.0 };
                        jac[i][j] = radial + g * eps[i][j];
                    }
                }
            }
        }
        jac
    }

    pub fn divergence(&self, x: Vec3) -> f64 {
        let j = self.jacobian(x);
        j[0][0] + j[1][1] + j[2][2]
    }
}

/// `F(x) = −∫₀¹ t x × f(tx) dt` by Gauss–Legendre of the given order.
pub fn anti_curl(f: &TestField, x: Vec3, order: usize) -> Result<Vec3> {
    if !(norm(x) < 1.0) {
        return Err(Error::InvalidInput(format!("anti-curl point {x:?} is not inside the unit ball")));
    }
    let rule = gauss_legendre(order)?;
    let mut acc = [0.0; 3];
    for (t, w) in rule.mapped(0.0, 1.0) {
        let ft = f.eval([t * x[0], t * x[1], t * x[2]]);
        let c = cross(x, ft);
        for a in 0..3 {
            acc[a] -= w * t * c[a];
        }
    }
    Ok(acc)
}

/// [`anti_curl`] with an order-doubling convergence check.
pub fn anti_curl_checked(f: &TestField, x: Vec3, order: usize) -> Result<Vec3> {
    let a = anti_curl(f, x, order)?;
    let b = anti_curl(f, x, (2 * order).min(crate::specfun::MAX_QUADRATURE_ORDER))?;
    let diff = norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
    if diff > 1e-10 * norm(b).max(1e-300) && diff > 1e-14 {
        return Err(Error::Quadrature(format!("anti-curl at {x:?} changed by {diff:e} under order doubling")));
    }
    Ok(b)
}

/// Central-difference curl of `g` at `x` with step `h`.
pub fn fd_curl<G: Fn(Vec3) -> Result<Vec3>>(g: G, x: Vec3, h: f64) -> Result<Vec3> {
    let mut d = [[0.0; 3]; 3];
    for a in 0..3 {
        let mut xp = x;
        let mut xm = x;
        xp[a] += h;
        xm[a] -= h;
        let (gp, gm) = (g(xp)?, g(xm)?);
        for c in 0..3 {
            d[a][c] = (gp[c] - gm[c]) / (2.0 * h);
        }
    }
    Ok([d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]])
}

/// Product quadrature on the unit ball: graded radial panels toward `r = 1`,
/// Gauss–Legendre in `cos θ`, trapezoid in `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallQuadrature {
    /// Radial panels `[1 − 2^{-j}, 1 − 2^{-j-1}]` for `j < graded_panels`, then one to `r = 1`.
    pub graded_panels: usize,
    pub radial_order: usize,
    pub theta_order: usize,
    pub phi_points: usize,
    pub line_order: usize,
}

impl Default for BallQuadrature {
    fn default() -> Self {
        BallQuadrature { graded_panels: 10, radial_order: 16, theta_order: 12, phi_points: 24, line_order: ANTI_CURL_ORDER }
    }
}

impl BallQuadrature {
    fn nodes(&self) -> Result<Vec<(Vec3, f64)>> {
        let radial = gauss_legendre(self.radial_order)?;
        let polar = gauss_legendre(self.theta_order)?;
        let mut cuts = vec![0.0];
        for j in 1..=self.graded_panels {
            cuts.push(1.0 - 0.5f64.powi(j as i32));
        }
        cuts.push(1.0);
        let dphi = 2.0 * PI / self.phi_points as f64;
        let mut out = Vec::new();
        for w in cuts.windows(2) {
            for (r, wr) in radial.mapped(w[0], w[1]) {
                for (c, wc) in polar.mapped(-1.0, 1.0) {
                    let s = (1.0 - c * c).sqrt();
                    for k in 0..self.phi_points {
                        let phi = dphi * k as f64;
                        out.push(([r * s * phi.cos(), r * s * phi.sin(), r * c], wr * wc * dphi * r * r));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Numerator and weighted denominators of the anti-curl ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedIntegrals {
    /// `∫_{B₁} |F|²`.
    pub anti_curl_sq: f64,
    /// `∫_{B₁} (1 − |x|)^α |f|²` per requested `α`.
    pub weighted: Vec<(f64, f64)>,
}

/// Computes `∫|F|²` and `∫(1−|x|)^α|f|²` for several `α` on one node set.
pub fn weighted_integrals(f: &TestField, alphas: &[f64], quad: BallQuadrature) -> Result<WeightedIntegrals> {
    for &a in alphas {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidInput(format!("weight exponent {a} must be finite and >= 0")));
        }
    }
    let nodes = quad.nodes()?;
    let rows: Result<Vec<(f64, Vec<f64>)>> = nodes
        .par_iter()
        .map(|&(x, w)| {
            let big_f = anti_curl(f, x, quad.line_order)?;
            let fx = f.eval(x);
            let f2 = dot(fx, fx);
            let d = 1.0 - norm(x);
            Ok((w * dot(big_f, big_f), alphas.iter().map(|&a| w * d.powf(a) * f2).collect()))
        })
        .collect();
    let rows = rows?;
    let num = pairwise_sum(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let weighted = alphas
        .iter()
        .enumerate()
        .map(|(i, &a)| (a, pairwise_sum(&rows.iter().map(|r| r.1[i]).collect::<Vec<_>>())))
        .collect();
    Ok(WeightedIntegrals { anti_curl_sq: num, weighted })
}

/// `∫_{B₁}|F|² / ∫_{B₁}(1−|x|)^α|f|²`.
pub fn weighted_ratio(f: &TestField, alpha: f64, quad: BallQuadrature) -> Result<f64> {
    let w = weighted_integrals(f, &[alpha], quad)?;
    let den = w.weighted[0].1;
    if den <= 0.0 {
        return Err(Error::InvalidInput(format!("zero weighted norm for field {}", f.id())));
    }
    Ok(w.anti_curl_sq / den)
}

/// One `(field, α, k, ratio)` row of a concentration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub field: String,
    pub alpha: f64,
    pub k: f64,
    pub ratio: f64,
}

/// Ratios for the boundary-concentrated family over `ks` and `alphas`.
pub fn concentration_sweep(ks: &[f64], alphas: &[f64], axis: Vec3, quad: BallQuadrature) -> Result<Vec<RatioRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let f = TestField::BoundaryConcentrated { k, axis };
        let w = weighted_integrals(&f, alphas, quad)?;
        for &(alpha, den) in &w.weighted {
            if den <= 0.0 {
                return Err(Error::InvalidInput(format!("zero weighted norm at k = {k}")));
            }
            rows.push(RatioRow { field: f.id(), alpha, k, ratio: w.anti_curl_sq / den });
        }
    }
    Ok(rows)
}

/// `max_k ratio(k) / ratio(k_first)` per `α`: how much the ratio grows along
/// the family.
pub fn growth_factors(rows: &[RatioRow]) -> Vec<(f64, f64)> {
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    alphas
        .into_iter()
        .map(|a| {
            let sel: Vec<&RatioRow> = rows.iter().filter(|r| r.alpha == a).collect();
            let first = sel[0].ratio;
            let max = sel.iter().map(|r| r.ratio).fold(f64::MIN, f64::max);
            (a, max / first)
        })
        .collect()
}

/// Deterministic polynomial corpus: `∇×G` for random `G` of degree ≤ 4.
pub fn polynomial_corpus(count: usize, seed: u64) -> Vec<TestField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![TestField::uniform_z(), TestField::shear_z()];
    while out.len() < count {
        let mut potential: [Polynomial; 3] = Default::default();
        for comp in potential.iter_mut() {
            for _ in 0..4 {
                let mut powers = [0u32; 3];
                let deg = rng.gen_range(1..=4u32);
                for _ in 0..deg {
                    powers[rng.gen_range(0..3)] += 1;
                }
                comp.terms.push(Monomial { coef: rng.gen_range(-1.0..1.0), powers });
            }
        }
        out.push(TestField::CurlOfPolynomial { id: format!("poly_{}", out.len()), potential });
    }
    out
}

/// `exp(1 − 1/(1 − s²))` for `s < 1`, else 0, with its gradient factor.
fn bump(s2: f64) -> (f64, f64) {
    if s2 >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - s2;
    let v = (1.0 - 1.0 / q).exp();
    // d v / d(s²) = −v / q²
    (v, -v / (q * q))
}

/// One term `amplitude · φ((x − c)/ρ) · cos(w·x)` in component `component`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabTerm {
    pub component: usize,
    pub amplitude: f64,
    pub center: Vec3,
    pub radius: f64,
    pub wave: Vec3,
}

impl SlabTerm {
    fn value_and_gradient(&self, x: Vec3) -> (f64, Vec3) {
        let d = [x[0] - self.center[0], x[1] - self.center[1], x[2] - self.center[2]];
        let rho2 = self.radius * self.radius;
        let (phi, dphi) = bump(dot(d, d) / rho2);
        if phi == 0.0 {
            return (0.0, [0.0; 3]);
        }
        let phase = dot(self.wave, x);
        let (c, s) = (phase.cos(), phase.sin());
        let a = self.amplitude;
        let grad = [0, 1, 2].map(|j| a * (dphi * 2.0 * d[j] / rho2 * c - phi * self.wave[j] * s));
        (a * phi * c, grad)
    }
}

/// Smooth compactly supported field on the slab `[−π,π]² × [0,π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabField {
    pub id: String,
    pub terms: Vec<SlabTerm>,
}

/// Clearance required between a bump's support and the lateral and top faces.
pub const SLAB_CLEARANCE: f64 = 0.05;

impl SlabField {
    pub fn new(id: impl Into<String>, terms: Vec<SlabTerm>) -> Result<Self> {
        let f = SlabField { id: id.into(), terms };
        f.check_support()?;
        Ok(f)
    }

    pub fn check_support(&self) -> Result<()> {
        for t in &self.terms {
            if t.component > 2 || !(t.radius > 0.0) {
                return Err(Error::InvalidInput(format!("field {}: invalid term {t:?}", self.id)));
            }
            let lateral = t.center[0].abs().max(t.center[1].abs()) + t.radius;
            let top = t.center[2] + t.radius;
            if lateral > PI - SLAB_CLEARANCE || top > PI - SLAB_CLEARANCE {
                return Err(Error::InvalidInput(format!(
                    "field {}: support of a term reaches the box boundary (lateral extent {lateral:.3}, top {top:.3})",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Same field translated by `(s₁, s₂)` tangentially.
    pub fn shifted(&self, s1: f64, s2: f64) -> Result<Self> {
        let mut out = self.clone();
        for t in &mut out.terms {
            // cos(w·(x − s)) keeps the modulation attached to the bump
            t.center[0] += s1;
            t.center[1] += s2;
            let phase = t.wave[0] * s1 + t.wave[1] * s2;
            if phase != 0.0 {
                return Err(Error::InvalidInput("shifting modulated fields is not supported".into()));
            }
        }
        out.check_support()?;
        Ok(out)
    }

    pub fn eval(&self, x: Vec3) -> Vec3 {
        let mut u = [0.0; 3];
        for t in &self.terms {
            u[t.component] += t.value_and_gradient(x).0;
        }
        u
    }

    pub fn divergence(&self, x: Vec3) -> f64 {
        self.terms.iter().map(|t| t.value_and_gradient(x).1[t.component]).sum()
    }
}

/// Left side and right-side factors of the trace estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCheck {
    pub field: String,
    pub grid: usize,
    /// `‖u₃(·,0)‖²_{H^{-1/2}}`.
    pub lhs: f64,
    /// `‖u‖_{L²(O)}`.
    pub u_norm: f64,
    /// `‖u‖ + ‖div u‖`.
    pub graph_norm: f64,
}

impl TraceCheck {
    /// `lhs / (‖u‖(‖u‖ + ‖div u‖))`.
    pub fn ratio(&self) -> f64 {
        self.lhs / (self.u_norm * self.graph_norm)
    }
}

/// Evaluates both sides of the trace estimate on an `n³` grid.
pub fn trace_estimate_check(u: &SlabField, n: usize) -> Result<TraceCheck> {
    u.check_support()?;
    if n < 8 {
        return Err(Error::InvalidInput(format!("grid resolution {n} too small")));
    }
    let h = 2.0 * PI / n as f64;
    let coord = |i: usize| -PI + h * i as f64;

    // Trace u₃(x₁, x₂, 0) and its 2-D DFT.
    let mut data: Vec<Complex64> = (0..n * n)
        .map(|idx| Complex64::new(u.eval([coord(idx / n), coord(idx % n), 0.0])[2], 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
    let freq = |i: usize| if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    let norm2 = (n * n) as f64;
    let terms: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (xi1, xi2) = (freq(idx / n), freq(idx % n));
            let c = data[idx] / norm2;
            (2.0 * PI).powi(2) * c.norm_sqr() / (1.0 + xi1 * xi1 + xi2 * xi2).sqrt()
        })
        .collect();
    let lhs = pairwise_sum(&terms);

    // Volume norms: trapezoid in x₁, x₂, Gauss–Legendre in x₃ ∈ [0, π].
    let rule = gauss_legendre(n.min(crate::specfun::MAX_QUADRATURE_ORDER))?;
    let vertical: Vec<(f64, f64)> = rule.mapped(0.0, PI).collect();
    let planes: Vec<(f64, f64)> = vertical
        .par_iter()
        .map(|&(z, wz)| {
            let mut uu = Vec::with_capacity(n * n);
            let mut dd = Vec::with_capacity(n * n);
            for idx in 0..n * n {
                let x = [coord(idx / n), coord(idx % n), z];
                let v = u.eval(x);
                uu.push(dot(v, v));
                dd.push(u.divergence(x).powi(2));
            }
            (wz * h * h * pairwise_sum(&uu), wz * h * h * pairwise_sum(&dd))
        })
        .collect();
    let u2 = pairwise_sum(&planes.iter().map(|p| p.0).collect::<Vec<_>>());
    let d2 = pairwise_sum(&planes.iter().map(|p| p.1).collect::<Vec<_>>());
    let u_norm = u2.sqrt();
    Ok(TraceCheck { field: u.id.clone(), grid: n, lhs, u_norm, graph_norm: u_norm + d2.sqrt() })
}

/// Deterministic 20-field corpus of bumps crossing, touching or clearing
/// the boundary plane, including modulated members.
pub fn slab_corpus(seed: u64) -> Vec<SlabField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.push(SlabField::new("normal_bump", vec![SlabTerm { component: 2, amplitude: 1.0, center: [0.0, 0.0, 0.0], radius: 1.5, wave: [0.0; 3] }]).unwrap());
    out.push(SlabField::new("tangential_bump", vec![SlabTerm { component: 0, amplitude: 1.0, center: [0.0, 0.0, 0.2], radius: 1.5, wave: [0.0; 3] }]).unwrap());
    while out.len() < 20 {
        let nterms = rng.gen_range(1..=3);
        let mut terms = Vec::new();
        for _ in 0..nterms {
            let radius = rng.gen_range(0.6..1.6);
            let lim = PI - SLAB_CLEARANCE - radius - 0.1;
            let wave = if rng.gen_bool(0.3) { [rng.gen_range(1..6) as f64, 0.0, 0.0] } else { [0.0; 3] };
            terms.push(SlabTerm {
                component: rng.gen_range(0..3),
                amplitude: rng.gen_range(-2.0..2.0),
                center: [rng.gen_range(-lim..lim), rng.gen_range(-lim..lim), rng.gen_range(-0.5 * radius..0.8 * radius)],
                radius,
                wave,
            });
        }
        if let Ok(f) = SlabField::new(format!("slab_{}", out.len()), terms) {
            if f.terms.iter().any(|t| t.component == 2 && t.center[2] < t.radius) {
                out.push(f);
            }
        }
    }
    out
}

/// `u_k = (0, 0, φ cos(k x₁))` with `φ` a bump centred on the boundary plane.
pub fn oscillatory_field(k: f64) -> SlabField {
    SlabField {
        id: format!("oscillatory_k{k}"),
        terms: vec![SlabTerm { component: 2, amplitude: 1.0, center: [0.0, 0.0, 0.0], radius: 2.0, wave: [k, 0.0, 0.0] }],
    }
}
