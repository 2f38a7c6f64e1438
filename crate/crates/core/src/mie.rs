//! Semi-analytic radiating solver for a ball `D = B_R` with constant
//! isotropic interior coefficients `ε_c = ε⁻ + iδ`, `μ_c = μ⁻ + iδ` in vacuum.
//!
//! Time dependence is `e^{-iωt}`, so the equations are `∇×E = iωμH` and
//! `∇×H = -iωεE + J`. Fields are expanded in the normalized vector spherical
//! harmonics `X_nm = L Y_nm / sqrt(n(n+1))`, `L = -i x×∇`:
//!
//! * TE modes: `E = u(r) X_nm`, `H = ∇×E / (iωμ)`;
//! * TM modes: `H = u(r) X_nm`, `E = -∇×H / (iωε)`;
//!
//! with `u = c_j j_n(kr) + c_h h¹_n(kr)` in each radial region. Writing
//! `w = (r u)'`, the tangential traces are `u` and `w / p` with `p = μ` (TE)
//! or `p = ε` (TM), which is what the interface conditions match.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{mat_vec, norm, tangent_frame, transpose, Mat3, Vec3, IDENTITY3};
use crate::error::{Error, Result};
use crate::numeric::{cadd3, cscale3, czero3, pairwise_sum, real_to_c3, CVec3};
use crate::specfun::{gauss_legendre, riccati_derivative, sph_h1_table, sph_j_table};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Relative denominator below which a lossless mode counts as resonant.
pub const RESONANCE_TOL: f64 = 1e-13;
/// Radial Gauss–Legendre order per panel.
const PANEL_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    TE,
    TM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// `E_inc = amplitude · p · e^{iω d·x}` with real unit `d` and `p ⊥ d`.
    PlaneWave { direction: Vec3, polarization: Vec3, amplitude: f64 },
    /// Surface current `K = amplitude · X_nm` (TE) or `amplitude · r̂×X_nm`
    /// (TM) on the sphere `r = radius`.
    ShellCurrent { radius: f64, n: usize, m: i64, polarization: Polarization, amplitude: Complex64 },
}

impl Source {
    /// `‖J‖`: the `L²` norm of the surface current on its sphere, or the
    /// amplitude of a plane wave.
    pub fn norm(&self) -> f64 {
        match self {
            Source::PlaneWave { amplitude, .. } => amplitude.abs(),
            Source::ShellCurrent { radius, amplitude, .. } => amplitude.norm() * radius,
        }
    }

    fn shell_radius(&self) -> Option<f64> {
        match self {
            Source::ShellCurrent { radius, .. } => Some(*radius),
            Source::PlaneWave { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredSphereProblem {
    pub omega: f64,
    pub radius: f64,
    pub eps_minus: f64,
    pub mu_minus: f64,
    pub delta: f64,
    pub source: Source,
}

impl LayeredSphereProblem {
    pub fn new(omega: f64, radius: f64, eps_minus: f64, mu_minus: f64, delta: f64, source: Source) -> Result<Self> {
        let p = LayeredSphereProblem { omega, radius, eps_minus, mu_minus, delta, source };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.radius, self.eps_minus, self.mu_minus, self.delta].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("problem parameters must be finite".into()));
        }
        if self.omega <= 0.0 || self.radius <= 0.0 {
            return Err(Error::InvalidInput("omega and radius must be positive".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::InvalidInput(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.eps_minus == 0.0 && self.delta == 0.0 || self.mu_minus == 0.0 && self.delta == 0.0 {
            return Err(Error::InvalidInput("interior coefficients must be nonzero".into()));
        }
        match &self.source {
            Source::PlaneWave { direction, polarization, amplitude } => {
                let d = norm(*direction);
                let p = norm(*polarization);
                if !amplitude.is_finite() || d == 0.0 || p == 0.0 {
                    return Err(Error::InvalidInput("plane wave needs nonzero direction and polarization".into()));
                }
                let overlap = crate::algebra::dot(*direction, *polarization) / (d * p);
                if overlap.abs() > 1e-10 {
                    return Err(Error::InvalidInput("plane-wave polarization must be orthogonal to direction".into()));
                }
            }
            Source::ShellCurrent { radius, n, m, amplitude, .. } => {
                if !(radius.is_finite() && *radius > self.radius) {
                    return Err(Error::InvalidInput(format!(
                        "shell radius {radius} must exceed interface radius {}",
                        self.radius
                    )));
                }
                if *n == 0 || m.unsigned_abs() as usize > *n {
                    return Err(Error::InvalidInput(format!("invalid mode (n, m) = ({n}, {m})")));
                }
                if !(amplitude.re.is_finite() && amplitude.im.is_finite()) {
                    return Err(Error::InvalidInput("shell amplitude must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let mut p = self.clone();
        p.delta = delta;
        p.validate()?;
        Ok(p)
    }

    pub fn eps_c(&self) -> Complex64 {
        Complex64::new(self.eps_minus, self.delta)
    }

    pub fn mu_c(&self) -> Complex64 {
        Complex64::new(self.mu_minus, self.delta)
    }

    /// `ω sqrt(ε_c μ_c)` on the principal branch, negated if needed so that
    /// `Im k_c ≥ 0`.
    pub fn k_interior(&self) -> Complex64 {
        let k = self.omega * (self.eps_c() * self.mu_c()).sqrt();
        if k.im < 0.0 || (k.im == 0.0 && k.re < 0.0) {
            -k
        } else {
            k
        }
    }
}

/// Per-mode closed-form solution.
///
/// Regions: `r < R` holds `interior · j_n(k_c r)`; `R < r < R_s` holds
/// `incident · j_n(ω r) + scattered · h¹_n(ω r)`; `r > R_s` holds
/// `outgoing · h¹_n(ω r)`. Without a source shell the last two regions
/// coincide and `outgoing = scattered`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSolution {
    pub n: usize,
    pub m: i64,
    pub polarization: Polarization,
    pub interior: Complex64,
    pub incident: Complex64,
    pub scattered: Complex64,
    pub outgoing: Complex64,
    pub denominator: Complex64,
    pub denominator_scale: f64,
    pub k_c: Complex64,
    omega: f64,
    radius: f64,
    shell: Option<f64>,
    eps_c: Complex64,
    mu_c: Complex64,
}

/// Radial profile at one radius: `u`, `w = (r u)'` and the local `ε`, `μ`.
#[derive(Debug, Clone, Copy)]
struct Radial {
    u: Complex64,
    w: Complex64,
    eps: Complex64,
    mu: Complex64,
}

/// `(f_n(z), ψ_f'(z))` for `f = j` or `f = h¹`.
fn bessel_pair(n: usize, z: Complex64, hankel: bool) -> Result<(Complex64, Complex64)> {
    let (f, df) = if hankel { sph_h1_table(n, z)?[n] } else { sph_j_table(n, z)?[n] };
    Ok((f, riccati_derivative(f, df, z)))
}

fn check_finite(values: &[Complex64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow(format!("{what} not representable")))
    }
}

impl ModeSolution {
    fn outer_p(&self) -> Complex64 {
        ONE
    }

    fn inner_p(&self) -> Complex64 {
        match self.polarization {
            Polarization::TE => self.mu_c,
            Polarization::TM => self.eps_c,
        }
    }

    pub fn is_zero(&self) -> bool {
        [self.interior, self.incident, self.scattered, self.outgoing].iter().all(|c| *c == ZERO)
    }

    fn radial(&self, r: f64) -> Result<Radial> {
        let vac = Complex64::new(1.0, 0.0);
        if r < self.radius {
            if self.interior == ZERO {
                return Ok(Radial { u: ZERO, w: ZERO, eps: self.eps_c, mu: self.mu_c });
            }
            let z = self.k_c * r;
            let (j, pj) = bessel_pair(self.n, z, false)?;
            return Ok(Radial { u: self.interior * j, w: self.interior * pj, eps: self.eps_c, mu: self.mu_c });
        }
        let z = Complex64::new(self.omega * r, 0.0);
        let inside_shell = self.shell.map_or(true, |rs| r < rs);
        let (cj, ch) = if inside_shell { (self.incident, self.scattered) } else { (ZERO, self.outgoing) };
        let mut u = ZERO;
        let mut w = ZERO;
        if cj != ZERO {
            let (j, pj) = bessel_pair(self.n, z, false)?;
            u += cj * j;
            w += cj * pj;
        }
        if ch != ZERO {
            let (h, ph) = bessel_pair(self.n, z, true)?;
            u += ch * h;
            w += ch * ph;
        }
        Ok(Radial { u, w, eps: vac, mu: vac })
    }

    /// Outgoing part only (`h¹_n` terms), for radiation diagnostics.
    fn radial_outgoing(&self, r: f64) -> Result<Radial> {
        let vac = Complex64::new(1.0, 0.0);
        let c = match self.shell {
            Some(rs) if r > rs => self.outgoing,
            _ => self.scattered,
        };
        if c == ZERO {
            return Ok(Radial { u: ZERO, w: ZERO, eps: vac, mu: vac });
        }
        let (h, ph) = bessel_pair(self.n, Complex64::new(self.omega * r, 0.0), true)?;
        Ok(Radial { u: c * h, w: c * ph, eps: vac, mu: vac })
    }

    /// `(∫_{S_r}|E|², ∫_{S_r}|H|²)`.
    fn sphere_energy(&self, rad: &Radial, r: f64) -> (f64, f64) {
        let nn = (self.n * (self.n + 1)) as f64;
        let u2 = rad.u.norm_sqr();
        let w2 = rad.w.norm_sqr();
        let tangential = r * r * u2;
        match self.polarization {
            Polarization::TE => (tangential, (nn * u2 + w2) / (self.omega * rad.mu).norm_sqr()),
            Polarization::TM => ((nn * u2 + w2) / (self.omega * rad.eps).norm_sqr(), tangential),
        }
    }

    /// `Re ∮_{S_r} (E × H̄)·r̂` for `r > R` (vacuum).
    fn flux(&self, rad: &Radial, r: f64) -> f64 {
        let iw = I * self.omega;
        match self.polarization {
            Polarization::TE => (rad.u * rad.w.conj() * r / iw.conj()).re,
            Polarization::TM => (rad.w * rad.u.conj() * r / iw).re,
        }
    }

    /// Residuals of the interface and shell conditions, relative to the
    /// size of the terms being matched: `[u]` and `[w/p]` at `R`, then the
    /// mismatch of `([u], [w])` at `R_s` against the prescribed jumps.
    pub fn interface_residuals(&self, problem: &LayeredSphereProblem) -> Result<[f64; 4]> {
        let r = self.radius;
        let (jc, pjc) = bessel_pair(self.n, self.k_c * r, false)?;
        let (u_in, w_in) = (self.interior * jc, self.interior * pjc);
        let z0 = Complex64::new(self.omega * r, 0.0);
        let (j0, pj0) = bessel_pair(self.n, z0, false)?;
        let (h0, ph0) = bessel_pair(self.n, z0, true)?;
        let u_out = self.incident * j0 + self.scattered * h0;
        let w_out = self.incident * pj0 + self.scattered * ph0;
        let rel = |a: Complex64, b: Complex64| (a - b).norm() / (a.norm() + b.norm()).max(f64::MIN_POSITIVE);
        let res_u = rel(u_in, u_out);
        let res_w = rel(w_in / self.inner_p(), w_out / self.outer_p());
        let (mut res_ju, mut res_jw) = (0.0, 0.0);
        if let Some(rs) = self.shell {
            let (su, sw) = shell_jumps(problem, self.n, self.m, self.polarization);
            let zs = Complex64::new(self.omega * rs, 0.0);
            let (js, pjs) = bessel_pair(self.n, zs, false)?;
            let (hs, phs) = bessel_pair(self.n, zs, true)?;
            let ju = self.outgoing * hs - self.incident * js - self.scattered * hs;
            let jw = self.outgoing * phs - self.incident * pjs - self.scattered * phs;
            let scale_u = (self.outgoing * hs).norm() + (self.incident * js).norm() + su.norm();
            let scale_w = (self.outgoing * phs).norm() + (self.incident * pjs).norm() + sw.norm();
            res_ju = (ju - su).norm() / scale_u.max(f64::MIN_POSITIVE);
            res_jw = (jw - sw).norm() / scale_w.max(f64::MIN_POSITIVE);
        }
        Ok([res_u, res_w, res_ju, res_jw])
    }

    /// `(E, H)` of this mode at a point given in the mode's own frame.
    pub fn field_local(&self, x: Vec3) -> Result<(CVec3, CVec3)> {
        if self.is_zero() {
            return Ok((czero3(), czero3()));
        }
        let mut r = norm(x);
        let dir = if r > 0.0 { [x[0] / r, x[1] / r, x[2] / r] } else { [0.0, 0.0, 1.0] };
        if r < 1e-12 * self.radius {
            r = 1e-12 * self.radius;
        }
        let rad = self.radial(r)?;
        Ok(self.assemble(&rad, r, dir))
    }

    fn assemble(&self, rad: &Radial, r: f64, dir: Vec3) -> (CVec3, CVec3) {
        let (y, x) = vsh(self.n, self.m, dir);
        let rhat = real_to_c3(dir);
        let rx = crate::numeric::ccross3(rhat, x);
        let nn = ((self.n * (self.n + 1)) as f64).sqrt();
        // ∇×(u X) = i sqrt(n(n+1)) (u/r) Y r̂ + (w/r) r̂×X
        let curl = cadd3(cscale3(I * nn * rad.u / r * y, rhat), cscale3(rad.w / r, rx));
        let ux = cscale3(rad.u, x);
        match self.polarization {
            Polarization::TE => (ux, cscale3(1.0 / (I * self.omega * rad.mu), curl)),
            Polarization::TM => (cscale3(-1.0 / (I * self.omega * rad.eps), curl), ux),
        }
    }
}

/// Prescribed jumps `([u], [w])` across the source shell for mode `(n, m, pol)`.
fn shell_jumps(problem: &LayeredSphereProblem, n: usize, m: i64, pol: Polarization) -> (Complex64, Complex64) {
    match &problem.source {
        Source::ShellCurrent { radius, n: sn, m: sm, polarization, amplitude } if *sn == n && *sm == m && *polarization == pol => {
            match pol {
                Polarization::TE => (ZERO, -I * problem.omega * radius * amplitude),
                Polarization::TM => (*amplitude, ZERO),
            }
        }
        _ => (ZERO, ZERO),
    }
}

/// Coefficient of `j_n(ω r)` in the incident plane wave, in the frame where
/// it travels along `+z` with polarization `p = (p_x, p_y, 0)`.
fn plane_wave_coefficient(n: usize, m: i64, pol: Polarization, p: Vec3, amplitude: f64) -> Complex64 {
    // p = a₊(x̂ + iŷ) + a₋(x̂ − iŷ)
    let a = match m {
        1 => Complex64::new(p[0], -p[1]) * 0.5,
        -1 => Complex64::new(p[0], p[1]) * 0.5,
        _ => return ZERO,
    };
    let base = amplitude * a * I.powu(n as u32) * (4.0 * std::f64::consts::PI * (2 * n + 1) as f64).sqrt();
    match pol {
        Polarization::TE => base,
        Polarization::TM => -I * (m as f64) * base,
    }
}

/// Rotation taking `ẑ` to `d` (columns `t1, t2, d`).
fn frame_rotation(d: Vec3) -> Result<Mat3> {
    let f = tangent_frame(d)?;
    Ok([
        [f.t1[0], f.t2[0], f.e[0]],
        [f.t1[1], f.t2[1], f.e[1]],
        [f.t1[2], f.t2[2], f.e[2]],
    ])
}

/// Solves mode `(n, m, pol)` using the principal interior branch.
pub fn solve_mode(problem: &LayeredSphereProblem, n: usize, m: i64, pol: Polarization) -> Result<ModeSolution> {
    solve_mode_with_branch(problem, n, m, pol, false)
}

/// As [`solve_mode`], optionally with `k_c` replaced by `-k_c`.
pub fn solve_mode_with_branch(
    problem: &LayeredSphereProblem,
    n: usize,
    m: i64,
    pol: Polarization,
    flip_branch: bool,
) -> Result<ModeSolution> {
    problem.validate()?;
    if n == 0 || m.unsigned_abs() as usize > n {
        return Err(Error::InvalidInput(format!("invalid mode (n, m) = ({n}, {m})")));
    }
    let omega = problem.omega;
    let r = problem.radius;
    let k_c = if flip_branch { -problem.k_interior() } else { problem.k_interior() };
    let shell = problem.source.shell_radius();
    let p_c = match pol {
        Polarization::TE => problem.mu_c(),
        Polarization::TM => problem.eps_c(),
    };

    let z0 = Complex64::new(omega * r, 0.0);
    let (j0, pj0) = bessel_pair(n, z0, false)?;
    let (h0, ph0) = bessel_pair(n, z0, true)?;
    let (jc, pjc) = bessel_pair(n, k_c * r, false)?;
    let denominator = h0 * pjc / p_c - jc * ph0;
    let denominator_scale = (h0 * pjc / p_c).norm() + (jc * ph0).norm();
    check_finite(&[denominator, j0, pj0, h0, ph0, jc, pjc], &format!("mode n = {n} special functions"))?;
    if problem.delta == 0.0 && denominator.norm() < RESONANCE_TOL * denominator_scale {
        return Err(Error::ResonantMode { n, denominator });
    }

    // Regular field arriving at r = R from the source.
    let (incident, jump_h) = match (&problem.source, shell) {
        (Source::PlaneWave { direction, polarization, amplitude }, _) => {
            let rot = frame_rotation(*direction)?;
            let pn = norm(*polarization);
            let p_local = mat_vec(&transpose(&rot), [polarization[0] / pn, polarization[1] / pn, polarization[2] / pn]);
            (plane_wave_coefficient(n, m, pol, p_local, *amplitude), ZERO)
        }
        (_, Some(rs)) => {
            let (su, sw) = shell_jumps(problem, n, m, pol);
            let zs = Complex64::new(omega * rs, 0.0);
            let (js, pjs) = bessel_pair(n, zs, false)?;
            let (hs, phs) = bessel_pair(n, zs, true)?;
            // [h, -j; ψh', -ψj'] (Δ, C) = (s_u, s_w), determinant i/ρ_s.
            let det = I / zs;
            let delta_h = (-su * pjs + js * sw) / det;
            let c = (hs * sw - phs * su) / det;
            (c, delta_h)
        }
        (Source::ShellCurrent { .. }, None) => unreachable!("shell source always has a radius"),
    };

    let interior = incident * (-I / z0) / denominator;
    let scattered = incident * (jc * pj0 - j0 * pjc / p_c) / denominator;
    let outgoing = scattered + jump_h;
    check_finite(&[interior, scattered, outgoing], &format!("mode n = {n} coefficients"))?;

    Ok(ModeSolution {
        n,
        m,
        polarization: pol,
        interior,
        incident,
        scattered,
        outgoing,
        denominator,
        denominator_scale,
        k_c,
        omega,
        radius: r,
        shell,
        eps_c: problem.eps_c(),
        mu_c: problem.mu_c(),
    })
}

/// `ψ'(z)/f(z)` for `f = j_n` via the continued fraction for `j_{n+1}/j_n`.
fn log_derivative_j(n: usize, z: Complex64) -> Complex64 {
    let start = n + 40 + (2.0 * z.norm()) as usize;
    let mut ratio = ZERO;
    for k in (n + 1..=start).rev() {
        // ratio = j_{k+1}/j_k  ->  j_k/j_{k-1} = 1 / ((2k+1)/z - j_{k+1}/j_k)
        ratio = ONE / (((2 * k + 1) as f64) / z - ratio);
    }
    // ratio = j_{n+1}/j_n; z j_n'/j_n = n - z ratio
    ONE + n as f64 - z * ratio
}

/// `ψ'(z)/f(z)` for `f = h¹_n` via upward recurrence of `h_k/h_{k-1}`.
fn log_derivative_h(n: usize, z: Complex64) -> Complex64 {
    let mut s = ONE / z - I; // h_1/h_0
    if n == 0 {
        return ONE - z * s;
    }
    for k in 1..n {
        s = ((2 * k + 1) as f64) / z - ONE / s;
    }
    z / s - n as f64
}

/// Relative transmission denominator `|ψj'_c/(p_c j_c) − ψh'/h| / scale`,
/// computed from logarithmic derivatives so arbitrarily high orders stay
/// representable.
pub fn reduced_denominator(problem: &LayeredSphereProblem, n: usize, pol: Polarization) -> f64 {
    let p_c = match pol {
        Polarization::TE => problem.mu_c(),
        Polarization::TM => problem.eps_c(),
    };
    let lj = log_derivative_j(n, problem.k_interior() * problem.radius) / p_c;
    let lh = log_derivative_h(n, Complex64::new(problem.omega * problem.radius, 0.0));
    (lj - lh).norm() / (lj.norm() + lh.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenominatorEntry {
    pub n: usize,
    pub polarization: Polarization,
    pub relative: f64,
}

/// Relative denominators for `n = 1..=n_max`, both polarizations.
pub fn denominator_scan(problem: &LayeredSphereProblem, n_max: usize) -> Vec<DenominatorEntry> {
    (1..=n_max)
        .flat_map(|n| {
            [Polarization::TE, Polarization::TM]
                .into_iter()
                .map(move |pol| DenominatorEntry { n, polarization: pol, relative: reduced_denominator(problem, n, pol) })
        })
        .collect()
}

/// Mode-series truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub rel_tol: f64,
    pub n_max: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy { rel_tol: 1e-12, n_max: 200 }
    }
}

/// A solved problem: the nonzero modes plus the frame they live in.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub problem: LayeredSphereProblem,
    pub modes: Vec<ModeSolution>,
    /// Local-to-global rotation (identity for shell currents).
    pub rotation: Mat3,
    pub n_used: usize,
    pub truncation_warning: Option<String>,
}

/// Solves every mode the source excites, truncating plane-wave series by
/// their contribution to `‖(E,H)‖²` on `B_{norm_radius}`.
pub fn solve_modes(problem: &LayeredSphereProblem, policy: TruncationPolicy, norm_radius: f64) -> Result<ModeSet> {
    problem.validate()?;
    match &problem.source {
        Source::ShellCurrent { n, m, polarization, .. } => {
            let mode = solve_mode(problem, *n, *m, *polarization)?;
            Ok(ModeSet { problem: problem.clone(), modes: vec![mode], rotation: IDENTITY3, n_used: *n, truncation_warning: None })
        }
        Source::PlaneWave { direction, .. } => {
            let rotation = frame_rotation(*direction)?;
            let kr = problem.omega * norm_radius.max(problem.radius);
            let n_min = (kr + 4.0 * kr.cbrt() + 2.0).ceil() as usize;
            let mut modes = Vec::new();
            let mut total = 0.0;
            let mut quiet = 0;
            let mut warning = None;
            let mut n_used = 0;
            for n in 1..=policy.n_max {
                let mut contribution = 0.0;
                for m in [-1i64, 1] {
                    for pol in [Polarization::TE, Polarization::TM] {
                        let mode = match solve_mode(problem, n, m, pol) {
                            Ok(mode) => mode,
                            Err(Error::Overflow(msg)) => {
                                warning = Some(format!("series stopped at n = {n}: {msg}"));
                                break;
                            }
                            Err(e) => return Err(e),
                        };
                        contribution += mode_norm_sq(&mode, 0.0, norm_radius)?;
                        modes.push(mode);
                    }
                }
                if warning.is_some() {
                    break;
                }
                n_used = n;
                total += contribution;
                if n >= n_min && contribution <= policy.rel_tol * total {
                    quiet += 1;
                    if quiet >= 2 {
                        break;
                    }
                } else {
                    quiet = 0;
                }
                if n == policy.n_max {
                    warning = Some(format!("truncation cap N = {} reached without convergence", policy.n_max));
                }
            }
            Ok(ModeSet { problem: problem.clone(), modes, rotation, n_used, truncation_warning: warning })
        }
    }
}

impl ModeSet {
    /// `(E, H)` at `x` in global coordinates.
    pub fn field_at(&self, x: Vec3) -> Result<(CVec3, CVec3)> {
        if let Some(rs) = self.problem.source.shell_radius() {
            if (norm(x) - rs).abs() <= 1e-12 * rs {
                return Err(Error::InvalidInput(format!("field requested on the source sphere r = {rs}")));
            }
        }
        let xl = mat_vec(&transpose(&self.rotation), x);
        let mut e = czero3();
        let mut h = czero3();
        for mode in &self.modes {
            let (me, mh) = mode.field_local(xl)?;
            e = cadd3(e, me);
            h = cadd3(h, mh);
        }
        Ok((rotate_c(&self.rotation, e), rotate_c(&self.rotation, h)))
    }

    /// `‖(E,H)‖_{L²}` over the shell `r1 ≤ |x| ≤ r2`.
    pub fn l2_norm(&self, r1: f64, r2: f64) -> Result<f64> {
        if !(r1 >= 0.0 && r2 > r1 && r2.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid annulus [{r1}, {r2}]")));
        }
        let parts: Result<Vec<f64>> = self.modes.iter().map(|m| mode_norm_sq(m, r1, r2)).collect();
        Ok(pairwise_sum(&parts?).sqrt())
    }

    /// `(‖E‖², ‖H‖²)` over the shell `r1 ≤ |x| ≤ r2`.
    pub fn l2_parts(&self, r1: f64, r2: f64) -> Result<(f64, f64)> {
        let mut e = Vec::new();
        let mut h = Vec::new();
        for mode in &self.modes {
            let (a, b) = mode_energy(mode, r1, r2)?;
            e.push(a);
            h.push(b);
        }
        Ok((pairwise_sum(&e), pairwise_sum(&h)))
    }

    /// Terms of the Poynting balance on `B_{r_prime}`.
    pub fn energy_balance(&self, r_prime: f64) -> Result<EnergyBalance> {
        let problem = &self.problem;
        if r_prime <= problem.radius || problem.source.shell_radius().is_some_and(|rs| (r_prime - rs).abs() < 1e-9 * rs) {
            return Err(Error::InvalidInput(format!("balance radius {r_prime} must exceed R and avoid R_s")));
        }
        let mut fluxes = Vec::new();
        for mode in &self.modes {
            let rad = mode.radial(r_prime)?;
            fluxes.push(mode.flux(&rad, r_prime));
        }
        let flux = pairwise_sum(&fluxes);
        let (e2, h2) = self.l2_parts(0.0, problem.radius)?;
        let absorption = problem.omega * problem.delta * (e2 + h2);
        let mut source_work = 0.0;
        if let Source::ShellCurrent { radius: rs, amplitude, .. } = &problem.source {
            if *rs < r_prime {
                for mode in &self.modes {
                    let (su, sw) = shell_jumps(problem, mode.n, mode.m, mode.polarization);
                    if su == ZERO && sw == ZERO {
                        continue;
                    }
                    // E_tan and w are continuous across the shell for the
                    // excited polarization; evaluate on the outer side.
                    let z = Complex64::new(problem.omega * rs, 0.0);
                    let (h, ph) = bessel_pair(mode.n, z, true)?;
                    let (u, w) = (mode.outgoing * h, mode.outgoing * ph);
                    let work = match mode.polarization {
                        Polarization::TE => rs * rs * u * amplitude.conj(),
                        Polarization::TM => rs * rs * (-w / (I * problem.omega * rs)) * amplitude.conj(),
                    };
                    source_work += work.re;
                }
            }
        }
        let scale = flux.abs() + absorption.abs() + source_work.abs();
        let residual = if scale > 0.0 { (flux + absorption + source_work).abs() / scale } else { 0.0 };
        Ok(EnergyBalance { flux, absorption, source_work, residual })
    }

    /// `r · RMS_{S_r}|H×x̂ − E|` of the outgoing field at radius `r`, and
    /// the same weighting of `|E|` for scale.
    pub fn silver_muller(&self, r: f64) -> Result<(f64, f64)> {
        if r <= self.problem.radius {
            return Err(Error::InvalidInput("Silver-Müller radius must exceed R".into()));
        }
        let mut res = Vec::new();
        let mut field = Vec::new();
        for mode in &self.modes {
            let rad = mode.radial_outgoing(r)?;
            let nn = (mode.n * (mode.n + 1)) as f64;
            let tang = rad.w / (I * mode.omega * r) - rad.u;
            let (a, b) = match mode.polarization {
                Polarization::TE => (r * r * tang.norm_sqr(), r * r * rad.u.norm_sqr()),
                Polarization::TM => {
                    let radial = nn * rad.u.norm_sqr() / (mode.omega * mode.omega);
                    let e_sq = (nn * rad.u.norm_sqr() + rad.w.norm_sqr()) / (mode.omega * mode.omega);
                    (r * r * tang.norm_sqr() + radial, e_sq)
                }
            };
            res.push(a);
            field.push(b);
        }
        let area = 4.0 * std::f64::consts::PI * r * r;
        Ok((r * (pairwise_sum(&res) / area).sqrt(), r * (pairwise_sum(&field) / area).sqrt()))
    }

    pub fn min_relative_denominator(&self) -> f64 {
        self.modes.iter().map(|m| m.denominator.norm() / m.denominator_scale).fold(f64::INFINITY, f64::min)
    }
}

/// Finite-difference residuals of both curl equations at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurlResidual {
    /// `|∇×E − iωμH|`.
    pub faraday: f64,
    /// `|∇×H + iωεE|`.
    pub ampere: f64,
    /// `|E| + |H|` at the point.
    pub magnitude: f64,
}

/// Curl residuals at `x` by fourth-order central differences with step `h`.
pub fn curl_residuals(set: &ModeSet, x: Vec3, h: f64) -> Result<CurlResidual> {
    let mut de = [[ZERO; 3]; 3];
    let mut dh = [[ZERO; 3]; 3];
    for a in 0..3 {
        let shifted = |s: f64| -> Result<(CVec3, CVec3)> {
            let mut y = x;
            y[a] += s * h;
            set.field_at(y)
        };
        let (e2p, h2p) = shifted(2.0)?;
        let (e1p, h1p) = shifted(1.0)?;
        let (e1m, h1m) = shifted(-1.0)?;
        let (e2m, h2m) = shifted(-2.0)?;
        for c in 0..3 {
            de[a][c] = (-e2p[c] + 8.0 * e1p[c] - 8.0 * e1m[c] + e2m[c]) / (12.0 * h);
            dh[a][c] = (-h2p[c] + 8.0 * h1p[c] - 8.0 * h1m[c] + h2m[c]) / (12.0 * h);
        }
    }
    let curl = |d: &[[Complex64; 3]; 3]| [d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]];
    let (e, hf) = set.field_at(x)?;
    let p = &set.problem;
    let (eps, mu) = if norm(x) < p.radius { (p.eps_c(), p.mu_c()) } else { (ONE, ONE) };
    let faraday = crate::numeric::cnorm3(crate::numeric::csub3(curl(&de), cscale3(I * p.omega * mu, hf)));
    let ampere = crate::numeric::cnorm3(cadd3(curl(&dh), cscale3(I * p.omega * eps, e)));
    Ok(CurlResidual { faraday, ampere, magnitude: crate::numeric::cnorm3(e) + crate::numeric::cnorm3(hf) })
}

fn rotate_c(rot: &Mat3, v: CVec3) -> CVec3 {
    let mut out = czero3();
    for (i, row) in rot.iter().enumerate() {
        out[i] = v[0] * row[0] + v[1] * row[1] + v[2] * row[2];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    /// `Re ∮_{S_{R'}} (E×H̄)·r̂`.
    pub flux: f64,
    /// `ωδ ∫_D (|E|² + |H|²)`.
    pub absorption: f64,
    /// `Re ∫ E·J̄`.
    pub source_work: f64,
    /// `|flux + absorption + source_work| / (|flux| + |absorption| + |source_work|)`.
    pub residual: f64,
}

/// Relative residual of `Re∮(E×H̄)·r̂ + ωδ∫_D(|E|²+|H|²) + Re∫E·J̄ = 0`.
pub fn energy_identity_check(modes: &ModeSet, r_prime: f64) -> Result<f64> {
    Ok(modes.energy_balance(r_prime)?.residual)
}

/// Radial panels on `[a, b]` fine enough for order-`n` profiles with
/// wavenumber magnitude `k`.
fn radial_panels(a: f64, b: f64, n: usize, k: f64) -> Vec<(f64, f64)> {
    let max_len = if k > 0.0 { 5.0 / k } else { f64::INFINITY };
    let ratio = (8.0 / (2 * n + 2) as f64).exp();
    let mut out = Vec::new();
    let mut lo = a;
    if a == 0.0 {
        let low = b * (-40.0 / (n + 1) as f64).exp();
        let pieces = ((low / max_len).ceil() as usize).max(1);
        for i in 0..pieces {
            out.push((low * i as f64 / pieces as f64, low * (i + 1) as f64 / pieces as f64));
        }
        lo = low;
    }
    while lo < b {
        let hi = (lo * ratio).min(lo + max_len).min(b);
        out.push((lo, hi));
        lo = hi;
    }
    out
}

/// `(∫|E|², ∫|H|²)` of one mode over `r1 ≤ |x| ≤ r2`.
fn mode_energy(mode: &ModeSolution, r1: f64, r2: f64) -> Result<(f64, f64)> {
    if mode.is_zero() || r2 <= r1 {
        return Ok((0.0, 0.0));
    }
    let rule = gauss_legendre(PANEL_ORDER)?;
    let mut cuts = vec![r1];
    for c in [Some(mode.radius), mode.shell].into_iter().flatten() {
        if c > r1 && c < r2 {
            cuts.push(c);
        }
    }
    cuts.push(r2);
    let mut e_terms = Vec::new();
    let mut h_terms = Vec::new();
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let k = if b <= mode.radius { mode.k_c.norm() } else { mode.omega };
        for (pa, pb) in radial_panels(a, b, mode.n, k) {
            for (r, w) in rule.mapped(pa, pb) {
                let rad = mode.radial(r)?;
                let (e, h) = mode.sphere_energy(&rad, r);
                e_terms.push(w * e);
                h_terms.push(w * h);
            }
        }
    }
    Ok((pairwise_sum(&e_terms), pairwise_sum(&h_terms)))
}

fn mode_norm_sq(mode: &ModeSolution, r1: f64, r2: f64) -> Result<f64> {
    let (e, h) = mode_energy(mode, r1, r2)?;
    Ok(e + h)
}

/// Orthonormal spherical harmonic `Y_nm` (Condon–Shortley phase) at a unit
/// direction.
pub fn sph_harm(n: usize, m: i64, dir: Vec3) -> Complex64 {
    let ma = m.unsigned_abs() as usize;
    if ma > n {
        return ZERO;
    }
    let cos_t = dir[2].clamp(-1.0, 1.0);
    let sin_t = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    let phi = dir[1].atan2(dir[0]);
    let p = normalized_legendre(n, ma, cos_t, sin_t);
    let y = p * Complex64::from_polar(1.0, ma as f64 * phi);
    if m < 0 {
        let sign = if ma % 2 == 0 { 1.0 } else { -1.0 };
        sign * y.conj()
    } else {
        y
    }
}

/// `sqrt((2n+1)/4π · (n−m)!/(n+m)!) P_n^m(cos θ)` with Condon–Shortley phase.
fn normalized_legendre(n: usize, m: usize, cos_t: f64, sin_t: f64) -> f64 {
    let mut pmm = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
    for k in 1..=m {
        pmm *= -((2 * k + 1) as f64 / (2 * k) as f64).sqrt() * sin_t;
    }
    if n == m {
        return pmm;
    }
    let mut prev = pmm;
    let mut cur = ((2 * m + 3) as f64).sqrt() * cos_t * pmm;
    for l in m + 2..=n {
        let a = (((4 * l * l - 1) as f64) / ((l * l - m * m) as f64)).sqrt();
        let b = ((((l - 1) * (l - 1) - m * m) as f64) / ((4 * (l - 1) * (l - 1) - 1) as f64)).sqrt();
        let next = a * (cos_t * cur - b * prev);
        prev = cur;
        cur = next;
    }
    cur
}

/// `(Y_nm, X_nm)` at a unit direction, `X_nm` in Cartesian components built
/// from the ladder operators `L_± Y_nm`.
pub fn vsh(n: usize, m: i64, dir: Vec3) -> (Complex64, CVec3) {
    let nf = n as f64;
    let mf = m as f64;
    let y = sph_harm(n, m, dir);
    let c_plus = ((nf - mf) * (nf + mf + 1.0)).max(0.0).sqrt();
    let c_minus = ((nf + mf) * (nf - mf + 1.0)).max(0.0).sqrt();
    let up = c_plus * sph_harm(n, m + 1, dir);
    let down = c_minus * sph_harm(n, m - 1, dir);
    let norm = (nf * (nf + 1.0)).sqrt();
    let lx = (up + down) * 0.5;
    let ly = (up - down) / (2.0 * I);
    let lz = mf * y;
    (y, [lx / norm, ly / norm, lz / norm])
}

/// Geometry of the sweep's norm regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRegions {
    /// Outer radius of the ball `B_{R'}` (default `2R`).
    pub outer_radius: f64,
    /// Half-width of the collar `V = {|r − R| < τ}` (default `0.1`).
    pub collar_halfwidth: f64,
}

impl NormRegions {
    pub fn default_for(problem: &LayeredSphereProblem) -> Self {
        NormRegions { outer_radius: 2.0 * problem.radius, collar_halfwidth: 0.1 * problem.radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    /// `‖(E,H)‖` over `B_{R'} ∖ V`.
    pub norm_exterior_annulus: f64,
    /// `‖(E,H)‖` over `D`.
    pub norm_interior: f64,
    /// `‖(E,H)‖` over the collar `V`.
    pub norm_collar: f64,
    /// `‖(E,H)‖` over `B_{R'}`.
    pub norm_ball: f64,
    pub energy_residual: f64,
    pub silver_muller_residual: f64,
    pub min_mode_denominator: f64,
    pub n_modes_used: usize,
    pub truncation_warning: bool,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub problem: LayeredSphereProblem,
    pub regions: NormRegions,
    pub policy: TruncationPolicy,
    pub source_norm: f64,
    pub rows: Vec<SweepRow>,
    /// Last three exterior norms agree within 1%.
    pub lap_convergent: bool,
    /// Collar norm grows monotonically by at least 10x from `δ = 1e-2` to `1e-6`.
    pub resonant: bool,
    /// Collar norm ratio between the smallest and largest `δ` in `[1e-6, 1e-2]`.
    pub collar_growth: Option<f64>,
    /// Least-squares `p` in `norm_collar ∝ δ^{-p}`.
    pub fitted_exponent: Option<f64>,
}

pub const SWEEP_CSV_HEADER: &str = "delta,norm_exterior_annulus,norm_interior,norm_collar,energy_residual,silver_muller_residual,min_mode_denominator,n_modes_used,truncation_warning,norm_ball";

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e}\n",
                r.delta,
                r.norm_exterior_annulus,
                r.norm_interior,
                r.norm_collar,
                r.energy_residual,
                r.silver_muller_residual,
                r.min_mode_denominator,
                r.n_modes_used,
                r.truncation_warning,
                r.norm_ball
            ));
        }
        out
    }
}

/// Radius at which the sweep reports the Silver–Müller residual.
pub const SILVER_MULLER_RADIUS: f64 = 50.0;

fn sweep_row(problem: &LayeredSphereProblem, regions: NormRegions, policy: TruncationPolicy) -> Result<SweepRow> {
    let modes = solve_modes(problem, policy, regions.outer_radius)?;
    let r = problem.radius;
    let tau = regions.collar_halfwidth;
    let outer = regions.outer_radius;
    let sq = |a: f64, b: f64| -> Result<f64> { Ok(modes.l2_norm(a, b)?.powi(2)) };
    let inner_part = sq(0.0, r - tau)?;
    let collar = sq(r - tau, r + tau)?;
    let outer_part = sq(r + tau, outer)?;
    let interior = sq(0.0, r)?;
    let balance_radius = match problem.source.shell_radius() {
        Some(rs) if rs >= outer => 1.25 * rs,
        _ => outer,
    };
    let energy_residual = energy_identity_check(&modes, balance_radius)?;
    let (sm, sm_scale) = modes.silver_muller(SILVER_MULLER_RADIUS * r)?;
    Ok(SweepRow {
        delta: problem.delta,
        norm_exterior_annulus: (inner_part + outer_part).sqrt(),
        norm_interior: interior.sqrt(),
        norm_collar: collar.sqrt(),
        norm_ball: (inner_part + collar + outer_part).sqrt(),
        energy_residual,
        silver_muller_residual: if sm_scale > 0.0 { sm / sm_scale } else { 0.0 },
        min_mode_denominator: modes.min_relative_denominator(),
        n_modes_used: modes.n_used,
        truncation_warning: modes.truncation_warning.is_some(),
        warning: modes.truncation_warning,
    })
}

/// Solves the problem for each `δ` (positive, strictly descending) and
/// tabulates norms, residuals and convergence flags.
pub fn delta_sweep(
    problem: &LayeredSphereProblem,
    deltas: &[f64],
    policy: TruncationPolicy,
    regions: NormRegions,
) -> Result<SweepReport> {
    if deltas.is_empty() {
        return Err(Error::InvalidInput("empty delta list".into()));
    }
    if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidInput("deltas must be positive".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("deltas must be strictly descending".into()));
    }
    if !(regions.collar_halfwidth > 0.0 && regions.collar_halfwidth < problem.radius && regions.outer_radius > problem.radius + regions.collar_halfwidth) {
        return Err(Error::InvalidInput("norm regions must nest inside (0, R')".into()));
    }
    let rows: Result<Vec<SweepRow>> = deltas
        .par_iter()
        .map(|&d| sweep_row(&problem.with_delta(d)?, regions, policy))
        .collect();
    let rows = rows?;

    let lap_convergent = rows.len() >= 3 && {
        let last: Vec<f64> = rows[rows.len() - 3..].iter().map(|r| r.norm_exterior_annulus).collect();
        let hi = last.iter().cloned().fold(f64::MIN, f64::max);
        let lo = last.iter().cloned().fold(f64::MAX, f64::min);
        hi > 0.0 && (hi - lo) / hi <= 0.01
    };
    let window: Vec<&SweepRow> = rows.iter().filter(|r| r.delta <= 1e-2 * (1.0 + 1e-9) && r.delta >= 1e-6 * (1.0 - 1e-9)).collect();
    let (collar_growth, monotone) = if window.len() >= 2 {
        let first = window[0].norm_collar;
        let last = window[window.len() - 1].norm_collar;
        let mono = window.windows(2).all(|w| w[1].norm_collar >= w[0].norm_collar);
        (Some(last / first), mono)
    } else {
        (None, false)
    };
    let covers = window.first().is_some_and(|r| (r.delta / 1e-2 - 1.0).abs() < 1e-9)
        && window.last().is_some_and(|r| (r.delta / 1e-6 - 1.0).abs() < 1e-9);
    let resonant = covers && monotone && collar_growth.is_some_and(|g| g >= 10.0);
    let fitted_exponent = fit_exponent(&rows);
    Ok(SweepReport {
        problem: problem.clone(),
        regions,
        policy,
        source_norm: problem.source.norm(),
        rows,
        lap_convergent,
        resonant,
        collar_growth,
        fitted_exponent,
    })
}

/// Least-squares slope `p` of `log norm_collar = c − p log δ`.
fn fit_exponent(rows: &[SweepRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.norm_collar > 0.0)
        .map(|r| (r.delta.ln(), r.norm_collar.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(-sxy / sxx)
    }
}

/// Default `δ` list `1e-2, 1e-3, …, 1e-6`.
pub fn default_deltas() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
}
