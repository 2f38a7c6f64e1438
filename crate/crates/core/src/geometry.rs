//! Interfaces, collars, reflections through an interface and the
//! change-of-variables rules for coefficients, fields and sources.
//!
//! Sign convention: [`Surface::signed_distance`] is positive inside `D` and
//! negative outside, and [`Surface::normal`] points out of `D`. An interior
//! collar point is written `x_Γ − tν` with `t > 0`, an exterior one
//! `x_Γ + tν`. The second fundamental form is taken with respect to the
//! outward normal and has positive trace on convex surfaces (`2/R` on a
//! sphere of radius `R`).

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    add, det3, dot, eig_sym2, inverse3, mat_vec, norm, normalize, scale, sub, tangent_frame,
    transpose, Mat3, SymMatrix2, SymMatrix3, Vec3, IDENTITY3,
};
use crate::error::{Error, Result};
use crate::numeric::{cscale3, CVec3};
use num_complex::Complex64;

pub type LevelSet = Arc<dyn Fn(Vec3) -> f64 + Send + Sync>;

const PROJECTION_MAX_ITER: usize = 50;
const PROJECTION_TOL: f64 = 1e-10;

/// A surface given as the zero set of `phi`, with `phi < 0` inside.
#[derive(Clone)]
pub struct ImplicitSurface {
    phi: LevelSet,
    lo: Vec3,
    hi: Vec3,
    seeds: Arc<OnceLock<Vec<Vec3>>>,
}

impl fmt::Debug for ImplicitSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImplicitSurface").field("lo", &self.lo).field("hi", &self.hi).finish()
    }
}

#[derive(Clone, Debug)]
pub enum Surface {
    Sphere { center: Vec3, radius: f64 },
    Ellipsoid { center: Vec3, semi_axes: [f64; 3] },
    Implicit(ImplicitSurface),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Interior,
    Exterior,
    OnSurface,
}

/// Closest-point data for a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub foot: Vec3,
    pub distance: f64,
    pub side: Side,
}

impl Projection {
    /// Distance with the sign convention of this module (positive inside).
    pub fn signed(&self) -> f64 {
        match self.side {
            Side::Exterior => -self.distance,
            _ => self.distance,
        }
    }
}

/// Second fundamental form at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeOperator {
    /// Tangential shape operator as a 3×3 matrix (annihilates the normal).
    pub matrix: SymMatrix3,
    /// Principal curvatures, descending.
    pub principal: [f64; 2],
    pub trace: f64,
}

impl Surface {
    pub fn sphere(center: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Surface::Sphere { center, radius })
    }

    pub fn unit_sphere() -> Self {
        Surface::Sphere { center: [0.0; 3], radius: 1.0 }
    }

    pub fn ellipsoid(center: Vec3, semi_axes: [f64; 3]) -> Result<Self> {
        if semi_axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidInput(format!("semi-axes must be positive, got {semi_axes:?}")));
        }
        Ok(Surface::Ellipsoid { center, semi_axes })
    }

    /// Zero set of `phi` (negative inside) contained in the box `[lo, hi]`.
    pub fn implicit<F>(phi: F, lo: Vec3, hi: Vec3) -> Result<Self>
    where
        F: Fn(Vec3) -> f64 + Send + Sync + 'static,
    {
        if (0..3).any(|i| !(hi[i] > lo[i])) {
            return Err(Error::InvalidInput("implicit surface: empty bounding box".into()));
        }
        Ok(Surface::Implicit(ImplicitSurface {
            phi: Arc::new(phi),
            lo,
            hi,
            seeds: Arc::new(OnceLock::new()),
        }))
    }

    /// Characteristic size used for finite-difference steps and tolerances.
    pub fn length_scale(&self) -> f64 {
        match self {
            Surface::Sphere { radius, .. } => *radius,
            Surface::Ellipsoid { semi_axes, .. } => semi_axes.iter().cloned().fold(0.0, f64::max),
            Surface::Implicit(s) => 0.5 * norm(sub(s.hi, s.lo)),
        }
    }

    pub fn center(&self) -> Vec3 {
        match self {
            Surface::Sphere { center, .. } | Surface::Ellipsoid { center, .. } => *center,
            Surface::Implicit(s) => scale(0.5, add(s.lo, s.hi)),
        }
    }

    /// Level-set value: negative inside, zero on the surface.
    pub fn level(&self, x: Vec3) -> f64 {
        match self {
            Surface::Sphere { center, radius } => norm(sub(x, *center)) - radius,
            Surface::Ellipsoid { center, semi_axes } => {
                let y = sub(x, *center);
                (0..3).map(|i| (y[i] / semi_axes[i]).powi(2)).sum::<f64>() - 1.0
            }
            Surface::Implicit(s) => (s.phi)(x),
        }
    }

    pub fn level_gradient(&self, x: Vec3) -> Vec3 {
        match self {
            Surface::Sphere { center, .. } => {
                let y = sub(x, *center);
                let r = norm(y);
                if r == 0.0 { [0.0, 0.0, 1.0] } else { scale(1.0 / r, y) }
            }
            Surface::Ellipsoid { center, semi_axes } => {
                let y = sub(x, *center);
                std::array::from_fn(|i| 2.0 * y[i] / (semi_axes[i] * semi_axes[i]))
            }
            Surface::Implicit(s) => {
                let h = 1e-6 * self.length_scale();
                std::array::from_fn(|i| {
                    let mut xp = x;
                    let mut xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    ((s.phi)(xp) - (s.phi)(xm)) / (2.0 * h)
                })
            }
        }
    }

    pub fn level_hessian(&self, x: Vec3) -> SymMatrix3 {
        match self {
            Surface::Sphere { center, .. } => {
                let y = sub(x, *center);
                let r = norm(y);
                let u = scale(1.0 / r, y);
                let m: Mat3 = std::array::from_fn(|i| {
                    std::array::from_fn(|j| (IDENTITY3[i][j] - u[i] * u[j]) / r)
                });
                SymMatrix3::symmetrize(&m)
            }
            Surface::Ellipsoid { semi_axes, .. } => {
                let d: [f64; 3] = std::array::from_fn(|i| 2.0 / (semi_axes[i] * semi_axes[i]));
                SymMatrix3::diag(d[0], d[1], d[2])
            }
            Surface::Implicit(s) => {
                let h = 1e-4 * self.length_scale();
                let f = |dx: Vec3| (s.phi)(add(x, dx));
                let f0 = f([0.0; 3]);
                let mut m = [[0.0; 3]; 3];
                for i in 0..3 {
                    let mut e = [0.0; 3];
                    e[i] = h;
                    m[i][i] = (f(e) - 2.0 * f0 + f(scale(-1.0, e))) / (h * h);
                    for j in (i + 1)..3 {
                        let mut a = [0.0; 3];
                        a[i] = h;
                        a[j] = h;
                        let mut b = a;
                        b[j] = -h;
                        let v = (f(a) - f(b) - f(scale(-1.0, b)) + f(scale(-1.0, a))) / (4.0 * h * h);
                        m[i][j] = v;
                        m[j][i] = v;
                    }
                }
                SymMatrix3::symmetrize(&m)
            }
        }
    }

    /// Outward unit normal at (or near) a surface point.
    pub fn normal(&self, p: Vec3) -> Result<Vec3> {
        normalize(self.level_gradient(p)).ok_or(Error::ProjectionFailed(p))
    }

    /// Closest point on the surface together with distance and side.
    pub fn project(&self, x: Vec3) -> Result<Projection> {
        let foot = match self {
            Surface::Sphere { center, radius } => {
                let y = sub(x, *center);
                let r = norm(y);
                let u = if r == 0.0 { [0.0, 0.0, 1.0] } else { scale(1.0 / r, y) };
                add(*center, scale(*radius, u))
            }
            Surface::Ellipsoid { center, semi_axes } => {
                add(*center, ellipsoid_closest(semi_axes, sub(x, *center)))
            }
            Surface::Implicit(s) => self.project_implicit(s, x)?,
        };
        let distance = match self {
            Surface::Sphere { center, radius } => (norm(sub(x, *center)) - radius).abs(),
            _ => norm(sub(x, foot)),
        };
        let lv = self.level(x);
        let side = if distance <= 1e-14 * self.length_scale() {
            Side::OnSurface
        } else if lv < 0.0 {
            Side::Interior
        } else {
            Side::Exterior
        };
        Ok(Projection { foot, distance, side })
    }

    /// Signed distance to the surface, positive inside `D`.
    pub fn signed_distance(&self, x: Vec3) -> Result<f64> {
        if let Surface::Implicit(s) = self {
            if (0..3).any(|i| x[i] < s.lo[i] || x[i] > s.hi[i]) {
                return Err(Error::InvalidInput(format!("{x:?} lies outside the bounding box")));
            }
        }
        Ok(self.project(x)?.signed())
    }

    /// Second fundamental form at a surface point `p`.
    pub fn shape_operator(&self, p: Vec3) -> Result<ShapeOperator> {
        if let Surface::Sphere { radius, .. } = self {
            let nu = self.normal(p)?;
            let k = 1.0 / radius;
            let m: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| k * (IDENTITY3[i][j] - nu[i] * nu[j])));
            return Ok(ShapeOperator {
                matrix: SymMatrix3::symmetrize(&m),
                principal: [k, k],
                trace: 2.0 / radius,
            });
        }
        let g = self.level_gradient(p);
        let gn = norm(g);
        if gn == 0.0 {
            return Err(Error::ProjectionFailed(p));
        }
        let nu = scale(1.0 / gn, g);
        let h = self.level_hessian(p);
        let frame = tangent_frame(normalize(nu).unwrap_or(nu))?;
        let m2 = SymMatrix2::new(
            h.form(frame.t1, frame.t1) / gn,
            h.form(frame.t1, frame.t2) / gn,
            h.form(frame.t2, frame.t2) / gn,
        );
        let eig = eig_sym2(&m2);
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let t = [frame.t1, frame.t2];
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let mab = match (a, b) {
                            (0, 0) => m2.a,
                            (1, 1) => m2.c,
                            _ => m2.b,
                        };
                        s += t[a][i] * mab * t[b][j];
                    }
                }
                m[i][j] = s;
            }
        }
        Ok(ShapeOperator { matrix: SymMatrix3::symmetrize(&m), principal: eig.values, trace: m2.trace() })
    }

    /// `n` quasi-uniform points on the surface (Fibonacci lattice).
    pub fn sample(&self, n: usize) -> Result<Vec<Vec3>> {
        if n == 0 {
            return Err(Error::InvalidInput("sample count must be positive".into()));
        }
        let dirs = fibonacci_sphere(n);
        match self {
            Surface::Sphere { center, radius } => {
                Ok(dirs.into_iter().map(|u| add(*center, scale(*radius, u))).collect())
            }
            Surface::Ellipsoid { center, semi_axes } => Ok(dirs
                .into_iter()
                .map(|u| add(*center, std::array::from_fn(|i| semi_axes[i] * u[i])))
                .collect()),
            Surface::Implicit(_) => {
                let c = self.center();
                let l = self.length_scale();
                dirs.into_iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let shell = [1.0, 0.5, 0.25][i % 3];
                        self.project(add(c, scale(shell * l, u))).map(|p| p.foot)
                    })
                    .collect()
            }
        }
    }

    /// Reach of the surface: exact for a sphere, otherwise estimated as
    /// `1 / max |κ|` over `n_samples` sampled points.
    pub fn reach(&self, n_samples: usize) -> Result<f64> {
        if let Surface::Sphere { radius, .. } = self {
            return Ok(*radius);
        }
        let mut kmax: f64 = 0.0;
        for p in self.sample(n_samples)? {
            let s = self.shape_operator(p)?;
            kmax = kmax.max(s.principal[0].abs()).max(s.principal[1].abs());
        }
        Ok(if kmax > 0.0 { 1.0 / kmax } else { f64::INFINITY })
    }

    /// Smallest principal curvature over the samples; positive means the
    /// sampled surface is strictly convex.
    pub fn min_principal_curvature(&self, n_samples: usize) -> Result<f64> {
        match self {
            Surface::Sphere { radius, .. } => Ok(1.0 / radius),
            Surface::Ellipsoid { semi_axes, .. } => {
                let amax = semi_axes.iter().cloned().fold(0.0, f64::max);
                let amin = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                Ok(amin / (amax * amax))
            }
            Surface::Implicit(_) => {
                let mut kmin = f64::INFINITY;
                for p in self.sample(n_samples)? {
                    kmin = kmin.min(self.shape_operator(p)?.principal[1]);
                }
                Ok(kmin)
            }
        }
    }

    pub fn require_strictly_convex(&self, n_samples: usize) -> Result<()> {
        let k = self.min_principal_curvature(n_samples)?;
        if k > 1e-8 / self.length_scale() {
            Ok(())
        } else {
            Err(Error::NonConvex(format!("smallest sampled principal curvature {k:e}")))
        }
    }

    fn project_implicit(&self, s: &ImplicitSurface, x: Vec3) -> Result<Vec3> {
        let l = self.length_scale();
        let mut best: Option<(f64, Vec3)> = None;
        let mut consider = |p: Vec3| {
            let d = norm(sub(x, p));
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, p));
            }
        };
        if let Some(p) = self.lagrange_newton(x, x) {
            consider(p);
        }
        // Starting from sampled surface points catches the cases where the
        // direct Newton iteration lands on a farther critical point.
        let seeds = s.seeds.get_or_init(|| self.seed_points());
        let mut order: Vec<(f64, usize)> =
            seeds.iter().enumerate().map(|(i, p)| (norm(sub(*p, x)), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, i) in order.iter().take(4) {
            if let Some(p) = self.lagrange_newton(x, seeds[i]) {
                consider(p);
            }
        }
        match best {
            Some((_, p)) if self.level(p).abs() <= 1e-8 * l * norm(self.level_gradient(p)).max(1.0) => Ok(p),
            _ => Err(Error::ProjectionFailed(x)),
        }
    }

    fn seed_points(&self) -> Vec<Vec3> {
        let c = self.center();
        let l = self.length_scale();
        fibonacci_sphere(512)
            .into_iter()
            .enumerate()
            .filter_map(|(i, u)| {
                let shell = [1.0, 0.5, 0.25][i % 3];
                self.newton_to_surface(add(c, scale(shell * l, u)))
            })
            .collect()
    }

    fn newton_to_surface(&self, mut p: Vec3) -> Option<Vec3> {
        let l = self.length_scale();
        for _ in 0..PROJECTION_MAX_ITER {
            let f = self.level(p);
            let g = self.level_gradient(p);
            let gg = dot(g, g);
            if gg == 0.0 {
                return None;
            }
            let step = scale(f / gg, g);
            p = sub(p, step);
            if norm(step) <= PROJECTION_TOL * l {
                return Some(p);
            }
        }
        None
    }

    /// Damped Newton on the Lagrangian `½|p − x|² + λ φ(p)`.
    fn lagrange_newton(&self, x: Vec3, start: Vec3) -> Option<Vec3> {
        let l = self.length_scale();
        let mut p = self.newton_to_surface(start)?;
        let g = self.level_gradient(p);
        let mut lam = dot(sub(x, p), g) / dot(g, g);
        let residual = |p: Vec3, lam: f64| -> [f64; 4] {
            let g = self.level_gradient(p);
            let r = add(sub(p, x), scale(lam, g));
            [r[0], r[1], r[2], self.level(p)]
        };
        let rnorm = |r: &[f64; 4]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = residual(p, lam);
        for _ in 0..PROJECTION_MAX_ITER {
            let g = self.level_gradient(p);
            let h = self.level_hessian(p).to_rows();
            let mut a = [[0.0; 4]; 4];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = IDENTITY3[i][j] + lam * h[i][j];
                }
                a[i][3] = g[i];
                a[3][i] = g[i];
            }
            let step = solve4(a, [-r[0], -r[1], -r[2], -r[3]])?;
            let r0 = rnorm(&r);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..20 {
                let pn = add(p, scale(alpha, [step[0], step[1], step[2]]));
                let ln = lam + alpha * step[3];
                let rn = residual(pn, ln);
                if rnorm(&rn) < r0 || rnorm(&rn) <= PROJECTION_TOL * l {
                    p = pn;
                    lam = ln;
                    r = rn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            let step_len = alpha * norm([step[0], step[1], step[2]]);
            if !accepted || step_len <= PROJECTION_TOL * l {
                break;
            }
        }
        (rnorm(&r) <= 1e-8 * l).then_some(p)
    }
}

/// Closest point on the axis-aligned ellipsoid with the given semi-axes.
fn ellipsoid_closest(a: &[f64; 3], y: Vec3) -> Vec3 {
    let z: Vec3 = std::array::from_fn(|i| y[i].abs());
    let sgn: Vec3 = std::array::from_fn(|i| if y[i] < 0.0 { -1.0 } else { 1.0 });
    let a2: Vec3 = std::array::from_fn(|i| a[i] * a[i]);
    let amin2 = a2.iter().cloned().fold(f64::INFINITY, f64::min);
    let f = |t: f64| (0..3).map(|i| (a[i] * z[i] / (t + a2[i])).powi(2)).sum::<f64>() - 1.0;
    let on_min_axis = (0..3).any(|i| a2[i] == amin2 && z[i] > 0.0);

    if !on_min_axis {
        // Degenerate configuration: the root may sit at t = −a_min².
        let partial: f64 = (0..3)
            .filter(|&i| a2[i] != amin2)
            .map(|i| (a[i] * z[i] / (a2[i] - amin2)).powi(2))
            .sum();
        if partial <= 1.0 {
            let mut x = [0.0; 3];
            let mut rest = 0.0;
            for i in 0..3 {
                if a2[i] != amin2 {
                    x[i] = a2[i] * z[i] / (a2[i] - amin2);
                    rest += (x[i] / a[i]).powi(2);
                }
            }
            let k = (0..3).find(|&i| a2[i] == amin2).unwrap();
            x[k] = a[k] * (1.0 - rest).max(0.0).sqrt();
            return std::array::from_fn(|i| sgn[i] * x[i]);
        }
    }

    let mut lo = -amin2;
    let mut hi = norm(z) * a.iter().cloned().fold(0.0, f64::max);
    if f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    std::array::from_fn(|i| sgn[i] * a2[i] * z[i] / (t + a2[i]))
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut s = b[row];
        for k in (row + 1)..4 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// Fibonacci lattice of `n` unit vectors.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Tubular neighbourhood of width `tau` on one side of a surface.
#[derive(Debug, Clone)]
pub struct CollarRegion {
    pub surface: Surface,
    pub tau: f64,
    pub side: Side,
}

impl CollarRegion {
    pub fn new(surface: Surface, tau: f64, side: Side) -> Result<Self> {
        let reach = surface.reach(512)?;
        if !(tau > 0.0 && tau < reach) {
            return Err(Error::InvalidInput(format!("collar width {tau} must lie in (0, reach = {reach}))")));
        }
        if side == Side::OnSurface {
            return Err(Error::InvalidInput("collar side must be interior or exterior".into()));
        }
        Ok(Self { surface, tau, side })
    }

    pub fn contains(&self, x: Vec3) -> Result<bool> {
        let p = self.surface.project(x)?;
        Ok(p.side == self.side && p.distance < self.tau)
    }
}

/// A diffeomorphism used to transport coefficients across an interface.
#[derive(Debug, Clone)]
pub enum DiffeoMap {
    Identity,
    Affine { matrix: Mat3, offset: Vec3 },
    /// `x_Γ + tν ↦ x_Γ − tν` on the two-sided collar `|t| < tau`.
    NormalReflection { surface: Surface, tau: f64 },
    /// `x_Γ − tν ↦ x_Γ + t(1 + t c)ν` with `c = β trace Π(x_Γ)`, extended by
    /// the same formula to `t < 0`.
    ConvexReflection { surface: Surface, beta: f64, tau: f64 },
}

/// Normal reflection through `surface` on the collar of half-width `tau`.
pub fn normal_reflection(surface: Surface, tau: f64) -> Result<DiffeoMap> {
    let reach = surface.reach(512)?;
    if !(tau > 0.0 && tau < reach) {
        return Err(Error::InvalidInput(format!("collar width {tau} must lie in (0, reach = {reach})")));
    }
    Ok(DiffeoMap::NormalReflection { surface, tau })
}

/// Curvature-corrected reflection through a strictly convex surface.
pub fn convex_reflection(surface: Surface, beta: f64, tau: f64) -> Result<DiffeoMap> {
    if !(beta > -1.0 && beta < 0.0) {
        return Err(Error::InvalidInput(format!("beta must lie in (-1, 0), got {beta}")));
    }
    surface.require_strictly_convex(512)?;
    let reach = surface.reach(512)?;
    if !(tau > 0.0 && tau < reach) {
        return Err(Error::InvalidInput(format!("collar width {tau} must lie in (0, reach = {reach})")));
    }
    let max_trace = match &surface {
        Surface::Sphere { radius, .. } => 2.0 / radius,
        _ => surface
            .sample(512)?
            .into_iter()
            .map(|p| surface.shape_operator(p).map(|s| s.trace))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max),
    };
    let c_min = beta * max_trace;
    if !(1.0 + 2.0 * tau * c_min > 0.0) {
        return Err(Error::InvalidInput(format!(
            "collar width {tau} too large: 1 + 2τc = {} is not positive",
            1.0 + 2.0 * tau * c_min
        )));
    }
    Ok(DiffeoMap::ConvexReflection { surface, beta, tau })
}

impl DiffeoMap {
    pub fn affine(matrix: Mat3, offset: Vec3) -> Result<Self> {
        if det3(&matrix).abs() < 1e-300 {
            return Err(Error::SingularJacobian(offset));
        }
        Ok(DiffeoMap::Affine { matrix, offset })
    }

    pub fn surface(&self) -> Option<&Surface> {
        match self {
            DiffeoMap::NormalReflection { surface, .. } | DiffeoMap::ConvexReflection { surface, .. } => {
                Some(surface)
            }
            _ => None,
        }
    }

    /// Central-difference step used when no analytic Jacobian is available.
    pub fn fd_step(&self) -> f64 {
        1e-5 * self.surface().map_or(1.0, |s| s.length_scale())
    }

    fn collar_coords(&self, surface: &Surface, tau: f64, x: Vec3) -> Result<(Vec3, Vec3, f64)> {
        let p = surface.project(x)?;
        let t = p.signed();
        if t.abs() >= tau {
            return Err(Error::OutsideCollar { point: x, tau });
        }
        let nu = surface.normal(p.foot)?;
        Ok((p.foot, nu, t))
    }

    fn curvature_coefficient(surface: &Surface, beta: f64, foot: Vec3) -> Result<f64> {
        Ok(beta * surface.shape_operator(foot)?.trace)
    }

    pub fn apply(&self, x: Vec3) -> Result<Vec3> {
        match self {
            DiffeoMap::Identity => Ok(x),
            DiffeoMap::Affine { matrix, offset } => Ok(add(mat_vec(matrix, x), *offset)),
            DiffeoMap::NormalReflection { surface, tau } => {
                let (foot, nu, t) = self.collar_coords(surface, *tau, x)?;
                Ok(add(foot, scale(t, nu)))
            }
            DiffeoMap::ConvexReflection { surface, beta, tau } => {
                let (foot, nu, t) = self.collar_coords(surface, *tau, x)?;
                let c = Self::curvature_coefficient(surface, *beta, foot)?;
                Ok(add(foot, scale(t * (1.0 + t * c), nu)))
            }
        }
    }

    pub fn inverse(&self, y: Vec3) -> Result<Vec3> {
        match self {
            DiffeoMap::Identity => Ok(y),
            DiffeoMap::Affine { matrix, offset } => {
                let inv = inverse3(matrix).ok_or(Error::SingularJacobian(y))?;
                Ok(mat_vec(&inv, sub(y, *offset)))
            }
            DiffeoMap::NormalReflection { .. } => self.apply(y),
            DiffeoMap::ConvexReflection { surface, beta, tau } => {
                let p = surface.project(y)?;
                let u = -p.signed();
                let nu = surface.normal(p.foot)?;
                let c = Self::curvature_coefficient(surface, *beta, p.foot)?;
                let disc = 1.0 + 4.0 * c * u;
                if disc < 0.0 {
                    return Err(Error::OutsideCollar { point: y, tau: *tau });
                }
                let t = 2.0 * u / (1.0 + disc.sqrt());
                if t.abs() >= *tau {
                    return Err(Error::OutsideCollar { point: y, tau: *tau });
                }
                Ok(sub(p.foot, scale(t, nu)))
            }
        }
    }

    /// `∇F(x)`, analytic for affine maps and sphere reflections, central
    /// differences otherwise.
    pub fn jacobian(&self, x: Vec3) -> Result<Mat3> {
        match self {
            DiffeoMap::Identity => Ok(IDENTITY3),
            DiffeoMap::Affine { matrix, .. } => Ok(*matrix),
            DiffeoMap::NormalReflection { surface: Surface::Sphere { center, radius }, tau } => {
                let (r, u) = radial(*center, x);
                if (r - radius).abs() >= *tau {
                    return Err(Error::OutsideCollar { point: x, tau: *tau });
                }
                Ok(radial_jacobian(u, -1.0, (2.0 * radius - r) / r))
            }
            DiffeoMap::ConvexReflection { surface: Surface::Sphere { center, radius }, beta, tau } => {
                let (r, u) = radial(*center, x);
                let t = radius - r;
                if t.abs() >= *tau {
                    return Err(Error::OutsideCollar { point: x, tau: *tau });
                }
                let c = beta * 2.0 / radius;
                let g = radius + t * (1.0 + t * c);
                Ok(radial_jacobian(u, -(1.0 + 2.0 * t * c), g / r))
            }
            _ => self.jacobian_fd(x, self.fd_step()),
        }
    }

    /// Central-difference Jacobian with step `h`.
    pub fn jacobian_fd(&self, x: Vec3, h: f64) -> Result<Mat3> {
        let mut m = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = self.apply(xp)?;
            let fm = self.apply(xm)?;
            for i in 0..3 {
                m[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(m)
    }

    fn jacobian_checked(&self, x: Vec3) -> Result<(Mat3, f64)> {
        let j = self.jacobian(x)?;
        let det = det3(&j);
        let size: f64 = j.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        if !(det.abs() > 1e-14 * size.powi(3)) {
            return Err(Error::SingularJacobian(x));
        }
        Ok((j, det))
    }
}

fn radial(center: Vec3, x: Vec3) -> (f64, Vec3) {
    let y = sub(x, center);
    let r = norm(y);
    (r, scale(1.0 / r, y))
}

/// `g' ûûᵀ + (g/r)(I − ûûᵀ)`.
fn radial_jacobian(u: Vec3, dg: f64, g_over_r: f64) -> Mat3 {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| dg * u[i] * u[j] + g_over_r * (IDENTITY3[i][j] - u[i] * u[j]))
    })
}

/// `F_*A(x′) = ∇F A ∇Fᵀ / det ∇F` evaluated at `x = F⁻¹(x′)`.
pub fn pushforward_matrix<A>(f: &DiffeoMap, a: A, x_prime: Vec3) -> Result<SymMatrix3>
where
    A: Fn(Vec3) -> SymMatrix3,
{
    let x = f.inverse(x_prime)?;
    let (j, det) = f.jacobian_checked(x)?;
    Ok(a(x).congruence(&j).scaled(1.0 / det))
}

/// `F*E(x′) = ∇F^{−T} E(x)` at `x = F⁻¹(x′)`.
pub fn pushforward_field<E>(f: &DiffeoMap, e: E, x_prime: Vec3) -> Result<CVec3>
where
    E: Fn(Vec3) -> CVec3,
{
    let x = f.inverse(x_prime)?;
    let (j, _) = f.jacobian_checked(x)?;
    let jinv_t = transpose(&inverse3(&j).ok_or(Error::SingularJacobian(x))?);
    let v = e(x);
    Ok(std::array::from_fn(|i| (0..3).map(|k| v[k] * jinv_t[i][k]).sum::<Complex64>()))
}

/// `T_*J(x′) = J(x) / det ∇F(x)` at `x = F⁻¹(x′)`.
pub fn pushforward_source<J>(f: &DiffeoMap, j: J, x_prime: Vec3) -> Result<CVec3>
where
    J: Fn(Vec3) -> CVec3,
{
    let x = f.inverse(x_prime)?;
    let (_, det) = f.jacobian_checked(x)?;
    Ok(cscale3(Complex64::new(1.0 / det, 0.0), j(x)))
}

/// Sampled certificate for the orderings `F_*A⁻ − A⁺ ≥ c d^α` and
/// `A⁺ − F_*A⁻ ≥ c d^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingCertificate {
    /// `min λ_min(F_*A⁻ − A⁺) / d^α` over the samples.
    pub c_forward: f64,
    pub worst_forward: Vec3,
    /// `min λ_min(A⁺ − F_*A⁻) / d^α` over the samples.
    pub c_mirror: f64,
    pub worst_mirror: Vec3,
    pub n_samples: usize,
}

impl OrderingCertificate {
    /// Best of the two orderings.
    pub fn best(&self) -> f64 {
        self.c_forward.max(self.c_mirror)
    }
}

/// Ordering data at one exterior collar point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingSample {
    pub point: Vec3,
    pub distance: f64,
    /// `λ_min(F_*A⁻ − A⁺) / d^α`.
    pub forward: f64,
    /// `λ_min(A⁺ − F_*A⁻) / d^α`.
    pub mirror: f64,
}

/// Per-sample values of both weighted orderings.
pub fn ordering_samples<AM, AP>(
    surface: &Surface,
    f: &DiffeoMap,
    a_minus: AM,
    a_plus: AP,
    alpha: f64,
    samples: &[Vec3],
) -> Result<Vec<OrderingSample>>
where
    AM: Fn(Vec3) -> SymMatrix3 + Sync,
    AP: Fn(Vec3) -> SymMatrix3 + Sync,
{
    if samples.is_empty() {
        return Err(Error::InvalidInput("ordering check needs at least one sample".into()));
    }
    if !(0.0..2.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 2), got {alpha}")));
    }
    samples
        .par_iter()
        .map(|&xp| {
            let d = surface.project(xp)?.distance;
            let w = if alpha == 0.0 { 1.0 } else { d.powf(alpha) };
            if !(w > 0.0) {
                return Err(Error::InvalidInput(format!("sample {xp:?} lies on the interface")));
            }
            let hat = pushforward_matrix(f, &a_minus, xp)?;
            let diff = hat.sub(&a_plus(xp));
            Ok(OrderingSample {
                point: xp,
                distance: d,
                forward: diff.min_eigenvalue() / w,
                mirror: diff.scaled(-1.0).min_eigenvalue() / w,
            })
        })
        .collect()
}

/// Reduce per-sample ordering values to a certificate (ties broken by
/// sample index).
pub fn summarize_ordering(rows: &[OrderingSample]) -> Result<OrderingCertificate> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("ordering check needs at least one sample".into()));
    }
    let argmin = |key: fn(&OrderingSample) -> f64| {
        (0..rows.len()).min_by(|&i, &j| key(&rows[i]).total_cmp(&key(&rows[j])).then(i.cmp(&j))).unwrap()
    };
    let i0 = argmin(|r| r.forward);
    let i1 = argmin(|r| r.mirror);
    Ok(OrderingCertificate {
        c_forward: rows[i0].forward,
        worst_forward: rows[i0].point,
        c_mirror: rows[i1].mirror,
        worst_mirror: rows[i1].point,
        n_samples: rows.len(),
    })
}

/// `min` over exterior collar samples of `λ_min(F_*A⁻ − A⁺)/d^α` and of the
/// mirrored ordering.
pub fn reflected_material_ordering<AM, AP>(
    surface: &Surface,
    f: &DiffeoMap,
    a_minus: AM,
    a_plus: AP,
    alpha: f64,
    samples: &[Vec3],
) -> Result<OrderingCertificate>
where
    AM: Fn(Vec3) -> SymMatrix3 + Sync,
    AP: Fn(Vec3) -> SymMatrix3 + Sync,
{
    summarize_ordering(&ordering_samples(surface, f, a_minus, a_plus, alpha, samples)?)
}

/// Exterior collar points `F(x_Γ − t_k ν)` for `t_k = τ k/(layers+1)`,
/// i.e. the image of interior layers under the reflection.
pub fn reflected_collar_samples(f: &DiffeoMap, n_surface: usize, layers: usize) -> Result<Vec<Vec3>> {
    let (surface, tau) = match f {
        DiffeoMap::NormalReflection { surface, tau } | DiffeoMap::ConvexReflection { surface, tau, .. } => {
            (surface, *tau)
        }
        _ => return Err(Error::InvalidInput("collar samples need a reflection map".into())),
    };
    let mut out = Vec::with_capacity(n_surface * layers);
    for p in surface.sample(n_surface)? {
        let nu = surface.normal(p)?;
        for k in 1..=layers {
            let t = tau * k as f64 / (layers + 1) as f64;
            out.push(f.apply(sub(p, scale(t, nu)))?);
        }
    }
    Ok(out)
}
