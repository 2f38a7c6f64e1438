//! Small dense linear algebra: 3-vectors, symmetric 2×2/3×3 matrices,
//! closed-form symmetric eigen-solves and orthonormal tangent frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

/// Returns `a / |a|`, or `None` for the zero vector.
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        None
    } else {
        Some(scale(1.0 / n, a))
    }
}

/// General 3×3 matrix, row-major.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse by the adjugate; `None` when the determinant vanishes relative to
/// the entry scale.
pub fn inverse3(m: &Mat3) -> Option<Mat3> {
    let det = det3(m);
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !det.is_finite() || det.abs() <= 1e-300 || det.abs() <= 1e-14 * scale.powi(3) {
        return None;
    }
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
        [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
        [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
    ];
    let mut out = adj;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v /= det;
        }
    }
    Some(out)
}

/// Real symmetric 3×3 matrix; only the upper triangle is stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMatrix3 {
    pub const fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self { xx, xy, xz, yy, yz, zz }
    }

    pub const fn identity() -> Self {
        Self::scalar(1.0)
    }

    pub const fn scalar(s: f64) -> Self {
        Self::new(s, 0.0, 0.0, s, 0.0, s)
    }

    pub const fn diag(a: f64, b: f64, c: f64) -> Self {
        Self::new(a, 0.0, 0.0, b, 0.0, c)
    }

    /// Builds from a full row-major matrix, rejecting asymmetry beyond
    /// `1e-12` relative to the largest entry.
    pub fn from_rows(m: &Mat3) -> Result<Self> {
        let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            if (m[i][j] - m[j][i]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric: entry ({i},{j}) = {} but ({j},{i}) = {}",
                    m[i][j], m[j][i]
                )));
            }
        }
        Ok(Self::new(m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]))
    }

    /// Symmetric part of an arbitrary matrix.
    pub fn symmetrize(m: &Mat3) -> Self {
        Self::new(
            m[0][0],
            0.5 * (m[0][1] + m[1][0]),
            0.5 * (m[0][2] + m[2][0]),
            m[1][1],
            0.5 * (m[1][2] + m[2][1]),
            m[2][2],
        )
    }

    pub fn to_rows(&self) -> Mat3 {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        [
            self.xx * v[0] + self.xy * v[1] + self.xz * v[2],
            self.xy * v[0] + self.yy * v[1] + self.yz * v[2],
            self.xz * v[0] + self.yz * v[1] + self.zz * v[2],
        ]
    }

    /// Bilinear form `<M u, v>`.
    pub fn form(&self, u: Vec3, v: Vec3) -> f64 {
        dot(self.mul_vec(u), v)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn det(&self) -> f64 {
        det3(&self.to_rows())
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(
            self.xx + o.xx,
            self.xy + o.xy,
            self.xz + o.xz,
            self.yy + o.yy,
            self.yz + o.yz,
            self.zz + o.zz,
        )
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scaled(-1.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(s * self.xx, s * self.xy, s * self.xz, s * self.yy, s * self.yz, s * self.zz)
    }

    /// `J A Jᵀ` for a general `J`, returned exactly symmetric.
    pub fn congruence(&self, j: &Mat3) -> Self {
        let a = self.to_rows();
        let m = mat_mul(&mat_mul(j, &a), &transpose(j));
        Self::symmetrize(&m)
    }

    /// `Some(s)` when the matrix is `s·I` to within `tol` (absolute).
    pub fn isotropic_value(&self, tol: f64) -> Option<f64> {
        let s = self.trace() / 3.0;
        let off = self.sub(&Self::scalar(s));
        (off.norm() <= tol).then_some(s)
    }

    pub fn eig(&self) -> SymEigen3 {
        eig_sym3(self)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig().values[2]
    }
}

/// Real symmetric 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SymMatrix2 {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    pub fn norm(&self) -> f64 {
        (self.a * self.a + self.c * self.c + 2.0 * self.b * self.b).sqrt()
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.a - o.a, self.b - o.b, self.c - o.c)
    }

    pub fn form(&self, u: [f64; 2]) -> f64 {
        self.a * u[0] * u[0] + 2.0 * self.b * u[0] * u[1] + self.c * u[1] * u[1]
    }

    pub fn mul_vec(&self, u: [f64; 2]) -> [f64; 2] {
        [self.a * u[0] + self.b * u[1], self.b * u[0] + self.c * u[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen2 {
    /// `values[0] >= values[1]`.
    pub values: [f64; 2],
    pub vectors: [[f64; 2]; 2],
}

/// Closed-form eigen-decomposition of a symmetric 2×2 matrix.
pub fn eig_sym2(m: &SymMatrix2) -> SymEigen2 {
    let half_tr = 0.5 * (m.a + m.c);
    let half_diff = 0.5 * (m.a - m.c);
    let r = half_diff.hypot(m.b);
    let l1 = half_tr + r;
    let l2 = half_tr - r;
    if r == 0.0 {
        return SymEigen2 { values: [l1, l2], vectors: [[1.0, 0.0], [0.0, 1.0]] };
    }
    // Rotation angle of the dominant eigenvector; half-angle formulas keep
    // full accuracy in both components.
    let (cos2, sin2) = (half_diff / r, m.b / r);
    let (c, s) = if cos2 >= 0.0 {
        let c = ((1.0 + cos2) * 0.5).sqrt();
        (c, sin2 / (2.0 * c))
    } else {
        let s = ((1.0 - cos2) * 0.5).sqrt().copysign(sin2);
        let s = if s == 0.0 { 1.0 } else { s };
        (sin2 / (2.0 * s), s)
    };
    SymEigen2 { values: [l1, l2], vectors: [[c, s], [-s, c]] }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen3 {
    /// Descending: `values[0] >= values[1] >= values[2]`.
    pub values: [f64; 3],
    /// Unit eigenvectors, `vectors[i]` belongs to `values[i]`.
    pub vectors: [Vec3; 3],
}

/// Symmetric 3×3 eigen-decomposition.
///
/// Eigenvalues come from the trigonometric closed form. Eigenvectors are
/// cross products of rows of `M - λI`; when the spectrum is close to
/// degenerate, or the resulting residual is not within `1e-10‖M‖`, the
/// decomposition falls back to cyclic Jacobi rotations.
pub fn eig_sym3(m: &SymMatrix3) -> SymEigen3 {
    let scale = m.norm();
    if scale == 0.0 {
        return SymEigen3 { values: [0.0; 3], vectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] };
    }
    let q = m.trace() / 3.0;
    let off2 = m.xy * m.xy + m.xz * m.xz + m.yz * m.yz;
    let p2 = (m.xx - q).powi(2) + (m.yy - q).powi(2) + (m.zz - q).powi(2) + 2.0 * off2;
    let p = (p2 / 6.0).sqrt();
    if p <= 1e-12 * scale {
        return jacobi_sym3(m);
    }
    let b = m.sub(&SymMatrix3::scalar(q)).scaled(1.0 / p);
    let r = (b.det() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    let values = [l1, l2, l3];

    let min_gap = (l1 - l2).min(l2 - l3);
    if min_gap <= 1e-6 * scale {
        return jacobi_sym3(m);
    }
    let mut vectors = [[0.0; 3]; 3];
    for (k, &lambda) in values.iter().enumerate() {
        match null_vector(m, lambda) {
            Some(v) => vectors[k] = v,
            None => return jacobi_sym3(m),
        }
    }
    // Re-orthogonalize the middle vector against the outer two.
    if let Some(v) = normalize(cross(vectors[2], vectors[0])) {
        vectors[1] = if dot(v, vectors[1]) < 0.0 { [-v[0], -v[1], -v[2]] } else { v };
    }
    let out = SymEigen3 { values, vectors };
    if max_residual(m, &out) > 1e-10 * scale {
        return jacobi_sym3(m);
    }
    out
}

fn null_vector(m: &SymMatrix3, lambda: f64) -> Option<Vec3> {
    let a = m.sub(&SymMatrix3::scalar(lambda)).to_rows();
    let candidates = [cross(a[0], a[1]), cross(a[0], a[2]), cross(a[1], a[2])];
    let best = candidates.iter().copied().max_by(|x, y| norm(*x).total_cmp(&norm(*y)))?;
    normalize(best)
}

fn max_residual(m: &SymMatrix3, e: &SymEigen3) -> f64 {
    (0..3)
        .map(|k| norm(sub(m.mul_vec(e.vectors[k]), scale(e.values[k], e.vectors[k]))))
        .fold(0.0, f64::max)
}

/// Cyclic Jacobi eigen-decomposition; always converges for symmetric input.
pub fn jacobi_sym3(m: &SymMatrix3) -> SymEigen3 {
    let mut a = m.to_rows();
    let mut v = IDENTITY3;
    for _sweep in 0..50 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let diag = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2);
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = [a[idx[0]][idx[0]], a[idx[1]][idx[1]], a[idx[2]][idx[2]]];
    let col = |j: usize| [v[0][j], v[1][j], v[2][j]];
    SymEigen3 { values, vectors: [col(idx[0]), col(idx[1]), col(idx[2])] }
}

/// `λ_min(A − B)`: the largest `c` with `A ≥ B + cI`.
pub fn min_eig_margin(a: &SymMatrix3, b: &SymMatrix3) -> f64 {
    a.sub(b).min_eigenvalue()
}

/// Orthonormal right-handed frame `{t1, t2, e}` with `t1 × t2 = e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentFrame {
    pub e: Vec3,
    pub t1: Vec3,
    pub t2: Vec3,
}

impl TangentFrame {
    /// Lifts tangent-plane coordinates back to 3-space.
    pub fn lift(&self, u: [f64; 2]) -> Vec3 {
        add(scale(u[0], self.t1), scale(u[1], self.t2))
    }

    /// Rotates the tangent pair by `angle` about `e`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            e: self.e,
            t1: add(scale(c, self.t1), scale(s, self.t2)),
            t2: add(scale(-s, self.t1), scale(c, self.t2)),
        }
    }
}

/// Deterministic tangent frame for a unit direction.
///
/// `t1` is the coordinate axis least aligned with `e` (first index on ties),
/// projected onto `e⊥` and normalized; `t2 = e × t1`. The frame is continuous
/// except where the choice of axis switches, i.e. on the planes
/// `|e_i| = |e_j|`.
pub fn tangent_frame(e: Vec3) -> Result<TangentFrame> {
    let n = norm(e);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidInput("tangent_frame: zero direction".into()));
    }
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("tangent_frame: direction is not unit (norm {n})")));
    }
    let mut axis = 0;
    for i in 1..3 {
        if e[i].abs() < e[axis].abs() {
            axis = i;
        }
    }
    let mut a = [0.0; 3];
    a[axis] = 1.0;
    let t1 = normalize(sub(a, scale(dot(a, e), e))).expect("axis least aligned with e is never parallel to it");
    let t2 = cross(e, t1);
    Ok(TangentFrame { e, t1, t2 })
}
