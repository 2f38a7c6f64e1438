//! Hypothesis audits for the stability results on sign-changing media.
//!
//! Every audit samples the interface, evaluates the relevant algebraic
//! condition pointwise and reduces to a per-component verdict. A verdict of
//! `Applies` is a sampled certificate; reports carry sample counts and the
//! worst margins so the sampling can be refined.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{min_eig_margin, SymMatrix3, Vec3};
use crate::complementing::{check_complementing, CauchyPair, CauchyStatus};
use crate::error::{Error, Result};
use crate::geometry::{
    convex_reflection, ordering_samples, reflected_collar_samples, summarize_ordering, DiffeoMap,
    OrderingCertificate, Surface,
};

/// Default number of interface samples.
pub const DEFAULT_SAMPLES: usize = 2048;
/// Relative threshold an ordering constant must exceed to certify.
pub const ORDERING_TOL: f64 = 1e-9;

/// `⟨n, x⟩ ≥ offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpace {
    pub normal: Vec3,
    pub offset: f64,
}

impl HalfSpace {
    fn contains(&self, x: Vec3) -> bool {
        crate::algebra::dot(self.normal, x) >= self.offset
    }
}

/// A labelled region: intersection of half-spaces (all of space when empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub label: String,
    #[serde(default)]
    pub half_spaces: Vec<HalfSpace>,
    pub value: SymMatrix3,
}

/// A symmetric-matrix-valued coefficient field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialField {
    Constant { value: SymMatrix3 },
    /// First region containing the point wins.
    Regions { regions: Vec<Region> },
    /// Trilinear interpolation of values on a regular grid, x fastest.
    Grid { origin: Vec3, spacing: Vec3, dims: [usize; 3], values: Vec<SymMatrix3> },
}

impl MaterialField {
    pub fn constant(value: SymMatrix3) -> Self {
        MaterialField::Constant { value }
    }

    pub fn eval(&self, x: Vec3) -> Result<SymMatrix3> {
        match self {
            MaterialField::Constant { value } => Ok(*value),
            MaterialField::Regions { regions } => regions
                .iter()
                .find(|r| r.half_spaces.iter().all(|h| h.contains(x)))
                .map(|r| r.value)
                .ok_or_else(|| Error::InvalidInput(format!("no material region contains {x:?}"))),
            MaterialField::Grid { origin, spacing, dims, values } => {
                if values.len() != dims[0] * dims[1] * dims[2] || dims.iter().any(|&d| d < 2) {
                    return Err(Error::InvalidInput("material grid has inconsistent dimensions".into()));
                }
                let mut idx = [0usize; 3];
                let mut frac = [0.0; 3];
                for k in 0..3 {
                    let s = (x[k] - origin[k]) / spacing[k];
                    let top = (dims[k] - 1) as f64;
                    if !(s >= -1e-12 && s <= top + 1e-12) {
                        return Err(Error::InvalidInput(format!("{x:?} lies outside the material grid")));
                    }
                    let s = s.clamp(0.0, top);
                    let i = (s.floor() as usize).min(dims[k] - 2);
                    idx[k] = i;
                    frac[k] = s - i as f64;
                }
                let at = |i: usize, j: usize, k: usize| values[i + dims[0] * (j + dims[1] * k)];
                let mut acc = SymMatrix3::scalar(0.0);
                for c in 0..8 {
                    let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                    let w = [di, dj, dk]
                        .iter()
                        .zip(frac.iter())
                        .map(|(&d, &f)| if d == 1 { f } else { 1.0 - f })
                        .product::<f64>();
                    if w != 0.0 {
                        acc = acc.add(&at(idx[0] + di, idx[1] + dj, idx[2] + dk).scaled(w));
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Region label at `x` for piecewise-constant fields.
    pub fn label(&self, x: Vec3) -> Option<String> {
        match self {
            MaterialField::Regions { regions } => regions
                .iter()
                .find(|r| r.half_spaces.iter().all(|h| h.contains(x)))
                .map(|r| r.label.clone()),
            _ => None,
        }
    }

    /// The constant isotropic value `s` if the field is `s·I` everywhere.
    pub fn isotropic_constant(&self) -> Option<f64> {
        match self {
            MaterialField::Constant { value } => value.isotropic_value(1e-12),
            _ => None,
        }
    }
}

/// Coefficients on both sides of the interface. The `minus` fields live in
/// `D` and are expected to be negative definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub eps_plus: MaterialField,
    pub mu_plus: MaterialField,
    pub eps_minus: MaterialField,
    pub mu_minus: MaterialField,
    /// Loss added inside `D` by the solver; audits use the lossless limit.
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_floor")]
    pub ellipticity_floor: f64,
}

fn default_floor() -> f64 {
    1e-9
}

impl MaterialSpec {
    /// Constant coefficients `(ε⁺, μ⁺)` outside and `(ε⁻, μ⁻)` inside.
    pub fn constant(eps_plus: SymMatrix3, mu_plus: SymMatrix3, eps_minus: SymMatrix3, mu_minus: SymMatrix3) -> Self {
        MaterialSpec {
            eps_plus: MaterialField::constant(eps_plus),
            mu_plus: MaterialField::constant(mu_plus),
            eps_minus: MaterialField::constant(eps_minus),
            mu_minus: MaterialField::constant(mu_minus),
            delta: 0.0,
            ellipticity_floor: default_floor(),
        }
    }

    /// Isotropic shorthand: `ε⁺ = μ⁺ = plus·I`, `ε⁻ = μ⁻ = minus·I`.
    pub fn isotropic(plus: f64, minus: f64) -> Self {
        let p = SymMatrix3::scalar(plus);
        let m = SymMatrix3::scalar(minus);
        Self::constant(p, p, m, m)
    }

    fn fields(&self) -> [(&'static str, &MaterialField, f64); 4] {
        [
            ("eps_plus", &self.eps_plus, 1.0),
            ("mu_plus", &self.mu_plus, 1.0),
            ("eps_minus", &self.eps_minus, -1.0),
            ("mu_minus", &self.mu_minus, -1.0),
        ]
    }

    /// `(ε⁺, −ε⁻, μ⁺, −μ⁻)` at `x`, checked against the ellipticity floor.
    pub fn elliptic_at(&self, x: Vec3) -> Result<[SymMatrix3; 4]> {
        let mut out = [SymMatrix3::identity(); 4];
        for (k, (name, field, sign)) in self.fields().into_iter().enumerate() {
            let m = field.eval(x)?.scaled(sign);
            let min_eig = m.min_eigenvalue();
            if !(min_eig >= self.ellipticity_floor) {
                let what = if sign < 0.0 { format!("-{name} at {x:?}") } else { format!("{name} at {x:?}") };
                return Err(Error::NotPositiveDefinite { what, min_eig });
            }
            out[k] = m;
        }
        Ok([out[0], out[2], out[1], out[3]])
    }

    /// Component label of an interface point built from region labels.
    pub fn component_label(&self, x: Vec3) -> String {
        let parts: Vec<String> = self
            .fields()
            .into_iter()
            .filter_map(|(name, f, _)| f.label(x).map(|l| format!("{name}:{l}")))
            .collect();
        if parts.is_empty() { "gamma".to_string() } else { parts.join("/") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Applies,
    Fails,
    Inconclusive,
}

/// Per-point record; the meaning of `eps`/`mu` depends on the audit
/// (complementing margin, eigenvalue gap, or weighted ordering constant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub location: Vec3,
    pub component: String,
    pub eps: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub label: String,
    pub n_samples: usize,
    pub eps: f64,
    pub mu: f64,
    pub verdict: Verdict,
    pub worst_point: Vec3,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_ordering: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_ordering: Option<String>,
}

/// Tangent direction at which a complementing condition fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub location: Vec3,
    pub coefficient: String,
    pub tangent: Vec3,
    pub margin: f64,
}

/// One row of the β scan of the convex-reflection audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub eps_forward: f64,
    pub eps_mirror: f64,
    pub mu_forward: f64,
    pub mu_mirror: f64,
    /// `min` over ε and μ of the better ordering constant.
    pub gamma: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub theorem: String,
    pub verdict: Verdict,
    pub n_samples: usize,
    pub min_margin: f64,
    pub worst_point: Vec3,
    pub components: Vec<ComponentSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witnesses: Vec<Witness>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub obligations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_scan: Vec<BetaRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub largest_certified_tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

const MAX_WITNESSES: usize = 64;

fn group_by_component<T>(items: &[(String, T)]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (label, _)) in items.iter().enumerate() {
        out.entry(label.clone()).or_default().push(i);
    }
    out
}

fn overall(components: &[ComponentSummary]) -> Verdict {
    if components.iter().any(|c| c.verdict == Verdict::Fails) {
        Verdict::Fails
    } else if components.iter().any(|c| c.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Applies
    }
}

fn worst_component(components: &[ComponentSummary]) -> (f64, Vec3) {
    components
        .iter()
        .map(|c| (c.eps.min(c.mu), c.worst_point))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::NAN, [0.0; 3]))
}

/// Complementing-condition audit on `n_samples` Fibonacci points of Γ.
pub fn audit_thm1(materials: &MaterialSpec, surface: &Surface, n_samples: usize) -> Result<AuditReport> {
    audit_thm1_at(materials, surface, &surface.sample(n_samples)?)
}

/// Complementing-condition audit at the given interface points.
pub fn audit_thm1_at(materials: &MaterialSpec, surface: &Surface, points: &[Vec3]) -> Result<AuditReport> {
    if points.is_empty() {
        return Err(Error::InvalidInput("audit needs at least one sample".into()));
    }
    struct Row {
        eps: crate::complementing::CauchyVerdict,
        mu: crate::complementing::CauchyVerdict,
    }
    let rows: Vec<(String, Row)> = points
        .par_iter()
        .map(|&x| {
            let nu = surface.normal(x)?;
            let [ep, em, mp, mm] = materials.elliptic_at(x)?;
            let eps = check_complementing(&CauchyPair::new(ep, em, nu)?);
            let mu = check_complementing(&CauchyPair::new(mp, mm, nu)?);
            Ok((materials.component_label(x), Row { eps, mu }))
        })
        .collect::<Result<_>>()?;

    let mut witnesses = Vec::new();
    for (i, (_, r)) in rows.iter().enumerate() {
        for (name, v) in [("eps", &r.eps), ("mu", &r.mu)] {
            if let (CauchyStatus::Violated, Some(w)) = (v.status, v.witness) {
                if witnesses.len() < MAX_WITNESSES {
                    witnesses.push(Witness { location: points[i], coefficient: name.into(), tangent: w, margin: v.margin });
                }
            }
        }
    }

    let mut components = Vec::new();
    for (label, idx) in group_by_component(&rows) {
        let mut eps = f64::INFINITY;
        let mut mu = f64::INFINITY;
        let mut worst = (f64::INFINITY, points[idx[0]]);
        let mut all_ok = true;
        for &i in &idx {
            let r = &rows[i].1;
            eps = eps.min(r.eps.margin);
            mu = mu.min(r.mu.margin);
            all_ok &= r.eps.is_satisfied() && r.mu.is_satisfied();
            let m = r.eps.margin.min(r.mu.margin);
            if m < worst.0 {
                worst = (m, points[i]);
            }
        }
        let verdict = if all_ok { Verdict::Applies } else { Verdict::Fails };
        components.push(ComponentSummary {
            label,
            n_samples: idx.len(),
            eps,
            mu,
            verdict,
            worst_point: worst.1,
            eps_ordering: None,
            mu_ordering: None,
        });
    }
    let (min_margin, worst_point) = worst_component(&components);
    Ok(AuditReport {
        theorem: "complementing".into(),
        verdict: overall(&components),
        n_samples: points.len(),
        min_margin,
        worst_point,
        records: rows
            .iter()
            .zip(points)
            .map(|((c, r), &x)| SampleRecord { location: x, component: c.clone(), eps: r.eps.margin, mu: r.mu.margin })
            .collect(),
        components,
        witnesses,
        obligations: vec!["coefficients are C^1 up to the interface on both sides (user-asserted)".into()],
        beta_scan: Vec::new(),
        best_beta: None,
        best_gamma: None,
        largest_certified_tau: None,
        notes: Vec::new(),
    })
}

/// Matrix-ordering audit: per component, `ε⁺ ≥ −ε⁻ + cI` or `−ε⁻ ≥ ε⁺ + cI`,
/// and likewise for μ.
pub fn audit_cor_adn(materials: &MaterialSpec, surface: &Surface, n_samples: usize) -> Result<AuditReport> {
    let points = surface.sample(n_samples)?;
    let rows: Vec<(String, [f64; 4])> = points
        .par_iter()
        .map(|&x| {
            let [ep, em, mp, mm] = materials.elliptic_at(x)?;
            Ok((
                materials.component_label(x),
                [min_eig_margin(&ep, &em), min_eig_margin(&em, &ep), min_eig_margin(&mp, &mm), min_eig_margin(&mm, &mp)],
            ))
        })
        .collect::<Result<_>>()?;

    let mut components = Vec::new();
    for (label, idx) in group_by_component(&rows) {
        let mut mins = [f64::INFINITY; 4];
        for &i in &idx {
            for k in 0..4 {
                mins[k] = mins[k].min(rows[i].1[k]);
            }
        }
        let (eps, eps_dir) = if mins[0] >= mins[1] { (mins[0], "eps_plus >= -eps_minus + cI") } else { (mins[1], "-eps_minus >= eps_plus + cI") };
        let (mu, mu_dir) = if mins[2] >= mins[3] { (mins[2], "mu_plus >= -mu_minus + cI") } else { (mins[3], "-mu_minus >= mu_plus + cI") };
        let worst_i = *idx
            .iter()
            .min_by(|&&i, &&j| {
                let a = rows[i].1;
                let b = rows[j].1;
                let key = |r: [f64; 4]| r[0].max(r[1]).min(r[2].max(r[3]));
                key(a).total_cmp(&key(b)).then(i.cmp(&j))
            })
            .unwrap();
        components.push(ComponentSummary {
            label,
            n_samples: idx.len(),
            eps,
            mu,
            verdict: if eps > 0.0 && mu > 0.0 { Verdict::Applies } else { Verdict::Fails },
            worst_point: points[worst_i],
            eps_ordering: Some(eps_dir.into()),
            mu_ordering: Some(mu_dir.into()),
        });
    }
    let (min_margin, worst_point) = worst_component(&components);
    Ok(AuditReport {
        theorem: "ordered_media".into(),
        verdict: overall(&components),
        n_samples: points.len(),
        min_margin,
        worst_point,
        records: rows
            .iter()
            .zip(&points)
            .map(|((c, r), &x)| SampleRecord { location: x, component: c.clone(), eps: r[0].max(r[1]), mu: r[2].max(r[3]) })
            .collect(),
        components,
        witnesses: Vec::new(),
        obligations: vec!["coefficients are C^1 up to the interface on both sides (user-asserted)".into()],
        beta_scan: Vec::new(),
        best_beta: None,
        best_gamma: None,
        largest_certified_tau: None,
        notes: Vec::new(),
    })
}

/// Sampling of the exterior collar used by the reflection audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollarSampling {
    pub n_surface: usize,
    pub layers: usize,
}

impl Default for CollarSampling {
    fn default() -> Self {
        CollarSampling { n_surface: DEFAULT_SAMPLES, layers: 4 }
    }
}

fn ordering_label(c: &OrderingCertificate, name: &str) -> String {
    if c.c_forward >= c.c_mirror {
        format!("F_*{name}_minus - {name}_plus >= c d^alpha")
    } else {
        format!("{name}_plus - F_*{name}_minus >= c d^alpha")
    }
}

struct Thm2Parts {
    components: Vec<ComponentSummary>,
    eps: OrderingCertificate,
    mu: OrderingCertificate,
    n_samples: usize,
}

fn thm2_parts(
    materials: &MaterialSpec,
    surface: &Surface,
    reflection: &DiffeoMap,
    alpha1: f64,
    alpha2: f64,
    samples: &[Vec3],
) -> Result<Thm2Parts> {
    let field = |f: &MaterialField| {
        let f = f.clone();
        move |x: Vec3| f.eval(x).unwrap_or(SymMatrix3::scalar(f64::NAN))
    };
    // Validate ellipticity at the preimages and images before pushing forward.
    for &xp in samples {
        let x = reflection.inverse(xp)?;
        for (name, f, sign) in [("eps_minus", &materials.eps_minus, -1.0), ("mu_minus", &materials.mu_minus, -1.0)] {
            let m = f.eval(x)?.scaled(sign);
            if !(m.min_eigenvalue() >= materials.ellipticity_floor) {
                return Err(Error::NotPositiveDefinite { what: format!("-{name} at {x:?}"), min_eig: m.min_eigenvalue() });
            }
        }
        for (name, f) in [("eps_plus", &materials.eps_plus), ("mu_plus", &materials.mu_plus)] {
            let m = f.eval(xp)?;
            if !(m.min_eigenvalue() >= materials.ellipticity_floor) {
                return Err(Error::NotPositiveDefinite { what: format!("{name} at {xp:?}"), min_eig: m.min_eigenvalue() });
            }
        }
    }
    let eps_rows = ordering_samples(surface, reflection, field(&materials.eps_minus), field(&materials.eps_plus), alpha1, samples)?;
    let mu_rows = ordering_samples(surface, reflection, field(&materials.mu_minus), field(&materials.mu_plus), alpha2, samples)?;

    let labels: Vec<(String, ())> = samples
        .iter()
        .map(|&xp| Ok((materials.component_label(surface.project(xp)?.foot), ())))
        .collect::<Result<_>>()?;
    let mut components = Vec::new();
    for (label, idx) in group_by_component(&labels) {
        let e: Vec<_> = idx.iter().map(|&i| eps_rows[i]).collect();
        let m: Vec<_> = idx.iter().map(|&i| mu_rows[i]).collect();
        let ce = summarize_ordering(&e)?;
        let cm = summarize_ordering(&m)?;
        let scale_e = materials.eps_plus.eval(samples[idx[0]])?.norm();
        let scale_m = materials.mu_plus.eval(samples[idx[0]])?.norm();
        let ok = ce.best() > ORDERING_TOL * scale_e && cm.best() > ORDERING_TOL * scale_m;
        let worst_point = if ce.best() <= cm.best() {
            if ce.c_forward >= ce.c_mirror { ce.worst_forward } else { ce.worst_mirror }
        } else if cm.c_forward >= cm.c_mirror {
            cm.worst_forward
        } else {
            cm.worst_mirror
        };
        components.push(ComponentSummary {
            label,
            n_samples: idx.len(),
            eps: ce.best(),
            mu: cm.best(),
            verdict: if ok { Verdict::Applies } else { Verdict::Fails },
            worst_point,
            eps_ordering: Some(ordering_label(&ce, "eps")),
            mu_ordering: Some(ordering_label(&cm, "mu")),
        });
    }
    Ok(Thm2Parts {
        components,
        eps: summarize_ordering(&eps_rows)?,
        mu: summarize_ordering(&mu_rows)?,
        n_samples: samples.len(),
    })
}

/// Reflection audit: per component, one of the two weighted orderings
/// between `F_*ε⁻` and `ε⁺` (exponent `alpha1`) and likewise for μ
/// (`alpha2`) must hold with a positive constant on the exterior collar.
pub fn audit_thm2(
    materials: &MaterialSpec,
    surface: &Surface,
    reflection: &DiffeoMap,
    alpha1: f64,
    alpha2: f64,
    sampling: CollarSampling,
) -> Result<AuditReport> {
    for a in [alpha1, alpha2] {
        if !(0.0..2.0).contains(&a) {
            return Err(Error::InvalidInput(format!("ordering exponents must lie in [0, 2), got {a}")));
        }
    }
    if reflection.surface().is_none() {
        return Err(Error::InvalidInput("audit_thm2 needs a reflection through the interface".into()));
    }
    let samples = reflected_collar_samples(reflection, sampling.n_surface, sampling.layers)?;
    for &xp in &samples {
        if surface.project(xp)?.signed() > 0.0 {
            return Err(Error::InvalidInput(format!("reflection image {xp:?} is not in the exterior collar")));
        }
    }
    let parts = thm2_parts(materials, surface, reflection, alpha1, alpha2, &samples)?;
    let mut obligations = vec!["the interface is of class C^2 (user-asserted)".to_string()];
    if alpha1 + alpha2 > 0.0 {
        obligations.push(
            "supp J does not meet the ordering region or its preimage under the reflection (user-asserted)".into(),
        );
    }
    let (min_margin, worst_point) = worst_component(&parts.components);
    Ok(AuditReport {
        theorem: "reflection".into(),
        verdict: overall(&parts.components),
        n_samples: parts.n_samples,
        min_margin,
        worst_point,
        records: Vec::new(),
        witnesses: Vec::new(),
        obligations,
        beta_scan: Vec::new(),
        best_beta: None,
        best_gamma: None,
        largest_certified_tau: None,
        notes: vec![
            format!(
                "eps: forward {:.6e}, mirror {:.6e}; mu: forward {:.6e}, mirror {:.6e}",
                parts.eps.c_forward, parts.eps.c_mirror, parts.mu.c_forward, parts.mu.c_mirror
            ),
        ],
        components: parts.components,
    })
}

/// β values scanned by [`audit_cor_isotropic3`]: `−0.95, −0.90, …, −0.05`
/// plus `−0.99` and `−0.01`.
pub fn default_beta_grid() -> Vec<f64> {
    let mut v = vec![-0.99];
    v.extend((1..=19).rev().map(|k| -(k as f64) * 0.05));
    v.push(-0.01);
    v
}

fn beta_row(materials: &MaterialSpec, surface: &Surface, beta: f64, tau: f64, sampling: CollarSampling) -> Result<BetaRow> {
    let f = convex_reflection(surface.clone(), beta, tau)?;
    let samples = reflected_collar_samples(&f, sampling.n_surface, sampling.layers)?;
    let p = thm2_parts(materials, surface, &f, 1.0, 1.0, &samples)?;
    let gamma = p.components.iter().map(|c| c.eps.min(c.mu)).fold(f64::INFINITY, f64::min);
    let certified = p.components.iter().all(|c| c.verdict == Verdict::Applies);
    Ok(BetaRow {
        beta,
        eps_forward: p.eps.c_forward,
        eps_mirror: p.eps.c_mirror,
        mu_forward: p.mu.c_forward,
        mu_mirror: p.mu.c_mirror,
        gamma,
        certified,
    })
}

/// Convex-reflection audit for constant isotropic `±(e I, m I)` media on a
/// strictly convex interface, with `α1 = α2 = 1`.
pub fn audit_cor_isotropic3(
    materials: &MaterialSpec,
    surface: &Surface,
    beta: f64,
    tau: f64,
    sampling: CollarSampling,
    beta_grid: &[f64],
) -> Result<AuditReport> {
    if matches!(surface, Surface::Implicit(_)) {
        surface.require_strictly_convex(sampling.n_surface.min(1024))?;
    }
    let iso = |f: &MaterialField, name: &str| {
        f.isotropic_constant()
            .ok_or_else(|| Error::InvalidInput(format!("{name} must be a constant isotropic matrix")))
    };
    let (ep, mp) = (iso(&materials.eps_plus, "eps_plus")?, iso(&materials.mu_plus, "mu_plus")?);
    let (em, mm) = (iso(&materials.eps_minus, "eps_minus")?, iso(&materials.mu_minus, "mu_minus")?);
    if !(ep > 0.0 && mp > 0.0) || (em + ep).abs() > 1e-12 * ep || (mm + mp).abs() > 1e-12 * mp {
        return Err(Error::InvalidInput(
            "materials must be (e I, m I) outside and -(e I, m I) inside with e, m > 0".into(),
        ));
    }

    let reflection = convex_reflection(surface.clone(), beta, tau)?;
    let mut report = audit_thm2(materials, surface, &reflection, 1.0, 1.0, sampling)?;
    report.theorem = "convex_reflection".into();
    report.obligations[0] = "the interface is of class C^3 (user-asserted)".into();

    let mut grid: Vec<f64> = beta_grid.to_vec();
    if !grid.iter().any(|&b| b == beta) {
        grid.push(beta);
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    let rows = grid
        .iter()
        .map(|&b| beta_row(materials, surface, b, tau, sampling))
        .collect::<Result<Vec<_>>>()?;
    let best = rows
        .iter()
        .filter(|r| r.certified)
        .max_by(|a, b| a.gamma.total_cmp(&b.gamma).then(b.beta.total_cmp(&a.beta)));
    report.best_beta = best.map(|r| r.beta);
    report.best_gamma = best.map(|r| r.gamma);
    if let Some(b) = report.best_beta {
        let mut t = tau;
        for _ in 0..6 {
            if beta_row(materials, surface, b, t, sampling)?.certified {
                report.largest_certified_tau = Some(t);
                break;
            }
            t *= 0.5;
        }
    }
    report.beta_scan = rows;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{dot, norm};
    use crate::geometry::normal_reflection;

    #[test]
    fn ordered_isotropic_media_apply() {
        let m = MaterialSpec::isotropic(1.0, -2.0);
        let r = audit_thm1(&m, &Surface::unit_sphere(), 256).unwrap();
        assert_eq!(r.verdict, Verdict::Applies);
        assert!(r.min_margin > 0.0);
        let r = audit_cor_adn(&m, &Surface::unit_sphere(), 256).unwrap();
        assert_eq!(r.verdict, Verdict::Applies);
        assert!((r.min_margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn critical_contrast_fails_everywhere() {
        let m = MaterialSpec::isotropic(1.0, -1.0);
        let r = audit_thm1(&m, &Surface::unit_sphere(), 128).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert!(r.records.iter().all(|s| s.eps <= 0.0 && s.mu <= 0.0));
        assert_eq!(audit_cor_adn(&m, &Surface::unit_sphere(), 128).unwrap().verdict, Verdict::Fails);
    }

    #[test]
    fn anisotropic_failure_at_north_pole() {
        let m = MaterialSpec::constant(
            SymMatrix3::identity(),
            SymMatrix3::identity(),
            SymMatrix3::diag(-4.0, -0.25, -1.0),
            SymMatrix3::scalar(-2.0),
        );
        let r = audit_thm1_at(&m, &Surface::unit_sphere(), &[[0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        let w = &r.witnesses[0];
        assert_eq!(w.coefficient, "eps");
        let expected = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt(), 0.0];
        assert!((dot(w.tangent, expected).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_region_example_per_component() {
        let up = HalfSpace { normal: [0.0, 0.0, 1.0], offset: 0.0 };
        let regions = |a: f64, b: f64| MaterialField::Regions {
            regions: vec![
                Region { label: "upper".into(), half_spaces: vec![up.clone()], value: SymMatrix3::scalar(a) },
                Region { label: "lower".into(), half_spaces: vec![], value: SymMatrix3::scalar(b) },
            ],
        };
        let m = MaterialSpec {
            eps_plus: MaterialField::constant(SymMatrix3::identity()),
            mu_plus: MaterialField::constant(SymMatrix3::identity()),
            eps_minus: regions(-3.0, -2.0),
            mu_minus: regions(-3.0, -2.0),
            delta: 0.0,
            ellipticity_floor: 1e-9,
        };
        let r = audit_cor_adn(&m, &Surface::unit_sphere(), 512).unwrap();
        assert_eq!(r.verdict, Verdict::Applies);
        assert_eq!(r.components.len(), 2);
        assert!((r.min_margin - 1.0).abs() < 1e-12);
        let upper = r.components.iter().find(|c| c.label.contains("upper")).unwrap();
        assert!((upper.eps - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_elliptic_input_is_an_error() {
        let m = MaterialSpec::isotropic(1.0, 0.5);
        assert!(matches!(audit_thm1(&m, &Surface::unit_sphere(), 16), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn grid_field_interpolates_linearly() {
        let values: Vec<SymMatrix3> = (0..8)
            .map(|c| {
                let (i, j, k) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
                SymMatrix3::scalar(1.0 + i as f64 + 2.0 * j as f64 + 4.0 * k as f64)
            })
            .collect();
        let g = MaterialField::Grid { origin: [0.0; 3], spacing: [1.0; 3], dims: [2, 2, 2], values };
        let v = g.eval([0.25, 0.5, 0.75]).unwrap();
        assert!((v.xx - (1.0 + 0.25 + 1.0 + 3.0)).abs() < 1e-14);
        assert!(g.eval([1.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn reflection_audits() {
        let s = Surface::unit_sphere();
        let sampling = CollarSampling { n_surface: 128, layers: 3 };
        let f = normal_reflection(s.clone(), 0.05).unwrap();
        let r = audit_thm2(&MaterialSpec::isotropic(1.0, -2.0), &s, &f, 0.0, 0.0, sampling).unwrap();
        assert_eq!(r.verdict, Verdict::Applies);
        let r = audit_thm2(&MaterialSpec::isotropic(1.0, -1.0), &s, &f, 0.0, 0.0, sampling).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert!(r.obligations.len() == 1);
        let r = audit_thm2(&MaterialSpec::isotropic(1.0, -1.0), &s, &f, 1.0, 0.0, sampling).unwrap();
        assert_eq!(r.obligations.len(), 2);
    }

    #[test]
    fn convex_reflection_audit_rejects_bad_inputs() {
        let sampling = CollarSampling { n_surface: 64, layers: 2 };
        let torus = Surface::implicit(
            |x| ((x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0).powi(2) + x[2] * x[2] - 0.09,
            [-1.5, -1.5, -0.5],
            [1.5, 1.5, 0.5],
        )
        .unwrap();
        let m = MaterialSpec::isotropic(1.0, -1.0);
        assert!(matches!(audit_cor_isotropic3(&m, &torus, -0.9, 0.05, sampling, &[]), Err(Error::NonConvex(_))));
        let m2 = MaterialSpec::isotropic(1.0, -2.0);
        assert!(audit_cor_isotropic3(&m2, &Surface::unit_sphere(), -0.9, 0.2, sampling, &[]).is_err());
    }

    #[test]
    fn convex_reflection_ordering_on_sphere() {
        // With c = β·2/R < 0 the reflected coefficient has radial eigenvalue
        // below one and tangential eigenvalues above one, so neither ordering
        // is strict.
        let sampling = CollarSampling { n_surface: 64, layers: 4 };
        let m = MaterialSpec::isotropic(1.0, -1.0);
        let r = audit_cor_isotropic3(&m, &Surface::unit_sphere(), -0.9, 0.2, sampling, &default_beta_grid()).unwrap();
        for row in &r.beta_scan {
            assert!(row.eps_forward < 0.0 && row.eps_mirror < 0.0, "{row:?}");
        }
        let x = [0.0, 0.0, 0.9];
        let f = convex_reflection(Surface::unit_sphere(), -0.9, 0.2).unwrap();
        let y = f.apply(x).unwrap();
        let hat = crate::geometry::pushforward_matrix(&f, |_| SymMatrix3::scalar(-1.0), y).unwrap();
        let e = hat.eig().values;
        assert!((e[0] - 1.5625).abs() < 1e-12 && (e[2] - 0.64 * (0.9f64 / 1.082).powi(2)).abs() < 1e-12, "{e:?}");
        assert!(norm(y) > 1.0);
    }
}
