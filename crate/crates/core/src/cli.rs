//! Command-line front end: config ingestion, subcommand dispatch and report
//! serialization.
//!
//! Every run writes `report.json` (a [`ReportEnvelope`]) and `series.csv`
//! into the output directory. Exit codes: 0 on success, 1 on errors, 2 when
//! `--strict` is set and the verdict is a hypothesis violation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::{SymMatrix3, Vec3};
use crate::audit::{self, AuditReport, CollarSampling, MaterialField, MaterialSpec, Verdict};
use crate::complementing::{check_complementing, CauchyPair, CauchyStatus, CauchyVerdict};
use crate::error::{Error, Result};
use crate::estimates::{self, BallQuadrature, RatioRow, TraceCheck};
use crate::geometry::{convex_reflection, normal_reflection, Surface};
use crate::mie::{self, LayeredSphereProblem, NormRegions, Polarization, Source, SweepReport, TruncationPolicy};

/// Current config schema version.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "metastab", version, about = "Stability checks for Maxwell transmission problems with sign-changing coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide the complementing condition for one pair of matrices.
    CheckComplementing(CheckArgs),
    /// Audit an interface against the stability hypotheses.
    Audit(RunArgs),
    /// Run a loss sweep of the layered-sphere solver.
    MieSweep(RunArgs),
    /// Run the anti-curl and trace-estimate checks.
    Estimates(RunArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory for report.json and series.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 when the verdict violates the hypotheses.
    #[arg(long)]
    strict: bool,
    /// Seed for randomized corpora (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// First matrix: scalar ("2"), scalar identity ("2I", "-I") or nine
    /// comma-separated row-major entries.
    #[arg(long, allow_hyphen_values = true)]
    a1: String,
    #[arg(long, allow_hyphen_values = true)]
    a2: String,
    /// Unit normal as "x,y,z".
    #[arg(long, allow_hyphen_values = true)]
    e: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

/// A symmetric tensor in config files: a number `s` (meaning `sI`), a
/// string such as `"2I"` or `"-I"`, or a 3×3 row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorSpec {
    Scalar(f64),
    Text(String),
    Rows([[f64; 3]; 3]),
}

impl TensorSpec {
    pub fn to_matrix(&self, key: &str) -> Result<SymMatrix3> {
        match self {
            TensorSpec::Scalar(s) => Ok(SymMatrix3::scalar(*s)),
            TensorSpec::Text(t) => parse_tensor(t).map_err(|e| config_error(key, e.to_string())),
            TensorSpec::Rows(rows) => SymMatrix3::from_rows(rows).map_err(|e| config_error(key, e.to_string())),
        }
    }
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

/// Parses `"2"`, `"2I"`, `"-I"`, `"I"` or nine comma-separated entries.
pub fn parse_tensor(text: &str) -> Result<SymMatrix3> {
    let t = text.trim();
    let bad = || Error::InvalidInput(format!("cannot parse matrix {text:?}"));
    if let Some(prefix) = t.strip_suffix('I') {
        let s = match prefix.trim() {
            "" | "+" => 1.0,
            "-" => -1.0,
            p => p.parse::<f64>().map_err(|_| bad())?,
        };
        return Ok(SymMatrix3::scalar(s));
    }
    let parts: Vec<f64> = t.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    match parts.len() {
        1 => Ok(SymMatrix3::scalar(parts[0])),
        9 => SymMatrix3::from_rows(&[[parts[0], parts[1], parts[2]], [parts[3], parts[4], parts[5]], [parts[6], parts[7], parts[8]]]),
        _ => Err(bad()),
    }
}

fn parse_vec3(text: &str) -> Result<Vec3> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidInput(format!("cannot parse vector {text:?}")))?;
    match parts.as_slice() {
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(Error::InvalidInput(format!("vector {text:?} needs three components"))),
    }
}

/// A material coefficient: a tensor shorthand or a full field description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialValue {
    Tensor(TensorSpec),
    Field(MaterialField),
}

impl MaterialValue {
    fn to_field(&self, key: &str) -> Result<MaterialField> {
        match self {
            MaterialValue::Tensor(t) => Ok(MaterialField::constant(t.to_matrix(key)?)),
            MaterialValue::Field(f) => Ok(f.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialsConfig {
    pub eps_plus: MaterialValue,
    pub mu_plus: MaterialValue,
    pub eps_minus: MaterialValue,
    pub mu_minus: MaterialValue,
    #[serde(default)]
    pub ellipticity_floor: Option<f64>,
}

impl MaterialsConfig {
    pub fn to_spec(&self) -> Result<MaterialSpec> {
        let mut spec = MaterialSpec::isotropic(1.0, -1.0);
        spec.eps_plus = self.eps_plus.to_field("materials.eps_plus")?;
        spec.mu_plus = self.mu_plus.to_field("materials.mu_plus")?;
        spec.eps_minus = self.eps_minus.to_field("materials.eps_minus")?;
        spec.mu_minus = self.mu_minus.to_field("materials.mu_minus")?;
        if let Some(f) = self.ellipticity_floor {
            spec.ellipticity_floor = f;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceConfig {
    Sphere {
        #[serde(default)]
        center: Vec3,
        radius: f64,
    },
    Ellipsoid {
        #[serde(default)]
        center: Vec3,
        semi_axes: [f64; 3],
    },
    /// Torus about the z-axis (an implicit, non-convex surface).
    Torus { major: f64, minor: f64 },
}

impl SurfaceConfig {
    pub fn build(&self) -> Result<Surface> {
        let wrap = |e: Error| config_error("surface", e.to_string());
        match self {
            SurfaceConfig::Sphere { center, radius } => Surface::sphere(*center, *radius).map_err(wrap),
            SurfaceConfig::Ellipsoid { center, semi_axes } => Surface::ellipsoid(*center, *semi_axes).map_err(wrap),
            SurfaceConfig::Torus { major, minor } => {
                let (a, b) = (*major, *minor);
                if !(a > b && b > 0.0) {
                    return Err(config_error("surface", "torus needs major > minor > 0"));
                }
                let ext = a + b + 0.5 * b;
                Surface::implicit(
                    move |x| ((x[0] * x[0] + x[1] * x[1]).sqrt() - a).powi(2) + x[2] * x[2] - b * b,
                    [-ext, -ext, -1.5 * b],
                    [ext, ext, 1.5 * b],
                )
                .map_err(wrap)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditTheorem {
    /// Complementing conditions for both pairs at every sampled point.
    Complementing,
    /// `ε⁺ + ε⁻` and `μ⁺ + μ⁻` definite (ordered media).
    OrderedMedia,
    /// Weighted orderings under a reflection through the interface.
    Reflection,
    /// Convex reflection with a β scan for isotropic constant media.
    ConvexReflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionKind {
    Normal,
    Convex,
}

fn default_samples() -> usize {
    audit::DEFAULT_SAMPLES
}

fn default_layers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub theorem: AuditTheorem,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// `(α₁, α₂)` for the reflection audit.
    #[serde(default)]
    pub alpha: Option<[f64; 2]>,
    #[serde(default)]
    pub reflection: Option<ReflectionKind>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub beta_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    PlaneWave {
        #[serde(default = "default_direction")]
        direction: Vec3,
        #[serde(default = "default_polarization")]
        polarization: Vec3,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    ShellCurrent {
        radius: f64,
        n: usize,
        #[serde(default)]
        m: Option<i64>,
        polarization: Polarization,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

fn default_direction() -> Vec3 {
    [0.0, 0.0, 1.0]
}

fn default_polarization() -> Vec3 {
    [1.0, 0.0, 0.0]
}

fn default_amplitude() -> f64 {
    1.0
}

impl SourceConfig {
    fn build(&self) -> Source {
        match self {
            SourceConfig::PlaneWave { direction, polarization, amplitude } => {
                Source::PlaneWave { direction: *direction, polarization: *polarization, amplitude: *amplitude }
            }
            SourceConfig::ShellCurrent { radius, n, m, polarization, amplitude } => Source::ShellCurrent {
                radius: *radius,
                n: *n,
                m: m.unwrap_or(1.min(*n as i64)),
                polarization: *polarization,
                amplitude: Complex64::new(*amplitude, 0.0),
            },
        }
    }
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MieConfig {
    #[serde(default = "default_one")]
    pub omega: f64,
    #[serde(default = "default_one")]
    pub radius: f64,
    pub eps_minus: f64,
    pub mu_minus: f64,
    #[serde(default = "mie::default_deltas")]
    pub deltas: Vec<f64>,
    pub source: SourceConfig,
    #[serde(default)]
    pub truncation: Option<TruncationPolicy>,
    #[serde(default)]
    pub outer_radius: Option<f64>,
    #[serde(default)]
    pub collar_halfwidth: Option<f64>,
}

fn default_ks() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
}

fn default_alphas() -> Vec<f64> {
    vec![0.0, 1.0, 1.5, 2.5]
}

fn default_grid() -> usize {
    64
}

fn default_osc() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}

fn default_corpus() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatesConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_osc")]
    pub oscillatory_ks: Vec<f64>,
    #[serde(default = "default_corpus")]
    pub polynomial_fields: usize,
}

impl Default for EstimatesConfig {
    fn default() -> Self {
        EstimatesConfig {
            ks: default_ks(),
            alphas: default_alphas(),
            grid: default_grid(),
            oscillatory_ks: default_osc(),
            polynomial_fields: default_corpus(),
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

/// Full run configuration. Sections not used by a subcommand may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub materials: Option<MaterialsConfig>,
    #[serde(default)]
    pub surface: Option<SurfaceConfig>,
    #[serde(default)]
    pub audit: Option<AuditConfig>,
    #[serde(default)]
    pub mie: Option<MieConfig>,
    #[serde(default)]
    pub estimates: Option<EstimatesConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn empty() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            materials: None,
            surface: None,
            audit: None,
            mie: None,
            estimates: None,
            output_dir: None,
        }
    }

    /// Parses and validates a config. Errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".to_string());
            config_error(&key, msg)
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(config_error("version", format!("unsupported version {} (expected {CONFIG_VERSION})", cfg.version)));
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical (sorted-key, compact) JSON form.
    pub fn hash(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let canonical = serde_json::to_string(&value)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Result of `check-complementing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementingReport {
    pub a1: SymMatrix3,
    pub a2: SymMatrix3,
    pub e: Vec3,
    pub verdict: CauchyVerdict,
}

/// Result of `estimates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesReport {
    /// Largest anti-curl reconstruction error relative to `sup |f|`, per field.
    pub curl_errors: Vec<(String, f64)>,
    pub ratios: Vec<RatioRow>,
    /// `(α, max_k ratio / ratio(k_first))`.
    pub growth: Vec<(f64, f64)>,
    pub traces: Vec<TraceCheck>,
    pub oscillatory: Vec<TraceCheck>,
    /// Largest trace ratio over the corpus.
    pub trace_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Payload {
    Complementing(ComplementingReport),
    Audit(AuditReport),
    Sweep(SweepReport),
    Estimates(EstimatesReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub payload: Payload,
}

impl ReportEnvelope {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Hypothesis-violation verdict of a payload, for `--strict`.
pub fn violates(payload: &Payload) -> bool {
    match payload {
        Payload::Complementing(r) => r.verdict.status == CauchyStatus::Violated,
        Payload::Audit(r) => r.verdict != Verdict::Applies,
        Payload::Sweep(r) => r.resonant || r.rows.iter().any(|row| row.truncation_warning),
        Payload::Estimates(r) => r.growth.iter().any(|&(a, g)| a < 2.0 && g >= 2.0),
    }
}

fn csv_complementing(r: &ComplementingReport) -> String {
    let w = r.verdict.witness.map_or(String::from(",,"), |w| format!("{:.16e},{:.16e},{:.16e}", w[0], w[1], w[2]));
    format!("status,margin,scale,witness_x,witness_y,witness_z\n{:?},{:.16e},{:.16e},{w}\n", r.verdict.status, r.verdict.margin, r.verdict.scale)
}

fn csv_audit(r: &AuditReport) -> String {
    if !r.beta_scan.is_empty() {
        let mut s = String::from("beta,eps_forward,eps_mirror,mu_forward,mu_mirror,gamma,certified\n");
        for b in &r.beta_scan {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                b.beta, b.eps_forward, b.eps_mirror, b.mu_forward, b.mu_mirror, b.gamma, b.certified
            ));
        }
        return s;
    }
    if !r.records.is_empty() {
        let mut s = String::from("x,y,z,component,eps,mu\n");
        for rec in &r.records {
            let p = rec.location;
            s.push_str(&format!("{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}\n", p[0], p[1], p[2], rec.component, rec.eps, rec.mu));
        }
        return s;
    }
    let mut s = String::from("component,n_samples,eps,mu,verdict\n");
    for c in &r.components {
        s.push_str(&format!("{},{},{:.16e},{:.16e},{:?}\n", c.label, c.n_samples, c.eps, c.mu, c.verdict));
    }
    s
}

fn csv_estimates(r: &EstimatesReport) -> String {
    let mut s = String::from("field,kind,param,ratio,lhs,rhs\n");
    for (id, err) in &r.curl_errors {
        s.push_str(&format!("{id},curl_error,,{err:.16e},,\n"));
    }
    for row in &r.ratios {
        s.push_str(&format!("{},alpha,{:.16e},{:.16e},,\n", row.field, row.alpha, row.ratio));
    }
    for t in r.traces.iter().chain(&r.oscillatory) {
        s.push_str(&format!(
            "{},trace,{},{:.16e},{:.16e},{:.16e}\n",
            t.field,
            t.grid,
            t.ratio(),
            t.lhs,
            t.u_norm * t.graph_norm
        ));
    }
    s
}

/// CSV rendering of a payload.
pub fn payload_csv(payload: &Payload) -> String {
    match payload {
        Payload::Complementing(r) => csv_complementing(r),
        Payload::Audit(r) => csv_audit(r),
        Payload::Sweep(r) => r.to_csv(),
        Payload::Estimates(r) => csv_estimates(r),
    }
}

fn run_check(args: &CheckArgs) -> Result<Payload> {
    let a1 = parse_tensor(&args.a1)?;
    let a2 = parse_tensor(&args.a2)?;
    let e = parse_vec3(&args.e)?;
    let pair = CauchyPair::new(a1, a2, e)?;
    Ok(Payload::Complementing(ComplementingReport { a1, a2, e, verdict: check_complementing(&pair) }))
}

fn require<'a, T>(section: &'a Option<T>, key: &str) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| config_error(key, format!("missing required section `{key}`")))
}

/// Runs the audit described by `cfg`.
pub fn run_audit(cfg: &RunConfig) -> Result<AuditReport> {
    let materials = require(&cfg.materials, "materials")?.to_spec()?;
    let surface = require(&cfg.surface, "surface")?.build()?;
    let a = require(&cfg.audit, "audit")?;
    let sampling = CollarSampling { n_surface: a.samples, layers: a.layers };
    match a.theorem {
        AuditTheorem::Complementing => audit::audit_thm1(&materials, &surface, a.samples),
        AuditTheorem::OrderedMedia => audit::audit_cor_adn(&materials, &surface, a.samples),
        AuditTheorem::Reflection => {
            let tau = a.tau.ok_or_else(|| config_error("audit.tau", "reflection audit needs tau"))?;
            let [a1, a2] = a.alpha.unwrap_or([0.0, 0.0]);
            let map = match a.reflection.unwrap_or(ReflectionKind::Normal) {
                ReflectionKind::Normal => normal_reflection(surface.clone(), tau)?,
                ReflectionKind::Convex => {
                    let beta = a.beta.ok_or_else(|| config_error("audit.beta", "convex reflection needs beta"))?;
                    convex_reflection(surface.clone(), beta, tau)?
                }
            };
            audit::audit_thm2(&materials, &surface, &map, a1, a2, sampling)
        }
        AuditTheorem::ConvexReflection => {
            let tau = a.tau.ok_or_else(|| config_error("audit.tau", "convex-reflection audit needs tau"))?;
            let beta = a.beta.unwrap_or(-0.9);
            let grid = a.beta_grid.clone().unwrap_or_else(audit::default_beta_grid);
            audit::audit_cor_isotropic3(&materials, &surface, beta, tau, sampling, &grid)
        }
    }
}

/// Builds the layered-sphere problem of a config's `mie` section.
pub fn mie_problem(m: &MieConfig) -> Result<LayeredSphereProblem> {
    let first = m.deltas.first().copied().unwrap_or(0.0);
    LayeredSphereProblem::new(m.omega, m.radius, m.eps_minus, m.mu_minus, first, m.source.build())
        .map_err(|e| config_error("mie", e.to_string()))
}

/// Runs the loss sweep described by `cfg`.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let m = require(&cfg.mie, "mie")?;
    let problem = mie_problem(m)?;
    let mut regions = NormRegions::default_for(&problem);
    if let Some(r) = m.outer_radius {
        regions.outer_radius = r;
    }
    if let Some(t) = m.collar_halfwidth {
        regions.collar_halfwidth = t;
    }
    mie::delta_sweep(&problem, &m.deltas, m.truncation.unwrap_or_default(), regions)
}

/// Runs the anti-curl and trace checks.
pub fn run_estimates(cfg: &RunConfig) -> Result<EstimatesReport> {
    use rand::{Rng, SeedableRng};
    let e = cfg.estimates.clone().unwrap_or_default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curl_errors = Vec::new();
    for f in estimates::polynomial_corpus(e.polynomial_fields, cfg.seed) {
        let mut sup = 0.0f64;
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let x = loop {
                let x: Vec3 = [rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95)];
                if crate::algebra::norm(x) < 0.95 {
                    break x;
                }
            };
            let c = estimates::fd_curl(|y| estimates::anti_curl(&f, y, estimates::ANTI_CURL_ORDER), x, 1e-4)?;
            let fx = f.eval(x);
            sup = sup.max(crate::algebra::norm(fx));
            worst = worst.max(crate::algebra::norm([c[0] - fx[0], c[1] - fx[1], c[2] - fx[2]]));
        }
        curl_errors.push((f.id(), if sup > 0.0 { worst / sup } else { worst }));
    }
    let ratios = estimates::concentration_sweep(&e.ks, &e.alphas, [0.0, 0.0, 1.0], BallQuadrature::default())?;
    let growth = estimates::growth_factors(&ratios);
    let traces = estimates::slab_corpus(cfg.seed)
        .iter()
        .map(|f| estimates::trace_estimate_check(f, e.grid))
        .collect::<Result<Vec<_>>>()?;
    let oscillatory = e
        .oscillatory_ks
        .iter()
        .map(|&k| estimates::trace_estimate_check(&estimates::oscillatory_field(k), e.grid))
        .collect::<Result<Vec<_>>>()?;
    let trace_constant = traces.iter().map(TraceCheck::ratio).filter(|r| r.is_finite()).fold(0.0, f64::max);
    Ok(EstimatesReport { curl_errors, ratios, growth, traces, oscillatory, trace_constant })
}

/// Writes `report.json` and `series.csv` into `dir`.
pub fn write_outputs(dir: &Path, envelope: &ReportEnvelope) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(envelope)?)?;
    fs::write(dir.join("series.csv"), payload_csv(&envelope.payload))?;
    Ok(())
}

fn configure_threads() {
    if let Ok(v) = std::env::var("METASTAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p)?)?,
        None => RunConfig::empty(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(ReportEnvelope, Option<PathBuf>, bool)> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let (name, cfg_hash, seed, payload, out, strict) = match &cli.command {
        Command::CheckComplementing(args) => {
            let canonical = serde_json::json!({ "a1": args.a1, "a2": args.a2, "e": args.e });
            let hash: String = Sha256::digest(canonical.to_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
            let payload = run_check(args)?;
            ("check-complementing", hash, args.common.seed.unwrap_or(0), payload, args.common.out.clone(), args.common.strict)
        }
        Command::Audit(args) | Command::MieSweep(args) | Command::Estimates(args) => {
            let cfg = load_config(&args.config, args.common.seed)?;
            let (name, payload) = match &cli.command {
                Command::Audit(_) => ("audit", Payload::Audit(run_audit(&cfg)?)),
                Command::MieSweep(_) => ("mie-sweep", Payload::Sweep(run_sweep(&cfg)?)),
                _ => ("estimates", Payload::Estimates(run_estimates(&cfg)?)),
            };
            let out = args.common.out.clone().or_else(|| cfg.output_dir.clone()).or_else(|| Some(PathBuf::from("metastab-out")));
            (name, cfg.hash()?, cfg.seed, payload, out, args.common.strict)
        }
    };
    let envelope = ReportEnvelope {
        tool: "metastab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: name.into(),
        config_hash: cfg_hash,
        seed,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        payload,
    };
    Ok((envelope, out, strict))
}

/// Entry point: parses `argv`, runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli) {
        Ok((envelope, out, strict)) => {
            if let Some(dir) = &out {
                if let Err(e) = write_outputs(dir, &envelope) {
                    eprintln!("error: {e}");
                    return 1;
                }
            }
            match &envelope.payload {
                Payload::Complementing(r) => match serde_json::to_string_pretty(&r.verdict) {
                    Ok(s) => println!("{s}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return 1;
                    }
                },
                other => println!("{}", summary_line(other)),
            }
            if strict && violates(&envelope.payload) {
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn summary_line(payload: &Payload) -> String {
    match payload {
        Payload::Audit(r) => format!("{}: {:?} (min margin {:.6e})", r.theorem, r.verdict, r.min_margin),
        Payload::Sweep(r) => format!(
            "sweep: {} rows, lap_convergent = {}, resonant = {}, collar growth = {:?}",
            r.rows.len(),
            r.lap_convergent,
            r.resonant,
            r.collar_growth
        ),
        Payload::Estimates(r) => format!("estimates: growth {:?}, trace constant {:.6e}", r.growth, r.trace_constant),
        Payload::Complementing(r) => format!("{:?}", r.verdict.status),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shorthand() {
        assert_eq!(parse_tensor("2I").unwrap(), SymMatrix3::scalar(2.0));
        assert_eq!(parse_tensor("-I").unwrap(), SymMatrix3::scalar(-1.0));
        assert_eq!(parse_tensor("I").unwrap(), SymMatrix3::identity());
        assert_eq!(parse_tensor("3").unwrap(), SymMatrix3::scalar(3.0));
        assert_eq!(parse_tensor("1,0,0,0,2,0,0,0,3").unwrap(), SymMatrix3::diag(1.0, 2.0, 3.0));
        assert!(parse_tensor("1,2,0,0,2,0,0,0,3").is_err());
        assert!(parse_tensor("x").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_with_key_name() {
        let err = RunConfig::from_json(r#"{"version": 1, "bogus": 3}"#).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "bogus"),
            e => panic!("{e}"),
        }
        let err = RunConfig::from_json(r#"{"mie": {"eps_minus": -2, "mu_minus": -2, "source": {"kind": "plane_wave"}, "colar": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("colar"));
    }

    #[test]
    fn version_is_checked() {
        assert!(RunConfig::from_json(r#"{"version": 7}"#).is_err());
    }

    #[test]
    fn hash_is_reproducible_and_key_order_free() {
        let a = RunConfig::from_json(r#"{"seed": 3, "surface": {"kind": "sphere", "radius": 1}}"#).unwrap();
        let b = RunConfig::from_json(r#"{"surface": {"radius": 1, "kind": "sphere"}, "seed": 3}"#).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = RunConfig::from_json(r#"{"seed": 4}"#).unwrap();
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn materials_accept_all_tensor_forms() {
        let cfg = RunConfig::from_json(
            r#"{"materials": {"eps_plus": "I", "mu_plus": 2, "eps_minus": [[-1,0,0],[0,-2,0],[0,0,-1]], "mu_minus": {"kind": "constant", "value": {"xx": -1, "xy": 0, "xz": 0, "yy": -1, "yz": 0, "zz": -1}}}}"#,
        )
        .unwrap();
        let spec = cfg.materials.unwrap().to_spec().unwrap();
        assert_eq!(spec.mu_plus.isotropic_constant(), Some(2.0));
        assert_eq!(spec.mu_minus.isotropic_constant(), Some(-1.0));
    }

    #[test]
    fn check_complementing_exit_codes() {
        assert_eq!(run(["metastab", "check-complementing", "--a1", "I", "--a2", "2I", "--e", "0,0,1"]), 0);
        assert_eq!(run(["metastab", "check-complementing", "--a1", "I", "--a2", "I", "--e", "0,0,1", "--strict"]), 2);
        assert_eq!(run(["metastab", "check-complementing", "--a1", "I", "--a2", "-I", "--e", "0,0,1"]), 1);
        assert_eq!(run(["metastab", "no-such-command"]), 1);
    }
}
