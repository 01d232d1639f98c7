//! Run configuration: TOML in, validated [`Problem`] and [`SolveOptions`] out.

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segsolve::presets::boundary_preset;
use segsolve::{
    build_grid, validate_admissible, BoundaryData, DiffusionCoeff, Field, Grid, GridSpec, Problem, Reaction,
    ReactionTerm, SolveOptions, Tolerances,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// The unit square.
    Square,
    /// A disk; the lattice spans its bounding box.
    Disk,
}

/// `n x n` lattice nodes over the domain. `center` and `radius` are given
/// for disks only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: ShapeKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl DomainConfig {
    pub fn square(n: usize) -> Self {
        DomainConfig { shape: ShapeKind::Square, n, center: None, radius: None }
    }

    pub fn disk(n: usize, center: [f64; 2], radius: f64) -> Self {
        DomainConfig { shape: ShapeKind::Disk, n, center: Some(center), radius: Some(radius) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn with_n(self, n: usize) -> Self {
        DomainConfig { n, ..self }
    }

    /// Call after [`RunConfig::validate`].
    pub fn grid_spec(&self) -> GridSpec {
        match self.shape {
            ShapeKind::Square => GridSpec::unit_square(self.n),
            ShapeKind::Disk => GridSpec::disk(self.n, self.center.unwrap_or([0.0, 0.0]), self.radius.unwrap_or(1.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub k: usize,
    /// One entry per density.
    pub reactions: Vec<ReactionTerm>,
    /// One entry per density; all ones when omitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diffusion: Vec<DiffusionConfig>,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionConfig {
    Constant { value: f64 },
    /// `1 + amplitude * sin(pi s) sin(pi t)` in bounding-box coordinates `s, t in [0, 1]`.
    SineBump { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Named trace recipe: two_phase, triple_junction, concave_uniqueness,
    /// logistic, zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arcs: Vec<ArcConfig>,
}

/// Constant trace `value` for `density` (1-based) on boundary nodes whose
/// polar angle about the domain center lies in `[from_deg, to_deg)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcConfig {
    pub density: usize,
    pub from_deg: f64,
    pub to_deg: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub extremality: bool,
    /// Bound on the rounding-discounted extremality residuals.
    pub extremality_tol: f64,
    pub barriers: bool,
    pub acf: bool,
    /// Allowed drop of the monotonicity product, relative to its maximum.
    pub acf_eps: f64,
    pub lipschitz: bool,
    pub lipschitz_delta: f64,
    pub nodal: bool,
    /// Multiplicity-detection radius in units of `h`.
    pub nodal_radius_cells: f64,
    /// Compare with a direct solve when diffusions are not all one.
    pub rescaling: bool,
    /// Allowed relative `l2` distance between the two routes.
    pub rescaling_tol: f64,
    /// Extra random starts for the uniqueness check (0 disables it).
    pub uniqueness_starts: usize,
    /// Allowed pairwise distance relative to the solution norm.
    pub uniqueness_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            extremality: true,
            extremality_tol: 1e-6,
            barriers: true,
            acf: true,
            acf_eps: 1e-6,
            lipschitz: true,
            lipschitz_delta: 0.1,
            nodal: true,
            nodal_radius_cells: 4.0,
            rescaling: true,
            rescaling_tol: 1e-2,
            uniqueness_starts: 0,
            uniqueness_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Grid sizes for the refinement table.
    pub grids: Vec<usize>,
    /// Boundary scalings `1 + eps` for the perturbation table.
    pub eps: Vec<f64>,
    /// Required bound on the smallest-eps distance, relative to the norm.
    pub perturbation_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grids: Vec::new(),
            eps: vec![1e-1, 1e-2, 1e-3],
            perturbation_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn semantic(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Semantic { field: field.into(), message: msg.into() }
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        CliError::Syntax { line, column, message: e.message().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical text of a configuration; parsing it gives back an equal value.
pub fn emit_canonical(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("configuration is always serializable")
}

/// SHA-256 of the canonical text with the output directory left out, so
/// runs that differ only in where they write share a digest. Lowercase hex.
pub fn config_digest(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output = OutputConfig::default();
    format!("{:x}", Sha256::digest(emit_canonical(&c).as_bytes()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.domain.n();
        if n < 5 {
            return Err(semantic("domain.n", format!("need at least 5 nodes per side, got {n}")));
        }
        match (self.domain.shape, self.domain.center, self.domain.radius) {
            (ShapeKind::Square, None, None) => {}
            (ShapeKind::Square, _, _) => {
                return Err(semantic("domain", "center and radius apply to disks only"))
            }
            (ShapeKind::Disk, Some(c), Some(r)) => {
                if !(r > 0.0 && r.is_finite() && c.iter().all(|v| v.is_finite())) {
                    return Err(semantic("domain.radius", "radius must be positive"));
                }
            }
            (ShapeKind::Disk, _, _) => return Err(semantic("domain", "a disk needs center and radius")),
        }
        let p = &self.problem;
        if p.k < 2 {
            return Err(semantic("problem.k", format!("k ≥ 2 required, got {}", p.k)));
        }
        if p.reactions.len() != p.k {
            return Err(semantic(
                "problem.reactions",
                format!("expected {} entries, got {}", p.k, p.reactions.len()),
            ));
        }
        for (i, r) in p.reactions.iter().enumerate() {
            r.validate().map_err(|e| semantic(&format!("problem.reactions[{i}]"), e.to_string()))?;
        }
        if !p.diffusion.is_empty() && p.diffusion.len() != p.k {
            return Err(semantic(
                "problem.diffusion",
                format!("expected {} entries, got {}", p.k, p.diffusion.len()),
            ));
        }
        for (i, d) in p.diffusion.iter().enumerate() {
            let ok = match *d {
                DiffusionConfig::Constant { value } => value > 0.0 && value.is_finite(),
                DiffusionConfig::SineBump { amplitude } => amplitude > -1.0 && amplitude.is_finite(),
            };
            if !ok {
                return Err(semantic(&format!("problem.diffusion[{i}]"), "diffusion must stay positive"));
            }
        }
        match (&p.boundary.preset, p.boundary.arcs.is_empty()) {
            (Some(_), false) => {
                return Err(semantic("problem.boundary", "give either preset or arcs, not both"))
            }
            (None, true) => return Err(semantic("problem.boundary", "give a preset or at least one arc")),
            _ => {}
        }
        for (i, a) in p.boundary.arcs.iter().enumerate() {
            let field = format!("problem.boundary.arcs[{i}]");
            if a.density == 0 || a.density > p.k {
                return Err(semantic(&field, format!("density must be in 1..={}", p.k)));
            }
            if !(a.value >= 0.0 && a.value.is_finite()) {
                return Err(semantic(&field, "value must be nonnegative"));
            }
            if !(a.from_deg.is_finite() && a.to_deg.is_finite() && a.from_deg < a.to_deg) {
                return Err(semantic(&field, "need from_deg < to_deg"));
            }
        }
        self.solve.validate().map_err(|e| semantic("solve", e.to_string()))?;
        let v = &self.verify;
        if !(v.extremality_tol >= 0.0 && v.acf_eps >= 0.0 && v.uniqueness_tol >= 0.0 && v.rescaling_tol >= 0.0) {
            return Err(semantic("verify", "tolerances must be nonnegative"));
        }
        if !(v.lipschitz_delta > 0.0 && v.nodal_radius_cells >= 2.0) {
            return Err(semantic("verify", "lipschitz_delta must be positive and nodal_radius_cells at least 2"));
        }
        if self.sweep.grids.iter().any(|&g| g < 5) {
            return Err(semantic("sweep.grids", "grid sizes must be at least 5"));
        }
        if self.sweep.eps.iter().any(|e| !(*e > -1.0 && e.is_finite())) {
            return Err(semantic("sweep.eps", "scalings 1 + eps must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        build_grid(&self.domain.grid_spec()).map_err(|e| semantic("domain", e.to_string()))
    }

    /// Builds the problem on this configuration's grid.
    pub fn build_problem(&self) -> Result<Problem, CliError> {
        let g = self.grid()?;
        let p = &self.problem;
        let boundary = self.checked_boundary(&g)?;
        let diffusions = if p.diffusion.is_empty() {
            vec![DiffusionCoeff::Constant(1.0); p.k]
        } else {
            p.diffusion.iter().map(|d| diffusion(&g, *d)).collect()
        };
        let reactions = p.reactions.iter().map(|r| Reaction::from(*r)).collect();
        Problem::new(g, reactions, diffusions, boundary, p.tolerances)
            .map_err(|e| semantic("problem", e.to_string()))
    }

    fn boundary(&self, g: &Grid) -> Result<BoundaryData, CliError> {
        let p = &self.problem;
        if let Some(name) = &p.boundary.preset {
            let bd = boundary_preset(name, g, p.k)
                .ok_or_else(|| semantic("problem.boundary.preset", format!("unknown preset '{name}'")))?
                .map_err(|e| semantic("problem.boundary.preset", e.to_string()))?;
            if bd.k() != p.k {
                return Err(semantic(
                    "problem.boundary.preset",
                    format!("preset '{name}' describes {} densities but k = {}", bd.k(), p.k),
                ));
            }
            return Ok(bd);
        }
        let c = g.center();
        let mut traces = vec![vec![0.0; g.len()]; p.k];
        for q in g.boundary_nodes() {
            let [x, y] = g.coords(q);
            let deg = (y - c[1]).atan2(x - c[0]).to_degrees().rem_euclid(360.0);
            for a in &p.boundary.arcs {
                let from = a.from_deg.rem_euclid(360.0);
                let t = (deg - from).rem_euclid(360.0);
                if t < a.to_deg - a.from_deg {
                    traces[a.density - 1][q] = a.value;
                }
            }
        }
        BoundaryData::new(g, traces).map_err(|e| semantic("problem.boundary.arcs", e.to_string()))
    }

    fn checked_boundary(&self, g: &Grid) -> Result<BoundaryData, CliError> {
        let bd = self.boundary(g)?;
        let report = validate_admissible(g, &bd, self.problem.tolerances.segregation_tol);
        if let Some(v) = report.violations.first() {
            let field = if self.problem.boundary.preset.is_some() {
                "problem.boundary.preset"
            } else {
                "problem.boundary.arcs"
            };
            let [x, y] = g.coords(v.node);
            return Err(semantic(
                field,
                format!("{} inadmissible boundary nodes, first at ({x}, {y}): {:?}", report.violations.len(), v.kind),
            ));
        }
        Ok(bd)
    }
}

fn diffusion(g: &Grid, d: DiffusionConfig) -> DiffusionCoeff {
    match d {
        DiffusionConfig::Constant { value } => DiffusionCoeff::Constant(value),
        DiffusionConfig::SineBump { amplitude } => {
            let o = g.origin();
            let (lx, ly) = ((g.nx() - 1) as f64 * g.h(), (g.ny() - 1) as f64 * g.h());
            DiffusionCoeff::Nodal(Field::from_fn(g, |x, y| {
                1.0 + amplitude * (PI * (x - o[0]) / lx).sin() * (PI * (y - o[1]) / ly).sin()
            }))
        }
    }
}
