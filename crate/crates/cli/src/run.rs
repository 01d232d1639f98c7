//! Subcommand orchestration, checks and JSON reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use segsolve::freeboundary::{analyze, labels_near};
use segsolve::minimizer::MultiStartReport;
use segsolve::verifier::{refinement_table, RefinementRow};
use segsolve::{
    acf_product, check_a2, compute_barriers, energy, extremality_residuals, lipschitz_report,
    multi_start, perturbation_study, rescale_to_unit_diffusion, solve, validate_admissible, Error,
    Grid, Init, NodalReport, ReactionTerm, Problem, Solution, State,
};

use crate::config::{config_digest, emit_canonical, parse_config, RunConfig};
use crate::error::CliError;
use crate::fields::{read_fields, write_fields};
use crate::render::render_partition;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const FIELDS_FILE: &str = "fields.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Verify,
    Analyze,
    Sweep,
}

/// Command-line values that take precedence over the configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
    pub check_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub passed: bool,
    pub value: f64,
    pub tol: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(check: &str, value: f64, tol: f64, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { check: check.into(), passed, value, tol, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub command: Command,
    pub status: &'static str,
    pub checks: Vec<CheckResult>,
    pub failures: Vec<CheckResult>,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    fn new(command: Command, checks: Vec<CheckResult>, artifacts: Vec<PathBuf>) -> Self {
        let failures: Vec<CheckResult> = checks.iter().filter(|c| !c.passed).cloned().collect();
        Outcome {
            command,
            status: if failures.is_empty() { "pass" } else { "fail" },
            checks,
            failures,
            artifacts,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExtremalitySummary {
    pub max_sub: f64,
    pub max_hat: f64,
    pub max_sub_raw: f64,
    pub max_hat_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierSummary {
    pub max_upper_gap: f64,
    pub max_lower_gap: f64,
    pub violations: usize,
    pub picard_iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcfSummary {
    pub center: [f64; 2],
    pub phases: Vec<Vec<usize>>,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub max_rel_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzSummary {
    pub l_max: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplePointSummary {
    pub location: [f64; 2],
    pub multiplicity: usize,
    pub sector_angles_deg: Vec<f64>,
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalSummary {
    pub interfaces: usize,
    pub zero_regions: usize,
    pub multiple_points: Vec<MultiplePointSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessSummary {
    pub starts: usize,
    pub max_distance: f64,
    pub max_energy_spread: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifierSummary {
    pub extremality: Option<ExtremalitySummary>,
    pub barriers: Option<BarrierSummary>,
    pub acf: Option<Vec<AcfSummary>>,
    pub lipschitz: Option<LipschitzSummary>,
    pub nodal: Option<NodalSummary>,
    pub uniqueness: Option<UniquenessSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub version: String,
    pub grid: [usize; 2],
    pub final_energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    pub verifier: VerifierSummary,
    pub checks: Vec<CheckResult>,
    /// The only field that may differ between identical runs.
    pub wall_time_s: f64,
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    apply_overrides(&mut cfg, ov)?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides) -> Result<(), CliError> {
    if let Some(seed) = ov.seed {
        cfg.solve.rng_seed = seed;
        if let Init::Random { .. } = cfg.solve.init {
            cfg.solve.init = Init::Random { seed };
        }
    }
    if let Some(n) = ov.grid {
        cfg.domain = cfg.domain.with_n(n);
    }
    if let Some(out) = &ov.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()
}

/// Cap on worker threads from `SEGSOLVE_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("SEGSOLVE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n >= 1)
            .map(Some)
            .ok_or_else(|| CliError::Semantic {
                field: "SEGSOLVE_THREADS".into(),
                message: format!("expected a positive integer, got '{v}'"),
            }),
        Err(_) => Ok(None),
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, ov: &Overrides) -> Result<Outcome, CliError> {
    let problem = cfg.build_problem()?;
    if ov.check_only {
        return Ok(Outcome::new(cmd, precheck(&problem)?, Vec::new()));
    }
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    match cmd {
        Command::Solve => run_solve(cfg, &problem),
        Command::Verify => run_verify(cfg, &problem),
        Command::Analyze => run_analyze(cfg, &problem),
        Command::Sweep => run_sweep(cfg, &problem),
    }
}

fn precheck(p: &Problem) -> Result<Vec<CheckResult>, CliError> {
    let adm = validate_admissible(p.grid(), p.boundary(), p.tolerances.segregation_tol);
    let mut checks = vec![CheckResult::new(
        "admissibility",
        adm.violations.len() as f64,
        0.0,
        adm.is_admissible(),
        format!("{} boundary violations", adm.violations.len()),
    )];
    for i in 0..p.k() {
        let r = check_a2(p, i)?;
        checks.push(CheckResult::new(
            "coercivity",
            r.margin,
            0.0,
            r.holds,
            format!("density {}: smallest eigenvalue {:.6e}", i + 1, r.min_eigenvalue),
        ));
    }
    Ok(checks)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Minimizer in the original variables. Variable diffusions are handled by
/// solving the problem rescaled to unit diffusion and mapping back.
pub fn solve_any(p: &Problem, opts: &segsolve::SolveOptions) -> segsolve::Result<Solution> {
    if p.has_unit_diffusion() {
        return solve(p, opts);
    }
    let (pu, map) = rescale_to_unit_diffusion(p)?;
    let v = solve(&pu, opts)?;
    let state = map.backward(&v.state)?;
    let e = energy(&state, p)?;
    Ok(Solution { state, energy_trace: vec![e], ..v })
}

/// Solve, turning refusals of the data into failed checks.
fn solve_checked(p: &Problem, cfg: &RunConfig) -> Result<Result<Solution, CheckResult>, CliError> {
    match solve_any(p, &cfg.solve) {
        Ok(sol) => Ok(Ok(sol)),
        Err(Error::CoercivityViolated { density, min_eigenvalue }) => Ok(Err(CheckResult::new(
            "coercivity",
            min_eigenvalue,
            0.0,
            false,
            format!("density {}: smallest eigenvalue {min_eigenvalue:.6e}", density + 1),
        ))),
        Err(Error::Inadmissible(m)) => Err(CliError::Semantic { field: "problem.boundary".into(), message: m }),
        Err(e) => Err(e.into()),
    }
}

fn run_solve(cfg: &RunConfig, p: &Problem) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let dir = &cfg.output.dir;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, emit_canonical(cfg)).map_err(|e| CliError::io(&config_path, e))?;
    let sol = match solve_checked(p, cfg)? {
        Ok(sol) => sol,
        Err(fail) => return Ok(Outcome::new(Command::Solve, vec![fail], vec![config_path])),
    };
    let fields_path = dir.join(FIELDS_FILE);
    write_fields(p.grid(), &sol.state, &fields_path)?;
    let mut checks = vec![CheckResult::new(
        "convergence",
        sol.final_gradient_norm,
        f64::NAN,
        sol.converged,
        format!("{} iterations", sol.iters),
    )];
    if !p.has_unit_diffusion() && cfg.verify.rescaling {
        checks.push(rescaling_check(cfg, p, &sol)?);
    }
    let (summary, more) = verify_all(cfg, p, &sol)?;
    checks.extend(more);
    let manifest = RunManifest {
        config_digest: config_digest(cfg),
        version: VERSION.into(),
        grid: [p.grid().nx(), p.grid().ny()],
        final_energy: sol.energy(),
        iterations: sol.iters,
        converged: sol.converged,
        final_gradient_norm: sol.final_gradient_norm,
        verifier: summary,
        checks: checks.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;
    Ok(Outcome::new(Command::Solve, checks, vec![config_path, fields_path, manifest_path]))
}

/// Relative `l2` distance between the rescaled-route solution and a direct
/// minimization with the variable diffusions.
fn rescaling_check(cfg: &RunConfig, p: &Problem, sol: &Solution) -> Result<CheckResult, CliError> {
    let direct = solve(p, &cfg.solve)?;
    let g = p.grid();
    let dist = sol.state.l2_distance(&direct.state, g)?;
    let rel = dist / sol.state.l2_norm(g).max(f64::MIN_POSITIVE);
    let tol = cfg.verify.rescaling_tol;
    Ok(CheckResult::new(
        "rescaling",
        rel,
        tol,
        rel <= tol,
        format!("direct energy {:.12e}, rescaled-route energy {:.12e}", direct.energy(), sol.energy()),
    ))
}

fn stored_solution(cfg: &RunConfig, p: &Problem) -> Result<Solution, CliError> {
    let state = read_fields(p.grid(), &cfg.output.dir.join(FIELDS_FILE))?;
    if state.k() != p.k() {
        return Err(CliError::Format {
            path: cfg.output.dir.join(FIELDS_FILE),
            message: format!("stored solution has {} densities, config has {}", state.k(), p.k()),
        });
    }
    let e = energy(&state, p)?;
    Ok(Solution::from_state(state, e))
}

fn run_verify(cfg: &RunConfig, p: &Problem) -> Result<Outcome, CliError> {
    let sol = stored_solution(cfg, p)?;
    let (summary, checks) = verify_all(cfg, p, &sol)?;
    let path = cfg.output.dir.join("verify.json");
    #[derive(Serialize)]
    struct Report<'a> {
        energy: f64,
        verifier: &'a VerifierSummary,
        checks: &'a [CheckResult],
    }
    write_json(&path, &Report { energy: sol.energy(), verifier: &summary, checks: &checks })?;
    Ok(Outcome::new(Command::Verify, checks, vec![path]))
}

fn nodal_report(cfg: &RunConfig, grid: &Grid, s: &State, tol: f64) -> Result<NodalReport, CliError> {
    Ok(analyze(grid, s, tol, cfg.verify.nodal_radius_cells * grid.h())?)
}

fn run_analyze(cfg: &RunConfig, p: &Problem) -> Result<Outcome, CliError> {
    let sol = stored_solution(cfg, p)?;
    let g = p.grid();
    let report = nodal_report(cfg, g, &sol.state, p.tolerances.segregation_tol)?;
    let json = cfg.output.dir.join("nodal.json");
    write_json(&json, &report)?;
    let img = cfg.output.dir.join("partition.ppm");
    render_partition(g, &sol.state, Some(&report), &img)?;
    Ok(Outcome::new(Command::Analyze, Vec::new(), vec![json, img]))
}

/// Runs every enabled verifier. Problems with variable diffusion are checked
/// after rescaling to unit diffusion.
pub fn verify_all(cfg: &RunConfig, p: &Problem, sol: &Solution) -> Result<(VerifierSummary, Vec<CheckResult>), CliError> {
    let v = &cfg.verify;
    let g = p.grid();
    let mut summary = VerifierSummary::default();
    let mut checks = Vec::new();
    let unit;
    let (pu, su) = if p.has_unit_diffusion() {
        (p, sol)
    } else {
        let (rescaled, map) = rescale_to_unit_diffusion(p)?;
        let state = map.forward(&sol.state)?;
        let e = energy(&state, &rescaled)?;
        unit = (rescaled, Solution::from_state(state, e));
        (&unit.0, &unit.1)
    };
    if v.extremality {
        let rep = extremality_residuals(pu, su)?;
        let raw = |f: fn(&segsolve::verifier::DensityResiduals) -> f64| {
            rep.densities.iter().map(f).fold(0.0, f64::max)
        };
        let s = ExtremalitySummary {
            max_sub: rep.max_sub(),
            max_hat: rep.max_hat(),
            max_sub_raw: raw(|d| d.sub_raw),
            max_hat_raw: raw(|d| d.hat_raw),
        };
        let worst = rep
            .densities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.sub.max(a.1.hat).total_cmp(&b.1.sub.max(b.1.hat)))
            .map(|(i, _)| i + 1)
            .unwrap_or(1);
        checks.push(CheckResult::new(
            "extremality",
            rep.max(),
            v.extremality_tol,
            rep.max() <= v.extremality_tol,
            format!("worst density {worst}; raw sub {:.3e}, raw hat {:.3e}", s.max_sub_raw, s.max_hat_raw),
        ));
        summary.extremality = Some(s);
    }
    if v.barriers {
        match compute_barriers(pu, su) {
            Ok(b) => {
                let gap = b.max_upper_gap.max(b.max_lower_gap);
                let tol = pu.tolerances.residual_tol;
                checks.push(CheckResult::new(
                    "barriers",
                    gap,
                    tol,
                    b.violations.is_empty(),
                    format!("{} node violations", b.violations.len()),
                ));
                summary.barriers = Some(BarrierSummary {
                    max_upper_gap: b.max_upper_gap,
                    max_lower_gap: b.max_lower_gap,
                    violations: b.violations.len(),
                    picard_iterations: b.picard_iterations,
                });
            }
            Err(e @ (Error::CoercivityViolated { .. } | Error::NoConvergence(..))) => {
                checks.push(CheckResult::new("barriers", f64::NAN, pu.tolerances.residual_tol, false, e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let tol = p.tolerances.segregation_tol;
    let report = if v.nodal || v.acf { Some(nodal_report(cfg, g, &sol.state, tol)?) } else { None };
    if v.acf {
        let report = report.as_ref().expect("computed above");
        let traces = acf_traces(g, &sol.state, report, tol)?;
        // monotonicity is only asserted for subharmonic phases
        if nonpositive_reactions(p) {
            let worst = traces.iter().map(|t| t.max_rel_drop).fold(0.0, f64::max);
            checks.push(CheckResult::new(
                "acf",
                worst,
                v.acf_eps,
                worst <= v.acf_eps,
                format!("{} centers", traces.len()),
            ));
        }
        summary.acf = Some(traces);
    }
    if v.lipschitz {
        if let Ok(l) = lipschitz_report(g, &sol.state, v.lipschitz_delta) {
            summary.lipschitz = Some(LipschitzSummary { l_max: l.l_max, delta: l.delta });
        }
    }
    if v.nodal {
        let report = report.as_ref().expect("computed above");
        summary.nodal = Some(NodalSummary {
            interfaces: report.interfaces.len(),
            zero_regions: report.zero_regions.len(),
            multiple_points: report
                .multiple_points
                .iter()
                .map(|mp| MultiplePointSummary {
                    location: mp.location,
                    multiplicity: mp.multiplicity,
                    sector_angles_deg: mp
                        .analysis
                        .as_ref()
                        .map(|a| a.sector_angles().iter().map(|t| t.to_degrees()).collect())
                        .unwrap_or_default(),
                    exponent: mp.analysis.as_ref().map(|a| a.exponent),
                })
                .collect(),
        });
    }
    if v.uniqueness_starts > 0 {
        let rep: MultiStartReport = multi_start(p, &cfg.solve, v.uniqueness_starts)?;
        let bound = v.uniqueness_tol * rep.norm;
        checks.push(CheckResult::new(
            "uniqueness",
            rep.max_distance,
            bound,
            rep.max_distance <= bound,
            format!("energy spread {:.3e}", rep.max_energy_spread),
        ));
        summary.uniqueness = Some(UniquenessSummary {
            starts: v.uniqueness_starts,
            max_distance: rep.max_distance,
            max_energy_spread: rep.max_energy_spread,
            norm: rep.norm,
        });
    }
    Ok((summary, checks))
}

/// True when every reaction satisfies `f(s) <= 0` for `s >= 0`.
fn nonpositive_reactions(p: &Problem) -> bool {
    (0..p.k()).all(|i| {
        let r = p.reaction(i);
        r.rescaling.is_none()
            && match r.term {
                ReactionTerm::Zero => true,
                ReactionTerm::Linear { lambda } => lambda <= 0.0,
                ReactionTerm::ConcaveQuadratic { c } => c >= 0.0,
                _ => false,
            }
    })
}

/// Monotonicity products at one point per interface polyline and at each
/// multiple point, on radii `4h, 8h, 16h, 32h` that fit in the domain.
pub fn acf_traces(g: &Grid, s: &State, report: &NodalReport, tol: f64) -> Result<Vec<AcfSummary>, CliError> {
    let mut centers: Vec<([f64; 2], Vec<Vec<usize>>)> = report
        .interfaces
        .iter()
        .filter(|l| !l.points.is_empty())
        .map(|l| (l.points[l.points.len() / 2], vec![vec![l.labels.0], vec![l.labels.1]]))
        .collect();
    for mp in &report.multiple_points {
        let labels = labels_near(g, s, mp.location, 4.0 * g.h(), tol);
        centers.push((mp.location, labels.into_iter().map(|l| vec![l]).collect()));
    }
    let mut out = Vec::new();
    for (c, phases) in centers {
        let reach = g.distance_to_boundary(c) - g.h();
        let radii: Vec<f64> = [4.0, 8.0, 16.0, 32.0].iter().map(|m| m * g.h()).filter(|r| *r <= reach).collect();
        if radii.len() < 2 {
            continue;
        }
        let t = acf_product(g, s, c, &radii, &phases, 0.0)?;
        let vmax = t.max_value();
        out.push(AcfSummary {
            center: c,
            phases,
            radii,
            max_rel_drop: if vmax > 0.0 { t.max_drop.max(0.0) / vmax } else { 0.0 },
            values: t.values,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGridRow {
    pub n: usize,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub l_max: Option<f64>,
    pub extremality_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub config_digest: String,
    pub grids: Vec<SweepGridRow>,
    pub energy_refinement: Vec<RefinementRow>,
    pub lipschitz_refinement: Vec<RefinementRow>,
    pub base_norm: Option<f64>,
    pub perturbation: Vec<segsolve::minimizer::PerturbationRow>,
}

fn run_sweep(cfg: &RunConfig, p: &Problem) -> Result<Outcome, CliError> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_cap()? {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Semantic { field: "SEGSOLVE_THREADS".into(), message: e.to_string() })?
    };
    let sw = &cfg.sweep;
    let (grids, perturbation) = pool.install(|| {
        rayon::join(
            || {
                sw.grids
                    .par_iter()
                    .map(|&n| sweep_grid(cfg, n))
                    .collect::<Result<Vec<_>, CliError>>()
            },
            || {
                if sw.eps.is_empty() {
                    Ok(None)
                } else {
                    perturbation_study(p, &cfg.solve, &sw.eps).map(Some)
                }
            },
        )
    });
    let grids = grids?;
    let perturbation = perturbation.map_err(CliError::from)?;
    let mut checks = Vec::new();
    for row in &grids {
        if let Some(r) = row.extremality_max {
            let tol = cfg.verify.extremality_tol;
            checks.push(CheckResult::new("extremality", r, tol, r <= tol, format!("grid {}", row.n)));
        }
    }
    let mut report = SweepReport {
        config_digest: config_digest(cfg),
        energy_refinement: refinement_table(&grids.iter().map(|r| (r.n, r.energy)).collect::<Vec<_>>()),
        lipschitz_refinement: refinement_table(
            &grids.iter().filter_map(|r| r.l_max.map(|l| (r.n, l))).collect::<Vec<_>>(),
        ),
        grids,
        base_norm: None,
        perturbation: Vec::new(),
    };
    if let Some(study) = perturbation {
        let mut rows: Vec<_> = study.rows.iter().filter(|r| r.eps != 0.0).copied().collect();
        rows.sort_by(|a, b| b.eps.abs().total_cmp(&a.eps.abs()));
        let decreasing = rows.windows(2).all(|w| w[1].distance < w[0].distance);
        let last = rows.last().map_or(0.0, |r| r.distance);
        let bound = sw.perturbation_tol * study.base_norm;
        checks.push(CheckResult::new(
            "continuous_dependence",
            last,
            bound,
            decreasing && last <= bound,
            if decreasing { "distances decrease with eps".to_string() } else { "distances not strictly decreasing".to_string() },
        ));
        report.base_norm = Some(study.base_norm);
        report.perturbation = study.rows;
    }
    let path = cfg.output.dir.join("sweep.json");
    write_json(&path, &report)?;
    Ok(Outcome::new(Command::Sweep, checks, vec![path]))
}

fn sweep_grid(cfg: &RunConfig, n: usize) -> Result<SweepGridRow, CliError> {
    let mut c = cfg.clone();
    c.domain = c.domain.with_n(n);
    let p = c.build_problem()?;
    let sol = solve_any(&p, &c.solve)?;
    let l_max = if c.verify.lipschitz {
        lipschitz_report(p.grid(), &sol.state, c.verify.lipschitz_delta).ok().map(|l| l.l_max)
    } else {
        None
    };
    let extremality_max = if c.verify.extremality && p.has_unit_diffusion() {
        Some(extremality_residuals(&p, &sol)?.max())
    } else {
        None
    };
    Ok(SweepGridRow { n, energy: sol.energy(), iterations: sol.iters, converged: sol.converged, l_max, extremality_max })
}
