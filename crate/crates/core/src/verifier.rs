//! Checks on computed solutions: extremality inequalities, monotonicity
//! products, Lipschitz bounds and upper/lower barriers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ball_dirichlet_integral, Field, Grid};
use crate::linalg::cg_dirichlet;
use crate::minimizer::Solution;
use crate::problem::{check_a2, Problem};
use crate::segregation::{hat, State};

fn require_unit_diffusion(p: &Problem) -> Result<()> {
    if p.has_unit_diffusion() {
        Ok(())
    } else {
        Err(Error::Invalid(
            "diffusions must be 1; rescale the problem first".into(),
        ))
    }
}

fn check_solution(p: &Problem, s: &State) -> Result<()> {
    if s.grid_id() != p.grid().id() {
        return Err(Error::GridMismatch);
    }
    if s.k() != p.k() {
        return Err(Error::Invalid("density count mismatch".into()));
    }
    Ok(())
}

/// `f^(x, u^_i)`: `f_i` where `u_i > 0`, `-f_j(u_j)` where `u_j > 0`, zero on
/// nodes where every density vanishes.
pub fn f_hat(p: &Problem, s: &State, i: usize, node: usize) -> f64 {
    if s.value(i, node) > 0.0 {
        return p.reaction(i).f(node, s.value(i, node));
    }
    for j in 0..s.k() {
        if j != i && s.value(j, node) > 0.0 {
            return -p.reaction(j).f(node, s.value(j, node));
        }
    }
    0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityResiduals {
    /// `sup (-Δ_h u_i - f_i(u_i))^+` over interior nodes.
    pub sub: f64,
    pub sub_node: Option<usize>,
    /// `sup (f^(u^_i) + Δ_h u^_i)^+` over interior nodes.
    pub hat: f64,
    pub hat_node: Option<usize>,
    /// The same suprema without discounting floating-point evaluation error.
    pub sub_raw: f64,
    pub hat_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalityReport {
    pub densities: Vec<DensityResiduals>,
}

impl ExtremalityReport {
    pub fn max_sub(&self) -> f64 {
        self.densities.iter().map(|d| d.sub).fold(0.0, f64::max)
    }
    pub fn max_hat(&self) -> f64 {
        self.densities.iter().map(|d| d.hat).fold(0.0, f64::max)
    }
    pub fn max(&self) -> f64 {
        self.max_sub().max(self.max_hat())
    }
}

/// Per node: `(Δ_h v, bound on its rounding error)`.
fn lap_with_bound(grid: &Grid, v: &[f64], q: usize) -> (f64, f64) {
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let [e, w, n, s] = grid.neighbors4(q);
    let lap = (v[e] + v[w] + v[n] + v[s] - 4.0 * v[q]) * inv_h2;
    let mag = (v[e].abs() + v[w].abs() + v[n].abs() + v[s].abs() + 4.0 * v[q].abs()) * inv_h2;
    (lap, 8.0 * f64::EPSILON * mag)
}

/// Evaluates both extremality inequalities node-wise at interior nodes.
///
/// Each residual is reported raw and with the worst-case rounding error of
/// its own floating-point evaluation subtracted, so an exact solution of the
/// discrete inequalities reports zero.
pub fn extremality_residuals(p: &Problem, sol: &Solution) -> Result<ExtremalityReport> {
    require_unit_diffusion(p)?;
    let s = &sol.state;
    check_solution(p, s)?;
    let g = p.grid();
    let mut densities = Vec::with_capacity(p.k());
    for i in 0..p.k() {
        let u = s.field(i).values();
        let uh = hat(s, i)?;
        let uh = uh.values();
        let mut r = DensityResiduals {
            sub: 0.0,
            sub_node: None,
            hat: 0.0,
            hat_node: None,
            sub_raw: 0.0,
            hat_raw: 0.0,
        };
        for q in g.interior_nodes() {
            let f = p.reaction(i).f(q, u[q]);
            let (lap, err) = lap_with_bound(g, u, q);
            let raw = (-lap - f).max(0.0);
            let net = (raw - err - 4.0 * f64::EPSILON * f.abs()).max(0.0);
            if raw > r.sub_raw {
                r.sub_raw = raw;
            }
            if net > r.sub {
                r.sub = net;
                r.sub_node = Some(q);
            }
            let fh = f_hat(p, s, i, q);
            let (lap, err) = lap_with_bound(g, uh, q);
            let raw = (fh + lap).max(0.0);
            let sum_err = (p.k() as f64) * f64::EPSILON * uh[q].abs() / (g.h() * g.h());
            let net = (raw - err - sum_err - 4.0 * f64::EPSILON * fh.abs()).max(0.0);
            if raw > r.hat_raw {
                r.hat_raw = raw;
            }
            if net > r.hat {
                r.hat = net;
                r.hat_node = Some(q);
            }
        }
        densities.push(r);
    }
    Ok(ExtremalityReport { densities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityTrace {
    pub center: [f64; 2],
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// Densities summed into each phase `w`.
    pub phases: Vec<Vec<usize>>,
    /// `max(1, M)` with `M` the sup of `(-Δ_h w)^+` over the largest ball.
    pub normalization: f64,
    /// Largest drop `Φ(r_j) - Φ(r_{j+1})` (zero if nondecreasing).
    pub max_drop: f64,
    /// Indices `j` with `Φ(r_{j+1}) < Φ(r_j) - eps`.
    pub violations: Vec<usize>,
}

impl MonotonicityTrace {
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Product over phases of `r^{-m} int_{B(x0, r)} |grad w|^2`, `m` the number
/// of phases, after scaling every `w` by `1 / max(1, M)`.
/// Drops larger than `eps_rel * max Φ` are flagged.
pub fn acf_product(
    grid: &Grid,
    s: &State,
    x0: [f64; 2],
    radii: &[f64],
    phases: &[Vec<usize>],
    eps_rel: f64,
) -> Result<MonotonicityTrace> {
    if s.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    if phases.is_empty() || phases.iter().any(|ph| ph.is_empty() || ph.iter().any(|&i| i >= s.k())) {
        return Err(Error::Invalid("phases must be nonempty subsets of the densities".into()));
    }
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Invalid("radii must be positive".into()));
    }
    let m = phases.len() as f64;
    let rmax = radii.iter().copied().fold(0.0, f64::max);
    let ws: Vec<Field> = phases
        .iter()
        .map(|ph| {
            let mut w = s.field(ph[0]).clone();
            for &i in &ph[1..] {
                w = w.combine(1.0, s.field(i), 1.0)?;
            }
            Ok(w)
        })
        .collect::<Result<_>>()?;
    let mut big_m: f64 = 0.0;
    for w in &ws {
        for q in grid.interior_nodes() {
            let [x, y] = grid.coords(q);
            if (x - x0[0]).hypot(y - x0[1]) <= rmax {
                let (lap, err) = lap_with_bound(grid, w.values(), q);
                big_m = big_m.max((-lap - err).max(0.0));
            }
        }
    }
    let normalization = big_m.max(1.0);
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut prod = 1.0;
        for w in &ws {
            let e = ball_dirichlet_integral(grid, w, x0, r)?;
            prod *= e / (normalization * normalization) / r.powf(m);
        }
        values.push(prod);
    }
    let vmax = values.iter().copied().fold(0.0, f64::max);
    let mut max_drop: f64 = 0.0;
    let mut violations = Vec::new();
    for j in 0..values.len().saturating_sub(1) {
        let drop = values[j] - values[j + 1];
        max_drop = max_drop.max(drop);
        if drop > eps_rel * vmax {
            violations.push(j);
        }
    }
    Ok(MonotonicityTrace {
        center: x0,
        radii: radii.to_vec(),
        values,
        phases: phases.to_vec(),
        normalization,
        max_drop,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Max of `|U(p) - U(q)| / h` over neighbor pairs at distance `>= delta`
    /// from the boundary, `U` the sum of the densities.
    pub l_max: f64,
    pub per_density: Vec<f64>,
    pub delta: f64,
}

pub fn lipschitz_report(grid: &Grid, s: &State, delta: f64) -> Result<LipschitzReport> {
    if s.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    if !(delta >= 2.0 * grid.h() * (1.0 - 1e-12)) {
        return Err(Error::RadiusTooSmall {
            radius: delta,
            min: 2.0 * grid.h(),
        });
    }
    let keep: Vec<bool> = (0..grid.len())
        .map(|q| grid.is_inside(q) && grid.distance_to_boundary(grid.coords(q)) >= delta)
        .collect();
    if !keep.iter().any(|b| *b) {
        return Err(Error::Invalid(format!("no nodes at distance {delta} from the boundary")));
    }
    let total = s.total();
    let slope = |v: &[f64]| -> f64 {
        let mut m: f64 = 0.0;
        for q in 0..grid.len() {
            if !keep[q] {
                continue;
            }
            let [e, _, n, _] = grid.neighbors4(q);
            for r in [e, n] {
                if r != q && keep[r] {
                    m = m.max((v[q] - v[r]).abs());
                }
            }
        }
        m / grid.h()
    };
    Ok(LipschitzReport {
        l_max: slope(total.values()),
        per_density: s.fields().iter().map(|f| slope(f.values())).collect(),
        delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub n: usize,
    pub value: f64,
    /// `|value / previous - 1|`; `NaN` on the first row.
    pub rel_change: f64,
}

/// Relative changes of a quantity measured on successively finer grids.
pub fn refinement_table(entries: &[(usize, f64)]) -> Vec<RefinementRow> {
    entries
        .iter()
        .enumerate()
        .map(|(j, &(n, value))| RefinementRow {
            n,
            value,
            rel_change: if j == 0 {
                f64::NAN
            } else {
                (value / entries[j - 1].1 - 1.0).abs()
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierSide {
    /// `u_i > Φ_i`
    Upper,
    /// `Ψ_i^+ > u_i`
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierViolation {
    pub density: usize,
    pub node: usize,
    pub side: BarrierSide,
    pub amount: f64,
}

#[derive(Debug, Clone)]
pub struct BarrierPair {
    pub upper: Vec<Field>,
    pub lower: Vec<Field>,
    pub picard_iterations: Vec<usize>,
    pub violations: Vec<BarrierViolation>,
    /// `sup (u_i - Φ_i)^+` and `sup (Ψ_i^+ - u_i)^+` over all densities.
    pub max_upper_gap: f64,
    pub max_lower_gap: f64,
}

/// Upper barriers `-Δ_h Φ_i = f_i(Φ_i)` (trace `φ_i`) by damped Picard
/// iteration, lower barriers `-Δ_h Ψ_i = f^(u^_i)` (trace `u^_i`) by one
/// linear solve, and the node-wise sandwich `Ψ_i^+ <= u_i <= Φ_i`.
pub fn compute_barriers(p: &Problem, sol: &Solution) -> Result<BarrierPair> {
    require_unit_diffusion(p)?;
    let s = &sol.state;
    check_solution(p, s)?;
    for i in 0..p.k() {
        let a2 = check_a2(p, i)?;
        if !a2.holds {
            return Err(Error::CoercivityViolated {
                density: i,
                min_eigenvalue: a2.min_eigenvalue,
            });
        }
    }
    let g = p.grid();
    let tol = p.tolerances.residual_tol;
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    let mut picard_iterations = Vec::new();
    let mut violations = Vec::new();
    let (mut max_upper_gap, mut max_lower_gap) = (0.0f64, 0.0f64);
    let max_iter = 500;
    for i in 0..p.k() {
        let k = p.stiffness(i);
        let trace = p.boundary().trace(i);
        let react = p.reaction(i);
        let rhs_of = |v: &[f64]| -> Vec<f64> {
            (0..g.len())
                .map(|q| if g.is_interior(q) { g.node_weight(q) * react.f(q, v[q]) } else { 0.0 })
                .collect()
        };
        let zero = vec![0.0; g.len()];
        let mut phi = cg_dirichlet(g, &k, &zero, trace, 0.0, 1e-13)?;
        let scale = phi.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut iters = 0;
        let mut done = react.term == crate::problem::ReactionTerm::Zero && react.rescaling.is_none();
        while !done {
            iters += 1;
            let next = cg_dirichlet(g, &k, &rhs_of(&phi), trace, 0.0, 1e-14)?;
            let mut change: f64 = 0.0;
            for q in g.interior_nodes() {
                let v = 0.5 * phi[q] + 0.5 * next[q];
                change = change.max((v - phi[q]).abs());
                phi[q] = v;
            }
            if !change.is_finite() || change > 1e12 * scale {
                return Err(Error::NoConvergence(format!("upper barrier of density {i} diverged"), iters));
            }
            if change <= 1e-13 * scale {
                done = true;
            } else if iters >= max_iter {
                return Err(Error::NoConvergence(format!("upper barrier of density {i}"), max_iter));
            }
        }
        let uh = hat(s, i)?;
        let rhs: Vec<f64> = (0..g.len())
            .map(|q| if g.is_interior(q) { g.node_weight(q) * f_hat(p, s, i, q) } else { 0.0 })
            .collect();
        let psi = cg_dirichlet(g, &k, &rhs, uh.values(), 0.0, 1e-14)?;
        let u = s.field(i).values();
        for q in g.inside_nodes() {
            let up = u[q] - phi[q];
            let lo = psi[q].max(0.0) - u[q];
            max_upper_gap = max_upper_gap.max(up);
            max_lower_gap = max_lower_gap.max(lo);
            if up > tol {
                violations.push(BarrierViolation { density: i, node: q, side: BarrierSide::Upper, amount: up });
            }
            if lo > tol {
                violations.push(BarrierViolation { density: i, node: q, side: BarrierSide::Lower, amount: lo });
            }
        }
        upper.push(Field::from_values(g, phi)?);
        lower.push(Field::from_values(g, psi)?);
        picard_iterations.push(iters);
    }
    Ok(BarrierPair {
        upper,
        lower,
        picard_iterations,
        violations,
        max_upper_gap: max_upper_gap.max(0.0),
        max_lower_gap: max_lower_gap.max(0.0),
    })
}
