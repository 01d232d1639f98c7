//! Discrete energy, its gradient, and projected descent over segregated states.
//!
//! The discrete energy is
//!
//! ```text
//! J(U) = sum_e [ sum_i 1/2 w_e^ii (u_i(a) - u_i(b))^2 + sum_{i != j} w_e^ij u_i(a) u_j(b) ]
//!        - sum_p omega_p sum_i F_i(p, u_i(p))
//! ```
//!
//! over lattice edges `e = (a, b)`, with `w_e^ij` the edge-averaged `d_i d_j`
//! and `omega_p` the nodal quadrature weight. The cross term makes an edge
//! joining two different densities cost `1/2 w (u_i(a) + u_j(b))^2`, the
//! Dirichlet energy of the signed field across the interface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{cg_dirichlet, pcg};
use crate::problem::{check_a2, validate_admissible, Problem};
use crate::segregation::{project_values, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    ZeroInterior,
    /// Per-density discrete Laplace solve with its own trace, then projection.
    HarmonicBlend,
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Gradient step, capped by the Gershgorin bound of the stiffness.
    pub step: f64,
    pub max_iters: usize,
    /// Stop when the energy drops by less than this fraction over 10 iterations.
    pub energy_tol: f64,
    /// Base seed for `multi_start`.
    pub rng_seed: u64,
    pub init: Init,
    /// Nesterov momentum with restart on non-decrease.
    pub accelerate: bool,
    /// Active-set Newton refinement after the descent phase.
    pub polish: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            step: 0.125,
            max_iters: 50_000,
            energy_tol: 1e-10,
            rng_seed: 0,
            init: Init::HarmonicBlend,
            accelerate: true,
            polish: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.energy_tol >= 0.0) {
            return Err(Error::Config("energy_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: State,
    /// Energy after every accepted update, nonincreasing.
    pub energy_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    /// Sup over interior nodes of the projected gradient, divided by `h^2`.
    pub final_gradient_norm: f64,
}

impl Solution {
    pub fn energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace is never empty")
    }

    /// Wrap a state that did not come from a solve (stored or analytic).
    pub fn from_state(state: State, energy: f64) -> Self {
        Solution {
            state,
            energy_trace: vec![energy],
            iters: 0,
            converged: true,
            final_gradient_norm: f64::NAN,
        }
    }
}

/// Precomputed edge weights and adjacency for one problem.
pub(crate) struct Functional<'a> {
    p: &'a Problem,
    k: usize,
    edges: Vec<(usize, usize)>,
    /// `w[i * k + j][e]`
    w: Vec<Vec<f64>>,
    adj: Vec<[(u32, u32); 4]>,
    deg: Vec<u8>,
    omega: Vec<f64>,
    interior: Vec<usize>,
    inside: Vec<usize>,
}

type Values = Vec<Vec<f64>>;

impl<'a> Functional<'a> {
    pub(crate) fn new(p: &'a Problem) -> Self {
        let g = p.grid();
        let k = p.k();
        let base = g.edges();
        let edges: Vec<(usize, usize)> = base.iter().map(|e| (e.a, e.b)).collect();
        let uniform = p.diffusions().windows(2).all(|w| w[0] == w[1]);
        let mut w = vec![Vec::new(); k * k];
        for i in 0..k {
            for j in i..k {
                let ws: Vec<f64> = if uniform && (i, j) != (0, 0) {
                    w[0].clone()
                } else {
                    p.edges_for(|q| p.diffusion(i).at(q) * p.diffusion(j).at(q))
                        .iter()
                        .map(|e| e.weight)
                        .collect()
                };
                w[j * k + i] = ws.clone();
                w[i * k + j] = ws;
            }
        }
        let mut adj = vec![[(0u32, 0u32); 4]; g.len()];
        let mut deg = vec![0u8; g.len()];
        for (e, &(a, b)) in edges.iter().enumerate() {
            for (x, y) in [(a, b), (b, a)] {
                adj[x][deg[x] as usize] = (y as u32, e as u32);
                deg[x] += 1;
            }
        }
        Functional {
            p,
            k,
            edges,
            w,
            adj,
            deg,
            omega: (0..g.len()).map(|q| g.node_weight(q)).collect(),
            interior: g.interior_nodes().collect(),
            inside: g.inside_nodes().collect(),
        }
    }

    #[inline]
    fn wt(&self, i: usize, j: usize, e: usize) -> f64 {
        self.w[i * self.k + j][e]
    }

    pub(crate) fn energy(&self, u: &Values) -> f64 {
        let k = self.k;
        let mut dirichlet = 0.0;
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            for i in 0..k {
                let d = u[i][a] - u[i][b];
                dirichlet += 0.5 * self.wt(i, i, e) * d * d;
                for j in 0..k {
                    if j != i {
                        dirichlet += self.wt(i, j, e) * u[i][a] * u[j][b];
                    }
                }
            }
        }
        let mut potential = 0.0;
        for &q in &self.inside {
            for i in 0..k {
                potential += self.omega[q] * self.p.reaction(i).potential(q, u[i][q]);
            }
        }
        dirichlet - potential
    }

    #[inline]
    pub(crate) fn grad_at(&self, u: &Values, i: usize, q: usize) -> f64 {
        let ui = u[i][q];
        let mut g = -self.omega[q] * self.p.reaction(i).f(q, ui);
        for &(r, e) in &self.adj[q][..self.deg[q] as usize] {
            let (r, e) = (r as usize, e as usize);
            g += self.wt(i, i, e) * (ui - u[i][r]);
            for j in 0..self.k {
                if j != i {
                    g += self.wt(i, j, e) * u[j][r];
                }
            }
        }
        g
    }

    /// Diagonal of the Hessian block of density `i` at `q`.
    #[inline]
    fn hess_diag(&self, u: &Values, i: usize, q: usize) -> f64 {
        let mut d = -self.omega[q] * self.p.reaction(i).df(q, u[i][q]);
        for &(_, e) in &self.adj[q][..self.deg[q] as usize] {
            d += self.wt(i, i, e as usize);
        }
        d
    }

    fn gradient(&self, u: &Values, out: &mut Values) {
        for i in 0..self.k {
            for &q in &self.interior {
                out[i][q] = self.grad_at(u, i, q);
            }
        }
    }

    fn max_diag(&self) -> f64 {
        let mut m: f64 = 0.0;
        for &q in &self.interior {
            for i in 0..self.k {
                let s: f64 = self.adj[q][..self.deg[q] as usize]
                    .iter()
                    .map(|&(_, e)| self.wt(i, i, e as usize))
                    .sum();
                m = m.max(s);
            }
        }
        m
    }

    /// `w_i = max(0, u_i - tau g_i)` then projection, interior nodes only.
    fn step_into(&self, u: &Values, g: &Values, tau: f64, out: &mut Values) {
        let mut buf = vec![0.0; self.k];
        for &q in &self.interior {
            for i in 0..self.k {
                buf[i] = u[i][q] - tau * g[i][q];
            }
            project_values(&mut buf);
            for i in 0..self.k {
                out[i][q] = buf[i];
            }
        }
    }

    /// Sup of the projected gradient: `|g|` where `u > 0`, `(g)^-` where `u = 0`.
    fn stationarity(&self, u: &Values) -> f64 {
        let mut m: f64 = 0.0;
        for &q in &self.interior {
            for i in 0..self.k {
                let g = self.grad_at(u, i, q);
                let v = if u[i][q] > 0.0 { g.abs() } else { (-g).max(0.0) };
                m = m.max(v);
            }
        }
        m
    }

    fn value_scale(&self, u: &Values) -> f64 {
        let umax = u
            .iter()
            .flat_map(|v| self.inside.iter().map(move |&q| v[q].abs()))
            .fold(0.0, f64::max);
        let fmax = (0..self.k)
            .flat_map(|i| {
                self.inside
                    .iter()
                    .map(move |&q| (self.omega[q] * self.p.reaction(i).f(q, u[i][q])).abs())
            })
            .fold(0.0, f64::max);
        umax * self.max_diag() + fmax
    }

    /// Active-set Newton: fix which density (if any) owns each interior node,
    /// solve the stationarity equations for the owned values, then release
    /// nodes whose value turned nonpositive and claim zero nodes whose
    /// gradient is negative. Returns whether the KKT conditions hold.
    fn polish(&self, u: &mut Values, max_rounds: usize) -> bool {
        let n = u[0].len();
        let k = self.k;
        let mut owner: Vec<Option<usize>> = vec![None; n];
        for &q in &self.inside {
            owner[q] = (0..k).find(|&i| u[i][q] > 0.0);
        }
        for _ in 0..max_rounds {
            self.newton(u, &owner);
            let mut changed = false;
            for &q in &self.interior {
                if let Some(i) = owner[q] {
                    if !(u[i][q] > 0.0) {
                        u[i][q] = 0.0;
                        owner[q] = None;
                        changed = true;
                    }
                }
            }
            if changed {
                continue;
            }
            let mut claims = Vec::new();
            for &q in &self.interior {
                if owner[q].is_none() {
                    let (best, g) = (0..k)
                        .map(|i| (i, self.grad_at(u, i, q)))
                        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                    // below the rounding error of evaluating the gradient
                    if g < -4.0 * f64::EPSILON * self.neighbor_mass(u, best, q) {
                        claims.push((q, best, -g / self.hess_diag(u, best, q).max(f64::MIN_POSITIVE)));
                    }
                }
            }
            if claims.is_empty() {
                self.local_sweeps(u, &owner, 4);
                return true;
            }
            for (q, i, v) in claims {
                owner[q] = Some(i);
                u[i][q] = v;
            }
        }
        false
    }

    /// Node-by-node Newton updates on owned nodes. The global solve leaves
    /// residuals at rounding level of the largest values; these sweeps bring
    /// each node to rounding level of its own neighbourhood.
    fn local_sweeps(&self, u: &mut Values, owner: &[Option<usize>], sweeps: usize) {
        for _ in 0..sweeps {
            for &q in &self.interior {
                if let Some(i) = owner[q] {
                    let d = self.hess_diag(u, i, q);
                    if d > 0.0 {
                        u[i][q] = (u[i][q] - self.grad_at(u, i, q) / d).max(0.0);
                    }
                }
            }
        }
    }

    /// `sum_{(r, e)} sum_j w_e^ij |u_j(r)|` around `q`.
    fn neighbor_mass(&self, u: &Values, i: usize, q: usize) -> f64 {
        let mut m = 0.0;
        for &(r, e) in &self.adj[q][..self.deg[q] as usize] {
            for j in 0..self.k {
                m += self.wt(i, j, e as usize) * u[j][r as usize].abs();
            }
        }
        m
    }

    fn newton(&self, u: &mut Values, owner: &[Option<usize>]) {
        let unknowns: Vec<(usize, usize)> = self
            .interior
            .iter()
            .filter_map(|&q| owner[q].map(|i| (q, i)))
            .collect();
        if unknowns.is_empty() {
            return;
        }
        let mut slot = vec![usize::MAX; u[0].len()];
        for (s, &(q, _)) in unknowns.iter().enumerate() {
            slot[q] = s;
        }
        let mut prev = f64::INFINITY;
        for _ in 0..12 {
            let r: Vec<f64> = unknowns.iter().map(|&(q, i)| self.grad_at(u, i, q)).collect();
            let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax <= 4.0 * f64::EPSILON * self.value_scale(u) || rmax >= prev {
                return;
            }
            prev = rmax;
            let diag: Vec<f64> = unknowns.iter().map(|&(q, i)| self.hess_diag(u, i, q)).collect();
            let apply = |x: &[f64], out: &mut [f64]| {
                for (s, &(q, i)) in unknowns.iter().enumerate() {
                    let mut acc = diag[s] * x[s];
                    for &(nb, e) in &self.adj[q][..self.deg[q] as usize] {
                        let t = slot[nb as usize];
                        if t == usize::MAX {
                            continue;
                        }
                        let j = unknowns[t].1;
                        let w = self.wt(i, j, e as usize);
                        acc += if j == i { -w * x[t] } else { w * x[t] };
                    }
                    out[s] = acc;
                }
            };
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let Ok((delta, _)) = pcg(apply, &diag, &rhs, 1e-14, 4 * unknowns.len() + 100) else {
                return;
            };
            let e0 = self.energy(u);
            // energy differences below this are rounding noise
            let noise = 1e-13 * e0.abs().max(self.value_scale(u).powi(2));
            let old: Vec<f64> = unknowns.iter().map(|&(q, i)| u[i][q]).collect();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                for (s, &(q, i)) in unknowns.iter().enumerate() {
                    u[i][q] = old[s] + alpha * delta[s];
                }
                let e1 = self.energy(u);
                if e1 <= e0 || (e1 - e0 <= noise && alpha == 1.0) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                for (s, &(q, i)) in unknowns.iter().enumerate() {
                    u[i][q] = old[s];
                }
                return;
            }
        }
    }
}

fn values_of(s: &State) -> Values {
    s.fields().iter().map(|f| f.values().to_vec()).collect()
}

fn state_of(grid: &Grid, u: Values) -> Result<State> {
    State::new(
        u.into_iter()
            .map(|v| Field::from_values(grid, v))
            .collect::<Result<Vec<_>>>()?,
    )
}

fn check_state(s: &State, p: &Problem) -> Result<()> {
    if s.grid_id() != p.grid().id() {
        return Err(Error::GridMismatch);
    }
    if s.k() != p.k() {
        return Err(Error::Invalid(format!(
            "state has {} densities, problem has {}",
            s.k(),
            p.k()
        )));
    }
    Ok(())
}

/// Discrete energy of a state.
pub fn energy(s: &State, p: &Problem) -> Result<f64> {
    check_state(s, p)?;
    Ok(Functional::new(p).energy(&values_of(s)))
}

/// Exact gradient of [`energy`] with respect to interior values; zero at
/// boundary nodes. At interior nodes away from other densities it equals
/// `(-div(d_i^2 grad u_i) - f_i(u_i)) h^2`.
pub fn energy_gradient(s: &State, p: &Problem) -> Result<Vec<Field>> {
    check_state(s, p)?;
    let g = p.grid();
    let fun = Functional::new(p);
    let u = values_of(s);
    let mut out: Values = (0..p.k()).map(|_| Field::zeros(g).into_values()).collect();
    fun.gradient(&u, &mut out);
    out.into_iter().map(|v| Field::from_values(g, v)).collect()
}

/// One projected gradient step with backtracking (up to 20 halvings of `tau`).
/// Returns the input state and `false` when no candidate lowers the energy.
pub fn descent_step(s: &State, p: &Problem, tau: f64) -> Result<(State, bool)> {
    check_state(s, p)?;
    let fun = Functional::new(p);
    let u = values_of(s);
    let e0 = fun.energy(&u);
    let mut g = u.clone();
    fun.gradient(&u, &mut g);
    let mut cand = u.clone();
    let mut tau = tau;
    for _ in 0..=20 {
        fun.step_into(&u, &g, tau, &mut cand);
        if fun.energy(&cand) < e0 {
            return Ok((state_of(p.grid(), cand)?, true));
        }
        tau *= 0.5;
    }
    Ok((s.clone(), false))
}

/// Initial state for a solve.
pub fn initial_state(p: &Problem, init: Init) -> Result<State> {
    let g = p.grid();
    let bd = p.boundary();
    let mut u: Values = (0..p.k()).map(|_| Field::zeros(g).into_values()).collect();
    match init {
        Init::ZeroInterior => {}
        Init::HarmonicBlend => {
            let zero = vec![0.0; g.len()];
            for (i, ui) in u.iter_mut().enumerate() {
                let sol = cg_dirichlet(g, &p.stiffness(i), &zero, bd.trace(i), 0.0, 1e-10)?;
                for q in g.interior_nodes() {
                    ui[q] = sol[q];
                }
            }
        }
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = if bd.max_value() > 0.0 { bd.max_value() } else { 1.0 };
            for q in g.interior_nodes() {
                for ui in u.iter_mut() {
                    ui[q] = scale * rng.random::<f64>();
                }
            }
        }
    }
    let fields = u
        .into_iter()
        .map(|v| Field::from_values(g, v))
        .collect::<Result<Vec<_>>>()?;
    crate::segregation::project_segregated(g, &fields, bd)
}

/// Refuses problems whose data are inadmissible or violate coercivity.
pub fn check_solvable(p: &Problem) -> Result<()> {
    let rep = validate_admissible(p.grid(), p.boundary(), 0.0);
    if !rep.is_admissible() {
        return Err(Error::Inadmissible(format!(
            "{} boundary violations, first at node {}",
            rep.violations.len(),
            rep.violations[0].node
        )));
    }
    for i in 0..p.k() {
        let a2 = check_a2(p, i)?;
        if !a2.holds {
            return Err(Error::CoercivityViolated {
                density: i,
                min_eigenvalue: a2.min_eigenvalue,
            });
        }
    }
    Ok(())
}

/// Minimize the energy over segregated states.
pub fn solve(p: &Problem, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    check_solvable(p)?;
    solve_from(p, opts, initial_state(p, opts.init)?)
}

/// Minimize from a given segregated, boundary-pinned start (no admissibility
/// or coercivity checks).
pub fn solve_from(p: &Problem, opts: &SolveOptions, start: State) -> Result<Solution> {
    opts.validate()?;
    check_state(&start, p)?;
    let fun = Functional::new(p);
    let tau_max = opts.step.min(1.0 / (2.0 * fun.max_diag()).max(f64::MIN_POSITIVE));
    let mut x = values_of(&start);
    let mut ex = fun.energy(&x);
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut g = x.clone();
    let mut cand = x.clone();
    let mut t = 1.0f64;
    let mut tau = tau_max;
    let mut trace = vec![ex];
    let mut converged = false;
    let mut iters = 0;
    let window = 10;
    while iters < opts.max_iters {
        iters += 1;
        let mut accepted = false;
        if opts.accelerate && t > 1.0 {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for i in 0..p.k() {
                for &q in &fun.interior {
                    y[i][q] = x[i][q] + beta * (x[i][q] - x_prev[i][q]);
                }
            }
            fun.gradient(&y, &mut g);
            fun.step_into(&y, &g, tau, &mut cand);
            let ec = fun.energy(&cand);
            if ec < ex {
                std::mem::swap(&mut x_prev, &mut x);
                std::mem::swap(&mut x, &mut cand);
                ex = ec;
                t = t_next;
                accepted = true;
            }
        }
        if !accepted {
            // plain backtracking step from x, momentum reset
            fun.gradient(&x, &mut g);
            let mut step = tau;
            for _ in 0..=20 {
                fun.step_into(&x, &g, step, &mut cand);
                let ec = fun.energy(&cand);
                if ec < ex {
                    std::mem::swap(&mut x_prev, &mut x);
                    std::mem::swap(&mut x, &mut cand);
                    ex = ec;
                    accepted = true;
                    tau = step;
                    break;
                }
                step *= 0.5;
            }
            t = if accepted { 2.0 } else { 1.0 };
            if !accepted {
                converged = true;
                break;
            }
        }
        trace.push(ex);
        let n = trace.len();
        if n > window {
            let old = trace[n - 1 - window];
            if old - ex <= opts.energy_tol * ex.abs().max(old.abs()) {
                converged = true;
                break;
            }
        }
    }
    if opts.polish {
        let mut polished = x.clone();
        let kkt = fun.polish(&mut polished, 60);
        let ep = fun.energy(&polished);
        // a rise at rounding level is accepted without entering the trace
        if ep <= ex + 1e-13 * ex.abs().max(f64::MIN_POSITIVE) {
            x = polished;
            if ep < ex {
                ex = ep;
                trace.push(ex);
            }
            converged |= kkt;
        }
    }
    let h2 = p.grid().h() * p.grid().h();
    let final_gradient_norm = fun.stationarity(&x) / h2;
    Ok(Solution {
        state: state_of(p.grid(), x)?,
        energy_trace: trace,
        iters,
        converged,
        final_gradient_norm,
    })
}

#[derive(Debug, Clone)]
pub struct MultiStartReport {
    pub solutions: Vec<Solution>,
    pub seeds: Vec<u64>,
    /// Max over pairs of the discrete `l2` distance between states.
    pub max_distance: f64,
    /// Max over pairs of `|J_a - J_b| / max(|J|, tiny)`.
    pub max_energy_spread: f64,
    /// Largest `l2` norm among the solutions.
    pub norm: f64,
}

/// Independent solves from random starts with seeds `base, base+1, ...`.
pub fn multi_start(p: &Problem, opts: &SolveOptions, n: usize) -> Result<MultiStartReport> {
    let seeds: Vec<u64> = (0..n as u64).map(|s| opts.rng_seed.wrapping_add(s)).collect();
    multi_start_seeds(p, opts, &seeds)
}

/// [`multi_start`] with explicit seeds; repeated seeds give identical solutions.
pub fn multi_start_seeds(p: &Problem, opts: &SolveOptions, seeds: &[u64]) -> Result<MultiStartReport> {
    if seeds.len() < 2 {
        return Err(Error::Config("multi_start needs at least 2 seeds".into()));
    }
    opts.validate()?;
    check_solvable(p)?;
    let solutions: Vec<Solution> = seeds
        .par_iter()
        .map(|&seed| {
            let start = initial_state(p, Init::Random { seed })?;
            solve_from(p, opts, start)
        })
        .collect::<Result<_>>()?;
    let g = p.grid();
    let mut max_distance: f64 = 0.0;
    let mut max_energy_spread: f64 = 0.0;
    let emax = solutions
        .iter()
        .map(|s| s.energy().abs())
        .fold(f64::MIN_POSITIVE, f64::max);
    for a in 0..solutions.len() {
        for b in a + 1..solutions.len() {
            max_distance = max_distance.max(solutions[a].state.l2_distance(&solutions[b].state, g)?);
            max_energy_spread =
                max_energy_spread.max((solutions[a].energy() - solutions[b].energy()).abs() / emax);
        }
    }
    let norm = solutions.iter().map(|s| s.state.l2_norm(g)).fold(0.0, f64::max);
    Ok(MultiStartReport {
        solutions,
        seeds: seeds.to_vec(),
        max_distance,
        max_energy_spread,
        norm,
    })
}

/// Discrete `H^1` norm of `a - b`: edge differences plus nodal values.
pub fn h1_distance(grid: &Grid, a: &State, b: &State) -> Result<f64> {
    if a.grid_id() != grid.id() || b.grid_id() != grid.id() || a.k() != b.k() {
        return Err(Error::GridMismatch);
    }
    let edges = grid.edges();
    let mut s = 0.0;
    for i in 0..a.k() {
        let d: Vec<f64> = a
            .field(i)
            .values()
            .iter()
            .zip(b.field(i).values())
            .map(|(x, y)| x - y)
            .collect();
        for e in &edges {
            let t = d[e.a] - d[e.b];
            s += e.weight * t * t;
        }
        for q in grid.inside_nodes() {
            s += grid.node_weight(q) * d[q] * d[q];
        }
    }
    Ok(s.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub eps: f64,
    pub distance: f64,
    /// `distance / eps` (`NaN` at `eps = 0`).
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct PerturbationStudy {
    pub base: Solution,
    /// Discrete `H^1` norm of the base solution.
    pub base_norm: f64,
    pub rows: Vec<PerturbationRow>,
}

/// Re-solve with traces scaled by `1 + eps` and measure the `H^1` distance to
/// the base solution.
pub fn perturbation_study(p: &Problem, opts: &SolveOptions, eps: &[f64]) -> Result<PerturbationStudy> {
    opts.validate()?;
    check_solvable(p)?;
    let base = solve(p, opts)?;
    let g = p.grid();
    let zero = State::zeros(g, p.k());
    let base_norm = h1_distance(g, &base.state, &zero)?;
    let rows = eps
        .par_iter()
        .map(|&e| {
            if !(e.is_finite() && e > -1.0) {
                return Err(Error::Inadmissible(format!("perturbation {e} flips trace signs")));
            }
            let pe = p.with_boundary(p.boundary().scaled(1.0 + e))?;
            let distance = if e == 0.0 {
                0.0
            } else {
                let sol = solve(&pe, opts)?;
                h1_distance(g, &sol.state, &base.state)?
            };
            Ok(PerturbationRow {
                eps: e,
                distance,
                ratio: if e == 0.0 { f64::NAN } else { distance / e.abs() },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbationStudy {
        base,
        base_norm,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::presets;
    use crate::problem::{BoundaryData, DiffusionCoeff, ReactionTerm, Tolerances};
    use crate::segregation::is_segregated;

    fn fields(g: &Grid, fs: &[&dyn Fn(f64, f64) -> f64]) -> State {
        State::new(fs.iter().map(|f| Field::from_fn(g, f)).collect()).unwrap()
    }

    #[test]
    fn energy_examples() {
        let g = build_grid(&GridSpec::unit_square(17)).unwrap();
        let zero = Problem::new(
            g.clone(),
            vec![ReactionTerm::Linear { lambda: 3.0 }.into(); 2],
            vec![DiffusionCoeff::Constant(1.0); 2],
            BoundaryData::zero(&g, 2),
            Tolerances::default(),
        )
        .unwrap();
        assert_eq!(energy(&State::zeros(&g, 2), &zero).unwrap(), 0.0);

        let lin = presets::two_phase(17).unwrap();
        let lin = lin.with_reactions(vec![ReactionTerm::Zero.into(); 2]).unwrap();
        let s = fields(&g, &[&|x, _| x, &|_, _| 0.0]);
        assert!((energy(&s, &lin).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_phase_energy_is_half_dirichlet_energy_of_signed_field() {
        let p = presets::two_phase(33).unwrap();
        let g = p.grid();
        let s = fields(g, &[&|x, _| (x - 0.5).max(0.0), &|x, _| (0.5 - x).max(0.0)]);
        // signed field x - 1/2 has Dirichlet integral 1
        assert!((energy(&s, &p).unwrap() - 0.5).abs() < 1e-12);
        // stationary where positive, nonnegative where the density vanishes
        let grad = energy_gradient(&s, &p).unwrap();
        for (i, f) in grad.iter().enumerate() {
            for q in g.interior_nodes() {
                if s.value(i, q) > 0.0 {
                    assert!(f.get(q).abs() < 1e-13);
                } else {
                    assert!(f.get(q) >= -1e-13);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        for name in ["two_phase", "concave_uniqueness", "logistic", "variable_diffusion"] {
            let p = presets::by_name(name, 17).unwrap().unwrap();
            let g = p.grid();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let s = initial_state(&p, Init::Random { seed: 3 }).unwrap();
            let grad = energy_gradient(&s, &p).unwrap();
            for _ in 0..5 {
                let dir: Vec<Vec<f64>> = (0..p.k())
                    .map(|_| {
                        (0..g.len())
                            .map(|q| if g.is_interior(q) { rng.random::<f64>() - 0.5 } else { 0.0 })
                            .collect()
                    })
                    .collect();
                let shifted = |t: f64| {
                    let fs = s
                        .fields()
                        .iter()
                        .zip(&dir)
                        .map(|(f, d)| {
                            Field::from_values(g, f.values().iter().zip(d).map(|(a, b)| a + t * b).collect())
                                .unwrap()
                        })
                        .collect();
                    energy(&State::new(fs).unwrap(), &p).unwrap()
                };
                let eps = 1e-5;
                let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                let exact: f64 = grad
                    .iter()
                    .zip(&dir)
                    .flat_map(|(f, d)| f.values().iter().zip(d))
                    .filter(|(a, _)| !a.is_nan())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{name}: fd {fd} exact {exact}");
            }
        }
    }

    #[test]
    fn gradient_vanishes_on_discrete_harmonic_field() {
        let p = presets::two_phase(33).unwrap();
        let g = p.grid();
        let zero = vec![0.0; g.len()];
        let lift: Vec<f64> = (0..g.len()).map(|q| {
            let [x, y] = g.coords(q);
            1.0 + x * x - y * y + 0.3 * (3.0 * x).exp() * (3.0 * y).cos()
        }).collect();
        let u = cg_dirichlet(g, &p.stiffness(0), &zero, &lift, 0.0, 1e-15).unwrap();
        let s = State::new(vec![Field::from_values(g, u).unwrap(), Field::zeros(g)]).unwrap();
        let grad = energy_gradient(&s, &p).unwrap();
        for q in g.interior_nodes() {
            assert!(grad[0].get(q).abs() <= 1e-10);
        }
        // a vanishing density with vanishing neighbours has zero gradient
        let zero_state = State::zeros(g, 2);
        let pz = p.with_boundary(BoundaryData::zero(g, 2)).unwrap();
        for f in energy_gradient(&zero_state, &pz).unwrap() {
            assert!(f.values().iter().all(|v| v.is_nan() || *v == 0.0));
        }
    }

    #[test]
    fn descent_step_examples() {
        let p = presets::two_phase(17).unwrap();
        let g = p.grid();
        let exact = fields(g, &[&|x, _| (x - 0.5).max(0.0), &|x, _| (0.5 - x).max(0.0)]);
        let (same, accepted) = descent_step(&exact, &p, 0.1).unwrap();
        assert!(!accepted);
        assert_eq!(same, exact);

        let start = initial_state(&p, Init::ZeroInterior).unwrap();
        let e0 = energy(&start, &p).unwrap();
        let (next, accepted) = descent_step(&start, &p, 0.1).unwrap();
        assert!(accepted);
        assert!(energy(&next, &p).unwrap() < e0);
        assert!(is_segregated(&next, 0.0).segregated);

        let (big, _) = descent_step(&start, &p, 1e6).unwrap();
        assert!(energy(&big, &p).unwrap() <= e0);
    }

    #[test]
    fn two_phase_solution_matches_linear_profile() {
        let p = presets::two_phase(33).unwrap();
        for init in [Init::ZeroInterior, Init::HarmonicBlend, Init::Random { seed: 11 }] {
            let opts = SolveOptions { init, ..SolveOptions::default() };
            let sol = solve(&p, &opts).unwrap();
            assert!(sol.converged);
            assert!(is_segregated(&sol.state, 0.0).segregated);
            assert!(sol.energy_trace.windows(2).all(|w| w[1] <= w[0]));
            let g = p.grid();
            for q in g.inside_nodes() {
                let [x, _] = g.coords(q);
                let d = sol.state.value(0, q) - sol.state.value(1, q);
                assert!((d - (x - 0.5)).abs() < 1e-9, "{init:?}");
            }
        }
    }

    #[test]
    fn concave_zero_data_gives_zero() {
        let g = build_grid(&GridSpec::unit_square(17)).unwrap();
        let p = Problem::new(
            g.clone(),
            vec![ReactionTerm::ConcaveQuadratic { c: 0.5 }.into(); 3],
            vec![DiffusionCoeff::Constant(1.0); 3],
            BoundaryData::zero(&g, 3),
            Tolerances::default(),
        )
        .unwrap();
        let opts = SolveOptions { init: Init::Random { seed: 5 }, ..SolveOptions::default() };
        let sol = solve(&p, &opts).unwrap();
        let sup = sol.state.fields().iter().map(Field::sup_norm).fold(0.0, f64::max);
        assert!(sol.energy() >= 0.0 && sol.energy() < 1e-24);
        assert!(sup < 1e-12, "sup {sup}");
    }

    #[test]
    fn refuses_coercivity_failure_and_inadmissible_data() {
        let p = presets::a2_failure(17).unwrap();
        let err = solve(&p, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::CoercivityViolated { .. }));

        let base = presets::two_phase(9).unwrap();
        let g = base.grid();
        let both = BoundaryData::from_fns(g, &[&|_, _| 1.0, &|_, _| 1.0]);
        let bad = base.with_boundary(both).unwrap();
        assert!(matches!(solve(&bad, &SolveOptions::default()), Err(Error::Inadmissible(_))));
        let opts = SolveOptions { step: 0.0, ..SolveOptions::default() };
        assert!(matches!(solve(&base, &opts), Err(Error::Config(_))));
    }

    #[test]
    fn solve_is_deterministic() {
        let p = presets::logistic(17).unwrap();
        let opts = SolveOptions { init: Init::Random { seed: 9 }, ..SolveOptions::default() };
        let a = solve(&p, &opts).unwrap();
        let b = solve(&p, &opts).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.energy_trace, b.energy_trace);
        let rep = multi_start_seeds(&p, &opts, &[4, 4]).unwrap();
        assert_eq!(rep.max_distance, 0.0);
    }

    #[test]
    fn beats_hand_built_competitors() {
        let p = presets::triple_junction(33).unwrap();
        let sol = solve(&p, &SolveOptions::default()).unwrap();
        let g = p.grid();
        let analytic = presets::junction_field(g, 3, [0.0, 0.0], 0.0);
        let tol = 1e-10 * sol.energy().abs();
        assert!(sol.energy() <= energy(&analytic, &p).unwrap() + tol);
        // truncated cone competitors: shrink the interior toward zero
        for cut in [0.2, 0.5] {
            let mut fs = analytic.fields().to_vec();
            for f in fs.iter_mut() {
                for q in g.interior_nodes() {
                    let [x, y] = g.coords(q);
                    let r = x.hypot(y);
                    if r < cut {
                        f.set(q, f.get(q) * r / cut);
                    }
                }
            }
            let c = State::new(fs).unwrap();
            assert!(sol.energy() <= energy(&c, &p).unwrap() + tol);
        }
    }

    #[test]
    fn reflection_swap_symmetry() {
        let p = presets::two_phase(33).unwrap();
        let sol = solve(&p, &SolveOptions { init: Init::Random { seed: 1 }, ..SolveOptions::default() }).unwrap();
        let g = p.grid();
        let reflect = |f: &Field| {
            let mut out = f.clone();
            for q in 0..g.len() {
                let (i, j) = g.ij(q);
                out.set(q, f.get(g.idx(g.nx() - 1 - i, j)));
            }
            out
        };
        let swapped = State::new(vec![reflect(sol.state.field(1)), reflect(sol.state.field(0))]).unwrap();
        assert!((energy(&swapped, &p).unwrap() - sol.energy()).abs() <= 1e-10);
    }

    #[test]
    fn perturbation_study_zero_eps() {
        let p = presets::two_phase(17).unwrap();
        let study = perturbation_study(&p, &SolveOptions::default(), &[0.0, 0.1]).unwrap();
        assert_eq!(study.rows[0].distance, 0.0);
        // f = 0 is homogeneous: the solution scales with the data
        assert!((study.rows[1].distance - 0.1 * study.base_norm).abs() < 1e-9);
        assert!(perturbation_study(&p, &SolveOptions::default(), &[-2.0]).is_err());
    }
}
