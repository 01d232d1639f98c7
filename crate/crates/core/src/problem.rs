//! Problem data: reaction terms, diffusion coefficients, boundary traces, and
//! the executable checks on them (admissibility, coercivity, uniqueness).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian5, Field, Grid, GridId};
use crate::linalg::{cg_dirichlet, weighted_edges, Stiffness};
use crate::segregation::State;

/// Reaction `f(s)` with an exact antiderivative `F(s)`. Negative arguments use
/// the odd extension for `f` and the even one for `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReactionTerm {
    Zero,
    /// `f(s) = lambda s`
    Linear { lambda: f64 },
    /// `f(s) = -2 c s`, concave potential `-c s^2`
    ConcaveQuadratic { c: f64 },
    /// `f(s) = s (a - s)` on `[0, a]`, zero beyond
    Logistic { a: f64 },
    /// `f(s) = min(lambda s, s^(1/3))`
    SublinearCap { lambda: f64 },
}

impl ReactionTerm {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ReactionTerm::Zero => true,
            ReactionTerm::Linear { lambda } => lambda.is_finite(),
            ReactionTerm::ConcaveQuadratic { c } => c.is_finite() && c >= 0.0,
            ReactionTerm::Logistic { a } => a.is_finite() && a > 0.0,
            ReactionTerm::SublinearCap { lambda } => lambda.is_finite() && lambda > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid reaction parameters: {self:?}")))
        }
    }

    pub fn reaction(&self, s: f64) -> f64 {
        if s < 0.0 {
            return -self.reaction(-s);
        }
        match *self {
            ReactionTerm::Zero => 0.0,
            ReactionTerm::Linear { lambda } => lambda * s,
            ReactionTerm::ConcaveQuadratic { c } => -2.0 * c * s,
            ReactionTerm::Logistic { a } => {
                if s <= a {
                    s * (a - s)
                } else {
                    0.0
                }
            }
            ReactionTerm::SublinearCap { lambda } => (lambda * s).min(s.cbrt()),
        }
    }

    pub fn potential(&self, s: f64) -> f64 {
        let s = s.abs();
        match *self {
            ReactionTerm::Zero => 0.0,
            ReactionTerm::Linear { lambda } => 0.5 * lambda * s * s,
            ReactionTerm::ConcaveQuadratic { c } => -c * s * s,
            ReactionTerm::Logistic { a } => {
                let t = s.min(a);
                0.5 * a * t * t - t * t * t / 3.0
            }
            ReactionTerm::SublinearCap { lambda } => {
                let knee = lambda.powf(-1.5);
                if s <= knee {
                    0.5 * lambda * s * s
                } else {
                    0.5 * lambda * knee * knee + 0.75 * (s.powf(4.0 / 3.0) - knee.powf(4.0 / 3.0))
                }
            }
        }
    }

    /// `f'(s)`, even in `s`; one-sided (right) value at kinks.
    pub fn derivative(&self, s: f64) -> f64 {
        let s = s.abs();
        match *self {
            ReactionTerm::Zero => 0.0,
            ReactionTerm::Linear { lambda } => lambda,
            ReactionTerm::ConcaveQuadratic { c } => -2.0 * c,
            ReactionTerm::Logistic { a } => {
                if s < a {
                    a - 2.0 * s
                } else {
                    0.0
                }
            }
            ReactionTerm::SublinearCap { lambda } => {
                if s < lambda.powf(-1.5) {
                    lambda
                } else {
                    s.powf(-2.0 / 3.0) / 3.0
                }
            }
        }
    }

    /// Global Lipschitz constant of `f`.
    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            ReactionTerm::Zero => 0.0,
            ReactionTerm::Linear { lambda } => lambda.abs(),
            ReactionTerm::ConcaveQuadratic { c } => 2.0 * c,
            ReactionTerm::Logistic { a } => a,
            ReactionTerm::SublinearCap { lambda } => lambda,
        }
    }

    /// Declared `b` with `|f(s)| <= b s` for `s >= 1`.
    pub fn growth_bound(&self) -> f64 {
        match *self {
            ReactionTerm::Zero => 0.0,
            ReactionTerm::Linear { lambda } => lambda.abs(),
            ReactionTerm::ConcaveQuadratic { c } => 2.0 * c,
            ReactionTerm::Logistic { a } => a,
            // the linear branch bounds f for every s >= 0
            ReactionTerm::SublinearCap { lambda } => lambda,
        }
    }

    /// `sup_s F''(s)`.
    pub fn second_derivative_sup(&self) -> f64 {
        match *self {
            ReactionTerm::Zero => 0.0,
            ReactionTerm::Linear { lambda } => lambda,
            ReactionTerm::ConcaveQuadratic { c } => -2.0 * c,
            ReactionTerm::Logistic { a } => a,
            ReactionTerm::SublinearCap { lambda } => lambda,
        }
    }
}

/// Node-wise change of variables `v = d u` folded into a reaction:
/// `F~(v) = F(v/d) - (Δd / 2d) v^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescaling {
    d: Arc<Vec<f64>>,
    lap_ratio: Arc<Vec<f64>>,
}

/// Reaction of one density, possibly x-dependent through a [`Rescaling`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub term: ReactionTerm,
    pub rescaling: Option<Rescaling>,
}

impl From<ReactionTerm> for Reaction {
    fn from(term: ReactionTerm) -> Self {
        Reaction {
            term,
            rescaling: None,
        }
    }
}

impl Reaction {
    #[inline]
    pub fn f(&self, node: usize, s: f64) -> f64 {
        match &self.rescaling {
            None => self.term.reaction(s),
            Some(r) => {
                let d = r.d[node];
                self.term.reaction(s / d) / d - r.lap_ratio[node] * s
            }
        }
    }

    #[inline]
    pub fn df(&self, node: usize, s: f64) -> f64 {
        match &self.rescaling {
            None => self.term.derivative(s),
            Some(r) => {
                let d = r.d[node];
                self.term.derivative(s / d) / (d * d) - r.lap_ratio[node]
            }
        }
    }

    #[inline]
    pub fn potential(&self, node: usize, s: f64) -> f64 {
        match &self.rescaling {
            None => self.term.potential(s),
            Some(r) => {
                let d = r.d[node];
                self.term.potential(s / d) - 0.5 * r.lap_ratio[node] * s * s
            }
        }
    }

    /// Constant `b` bounding `|f(node, s)| <= b s` over all nodes.
    pub fn growth_bound(&self) -> f64 {
        let b = self.term.growth_bound();
        match &self.rescaling {
            None => b,
            Some(r) => r
                .d
                .iter()
                .zip(r.lap_ratio.iter())
                .filter(|(d, _)| d.is_finite())
                .map(|(d, l)| b / (d * d) + l.abs())
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionCoeff {
    Constant(f64),
    Nodal(Field),
}

impl DiffusionCoeff {
    #[inline]
    pub fn at(&self, node: usize) -> f64 {
        match self {
            DiffusionCoeff::Constant(d) => *d,
            DiffusionCoeff::Nodal(f) => f.get(node),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, DiffusionCoeff::Constant(d) if *d == 1.0)
    }

    pub fn to_field(&self, grid: &Grid) -> Field {
        match self {
            DiffusionCoeff::Constant(d) => Field::constant(grid, *d),
            DiffusionCoeff::Nodal(f) => f.clone(),
        }
    }
}

/// Boundary traces `phi_i`, stored full-length; only boundary nodes are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    grid: GridId,
    traces: Vec<Vec<f64>>,
}

impl BoundaryData {
    pub fn new(grid: &Grid, traces: Vec<Vec<f64>>) -> Result<Self> {
        if traces.iter().any(|t| t.len() != grid.len()) {
            return Err(Error::GridMismatch);
        }
        let traces = traces
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .enumerate()
                    .map(|(p, v)| if grid.is_boundary(p) { v } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(BoundaryData {
            grid: grid.id(),
            traces,
        })
    }

    /// Sample one closure per density at the boundary nodes.
    pub fn from_fns(grid: &Grid, fns: &[&dyn Fn(f64, f64) -> f64]) -> Self {
        let traces = fns
            .iter()
            .map(|f| {
                (0..grid.len())
                    .map(|p| {
                        if grid.is_boundary(p) {
                            let [x, y] = grid.coords(p);
                            f(x, y)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        BoundaryData {
            grid: grid.id(),
            traces,
        }
    }

    pub fn zero(grid: &Grid, k: usize) -> Self {
        BoundaryData {
            grid: grid.id(),
            traces: vec![vec![0.0; grid.len()]; k],
        }
    }

    pub fn grid_id(&self) -> GridId {
        self.grid
    }
    pub fn k(&self) -> usize {
        self.traces.len()
    }
    pub fn trace(&self, i: usize) -> &[f64] {
        &self.traces[i]
    }
    #[inline]
    pub fn value(&self, i: usize, node: usize) -> f64 {
        self.traces[i][node]
    }

    pub fn max_value(&self) -> f64 {
        self.traces
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multiply every trace by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        BoundaryData {
            grid: self.grid,
            traces: self
                .traces
                .iter()
                .map(|t| t.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ViolationKind {
    Negative { density: usize, value: f64 },
    Overlap { first: usize, second: usize, product: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub violations: Vec<Violation>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists boundary nodes where a trace is negative or two traces overlap.
pub fn validate_admissible(grid: &Grid, bd: &BoundaryData, tol: f64) -> AdmissibilityReport {
    let mut violations = Vec::new();
    for p in grid.boundary_nodes() {
        for i in 0..bd.k() {
            let v = bd.value(i, p);
            if v < -tol {
                violations.push(Violation {
                    node: p,
                    kind: ViolationKind::Negative { density: i, value: v },
                });
            }
        }
        for i in 0..bd.k() {
            for j in i + 1..bd.k() {
                let prod = bd.value(i, p) * bd.value(j, p);
                if prod.abs() > tol {
                    violations.push(Violation {
                        node: p,
                        kind: ViolationKind::Overlap {
                            first: i,
                            second: j,
                            product: prod,
                        },
                    });
                }
            }
        }
    }
    AdmissibilityReport { violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub segregation_tol: f64,
    pub residual_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            segregation_tol: 1e-12,
            residual_tol: 1e-6,
        }
    }
}

/// The full datum of the segregated minimization problem.
#[derive(Debug, Clone)]
pub struct Problem {
    grid: Grid,
    reactions: Vec<Reaction>,
    diffusions: Vec<DiffusionCoeff>,
    boundary: BoundaryData,
    pub tolerances: Tolerances,
}

impl Problem {
    pub fn new(
        grid: Grid,
        reactions: Vec<Reaction>,
        diffusions: Vec<DiffusionCoeff>,
        boundary: BoundaryData,
        tolerances: Tolerances,
    ) -> Result<Self> {
        let k = reactions.len();
        if k < 2 {
            return Err(Error::Config(format!("k >= 2 densities required, got {k}")));
        }
        if diffusions.len() != k || boundary.k() != k {
            return Err(Error::Config(format!(
                "expected {k} diffusions and boundary traces, got {} and {}",
                diffusions.len(),
                boundary.k()
            )));
        }
        if boundary.grid_id() != grid.id() {
            return Err(Error::GridMismatch);
        }
        for r in &reactions {
            r.term.validate()?;
        }
        for d in &diffusions {
            match d {
                DiffusionCoeff::Constant(v) => {
                    if !(v.is_finite() && *v > 0.0) {
                        return Err(Error::NonPositive(*v));
                    }
                }
                DiffusionCoeff::Nodal(f) => {
                    grid.check(f)?;
                    for p in grid.inside_nodes() {
                        let v = f.get(p);
                        if !(v.is_finite() && v > 0.0) {
                            return Err(Error::NonPositive(v));
                        }
                    }
                }
            }
        }
        Ok(Problem {
            grid,
            reactions,
            diffusions,
            boundary,
            tolerances,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn k(&self) -> usize {
        self.reactions.len()
    }
    pub fn reaction(&self, i: usize) -> &Reaction {
        &self.reactions[i]
    }
    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }
    pub fn diffusion(&self, i: usize) -> &DiffusionCoeff {
        &self.diffusions[i]
    }
    pub fn diffusions(&self) -> &[DiffusionCoeff] {
        &self.diffusions
    }
    pub fn boundary(&self) -> &BoundaryData {
        &self.boundary
    }

    pub fn has_unit_diffusion(&self) -> bool {
        self.diffusions.iter().all(DiffusionCoeff::is_unit)
    }

    /// Same problem with different boundary traces.
    pub fn with_boundary(&self, boundary: BoundaryData) -> Result<Self> {
        Problem::new(
            self.grid.clone(),
            self.reactions.clone(),
            self.diffusions.clone(),
            boundary,
            self.tolerances,
        )
    }

    pub fn with_reactions(&self, reactions: Vec<Reaction>) -> Result<Self> {
        Problem::new(
            self.grid.clone(),
            reactions,
            self.diffusions.clone(),
            self.boundary.clone(),
            self.tolerances,
        )
    }

    /// Stiffness of `w -> int d_i^2 |grad w|^2` (edge weights from cell-averaged `d_i^2`).
    pub(crate) fn stiffness(&self, i: usize) -> Stiffness {
        Stiffness::from_edges(self.grid.len(), &self.edges_for(|p| {
            let d = self.diffusions[i].at(p);
            d * d
        }))
    }

    pub(crate) fn edges_for(&self, node_value: impl Fn(usize) -> f64) -> Vec<crate::grid::Edge> {
        let g = &self.grid;
        let nx = g.nx();
        weighted_edges(g, |c| {
            let p = g.cell_origin_node(c);
            0.25 * (node_value(p) + node_value(p + 1) + node_value(p + nx) + node_value(p + nx + 1))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub holds: bool,
    /// Smallest eigenvalue of `int d^2 |grad w|^2 - b w^2` relative to `int w^2`.
    pub min_eigenvalue: f64,
    /// `min_eigenvalue` divided by the unshifted first eigenvalue.
    pub margin: f64,
    pub iterations: usize,
}

/// Checks the coercivity assumption for density `i` on the discrete
/// quadratic form, by inverse power iteration on the stiffness operator.
pub fn check_a2(p: &Problem, i: usize) -> Result<CoercivityReport> {
    if i >= p.k() {
        return Err(Error::IndexOutOfRange { index: i, len: p.k() });
    }
    let g = p.grid();
    let k = p.stiffness(i);
    let b = p.reaction(i).growth_bound();
    let h2 = g.h() * g.h();
    let interior: Vec<usize> = g.interior_nodes().collect();
    let zero = vec![0.0; g.len()];
    // smooth positive start: the lowest mode has no sign change
    let mut x: Vec<f64> = (0..g.len())
        .map(|q| {
            if g.is_interior(q) {
                g.distance_to_boundary(g.coords(q)).max(0.0) + g.h()
            } else {
                0.0
            }
        })
        .collect();
    let norm = |v: &[f64]| interior.iter().map(|&q| v[q] * v[q]).sum::<f64>().sqrt();
    let n0 = norm(&x);
    x.iter_mut().for_each(|v| *v /= n0);
    let max_iter = 500;
    let mut lambda_prev = f64::INFINITY;
    for it in 1..=max_iter {
        let y = cg_dirichlet(g, &k, &x, &zero, 0.0, 1e-12)?;
        let ny = norm(&y);
        let mut kx = 0.0;
        for &q in &interior {
            kx += y[q] * k.apply_at(&y, q);
        }
        let lambda = kx / (ny * ny) / h2;
        x = y.iter().map(|v| v / ny).collect();
        if (lambda - lambda_prev).abs() <= 1e-12 * lambda.abs() {
            let mu = lambda - b;
            return Ok(CoercivityReport {
                holds: mu > 0.0,
                min_eigenvalue: mu,
                margin: mu / lambda,
                iterations: it,
            });
        }
        lambda_prev = lambda;
    }
    Err(Error::NoConvergence("inverse power iteration".into(), max_iter))
}

/// Maps between a state and its rescaled counterpart `v_i = d_i u_i`.
#[derive(Debug, Clone)]
pub struct DiffusionMap {
    d: Vec<Vec<f64>>,
}

impl DiffusionMap {
    pub fn forward(&self, s: &State) -> Result<State> {
        self.apply(s, |u, d| u * d)
    }

    pub fn backward(&self, s: &State) -> Result<State> {
        self.apply(s, |v, d| v / d)
    }

    fn apply(&self, s: &State, op: impl Fn(f64, f64) -> f64) -> Result<State> {
        if s.k() != self.d.len() {
            return Err(Error::Invalid("density count mismatch".into()));
        }
        let fields = s
            .fields()
            .iter()
            .zip(&self.d)
            .map(|(f, d)| {
                let mut out = f.clone();
                for (v, dv) in out.values_mut().iter_mut().zip(d) {
                    if !v.is_nan() {
                        *v = op(*v, *dv);
                    }
                }
                out
            })
            .collect();
        State::new(fields)
    }
}

/// Reduces a problem with variable diffusions to one with `d = 1` through
/// `u_i = v_i / d_i`; reactions pick up the `Δd_i / d_i` mass term.
pub fn rescale_to_unit_diffusion(p: &Problem) -> Result<(Problem, DiffusionMap)> {
    let g = p.grid();
    let mut reactions = Vec::with_capacity(p.k());
    let mut maps = Vec::with_capacity(p.k());
    let mut traces = Vec::with_capacity(p.k());
    for i in 0..p.k() {
        let field = p.diffusion(i).to_field(g);
        for q in g.inside_nodes() {
            let v = field.get(q);
            if !(v > 0.0) {
                return Err(Error::NonPositive(v));
            }
        }
        let r = p.reaction(i);
        if r.rescaling.is_some() {
            return Err(Error::Invalid("problem is already rescaled".into()));
        }
        let d: Vec<f64> = field.values().to_vec();
        if p.diffusion(i).is_unit() {
            reactions.push(r.clone());
        } else {
            let lap = laplacian5(g, &field)?;
            let lap_ratio: Vec<f64> = (0..g.len())
                .map(|q| if g.is_interior(q) { lap.get(q) / d[q] } else { 0.0 })
                .collect();
            reactions.push(Reaction {
                term: r.term,
                rescaling: Some(Rescaling {
                    d: Arc::new(d.clone()),
                    lap_ratio: Arc::new(lap_ratio),
                }),
            });
        }
        traces.push(
            p.boundary()
                .trace(i)
                .iter()
                .zip(&d)
                .map(|(phi, dv)| if dv.is_nan() { 0.0 } else { phi * dv })
                .collect(),
        );
        maps.push(d);
    }
    let boundary = BoundaryData::new(g, traces)?;
    let unit = Problem::new(
        g.clone(),
        reactions,
        vec![DiffusionCoeff::Constant(1.0); p.k()],
        boundary,
        p.tolerances,
    )?;
    Ok((unit, DiffusionMap { d: maps }))
}

#[derive(Debug, Clone)]
pub struct UniquenessCheck {
    pub holds: bool,
    /// Minimum over densities of the left-hand side at interior nodes.
    pub residual: Field,
    pub min_value: f64,
}

/// Evaluates `-Δd + (Δd_i/d_i - b_i/(2 d_i^2)) d` at interior nodes for a
/// candidate `d > 0`, with `b_i = sup F_i''`.
pub fn uniqueness_condition_check(p: &Problem, candidate: &Field) -> Result<UniquenessCheck> {
    let g = p.grid();
    g.check(candidate)?;
    for q in g.inside_nodes() {
        let v = candidate.get(q);
        if !(v > 0.0) {
            return Err(Error::NonPositive(v));
        }
    }
    let lap_d = laplacian5(g, candidate)?;
    let mut residual = Field::constant(g, f64::NAN);
    let mut min_value = f64::INFINITY;
    let di_fields: Vec<(Field, Field)> = (0..p.k())
        .map(|i| {
            let f = p.diffusion(i).to_field(g);
            let l = laplacian5(g, &f)?;
            Ok((f, l))
        })
        .collect::<Result<_>>()?;
    for q in g.interior_nodes() {
        let mut m = f64::INFINITY;
        for (i, (di, lap_di)) in di_fields.iter().enumerate() {
            let b = p.reaction(i).term.second_derivative_sup();
            let dv = di.get(q);
            let coeff = lap_di.get(q) / dv - b / (2.0 * dv * dv);
            m = m.min(-lap_d.get(q) + coeff * candidate.get(q));
        }
        residual.set(q, m);
        min_value = min_value.min(m);
    }
    Ok(UniquenessCheck {
        holds: min_value >= -p.tolerances.residual_tol,
        residual,
        min_value,
    })
}
