//! Ready-made problems and closed-form fields used by tests, benches and the CLI.

use std::f64::consts::PI;

use crate::error::Result;
use crate::grid::{build_grid, Field, Grid, GridSpec};
use crate::problem::{BoundaryData, DiffusionCoeff, Problem, Reaction, ReactionTerm, Tolerances};
use crate::segregation::State;

fn uniform(
    grid: Grid,
    k: usize,
    term: ReactionTerm,
    boundary: BoundaryData,
) -> Result<Problem> {
    Problem::new(
        grid,
        vec![Reaction::from(term); k],
        vec![DiffusionCoeff::Constant(1.0); k],
        boundary,
        Tolerances::default(),
    )
}

/// Unit square, `f = 0`, traces of `(x - 1/2)^+` and `(1/2 - x)^+`. The
/// minimizer is `u_1 - u_2 = x - 1/2`.
pub fn two_phase(n: usize) -> Result<Problem> {
    let g = build_grid(&GridSpec::unit_square(n))?;
    let bd = known_boundary("two_phase", &g, 2)?;
    uniform(g, 2, ReactionTerm::Zero, bd)
}

/// Index of the sector of `|cos((m/2)(theta + theta0))|` containing `theta`.
pub fn sector_of(m: usize, theta: f64, theta0: f64) -> usize {
    let half = m as f64 / 2.0;
    let s = ((half * (theta + theta0) + PI / 2.0) / PI).floor();
    s.rem_euclid(m as f64) as usize
}

/// `r^{m/2} |cos((m/2)(theta + theta0))|` around `center`, split into `m`
/// densities by sector.
pub fn junction_field(grid: &Grid, m: usize, center: [f64; 2], theta0: f64) -> State {
    let half = m as f64 / 2.0;
    let profile = |x: f64, y: f64| -> (usize, f64) {
        let (dx, dy) = (x - center[0], y - center[1]);
        let r = dx.hypot(dy);
        let theta = dy.atan2(dx);
        let v = r.powf(half) * (half * (theta + theta0)).cos().abs();
        (sector_of(m, theta, theta0), v)
    };
    let fields = (0..m)
        .map(|i| {
            Field::from_fn(grid, |x, y| {
                let (s, v) = profile(x, y);
                if s == i {
                    v
                } else {
                    0.0
                }
            })
        })
        .collect();
    State::new(fields).expect("fields share one grid")
}

/// Unit disk, `k = 3`, `f = 0`, traces of `r^{3/2}|cos(3 theta/2)|` on the
/// arcs `(-pi/3, pi/3)`, `(pi/3, pi)`, `(pi, 5 pi/3)`.
pub fn triple_junction(n: usize) -> Result<Problem> {
    let g = build_grid(&GridSpec::disk(n, [0.0, 0.0], 1.0))?;
    let bd = known_boundary("triple_junction", &g, 3)?;
    uniform(g, 3, ReactionTerm::Zero, bd)
}

/// Unit square, `k = 2`, `f(s) = -s` (`c = 1/2`), equal diffusions; sine
/// bumps on the left and top edges.
pub fn concave_uniqueness(n: usize) -> Result<Problem> {
    let g = build_grid(&GridSpec::unit_square(n))?;
    let bd = known_boundary("concave_uniqueness", &g, 2)?;
    uniform(g, 2, ReactionTerm::ConcaveQuadratic { c: 0.5 }, bd)
}

/// Zero data with `f(s) = min(30 s, s^{1/3})`: the linear branch exceeds the
/// first Dirichlet eigenvalue `2 pi^2`, so coercivity fails.
pub fn a2_failure(n: usize) -> Result<Problem> {
    let g = build_grid(&GridSpec::unit_square(n))?;
    let bd = known_boundary("a2_failure", &g, 2)?;
    uniform(g, 2, ReactionTerm::SublinearCap { lambda: 30.0 }, bd)
}

/// Two-phase data with `d_1 = 1 + a sin(pi x) sin(pi y)`, `d_2 = 1`, `f = 0`.
pub fn variable_diffusion(n: usize, a: f64) -> Result<Problem> {
    let g = build_grid(&GridSpec::unit_square(n))?;
    let bd = known_boundary("variable_diffusion", &g, 2)?;
    let d1 = Field::from_fn(&g, |x, y| 1.0 + a * (PI * x).sin() * (PI * y).sin());
    Problem::new(
        g,
        vec![ReactionTerm::Zero.into(); 2],
        vec![DiffusionCoeff::Nodal(d1), DiffusionCoeff::Constant(1.0)],
        bd,
        Tolerances::default(),
    )
}

/// Logistic reactions `f(s) = s (5 - s)` with sine traces on opposite edges.
pub fn logistic(n: usize) -> Result<Problem> {
    let g = build_grid(&GridSpec::unit_square(n))?;
    let bd = known_boundary("logistic", &g, 2)?;
    uniform(g, 2, ReactionTerm::Logistic { a: 5.0 }, bd)
}

fn known_boundary(name: &str, grid: &Grid, k: usize) -> Result<BoundaryData> {
    boundary_preset(name, grid, k).expect("preset name is known")
}

/// Boundary traces of the named preset laid on an arbitrary grid, with the
/// number of densities they describe. `zero` takes `k` from the caller.
pub fn boundary_preset(name: &str, grid: &Grid, k: usize) -> Option<Result<BoundaryData>> {
    let sine_left = |x: f64, y: f64| if x == 0.0 { (PI * y).sin().max(0.0) } else { 0.0 };
    Some(Ok(match name {
        "two_phase" | "variable_diffusion" => {
            BoundaryData::from_fns(grid, &[&|x, _| (x - 0.5).max(0.0), &|x, _| (0.5 - x).max(0.0)])
        }
        "triple_junction" => {
            let field = junction_field(grid, 3, grid.center(), 0.0);
            let traces = field.fields().iter().map(|f| f.values().to_vec()).collect();
            return Some(BoundaryData::new(grid, traces));
        }
        "concave_uniqueness" => BoundaryData::from_fns(
            grid,
            &[&sine_left, &|x, y| if y == 1.0 && x > 0.0 { (PI * x).sin().max(0.0) } else { 0.0 }],
        ),
        "logistic" => BoundaryData::from_fns(
            grid,
            &[&sine_left, &|x, y| if x == 1.0 { 2.0 * (PI * y).sin().max(0.0) } else { 0.0 }],
        ),
        "zero" | "a2_failure" => BoundaryData::zero(grid, k),
        _ => return None,
    }))
}

/// Preset names understood by [`by_name`].
pub const NAMES: [&str; 6] = [
    "two_phase",
    "triple_junction",
    "concave_uniqueness",
    "a2_failure",
    "variable_diffusion",
    "logistic",
];

/// Look up a preset problem by name at resolution `n`.
pub fn by_name(name: &str, n: usize) -> Option<Result<Problem>> {
    Some(match name {
        "two_phase" => two_phase(n),
        "triple_junction" => triple_junction(n),
        "concave_uniqueness" => concave_uniqueness(n),
        "a2_failure" => a2_failure(n),
        "variable_diffusion" => variable_diffusion(n, 0.5),
        "logistic" => logistic(n),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_admissible;

    #[test]
    fn sectors_follow_zeros_of_profile() {
        assert_eq!(sector_of(3, 0.0, 0.0), 0);
        assert_eq!(sector_of(3, 2.0, 0.0), 1);
        assert_eq!(sector_of(3, -2.0, 0.0), 2);
        assert_eq!(sector_of(4, 0.1, 0.0), 0);
        assert_eq!(sector_of(4, PI / 2.0, 0.0), 1);
    }

    #[test]
    fn presets_are_admissible() {
        for name in NAMES {
            let p = by_name(name, 17).unwrap().unwrap();
            assert!(validate_admissible(p.grid(), p.boundary(), 0.0).is_admissible(), "{name}");
        }
        assert!(by_name("nope", 17).is_none());
        let g = build_grid(&GridSpec::unit_square(9)).unwrap();
        assert!(boundary_preset("nope", &g, 2).is_none());
        assert_eq!(boundary_preset("zero", &g, 4).unwrap().unwrap().k(), 4);
    }
}
