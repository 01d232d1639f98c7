//! Segregated states, the hat operation and the segregation projection.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, GridId};
use crate::problem::BoundaryData;

/// `k` density fields on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    grid: GridId,
    fields: Vec<Field>,
}

impl State {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Invalid("state needs at least one density".into()))?;
        let grid = first.grid_id();
        let len = first.values().len();
        if fields.iter().any(|f| f.grid_id() != grid || f.values().len() != len) {
            return Err(Error::GridMismatch);
        }
        Ok(State { grid, fields })
    }

    pub fn zeros(grid: &Grid, k: usize) -> Self {
        State {
            grid: grid.id(),
            fields: vec![Field::zeros(grid); k],
        }
    }

    /// Zero in the interior, `bd` on boundary nodes.
    pub fn pinned_zero(grid: &Grid, bd: &BoundaryData) -> Self {
        let mut s = State::zeros(grid, bd.k());
        s.pin(grid, bd);
        s
    }

    pub fn grid_id(&self) -> GridId {
        self.grid
    }
    pub fn k(&self) -> usize {
        self.fields.len()
    }
    pub fn fields(&self) -> &[Field] {
        &self.fields
    }
    pub fn field(&self, i: usize) -> &Field {
        &self.fields[i]
    }
    pub fn field_mut(&mut self, i: usize) -> &mut Field {
        &mut self.fields[i]
    }
    pub fn into_fields(self) -> Vec<Field> {
        self.fields
    }

    #[inline]
    pub fn value(&self, i: usize, node: usize) -> f64 {
        self.fields[i].get(node)
    }

    /// Overwrite boundary nodes with the prescribed traces.
    pub fn pin(&mut self, grid: &Grid, bd: &BoundaryData) {
        for p in grid.boundary_nodes() {
            for (i, f) in self.fields.iter_mut().enumerate() {
                f.set(p, bd.value(i, p));
            }
        }
    }

    /// `U = sum_i u_i`.
    pub fn total(&self) -> Field {
        let mut out = self.fields[0].clone();
        for f in &self.fields[1..] {
            for (o, v) in out.values_mut().iter_mut().zip(f.values()) {
                *o += v;
            }
        }
        out
    }

    /// Discrete `l2` norm of the stacked densities, `(sum_i sum_p u_i(p)^2 h^2)^{1/2}`.
    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        let h2 = grid.h() * grid.h();
        self.fields
            .iter()
            .flat_map(|f| f.values().iter())
            .filter(|v| !v.is_nan())
            .map(|v| v * v * h2)
            .sum::<f64>()
            .sqrt()
    }

    /// Discrete `l2` distance to another state on the same grid.
    pub fn l2_distance(&self, other: &State, grid: &Grid) -> Result<f64> {
        if self.grid != other.grid || self.k() != other.k() {
            return Err(Error::GridMismatch);
        }
        let h2 = grid.h() * grid.h();
        Ok(self
            .fields
            .iter()
            .zip(&other.fields)
            .flat_map(|(a, b)| a.values().iter().zip(b.values()))
            .filter(|(a, _)| !a.is_nan())
            .map(|(a, b)| (a - b) * (a - b) * h2)
            .sum::<f64>()
            .sqrt())
    }
}

/// `u_i - sum_{j != i} u_j`.
pub fn hat(s: &State, i: usize) -> Result<Field> {
    if i >= s.k() {
        return Err(Error::IndexOutOfRange { index: i, len: s.k() });
    }
    let mut out = s.fields[i].clone();
    for (j, f) in s.fields.iter().enumerate() {
        if j != i {
            for (o, v) in out.values_mut().iter_mut().zip(f.values()) {
                *o -= v;
            }
        }
    }
    Ok(out)
}

/// Node-wise `v_i = (w_i - sum_{j != i} w_j)^+` after clamping `w` at zero.
///
/// Only the largest component can survive, so it alone is evaluated; the
/// result has at most one strictly positive entry per node in floating point.
pub(crate) fn project_values(w: &mut [f64]) {
    for v in w.iter_mut() {
        if !(*v > 0.0) {
            *v = 0.0;
        }
    }
    let mut best = 0;
    for i in 1..w.len() {
        if w[i] > w[best] {
            best = i;
        }
    }
    let others: f64 = w
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != best)
        .map(|(_, v)| *v)
        .sum();
    let keep = (w[best] - others).max(0.0);
    w.iter_mut().for_each(|v| *v = 0.0);
    w[best] = keep;
}

/// Project nonnegative fields onto segregated states and re-pin the boundary.
pub fn project_segregated(grid: &Grid, w: &[Field], bd: &BoundaryData) -> Result<State> {
    if w.len() != bd.k() {
        return Err(Error::Invalid(format!(
            "{} fields for {} boundary traces",
            w.len(),
            bd.k()
        )));
    }
    for f in w {
        grid.check(f)?;
    }
    if bd.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    let mut out: Vec<Field> = w.to_vec();
    let mut buf = vec![0.0; w.len()];
    for p in grid.inside_nodes() {
        if grid.is_boundary(p) {
            for (i, f) in out.iter_mut().enumerate() {
                f.set(p, bd.value(i, p));
            }
            continue;
        }
        for (b, f) in buf.iter_mut().zip(w) {
            *b = f.get(p);
        }
        project_values(&mut buf);
        for (f, b) in out.iter_mut().zip(&buf) {
            f.set(p, *b);
        }
    }
    State::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegregationCheck {
    pub segregated: bool,
    /// Node with the largest second-largest component.
    pub worst_node: Option<usize>,
    pub worst_value: f64,
}

/// True iff every node has at most one component above `tol`.
pub fn is_segregated(s: &State, tol: f64) -> SegregationCheck {
    let n = s.fields[0].values().len();
    let mut worst_node = None;
    let mut worst_value = f64::NEG_INFINITY;
    let mut segregated = true;
    for p in 0..n {
        let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut above = 0;
        for f in &s.fields {
            let v = f.get(p);
            if v.is_nan() {
                continue;
            }
            if v > tol {
                above += 1;
            }
            if v > first {
                second = first;
                first = v;
            } else if v > second {
                second = v;
            }
        }
        if second > worst_value {
            worst_value = second;
            worst_node = Some(p);
        }
        if above > 1 {
            segregated = false;
        }
    }
    SegregationCheck {
        segregated,
        worst_node,
        worst_value,
    }
}

/// Label counts `m(x)` at report radius `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityMap {
    /// Per node; 0 at masked-out nodes.
    pub counts: Vec<u8>,
    pub radius: f64,
    pub tol: f64,
}

impl MultiplicityMap {
    /// Nodes with `m >= level`.
    pub fn level_set(&self, level: u8) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &m)| m >= level)
            .map(|(p, _)| p)
            .collect()
    }

    pub fn max(&self) -> u8 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Lattice offsets within distance `r` (in units of `h`).
pub(crate) fn disk_offsets(r_over_h: f64) -> Vec<(isize, isize)> {
    let m = r_over_h.floor() as isize;
    let r2 = r_over_h * r_over_h * (1.0 + 1e-12);
    let mut out = Vec::new();
    for dj in -m..=m {
        for di in -m..=m {
            if (di * di + dj * dj) as f64 <= r2 {
                out.push((di, dj));
            }
        }
    }
    out
}

/// Count at each node the densities exceeding `tol` somewhere in `B(x, r)`.
pub fn multiplicity_map(grid: &Grid, s: &State, r: f64, tol: f64) -> Result<MultiplicityMap> {
    if s.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    if !(r >= 2.0 * grid.h() * (1.0 - 1e-12)) {
        return Err(Error::RadiusTooSmall {
            radius: r,
            min: 2.0 * grid.h(),
        });
    }
    let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
    let offsets = disk_offsets(r / grid.h());
    let mut counts = vec![0u8; grid.len()];
    for f in s.fields() {
        let active: Vec<bool> = f.values().iter().map(|v| *v > tol).collect();
        for p in grid.inside_nodes() {
            let (i, j) = grid.ij(p);
            let hit = offsets.iter().any(|&(di, dj)| {
                let (a, b) = (i as isize + di, j as isize + dj);
                a >= 0 && b >= 0 && a < nx && b < ny && active[(b * nx + a) as usize]
            });
            if hit {
                counts[p] += 1;
            }
        }
    }
    Ok(MultiplicityMap {
        counts,
        radius: r,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use proptest::prelude::*;

    fn node_state(g: &Grid, vals: &[f64]) -> State {
        State::new(vals.iter().map(|v| Field::constant(g, *v)).collect()).unwrap()
    }

    #[test]
    fn hat_examples() {
        let g = build_grid(&GridSpec::unit_square(3)).unwrap();
        let s = node_state(&g, &[2.0, 0.0, 0.0]);
        assert_eq!(hat(&s, 0).unwrap().get(4), 2.0);
        assert_eq!(hat(&s, 1).unwrap().get(4), -2.0);
        assert_eq!(hat(&s, 2).unwrap().get(4), -2.0);
        assert!(hat(&s, 3).is_err());
        let tie = node_state(&g, &[1.0, 1.0]);
        assert_eq!(hat(&tie, 0).unwrap().get(4), 0.0);
    }

    #[test]
    fn projection_examples() {
        let mut w = [3.0, 1.0];
        project_values(&mut w);
        assert_eq!(w, [2.0, 0.0]);
        let mut w = [1.0, 1.0];
        project_values(&mut w);
        assert_eq!(w, [0.0, 0.0]);
        let mut w = [0.0, 0.0, 5.0];
        project_values(&mut w);
        assert_eq!(w, [0.0, 0.0, 5.0]);
        let mut w = [-1.0, 0.5];
        project_values(&mut w);
        assert_eq!(w, [0.0, 0.5]);
    }

    #[test]
    fn projection_pins_boundary() {
        let g = build_grid(&GridSpec::unit_square(5)).unwrap();
        let bd = BoundaryData::from_fns(&g, &[&|x, _| x, &|x, _| 1.0 - x]);
        let w = vec![Field::constant(&g, 2.0), Field::constant(&g, 0.5)];
        let s = project_segregated(&g, &w, &bd).unwrap();
        for p in g.boundary_nodes() {
            assert_eq!(s.value(0, p), bd.value(0, p));
            assert_eq!(s.value(1, p), bd.value(1, p));
        }
        for p in g.interior_nodes() {
            assert_eq!(s.value(0, p), 1.5);
            assert_eq!(s.value(1, p), 0.0);
        }
    }

    #[test]
    fn segregation_check_examples() {
        let g = build_grid(&GridSpec::unit_square(3)).unwrap();
        let mut fields = vec![Field::zeros(&g); 3];
        assert!(is_segregated(&State::new(fields.clone()).unwrap(), 0.0).segregated);
        fields[0].set(4, 1.0);
        fields[1].set(4, 1.0);
        let chk = is_segregated(&State::new(fields).unwrap(), 0.5);
        assert!(!chk.segregated);
        assert_eq!(chk.worst_node, Some(4));
    }

    #[test]
    fn multiplicity_examples() {
        let g = build_grid(&GridSpec::unit_square(33)).unwrap();
        let s = State::new(vec![
            Field::from_fn(&g, |x, _| (x - 0.5).max(0.0)),
            Field::from_fn(&g, |x, _| (0.5 - x).max(0.0)),
        ])
        .unwrap();
        let h = g.h();
        assert!(multiplicity_map(&g, &s, h, 0.0).is_err());
        let m = multiplicity_map(&g, &s, 2.0 * h, 0.0).unwrap();
        for p in g.inside_nodes() {
            let [x, _] = g.coords(p);
            if (x - 0.5).abs() < 1e-12 {
                assert_eq!(m.counts[p], 2);
            } else if (x - 0.5).abs() > 2.5 * h {
                assert_eq!(m.counts[p], 1);
            }
        }
        let zero = State::zeros(&g, 2);
        assert_eq!(multiplicity_map(&g, &zero, 3.0 * h, 0.0).unwrap().max(), 0);
        assert!(m.level_set(2).len() >= 33);
    }

    fn tuples() -> impl Strategy<Value = Vec<f64>> {
        (2usize..6).prop_flat_map(|k| proptest::collection::vec(0.0f64..10.0, k))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn projection_properties(w in tuples()) {
            let mut v = w.clone();
            project_values(&mut v);
            prop_assert!(v.iter().filter(|x| **x > 0.0).count() <= 1);
            for (a, b) in v.iter().zip(&w) {
                prop_assert!(*a <= *b);
                prop_assert!(*a >= 0.0);
            }
            let mut again = v.clone();
            project_values(&mut again);
            prop_assert_eq!(&again, &v);
            // hat of a segregated tuple recovers it through the positive part
            for i in 0..v.len() {
                let others: f64 = v.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x).sum();
                prop_assert_eq!((v[i] - others).max(0.0), v[i]);
            }
        }

        #[test]
        fn multiplicity_monotone_in_radius(seed in 0u64..1000) {
            let g = build_grid(&GridSpec::unit_square(17)).unwrap();
            let a = (seed % 7) as f64 / 7.0;
            let s = State::new(vec![
                Field::from_fn(&g, |x, y| (x + a * y - 0.6).max(0.0)),
                Field::from_fn(&g, |x, y| (0.4 - x - a * y).max(0.0)),
            ]).unwrap();
            let h = g.h();
            let small = multiplicity_map(&g, &s, 2.0 * h, 0.0).unwrap();
            let big = multiplicity_map(&g, &s, 4.0 * h, 0.0).unwrap();
            for (m1, m2) in small.counts.iter().zip(&big.counts) {
                prop_assert!(m1 <= m2);
            }
        }
    }
}
