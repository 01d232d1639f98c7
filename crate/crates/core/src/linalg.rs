//! Matrix-free weighted graph Laplacians on a grid and a conjugate-gradient
//! Dirichlet solver.

use crate::error::{Error, Result};
use crate::grid::{Edge, Grid};

/// `(K u)_p = sum_q w_pq (u_p - u_q)` assembled per node, used on interior rows.
#[derive(Debug, Clone)]
pub(crate) struct Stiffness {
    nbrs: Vec<[(usize, f64); 4]>,
    diag: Vec<f64>,
}

/// Edge weights `1/2 sum_{cells c ∋ e} cell_value[c]` on every lattice edge
/// adjacent to an included cell.
pub(crate) fn weighted_edges(grid: &Grid, cell_value: impl Fn(usize) -> f64) -> Vec<Edge> {
    let nx = grid.nx();
    let ny = grid.ny();
    let cell = |ci: usize, cj: usize| -> f64 {
        if ci < nx - 1 && cj < ny - 1 {
            let c = cj * (nx - 1) + ci;
            if grid.cell_included(c) {
                return 0.5 * cell_value(c);
            }
        }
        0.0
    };
    grid.edges()
        .into_iter()
        .map(|e| {
            let (i, j) = grid.ij(e.a);
            let w = if e.b == e.a + 1 {
                cell(i, j) + if j > 0 { cell(i, j - 1) } else { 0.0 }
            } else {
                cell(i, j) + if i > 0 { cell(i - 1, j) } else { 0.0 }
            };
            Edge { weight: w, ..e }
        })
        .collect()
}

impl Stiffness {
    pub(crate) fn from_edges(n: usize, edges: &[Edge]) -> Self {
        let mut nbrs = vec![[(0usize, 0.0f64); 4]; n];
        let mut fill = vec![0u8; n];
        let mut diag = vec![0.0; n];
        for e in edges {
            for (p, q) in [(e.a, e.b), (e.b, e.a)] {
                nbrs[p][fill[p] as usize] = (q, e.weight);
                fill[p] += 1;
                diag[p] += e.weight;
            }
        }
        Stiffness { nbrs, diag }
    }

    #[cfg(test)]
    /// Unit-coefficient stiffness (the five-point stencil times `h^2`).
    pub(crate) fn laplace(grid: &Grid) -> Self {
        Self::from_edges(grid.len(), &grid.edges())
    }

    #[inline]
    pub(crate) fn apply_at(&self, u: &[f64], p: usize) -> f64 {
        let mut s = self.diag[p] * u[p];
        for &(q, w) in &self.nbrs[p] {
            if w != 0.0 {
                s -= w * u[q];
            }
        }
        s
    }

    #[inline]
    pub(crate) fn diag(&self, p: usize) -> f64 {
        self.diag[p]
    }
}

/// Solve `K u = rhs + shift * u` on interior nodes with `u = lift` elsewhere,
/// by Jacobi-preconditioned conjugate gradients. `shift` must keep the system
/// positive definite. `rhs` is full-length; only interior entries are read.
pub(crate) fn cg_dirichlet(
    grid: &Grid,
    k: &Stiffness,
    rhs: &[f64],
    lift: &[f64],
    shift: f64,
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let n = grid.len();
    let interior: Vec<usize> = grid.interior_nodes().collect();
    let mut u: Vec<f64> = (0..n)
        .map(|p| if grid.is_interior(p) { 0.0 } else { lift[p] })
        .collect();
    for v in u.iter_mut() {
        if v.is_nan() {
            *v = 0.0;
        }
    }
    let op = |x: &[f64], out: &mut [f64]| {
        for &p in &interior {
            out[p] = k.apply_at(x, p) - shift * x[p];
        }
    };
    // r = rhs - A u with boundary lift included
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    op(&u, &mut tmp);
    for &p in &interior {
        r[p] = rhs[p] - tmp[p];
    }
    let bnorm = interior.iter().map(|&p| rhs[p] * rhs[p]).sum::<f64>().sqrt();
    let r0 = interior.iter().map(|&p| r[p] * r[p]).sum::<f64>().sqrt();
    let target = rel_tol * bnorm.max(r0).max(f64::MIN_POSITIVE);
    let inv_diag: Vec<f64> = (0..n)
        .map(|p| {
            let d = k.diag(p) - shift;
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let mut z = vec![0.0; n];
    for &p in &interior {
        z[p] = inv_diag[p] * r[p];
    }
    let mut d = vec![0.0; n];
    for &p in &interior {
        d[p] = z[p];
    }
    let mut rz: f64 = interior.iter().map(|&p| r[p] * z[p]).sum();
    let max_iter = 20 * interior.len() + 100;
    let mut ad = vec![0.0; n];
    for _ in 0..max_iter {
        let rn = interior.iter().map(|&p| r[p] * r[p]).sum::<f64>().sqrt();
        if rn <= target {
            return Ok(u);
        }
        op(&d, &mut ad);
        let dad: f64 = interior.iter().map(|&p| d[p] * ad[p]).sum();
        if dad <= 0.0 {
            return Err(Error::Invalid("operator is not positive definite".into()));
        }
        let alpha = rz / dad;
        for &p in &interior {
            u[p] += alpha * d[p];
            r[p] -= alpha * ad[p];
            z[p] = inv_diag[p] * r[p];
        }
        let rz_new: f64 = interior.iter().map(|&p| r[p] * z[p]).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for &p in &interior {
            d[p] = z[p] + beta * d[p];
        }
    }
    Err(Error::NoConvergence("conjugate gradient".into(), max_iter))
}

/// Jacobi-preconditioned CG on a compact vector of unknowns. `apply` writes
/// `A x` into its second argument; `A` must be symmetric positive definite.
/// Returns the last iterate and whether the relative tolerance was reached.
pub(crate) fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    rhs: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, bool)> {
    let n = rhs.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let inv: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let target = rel_tol * dot(rhs, rhs).sqrt();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut ad = vec![0.0; n];
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= target {
            return Ok((x, true));
        }
        apply(&d, &mut ad);
        let dad = dot(&d, &ad);
        if !(dad > 0.0) {
            return Err(Error::Invalid("operator is not positive definite".into()));
        }
        let alpha = rz / dad;
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * ad[i];
            z[i] = inv[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    let done = dot(&r, &r).sqrt() <= target;
    Ok((x, done))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};

    #[test]
    fn recovers_linear_harmonic_function() {
        let g = build_grid(&GridSpec::unit_square(33)).unwrap();
        let k = Stiffness::laplace(&g);
        let lift: Vec<f64> = (0..g.len()).map(|p| {
            let [x, y] = g.coords(p);
            2.0 * x - y + 0.5
        }).collect();
        let u = cg_dirichlet(&g, &k, &vec![0.0; g.len()], &lift, 0.0, 1e-14).unwrap();
        for p in g.interior_nodes() {
            assert!((u[p] - lift[p]).abs() < 1e-11);
        }
    }

    #[test]
    fn pcg_solves_small_spd_system() {
        // tridiagonal [2 -1; -1 2 -1; -1 2] with solution (1, 2, 3)
        let apply = |x: &[f64], out: &mut [f64]| {
            out[0] = 2.0 * x[0] - x[1];
            out[1] = -x[0] + 2.0 * x[1] - x[2];
            out[2] = -x[1] + 2.0 * x[2];
        };
        let (x, done) = pcg(apply, &[2.0; 3], &[0.0, 0.0, 4.0], 1e-14, 10).unwrap();
        assert!(done);
        for (a, b) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn solves_poisson_with_quadratic_solution() {
        // -Δ(x(1-x)) = 2, exact for the five-point stencil
        let g = build_grid(&GridSpec::unit_square(17)).unwrap();
        let k = Stiffness::laplace(&g);
        let h2 = g.h() * g.h();
        let rhs = vec![2.0 * h2; g.len()];
        let lift: Vec<f64> = (0..g.len()).map(|p| {
            let [x, _] = g.coords(p);
            x * (1.0 - x)
        }).collect();
        let u = cg_dirichlet(&g, &k, &rhs, &lift, 0.0, 1e-14).unwrap();
        for p in g.interior_nodes() {
            let [x, _] = g.coords(p);
            assert!((u[p] - x * (1.0 - x)).abs() < 1e-11);
        }
    }
}
