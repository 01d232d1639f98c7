//! Rectangular node lattices and the discrete operators built on them.
//!
//! Nodes are stored row-major: node `(i, j)` sits at `origin + (i h, j h)` and
//! has flat index `j * nx + i`. Masked-out nodes (outside a disk domain) carry
//! `NaN` in every [`Field`], so arrays keep the full lattice shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain shape laid over the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Disk { center: [f64; 2], radius: f64 },
}

/// Description of a grid before masks are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Physical length spanned along x; `h = extent / (nx - 1)`.
    pub extent: f64,
    pub origin: [f64; 2],
    pub shape: Shape,
}

impl GridSpec {
    /// `n x n` nodes on the unit square.
    pub fn unit_square(n: usize) -> Self {
        GridSpec {
            nx: n,
            ny: n,
            extent: 1.0,
            origin: [0.0, 0.0],
            shape: Shape::Rectangle,
        }
    }

    /// `n x n` nodes on the bounding square of a disk.
    pub fn disk(n: usize, center: [f64; 2], radius: f64) -> Self {
        GridSpec {
            nx: n,
            ny: n,
            extent: 2.0 * radius,
            origin: [center[0] - radius, center[1] - radius],
            shape: Shape::Disk { center, radius },
        }
    }
}

/// Role of a node in the discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Outside,
    Boundary,
    Interior,
}

/// Identity of a grid geometry. Two grids built from equal specs share an id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridId(pub u64);

#[derive(Debug, Clone)]
pub struct Grid {
    nx: usize,
    ny: usize,
    h: f64,
    origin: [f64; 2],
    shape: Shape,
    kind: Vec<NodeKind>,
    cell_in: Vec<bool>,
    /// Quadrature weight of each node in units of `h^2`.
    node_weight: Vec<f64>,
    id: GridId,
}

/// Horizontal (`0`) or vertical (`1`) lattice edge starting at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Number of included cells adjacent to the edge, halved (0, 0.5 or 1).
    pub weight: f64,
}

fn fnv(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

pub fn build_grid(spec: &GridSpec) -> Result<Grid> {
    let GridSpec {
        nx,
        ny,
        extent,
        origin,
        shape,
    } = *spec;
    if nx < 3 || ny < 3 {
        return Err(Error::Config(format!(
            "grid needs at least 3 nodes per axis, got {nx} x {ny}"
        )));
    }
    if !(extent.is_finite() && extent > 0.0) {
        return Err(Error::Config(format!("extent must be positive, got {extent}")));
    }
    if !(origin[0].is_finite() && origin[1].is_finite()) {
        return Err(Error::Config("origin must be finite".into()));
    }
    if let Shape::Disk { center, radius } = shape {
        if !(radius.is_finite() && radius > 0.0 && center[0].is_finite() && center[1].is_finite()) {
            return Err(Error::Config(format!("invalid disk radius {radius}")));
        }
    }
    let h = extent / (nx - 1) as f64;
    let inside: Vec<bool> = (0..nx * ny)
        .map(|idx| {
            let (i, j) = (idx % nx, idx / nx);
            match shape {
                Shape::Rectangle => true,
                Shape::Disk { center, radius } => {
                    let x = origin[0] + i as f64 * h - center[0];
                    let y = origin[1] + j as f64 * h - center[1];
                    (x * x + y * y).sqrt() <= radius * (1.0 + 1e-12)
                }
            }
        })
        .collect();

    let mut kind = vec![NodeKind::Outside; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let idx = j * nx + i;
            if !inside[idx] {
                continue;
            }
            let on_edge = i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
            let full = !on_edge
                && (-1i64..=1).all(|dj| {
                    (-1i64..=1).all(|di| {
                        let q = (j as i64 + dj) as usize * nx + (i as i64 + di) as usize;
                        inside[q]
                    })
                });
            kind[idx] = if full {
                NodeKind::Interior
            } else {
                NodeKind::Boundary
            };
        }
    }
    if !kind.iter().any(|k| *k == NodeKind::Interior) {
        return Err(Error::Config("grid has no interior nodes".into()));
    }

    let mut cell_in = vec![false; (nx - 1) * (ny - 1)];
    let mut node_weight = vec![0.0; nx * ny];
    for cj in 0..ny - 1 {
        for ci in 0..nx - 1 {
            let p = cj * nx + ci;
            let corners = [p, p + 1, p + nx, p + nx + 1];
            if corners.iter().all(|&q| inside[q]) {
                cell_in[cj * (nx - 1) + ci] = true;
                for q in corners {
                    node_weight[q] += 0.25;
                }
            }
        }
    }

    let shape_bytes: Vec<u8> = match shape {
        Shape::Rectangle => vec![0],
        Shape::Disk { center, radius } => std::iter::once(1u8)
            .chain(center[0].to_bits().to_le_bytes())
            .chain(center[1].to_bits().to_le_bytes())
            .chain(radius.to_bits().to_le_bytes())
            .collect(),
    };
    let id = GridId(fnv(
        (nx as u64)
            .to_le_bytes()
            .into_iter()
            .chain((ny as u64).to_le_bytes())
            .chain(h.to_bits().to_le_bytes())
            .chain(origin[0].to_bits().to_le_bytes())
            .chain(origin[1].to_bits().to_le_bytes())
            .chain(shape_bytes),
    ));

    Ok(Grid {
        nx,
        ny,
        h,
        origin,
        shape,
        kind,
        cell_in,
        node_weight,
        id,
    })
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }
    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn id(&self) -> GridId {
        self.id
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
        ]
    }

    /// Center of the lattice bounding box.
    pub fn center(&self) -> [f64; 2] {
        match self.shape {
            Shape::Disk { center, .. } => center,
            Shape::Rectangle => [
                self.origin[0] + 0.5 * (self.nx - 1) as f64 * self.h,
                self.origin[1] + 0.5 * (self.ny - 1) as f64 * self.h,
            ],
        }
    }

    #[inline]
    pub fn kind(&self, idx: usize) -> NodeKind {
        self.kind[idx]
    }
    #[inline]
    pub fn is_interior(&self, idx: usize) -> bool {
        self.kind[idx] == NodeKind::Interior
    }
    #[inline]
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.kind[idx] == NodeKind::Boundary
    }
    #[inline]
    pub fn is_inside(&self, idx: usize) -> bool {
        self.kind[idx] != NodeKind::Outside
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.kind.iter().map(|k| *k == NodeKind::Interior).collect()
    }
    pub fn boundary_mask(&self) -> Vec<bool> {
        self.kind.iter().map(|k| *k == NodeKind::Boundary).collect()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&p| self.is_interior(p))
    }
    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&p| self.is_boundary(p))
    }
    pub fn inside_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&p| self.is_inside(p))
    }

    /// The four lattice neighbors of an interior node: east, west, north, south.
    #[inline]
    pub fn neighbors4(&self, idx: usize) -> [usize; 4] {
        [idx + 1, idx - 1, idx + self.nx, idx - self.nx]
    }

    /// Lattice neighbors of any node, clipped at the lattice edge.
    pub fn lattice_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(idx);
        let nx = self.nx;
        let ny = self.ny;
        [
            (i + 1 < nx).then(|| idx + 1),
            (i > 0).then(|| idx - 1),
            (j + 1 < ny).then(|| idx + nx),
            (j > 0).then(|| idx - nx),
        ]
        .into_iter()
        .flatten()
    }

    pub fn n_cells(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    /// Whether cell `c` (lower-left corner `(ci, cj)`) has all four corners in the domain.
    #[inline]
    pub fn cell_included(&self, c: usize) -> bool {
        self.cell_in[c]
    }

    /// Lower-left node of cell `c`.
    #[inline]
    pub fn cell_origin_node(&self, c: usize) -> usize {
        let ci = c % (self.nx - 1);
        let cj = c / (self.nx - 1);
        cj * self.nx + ci
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let p = self.coords(self.cell_origin_node(c));
        [p[0] + 0.5 * self.h, p[1] + 0.5 * self.h]
    }

    /// Quadrature weight of node `idx` (a multiple of `h^2 / 4`).
    #[inline]
    pub fn node_weight(&self, idx: usize) -> f64 {
        self.node_weight[idx] * self.h * self.h
    }

    /// All lattice edges adjacent to at least one included cell.
    pub fn edges(&self) -> Vec<Edge> {
        let (nx, ny) = (self.nx, self.ny);
        let cell = |ci: usize, cj: usize| -> f64 {
            if ci < nx - 1 && cj < ny - 1 && self.cell_in[cj * (nx - 1) + ci] {
                0.5
            } else {
                0.0
            }
        };
        let mut edges = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let a = j * nx + i;
                if i + 1 < nx {
                    let w = cell(i, j) + if j > 0 { cell(i, j - 1) } else { 0.0 };
                    if w > 0.0 {
                        edges.push(Edge { a, b: a + 1, weight: w });
                    }
                }
                if j + 1 < ny {
                    let w = cell(i, j) + if i > 0 { cell(i - 1, j) } else { 0.0 };
                    if w > 0.0 {
                        edges.push(Edge {
                            a,
                            b: a + nx,
                            weight: w,
                        });
                    }
                }
            }
        }
        edges
    }

    /// Distance from a point to the physical domain boundary (negative outside).
    pub fn distance_to_boundary(&self, x: [f64; 2]) -> f64 {
        match self.shape {
            Shape::Rectangle => {
                let xmax = self.origin[0] + (self.nx - 1) as f64 * self.h;
                let ymax = self.origin[1] + (self.ny - 1) as f64 * self.h;
                (x[0] - self.origin[0])
                    .min(xmax - x[0])
                    .min(x[1] - self.origin[1])
                    .min(ymax - x[1])
            }
            Shape::Disk { center, radius } => {
                radius - ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt()
            }
        }
    }

    /// Bilinear interpolation of a field at a physical point. `None` outside
    /// the lattice or when a surrounding node is masked out.
    pub fn sample(&self, f: &Field, x: [f64; 2]) -> Option<f64> {
        let s = (x[0] - self.origin[0]) / self.h;
        let t = (x[1] - self.origin[1]) / self.h;
        if s < 0.0 || t < 0.0 || s > (self.nx - 1) as f64 || t > (self.ny - 1) as f64 {
            return None;
        }
        let i = (s.floor() as usize).min(self.nx - 2);
        let j = (t.floor() as usize).min(self.ny - 2);
        let (a, b) = (s - i as f64, t - j as f64);
        let p = self.idx(i, j);
        let v = &f.values;
        let corners = [v[p], v[p + 1], v[p + self.nx], v[p + self.nx + 1]];
        if corners.iter().any(|c| c.is_nan()) {
            return None;
        }
        Some(
            (1.0 - a) * (1.0 - b) * corners[0]
                + a * (1.0 - b) * corners[1]
                + (1.0 - a) * b * corners[2]
                + a * b * corners[3],
        )
    }

    pub fn check(&self, f: &Field) -> Result<()> {
        if f.grid == self.id && f.values.len() == self.len() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// One scalar per lattice node, tied to the grid it was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridId,
    values: Vec<f64>,
}

impl Field {
    /// Zero on the domain, `NaN` at masked-out nodes.
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Field {
            grid: grid.id,
            values: (0..grid.len())
                .map(|p| if grid.is_inside(p) { c } else { f64::NAN })
                .collect(),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        Field {
            grid: grid.id,
            values: (0..grid.len())
                .map(|p| {
                    if grid.is_inside(p) {
                        let [x, y] = grid.coords(p);
                        f(x, y)
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        }
    }

    /// Wrap raw values; masked-out nodes are overwritten with `NaN`.
    pub fn from_values(grid: &Grid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        for (p, v) in values.iter_mut().enumerate() {
            if !grid.is_inside(p) {
                *v = f64::NAN;
            }
        }
        Ok(Field {
            grid: grid.id,
            values,
        })
    }

    pub fn grid_id(&self) -> GridId {
        self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }
    #[inline]
    pub fn set(&mut self, idx: usize, v: f64) {
        self.values[idx] = v;
    }

    /// Node-wise map, preserving masked-out `NaN`s.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .map(|&v| if v.is_nan() { v } else { f(v) })
                .collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    /// Max of `|v|` over finite entries.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .filter(|v| !v.is_nan())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Five-point Laplacian at interior nodes; `NaN` elsewhere.
pub fn laplacian5(grid: &Grid, f: &Field) -> Result<Field> {
    grid.check(f)?;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let v = &f.values;
    let values = (0..grid.len())
        .map(|p| {
            if grid.is_interior(p) {
                let [e, w, n, s] = grid.neighbors4(p);
                (v[e] + v[w] + v[n] + v[s] - 4.0 * v[p]) * inv_h2
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(Field {
        grid: grid.id,
        values,
    })
}

/// Per-cell `d^2 |grad f|^2 h^2` with forward differences averaged over the
/// two parallel cell edges. Excluded cells contribute 0.
pub fn gradient_energy_density(grid: &Grid, f: &Field, d: &Field) -> Result<Vec<f64>> {
    grid.check(f)?;
    grid.check(d)?;
    let nx = grid.nx;
    let v = &f.values;
    let dv = &d.values;
    Ok((0..grid.n_cells())
        .map(|c| {
            if !grid.cell_in[c] {
                return 0.0;
            }
            let p = grid.cell_origin_node(c);
            let (a, b, cc, dd) = (p, p + 1, p + nx, p + nx + 1);
            let d2 = 0.25 * (dv[a] * dv[a] + dv[b] * dv[b] + dv[cc] * dv[cc] + dv[dd] * dv[dd]);
            let gx = 0.5 * ((v[b] - v[a]).powi(2) + (v[dd] - v[cc]).powi(2));
            let gy = 0.5 * ((v[cc] - v[a]).powi(2) + (v[dd] - v[b]).powi(2));
            d2 * (gx + gy)
        })
        .collect())
}

/// Cell-average quadrature over included cells.
pub fn integrate(grid: &Grid, f: &Field) -> Result<f64> {
    grid.check(f)?;
    Ok((0..grid.len())
        .filter(|&p| grid.node_weight[p] > 0.0)
        .map(|p| grid.node_weight(p) * f.values[p])
        .sum())
}

/// Dirichlet integral `int_{B(x0, r)} |grad f|^2`, each cell weighted by the
/// exact fraction of its area inside the ball.
pub fn ball_dirichlet_integral(grid: &Grid, f: &Field, x0: [f64; 2], r: f64) -> Result<f64> {
    grid.check(f)?;
    if !(r > 0.0) {
        return Err(Error::Invalid(format!("ball radius must be positive, got {r}")));
    }
    let outside = Error::BallOutsideDomain {
        x: x0[0],
        y: x0[1],
        radius: r,
    };
    if grid.distance_to_boundary(x0) < r - 1e-12 * r {
        return Err(outside);
    }
    let h = grid.h;
    let nx = grid.nx;
    let to_cell = |x: f64, o: f64, n: usize| -> (usize, usize) {
        let lo = ((x - r - o) / h).floor().max(0.0) as usize;
        let hi = (((x + r - o) / h).ceil() as usize).min(n - 1);
        (lo, hi)
    };
    let (ci0, ci1) = to_cell(x0[0], grid.origin[0], nx);
    let (cj0, cj1) = to_cell(x0[1], grid.origin[1], grid.ny);
    let v = &f.values;
    let mut total = 0.0;
    for cj in cj0..cj1 {
        for ci in ci0..ci1 {
            let c = cj * (nx - 1) + ci;
            let p = cj * nx + ci;
            let [x1, y1] = grid.coords(p);
            let area = disk_rect_area(x0, r, [x1, x1 + h], [y1, y1 + h]);
            if area <= 0.0 {
                continue;
            }
            if !grid.cell_in[c] {
                return Err(outside);
            }
            let (a, b, cc, dd) = (p, p + 1, p + nx, p + nx + 1);
            let gx = 0.5 * ((v[b] - v[a]).powi(2) + (v[dd] - v[cc]).powi(2));
            let gy = 0.5 * ((v[cc] - v[a]).powi(2) + (v[dd] - v[b]).powi(2));
            total += (gx + gy) * area / (h * h);
        }
    }
    Ok(total)
}

/// Exact area of `B(center, r) ∩ [x1, x2] x [y1, y2]`.
pub fn disk_rect_area(center: [f64; 2], r: f64, xs: [f64; 2], ys: [f64; 2]) -> f64 {
    let (x1, x2) = (xs[0] - center[0], xs[1] - center[0]);
    let (y1, y2) = (ys[0] - center[1], ys[1] - center[1]);
    let a = x1.max(-r);
    let b = x2.min(r);
    if a >= b || y1 >= y2 {
        return 0.0;
    }
    let s = |x: f64| (r * r - x * x).max(0.0).sqrt();
    // antiderivative of s
    let g = |x: f64| 0.5 * (x * s(x) + r * r * (x / r).clamp(-1.0, 1.0).asin());
    let mut cuts = vec![a, b];
    for y in [y1, y2] {
        if y.abs() < r {
            let c = (r * r - y * y).sqrt();
            for x in [-c, c] {
                if x > a && x < b {
                    cuts.push(x);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let sm = s(0.5 * (lo + hi));
        let upper_is_s = sm < y2;
        let lower_is_s = -sm > y1;
        let upper_mid = if upper_is_s { sm } else { y2 };
        let lower_mid = if lower_is_s { -sm } else { y1 };
        if upper_mid <= lower_mid {
            continue;
        }
        let int_s = g(hi) - g(lo);
        let len = hi - lo;
        let up = if upper_is_s { int_s } else { y2 * len };
        let low = if lower_is_s { -int_s } else { y1 * len };
        area += up - low;
    }
    area.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square(n: usize) -> Grid {
        build_grid(&GridSpec::unit_square(n)).unwrap()
    }

    #[test]
    fn counts_interior_nodes() {
        let g = square(3);
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.interior_nodes().count(), 1);
        assert_eq!(square(5).interior_nodes().count(), 9);
    }

    #[test]
    fn disk_masks() {
        let spec = GridSpec {
            nx: 5,
            ny: 5,
            extent: 1.0,
            origin: [0.0, 0.0],
            shape: Shape::Disk {
                center: [0.5, 0.5],
                radius: 0.5,
            },
        };
        let g = build_grid(&spec).unwrap();
        assert!(g.is_interior(g.idx(2, 2)));
        for (i, j) in [(0, 0), (4, 0), (0, 4), (4, 4)] {
            assert_eq!(g.kind(g.idx(i, j)), NodeKind::Outside);
        }
        for p in g.interior_nodes() {
            assert!(g.distance_to_boundary(g.coords(p)) > 0.0);
            for q in g.neighbors4(p) {
                assert!(g.is_inside(q));
            }
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut spec = GridSpec::unit_square(2);
        assert!(matches!(build_grid(&spec), Err(Error::Config(_))));
        spec.nx = 5;
        spec.ny = 5;
        spec.extent = 0.0;
        assert!(build_grid(&spec).is_err());
    }

    #[test]
    fn laplacian_on_polynomials() {
        let g = square(9);
        let c = laplacian5(&g, &Field::constant(&g, 3.0)).unwrap();
        let q = laplacian5(&g, &Field::from_fn(&g, |x, y| x * x + y * y)).unwrap();
        let xy = laplacian5(&g, &Field::from_fn(&g, |x, y| x * y)).unwrap();
        for p in g.interior_nodes() {
            assert_eq!(c.get(p), 0.0);
            assert_relative_eq!(q.get(p), 4.0, epsilon = 1e-10);
            assert!(xy.get(p).abs() < 1e-10);
        }
        for p in g.boundary_nodes() {
            assert!(q.get(p).is_nan());
        }
    }

    #[test]
    fn dirichlet_density_totals() {
        let g = square(17);
        let one = Field::constant(&g, 1.0);
        let two = Field::constant(&g, 2.0);
        let x = Field::from_fn(&g, |x, _| x);
        let s: f64 = gradient_energy_density(&g, &x, &one).unwrap().iter().sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        let s: f64 = gradient_energy_density(&g, &x, &two).unwrap().iter().sum();
        assert_relative_eq!(s, 4.0, epsilon = 1e-12);
        let s: f64 = gradient_energy_density(&g, &one, &one).unwrap().iter().sum();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn quadrature() {
        let g = square(17);
        assert_relative_eq!(integrate(&g, &Field::constant(&g, 1.0)).unwrap(), 1.0, epsilon = 1e-14);
        assert_eq!(integrate(&g, &Field::zeros(&g)).unwrap(), 0.0);
        let x = integrate(&g, &Field::from_fn(&g, |x, _| x)).unwrap();
        assert!((x - 0.5).abs() < g.h() * g.h());
    }

    #[test]
    fn ball_integrals() {
        let g = square(65);
        let c = [0.5, 0.5];
        let r = 0.25;
        assert_eq!(ball_dirichlet_integral(&g, &Field::zeros(&g), c, r).unwrap(), 0.0);
        let lin = ball_dirichlet_integral(&g, &Field::from_fn(&g, |x, _| x), c, r).unwrap();
        assert!((lin - std::f64::consts::PI * r * r).abs() < g.h());
        let half = ball_dirichlet_integral(&g, &Field::from_fn(&g, |x, _| (x - 0.5).max(0.0)), c, r)
            .unwrap();
        assert!((half - 0.5 * std::f64::consts::PI * r * r).abs() < g.h());
        assert!(matches!(
            ball_dirichlet_integral(&g, &Field::zeros(&g), [0.1, 0.5], 0.2),
            Err(Error::BallOutsideDomain { .. })
        ));
    }

    #[test]
    fn disk_rect_area_cases() {
        let pi = std::f64::consts::PI;
        assert_relative_eq!(disk_rect_area([0.0, 0.0], 1.0, [-2.0, 2.0], [-2.0, 2.0]), pi, epsilon = 1e-12);
        assert_relative_eq!(disk_rect_area([0.0, 0.0], 1.0, [0.0, 2.0], [-2.0, 2.0]), pi / 2.0, epsilon = 1e-12);
        assert_relative_eq!(disk_rect_area([0.0, 0.0], 1.0, [0.0, 2.0], [0.0, 2.0]), pi / 4.0, epsilon = 1e-12);
        assert_relative_eq!(disk_rect_area([0.0, 0.0], 2.0, [-0.5, 0.5], [-0.5, 0.5]), 1.0, epsilon = 1e-12);
        assert_eq!(disk_rect_area([0.0, 0.0], 1.0, [1.0, 2.0], [0.0, 1.0]), 0.0);
        // square corner poking into the disk: compare with fine midpoint sampling
        let exact = disk_rect_area([0.0, 0.0], 1.0, [0.5, 1.5], [0.5, 1.5]);
        let n = 2000;
        let mut count = 0usize;
        for a in 0..n {
            for b in 0..n {
                let x = 0.5 + (a as f64 + 0.5) / n as f64;
                let y = 0.5 + (b as f64 + 0.5) / n as f64;
                if x * x + y * y <= 1.0 {
                    count += 1;
                }
            }
        }
        assert!((exact - count as f64 / (n * n) as f64).abs() < 1e-5);
    }

    #[test]
    fn edge_weights_match_cells() {
        let g = square(5);
        let total: f64 = g.edges().iter().map(|e| e.weight).sum();
        // each of 16 cells contributes 4 half-edges
        assert_relative_eq!(total, 16.0 * 4.0 * 0.5, epsilon = 1e-12);
    }
}
