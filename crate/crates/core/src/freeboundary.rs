//! Free-boundary geometry of 2D solutions: interface polylines, multiple
//! points, junction asymptotics, adjacency and support components.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::segregation::State;

/// Zero-level curve of `u_i - u_j` between two locally active densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interface {
    /// Density pair, smaller index first.
    pub labels: (usize, usize),
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Interface {
    pub fn endpoints(&self) -> Option<([f64; 2], [f64; 2])> {
        if self.closed || self.points.is_empty() {
            None
        } else {
            Some((self.points[0], *self.points.last().unwrap()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionAnalysis {
    /// `(density, angle)` arcs on the outer circle, in counter-clockwise order
    /// starting from angle 0; angles sum to `2 pi`.
    pub sectors: Vec<(usize, f64)>,
    /// Fitted `p` in `mean_circle U ~ r^p`.
    pub exponent: f64,
    /// Phase in `[0, 2 pi / m)` best matching `|cos((m/2)(theta + theta0))|`.
    pub theta0: f64,
    /// `(r, max |grad_h U|)` over annuli `0.75 r <= |x - x0| <= r`.
    pub gradient_decay: Vec<(f64, f64)>,
}

impl JunctionAnalysis {
    pub fn sector_angles(&self) -> Vec<f64> {
        self.sectors.iter().map(|s| s.1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplePoint {
    pub location: [f64; 2],
    pub multiplicity: usize,
    pub analysis: Option<JunctionAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalReport {
    pub interfaces: Vec<Interface>,
    pub multiple_points: Vec<MultiplePoint>,
    /// 4-connected groups of interior nodes where every density is `<= tol`.
    pub zero_regions: Vec<Vec<usize>>,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Key {
    Node(usize),
    Edge(usize, usize),
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Label set active (`> tol`) on the 4x4 node block around cell origin `p`,
/// or `None` when the block leaves the lattice or the cell has a
/// non-interior corner.
fn local_labels(grid: &Grid, s: &State, p: usize, tol: f64) -> Option<BTreeSet<usize>> {
    let (i, j) = grid.ij(p);
    let nx = grid.nx();
    if i == 0 || j == 0 || i + 2 >= nx || j + 2 >= grid.ny() {
        return None;
    }
    for q in [p, p + 1, p + nx, p + nx + 1] {
        if !grid.is_interior(q) {
            return None;
        }
    }
    let mut set = BTreeSet::new();
    for b in j - 1..=j + 2 {
        for a in i - 1..=i + 2 {
            let q = grid.idx(a, b);
            for l in 0..s.k() {
                if s.value(l, q) > tol {
                    set.insert(l);
                }
            }
        }
    }
    Some(set)
}

/// Crossing segments of `v = u_a - u_b` in one cell, zero values treated
/// symmetrically (a zero corner is a crossing point unless it only touches).
fn cell_segments(grid: &Grid, p: usize, v: &dyn Fn(usize) -> f64) -> Vec<(Key, [f64; 2], Key, [f64; 2])> {
    let nx = grid.nx();
    let corners = [p, p + 1, p + nx + 1, p + nx];
    let vals: Vec<f64> = corners.iter().map(|&q| v(q)).collect();
    let sg: Vec<i8> = vals.iter().map(|&x| sign(x)).collect();
    if sg.iter().filter(|&&s| s == 0).count() >= 3 {
        return Vec::new();
    }
    let mut pts: Vec<(Key, [f64; 2])> = Vec::new();
    for k in 0..4 {
        let (a, b) = (k, (k + 1) % 4);
        if sg[a] == 0 {
            let prev = sg[(k + 3) % 4];
            let next = sg[b];
            let touch = prev == next && prev != 0;
            if !touch {
                pts.push((Key::Node(corners[a]), grid.coords(corners[a])));
            }
        }
        if sg[a] * sg[b] == -1 {
            let t = vals[a] / (vals[a] - vals[b]);
            let (xa, xb) = (grid.coords(corners[a]), grid.coords(corners[b]));
            let key = Key::Edge(corners[a].min(corners[b]), corners[a].max(corners[b]));
            pts.push((key, [xa[0] + t * (xb[0] - xa[0]), xa[1] + t * (xb[1] - xa[1])]));
        }
    }
    match pts.len() {
        2 => vec![(pts[0].0, pts[0].1, pts[1].0, pts[1].1)],
        4 => {
            let center = 0.25 * vals.iter().sum::<f64>();
            let pairs = if sign(center) != 0 && sign(center) != sg[0] {
                [(3, 0), (1, 2)]
            } else {
                [(0, 1), (2, 3)]
            };
            pairs
                .iter()
                .map(|&(a, b)| (pts[a].0, pts[a].1, pts[b].0, pts[b].1))
                .collect()
        }
        _ => Vec::new(),
    }
}

fn chain(segments: BTreeSet<(Key, Key)>, pos: &HashMap<Key, [f64; 2]>) -> Vec<(Vec<[f64; 2]>, bool)> {
    let mut adj: BTreeMap<Key, Vec<Key>> = BTreeMap::new();
    for &(a, b) in &segments {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut used: BTreeSet<(Key, Key)> = BTreeSet::new();
    let norm = |a: Key, b: Key| if a < b { (a, b) } else { (b, a) };
    let mut out = Vec::new();
    let walk = |start: Key, used: &mut BTreeSet<(Key, Key)>| -> (Vec<[f64; 2]>, bool) {
        let mut pts = vec![pos[&start]];
        let mut cur = start;
        loop {
            let next = adj[&cur].iter().copied().find(|&n| !used.contains(&norm(cur, n)));
            match next {
                Some(n) => {
                    used.insert(norm(cur, n));
                    pts.push(pos[&n]);
                    cur = n;
                    if cur == start {
                        return (pts, true);
                    }
                }
                None => return (pts, false),
            }
        }
    };
    let ends: Vec<Key> = adj.iter().filter(|(_, v)| v.len() != 2).map(|(k, _)| *k).collect();
    for k in ends {
        while adj[&k].iter().any(|&n| !used.contains(&norm(k, n))) {
            out.push(walk(k, &mut used));
        }
    }
    let all: Vec<Key> = adj.keys().copied().collect();
    for k in all {
        while adj[&k].iter().any(|&n| !used.contains(&norm(k, n))) {
            out.push(walk(k, &mut used));
        }
    }
    out
}

/// Interface polylines and zero regions.
///
/// A cell contributes to the interface of `(i, j)` when exactly `i` and `j`
/// are active (`> tol`) on its 4x4 node neighbourhood; the crossing of
/// `u_i - u_j` is located by linear interpolation along cell edges. Cells
/// with a non-interior corner are skipped, so polylines stop one cell short
/// of the boundary.
pub fn extract_interfaces(grid: &Grid, s: &State, tol: f64) -> Result<NodalReport> {
    if s.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    let mut by_pair: BTreeMap<(usize, usize), BTreeSet<(Key, Key)>> = BTreeMap::new();
    let mut pos: HashMap<Key, [f64; 2]> = HashMap::new();
    for c in 0..grid.n_cells() {
        let p = grid.cell_origin_node(c);
        let Some(labels) = local_labels(grid, s, p, tol) else {
            continue;
        };
        if labels.len() != 2 {
            continue;
        }
        let mut it = labels.iter();
        let (a, b) = (*it.next().unwrap(), *it.next().unwrap());
        let v = |q: usize| s.value(a, q) - s.value(b, q);
        for (k1, x1, k2, x2) in cell_segments(grid, p, &v) {
            if k1 == k2 {
                continue;
            }
            pos.insert(k1, x1);
            pos.insert(k2, x2);
            let seg = if k1 < k2 { (k1, k2) } else { (k2, k1) };
            by_pair.entry((a, b)).or_default().insert(seg);
        }
    }
    let mut interfaces = Vec::new();
    for (labels, segs) in by_pair {
        for (points, closed) in chain(segs, &pos) {
            interfaces.push(Interface { labels, points, closed });
        }
    }
    Ok(NodalReport {
        interfaces,
        multiple_points: Vec::new(),
        zero_regions: zero_regions(grid, s, tol),
        tol,
    })
}

fn components(grid: &Grid, mask: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    for start in 0..grid.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(q) = stack.pop() {
            comp.push(q);
            for r in grid.lattice_neighbors(q) {
                if mask[r] && !seen[r] {
                    seen[r] = true;
                    stack.push(r);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn zero_regions(grid: &Grid, s: &State, tol: f64) -> Vec<Vec<usize>> {
    let mask: Vec<bool> = (0..grid.len())
        .map(|q| grid.is_interior(q) && (0..s.k()).all(|i| s.value(i, q) <= tol))
        .collect();
    components(grid, &mask)
}

/// Densities active (`> tol`) at some node within `radius` of `x`.
pub fn labels_near(grid: &Grid, s: &State, x: [f64; 2], radius: f64, tol: f64) -> BTreeSet<usize> {
    let h = grid.h();
    let o = grid.origin();
    let lo = |c: f64, o: f64| (((c - radius - o) / h).floor().max(0.0)) as usize;
    let (i0, j0) = (lo(x[0], o[0]), lo(x[1], o[1]));
    let i1 = (((x[0] + radius - o[0]) / h).ceil() as usize).min(grid.nx() - 1);
    let j1 = (((x[1] + radius - o[1]) / h).ceil() as usize).min(grid.ny() - 1);
    let mut set = BTreeSet::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            let q = grid.idx(i, j);
            let c = grid.coords(q);
            if (c[0] - x[0]).hypot(c[1] - x[1]) <= radius {
                for l in 0..s.k() {
                    if s.value(l, q) > tol {
                        set.insert(l);
                    }
                }
            }
        }
    }
    set
}

/// Cluster interior polyline endpoints (single linkage within `radius`) and
/// keep clusters with at least three densities active within `radius`.
pub fn locate_multiple_points(
    grid: &Grid,
    s: &State,
    report: &NodalReport,
    radius: f64,
) -> Result<Vec<MultiplePoint>> {
    if s.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    let margin = 2.0 * grid.h();
    let ends: Vec<[f64; 2]> = report
        .interfaces
        .iter()
        .filter_map(|l| l.endpoints())
        .flat_map(|(a, b)| [a, b])
        .filter(|x| grid.distance_to_boundary(*x) > margin + grid.h())
        .collect();
    let n = ends.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], a: usize) -> usize {
        let mut r = a;
        while parent[r] != r {
            r = parent[r];
        }
        parent[a] = r;
        r
    }
    for a in 0..n {
        for b in a + 1..n {
            if (ends[a][0] - ends[b][0]).hypot(ends[a][1] - ends[b][1]) <= radius {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..n {
        let r = find(&mut parent, a);
        clusters.entry(r).or_default().push(a);
    }
    let mut out = Vec::new();
    for members in clusters.values() {
        let m = members.len() as f64;
        let c = [
            members.iter().map(|&a| ends[a][0]).sum::<f64>() / m,
            members.iter().map(|&a| ends[a][1]).sum::<f64>() / m,
        ];
        let mult = labels_near(grid, s, c, radius, report.tol).len();
        if mult >= 3 {
            out.push(MultiplePoint {
                location: c,
                multiplicity: mult,
                analysis: None,
            });
        }
    }
    Ok(out)
}

fn circle_samples(grid: &Grid, x0: [f64; 2], r: f64, n: usize) -> Result<Vec<[f64; 2]>> {
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            Ok([x0[0] + r * t.cos(), x0[1] + r * t.sin()])
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|pts| {
            if grid.distance_to_boundary(x0) < r {
                Err(Error::BallOutsideDomain {
                    x: x0[0],
                    y: x0[1],
                    radius: r,
                })
            } else {
                Ok(pts)
            }
        })
}

fn sample_all(grid: &Grid, s: &State, x: [f64; 2]) -> Result<Vec<f64>> {
    s.fields()
        .iter()
        .map(|f| {
            grid.sample(f, x).ok_or(Error::BallOutsideDomain {
                x: x[0],
                y: x[1],
                radius: 0.0,
            })
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Sector angles, radial exponent, phase and gradient decay around `x0`
/// for an `m`-fold junction, measured on the given radii.
pub fn junction_analysis(grid: &Grid, s: &State, x0: [f64; 2], m: usize, radii: &[f64]) -> Result<JunctionAnalysis> {
    if s.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    if m < 3 {
        return Err(Error::Invalid(format!("junction analysis needs multiplicity >= 3, got {m}")));
    }
    if radii.len() < 2 || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Invalid("need at least two positive radii".into()));
    }
    let n_samples = 2048;
    let rmax = radii.iter().copied().fold(0.0, f64::max);

    // (a) sectors on the outer circle
    let pts = circle_samples(grid, x0, rmax, n_samples)?;
    let vals: Vec<Vec<f64>> = pts.iter().map(|&x| sample_all(grid, s, x)).collect::<Result<_>>()?;
    // samples where every density vanishes carry no label
    let labelled: Vec<(usize, usize)> = vals
        .iter()
        .enumerate()
        .filter_map(|(k, v)| {
            let a = argmax(v);
            (v[a] > 0.0).then_some((k, a))
        })
        .collect();
    if labelled.is_empty() {
        return Err(Error::Invalid(format!("all densities vanish on the circle of radius {rmax}")));
    }
    let dt = 2.0 * PI / n_samples as f64;
    let mut cuts: Vec<(f64, usize)> = Vec::new();
    for c in 0..labelled.len() {
        let (k0, a) = labelled[c];
        let (k1, b) = labelled[(c + 1) % labelled.len()];
        if a != b {
            let d0 = vals[k0][a] - vals[k0][b];
            let d1 = vals[k1][a] - vals[k1][b];
            let span = (k1 + n_samples - k0) % n_samples;
            let frac = if d0 - d1 != 0.0 { (d0 / (d0 - d1)).clamp(0.0, 1.0) } else { 0.5 };
            cuts.push(((k0 as f64 + frac * span as f64) * dt, b));
        }
    }
    cuts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let first_label = labelled[0].1;
    let sectors = if cuts.is_empty() {
        vec![(first_label, 2.0 * PI)]
    } else {
        let mut out = Vec::with_capacity(cuts.len());
        for c in 0..cuts.len() {
            let (start, label) = cuts[c];
            let end = if c + 1 < cuts.len() { cuts[c + 1].0 } else { cuts[0].0 + 2.0 * PI };
            out.push((label, end - start));
        }
        out
    };

    // (b) exponent from circle means of U
    let mut logs = Vec::new();
    let mut profiles: Vec<Vec<f64>> = Vec::new();
    for &r in radii {
        let pts = circle_samples(grid, x0, r, n_samples)?;
        let prof: Vec<f64> = pts
            .iter()
            .map(|&x| sample_all(grid, s, x).map(|v| v.iter().sum::<f64>()))
            .collect::<Result<_>>()?;
        let mean = prof.iter().sum::<f64>() / n_samples as f64;
        if !(mean > 0.0) {
            return Err(Error::Invalid(format!("total density vanishes on the circle of radius {r}")));
        }
        logs.push((r.ln(), mean.ln()));
        let norm = prof.iter().map(|v| v * v).sum::<f64>().sqrt();
        profiles.push(prof.iter().map(|v| v / norm).collect());
    }
    let nl = logs.len() as f64;
    let (mx, my) = (
        logs.iter().map(|p| p.0).sum::<f64>() / nl,
        logs.iter().map(|p| p.1).sum::<f64>() / nl,
    );
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let exponent = sxy / sxx;

    // (c) phase: maximize the correlation with |cos((m/2)(theta + theta0))|
    let half = m as f64 / 2.0;
    let period = 2.0 * PI / m as f64;
    let score = |t0: f64| -> f64 {
        profiles
            .iter()
            .map(|prof| {
                prof.iter()
                    .enumerate()
                    .map(|(k, v)| v * (half * (k as f64 * dt + t0)).cos().abs())
                    .sum::<f64>()
            })
            .sum()
    };
    let coarse = 360;
    let mut best = (0.0, f64::NEG_INFINITY);
    for c in 0..coarse {
        let t = period * c as f64 / coarse as f64;
        let v = score(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    let (mut lo, mut hi) = (best.0 - period / coarse as f64, best.0 + period / coarse as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if score(a) > score(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let theta0 = (0.5 * (lo + hi)).rem_euclid(period);

    // (d) gradient decay on annuli
    let total = s.total();
    let tv = total.values();
    let h = grid.h();
    let mut gradient_decay = Vec::new();
    for &r in radii {
        let mut gmax: f64 = 0.0;
        for q in grid.interior_nodes() {
            let c = grid.coords(q);
            let d = (c[0] - x0[0]).hypot(c[1] - x0[1]);
            if d >= 0.75 * r && d <= r {
                let [e, w, n, so] = grid.neighbors4(q);
                let gx = (tv[e] - tv[w]) / (2.0 * h);
                let gy = (tv[n] - tv[so]) / (2.0 * h);
                gmax = gmax.max(gx.hypot(gy));
            }
        }
        gradient_decay.push((r, gmax));
    }
    Ok(JunctionAnalysis {
        sectors,
        exponent,
        theta0,
        gradient_decay,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    /// Densities with nonempty support.
    pub vertices: Vec<usize>,
    /// `(i, j)` with indices of the interface polylines between them.
    pub edges: Vec<((usize, usize), Vec<usize>)>,
    /// Number of support components per density (0 for empty supports).
    pub support_components: Vec<usize>,
}

impl AdjacencyGraph {
    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|((a, b), _)| *a == i || *b == i).count()
    }
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.edges.iter().any(|(e, _)| *e == key)
    }
}

pub fn adjacency_graph(grid: &Grid, s: &State, report: &NodalReport) -> Result<AdjacencyGraph> {
    if s.grid_id() != grid.id() {
        return Err(Error::GridMismatch);
    }
    let support_components: Vec<usize> = (0..s.k())
        .map(|i| support_connectedness(grid, s, i, report.tol))
        .collect::<Result<_>>()?;
    let vertices = (0..s.k()).filter(|&i| support_components[i] > 0).collect();
    let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (idx, l) in report.interfaces.iter().enumerate() {
        edges.entry(l.labels).or_default().push(idx);
    }
    Ok(AdjacencyGraph {
        vertices,
        edges: edges.into_iter().collect(),
        support_components,
    })
}

/// 4-connected components of `{u_i > tol}` over masked-in nodes.
pub fn support_connectedness(grid: &Grid, s: &State, i: usize, tol: f64) -> Result<usize> {
    if i >= s.k() {
        return Err(Error::IndexOutOfRange { index: i, len: s.k() });
    }
    let mask: Vec<bool> = (0..grid.len())
        .map(|q| grid.is_inside(q) && s.value(i, q) > tol)
        .collect();
    Ok(components(grid, &mask).len())
}

/// Interfaces, multiple points and their junction analysis in one pass.
/// Junction radii are the dyadic radii `R/2, R/4, ...` down to `8 h`, with
/// `R` the distance of the point to the boundary.
pub fn analyze(grid: &Grid, s: &State, tol: f64, radius: f64) -> Result<NodalReport> {
    let mut report = extract_interfaces(grid, s, tol)?;
    let mut points = locate_multiple_points(grid, s, &report, radius)?;
    for mp in points.iter_mut() {
        let reach = grid.distance_to_boundary(mp.location) - 2.0 * grid.h();
        let mut radii = Vec::new();
        let mut r = 0.5 * reach;
        while r >= 8.0 * grid.h() {
            radii.push(r);
            r *= 0.5;
        }
        if radii.len() >= 2 {
            mp.analysis = junction_analysis(grid, s, mp.location, mp.multiplicity, &radii).ok();
        }
    }
    report.multiple_points = points;
    Ok(report)
}
