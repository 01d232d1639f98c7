//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! status if any criterion fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segsolve::freeboundary::analyze;
use segsolve::minimizer::Solution;
use segsolve::{
    acf_product, check_a2, compute_barriers, energy, energy_gradient, extract_interfaces,
    extremality_residuals, is_segregated, lipschitz_report, multi_start, perturbation_study,
    project_segregated, rescale_to_unit_diffusion, solve, BoundaryData, Field, Init, Problem,
    SolveOptions, State,
};
use segsolve::{build_grid, GridSpec};
use segsolve_cli::run::{run, Command, Overrides};
use segsolve_cli::{load_config, RunConfig};

const PRESETS: [&str; 5] = ["two_phase", "triple_junction", "concave_uniqueness", "variable_diffusion", "logistic"];

fn config(name: &str, n: Option<usize>) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.toml"));
    let ov = Overrides { grid: n, ..Overrides::default() };
    load_config(&path, &ov).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Problem with unit diffusion: variable diffusions are rescaled first.
fn unit_problem(name: &str, n: usize) -> Problem {
    let p = config(name, Some(n)).build_problem().unwrap();
    if p.has_unit_diffusion() {
        p
    } else {
        rescale_to_unit_diffusion(&p).unwrap().0
    }
}

struct Run {
    problem: Problem,
    sol: Solution,
    seconds: f64,
}

fn solved(name: &str, n: usize) -> Run {
    let cfg = config(name, Some(n));
    let problem = unit_problem(name, n);
    let t = Instant::now();
    let sol = solve(&problem, &cfg.solve).unwrap();
    Run { problem, sol, seconds: t.elapsed().as_secs_f64() }
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: usize, ok: bool, t: Instant, msg: String) {
        if !ok {
            self.failed += 1;
        }
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id:>2} ({:.1} s): {msg}", t.elapsed().as_secs_f64());
    }
}

/// Discrete harmonic extension by SOR, independent of the library solvers.
fn sor_harmonic(n: usize, bc: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let h = 1.0 / (n - 1) as f64;
    let mut u = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                u[j * n + i] = bc(i as f64 * h, j as f64 * h);
            }
        }
    }
    let w = 2.0 / (1.0 + (PI * h).sin());
    loop {
        let mut change: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let q = j * n + i;
                let gs = 0.25 * (u[q - 1] + u[q + 1] + u[q - n] + u[q + n]);
                let d = w * (gs - u[q]);
                u[q] += d;
                change = change.max(d.abs());
            }
        }
        if change < 1e-15 {
            return u;
        }
    }
}

fn main() {
    let mut rep = Report { failed: 0 };
    let total = Instant::now();

    // criterion 1
    let t = Instant::now();
    let c1 = solved("two_phase", 65);
    let g = c1.problem.grid().clone();
    let oracle = sor_harmonic(65, |x, _| x - 0.5);
    let err = (0..g.len())
        .map(|q| (c1.sol.state.value(0, q) - c1.sol.state.value(1, q) - oracle[q]).abs())
        .fold(0.0, f64::max);
    let nodal = extract_interfaces(&g, &c1.sol.state, 1e-12).unwrap();
    let off = nodal.interfaces.iter().flat_map(|l| &l.points).map(|p| (p[0] - 0.5).abs()).fold(0.0, f64::max);
    let ok = err <= 5e-3 && off <= g.h() && !nodal.interfaces.is_empty() && c1.seconds < 60.0;
    rep.line(1, ok, t, format!(
        "sup|u1-u2-H| = {err:.2e} (<= 5e-3), interface offset {off:.2e} (<= h = {:.2e}), solve {:.2} s (< 60 s)",
        g.h(), c1.seconds
    ));

    // criterion 2
    let t = Instant::now();
    let net = |r: &Run| {
        let e = extremality_residuals(&r.problem, &r.sol).unwrap();
        let raw = e.densities.iter().map(|d| d.sub_raw.max(d.hat_raw)).fold(0.0, f64::max);
        (e.max_sub(), e.max_hat(), raw)
    };
    let (s1, h1, _) = net(&c1);
    let c_cal = s1.max(h1) / g.h();
    let mut ok = true;
    let mut parts = vec![format!("C = {c_cal:.3e}")];
    let mut coarse_runs = Vec::new();
    let mut fine_runs = Vec::new();
    for name in PRESETS {
        let mut res = Vec::new();
        for n in [65, 129] {
            let r = solved(name, n);
            let (sub, hat, raw) = net(&r);
            let bound = c_cal * r.problem.grid().h();
            ok &= sub <= bound && hat <= bound;
            res.push((sub.max(hat), raw));
            if n == 65 { coarse_runs.push((name, r)) } else { fine_runs.push((name, r)) }
        }
        ok &= res[1].0 <= 0.6 * res[0].0;
        parts.push(format!("{name}: net {:.1e}/{:.1e} raw {:.1e}/{:.1e}", res[0].0, res[1].0, res[0].1, res[1].1));
    }
    rep.line(2, ok, t, parts.join("; "));

    // criterion 3
    let t = Instant::now();
    let radii: Vec<f64> = [4.0, 8.0, 16.0, 32.0].iter().map(|m| m * g.h()).collect();
    let mut worst: f64 = 0.0;
    let mut centers = 0;
    for l in &nodal.interfaces {
        for &c in &l.points {
            let fit: Vec<f64> = radii.iter().copied().filter(|r| *r <= g.distance_to_boundary(c)).collect();
            if fit.len() < 2 {
                continue;
            }
            let tr = acf_product(&g, &c1.sol.state, c, &fit, &[vec![0], vec![1]], 1e-6).unwrap();
            worst = worst.max(tr.max_drop / tr.max_value());
            centers += 1;
        }
    }
    let pair = State::new(vec![
        Field::from_fn(&g, |x, _| (x - 0.5).max(0.0)),
        Field::from_fn(&g, |x, _| (0.5 - x).max(0.0)),
    ])
    .unwrap();
    let tr = acf_product(&g, &pair, [0.5, 0.5], &radii, &[vec![0], vec![1]], 1e-6).unwrap();
    let target = (PI / 2.0).powi(2);
    let dev = tr.values.iter().map(|v| (v / target - 1.0).abs()).fold(0.0, f64::max);
    let ok = centers > 0 && worst <= 1e-6 && dev <= 0.1;
    rep.line(3, ok, t, format!(
        "max relative drop {worst:.2e} over {centers} interface points (<= 1e-6); analytic pair within {:.2}% of (pi/2)^2",
        100.0 * dev
    ));

    // criterion 4
    let t = Instant::now();
    let c4 = solved("triple_junction", 257);
    let g4 = c4.problem.grid().clone();
    let nr = analyze(&g4, &c4.sol.state, 1e-12, 4.0 * g4.h()).unwrap();
    let mp = nr
        .multiple_points
        .iter()
        .min_by(|a, b| a.location[0].hypot(a.location[1]).total_cmp(&b.location[0].hypot(b.location[1])));
    let mut ok = false;
    let mut msg = "no multiple point found".to_string();
    if let Some(mp) = mp {
        let dist = mp.location[0].hypot(mp.location[1]);
        if let Some(a) = &mp.analysis {
            let angles: Vec<f64> = a.sector_angles().iter().map(|t| t.to_degrees()).collect();
            let ratios: Vec<f64> = a.gradient_decay.windows(2).map(|w| w[0].1 / w[1].1).collect();
            ok = dist <= 2.0 * g4.h()
                && angles.len() == 3
                && angles.iter().all(|d| (d - 120.0).abs() <= 5.0)
                && (a.exponent - 1.5).abs() <= 0.1
                && !ratios.is_empty()
                && ratios.iter().all(|r| *r >= 1.3);
            msg = format!(
                "point at ({:.1e}, {:.1e}), distance {dist:.2e} (<= 2h = {:.2e}); angles {angles:.2?}; exponent {:.4}; gradient ratios {ratios:.3?}",
                mp.location[0], mp.location[1], 2.0 * g4.h(), a.exponent
            );
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 600.0;
    rep.line(4, ok, t, format!("{msg}; {secs:.1} s (< 600 s)"));

    // criterion 5
    let t = Instant::now();
    let cfg5 = config("concave_uniqueness", Some(65));
    let p5 = cfg5.build_problem().unwrap();
    let opts = SolveOptions { init: Init::Random { seed: 0 }, ..cfg5.solve };
    let ms = multi_start(&p5, &opts, 10).unwrap();
    let ok = ms.solutions.len() == 10 && ms.max_distance <= 1e-4 * ms.norm && ms.max_energy_spread <= 1e-8;
    rep.line(5, ok, t, format!(
        "10 starts: max L2 distance {:.2e} (<= 1e-4 * {:.3}), energy spread {:.2e} (<= 1e-8)",
        ms.max_distance, ms.norm, ms.max_energy_spread
    ));

    // criterion 6
    let t = Instant::now();
    let cfg6 = config("logistic", Some(65));
    let p6 = cfg6.build_problem().unwrap();
    let study = perturbation_study(&p6, &cfg6.solve, &[1e-1, 1e-2, 1e-3]).unwrap();
    let d: Vec<f64> = study.rows.iter().map(|r| r.distance).collect();
    let ok = d.windows(2).all(|w| w[1] < w[0]) && d[2] <= 1e-2 * study.base_norm;
    rep.line(6, ok, t, format!("distances {:?}, bound 1e-2 * {:.3}", d.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(), study.base_norm));

    // criterion 7
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let all = coarse_runs.iter().map(|(n, r)| (format!("{n}@65"), r)).chain(std::iter::once(("triple_junction@257".to_string(), &c4)));
    for (name, r) in all {
        let b = compute_barriers(&r.problem, &r.sol).unwrap();
        ok &= b.violations.is_empty() && b.max_upper_gap <= 1e-6 && b.max_lower_gap <= 1e-6;
        parts.push(format!("{name} {:.1e}/{:.1e}", b.max_upper_gap, b.max_lower_gap));
    }
    let b1 = compute_barriers(&c1.problem, &c1.sol).unwrap();
    let psi_err = g.inside_nodes().map(|q| (b1.lower[0].get(q).max(0.0) - c1.sol.state.value(0, q)).abs()).fold(0.0, f64::max);
    ok &= psi_err <= 5e-3;
    rep.line(7, ok, t, format!("gaps upper/lower: {}; two-phase |psi1+ - u1| = {psi_err:.2e} (<= 5e-3)", parts.join(", ")));

    // criterion 8
    let t = Instant::now();
    let c129 = &fine_runs.iter().find(|(n, _)| *n == "triple_junction").unwrap().1;
    let l129 = lipschitz_report(c129.problem.grid(), &c129.sol.state, 0.1).unwrap().l_max;
    let l257 = lipschitz_report(&g4, &c4.sol.state, 0.1).unwrap().l_max;
    let rel = (l257 / l129 - 1.0).abs();
    rep.line(8, rel <= 0.1, t, format!("L(129) = {l129:.4}, L(257) = {l257:.4}, relative change {rel:.2e} (<= 0.1)"));

    // criterion 9
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let gp = build_grid(&GridSpec::unit_square(34)).unwrap();
    let interior: Vec<usize> = gp.interior_nodes().collect();
    let mut tuples = 0;
    let mut ok = true;
    while tuples < 1000 {
        let k = rng.random_range(2..=5);
        let w: Vec<Field> = (0..k)
            .map(|_| {
                let v = (0..gp.len())
                    .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() * 10.0 })
                    .collect();
                Field::from_values(&gp, v).unwrap()
            })
            .collect();
        let bd = BoundaryData::zero(&gp, k);
        let once = project_segregated(&gp, &w, &bd).unwrap();
        let twice = project_segregated(&gp, once.fields(), &bd).unwrap();
        ok &= once == twice && is_segregated(&once, 0.0).segregated;
        tuples += interior.len();
    }
    let mut worst_fd: f64 = 0.0;
    for name in ["two_phase", "concave_uniqueness", "logistic"] {
        let p = unit_problem(name, 33);
        let gg = p.grid();
        let s = segsolve::minimizer::initial_state(&p, Init::Random { seed: 17 }).unwrap();
        let grad = energy_gradient(&s, &p).unwrap();
        for _ in 0..5 {
            let dir: Vec<Vec<f64>> = (0..p.k())
                .map(|_| (0..gg.len()).map(|q| if gg.is_interior(q) { rng.random::<f64>() - 0.5 } else { 0.0 }).collect())
                .collect();
            let at = |eps: f64| {
                let fs = s.fields().iter().zip(&dir).map(|(f, d)| {
                    Field::from_values(gg, f.values().iter().zip(d).map(|(a, b)| a + eps * b).collect()).unwrap()
                });
                energy(&State::new(fs.collect()).unwrap(), &p).unwrap()
            };
            let eps = 1e-5;
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            let exact: f64 = grad
                .iter()
                .zip(&dir)
                .flat_map(|(f, d)| f.values().iter().zip(d))
                .filter(|(a, _)| !a.is_nan())
                .map(|(a, b)| a * b)
                .sum();
            worst_fd = worst_fd.max((fd - exact).abs() / exact.abs());
        }
    }
    ok &= worst_fd <= 1e-6;
    rep.line(9, ok, t, format!(
        "projection idempotent and segregated on {tuples} random tuples; gradient vs central differences worst relative error {worst_fd:.2e} (<= 1e-6)"
    ));

    // criterion 10
    let t = Instant::now();
    let cfg10 = config("a2_failure", Some(65));
    let p10 = cfg10.build_problem().unwrap();
    let a2 = check_a2(&p10, 0).unwrap();
    let refused = matches!(solve(&p10, &cfg10.solve), Err(segsolve::Error::CoercivityViolated { .. }));
    let ov = Overrides { check_only: true, ..Overrides::default() };
    let out = run(Command::Solve, &cfg10, &ov).unwrap();
    let named = out.failures.iter().any(|f| f.check == "coercivity");
    let ok = !a2.holds && a2.min_eigenvalue < 0.0 && refused && out.exit_code() == 1 && named;
    rep.line(10, ok, t, format!(
        "shipped preset: smallest eigenvalue {:.3} < 0, solve refused: {refused}, run exit {} naming coercivity: {named}",
        a2.min_eigenvalue, out.exit_code()
    ));

    println!(
        "acceptance: {} of 10 criteria passed in {:.1} s",
        10 - rep.failed,
        total.elapsed().as_secs_f64()
    );
    if rep.failed > 0 {
        std::process::exit(1);
    }
}
