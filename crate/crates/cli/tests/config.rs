use segsolve::ReactionTerm;
use segsolve_cli::config::{config_digest, emit_canonical, parse_config, DomainConfig};
use segsolve_cli::CliError;

const MINIMAL: &str = r#"
[domain]
shape = "square"
n = 17

[problem]
k = 2
reactions = [{ kind = "zero" }, { kind = "zero" }]

[problem.boundary]
preset = "two_phase"
"#;

fn presets() -> Vec<(String, String)> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/presets");
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| (p.display().to_string(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn minimal_two_phase_config() {
    let cfg = parse_config(MINIMAL).unwrap();
    assert_eq!(cfg.problem.k, 2);
    assert!(cfg.problem.reactions.iter().all(|r| *r == ReactionTerm::Zero));
    assert_eq!(cfg.domain, DomainConfig::square(17));
    let p = cfg.build_problem().unwrap();
    assert_eq!(p.k(), 2);
    assert!(p.has_unit_diffusion());
}

#[test]
fn single_density_is_a_semantic_error() {
    let text = MINIMAL.replace("k = 2", "k = 1").replace(", { kind = \"zero\" }]", "]");
    match parse_config(&text) {
        Err(e @ CliError::Semantic { .. }) => {
            assert!(e.to_string().contains("k ≥ 2"), "{e}");
            assert!(e.to_string().contains("problem.k"));
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn syntax_errors_carry_line_numbers() {
    let text = MINIMAL.replace("n = 17", "n = 17\nsteps = 3");
    match parse_config(&text) {
        Err(CliError::Syntax { line, message, .. }) => {
            assert_eq!(line, 5, "{message}");
            assert!(message.contains("steps"));
        }
        other => panic!("{other:?}"),
    }
    match parse_config("[domain\nshape = 1") {
        Err(CliError::Syntax { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
    let typo = MINIMAL.to_string() + "\n[solve]\nstpe = 0.1\n";
    assert!(matches!(parse_config(&typo), Err(CliError::Syntax { line: 14, .. })));
}

#[test]
fn semantic_errors_name_the_field() {
    let cases = [
        (MINIMAL.replace("[{ kind = \"zero\" }, { kind = \"zero\" }]", "[{ kind = \"zero\" }]"), "problem.reactions"),
        (MINIMAL.replace("two_phase", "nope"), "problem.boundary.preset"),
        (MINIMAL.replace("two_phase", "triple_junction"), "problem.boundary.preset"),
        (MINIMAL.replace("n = 17", "n = 3"), "domain.n"),
        (MINIMAL.to_string() + "\n[solve]\nstep = -1.0\n", "solve"),
    ];
    for (text, field) in cases {
        let err = parse_config(&text).and_then(|c| c.build_problem().map(|_| c)).unwrap_err();
        match err {
            CliError::Semantic { field: f, .. } => assert_eq!(f, field),
            other => panic!("{field}: {other:?}"),
        }
    }
}

#[test]
fn canonical_form_round_trips() {
    for (name, text) in presets() {
        let cfg = parse_config(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let canon = emit_canonical(&cfg);
        let again = parse_config(&canon).unwrap();
        assert_eq!(again, cfg, "{name}");
        assert_eq!(emit_canonical(&again), canon, "{name}");
        assert_eq!(config_digest(&again), config_digest(&cfg));
        assert_eq!(config_digest(&cfg).len(), 64);
    }
}

#[test]
fn every_shipped_preset_builds() {
    let names: Vec<String> = presets().into_iter().map(|(n, _)| n).collect();
    for want in ["two_phase", "triple_junction", "concave_uniqueness", "a2_failure", "variable_diffusion", "logistic"] {
        assert!(names.iter().any(|n| n.ends_with(&format!("/{want}.toml"))), "{want}");
    }
    for (name, text) in presets() {
        let mut cfg = parse_config(&text).unwrap();
        cfg.domain = cfg.domain.with_n(17);
        cfg.build_problem().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn arcs_become_piecewise_constant_traces() {
    let text = r#"
[domain]
shape = "disk"
n = 33
center = [0.0, 0.0]
radius = 1.0

[problem]
k = 2
reactions = [{ kind = "zero" }, { kind = "zero" }]

[[problem.boundary.arcs]]
density = 1
from_deg = -90.0
to_deg = 80.0
value = 2.0

[[problem.boundary.arcs]]
density = 2
from_deg = 100.0
to_deg = 260.0
value = 1.0
"#;
    let p = parse_config(text).unwrap().build_problem().unwrap();
    let g = p.grid();
    for q in g.boundary_nodes() {
        let [x, y] = g.coords(q);
        let deg = y.atan2(x).to_degrees();
        let (a, b) = (p.boundary().value(0, q), p.boundary().value(1, q));
        if (-90.0..80.0).contains(&deg) {
            assert_eq!((a, b), (2.0, 0.0));
        } else if deg >= 100.0 || deg < -100.0 {
            assert_eq!((a, b), (0.0, 1.0));
        }
    }
    let overlap = text.replace("from_deg = 100.0", "from_deg = 60.0");
    let err = parse_config(&overlap).unwrap().build_problem().unwrap_err();
    assert!(matches!(err, CliError::Semantic { ref field, .. } if field == "problem.boundary.arcs"), "{err}");
    let bad_density = text.replace("density = 2", "density = 3");
    assert!(matches!(parse_config(&bad_density), Err(CliError::Semantic { .. })));
}
