use froglab_cli::config::GroupConfig;
use froglab_cli::{parse_config, CliError, Experiment};

const SHAPE_Z3: &str = r#"
master_seed = 42

[group]
rank = 3
torsion_orders = []
generators = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]

[[experiments]]
kind = "shape"
horizons = [40, 80, 120]
seeds = 50
fit_seeds = 25
max_violation_fraction = 0.01
"#;

fn with_group(group: &str) -> String {
    format!("master_seed = 1\n\n[group]\n{group}\n")
}

fn field_error(text: &str) -> (String, String) {
    match parse_config(text) {
        Err(CliError::Field { field, message }) => (field, message),
        other => panic!("expected a field error, got {other:?}"),
    }
}

#[test]
fn minimal_shape_config_round_trips() {
    let a = parse_config(SHAPE_Z3).unwrap();
    let b = parse_config(&a.to_toml()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hash(), b.hash());
    let Experiment::Shape(s) = &a.experiments[0] else { panic!("wrong kind") };
    assert_eq!(s.horizons, vec![40, 80, 120]);
    assert_eq!(s.max_violation_fraction, Some(0.01));
}

#[test]
fn every_checked_in_config_round_trips() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "acceptance.toml" {
            continue;
        }
        let c = parse_config(&std::fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
        seen += 1;
    }
    assert!(seen >= 6);
}

#[test]
fn asymmetric_generators_are_rejected() {
    let (field, message) = field_error(&with_group("rank = 3\ngenerators = [[1,0,0],[0,1,0],[0,-1,0],[0,0,1],[0,0,-1]]"));
    assert_eq!(field, "group.generators");
    assert!(message.contains("not symmetric"), "{message}");
}

#[test]
fn identity_in_generators_is_rejected() {
    let (field, message) = field_error(&with_group("rank = 1\ngenerators = [[1],[-1],[0]]"));
    assert_eq!(field, "group.generators");
    assert!(message.contains("identity"), "{message}");
}

#[test]
fn non_generating_set_is_rejected() {
    let (field, message) = field_error(&with_group("rank = 2\ngenerators = [[2,0],[-2,0],[0,1],[0,-1]]"));
    assert_eq!(field, "group.generators");
    assert!(message.contains("does not generate"), "{message}");
}

#[test]
fn torsion_divisibility_is_enforced() {
    let (field, message) = field_error(&with_group("rank = 1\ntorsion_orders = [4, 2]"));
    assert_eq!(field, "group.torsion_orders");
    assert!(message.contains("divisibility"), "{message}");
    assert!(parse_config(&with_group("rank = 1\ntorsion_orders = [2, 4]")).is_ok());
}

#[test]
fn generator_arity_is_checked() {
    let (field, _) = field_error(&with_group("rank = 2\ngenerators = [[1,0],[-1,0],[0,1],[0,-1,0]]"));
    assert_eq!(field, "group.generators[3]");
}

#[test]
fn unknown_keys_are_reported_with_their_line() {
    let text = "master_seed = 1\n[group]\nrank = 3\n[[experiments]]\nkind = \"symmetry\"\nhorizon = 10\nseeds = 2\nsedes = 3\n";
    let err = parse_config(text).unwrap_err().to_string();
    assert!(err.contains("sedes"), "{err}");
    assert!(err.contains("line 4") || err.contains("line 8"), "{err}");

    let err = parse_config("master_seed = 1\nparalelism = 2\n[group]\nrank = 3\n").unwrap_err().to_string();
    assert!(err.contains("paralelism") && err.contains("line 2"), "{err}");
}

#[test]
fn unknown_kind_is_rejected() {
    let err = parse_config("master_seed = 1\n[group]\nrank = 3\n[[experiments]]\nkind = \"teleport\"\n").unwrap_err();
    assert!(matches!(err, CliError::Parse(_)), "{err}");
}

#[test]
fn master_seed_is_mandatory() {
    let err = parse_config("[group]\nrank = 3\n").unwrap_err().to_string();
    assert!(err.contains("master_seed"), "{err}");
}

#[test]
fn hash_is_stable_under_reordering() {
    let reordered = r#"
[group]
generators = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
torsion_orders = []
rank = 3

[[experiments]]
max_violation_fraction = 0.01
fit_seeds = 25
seeds = 50
horizons = [40, 80, 120]
kind = "shape"
"#;
    let text = format!("master_seed = 42\nparallelism = 8\n{reordered}");
    let a = parse_config(SHAPE_Z3).unwrap();
    let b = parse_config(&text).unwrap();
    assert_eq!(a.hash(), b.hash());
    let mut c = a.clone();
    c.group = GroupConfig { generators: None, ..c.group.clone() };
    assert_ne!(a.hash(), c.hash(), "explicit and default generator lists are different configs");
}

#[test]
fn parameter_checks_name_the_field() {
    let base = "master_seed = 1\n[group]\nrank = 3\n[[experiments]]\n";
    let cases = [
        ("kind = \"frog_tails\"\ntarget = [0, 0, 0]\nhorizon = 10\nreplicas = 5", "experiments[0].target"),
        ("kind = \"frog_tails\"\ntarget = [20, 0, 0]\nhorizon = 10\nreplicas = 5", "experiments[0].target"),
        ("kind = \"linear_growth\"\ndirection = [1, 0, 0]\nks = [1, 2]\nreplicas = 5\nhorizon = 10\nq99_compare = [1, 3]", "experiments[0].q99_compare"),
        ("kind = \"shape\"\nhorizons = [20, 10]\nseeds = 2", "experiments[0].horizons"),
        ("kind = \"shape\"\nhorizons = [10, 20]\nseeds = 2\nmax_violation_fraction = 0.1", "experiments[0].max_violation_fraction"),
        ("kind = \"torsion_compare\"\nhorizon = 10\nseeds = 2", "experiments[0].kind"),
        ("kind = \"symmetry\"\nhorizon = 100000\nseeds = 2", "experiments[0].horizon"),
        ("kind = \"walk_diagnostics\"\nrange_tolerance = 0.1\nrange_n = 10", "experiments[0].range_tolerance"),
    ];
    for (body, expected) in cases {
        let (field, _) = field_error(&format!("{base}{body}\n"));
        assert_eq!(field, expected, "{body}");
    }
}
