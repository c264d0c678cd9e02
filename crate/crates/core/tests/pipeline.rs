use std::path::{Path, PathBuf};

use cct_sets::model::load_scenario_file;
use cct_sets::pipeline::{export_geometry, write_outputs};
use cct_sets::{objective, run_analysis, run_pipeline, Bounds, Error, PipelineOptions};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn two_machine_report() {
    let r = run_pipeline(&fixture("two_machine.toml"), &PipelineOptions::default()).unwrap();
    assert!(r.certificate.pre.passed && r.certificate.post.passed);
    let eq = &r.equilibria.post.angles;
    assert!(((eq[0] - eq[1]) - 0.5f64.asin()).abs() < 1e-9);
    assert!(r
        .sets
        .iter()
        .filter(|s| s.kind == cct_sets::SetKind::Admissible)
        .all(|s| !s.empty));
    assert!(r.cct.t_unsafe.is_finite());
    assert_eq!(r.bounds.source, "scenario");
}

#[test]
fn report_is_deterministic_apart_from_timing() {
    let a = run_pipeline(&fixture("two_machine.toml"), &PipelineOptions::default()).unwrap();
    let b = run_pipeline(&fixture("two_machine.toml"), &PipelineOptions::default()).unwrap();
    assert_eq!(a.deterministic_toml(), b.deterministic_toml());
}

#[test]
fn fixture_needs_force_past_the_certificate() {
    match run_pipeline(&fixture("ieee14_en.toml"), &PipelineOptions::default()) {
        Err(Error::Stage {
            stage: "certificate",
            ..
        }) => {}
        other => panic!("expected a certificate abort, got {other:?}"),
    }
    let opts = PipelineOptions {
        force: true,
        ..Default::default()
    };
    let r = run_pipeline(&fixture("ieee14_en.toml"), &opts).unwrap();
    assert!(!r.warnings.is_empty());
    assert_eq!(r.cct.t_safe, 0.0);
}

#[test]
fn fixture_sets_for_generator_one() {
    let sc = load_scenario_file(&fixture("ieee14_en.toml")).unwrap();
    let opts = PipelineOptions {
        force: true,
        ..Default::default()
    };
    let a = run_analysis(sc, &opts).unwrap();
    let (adm, mrpi) = &a.sets[0];
    assert!(!adm.empty);
    assert!(mrpi.empty);
    assert!(a.report.cct.crossings[0].t_admissible.is_finite());
}

#[test]
fn fixture_feasibility_follows_equilibrium_containment() {
    let sc = load_scenario_file(&fixture("ieee14_en.toml")).unwrap();
    let setup = cct_sets::cct::fault_setup(&sc).unwrap();
    let b = sc.bounds.clone().unwrap();
    let contained = (0..sc.m())
        .all(|i| b.contains(i, setup.pre.angles[i]) && b.contains(i, setup.post.angles[i]));
    let c = objective(&sc, &b, None).unwrap();
    assert_eq!(c.feasible, contained);
    // Widening every slab to the equilibrium hull restores feasibility.
    let widened = Bounds::new(
        (0..sc.m())
            .map(|i| {
                b.lower[i]
                    .min(setup.pre.angles[i])
                    .min(setup.post.angles[i])
            })
            .collect(),
        (0..sc.m())
            .map(|i| {
                b.upper[i]
                    .max(setup.pre.angles[i])
                    .max(setup.post.angles[i])
            })
            .collect(),
    )
    .unwrap();
    let c = objective(&sc, &widened, None).unwrap();
    assert!(c.feasible);
    assert_eq!(c.areas.len(), sc.m());
}

#[test]
fn geometry_export_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let sc = load_scenario_file(&fixture("two_machine.toml")).unwrap();
    let a = run_analysis(sc, &PipelineOptions::default()).unwrap();
    let files = write_outputs(&a, dir.path()).unwrap();
    for name in [
        "report.toml",
        "trajectory.csv",
        "A.svg",
        "B.svg",
        "A_admissible.csv",
        "B_mrpi.csv",
    ] {
        assert!(files.iter().any(|f| f.ends_with(name)), "{name} missing");
    }
    let mrpi_b = std::fs::read_to_string(dir.path().join("B_mrpi.csv")).unwrap();
    assert_eq!(mrpi_b, "ring,z1,z2\n");
    let svg_b = std::fs::read_to_string(dir.path().join("B.svg")).unwrap();
    assert!(svg_b.contains("MRPI empty"));
    assert!(!svg_b.contains(r#"class="mrpi""#));
    let svg_a = std::fs::read_to_string(dir.path().join("A.svg")).unwrap();
    assert!(svg_a.contains(r#"class="mrpi""#) && svg_a.contains(r#"class="admissible""#));
    assert!(!svg_a.contains("MRPI empty"));
    let csv = std::fs::read_to_string(dir.path().join("A_admissible.csv")).unwrap();
    let ring: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert!(!ring.is_empty());
    assert!(ring.iter().all(|r| *r == "0"));
}

#[test]
fn fixture_renders_trajectory_and_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let sc = load_scenario_file(&fixture("ieee14_en.toml")).unwrap();
    let opts = PipelineOptions {
        force: true,
        ..Default::default()
    };
    let a = run_analysis(sc, &opts).unwrap();
    export_geometry(&a, dir.path()).unwrap();
    let svg = std::fs::read_to_string(dir.path().join("G1.svg")).unwrap();
    assert!(svg.contains(r#"class="trajectory""#));
    assert!(svg.contains(r#"class="crossing""#));
    assert!(svg.contains("MRPI empty"));
}

#[test]
fn bounds_override_is_recorded() {
    let sc = load_scenario_file(&fixture("two_machine.toml")).unwrap();
    let opts = PipelineOptions {
        bounds: Some(Bounds::new(vec![-0.6, -0.9], vec![0.9, -0.3]).unwrap()),
        ..Default::default()
    };
    let a = run_analysis(sc, &opts).unwrap();
    assert_eq!(a.report.bounds.source, "override");
    assert_eq!(a.report.bounds.lower, vec![-0.6, -0.9]);
}
