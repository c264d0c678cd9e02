//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a criterion fails that is not listed in `DOCUMENTED`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_6};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cct_sets::bounds_opt::optimize_bounds_with;
use cct_sets::cct::{analyze_fault, fault_setup, verify_classification_from};
use cct_sets::dynamics::coupled_derivative;
use cct_sets::equilibrium::solve_equilibrium;
use cct_sets::model::load_scenario_file;
use cct_sets::pipeline::assemble_all;
use cct_sets::{
    assemble_set, oracle_set, rotating_frame_shift, run_analysis, sync_certificate, MachineModel,
    OptimizeOptions, PipelineOptions, Point, SafetySet, Scenario, SetKind, SetSettings, StageModel,
};

/// Criteria expected to fail, with the reason recorded in the README.
const DOCUMENTED: &[(u32, &str)] = &[(
    6,
    "the symmetric effective-network fixture does not reproduce the reference equilibria, emptiness pattern or t_unsafe",
)];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn two_machine() -> Scenario {
    load_scenario_file(&fixture("two_machine.toml")).unwrap()
}

fn ieee14() -> Scenario {
    load_scenario_file(&fixture("ieee14_en.toml")).unwrap()
}

fn pair(p: f64, k: f64) -> StageModel {
    StageModel::new(
        vec![p, -p],
        vec![1.0, 1.0],
        vec![vec![0.0, k], vec![k, 0.0]],
    )
    .unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
    limit: Duration,
}

fn outcome(pass: bool, detail: String, limit_s: u64) -> Outcome {
    Outcome {
        pass,
        detail,
        limit: Duration::from_secs(limit_s),
    }
}

fn criterion_1() -> Outcome {
    let mut bad = Vec::new();
    for p in [0.1, 0.5, 0.9, 1.1] {
        for gamma in [FRAC_PI_6, FRAC_PI_3, FRAC_PI_2] {
            // L = [[1, -1], [-1, 1]] has L^+ = L / 4, so L^+ p = (p/2, -p/2)
            // and the edge difference is p.
            let expected = p <= gamma.sin() + 1e-12;
            let c = sync_certificate(&pair(p, 1.0), gamma).unwrap();
            if c.passed != expected || (c.lhs - p).abs() > 1e-12 {
                bad.push(format!("P={p} gamma={gamma:.4}"));
            }
        }
    }
    outcome(bad.is_empty(), format!("12 cases, mismatches {bad:?}"), 1)
}

fn criterion_2() -> Outcome {
    let mut worst_angle: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    for k in [1.0, 2.5] {
        for ratio in [0.1, 0.5, 0.9] {
            let stage = pair(ratio * k, k);
            let eq = solve_equilibrium(&rotating_frame_shift(&stage).0, 0, 0.0).unwrap();
            worst_angle = worst_angle.max(((eq.angles[0] - eq.angles[1]) - ratio.asin()).abs());
            let mut x = eq.angles.clone();
            x.extend([0.0, 0.0]);
            let r = coupled_derivative(&stage, &x)
                .iter()
                .fold(0.0_f64, |a, v| a.max(v.abs()));
            worst_residual = worst_residual.max(r);
        }
    }
    outcome(
        worst_angle < 1e-9 && worst_residual < 1e-9,
        format!("max angle error {worst_angle:.2e}, max residual {worst_residual:.2e}"),
        1,
    )
}

/// Agreement between the assembled set and the grid oracle, over grid points
/// farther than the band from the boundary.
fn agreement(scenario: &Scenario, i: usize, kind: SetKind) -> (f64, usize, Duration) {
    let t = Instant::now();
    let bounds = scenario.bounds.clone().unwrap();
    let post = rotating_frame_shift(&scenario.post).0;
    let settings = SetSettings::from_solver(&scenario.solver);
    let machine = MachineModel::from_stage(&post, &bounds, i);
    let set = assemble_set(&machine, &bounds, kind, &settings, None).unwrap();
    let grid = oracle_set(
        &machine,
        &bounds,
        kind,
        200,
        set.z2_cap,
        20.0,
        &settings.ode,
    )
    .unwrap();
    let (mut agree, mut total) = (0usize, 0usize);
    for (p, inside) in grid.points() {
        if !set.empty && set.boundary_distance(p) <= set.tol_band {
            continue;
        }
        total += 1;
        agree += usize::from(set.contains(p) == inside);
    }
    (agree as f64 / total.max(1) as f64, total, t.elapsed())
}

fn criterion_3() -> Outcome {
    let cases = [
        ("two-machine A", two_machine(), 0),
        ("fixture G2", ieee14(), 1),
        ("fixture G1", ieee14(), 0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, sc, i) in &cases {
        let mut elapsed = Duration::ZERO;
        for kind in [SetKind::Admissible, SetKind::Mrpi] {
            let (ratio, n, dt) = agreement(sc, *i, kind);
            elapsed += dt;
            pass &= ratio >= 0.99;
            parts.push(format!(
                "{label} {} {:.2}% of {n}",
                kind.label(),
                100.0 * ratio
            ));
        }
        pass &= elapsed < Duration::from_secs(120);
    }
    outcome(pass, parts.join("; "), 360)
}

fn within_slab(set: &SafetySet) -> bool {
    let eps = 1e-9 * (set.upper - set.lower);
    set.rings
        .iter()
        .flatten()
        .all(|p| p.z1 >= set.lower - eps && p.z1 <= set.upper + eps)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    let mut outside = 0;
    let mut checked = 0;
    for sc in [two_machine(), ieee14()] {
        let setup = fault_setup(&sc).unwrap();
        let bounds = sc.bounds.clone().unwrap();
        let sets = assemble_all(&sc, &setup, &bounds).unwrap();
        for (a, m) in &sets {
            outside += usize::from(!within_slab(a)) + usize::from(!within_slab(m));
            checked += 1;
            let cap = a.z2_cap.max(m.z2_cap);
            for _ in 0..10_000 {
                let p = Point::new(
                    rng.random_range(a.lower..=a.upper),
                    rng.random_range(-cap..=cap),
                );
                if m.contains(p) && !a.contains(p) && a.boundary_distance(p) > a.tol_band {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0 && outside == 0,
        format!("{checked} machines x 1e4 samples, {violations} containment violations, {outside} sets leaving the slab"),
        60,
    )
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, sc) in [("two-machine", two_machine()), ("fixture", ieee14())] {
        let setup = fault_setup(&sc).unwrap();
        let bounds = sc.bounds.clone().unwrap();
        let sets = assemble_all(&sc, &setup, &bounds).unwrap();
        let (report, _) = analyze_fault(&sc, &setup, &bounds, &sets).unwrap();
        let t0 = sc.t_fault;
        let mut stay_violations = 0;
        if report.t_safe.is_finite() {
            for k in 0..5 {
                let tc = t0 + (report.t_safe - t0) * k as f64 / 4.0;
                let v = verify_classification_from(&sc, &setup, tc, 20.0).unwrap();
                stay_violations += usize::from(!v.in_slab);
            }
        }
        let (mut exits, mut inconclusive, mut contradictions) = (0, 0, 0);
        if report.t_unsafe.is_finite() {
            for dt in [1e-3, 0.05, 0.1, 0.25, 0.5] {
                let tc = report.t_unsafe + dt;
                let v = verify_classification_from(&sc, &setup, tc, 20.0).unwrap();
                if v.exit.is_some() {
                    exits += 1;
                } else {
                    inconclusive += 1;
                    let x = &v.clearing_state;
                    let m = x.len() / 2;
                    let outside_band = sets.iter().enumerate().any(|(i, (a, _))| {
                        let p = Point::new(bounds.rebase(i, x[i]), x[m + i]);
                        !a.contains(p) && a.boundary_distance(p) > a.tol_band
                    });
                    contradictions += usize::from(outside_band);
                }
            }
        } else {
            pass = false;
        }
        pass &= stay_violations == 0 && contradictions == 0;
        parts.push(format!(
            "{label}: t_safe={:.4} stay violations {stay_violations}/5, t_unsafe={:.4} exits {exits}/5 (inconclusive {inconclusive}, contradicting {contradictions})",
            report.t_safe, report.t_unsafe
        ));
    }
    outcome(pass, parts.join("; "), 60)
}

fn criterion_6() -> Outcome {
    let sc = ieee14();
    let opts = PipelineOptions {
        force: true,
        t_clear: Some(1.5),
        ..Default::default()
    };
    let reference = cct_sets::objective(&sc, sc.bounds.as_ref().unwrap(), None).unwrap();
    let a = run_analysis(sc, &opts).unwrap();
    let empty: Vec<(bool, bool)> = a.sets.iter().map(|(adm, m)| (adm.empty, m.empty)).collect();
    let cct = &a.report.cct;
    let critical: Vec<String> = cct.critical().iter().map(|&i| a.scenario.name(i)).collect();
    let checks = [
        ("reference bounds feasible", reference.feasible),
        ("M1 empty", empty[0].1),
        ("A1 nonempty", !empty[0].0),
        ("M2..M5 nonempty", empty[1..].iter().all(|e| !e.1)),
        ("t_safe = 0", cct.t_safe == 0.0),
        (
            "t_unsafe within 10% of 1.3761",
            (cct.t_unsafe - 1.3761).abs() <= 0.1 * 1.3761,
        ),
        ("critical G1", critical == ["G1"]),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let mrpi_empty: Vec<String> = empty
        .iter()
        .enumerate()
        .filter(|(_, e)| e.1)
        .map(|(i, _)| a.scenario.name(i))
        .collect();
    outcome(
        failed.is_empty(),
        format!(
            "t_safe={:.4} t_unsafe={:.4} critical={critical:?} empty MRPIs {mrpi_empty:?}; failed checks {failed:?}",
            cct.t_safe, cct.t_unsafe
        ),
        120,
    )
}

fn criterion_7() -> Outcome {
    let sc = two_machine();
    let setup = fault_setup(&sc).unwrap();
    let opts = OptimizeOptions::default();
    let a = optimize_bounds_with(&sc, &setup, 200, 2024, &opts).unwrap();
    let b = optimize_bounds_with(&sc, &setup, 200, 2024, &opts).unwrap();
    let identical = a.history_csv() == b.history_csv();
    let feasible = a.history.iter().all(|h| {
        h.feasible
            && (0..sc.m()).all(|i| {
                let (x, y) = (setup.pre.angles[i], setup.post.angles[i]);
                h.bounds.lower[i] <= x.min(y) && x.max(y) <= h.bounds.upper[i]
            })
    });
    let monotone = a.best_trace.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        identical && feasible && monotone && a.history.len() == 200,
        format!(
            "identical histories {identical}, all feasible {feasible}, monotone best {monotone}, best {:.4}",
            a.best.objective
        ),
        300,
    )
}

fn criterion_8() -> Outcome {
    let base = ieee14();
    let mut fine = base.clone();
    fine.solver = base.solver.with_tolerance_scale(0.5);
    let mut t_a = Vec::new();
    for sc in [&base, &fine] {
        let setup = fault_setup(sc).unwrap();
        let bounds = sc.bounds.clone().unwrap();
        let sets = assemble_all(sc, &setup, &bounds).unwrap();
        let (report, _) = analyze_fault(sc, &setup, &bounds, &sets).unwrap();
        t_a.push(
            report
                .crossings
                .iter()
                .map(|c| c.t_admissible)
                .collect::<Vec<f64>>(),
        );
    }
    let worst = t_a[0]
        .iter()
        .zip(&t_a[1])
        .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
        .fold(0.0_f64, f64::max);
    outcome(
        worst < 1e-3,
        format!("max |delta t_A| = {worst:.2e} s"),
        600,
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "synchronization certificate", criterion_1),
        (2, "equilibrium correctness", criterion_2),
        (3, "set/oracle equivalence", criterion_3),
        (4, "structural set properties", criterion_4),
        (5, "simulation consistency", criterion_5),
        (6, "IEEE 14-bus reproduction", criterion_6),
        (7, "optimizer contract", criterion_7),
        (8, "numerical convergence", criterion_8),
    ];
    let mut unexpected = 0;
    for (n, name, run) in criteria {
        let t = Instant::now();
        let o = run();
        let elapsed = t.elapsed();
        let pass = o.pass && elapsed <= o.limit;
        let documented = DOCUMENTED.iter().find(|d| d.0 == n);
        let verdict = match (pass, documented) {
            (true, _) => "PASS".to_string(),
            (false, Some((_, why))) => format!("FAIL (documented: {why})"),
            (false, None) => {
                unexpected += 1;
                "FAIL".to_string()
            }
        };
        println!(
            "criterion {n} [{name}]: {verdict}: {} ({:.1} s, limit {} s)",
            o.detail,
            elapsed.as_secs_f64(),
            o.limit.as_secs()
        );
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
