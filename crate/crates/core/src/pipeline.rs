//! End-to-end analysis: frame shift, certificate, equilibria, optional bound
//! search, set assembly, fault-on simulation and the clearing-time bracket,
//! plus the report document and geometry files.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds_opt::{optimize_bounds_with, OptimizeOptions, OptimizeResult};
use crate::cct::{
    analyze_fault, classify, fault_setup, verify_classification_from, CctReport, Classification,
    FaultSetup, SimulationVerdict,
};
use crate::dynamics::{write_trajectory_csv, MachineModel};
use crate::equilibrium::{sync_certificate, Certificate, EquilibriumResult};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::model::{load_scenario_file, rotating_frame_shift, Bounds, Scenario, SolverSettings};
use crate::ode::Trajectory;
use crate::safety_sets::{assemble_set, SafetySet, SetKind, SetSettings};
use crate::svg::{render_machine, MachinePlot};

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub gamma: f64,
    /// Replaces the scenario's bounds.
    pub bounds: Option<Bounds>,
    /// Runs the bound search with this budget and seed before assembling the
    /// sets.
    pub optimize: Option<(usize, u64, OptimizeOptions)>,
    pub t_clear: Option<f64>,
    /// Replaces the solver's initial fault-on horizon.
    pub horizon: Option<f64>,
    /// Continue with a warning when the certificate fails.
    pub force: bool,
    /// Writes the report and geometry files here.
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            gamma: FRAC_PI_2,
            bounds: None,
            optimize: None,
            t_clear: None,
            horizon: None,
            force: false,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFrequencies {
    pub pre: f64,
    pub fault: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub pre: Certificate,
    pub post: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibria {
    pub pre: EquilibriumResult,
    pub post: EquilibriumResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub machine: String,
    pub kind: SetKind,
    pub empty: bool,
    pub area: f64,
    pub vertex_count: usize,
    pub z2_cap: f64,
    pub components: usize,
    pub stops: Vec<String>,
    pub notes: Vec<String>,
}

impl SetSummary {
    fn new(name: String, set: &SafetySet) -> Self {
        SetSummary {
            machine: name,
            kind: set.kind,
            empty: set.empty,
            area: set.area(),
            vertex_count: set.vertex_count(),
            z2_cap: set.z2_cap,
            components: set.rings.len(),
            stops: set.log.stops.iter().map(|s| format!("{s:?}")).collect(),
            notes: set.log.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub budget: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub best_objective: f64,
    pub best_evaluation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSection {
    /// `scenario`, `override` or `optimized`.
    pub source: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Settings that determine every number in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSettings {
    pub gamma: f64,
    pub force: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_clear: Option<f64>,
    pub closure_tol_rel: f64,
    pub tol_band_rel: f64,
    pub envelope_samples: usize,
    pub max_pieces: usize,
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub equilibria_s: f64,
    pub optimization_s: f64,
    pub sets_s: f64,
    pub simulation_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tool_version: String,
    /// SHA-256 of the scenario document as re-serialized.
    pub scenario_digest: String,
    pub summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    pub warnings: Vec<String>,
    pub settings: EffectiveSettings,
    pub omega_synch: FrameFrequencies,
    pub certificate: Certificates,
    pub equilibria: Equilibria,
    pub bounds: BoundsSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSummary>,
    pub sets: Vec<SetSummary>,
    pub cct: CctReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<SimulationVerdict>,
    /// Wall-clock durations; not reproducible.
    pub timing: Timing,
}

impl AnalysisReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reports always serialize")
    }

    /// Report document without the timing section.
    pub fn deterministic_toml(&self) -> String {
        let mut r = self.clone();
        r.timing = Timing::default();
        let text = r.to_toml();
        match text.find("\n[timing]") {
            Some(k) => text[..k + 1].to_string(),
            None => text,
        }
    }
}

/// Report plus the intermediate objects needed for plotting.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub scenario: Scenario,
    pub setup: FaultSetup,
    pub bounds: Bounds,
    /// `(admissible, mrpi)` per machine.
    pub sets: Vec<(SafetySet, SafetySet)>,
    pub trajectory: Trajectory,
    pub optimization: Option<OptimizeResult>,
}

pub fn scenario_digest(scenario: &Scenario) -> String {
    let hash = Sha256::digest(scenario.to_toml().as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Certificate check for both stages at `gamma`. Failing stages become
/// warnings when `force` is set and an error otherwise.
pub fn certify(
    scenario: &Scenario,
    gamma: f64,
    force: bool,
    warnings: &mut Vec<String>,
) -> Result<Certificates> {
    let pre = sync_certificate(&rotating_frame_shift(&scenario.pre).0, gamma)?;
    let post = sync_certificate(&rotating_frame_shift(&scenario.post).0, gamma)?;
    for (label, c) in [("pre-fault", &pre), ("post-fault", &post)] {
        if !c.passed {
            if !force {
                return Err(Error::CertificateFailed {
                    gamma: c.gamma,
                    lhs: c.lhs,
                    rhs: c.rhs,
                });
            }
            warnings.push(format!(
                "{label} certificate failed ({:.6} > sin({:.6}) = {:.6}); continuing because of --force",
                c.lhs, c.gamma, c.rhs
            ));
        }
    }
    Ok(Certificates { pre, post })
}

/// Admissible set and MRPI of every machine for `bounds`, probed at the
/// post-fault equilibrium.
pub fn assemble_all(
    scenario: &Scenario,
    setup: &FaultSetup,
    bounds: &Bounds,
) -> Result<Vec<(SafetySet, SafetySet)>> {
    let post = rotating_frame_shift(&scenario.post).0;
    let settings = SetSettings::from_solver(&scenario.solver);
    (0..scenario.m())
        .into_par_iter()
        .map(|i| {
            let machine = MachineModel::from_stage(&post, bounds, i);
            let probe = Some(Point::new(setup.post.angles[i], 0.0));
            let a = assemble_set(&machine, bounds, SetKind::Admissible, &settings, probe)?;
            let m = assemble_set(&machine, bounds, SetKind::Mrpi, &settings, probe)?;
            Ok((a, m))
        })
        .collect()
}

pub fn run_analysis(mut scenario: Scenario, options: &PipelineOptions) -> Result<Analysis> {
    let start = Instant::now();
    let mut timing = Timing::default();
    let mut warnings = Vec::new();
    if let Some(h) = options.horizon {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Validation(format!("horizon {h} must be > 0")).at_stage("load"));
        }
        scenario.solver.horizon_s = h;
        scenario.solver.max_horizon_s = scenario.solver.max_horizon_s.max(h);
    }
    if let Some(b) = &options.bounds {
        if b.m() != scenario.m() {
            return Err(Error::Validation(format!(
                "bounds cover {} machines, scenario has {}",
                b.m(),
                scenario.m()
            ))
            .at_stage("load"));
        }
        scenario.bounds = Some(b.clone());
    }
    let digest = scenario_digest(&scenario);

    let certificate = certify(&scenario, options.gamma, options.force, &mut warnings)
        .map_err(|e| e.at_stage("certificate"))?;

    let t = Instant::now();
    let setup = fault_setup(&scenario).map_err(|e| e.at_stage("equilibrium"))?;
    timing.equilibria_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (bounds, source, optimization) = match &options.optimize {
        Some((budget, seed, opts)) => {
            let r = optimize_bounds_with(&scenario, &setup, *budget, *seed, opts)
                .map_err(|e| e.at_stage("bounds"))?;
            (r.best.bounds.clone(), "optimized", Some(r))
        }
        None => {
            let b = scenario.bounds.clone().ok_or_else(|| {
                Error::Validation("scenario has no bounds; pass --bounds".into()).at_stage("bounds")
            })?;
            (
                b,
                if options.bounds.is_some() {
                    "override"
                } else {
                    "scenario"
                },
                None,
            )
        }
    };
    timing.optimization_s = t.elapsed().as_secs_f64();
    for i in 0..scenario.m() {
        for (label, eq) in [("pre", &setup.pre), ("post", &setup.post)] {
            if !bounds.contains(i, eq.angles[i]) {
                warnings.push(format!(
                    "{} {label}-fault equilibrium angle {:.6} lies outside its bounds",
                    scenario.name(i),
                    eq.angles[i]
                ));
            }
        }
    }
    scenario.bounds = Some(bounds.clone());

    let t = Instant::now();
    let sets = assemble_all(&scenario, &setup, &bounds).map_err(|e| e.at_stage("sets"))?;
    timing.sets_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (cct, trajectory) =
        analyze_fault(&scenario, &setup, &bounds, &sets).map_err(|e| e.at_stage("simulation"))?;
    let verification = match options.t_clear {
        Some(tc) => Some(
            verify_classification_from(&scenario, &setup, tc, scenario.solver.verify_horizon_s)
                .map_err(|e| e.at_stage("simulation"))?,
        ),
        None => None,
    };
    timing.simulation_s = t.elapsed().as_secs_f64();
    if cct.safe_horizon_limited {
        warnings.push(format!(
            "no MRPI crossing within the {} s fault-on horizon",
            cct.horizon
        ));
    }
    if cct.unsafe_horizon_limited {
        warnings.push(format!(
            "no admissible-set crossing within the {} s fault-on horizon",
            cct.horizon
        ));
    }

    let names = |i: usize| scenario.name(i);
    let summary = cct.summary_line(&names, options.t_clear);
    let set_summaries = sets
        .iter()
        .enumerate()
        .flat_map(|(i, (a, m))| [SetSummary::new(names(i), a), SetSummary::new(names(i), m)])
        .collect();
    let settings = SetSettings::from_solver(&scenario.solver);
    timing.total_s = start.elapsed().as_secs_f64();
    let report = AnalysisReport {
        tool_version: crate::VERSION.to_string(),
        scenario_digest: digest,
        summary,
        classification: options.t_clear.map(|tc| classify(tc, &cct)),
        warnings,
        settings: EffectiveSettings {
            gamma: options.gamma,
            force: options.force,
            t_clear: options.t_clear,
            closure_tol_rel: settings.closure_tol_rel,
            tol_band_rel: settings.tol_band_rel,
            envelope_samples: settings.envelope_samples,
            max_pieces: settings.max_pieces,
            solver: scenario.solver.clone(),
        },
        omega_synch: FrameFrequencies {
            pre: setup.omega_pre,
            fault: setup.omega_fault,
            post: setup.omega_post,
        },
        certificate,
        equilibria: Equilibria {
            pre: setup.pre.clone(),
            post: setup.post.clone(),
        },
        bounds: BoundsSection {
            source: source.to_string(),
            lower: bounds.lower.clone(),
            upper: bounds.upper.clone(),
        },
        optimization: optimization.as_ref().map(|r| {
            let (budget, seed, _) = options.optimize.as_ref().expect("set when optimizing");
            OptimizationSummary {
                budget: *budget,
                seed: *seed,
                evaluations: r.evaluations,
                best_objective: r.best.objective,
                best_evaluation: r.best.evaluation,
            }
        }),
        sets: set_summaries,
        cct,
        verification,
        timing,
    };
    Ok(Analysis {
        report,
        scenario,
        setup,
        bounds,
        sets,
        trajectory,
        optimization,
    })
}

/// Loads the scenario, runs every stage and, when an output directory is
/// set, writes the report and geometry files there.
pub fn run_pipeline(scenario_path: &Path, options: &PipelineOptions) -> Result<AnalysisReport> {
    let scenario = load_scenario_file(scenario_path).map_err(|e| e.at_stage("load"))?;
    let analysis = run_analysis(scenario, options)?;
    if let Some(dir) = &options.out_dir {
        write_outputs(&analysis, dir).map_err(|e| e.at_stage("export"))?;
    }
    Ok(analysis.report)
}

/// Writes `report.toml`, the geometry files and, after a bound search,
/// `optimization_history.csv`.
pub fn write_outputs(analysis: &Analysis, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = export_geometry(analysis, dir)?;
    let report = dir.join("report.toml");
    fs::write(&report, analysis.report.to_toml())?;
    files.push(report);
    if let Some(opt) = &analysis.optimization {
        let p = dir.join("optimization_history.csv");
        fs::write(&p, opt.history_csv())?;
        files.push(p);
    }
    Ok(files)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Per-machine set polylines (`ring,z1,z2`), the trajectory, and one SVG per
/// machine.
pub fn export_geometry(analysis: &Analysis, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let traj = &analysis.trajectory;
    let p = dir.join("trajectory.csv");
    write_trajectory_csv(fs::File::create(&p)?, traj, 0.01)?;
    files.push(p);

    let m = analysis.scenario.m();
    let times = traj.refined_times(4);
    for (i, (adm, mrpi)) in analysis.sets.iter().enumerate() {
        let name = analysis.scenario.name(i);
        let stem = file_stem(&name);
        for set in [adm, mrpi] {
            let p = dir.join(format!("{stem}_{}.csv", set.kind.label()));
            fs::write(&p, rings_csv(set))?;
            files.push(p);
        }
        let project = |x: &[f64]| Point::new(analysis.bounds.rebase(i, x[i]), x[m + i]);
        let path: Vec<Point> = times.iter().map(|&t| project(&traj.eval(t))).collect();
        let crossing = analysis.report.cct.crossings.get(i);
        let at = |t: Option<f64>| t.filter(|t| t.is_finite()).map(|t| project(&traj.eval(t)));
        let plot = MachinePlot {
            name: &name,
            admissible: adm,
            mrpi,
            equilibria: [analysis.setup.pre.angles[i], analysis.setup.post.angles[i]],
            trajectory: &path,
            crossings: [
                at(crossing.map(|c| c.t_mrpi)),
                at(crossing.map(|c| c.t_admissible)),
            ],
        };
        let p = dir.join(format!("{stem}.svg"));
        fs::write(&p, render_machine(&plot))?;
        files.push(p);
    }
    Ok(files)
}

pub fn rings_csv(set: &SafetySet) -> String {
    let mut s = String::from("ring,z1,z2\n");
    if !set.empty {
        for (k, ring) in set.rings.iter().enumerate() {
            for p in ring {
                s.push_str(&format!("{k},{},{}\n", p.z1, p.z2));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    const TWO: &str = r#"
t_fault = 0.0
[pre]
p = [0.5, -0.5]
d = [1.0, 1.0]
K = [[0.0, 1.0], [1.0, 0.0]]
[fault]
p = [0.5, -0.5]
d = [1.0, 1.0]
K = [[0.0, 0.2], [0.2, 0.0]]
[post]
p = [0.5, -0.5]
d = [1.0, 1.0]
K = [[0.0, 1.0], [1.0, 0.0]]
[bounds]
lower = [-0.6, -1.2]
upper = [1.2, 0.6]
"#;

    #[test]
    fn certificate_failure_is_stage_tagged() {
        let text = TWO.replace("p = [0.5, -0.5]", "p = [1.2, -1.2]");
        let sc = load_scenario(&text).unwrap();
        let err = run_analysis(sc.clone(), &PipelineOptions::default()).unwrap_err();
        match err {
            Error::Stage { stage, source } => {
                assert_eq!(stage, "certificate");
                assert!(matches!(*source, Error::CertificateFailed { .. }));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn forced_certificate_failure_is_a_warning() {
        let sc = load_scenario(TWO).unwrap();
        let opts = PipelineOptions {
            gamma: 0.1,
            force: true,
            ..Default::default()
        };
        let a = run_analysis(sc, &opts).unwrap();
        assert!(a
            .report
            .warnings
            .iter()
            .any(|w| w.contains("certificate failed")));
    }

    #[test]
    fn report_round_trips_and_timing_is_separate() {
        let sc = load_scenario(TWO).unwrap();
        let a = run_analysis(sc, &PipelineOptions::default()).unwrap();
        let text = a.report.to_toml();
        let back: AnalysisReport = toml::from_str(&text).unwrap();
        assert_eq!(back.summary, a.report.summary);
        let det = a.report.deterministic_toml();
        assert!(!det.contains("[timing]"));
        assert!(det.contains("scenario_digest"));
    }

    #[test]
    fn empty_set_csv_has_only_header() {
        let sc = load_scenario(TWO).unwrap();
        let a = run_analysis(sc, &PipelineOptions::default()).unwrap();
        let mut set = a.sets[0].1.clone();
        set.empty = true;
        assert_eq!(rings_csv(&set), "ring,z1,z2\n");
    }
}
