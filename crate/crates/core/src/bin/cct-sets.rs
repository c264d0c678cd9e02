use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cct_sets::bounds_opt::optimize_bounds_with;
use cct_sets::cct::{fault_setup, verify_classification_from};
use cct_sets::dynamics::write_trajectory_csv;
use cct_sets::model::{load_bounds, load_scenario_file};
use cct_sets::pipeline::{assemble_all, certify, export_geometry, rings_csv, write_outputs};
use cct_sets::{run_analysis, Bounds, Error, OptimizeOptions, PipelineOptions, Result, Scenario};

#[derive(Parser)]
#[command(name = "cct-sets", version)]
#[command(about = "Safe and unsafe critical clearing times from per-generator safety sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML)
    #[arg(long)]
    scenario: PathBuf,

    /// Angle bounds: a TOML file with `lower`/`upper`, or inline `lo:hi,lo:hi,...`
    #[arg(long)]
    bounds: Option<String>,

    /// Output directory; nothing is written when unset
    #[arg(long, env = "CCT_SETS_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the synchronization certificate of the pre- and post-fault stages
    Certify {
        #[command(flatten)]
        common: Common,
        /// Cohesiveness angle, radians
        #[arg(long, default_value_t = FRAC_PI_2)]
        gamma: f64,
        /// Report a failed certificate without a nonzero exit
        #[arg(long)]
        force: bool,
    },
    /// Synchronous frequencies and equilibria
    Equilibrium {
        #[command(flatten)]
        common: Common,
    },
    /// Admissible sets and MRPIs of every machine
    Sets {
        #[command(flatten)]
        common: Common,
    },
    /// Safe/unsafe clearing-time bracket
    Cct {
        #[command(flatten)]
        common: Common,
        /// Clearing time to classify, seconds
        #[arg(long)]
        t_clear: Option<f64>,
        /// Initial fault-on horizon, seconds
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Search for bounds with the largest total MRPI area
    OptimizeBounds {
        #[command(flatten)]
        common: Common,
        /// Objective evaluations
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inflation of the equilibrium hull for the first candidate, radians
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
        /// Per-machine objective weights, comma separated
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Fault-on run to the clearing time, then the post-fault run
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_clear: f64,
        /// Post-fault horizon, seconds
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Full pipeline with report and geometry
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = FRAC_PI_2)]
        gamma: f64,
        #[arg(long)]
        t_clear: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Run the bound search with this many evaluations first
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Continue past a failed certificate
        #[arg(long)]
        force: bool,
    },
}

fn parse_bounds(arg: &str) -> Result<Bounds> {
    let path = Path::new(arg);
    if path.is_file() {
        return load_bounds(&fs::read_to_string(path)?);
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in arg.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| Error::Validation(format!("bounds entry `{part}` is not `lo:hi`")))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("`{s}` is not a number")))
        };
        lower.push(num(lo)?);
        upper.push(num(hi)?);
    }
    Bounds::new(lower, upper)
}

fn load(common: &Common) -> Result<Scenario> {
    let mut sc = load_scenario_file(&common.scenario).map_err(|e| e.at_stage("load"))?;
    if let Some(b) = &common.bounds {
        let b = parse_bounds(b).map_err(|e| e.at_stage("load"))?;
        if b.m() != sc.m() {
            return Err(Error::Validation(format!(
                "bounds cover {} machines, scenario has {}",
                b.m(),
                sc.m()
            ))
            .at_stage("load"));
        }
        sc.bounds = Some(b);
    }
    Ok(sc)
}

fn need_bounds(sc: &Scenario) -> Result<Bounds> {
    sc.bounds.clone().ok_or_else(|| {
        Error::Validation("scenario has no bounds; pass --bounds".into()).at_stage("bounds")
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Certify {
            common,
            gamma,
            force,
        } => {
            let sc = load(&common)?;
            let mut warnings = Vec::new();
            let certs =
                certify(&sc, gamma, true, &mut warnings).map_err(|e| e.at_stage("certificate"))?;
            for (label, c) in [("pre", &certs.pre), ("post", &certs.post)] {
                println!(
                    "{label}: lhs={:.6} rhs=sin({:.6})={:.6} margin={:.3e} {}",
                    c.lhs,
                    c.gamma,
                    c.rhs,
                    c.margin,
                    if c.passed { "PASS" } else { "FAIL" }
                );
            }
            if !force {
                for c in [&certs.pre, &certs.post] {
                    if !c.passed {
                        return Err(Error::CertificateFailed {
                            gamma: c.gamma,
                            lhs: c.lhs,
                            rhs: c.rhs,
                        }
                        .at_stage("certificate"));
                    }
                }
            }
        }
        Command::Equilibrium { common } => {
            let sc = load(&common)?;
            let setup = fault_setup(&sc).map_err(|e| e.at_stage("equilibrium"))?;
            println!(
                "omega_synch: pre={:.6} fault={:.6} post={:.6}",
                setup.omega_pre, setup.omega_fault, setup.omega_post
            );
            for (label, eq) in [("pre", &setup.pre), ("post", &setup.post)] {
                println!(
                    "{label}: angles={} residual={:.2e} max_edge_angle={:.6}",
                    fmt_vec(&eq.angles),
                    eq.residual,
                    eq.cohesive_gamma
                );
            }
        }
        Command::Sets { common } => {
            let sc = load(&common)?;
            let bounds = need_bounds(&sc)?;
            let setup = fault_setup(&sc).map_err(|e| e.at_stage("equilibrium"))?;
            let sets = assemble_all(&sc, &setup, &bounds).map_err(|e| e.at_stage("sets"))?;
            for (i, (a, m)) in sets.iter().enumerate() {
                for set in [a, m] {
                    println!(
                        "{} {:<10} empty={:<5} area={:.6} vertices={}",
                        sc.name(i),
                        set.kind.label(),
                        set.empty,
                        set.area(),
                        set.vertex_count()
                    );
                }
            }
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                for (i, (a, m)) in sets.iter().enumerate() {
                    for set in [a, m] {
                        fs::write(
                            dir.join(format!("{}_{}.csv", sc.name(i), set.kind.label())),
                            rings_csv(set),
                        )?;
                    }
                }
            }
        }
        Command::Cct {
            common,
            t_clear,
            horizon,
        } => {
            let sc = load(&common)?;
            let opts = PipelineOptions {
                t_clear,
                horizon,
                force: true,
                ..Default::default()
            };
            let a = run_analysis(sc, &opts)?;
            for c in &a.report.cct.crossings {
                println!(
                    "{}: t_M={:.4} t_A={:.4}",
                    a.scenario.name(c.machine),
                    c.t_mrpi,
                    c.t_admissible
                );
            }
            println!("{}", a.report.summary);
            if let Some(dir) = &common.out {
                export_geometry(&a, dir).map_err(|e| e.at_stage("export"))?;
            }
        }
        Command::OptimizeBounds {
            common,
            budget,
            seed,
            margin,
            weights,
        } => {
            let sc = load(&common)?;
            let setup = fault_setup(&sc).map_err(|e| e.at_stage("equilibrium"))?;
            let opts = OptimizeOptions {
                margin,
                weights,
                ..Default::default()
            };
            let r = optimize_bounds_with(&sc, &setup, budget, seed, &opts)
                .map_err(|e| e.at_stage("bounds"))?;
            println!(
                "best objective={:.6} at evaluation {} of {}",
                r.best.objective, r.best.evaluation, r.evaluations
            );
            println!("lower = {}", fmt_vec(&r.best.bounds.lower));
            println!("upper = {}", fmt_vec(&r.best.bounds.upper));
            println!("areas = {}", fmt_vec(&r.best.areas));
            for w in &r.best.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("optimization_history.csv"), r.history_csv())?;
                let doc = toml::to_string(&r.best.bounds).expect("bounds serialize");
                fs::write(dir.join("bounds.toml"), doc)?;
            }
        }
        Command::Simulate {
            common,
            t_clear,
            horizon,
        } => {
            let sc = load(&common)?;
            let setup = fault_setup(&sc).map_err(|e| e.at_stage("equilibrium"))?;
            let horizon = horizon.unwrap_or(sc.solver.verify_horizon_s);
            let v = verify_classification_from(&sc, &setup, t_clear, horizon)
                .map_err(|e| e.at_stage("simulation"))?;
            match v.exit {
                Some((i, t)) => println!("exit: {} leaves its slab at t={t:.4}", sc.name(i)),
                None => println!("stays within the slab over {horizon} s after clearing"),
            }
            println!("clearing state = {}", fmt_vec(&v.clearing_state));
            println!("final state = {}", fmt_vec(&v.final_state));
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                let traj = cct_sets::simulate_fault(&sc, (t_clear - sc.t_fault).max(1e-9))?;
                write_trajectory_csv(
                    fs::File::create(dir.join("fault_trajectory.csv"))?,
                    &traj,
                    0.01,
                )?;
            }
        }
        Command::Analyze {
            common,
            gamma,
            t_clear,
            horizon,
            budget,
            seed,
            force,
        } => {
            let sc = load(&common)?;
            let opts = PipelineOptions {
                gamma,
                t_clear,
                horizon,
                force,
                optimize: budget.map(|b| (b, seed, OptimizeOptions::default())),
                out_dir: common.out.clone(),
                ..Default::default()
            };
            let a = run_analysis(sc, &opts)?;
            for w in &a.report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", a.report.summary);
            match &common.out {
                Some(dir) => {
                    let files = write_outputs(&a, dir).map_err(|e| e.at_stage("export"))?;
                    println!("wrote {} files to {}", files.len(), dir.display());
                }
                None => print!("{}", a.report.to_toml()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
