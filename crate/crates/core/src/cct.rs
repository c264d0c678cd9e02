//! Fault-on simulation, crossing times against the safety sets and the
//! resulting safe/unsafe clearing-time bracket.
//!
//! All stages are simulated in the post-fault synchronous frame, which is
//! the frame the safety sets live in. The pre-fault equilibrium rotates at
//! the pre-fault synchronous frequency, so in that frame it starts with a
//! common velocity offset when the two frequencies differ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::coupled_rhs;
use crate::equilibrium::{solve_equilibrium, EquilibriumResult};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::model::{rotating_frame_shift, shift_by, Bounds, Scenario, StageModel};
use crate::ode::{event_time_sub, integrate, integrate_until, OdeSettings, Trajectory};
use crate::safety_sets::SafetySet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Safe,
    PotentiallySafe,
    Unsafe,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::Safe => "safe",
            Classification::PotentiallySafe => "potentially_safe",
            Classification::Unsafe => "unsafe",
        }
    }
}

/// Synchronous frequencies and equilibria of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSetup {
    pub omega_pre: f64,
    pub omega_fault: f64,
    pub omega_post: f64,
    pub pre: EquilibriumResult,
    pub post: EquilibriumResult,
}

impl FaultSetup {
    /// Pre-fault equilibrium in the post-fault frame, packed as
    /// `[angles..., velocities...]`.
    pub fn initial_state(&self) -> Vec<f64> {
        let m = self.pre.angles.len();
        let mut x = self.pre.angles.clone();
        x.extend(std::iter::repeat_n(self.omega_pre - self.omega_post, m));
        x
    }
}

/// Computes both equilibria, each in its own synchronous frame, with the
/// first machine pinned at 0.
pub fn fault_setup(scenario: &Scenario) -> Result<FaultSetup> {
    let (pre, omega_pre) = rotating_frame_shift(&scenario.pre);
    let (_, omega_fault) = rotating_frame_shift(&scenario.fault);
    let (post, omega_post) = rotating_frame_shift(&scenario.post);
    let pre_eq = solve_equilibrium(&pre, 0, 0.0)?;
    let post_eq = solve_equilibrium(&post, 0, pre_eq.angles[0])?;
    Ok(FaultSetup {
        omega_pre,
        omega_fault,
        omega_post,
        pre: pre_eq,
        post: post_eq,
    })
}

fn frame_stage(stage: &StageModel, omega_post: f64) -> StageModel {
    shift_by(stage, omega_post)
}

/// Fault-on trajectory from the pre-fault equilibrium over
/// `[t_fault, t_fault + horizon]`, in the post-fault frame.
pub fn simulate_fault(scenario: &Scenario, horizon: f64) -> Result<Trajectory> {
    let setup = fault_setup(scenario)?;
    simulate_fault_from(scenario, &setup, horizon)
}

pub fn simulate_fault_from(
    scenario: &Scenario,
    setup: &FaultSetup,
    horizon: f64,
) -> Result<Trajectory> {
    let fault = frame_stage(&scenario.fault, setup.omega_post);
    let ode = OdeSettings::from_solver(&scenario.solver);
    integrate(
        |_, x, dx| coupled_rhs(&fault, x, dx),
        &setup.initial_state(),
        scenario.t_fault,
        scenario.t_fault + horizon,
        &ode,
    )
}

/// Crossing times of one machine. Times are absolute (same clock as
/// `t_fault`); `f64::INFINITY` means no crossing within the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineCrossing {
    pub machine: usize,
    pub t_mrpi: f64,
    pub t_admissible: f64,
}

/// Projection of the trajectory state onto machine `i`'s plane.
fn project(bounds: &Bounds, i: usize, x: &[f64]) -> Point {
    let m = x.len() / 2;
    Point::new(bounds.rebase(i, x[i]), x[m + i])
}

/// First time the projected state is not in the interior of `set`; the start
/// time when it never was, `None` when it stays inside throughout.
fn first_exit(traj: &Trajectory, bounds: &Bounds, set: &SafetySet, tol: f64) -> Option<f64> {
    let i = set.machine;
    event_time_sub(
        traj,
        &mut |x: &[f64]| !set.contains(project(bounds, i, x)),
        tol,
        8,
    )
}

/// Crossing times per machine. `sets[i]` is `(admissible, mrpi)` of machine
/// `i`.
pub fn crossing_times(
    traj: &Trajectory,
    bounds: &Bounds,
    sets: &[(SafetySet, SafetySet)],
    tol: f64,
) -> Vec<MachineCrossing> {
    sets.par_iter()
        .enumerate()
        .map(|(i, (adm, mrpi))| MachineCrossing {
            machine: i,
            t_mrpi: first_exit(traj, bounds, mrpi, tol).unwrap_or(f64::INFINITY),
            t_admissible: first_exit(traj, bounds, adm, tol).unwrap_or(f64::INFINITY),
        })
        .collect()
}

/// Safe/unsafe clearing-time bracket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CctReport {
    pub crossings: Vec<MachineCrossing>,
    pub t_safe: f64,
    pub t_unsafe: f64,
    /// Machines attaining `t_safe`.
    pub critical_safe: Vec<usize>,
    /// Machines attaining `t_unsafe`.
    pub critical_unsafe: Vec<usize>,
    /// Fault-on horizon simulated, seconds.
    pub horizon: f64,
    /// True when `t_safe` is infinite only because the horizon ran out.
    pub safe_horizon_limited: bool,
    pub unsafe_horizon_limited: bool,
}

impl CctReport {
    /// Machines reported as critical: those attaining `t_safe`, or those
    /// attaining `t_unsafe` when `t_safe` is not finite.
    pub fn critical(&self) -> &[usize] {
        if self.t_safe.is_finite() {
            &self.critical_safe
        } else {
            &self.critical_unsafe
        }
    }

    /// One-line summary; `t_clear` adds the classification.
    pub fn summary_line(&self, names: &dyn Fn(usize) -> String, t_clear: Option<f64>) -> String {
        let crit = self
            .critical()
            .iter()
            .map(|&i| names(i))
            .collect::<Vec<_>>()
            .join(",");
        let mut s = format!(
            "t_safe={}, t_unsafe={}, critical={}",
            fmt_time(self.t_safe),
            fmt_time(self.t_unsafe),
            if crit.is_empty() {
                "none".to_string()
            } else {
                crit
            }
        );
        if let Some(tc) = t_clear {
            s.push_str(&format!(
                ", classification(t_C={tc})={}",
                classify(tc, self).label()
            ));
        }
        s
    }
}

fn fmt_time(t: f64) -> String {
    if t.is_finite() {
        format!("{t:.4}")
    } else {
        "inf".to_string()
    }
}

fn argmin(values: impl Iterator<Item = f64> + Clone) -> (f64, Vec<usize>) {
    let best = values.clone().fold(f64::INFINITY, f64::min);
    let idx = if best.is_finite() {
        values
            .enumerate()
            .filter(|(_, v)| *v <= best + 1e-12)
            .map(|(i, _)| i)
            .collect()
    } else {
        Vec::new()
    };
    (best, idx)
}

/// Infima over machines of the crossing times.
pub fn cct_summary(crossings: Vec<MachineCrossing>, horizon: f64) -> CctReport {
    let (t_safe, critical_safe) = argmin(crossings.iter().map(|c| c.t_mrpi));
    let (t_unsafe, critical_unsafe) = argmin(crossings.iter().map(|c| c.t_admissible));
    CctReport {
        crossings,
        t_safe,
        t_unsafe,
        critical_safe,
        critical_unsafe,
        horizon,
        safe_horizon_limited: !t_safe.is_finite(),
        unsafe_horizon_limited: !t_unsafe.is_finite(),
    }
}

/// Threshold classification of a clearing time.
pub fn classify(t_clear: f64, report: &CctReport) -> Classification {
    if t_clear <= report.t_safe {
        Classification::Safe
    } else if t_clear >= report.t_unsafe {
        Classification::Unsafe
    } else {
        Classification::PotentiallySafe
    }
}

/// Simulates the fault-on system, extending the horizon by doubling up to
/// the solver's cap while either infimum is still pending, and returns the
/// bracket together with the longest trajectory simulated.
pub fn analyze_fault(
    scenario: &Scenario,
    setup: &FaultSetup,
    bounds: &Bounds,
    sets: &[(SafetySet, SafetySet)],
) -> Result<(CctReport, Trajectory)> {
    let solver = &scenario.solver;
    let mut horizon = solver.horizon_s;
    loop {
        let traj = simulate_fault_from(scenario, setup, horizon)?;
        let report = cct_summary(
            crossing_times(&traj, bounds, sets, solver.event_tol),
            horizon,
        );
        let pending = !report.t_safe.is_finite() || !report.t_unsafe.is_finite();
        if !pending || horizon >= solver.max_horizon_s {
            return Ok((report, traj));
        }
        horizon = (2.0 * horizon).min(solver.max_horizon_s);
    }
}

/// Outcome of a direct post-fault simulation from the clearing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationVerdict {
    pub t_clear: f64,
    pub horizon: f64,
    /// Every angle stayed within its slab over the horizon.
    pub in_slab: bool,
    /// First slab exit: machine and absolute time.
    pub exit: Option<(usize, f64)>,
    pub clearing_state: Vec<f64>,
    pub final_state: Vec<f64>,
}

/// Runs the fault-on system to `t_clear`, then the post-fault system for
/// `horizon` seconds, and reports the first slab exit if any.
pub fn verify_classification(
    scenario: &Scenario,
    t_clear: f64,
    horizon: f64,
) -> Result<SimulationVerdict> {
    let setup = fault_setup(scenario)?;
    verify_classification_from(scenario, &setup, t_clear, horizon)
}

pub fn verify_classification_from(
    scenario: &Scenario,
    setup: &FaultSetup,
    t_clear: f64,
    horizon: f64,
) -> Result<SimulationVerdict> {
    let bounds = scenario
        .bounds
        .as_ref()
        .ok_or_else(|| Error::Validation("verification needs bounds".into()))?;
    if t_clear < scenario.t_fault {
        return Err(Error::Validation(format!(
            "clearing time {t_clear} precedes the fault time {}",
            scenario.t_fault
        )));
    }
    let ode = OdeSettings::from_solver(&scenario.solver);
    let m = scenario.m();
    let outside = |x: &[f64]| (0..m).find(|&i| !bounds.contains(i, bounds.rebase(i, x[i])));

    let x_clear = if t_clear > scenario.t_fault {
        simulate_fault_from(scenario, setup, t_clear - scenario.t_fault)?
            .last_state()
            .to_vec()
    } else {
        setup.initial_state()
    };
    let post = frame_stage(&scenario.post, setup.omega_post);
    let (traj, hit) = integrate_until(
        |_, x, dx| coupled_rhs(&post, x, dx),
        &x_clear,
        t_clear,
        t_clear + horizon,
        &ode,
        |_, x| outside(x).is_some(),
        None::<fn(&[f64]) -> u64>,
    )?;
    let final_state = traj.last_state().to_vec();
    let exit = hit.map(|t| (outside(&final_state).unwrap_or(0), t));
    Ok(SimulationVerdict {
        t_clear,
        horizon,
        in_slab: exit.is_none(),
        exit,
        clearing_state: x_clear,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crossing(i: usize, tm: f64, ta: f64) -> MachineCrossing {
        MachineCrossing {
            machine: i,
            t_mrpi: tm,
            t_admissible: ta,
        }
    }

    #[test]
    fn summary_takes_infima() {
        let r = cct_summary(
            vec![crossing(0, 0.0, 1.3761), crossing(1, f64::INFINITY, 4.0)],
            5.0,
        );
        assert_eq!(r.t_safe, 0.0);
        assert_eq!(r.t_unsafe, 1.3761);
        assert_eq!(r.critical(), &[0]);
        assert_eq!(classify(1.5, &r), Classification::Unsafe);
        assert_eq!(classify(1.0, &r), Classification::PotentiallySafe);
        assert_eq!(classify(0.0, &r), Classification::Safe);
    }

    #[test]
    fn all_infinite_is_horizon_limited() {
        let r = cct_summary(vec![crossing(0, f64::INFINITY, f64::INFINITY)], 5.0);
        assert!(r.safe_horizon_limited && r.unsafe_horizon_limited);
        assert!(r.critical().is_empty());
        assert_eq!(classify(100.0, &r), Classification::Safe);
    }

    #[test]
    fn single_machine_summary_is_identity() {
        let r = cct_summary(vec![crossing(0, 0.4, 0.9)], 5.0);
        assert_eq!((r.t_safe, r.t_unsafe), (0.4, 0.9));
    }

    #[test]
    fn summary_line_format() {
        let r = cct_summary(vec![crossing(0, 0.0, 1.3761)], 5.0);
        let line = r.summary_line(&|i| format!("G{}", i + 1), Some(1.5));
        assert_eq!(
            line,
            "t_safe=0.0000, t_unsafe=1.3761, critical=G1, classification(t_C=1.5)=unsafe"
        );
    }

    #[test]
    fn classify_is_a_threshold_function() {
        let r = cct_summary(vec![crossing(0, 0.2, 0.7)], 5.0);
        let mut last = Classification::Safe;
        for k in 0..100 {
            let c = classify(k as f64 * 0.01, &r);
            let rank = |c: Classification| c as u8;
            assert!(rank(c) >= rank(last));
            last = c;
        }
    }

    #[test]
    fn unfaulted_system_stays_at_rest() {
        let s = StageModel::new(
            vec![0.5, -0.5],
            vec![1.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let mut sc = Scenario::new(s.clone(), s.clone(), s, 0.0).unwrap();
        sc.bounds = Some(Bounds::new(vec![-0.5, -1.0], vec![0.5, 0.0]).unwrap());
        let v = verify_classification(&sc, 0.0, 20.0).unwrap();
        assert!(v.in_slab);
        let v = verify_classification(&sc, 3.0, 20.0).unwrap();
        assert!(v.in_slab);
        assert!((v.final_state[1] + std::f64::consts::FRAC_PI_6).abs() < 1e-6);
    }

    #[test]
    fn frequency_offset_enters_initial_velocity() {
        let pre = StageModel::new(
            vec![0.6, -0.4],
            vec![1.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let post = StageModel::new(
            vec![0.5, -0.5],
            vec![1.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let sc = Scenario::new(pre, post.clone(), post, 0.0).unwrap();
        let setup = fault_setup(&sc).unwrap();
        assert!((setup.omega_pre - 0.1).abs() < 1e-15);
        assert_eq!(setup.omega_post, 0.0);
        let x = setup.initial_state();
        assert!((x[2] - 0.1).abs() < 1e-15 && (x[3] - 0.1).abs() < 1e-15);
    }
}
