//! Search over the angle bounds for the largest total MRPI area.
//!
//! Candidates are scored by assembling every machine's MRPI for the
//! candidate slab and summing the areas. The search is a seeded
//! differential evolution (rand/1/bin) over the `2m` bound coordinates. Each
//! trial is projected onto the feasible box before it is evaluated, so every
//! candidate the search produces contains both equilibria.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cct::{fault_setup, FaultSetup};
use crate::dynamics::MachineModel;
use crate::error::{Error, Result};
use crate::model::{rotating_frame_shift, Bounds, Scenario, StageModel};
use crate::safety_sets::{assemble_set, SetKind, SetSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsCandidate {
    pub bounds: Bounds,
    /// Weighted total MRPI area; `-inf` when infeasible.
    pub objective: f64,
    pub feasible: bool,
    /// Unweighted MRPI area per machine (empty when infeasible).
    pub areas: Vec<f64>,
    /// 1-based index of this evaluation in the search.
    pub evaluation: usize,
    /// Machines whose set assembly failed and were scored 0.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOptions {
    /// Inflation of the equilibrium hull for the initial candidate, radians.
    pub margin: f64,
    /// How far a bound may move away from the equilibrium hull, radians.
    pub reach: f64,
    /// Per-machine objective weights; uniform when `None`.
    pub weights: Option<Vec<f64>>,
    /// Population size; chosen from the dimension when 0.
    pub population: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover probability.
    pub cr: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            margin: 0.3,
            reach: PI / 2.0,
            weights: None,
            population: 0,
            f: 0.7,
            cr: 0.9,
        }
    }
}

/// One row of the search history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub generation: usize,
    pub candidate: usize,
    pub objective: f64,
    pub feasible: bool,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best: BoundsCandidate,
    pub history: Vec<HistoryEntry>,
    /// Best objective after each evaluation.
    pub best_trace: Vec<f64>,
    pub evaluations: usize,
}

impl OptimizeResult {
    /// History as CSV: `generation,candidate,objective,feasible,lower_1..,upper_1..`.
    pub fn history_csv(&self) -> String {
        let m = self.best.bounds.m();
        let mut s = String::from("generation,candidate,objective,feasible");
        for i in 1..=m {
            let _ = write!(s, ",lower_{i}");
        }
        for i in 1..=m {
            let _ = write!(s, ",upper_{i}");
        }
        s.push('\n');
        for h in &self.history {
            let _ = write!(
                s,
                "{},{},{},{}",
                h.generation, h.candidate, h.objective, h.feasible
            );
            for v in h.bounds.lower.iter().chain(&h.bounds.upper) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Everything needed to score candidates without recomputing equilibria.
struct Context {
    post: StageModel,
    pre_angles: Vec<f64>,
    post_angles: Vec<f64>,
    settings: SetSettings,
    weights: Vec<f64>,
}

impl Context {
    fn new(scenario: &Scenario, setup: &FaultSetup, weights: Option<&[f64]>) -> Result<Self> {
        let m = scenario.m();
        let weights = match weights {
            Some(w) if w.len() != m => {
                return Err(Error::Validation(format!(
                    "{} weights given for {m} machines",
                    w.len()
                )))
            }
            Some(w) if w.iter().any(|v| !v.is_finite() || *v < 0.0) => {
                return Err(Error::Validation(
                    "weights must be finite and non-negative".into(),
                ))
            }
            Some(w) => w.to_vec(),
            None => vec![1.0; m],
        };
        Ok(Context {
            post: rotating_frame_shift(&scenario.post).0,
            pre_angles: setup.pre.angles.clone(),
            post_angles: setup.post.angles.clone(),
            settings: SetSettings::from_solver(&scenario.solver),
            weights,
        })
    }

    fn m(&self) -> usize {
        self.pre_angles.len()
    }

    fn hull(&self, i: usize) -> (f64, f64) {
        let (a, b) = (self.pre_angles[i], self.post_angles[i]);
        (a.min(b), a.max(b))
    }

    fn feasible(&self, bounds: &Bounds) -> bool {
        (0..self.m()).all(|i| {
            let (lo, hi) = self.hull(i);
            bounds.lower[i] <= lo && hi <= bounds.upper[i]
        })
    }

    fn evaluate(&self, bounds: &Bounds, evaluation: usize) -> BoundsCandidate {
        if bounds.m() != self.m() || bounds.validate().is_err() || !self.feasible(bounds) {
            return BoundsCandidate {
                bounds: bounds.clone(),
                objective: f64::NEG_INFINITY,
                feasible: false,
                areas: Vec::new(),
                evaluation,
                warnings: Vec::new(),
            };
        }
        let results: Vec<std::result::Result<f64, String>> = (0..self.m())
            .into_par_iter()
            .map(|i| {
                let machine = MachineModel::from_stage(&self.post, bounds, i);
                assemble_set(&machine, bounds, SetKind::Mrpi, &self.settings, None)
                    .map(|s| s.area())
                    .map_err(|e| format!("G{}: {e}", i + 1))
            })
            .collect();
        let mut areas = Vec::with_capacity(self.m());
        let mut warnings = Vec::new();
        for r in results {
            match r {
                Ok(a) => areas.push(a),
                Err(w) => {
                    areas.push(0.0);
                    warnings.push(w);
                }
            }
        }
        let objective = areas.iter().zip(&self.weights).map(|(a, w)| a * w).sum();
        BoundsCandidate {
            bounds: bounds.clone(),
            objective,
            feasible: true,
            areas,
            evaluation,
            warnings,
        }
    }

    /// Clamps a coordinate vector `[lower.., upper..]` onto the feasible
    /// search box.
    fn project(&self, v: &[f64], reach: f64) -> Bounds {
        let m = self.m();
        let mut lower = vec![0.0; m];
        let mut upper = vec![0.0; m];
        for i in 0..m {
            let (lo, hi) = self.hull(i);
            let r = reach.min(PI - 0.5 * (hi - lo) - 1e-6).max(0.0);
            lower[i] = v[i].clamp(lo - r, lo);
            upper[i] = v[m + i].clamp(hi, hi + r);
            if upper[i] - lower[i] < 1e-6 {
                upper[i] = lower[i] + 1e-6;
            }
        }
        Bounds { lower, upper }
    }

    fn initial(&self, margin: f64, reach: f64) -> Vec<f64> {
        let m = self.m();
        let mut v = vec![0.0; 2 * m];
        for i in 0..m {
            let (lo, hi) = self.hull(i);
            v[i] = lo - margin;
            v[m + i] = hi + margin;
        }
        coords(&self.project(&v, reach))
    }
}

fn coords(b: &Bounds) -> Vec<f64> {
    b.lower.iter().chain(&b.upper).copied().collect()
}

/// Weighted total MRPI area of `bounds`; `-inf` when the bounds do not
/// contain both equilibria.
pub fn objective(
    scenario: &Scenario,
    bounds: &Bounds,
    weights: Option<&[f64]>,
) -> Result<BoundsCandidate> {
    let setup = fault_setup(scenario)?;
    objective_with(scenario, &setup, bounds, weights)
}

pub fn objective_with(
    scenario: &Scenario,
    setup: &FaultSetup,
    bounds: &Bounds,
    weights: Option<&[f64]>,
) -> Result<BoundsCandidate> {
    Ok(Context::new(scenario, setup, weights)?.evaluate(bounds, 1))
}

/// Differential-evolution search with `budget` objective evaluations.
pub fn optimize_bounds(
    scenario: &Scenario,
    budget: usize,
    seed: u64,
    options: &OptimizeOptions,
) -> Result<OptimizeResult> {
    let setup = fault_setup(scenario)?;
    optimize_bounds_with(scenario, &setup, budget, seed, options)
}

pub fn optimize_bounds_with(
    scenario: &Scenario,
    setup: &FaultSetup,
    budget: usize,
    seed: u64,
    options: &OptimizeOptions,
) -> Result<OptimizeResult> {
    if budget == 0 {
        return Err(Error::Validation("budget must be at least 1".into()));
    }
    if !(options.margin >= 0.0
        && options.reach >= 0.0
        && options.f > 0.0
        && (0.0..=1.0).contains(&options.cr))
    {
        return Err(Error::Validation("invalid optimizer options".into()));
    }
    let ctx = Context::new(scenario, setup, options.weights.as_deref())?;
    let dim = 2 * ctx.m();
    let np = if options.population > 0 {
        options.population.max(4)
    } else {
        (5 * dim).clamp(8, 40)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::new();
    let mut best_trace = Vec::new();
    let mut best: Option<BoundsCandidate> = None;

    let mut record =
        |generation: usize, batch: Vec<BoundsCandidate>, history: &mut Vec<HistoryEntry>| {
            for (k, c) in batch.iter().enumerate() {
                history.push(HistoryEntry {
                    generation,
                    candidate: k,
                    objective: c.objective,
                    feasible: c.feasible,
                    bounds: c.bounds.clone(),
                });
                if c.feasible && best.as_ref().is_none_or(|b| c.objective > b.objective) {
                    best = Some(c.clone());
                }
                best_trace.push(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.objective));
            }
            batch
        };

    // Generation 0: the inflated hull plus random perturbations of it.
    let init = ctx.initial(options.margin, options.reach);
    let n0 = np.min(budget);
    let mut starts = vec![init.clone()];
    for _ in 1..n0 {
        let v: Vec<f64> = init
            .iter()
            .map(|&x| x + options.margin.max(0.05) * rng.random_range(-1.0..=1.0))
            .collect();
        starts.push(coords(&ctx.project(&v, options.reach)));
    }
    let mut used = 0;
    let batch = evaluate_batch(&ctx, &starts, options.reach, used);
    used += batch.len();
    let mut population = record(0, batch, &mut history);

    let mut generation = 1;
    while used < budget && population.len() >= 4 {
        let n = population.len().min(budget - used);
        let trials: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let (r1, r2, r3) = distinct_three(&mut rng, population.len(), j);
                let (a, b, c) = (
                    coords(&population[r1].bounds),
                    coords(&population[r2].bounds),
                    coords(&population[r3].bounds),
                );
                let target = coords(&population[j].bounds);
                let jrand = rng.random_range(0..dim);
                (0..dim)
                    .map(|k| {
                        if k == jrand || rng.random::<f64>() < options.cr {
                            a[k] + options.f * (b[k] - c[k])
                        } else {
                            target[k]
                        }
                    })
                    .collect()
            })
            .collect();
        let batch = evaluate_batch(&ctx, &trials, options.reach, used);
        used += batch.len();
        let batch = record(generation, batch, &mut history);
        for (j, trial) in batch.into_iter().enumerate() {
            if trial.objective >= population[j].objective {
                population[j] = trial;
            }
        }
        generation += 1;
    }

    let best = best.ok_or(Error::NoFeasibleCandidate { evaluations: used })?;
    Ok(OptimizeResult {
        best,
        history,
        best_trace,
        evaluations: used,
    })
}

fn evaluate_batch(
    ctx: &Context,
    coords: &[Vec<f64>],
    reach: f64,
    offset: usize,
) -> Vec<BoundsCandidate> {
    coords
        .par_iter()
        .enumerate()
        .map(|(k, v)| ctx.evaluate(&ctx.project(v, reach), offset + k + 1))
        .collect()
}

fn distinct_three(rng: &mut ChaCha8Rng, n: usize, exclude: usize) -> (usize, usize, usize) {
    let mut pick = |taken: &[usize]| loop {
        let r = rng.random_range(0..n);
        if r != exclude && !taken.contains(&r) {
            return r;
        }
    };
    let a = pick(&[]);
    let b = pick(&[a]);
    let c = pick(&[a, b]);
    (a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_scenario;

    fn two_machine() -> Scenario {
        load_scenario(
            r#"
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
"#,
        )
        .unwrap()
    }

    #[test]
    fn infeasible_bounds_score_negative_infinity() {
        let sc = two_machine();
        // Equilibria sit at about +-0.26 around the centre of mass.
        let b = Bounds::new(vec![0.5, -1.0], vec![1.0, 1.0]).unwrap();
        let c = objective(&sc, &b, None).unwrap();
        assert!(!c.feasible);
        assert_eq!(c.objective, f64::NEG_INFINITY);
        assert!(c.areas.is_empty());
    }

    #[test]
    fn budget_one_returns_inflated_hull() {
        let sc = two_machine();
        let setup = fault_setup(&sc).unwrap();
        let r = optimize_bounds_with(&sc, &setup, 1, 7, &OptimizeOptions::default()).unwrap();
        assert_eq!(r.evaluations, 1);
        for i in 0..2 {
            let (a, b) = (setup.pre.angles[i], setup.post.angles[i]);
            assert!((r.best.bounds.lower[i] - (a.min(b) - 0.3)).abs() < 1e-12);
            assert!((r.best.bounds.upper[i] - (a.max(b) + 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_length_checked() {
        let sc = two_machine();
        let b = Bounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert!(objective(&sc, &b, Some(&[1.0])).is_err());
    }

    #[test]
    fn projection_restores_containment() {
        let sc = two_machine();
        let setup = fault_setup(&sc).unwrap();
        let ctx = Context::new(&sc, &setup, None).unwrap();
        let b = ctx.project(&[1.0, 1.0, -1.0, -1.0], 0.5);
        assert!(ctx.feasible(&b));
        assert!(b.validate().is_ok());
    }
}
