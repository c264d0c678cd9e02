//! Effective-network stage models and the three-stage fault scenario.
//!
//! Documents use 1-based machine indices (G1..Gm); everything in memory is
//! 0-based.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One effective-network system: injections `p`, damping `d` and the
/// symmetric coupling matrix `K` (row-major, zero diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    p: Vec<f64>,
    d: Vec<f64>,
    k: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl StageModel {
    /// Builds and validates a stage. Diagonal entries of `k` are ignored and
    /// stored as zero.
    pub fn new(p: Vec<f64>, d: Vec<f64>, k: Vec<Vec<f64>>) -> Result<Self> {
        Self::validated("stage", p, d, k)
    }

    fn validated(name: &str, p: Vec<f64>, d: Vec<f64>, k: Vec<Vec<f64>>) -> Result<Self> {
        let m = p.len();
        if m == 0 {
            return Err(Error::Validation(format!("{name}: empty machine set")));
        }
        if d.len() != m {
            return Err(Error::Validation(format!(
                "{name}.d has length {} but p has length {m}",
                d.len()
            )));
        }
        if k.len() != m {
            return Err(Error::Validation(format!(
                "{name}.K has {} rows, expected {m}",
                k.len()
            )));
        }
        for (i, row) in k.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Validation(format!(
                    "{name}.K row {} has {} entries, expected {m}",
                    i + 1,
                    row.len()
                )));
            }
        }
        for (i, (&pi, &di)) in p.iter().zip(&d).enumerate() {
            if !pi.is_finite() {
                return Err(Error::Validation(format!(
                    "{name}.p[{}] is not finite",
                    i + 1
                )));
            }
            if !(di.is_finite() && di > 0.0) {
                return Err(Error::Validation(format!(
                    "{name}.d[{}] = {di} must be finite and > 0",
                    i + 1
                )));
            }
        }
        let scale = k.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut flat = vec![0.0; m * m];
        let mut edges = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let v = k[i][j];
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "{name}.K[{},{}] is not finite",
                        i + 1,
                        j + 1
                    )));
                }
                if i == j {
                    continue;
                }
                if v < 0.0 {
                    return Err(Error::Validation(format!(
                        "{name}.K[{},{}] = {v} is negative",
                        i + 1,
                        j + 1
                    )));
                }
                if j > i && (v - k[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::Validation(format!(
                        "{name}.K not symmetric at ({},{})",
                        i + 1,
                        j + 1
                    )));
                }
                flat[i * m + j] = v;
            }
        }
        // Enforce exact symmetry from the upper triangle.
        for i in 0..m {
            for j in (i + 1)..m {
                flat[j * m + i] = flat[i * m + j];
                if flat[i * m + j] > 0.0 {
                    edges.push((i, j));
                }
            }
        }
        Ok(StageModel {
            p,
            d,
            k: flat,
            edges,
        })
    }

    pub fn m(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.p.len() + j]
    }

    /// Coupling matrix as rows.
    pub fn k_rows(&self) -> Vec<Vec<f64>> {
        self.k.chunks(self.m()).map(|r| r.to_vec()).collect()
    }

    /// Edges `(i, j)` with `i < j` and `K_ij > 0`, 0-based.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbours of machine `i` (0-based).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.m())
            .filter(|&j| j != i && self.k(i, j) > 0.0)
            .collect()
    }

    /// Returns a copy with the injections replaced.
    pub fn with_injections(&self, p: Vec<f64>) -> Result<Self> {
        if p.len() != self.m() {
            return Err(Error::Validation("injection vector length mismatch".into()));
        }
        Ok(StageModel { p, ..self.clone() })
    }
}

/// Removes the synchronous drift: returns the stage with
/// `p_i - d_i * omega_synch` and `omega_synch = sum(p) / sum(d)`.
pub fn rotating_frame_shift(stage: &StageModel) -> (StageModel, f64) {
    let omega = stage.p.iter().sum::<f64>() / stage.d.iter().sum::<f64>();
    (shift_by(stage, omega), omega)
}

/// Expresses a stage in a frame rotating at `omega`.
pub fn shift_by(stage: &StageModel, omega: f64) -> StageModel {
    let p = stage
        .p
        .iter()
        .zip(&stage.d)
        .map(|(p, d)| p - d * omega)
        .collect();
    StageModel { p, ..stage.clone() }
}

/// Angle box `[lower_i, upper_i]` per machine, radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Bounds { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::Validation(format!(
                "bounds.lower has length {} but bounds.upper has length {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Validation(format!(
                    "bounds for G{} not finite",
                    i + 1
                )));
            }
            if lo >= hi {
                return Err(Error::Validation(format!(
                    "bounds for G{}: lower {lo} must be < upper {hi}",
                    i + 1
                )));
            }
            if hi - lo >= 2.0 * PI {
                return Err(Error::Validation(format!(
                    "bounds for G{}: width {} is not below 2*pi",
                    i + 1,
                    hi - lo
                )));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, i: usize, angle: f64) -> bool {
        self.lower[i] <= angle && angle <= self.upper[i]
    }

    /// Shifts a lifted angle by a multiple of 2*pi so it lies within pi of
    /// the slab centre.
    pub fn rebase(&self, i: usize, angle: f64) -> f64 {
        let center = 0.5 * (self.lower[i] + self.upper[i]);
        angle - 2.0 * PI * ((angle - center) / (2.0 * PI)).round()
    }
}

/// Integration and set-construction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Initial fault-on horizon, seconds.
    pub horizon_s: f64,
    /// Cap on the fault-on horizon when extending it, seconds.
    pub max_horizon_s: f64,
    /// Velocity cap for the planar sets, rad/s. Chosen automatically when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z2_cap: Option<f64>,
    /// Oracle grid points per axis.
    pub grid_resolution: usize,
    /// Event localization tolerance, seconds.
    pub event_tol: f64,
    /// Backward horizon for barrier curves, seconds.
    pub backward_horizon_s: f64,
    /// Horizon for post-fault verification and the grid oracle, seconds.
    pub verify_horizon_s: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            horizon_s: 5.0,
            max_horizon_s: 60.0,
            z2_cap: None,
            grid_resolution: 200,
            event_tol: 1e-6,
            backward_horizon_s: 30.0,
            verify_horizon_s: 20.0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "solver.{name} = {v} must be > 0"
                )))
            }
        };
        pos("abs_tol", self.abs_tol)?;
        pos("rel_tol", self.rel_tol)?;
        pos("horizon_s", self.horizon_s)?;
        pos("max_horizon_s", self.max_horizon_s)?;
        pos("event_tol", self.event_tol)?;
        pos("backward_horizon_s", self.backward_horizon_s)?;
        pos("verify_horizon_s", self.verify_horizon_s)?;
        if let Some(cap) = self.z2_cap {
            pos("z2_cap", cap)?;
        }
        if self.grid_resolution < 2 {
            return Err(Error::Validation(
                "solver.grid_resolution must be >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Same settings with both tolerances scaled by `factor`.
    pub fn with_tolerance_scale(&self, factor: f64) -> Self {
        SolverSettings {
            abs_tol: self.abs_tol * factor,
            rel_tol: self.rel_tol * factor,
            ..self.clone()
        }
    }
}

/// Generator parameters carried through untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Pre-fault, fault-on and post-fault stages plus analysis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pre: StageModel,
    pub fault: StageModel,
    pub post: StageModel,
    pub t_fault: f64,
    pub bounds: Option<Bounds>,
    pub solver: SolverSettings,
    pub metadata: Option<Metadata>,
}

impl Scenario {
    pub fn new(pre: StageModel, fault: StageModel, post: StageModel, t_fault: f64) -> Result<Self> {
        let s = Scenario {
            pre,
            fault,
            post,
            t_fault,
            bounds: None,
            solver: SolverSettings::default(),
            metadata: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.post.m()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.pre.m();
        if self.fault.m() != m || self.post.m() != m {
            return Err(Error::Unsupported(format!(
                "stages have machine counts {}/{}/{}; differing counts are not supported",
                m,
                self.fault.m(),
                self.post.m()
            )));
        }
        if !self.t_fault.is_finite() {
            return Err(Error::Validation("t_fault is not finite".into()));
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
            if b.m() != m {
                return Err(Error::Validation(format!(
                    "bounds have {} machines, scenario has {m}",
                    b.m()
                )));
            }
        }
        self.solver.validate()?;
        if let Some(meta) = &self.metadata {
            let lens = [
                meta.names.as_ref().map(Vec::len),
                meta.h.as_ref().map(Vec::len),
                meta.d.as_ref().map(Vec::len),
                meta.r.as_ref().map(Vec::len),
            ];
            if lens.iter().flatten().any(|&l| l != m) {
                return Err(Error::Validation(format!(
                    "metadata vectors must have length {m}"
                )));
            }
        }
        Ok(())
    }

    /// Display name of machine `i` (0-based).
    pub fn name(&self, i: usize) -> String {
        self.metadata
            .as_ref()
            .and_then(|m| m.names.as_ref())
            .and_then(|n| n.get(i).cloned())
            .unwrap_or_else(|| format!("G{}", i + 1))
    }

    /// Serializes to the scenario document format.
    pub fn to_toml(&self) -> String {
        let doc = ScenarioDoc {
            t_fault: self.t_fault,
            pre: StageDoc::from(&self.pre),
            fault: StageDoc::from(&self.fault),
            post: StageDoc::from(&self.post),
            bounds: self.bounds.clone(),
            solver: Some(self.solver.clone()),
            metadata: self.metadata.clone(),
        };
        toml::to_string(&doc).expect("scenario documents always serialize")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    p: Vec<f64>,
    d: Vec<f64>,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
}

impl From<&StageModel> for StageDoc {
    fn from(s: &StageModel) -> Self {
        StageDoc {
            p: s.p.clone(),
            d: s.d.clone(),
            k: s.k_rows(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    t_fault: f64,
    pre: StageDoc,
    fault: StageDoc,
    post: StageDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Bounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<SolverSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<Metadata>,
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        Error::Parse {
            message: e.message().to_string(),
            line,
            column,
        }
    })?;
    let stage = |name: &str, s: StageDoc| StageModel::validated(name, s.p, s.d, s.k);
    let scenario = Scenario {
        pre: stage("pre", doc.pre)?,
        fault: stage("fault", doc.fault)?,
        post: stage("post", doc.post)?,
        t_fault: doc.t_fault,
        bounds: doc.bounds,
        solver: doc.solver.unwrap_or_default(),
        metadata: doc.metadata,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Reads and parses a scenario file.
pub fn load_scenario_file(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    load_scenario(&text)
}

/// Parses a bounds document (`lower`, `upper` arrays).
pub fn load_bounds(text: &str) -> Result<Bounds> {
    let b: Bounds = toml::from_str(text).map_err(|e| Error::Parse {
        message: e.message().to_string(),
        line: e.span().map(|s| line_col(text, s.start).0),
        column: e.span().map(|s| line_col(text, s.start).1),
    })?;
    b.validate()?;
    Ok(b)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Full machine state: lifted rotor angles and angular velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub angles: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl GridState {
    pub fn new(angles: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if angles.len() != velocities.len() {
            return Err(Error::Validation("angle/velocity length mismatch".into()));
        }
        if angles.iter().chain(&velocities).any(|v| !v.is_finite()) {
            return Err(Error::Validation("state has non-finite entries".into()));
        }
        Ok(GridState { angles, velocities })
    }

    /// Packs as `[angles..., velocities...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.angles.clone();
        v.extend_from_slice(&self.velocities);
        v
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let m = x.len() / 2;
        GridState {
            angles: x[..m].to_vec(),
            velocities: x[m..].to_vec(),
        }
    }

    /// Angles wrapped to (-pi, pi].
    pub fn wrapped_angles(&self) -> Vec<f64> {
        self.angles.iter().map(|&a| wrap_angle(a)).collect()
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_MACHINE: &str = r#"
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
"#;

    #[test]
    fn minimal_document_loads() {
        let s = load_scenario(TWO_MACHINE).unwrap();
        assert_eq!(s.m(), 2);
        assert_eq!(s.pre.edges(), &[(0, 1)]);
        assert_eq!(s.solver, SolverSettings::default());
        assert!(s.bounds.is_none());
    }

    #[test]
    fn asymmetric_coupling_is_rejected() {
        let text = TWO_MACHINE.replacen("[[0.0, 1.0], [1.0, 0.0]]", "[[0.0, 1.0], [0.9, 0.0]]", 1);
        let err = load_scenario(&text).unwrap_err();
        assert!(
            err.to_string().contains("K not symmetric at (1,2)"),
            "{err}"
        );
    }

    #[test]
    fn nonpositive_damping_is_rejected() {
        let text = TWO_MACHINE.replacen("d = [1.0, 1.0]", "d = [1.0, 0.0]", 1);
        let err = load_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("pre.d[2]"), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = TWO_MACHINE.replacen("p = [0.5, -0.5]", "p = [0.5, oops]", 1);
        match load_scenario(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, Some(5)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{TWO_MACHINE}\n[solver]\nabs_tol = 1e-9\nbogus = 1\n");
        assert!(matches!(load_scenario(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn unequal_machine_counts_are_unsupported() {
        let text = TWO_MACHINE.replacen(
            "[fault]\np = [0.5, -0.5]\nd = [1.0, 1.0]\nK = [[0.0, 0.2], [0.2, 0.0]]",
            "[fault]\np = [0.0]\nd = [1.0]\nK = [[0.0]]",
            1,
        );
        assert!(matches!(load_scenario(&text), Err(Error::Unsupported(_))));
    }

    #[test]
    fn diagonal_is_stored_as_zero() {
        let s = StageModel::new(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![vec![5.0, 1.0], vec![1.0, 3.0]],
        )
        .unwrap();
        assert_eq!(s.k(0, 0), 0.0);
        assert_eq!(s.k(1, 1), 0.0);
    }

    #[test]
    fn frame_shift_examples() {
        let s = StageModel::new(
            vec![0.5, -0.5],
            vec![1.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let (shifted, w) = rotating_frame_shift(&s);
        assert_eq!(w, 0.0);
        assert_eq!(shifted, s);

        let s = StageModel::new(
            vec![1.0, 1.0],
            vec![1.0, 3.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let (shifted, w) = rotating_frame_shift(&s);
        assert_eq!(w, 0.5);
        assert_eq!(shifted.p(), &[0.5, -0.5]);
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(vec![0.0], vec![1.0]).is_ok());
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![-3.2], vec![3.2]).is_err());
        assert!(Bounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn rebase_moves_angle_near_slab() {
        let b = Bounds::new(vec![-0.5], vec![0.5]).unwrap();
        assert!((b.rebase(0, 2.0 * PI + 0.1) - 0.1).abs() < 1e-12);
        assert!((b.rebase(0, -4.0 * PI - 0.2) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
