//! Admissible sets and maximal robust positively invariant sets of the
//! decoupled planar machines.
//!
//! The neighbour angles enter the acceleration term by term, so the extreme
//! accelerations over the input box are attained pointwise. Along a swing
//! with `z2 > 0` the angle can only grow, so the best the inputs can do to
//! keep the state inside the slab is to brake (minimise the acceleration)
//! and the worst is to drive (maximise it); mirrored for `z2 < 0`. The
//! admissible set is therefore the set of states the braking closed loop
//! keeps inside the slab, and the MRPI the set the driving closed loop keeps
//! inside.
//!
//! Set boundaries are barrier trajectories: closed-loop trajectories that
//! touch a slab edge tangentially at zero velocity, integrated backward in
//! time. A backward run alternates between the half-planes `z2 > 0` and
//! `z2 < 0` at turning points. Every half-plane piece bounds the set from
//! the outside, so the set is the region below all upper-half pieces and
//! above all lower-half pieces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::MachineModel;
use crate::error::{Error, Result};
use crate::geometry::{point_in_ring, ring_distance, signed_area, Point};
use crate::model::{Bounds, SolverSettings};
use crate::ode::{integrate_until, OdeSettings, Trajectory};

use std::f64::consts::{FRAC_PI_2, PI};

/// Pointwise input selection over the neighbour box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Maximises the acceleration `dz2/dt`.
    Helpful,
    /// Minimises the acceleration `dz2/dt`.
    Harmful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Admissible,
    Mrpi,
}

impl SetKind {
    /// Input mode used in the upper (`z2 > 0`) or lower half-plane.
    pub fn half_mode(self, upper: bool) -> InputMode {
        match (self, upper) {
            (SetKind::Admissible, true) | (SetKind::Mrpi, false) => InputMode::Harmful,
            (SetKind::Admissible, false) | (SetKind::Mrpi, true) => InputMode::Helpful,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SetKind::Admissible => "admissible",
            SetKind::Mrpi => "mrpi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    Upper,
    Lower,
}

/// Per-neighbour branch of the extremal input: which endpoint, or the
/// interior stationary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Low,
    High,
    Interior,
}

/// Extremal `u_j` for one neighbour with box `[a, b]`.
#[inline]
fn extremal_component(z1: f64, a: f64, b: f64, mode: InputMode) -> (f64, Branch) {
    // Helpful minimises sin(z1 - u) (target argument -pi/2), harmful
    // maximises it (target +pi/2).
    let target = match mode {
        InputMode::Helpful => -FRAC_PI_2,
        InputMode::Harmful => FRAC_PI_2,
    };
    let (arg_lo, arg_hi) = (z1 - b, z1 - a);
    let k = ((arg_lo - target) / (2.0 * PI)).ceil();
    let arg = target + 2.0 * PI * k;
    if arg <= arg_hi {
        return (z1 - arg, Branch::Interior);
    }
    let (s_b, s_a) = ((z1 - b).sin(), (z1 - a).sin());
    let pick_b = match mode {
        InputMode::Helpful => s_b <= s_a,
        InputMode::Harmful => s_b >= s_a,
    };
    if pick_b {
        (b, Branch::High)
    } else {
        (a, Branch::Low)
    }
}

/// Neighbour angles in the input box that extremise the acceleration at `z1`.
pub fn extremal_input(machine: &MachineModel, z1: f64, mode: InputMode) -> Vec<f64> {
    machine
        .input_box
        .iter()
        .map(|&(a, b)| extremal_component(z1, a, b, mode).0)
        .collect()
}

/// Extremal coupling torque and a label identifying the active branches.
#[inline]
fn extremal_coupling(machine: &MachineModel, z1: f64, mode: InputMode) -> (f64, u64) {
    let mut torque = 0.0;
    let mut label = 0u64;
    for (j, (&(a, b), &k)) in machine.input_box.iter().zip(&machine.couplings).enumerate() {
        let (u, br) = extremal_component(z1, a, b, mode);
        torque += k * (z1 - u).sin();
        let code = match br {
            Branch::Low => 0,
            Branch::High => 1,
            Branch::Interior => 2,
        };
        label |= code << (2 * (j % 32));
    }
    (torque, label)
}

/// Extreme acceleration at `(z1, z2)` under `mode`.
#[inline]
pub fn extremal_acceleration(machine: &MachineModel, z1: f64, z2: f64, mode: InputMode) -> f64 {
    machine.p - extremal_coupling(machine, z1, mode).0 - machine.d * z2
}

/// Settings for barrier and set construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetSettings {
    pub ode: OdeSettings,
    /// Velocity cap; automatic when `None`.
    pub z2_cap: Option<f64>,
    pub backward_horizon: f64,
    /// Closure tolerance relative to the slab width.
    pub closure_tol_rel: f64,
    /// Boundary band relative to the slab width.
    pub tol_band_rel: f64,
    /// Uniform samples added to the envelope abscissae.
    pub envelope_samples: usize,
    pub max_pieces: usize,
}

impl Default for SetSettings {
    fn default() -> Self {
        SetSettings {
            ode: OdeSettings::default(),
            z2_cap: None,
            backward_horizon: 30.0,
            closure_tol_rel: 1e-4,
            tol_band_rel: 0.01,
            envelope_samples: 2000,
            max_pieces: 400,
        }
    }
}

impl SetSettings {
    pub fn from_solver(s: &SolverSettings) -> Self {
        SetSettings {
            ode: OdeSettings::from_solver(s),
            z2_cap: s.z2_cap,
            backward_horizon: s.backward_horizon_s,
            ..Default::default()
        }
    }
}

/// Hard velocity limit used while the automatic cap is being determined.
const HARD_CAP: f64 = 1.0e3;
const CAP_FLOOR: f64 = 10.0;

/// How one half-plane piece of a barrier run ended (in backward time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceEnd {
    /// Reached zero velocity inside the slab.
    Turn,
    /// Left the slab through the opposite edge.
    SlabExit,
    /// Exceeded the velocity cap.
    Cap,
    /// Ran out of backward horizon.
    Horizon,
}

/// Why a barrier run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SlabExit,
    Cap,
    Horizon,
    /// Successive turning points repeat within the closure tolerance.
    Closed,
    /// The other half-plane cannot come to rest anywhere beyond the last
    /// turning point, so it is excluded entirely.
    UnreachableTurn,
    /// No tangency point exists: the set is empty.
    NoTangency,
    PieceLimit,
}

/// One half-plane piece of a barrier run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub upper: bool,
    /// Points in backward-time order.
    pub points: Vec<Point>,
    pub end: PieceEnd,
}

/// Where a barrier run starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangency {
    pub point: Point,
    /// False when the slab edge is not a valid tangency and the run starts on
    /// the stable manifold of a half-plane equilibrium instead.
    pub at_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCurve {
    pub corner: Corner,
    pub kind: SetKind,
    pub tangency: Option<Tangency>,
    pub pieces: Vec<Piece>,
    pub stop: StopReason,
}

impl BarrierCurve {
    /// The curve as one polyline in backward-time order.
    pub fn polyline(&self) -> Vec<Point> {
        self.pieces
            .iter()
            .flat_map(|p| p.points.iter().copied())
            .collect()
    }

    fn max_abs_z2(&self) -> f64 {
        self.polyline().iter().fold(0.0, |a, p| a.max(p.z2.abs()))
    }
}

struct HalfRun {
    traj: Trajectory,
    end: PieceEnd,
    end_point: [f64; 2],
    elapsed: f64,
}

/// Integrates the closed loop restricted to one half-plane until it turns,
/// leaves the slab, exceeds the cap or runs out of time.
#[allow(clippy::too_many_arguments)]
fn run_half(
    machine: &MachineModel,
    kind: SetKind,
    upper: bool,
    z0: [f64; 2],
    backward: bool,
    slab: (f64, f64),
    cap: f64,
    t_max: f64,
    ode: &OdeSettings,
) -> Result<HalfRun> {
    let mode = kind.half_mode(upper);
    let sign = if backward { -1.0 } else { 1.0 };
    let (lo, hi) = slab;
    let rhs = |_: f64, z: &[f64], dz: &mut [f64]| {
        let (torque, _) = extremal_coupling(machine, z[0], mode);
        dz[0] = sign * z[1];
        dz[1] = sign * (machine.p - torque - machine.d * z[1]);
    };
    let stop = |_: f64, z: &[f64]| {
        let turned = if upper { z[1] < 0.0 } else { z[1] > 0.0 };
        turned || z[0] < lo || z[0] > hi || z[1].abs() > cap
    };
    let label = |z: &[f64]| extremal_coupling(machine, z[0], mode).1;
    let (traj, hit) = integrate_until(rhs, &z0, 0.0, t_max, ode, stop, Some(label))?;
    let last = traj.last_state();
    let mut end_point = [last[0], last[1]];
    let end = match hit {
        None => PieceEnd::Horizon,
        Some(_) => {
            if end_point[0] < lo || end_point[0] > hi {
                end_point[0] = end_point[0].clamp(lo, hi);
                PieceEnd::SlabExit
            } else if end_point[1].abs() > cap {
                end_point[1] = cap.copysign(end_point[1]);
                PieceEnd::Cap
            } else {
                end_point[1] = 0.0;
                PieceEnd::Turn
            }
        }
    };
    Ok(HalfRun {
        elapsed: traj.t_end(),
        traj,
        end,
        end_point,
    })
}

fn sample_points(traj: &Trajectory, end_point: [f64; 2]) -> Vec<Point> {
    let mut pts: Vec<Point> = traj
        .refined_times(3)
        .into_iter()
        .map(|t| {
            let z = traj.eval(t);
            Point::new(z[0], z[1])
        })
        .collect();
    if let Some(last) = pts.last_mut() {
        *last = Point::new(end_point[0], end_point[1]);
    }
    pts
}

/// Locates where a half-plane piece can end at rest (in forward time),
/// scanning from `start` toward the slab interior: `start` itself when the
/// half-plane field pushes back there, otherwise the nearest half-plane
/// equilibrium on the axis beyond which the field does. In the latter case
/// the returned point lies on that saddle's stable manifold.
fn find_tangency(
    machine: &MachineModel,
    kind: SetKind,
    upper: bool,
    start: f64,
    slab: (f64, f64),
) -> Option<Tangency> {
    let (lo, hi) = slab;
    let mode = kind.half_mode(upper);
    // Positive when the field at rest pushes away from the slab interior.
    let outward = |z1: f64| {
        let a = extremal_acceleration(machine, z1, 0.0, mode);
        if upper {
            a
        } else {
            -a
        }
    };
    let width = hi - lo;
    if outward(start) < -1e-12 {
        return Some(Tangency {
            point: Point::new(start, 0.0),
            at_bound: true,
        });
    }
    let step = width / 4000.0;
    let (toward, span) = if upper {
        (-1.0, start - lo)
    } else {
        (1.0, hi - start)
    };
    let n = (span / step).ceil() as usize;
    let mut prev = start;
    for j in 1..=n {
        let z = (start + toward * step * j as f64).clamp(lo, hi);
        if outward(z) <= 0.0 {
            let (mut out_pt, mut in_pt) = (prev, z);
            for _ in 0..80 {
                let mid = 0.5 * (out_pt + in_pt);
                if outward(mid) <= 0.0 {
                    in_pt = mid;
                } else {
                    out_pt = mid;
                }
            }
            let e = 0.5 * (out_pt + in_pt);
            let h = 1e-7 * width.max(1e-3);
            let slope = (extremal_acceleration(machine, e + h, 0.0, mode)
                - extremal_acceleration(machine, e - h, 0.0, mode))
                / (2.0 * h);
            let a = slope.max(1e-12);
            let lam = 0.5 * (-machine.d - (machine.d * machine.d + 4.0 * a).sqrt());
            let eps = 1e-6 * width;
            let point = if upper {
                Point::new(e - eps, -lam * eps)
            } else {
                Point::new(e + eps, lam * eps)
            };
            return Some(Tangency {
                point,
                at_bound: false,
            });
        }
        prev = z;
    }
    None
}

fn barrier_curve_capped(
    machine: &MachineModel,
    slab: (f64, f64),
    corner: Corner,
    kind: SetKind,
    settings: &SetSettings,
    cap: f64,
) -> Result<BarrierCurve> {
    let edge = if corner == Corner::Upper {
        slab.1
    } else {
        slab.0
    };
    let Some(tangency) = find_tangency(machine, kind, corner == Corner::Upper, edge, slab) else {
        return Ok(BarrierCurve {
            corner,
            kind,
            tangency: None,
            pieces: Vec::new(),
            stop: StopReason::NoTangency,
        });
    };
    let width = slab.1 - slab.0;
    let closure_tol = settings.closure_tol_rel * width;
    let mut upper = corner == Corner::Upper;
    let mut z = [tangency.point.z1, tangency.point.z2];
    let mut remaining = settings.backward_horizon;
    let mut pieces: Vec<Piece> = Vec::new();
    let mut turns: Vec<f64> = Vec::new();
    let points_so_far = |pieces: &Vec<Piece>| pieces.iter().map(|p| p.points.len()).sum::<usize>();

    let stop = loop {
        if pieces.len() >= settings.max_pieces {
            break StopReason::PieceLimit;
        }
        let run = run_half(
            machine,
            kind,
            upper,
            z,
            true,
            slab,
            cap,
            remaining,
            &settings.ode,
        )
        .map_err(|e| Error::Barrier {
            machine: machine.index + 1,
            points: points_so_far(&pieces),
            source: Box::new(e),
        })?;
        remaining -= run.elapsed;
        pieces.push(Piece {
            upper,
            points: sample_points(&run.traj, run.end_point),
            end: run.end,
        });
        match run.end {
            PieceEnd::SlabExit => break StopReason::SlabExit,
            PieceEnd::Cap => break StopReason::Cap,
            PieceEnd::Horizon => break StopReason::Horizon,
            PieceEnd::Turn => {
                turns.push(run.end_point[0]);
                let n = turns.len();
                if n >= 3 && (turns[n - 1] - turns[n - 3]).abs() < closure_tol {
                    break StopReason::Closed;
                }
                if remaining <= 0.0 {
                    break StopReason::Horizon;
                }
                upper = !upper;
                // The other half-plane may not be able to arrive at rest at
                // this turning point; continue from the nearest point that it
                // can, or exclude the whole half-plane if there is none.
                match find_tangency(machine, kind, upper, run.end_point[0], slab) {
                    Some(t) => z = [t.point.z1, t.point.z2],
                    None => {
                        pieces.push(Piece {
                            upper,
                            points: vec![Point::new(slab.0, 0.0), Point::new(slab.1, 0.0)],
                            end: PieceEnd::Turn,
                        });
                        break StopReason::UnreachableTurn;
                    }
                }
            }
        }
    };
    Ok(BarrierCurve {
        corner,
        kind,
        tangency: Some(tangency),
        pieces,
        stop,
    })
}

/// Backward barrier run from the tangency point of `corner` under the
/// closed-loop extremal feedback of `kind`.
pub fn barrier_curve(
    machine: &MachineModel,
    bounds: &Bounds,
    corner: Corner,
    kind: SetKind,
    settings: &SetSettings,
) -> Result<BarrierCurve> {
    let slab = (bounds.lower[machine.index], bounds.upper[machine.index]);
    barrier_curve_capped(
        machine,
        slab,
        corner,
        kind,
        settings,
        settings.z2_cap.unwrap_or(HARD_CAP),
    )
}

/// Membership of a point, with a flag for points within the boundary band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub inside: bool,
    pub near_boundary: bool,
}

/// Construction details kept with each set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstructionLog {
    pub tangencies: Vec<Option<Tangency>>,
    pub stops: Vec<StopReason>,
    pub pieces: usize,
    pub components: usize,
    pub notes: Vec<String>,
}

/// Polygonal safety set of one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySet {
    pub machine: usize,
    pub kind: SetKind,
    pub lower: f64,
    pub upper: f64,
    pub z2_cap: f64,
    /// Counter-clockwise simple rings, one per connected component.
    pub rings: Vec<Vec<Point>>,
    pub empty: bool,
    pub tol_band: f64,
    pub curves: Vec<BarrierCurve>,
    pub log: ConstructionLog,
}

impl SafetySet {
    pub fn contains(&self, p: Point) -> bool {
        !self.empty && self.rings.iter().any(|r| point_in_ring(r, p))
    }

    pub fn boundary_distance(&self, p: Point) -> f64 {
        self.rings
            .iter()
            .map(|r| ring_distance(r, p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.rings.iter().map(|r| signed_area(r).abs()).sum()
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.rings.iter().map(Vec::len).sum()
    }
}

/// Even-odd membership with the boundary band flag. Empty sets contain
/// nothing.
pub fn contains(set: &SafetySet, p: Point) -> Membership {
    if set.empty {
        return Membership {
            inside: false,
            near_boundary: false,
        };
    }
    Membership {
        inside: set.contains(p),
        near_boundary: set.boundary_distance(p) <= set.tol_band,
    }
}

/// Shoelace area of the set, 0 when empty.
pub fn volume(set: &SafetySet) -> f64 {
    set.area()
}

/// Piece as a function `z2(z1)` on its z1-range, with the value used outside
/// that range on either side.
struct EnvelopePiece {
    z1: Vec<f64>,
    z2: Vec<f64>,
    left: f64,
    right: f64,
}

impl EnvelopePiece {
    fn new(piece: &Piece, cap: f64) -> Option<Self> {
        let mut pts: Vec<(f64, f64)> = piece.points.iter().map(|p| (p.z1, p.z2)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        if pts.len() < 2 {
            return None;
        }
        // Forward time moves right in the upper half-plane and left in the
        // lower one, so the forward end sits on the axis; the backward end
        // decides the extension on the other side.
        let backward_ext = match piece.end {
            PieceEnd::Cap | PieceEnd::Horizon => {
                if piece.upper {
                    cap
                } else {
                    -cap
                }
            }
            _ => 0.0,
        };
        let (left, right) = if piece.upper {
            (backward_ext, 0.0)
        } else {
            (0.0, backward_ext)
        };
        Some(EnvelopePiece {
            z1: pts.iter().map(|p| p.0).collect(),
            z2: pts.iter().map(|p| p.1).collect(),
            left,
            right,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.z1.len();
        if x < self.z1[0] {
            return self.left;
        }
        if x > self.z1[n - 1] {
            return self.right;
        }
        let k = self.z1.partition_point(|&v| v <= x).clamp(1, n - 1);
        let (x0, x1) = (self.z1[k - 1], self.z1[k]);
        let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
        self.z2[k - 1] + t * (self.z2[k] - self.z2[k - 1])
    }
}

/// Builds the admissible set or MRPI of one machine. `probe` (typically the
/// post-fault equilibrium at zero velocity) cross-checks the emptiness
/// decision.
pub fn assemble_set(
    machine: &MachineModel,
    bounds: &Bounds,
    kind: SetKind,
    settings: &SetSettings,
    probe: Option<Point>,
) -> Result<SafetySet> {
    let i = machine.index;
    let slab = (bounds.lower[i], bounds.upper[i]);
    let (lo, hi) = slab;
    let width = hi - lo;
    let tol_band = settings.tol_band_rel * width;

    let run = |cap: f64| -> Result<Vec<BarrierCurve>> {
        [Corner::Upper, Corner::Lower]
            .iter()
            .map(|&c| barrier_curve_capped(machine, slab, c, kind, settings, cap))
            .collect()
    };
    let (curves, cap) = match settings.z2_cap {
        Some(cap) => (run(cap)?, cap),
        None => {
            let curves = run(HARD_CAP)?;
            let peak = curves
                .iter()
                .map(BarrierCurve::max_abs_z2)
                .fold(0.0, f64::max);
            let cap = (4.0 * peak).clamp(CAP_FLOOR, HARD_CAP);
            (curves, cap)
        }
    };

    let mut log = ConstructionLog {
        tangencies: curves.iter().map(|c| c.tangency).collect(),
        stops: curves.iter().map(|c| c.stop).collect(),
        pieces: curves.iter().map(|c| c.pieces.len()).sum(),
        ..Default::default()
    };

    let empty_set = |log: ConstructionLog, curves: Vec<BarrierCurve>| SafetySet {
        machine: i,
        kind,
        lower: lo,
        upper: hi,
        z2_cap: cap,
        rings: Vec::new(),
        empty: true,
        tol_band,
        curves,
        log,
    };

    if curves.iter().any(|c| c.stop == StopReason::NoTangency) {
        log.notes.push("no tangency point on one slab edge".into());
        return Ok(empty_set(log, curves));
    }
    // A swing that turns must eventually turn in both half-planes; if one
    // of them can never come to rest safely, neither can the other.
    if curves.iter().any(|c| c.stop == StopReason::UnreachableTurn) {
        log.notes
            .push("one half-plane has no safe turning point".into());
        return Ok(empty_set(log, curves));
    }

    let pieces: Vec<(bool, EnvelopePiece)> = curves
        .iter()
        .flat_map(|c| c.pieces.iter())
        .filter_map(|p| EnvelopePiece::new(p, cap).map(|e| (p.upper, e)))
        .collect();

    // Abscissae: uniform samples plus every piece vertex inside the slab.
    let mut xs: Vec<f64> = (0..=settings.envelope_samples)
        .map(|k| lo + width * k as f64 / settings.envelope_samples as f64)
        .collect();
    for (_, e) in &pieces {
        xs.extend(e.z1.iter().copied().filter(|&x| x > lo && x < hi));
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let top: Vec<f64> = xs
        .iter()
        .map(|&x| {
            pieces
                .iter()
                .filter(|(up, _)| *up)
                .map(|(_, e)| e.eval(x))
                .fold(cap, f64::min)
                .max(0.0)
        })
        .collect();
    let bottom: Vec<f64> = xs
        .iter()
        .map(|&x| {
            pieces
                .iter()
                .filter(|(up, _)| !*up)
                .map(|(_, e)| e.eval(x))
                .fold(-cap, f64::max)
                .min(0.0)
        })
        .collect();

    // Connected components are maximal runs with positive thickness.
    let thin = 1e-12 * cap.max(1.0);
    let area_eps = 1e-9 * width * cap;
    let mut rings = Vec::new();
    let mut k = 0;
    while k < xs.len() {
        if top[k] - bottom[k] <= thin {
            k += 1;
            continue;
        }
        let start = k.saturating_sub(1);
        let mut end = k;
        while end + 1 < xs.len() && top[end + 1] - bottom[end + 1] > thin {
            end += 1;
        }
        let stop = (end + 1).min(xs.len() - 1);
        let mut ring: Vec<Point> = (start..=stop)
            .map(|j| Point::new(xs[j], bottom[j]))
            .collect();
        ring.extend((start..=stop).rev().map(|j| Point::new(xs[j], top[j])));
        ring.dedup_by(|a, b| a == b);
        if ring.len() > 2 && ring.first() == ring.last() {
            ring.pop();
        }
        if signed_area(&ring).abs() > area_eps {
            rings.push(ring);
        }
        k = stop + 1;
    }

    log.components = rings.len();
    if rings.len() > 1 {
        log.notes
            .push(format!("{} disconnected components", rings.len()));
    }
    if rings.is_empty() {
        return Ok(empty_set(log, curves));
    }
    let set = SafetySet {
        machine: i,
        kind,
        lower: lo,
        upper: hi,
        z2_cap: cap,
        rings,
        empty: false,
        tol_band,
        curves,
        log,
    };
    if let Some(p) = probe {
        if p.z1 >= lo && p.z1 <= hi && !set.contains(p) && set.boundary_distance(p) > tol_band {
            return Err(Error::AmbiguousTopology {
                machine: i + 1,
                detail: format!(
                    "{} set has area {:.3e} but excludes the probe point ({:.4}, {:.4})",
                    kind.label(),
                    set.area(),
                    p.z1,
                    p.z2
                ),
            });
        }
    }
    Ok(set)
}

/// Whether the closed loop of `kind` keeps `z0` inside the slab for
/// `horizon` seconds, simulated directly.
pub fn closed_loop_stays(
    machine: &MachineModel,
    kind: SetKind,
    slab: (f64, f64),
    z0: [f64; 2],
    horizon: f64,
    ode: &OdeSettings,
) -> Result<bool> {
    let (lo, hi) = slab;
    if z0[0] < lo || z0[0] > hi {
        return Ok(false);
    }
    if z0[1] != 0.0 {
        return follow(machine, kind, slab, z0, z0[1] > 0.0, horizon, ode, true);
    }
    let fmax = extremal_acceleration(machine, z0[0], 0.0, InputMode::Helpful);
    let fmin = extremal_acceleration(machine, z0[0], 0.0, InputMode::Harmful);
    match kind {
        SetKind::Admissible => {
            if fmin <= 0.0 && fmax >= 0.0 {
                Ok(true)
            } else {
                follow(machine, kind, slab, z0, fmin > 0.0, horizon, ode, true)
            }
        }
        SetKind::Mrpi => {
            // The disturbance may push either way from rest.
            if fmax > 0.0 && !follow(machine, kind, slab, z0, true, horizon, ode, true)? {
                return Ok(false);
            }
            if fmin < 0.0 && !follow(machine, kind, slab, z0, false, horizon, ode, true)? {
                return Ok(false);
            }
            Ok(true)
        }
    }
}

const MAX_TURNS: usize = 10_000;

#[allow(clippy::too_many_arguments)]
fn follow(
    machine: &MachineModel,
    kind: SetKind,
    slab: (f64, f64),
    mut z: [f64; 2],
    mut upper: bool,
    horizon: f64,
    ode: &OdeSettings,
    settle: bool,
) -> Result<bool> {
    let mut remaining = horizon;
    for _ in 0..MAX_TURNS {
        let run = run_half(
            machine,
            kind,
            upper,
            z,
            false,
            slab,
            f64::INFINITY,
            remaining,
            ode,
        )?;
        remaining -= run.elapsed;
        match run.end {
            PieceEnd::SlabExit => return Ok(false),
            PieceEnd::Cap => return Ok(true),
            PieceEnd::Horizon => {
                // A trajectory creeping onto a rest point never turns, but
                // the disturbance can tip it into the other half from there.
                let z = run.end_point;
                let acc = extremal_acceleration(machine, z[0], z[1], kind.half_mode(upper));
                let creeping = acc * z[1] <= 0.0;
                if settle && kind == SetKind::Mrpi && creeping {
                    let other = !upper;
                    let acc = extremal_acceleration(machine, z[0], 0.0, kind.half_mode(other));
                    let enters = if other { acc > 0.0 } else { acc < 0.0 };
                    if enters {
                        return follow(
                            machine,
                            kind,
                            slab,
                            [z[0], 0.0],
                            other,
                            horizon,
                            ode,
                            false,
                        );
                    }
                }
                return Ok(true);
            }
            PieceEnd::Turn => {
                if remaining <= 0.0 {
                    return Ok(true);
                }
                z = run.end_point;
                let fmax = extremal_acceleration(machine, z[0], 0.0, InputMode::Helpful);
                let fmin = extremal_acceleration(machine, z[0], 0.0, InputMode::Harmful);
                // At rest: braking holds if the input can cancel the
                // acceleration; otherwise continue into the other half.
                if kind == SetKind::Admissible && fmin <= 0.0 && fmax >= 0.0 {
                    return Ok(true);
                }
                let next_upper = !upper;
                let acc = extremal_acceleration(machine, z[0], 0.0, kind.half_mode(next_upper));
                let enters = if next_upper { acc > 0.0 } else { acc < 0.0 };
                if !enters {
                    // Cannot leave the axis toward the other half; it must
                    // re-enter the same half.
                    let acc_same = extremal_acceleration(machine, z[0], 0.0, kind.half_mode(upper));
                    let back = if upper {
                        acc_same > 0.0
                    } else {
                        acc_same < 0.0
                    };
                    if !back {
                        return Ok(true);
                    }
                    continue;
                }
                upper = next_upper;
            }
        }
    }
    Ok(true)
}

/// Labelled grid over the slab and velocity range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Row-major by z1 index: `inside[i1 * z2.len() + i2]`.
    pub inside: Vec<bool>,
}

impl OracleGrid {
    pub fn points(&self) -> impl Iterator<Item = (Point, bool)> + '_ {
        let n2 = self.z2.len();
        self.inside
            .iter()
            .enumerate()
            .map(move |(k, &ins)| (Point::new(self.z1[k / n2], self.z2[k % n2]), ins))
    }
}

/// Cell-centred grid over `[lower, upper] x [-cap, cap]` labelled by direct
/// closed-loop simulation over `horizon` seconds.
pub fn oracle_set(
    machine: &MachineModel,
    bounds: &Bounds,
    kind: SetKind,
    n: usize,
    z2_cap: f64,
    horizon: f64,
    ode: &OdeSettings,
) -> Result<OracleGrid> {
    let i = machine.index;
    let slab = (bounds.lower[i], bounds.upper[i]);
    let z1: Vec<f64> = (0..n)
        .map(|k| slab.0 + (slab.1 - slab.0) * (k as f64 + 0.5) / n as f64)
        .collect();
    let z2: Vec<f64> = (0..n)
        .map(|k| -z2_cap + 2.0 * z2_cap * (k as f64 + 0.5) / n as f64)
        .collect();
    let inside = (0..n * n)
        .into_par_iter()
        .map(|k| closed_loop_stays(machine, kind, slab, [z1[k / n], z2[k % n]], horizon, ode))
        .collect::<Result<Vec<bool>>>()?;
    Ok(OracleGrid { z1, z2, inside })
}
