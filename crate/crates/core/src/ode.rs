//! Adaptive Dormand–Prince 5(4) integration with continuous output.
//!
//! The embedded pair controls the local error; the 4th-order continuous
//! extension is stored per step so states can be evaluated anywhere in the
//! integrated span. Terminal conditions and piecewise-smooth right-hand
//! sides (mode switches) are localized by bisection on the dense output.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Tolerances and limits for one integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Largest step allowed, seconds.
    pub h_max: f64,
    pub max_steps: usize,
    /// Time tolerance for event and switch localization.
    pub event_tol: f64,
}

impl Default for OdeSettings {
    fn default() -> Self {
        OdeSettings {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            h_max: f64::INFINITY,
            max_steps: 20_000_000,
            event_tol: 1e-6,
        }
    }
}

impl OdeSettings {
    pub fn from_solver(s: &crate::model::SolverSettings) -> Self {
        OdeSettings {
            abs_tol: s.abs_tol,
            rel_tol: s.rel_tol,
            event_tol: s.event_tol,
            ..Default::default()
        }
    }
}

/// A solution with continuous output between stored nodes.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    // Per step: full step length and four continuous-output coefficient
    // vectors (the constant term is the node state).
    step_h: Vec<f64>,
    dense: Vec<f64>,
}

impl Trajectory {
    fn start(t0: f64, x0: &[f64]) -> Self {
        Trajectory {
            dim: x0.len(),
            times: vec![t0],
            states: x0.to_vec(),
            step_h: Vec::new(),
            dense: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored nodes.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Evaluates the continuous output at `t` (clamped to the span).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            out.copy_from_slice(self.state(0));
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(self.state(n - 1));
            return;
        }
        // Index of the step containing t.
        let k = self.times.partition_point(|&tk| tk <= t) - 1;
        if t == self.times[k] {
            out.copy_from_slice(self.state(k));
            return;
        }
        self.eval_step(k, t, out);
    }

    fn eval_step(&self, k: usize, t: f64, out: &mut [f64]) {
        let dim = self.dim;
        let h = self.step_h[k];
        let theta = (t - self.times[k]) / h;
        let theta1 = 1.0 - theta;
        let y0 = &self.states[k * dim..(k + 1) * dim];
        let c = &self.dense[k * 4 * dim..(k + 1) * 4 * dim];
        for i in 0..dim {
            let r2 = c[i];
            let r3 = c[dim + i];
            let r4 = c[2 * dim + i];
            let r5 = c[3 * dim + i];
            out[i] = y0[i] + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
        }
    }

    fn push(&mut self, t: f64, y: &[f64], h: f64, coeffs: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(y);
        self.step_h.push(h);
        self.dense.extend_from_slice(coeffs);
    }

    /// Samples the solution on a uniform grid of spacing `dt`, always
    /// including both end points.
    pub fn sample_uniform(&self, dt: f64) -> Vec<(f64, Vec<f64>)> {
        let (t0, t1) = (self.t_start(), self.t_end());
        let n = ((t1 - t0) / dt).ceil().max(1.0) as usize;
        (0..=n)
            .map(|j| {
                let t = if j == n { t1 } else { t0 + j as f64 * dt };
                (t, self.eval(t))
            })
            .collect()
    }

    /// Node times refined with `sub` evenly spaced interior points per step.
    pub fn refined_times(&self, sub: usize) -> Vec<f64> {
        let mut ts = Vec::with_capacity(self.times.len() * (sub + 1));
        for w in self.times.windows(2) {
            for j in 0..=sub {
                ts.push(w[0] + (w[1] - w[0]) * j as f64 / (sub + 1) as f64);
            }
        }
        ts.push(self.t_end());
        ts
    }
}

struct Work {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    err: Vec<f64>,
    coeffs: Vec<f64>,
}

impl Work {
    fn new(dim: usize) -> Self {
        Work {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            err: vec![0.0; dim],
            coeffs: vec![0.0; 4 * dim],
        }
    }
}

fn check_finite(t: f64, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

/// Integrates `rhs` from `x0` at `t0` to `t1 > t0`.
pub fn integrate<F>(
    rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    settings: &OdeSettings,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_until(
        rhs,
        x0,
        t0,
        t1,
        settings,
        |_, _| false,
        None::<fn(&[f64]) -> u64>,
    )
    .map(|(traj, _)| traj)
}

/// Integrates until `t1` or until `stop` first holds (localized on the dense
/// output to `event_tol`). When `mode` is given, the integration is split at
/// every point where the mode label changes and restarted there, so that
/// piecewise-smooth right-hand sides are only integrated across smooth pieces.
///
/// Returns the trajectory and the stop time if the stop condition fired.
pub fn integrate_until<F, S, M>(
    mut rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    settings: &OdeSettings,
    mut stop: S,
    mode: Option<M>,
) -> Result<(Trajectory, Option<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(f64, &[f64]) -> bool,
    M: Fn(&[f64]) -> u64,
{
    if t1.partial_cmp(&t0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Validation(format!(
            "integration span [{t0}, {t1}] is empty"
        )));
    }
    check_finite(t0, x0)?;
    let dim = x0.len();
    let mut traj = Trajectory::start(t0, x0);
    if stop(t0, x0) {
        return Ok((traj, Some(t0)));
    }
    let mut w = Work::new(dim);
    let mut y = x0.to_vec();
    let mut t = t0;
    rhs(t, &y, &mut w.k[0]);
    check_finite(t, &w.k[0])?;
    let mut cur_mode = mode.as_ref().map(|m| m(&y));
    let mut h = initial_step(&mut rhs, t, &y, &w.k[0].clone(), t1 - t0, settings, &mut w);
    let mut reject_streak = false;
    let mut steps = 0usize;
    let mut probe = vec![0.0; dim];

    while t < t1 {
        steps += 1;
        if steps > settings.max_steps {
            return Err(Error::StepLimit {
                t,
                max_steps: settings.max_steps,
            });
        }
        h = h.min(settings.h_max).min(t1 - t);
        if h <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let err = dopri_step(&mut rhs, t, &y, h, settings, &mut w)?;
        if err > 1.0 {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            reject_streak = true;
            continue;
        }
        let fac_max = if reject_streak { 1.0 } else { 10.0 };
        reject_streak = false;
        let h_next = h * (0.9 * err.max(1e-300).powf(-0.2)).clamp(0.2, fac_max);

        let t_new = t + h;
        let mut t_acc = t_new;
        let mut restart = false;
        traj.push(t_new, &w.ynew, h, &w.coeffs);

        // Mode switch: truncate at the first change and restart there.
        if let (Some(mfn), Some(m0)) = (mode.as_ref(), cur_mode) {
            if mfn(&w.ynew) != m0 {
                let ts =
                    bisect_last_step(&traj, t, t_new, settings.event_tol, &mut probe, |_, x| {
                        mfn(x) != m0
                    });
                if ts < t_new {
                    truncate_last(&mut traj, ts);
                    t_acc = ts;
                }
                restart = true;
            }
        }

        // Stop condition, checked at a few interior points of the step too.
        let t_prev = t;
        let mut fired = None;
        for j in 1..=4 {
            let tj = t_prev + (t_acc - t_prev) * j as f64 / 4.0;
            traj.eval_into(tj, &mut probe);
            if stop(tj, &probe) {
                let lo = t_prev + (t_acc - t_prev) * (j - 1) as f64 / 4.0;
                fired = Some(bisect_last_step(
                    &traj,
                    lo,
                    tj,
                    settings.event_tol,
                    &mut probe,
                    &mut stop,
                ));
                break;
            }
        }
        if let Some(ts) = fired {
            if ts < t_acc {
                truncate_last(&mut traj, ts);
            }
            return Ok((traj, Some(ts)));
        }

        t = t_acc;
        y.copy_from_slice(traj.last_state());
        h = h_next;
        if restart {
            rhs(t, &y, &mut w.k[0]);
            check_finite(t, &w.k[0])?;
            cur_mode = mode.as_ref().map(|m| m(&y));
        } else {
            // First-same-as-last.
            let k7 = std::mem::take(&mut w.k[6]);
            w.k[0].copy_from_slice(&k7);
            w.k[6] = k7;
        }
    }
    Ok((traj, None))
}

/// Replaces the last node by the continuous-output state at `ts`.
fn truncate_last(traj: &mut Trajectory, ts: f64) {
    let n = traj.len();
    let dim = traj.dim;
    let mut y = vec![0.0; dim];
    traj.eval_step(n - 2, ts, &mut y);
    traj.times[n - 1] = ts;
    traj.states[(n - 1) * dim..].copy_from_slice(&y);
}

/// Earliest time in `(lo, hi]` of the last step where `pred` holds, assuming
/// it holds at `hi`.
fn bisect_last_step<P>(
    traj: &Trajectory,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    buf: &mut [f64],
    mut pred: P,
) -> f64
where
    P: FnMut(f64, &[f64]) -> bool,
{
    let n = traj.len();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        traj.eval_step(n - 2, mid, buf);
        if pred(mid, buf) {
            hi = mid;
        } else {
            lo = mid;
        }
        if mid <= lo && mid >= hi {
            break;
        }
    }
    hi
}

#[allow(clippy::needless_range_loop)]
fn dopri_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    h: f64,
    s: &OdeSettings,
    w: &mut Work,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y.len();
    macro_rules! stage {
        ($dst:expr, $c:expr, [$(($a:expr, $kk:expr)),*]) => {{
            for i in 0..dim {
                w.ytmp[i] = y[i] + h * (0.0 $(+ $a * w.k[$kk][i])*);
            }
            let (head, tail) = w.k.split_at_mut($dst);
            let _ = head;
            rhs(t + $c * h, &w.ytmp, &mut tail[0]);
        }};
    }
    stage!(1, C2, [(A21, 0)]);
    stage!(2, C3, [(A31, 0), (A32, 1)]);
    stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
    stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
    stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
    for i in 0..dim {
        w.ynew[i] = y[i]
            + h * (A71 * w.k[0][i]
                + A73 * w.k[2][i]
                + A74 * w.k[3][i]
                + A75 * w.k[4][i]
                + A76 * w.k[5][i]);
    }
    {
        let (head, tail) = w.k.split_at_mut(6);
        let _ = head;
        rhs(t + h, &w.ynew, &mut tail[0]);
    }
    if !w.ynew.iter().chain(w.k[6].iter()).all(|v| v.is_finite()) {
        // Treat as a failed step so the controller shrinks h; persistent
        // failure ends in underflow.
        if h.abs() < 1e-12 {
            return Err(Error::NonFinite { t: t + h });
        }
        return Ok(1e6);
    }
    let mut sum = 0.0;
    for i in 0..dim {
        w.err[i] = h
            * (E1 * w.k[0][i]
                + E3 * w.k[2][i]
                + E4 * w.k[3][i]
                + E5 * w.k[4][i]
                + E6 * w.k[5][i]
                + E7 * w.k[6][i]);
        let sk = s.abs_tol + s.rel_tol * y[i].abs().max(w.ynew[i].abs());
        sum += (w.err[i] / sk).powi(2);
    }
    let err = (sum / dim as f64).sqrt();
    if err <= 1.0 {
        for i in 0..dim {
            let ydiff = w.ynew[i] - y[i];
            let bspl = h * w.k[0][i] - ydiff;
            w.coeffs[i] = ydiff;
            w.coeffs[dim + i] = bspl;
            w.coeffs[2 * dim + i] = ydiff - h * w.k[6][i] - bspl;
            w.coeffs[3 * dim + i] = h
                * (D1 * w.k[0][i]
                    + D3 * w.k[2][i]
                    + D4 * w.k[3][i]
                    + D5 * w.k[4][i]
                    + D6 * w.k[5][i]
                    + D7 * w.k[6][i]);
        }
    }
    Ok(err)
}

fn initial_step<F>(
    rhs: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
    s: &OdeSettings,
    w: &mut Work,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y.len();
    let sk = |i: usize| s.abs_tol + s.rel_tol * y[i].abs();
    let norm = |v: &dyn Fn(usize) -> f64| {
        ((0..dim).map(|i| v(i).powi(2)).sum::<f64>() / dim as f64).sqrt()
    };
    let d0 = norm(&|i| y[i] / sk(i));
    let d1 = norm(&|i| f0[i] / sk(i));
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span).min(s.h_max);
    for i in 0..dim {
        w.ytmp[i] = y[i] + h0 * f0[i];
    }
    rhs(t + h0, &w.ytmp, &mut w.err);
    let d2 = norm(&|i| (w.err[i] - f0[i]) / sk(i)) / h0;
    let dmax = d1.max(d2);
    let h1 = if dmax <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dmax).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).min(s.h_max)
}

/// Earliest time at which `predicate` holds on the trajectory, scanning the
/// nodes plus `sub` interior points per step and bisecting the first flip on
/// the continuous output down to `tol`. Returns the start time if the
/// predicate already holds there.
pub fn event_time<P>(traj: &Trajectory, mut predicate: P, tol: f64) -> Option<f64>
where
    P: FnMut(&[f64]) -> bool,
{
    event_time_sub(traj, &mut predicate, tol, 4)
}

pub(crate) fn event_time_sub<P>(
    traj: &Trajectory,
    predicate: &mut P,
    tol: f64,
    sub: usize,
) -> Option<f64>
where
    P: FnMut(&[f64]) -> bool,
{
    let mut buf = vec![0.0; traj.dim()];
    if predicate(traj.state(0)) {
        return Some(traj.t_start());
    }
    let mut prev = traj.t_start();
    for t in traj.refined_times(sub).into_iter().skip(1) {
        traj.eval_into(t, &mut buf);
        if predicate(&buf) {
            let (mut lo, mut hi) = (prev, t);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                traj.eval_into(mid, &mut buf);
                if predicate(&buf) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        prev = t;
    }
    None
}
