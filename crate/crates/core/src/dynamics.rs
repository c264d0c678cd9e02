//! Coupled swing dynamics and the decoupled per-machine planar systems.

use std::io::Write;

use crate::model::{Bounds, StageModel};
use crate::ode::Trajectory;

/// Derivative of the coupled system at the packed state
/// `x = [angles..., velocities...]`.
pub fn coupled_rhs(stage: &StageModel, x: &[f64], dx: &mut [f64]) {
    let m = stage.m();
    let (angles, vel) = x.split_at(m);
    let p = stage.p();
    let d = stage.d();
    for i in 0..m {
        dx[i] = vel[i];
        let mut acc = p[i] - d[i] * vel[i];
        for j in 0..m {
            let k = stage.k(i, j);
            if k != 0.0 {
                acc -= k * (angles[i] - angles[j]).sin();
            }
        }
        dx[m + i] = acc;
    }
}

/// Allocating convenience wrapper around [`coupled_rhs`].
pub fn coupled_derivative(stage: &StageModel, x: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; x.len()];
    coupled_rhs(stage, x, &mut dx);
    dx
}

/// One machine of the post-fault network viewed as a planar system driven by
/// its neighbours' angles.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineModel {
    /// 0-based machine index.
    pub index: usize,
    pub p: f64,
    pub d: f64,
    pub neighbors: Vec<usize>,
    pub couplings: Vec<f64>,
    /// Input box per neighbour, `(lower, upper)`.
    pub input_box: Vec<(f64, f64)>,
}

impl MachineModel {
    /// Extracts machine `i` from `stage`, with neighbour input boxes taken
    /// from `bounds`.
    pub fn from_stage(stage: &StageModel, bounds: &Bounds, i: usize) -> Self {
        let neighbors = stage.neighbors(i);
        let couplings = neighbors.iter().map(|&j| stage.k(i, j)).collect();
        let input_box = neighbors
            .iter()
            .map(|&j| (bounds.lower[j], bounds.upper[j]))
            .collect();
        MachineModel {
            index: i,
            p: stage.p()[i],
            d: stage.d()[i],
            neighbors,
            couplings,
            input_box,
        }
    }

    pub fn n_neighbors(&self) -> usize {
        self.neighbors.len()
    }

    /// Coupling torque `sum_j K_j sin(z1 - u_j)`.
    #[inline]
    pub fn coupling(&self, z1: f64, u: &[f64]) -> f64 {
        self.couplings
            .iter()
            .zip(u)
            .map(|(k, uj)| k * (z1 - uj).sin())
            .sum()
    }
}

/// Derivative of the decoupled planar system for neighbour angles `u`.
pub fn decoupled_rhs(machine: &MachineModel, z: [f64; 2], u: &[f64]) -> [f64; 2] {
    debug_assert_eq!(u.len(), machine.n_neighbors());
    [
        z[1],
        machine.p - machine.coupling(z[0], u) - machine.d * z[1],
    ]
}

/// Writes a coupled trajectory as CSV sampled every `dt` seconds, columns
/// `t, x_11..x_m1, x_12..x_m2`.
pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    traj: &Trajectory,
    dt: f64,
) -> std::io::Result<()> {
    let m = traj.dim() / 2;
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("x_{i}1")));
    header.extend((1..=m).map(|i| format!("x_{i}2")));
    writeln!(out, "{}", header.join(","))?;
    for (t, x) in traj.sample_uniform(dt) {
        let row: Vec<String> = std::iter::once(t)
            .chain(x)
            .map(|v| format!("{v}"))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn two_machine() -> StageModel {
        StageModel::new(
            vec![0.5, -0.5],
            vec![1.0, 1.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn uniform_angles_are_an_equilibrium() {
        let s = StageModel::new(
            vec![0.0; 3],
            vec![1.0; 3],
            vec![
                vec![0.0, 1.0, 2.0],
                vec![1.0, 0.0, 0.5],
                vec![2.0, 0.5, 0.0],
            ],
        )
        .unwrap();
        let dx = coupled_derivative(&s, &[0.3, 0.3, 0.3, 0.0, 0.0, 0.0]);
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_machine_equilibrium_residual() {
        let dx = coupled_derivative(&two_machine(), &[0.0, -PI / 6.0, 0.0, 0.0]);
        assert!(dx.iter().all(|v| v.abs() < 1e-15), "{dx:?}");
    }

    #[test]
    fn angle_derivatives_are_velocities() {
        let dx = coupled_derivative(&two_machine(), &[0.1, 2.0, -0.7, 1.3]);
        assert_eq!(&dx[..2], &[-0.7, 1.3]);
    }

    #[test]
    fn decoupled_examples() {
        let free = MachineModel {
            index: 0,
            p: 0.0,
            d: 0.0,
            neighbors: vec![],
            couplings: vec![],
            input_box: vec![],
        };
        assert_eq!(decoupled_rhs(&free, [0.4, 1.5], &[]), [1.5, 0.0]);
        let one = MachineModel {
            neighbors: vec![1],
            couplings: vec![1.0],
            input_box: vec![(0.0, 3.0)],
            ..free
        };
        let dz = decoupled_rhs(&one, [0.0, 0.0], &[PI / 2.0]);
        assert_eq!(dz[0], 0.0);
        assert!((dz[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decoupled_matches_coupled_with_true_neighbor_angles() {
        let s = StageModel::new(
            vec![0.4, -0.1, -0.3],
            vec![0.5, 1.0, 2.0],
            vec![
                vec![0.0, 1.2, 0.7],
                vec![1.2, 0.0, 0.0],
                vec![0.7, 0.0, 0.0],
            ],
        )
        .unwrap();
        let b = Bounds::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let x = [0.2, -0.4, 0.9, 0.3, -1.1, 0.05];
        let dx = coupled_derivative(&s, &x);
        for i in 0..3 {
            let mm = MachineModel::from_stage(&s, &b, i);
            let u: Vec<f64> = mm.neighbors.iter().map(|&j| x[j]).collect();
            let dz = decoupled_rhs(&mm, [x[i], x[3 + i]], &u);
            assert_eq!(dz[0], dx[i]);
            assert!((dz[1] - dx[3 + i]).abs() < 1e-15);
        }
    }
}
