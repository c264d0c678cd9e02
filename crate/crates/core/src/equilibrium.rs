//! Graph Laplacians, the synchronization certificate and equilibrium solves.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::coupled_derivative;
use crate::error::{Error, Result};
use crate::model::StageModel;

/// `L = diag(sum_j K_ij) - K`.
pub fn laplacian(stage: &StageModel) -> DMatrix<f64> {
    let m = stage.m();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            (0..m).map(|k| stage.k(i, k)).sum()
        } else {
            -stage.k(i, j)
        }
    })
}

/// Moore–Penrose inverse of a symmetric matrix via its eigendecomposition.
///
/// Eigenvalues below `m * 1e-12 * max|lambda|` are treated as zero; any
/// eigenvalue between that and `m * 1e-9 * max|lambda|` makes the numerical
/// rank ambiguous and is reported as a rank failure.
pub fn pseudoinverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if n != l.ncols() {
        return Err(Error::Validation(
            "pseudoinverse needs a square matrix".into(),
        ));
    }
    let scale = l.amax().max(f64::MIN_POSITIVE);
    if (l - l.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Validation(
            "pseudoinverse needs a symmetric matrix".into(),
        ));
    }
    if l.amax() == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let eig = l.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.amax();
    let zero_tol = n as f64 * 1e-12 * lam_max;
    let ambiguous_tol = n as f64 * 1e-9 * lam_max;
    let svals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    if svals.iter().any(|&s| s > zero_tol && s <= ambiguous_tol) {
        let mut singular_values = svals;
        singular_values.sort_by(|a, b| b.total_cmp(a));
        return Err(Error::RankFailure { singular_values });
    }
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > zero_tol {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    Ok(out)
}

/// Outcome of the cohesiveness test `max_edges |(L^+ p)_i - (L^+ p)_j| <= sin(gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub gamma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
    pub margin: f64,
}

/// Tolerance applied when comparing the two sides of the certificate.
pub const CERTIFICATE_TOL: f64 = 1e-12;

/// Worst-case dissimilarity of `y` over the edge set.
pub fn edge_dissimilarity(stage: &StageModel, y: &[f64]) -> f64 {
    stage
        .edges()
        .iter()
        .map(|&(i, j)| (y[i] - y[j]).abs())
        .fold(0.0, f64::max)
}

pub fn sync_certificate(stage: &StageModel, gamma: f64) -> Result<Certificate> {
    if !(gamma > 0.0 && gamma <= FRAC_PI_2) {
        return Err(Error::Validation(format!(
            "gamma = {gamma} must lie in (0, pi/2]"
        )));
    }
    let lp = pseudoinverse(&laplacian(stage))? * DVector::from_column_slice(stage.p());
    let lhs = edge_dissimilarity(stage, lp.as_slice());
    let rhs = gamma.sin();
    Ok(Certificate {
        gamma,
        lhs,
        rhs,
        passed: lhs <= rhs + CERTIFICATE_TOL,
        margin: rhs - lhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub angles: Vec<f64>,
    /// Max-norm of `p_i - sum_j K_ij sin(x_i - x_j)` over all machines.
    pub residual: f64,
    /// Largest angle difference across an edge.
    pub cohesive_gamma: f64,
    pub iterations: usize,
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_TOL: f64 = 1e-10;

/// Damped Newton solve of `p_i = sum_j K_ij sin(x_i - x_j)` with the angle
/// of `gauge` pinned to `guess[gauge]`.
pub fn find_equilibrium(
    stage: &StageModel,
    guess: &[f64],
    gauge: usize,
) -> Result<EquilibriumResult> {
    let m = stage.m();
    if guess.len() != m || gauge >= m {
        return Err(Error::Validation(
            "equilibrium guess/gauge does not match the stage".into(),
        ));
    }
    if guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("equilibrium guess is not finite".into()));
    }
    let free: Vec<usize> = (0..m).filter(|&i| i != gauge).collect();
    let mut x = guess.to_vec();
    let reduced_norm = |x: &[f64]| -> f64 {
        let r = mismatch(stage, x);
        free.iter().map(|&i| r[i].abs()).fold(0.0, f64::max)
    };
    let mut norm = reduced_norm(&x);
    let mut iterations = 0;
    while norm >= 1e-3 * NEWTON_TOL && iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let r = mismatch(stage, &x);
        let jac = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            let (i, k) = (free[a], free[b]);
            if i == k {
                -(0..m)
                    .filter(|&j| j != i)
                    .map(|j| stage.k(i, j) * (x[i] - x[j]).cos())
                    .sum::<f64>()
            } else {
                stage.k(i, k) * (x[i] - x[k]).cos()
            }
        });
        let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -r[i]));
        let lu = jac.lu();
        let step = lu.solve(&rhs).ok_or(Error::SingularJacobian {
            iteration: iterations,
        })?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian {
                iteration: iterations,
            });
        }
        // Halve the step until the residual decreases.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = x.clone();
            for (a, &i) in free.iter().enumerate() {
                trial[i] += alpha * step[a];
            }
            let n = reduced_norm(&trial);
            if n < norm {
                x = trial;
                norm = n;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm >= NEWTON_TOL {
        return Err(Error::NoConvergence {
            iterations,
            residual: norm,
        });
    }
    let residual = mismatch(stage, &x)
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    let cohesive_gamma = edge_dissimilarity(stage, &x);
    Ok(EquilibriumResult {
        angles: x,
        residual,
        cohesive_gamma,
        iterations,
    })
}

/// Equilibrium of a frame-shifted stage with machine `gauge` pinned at
/// `anchor`, started from the linearised solution `L^+ p` and falling back to
/// uniform angles.
pub fn solve_equilibrium(
    stage: &StageModel,
    gauge: usize,
    anchor: f64,
) -> Result<EquilibriumResult> {
    let m = stage.m();
    let mut guesses = Vec::new();
    if let Ok(lp) = pseudoinverse(&laplacian(stage)) {
        let y = lp * DVector::from_column_slice(stage.p());
        guesses.push(
            (0..m)
                .map(|i| y[i] - y[gauge] + anchor)
                .collect::<Vec<f64>>(),
        );
    }
    guesses.push(vec![anchor; m]);
    let mut last = None;
    for g in guesses {
        match find_equilibrium(stage, &g, gauge) {
            Ok(r) => return Ok(r),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one guess is tried"))
}

fn mismatch(stage: &StageModel, x: &[f64]) -> Vec<f64> {
    let m = stage.m();
    let mut state = x.to_vec();
    state.extend(std::iter::repeat_n(0.0, m));
    coupled_derivative(stage, &state)[m..].to_vec()
}

/// Eigenvalues of the coupled system's Jacobian at an equilibrium with zero
/// velocities.
pub fn linearization_eigenvalues(stage: &StageModel, angles: &[f64]) -> Vec<Complex<f64>> {
    let m = stage.m();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        jac[(i, m + i)] = 1.0;
        jac[(m + i, m + i)] = -stage.d()[i];
        for j in 0..m {
            if i != j {
                let c = stage.k(i, j) * (angles[i] - angles[j]).cos();
                jac[(m + i, i)] -= c;
                jac[(m + i, j)] += c;
            }
        }
    }
    jac.complex_eigenvalues().iter().copied().collect()
}

/// Diagnostic: all linearization eigenvalues have real part `<= tol` (the
/// uniform-rotation mode contributes a zero eigenvalue).
pub fn is_linearly_stable(stage: &StageModel, angles: &[f64], tol: f64) -> bool {
    linearization_eigenvalues(stage, angles)
        .iter()
        .all(|l| l.re <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pair(k: f64, p: f64) -> StageModel {
        StageModel::new(
            vec![p, -p],
            vec![1.0, 1.0],
            vec![vec![0.0, k], vec![k, 0.0]],
        )
        .unwrap()
    }

    fn assert_penrose(a: &DMatrix<f64>, ap: &DMatrix<f64>) {
        assert!((a * ap * a - a).amax() < 1e-8);
        assert!((ap * a * ap - ap).amax() < 1e-8);
        assert!(((a * ap).transpose() - a * ap).amax() < 1e-8);
        assert!(((ap * a).transpose() - ap * a).amax() < 1e-8);
    }

    #[test]
    fn laplacian_of_pair() {
        let l = laplacian(&pair(1.0, 0.0));
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn pseudoinverse_examples() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let lp = pseudoinverse(&l).unwrap();
        assert!((lp.clone() - 0.25 * l.clone()).amax() < 1e-12);
        assert_penrose(&l, &lp);
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((pseudoinverse(&id).unwrap() - id).amax() < 1e-12);
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(pseudoinverse(&z).unwrap(), z);
    }

    #[test]
    fn ambiguous_rank_is_reported() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-11]);
        assert!(matches!(pseudoinverse(&l), Err(Error::RankFailure { .. })));
    }

    #[test]
    fn zero_injection_certificate() {
        for gamma in [0.1, 1.0, PI / 2.0] {
            let c = sync_certificate(&pair(1.0, 0.0), gamma).unwrap();
            assert_eq!(c.lhs, 0.0);
            assert!(c.passed);
        }
    }

    #[test]
    fn pair_certificate_value() {
        let c = sync_certificate(&pair(1.0, 0.5), PI / 3.0).unwrap();
        assert!((c.lhs - 0.5).abs() < 1e-12);
        assert!(c.passed);
        assert!((c.margin - ((PI / 3.0).sin() - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gamma_outside_range_is_rejected() {
        assert!(sync_certificate(&pair(1.0, 0.1), 0.0).is_err());
        assert!(sync_certificate(&pair(1.0, 0.1), 2.0).is_err());
    }

    #[test]
    fn equilibrium_examples() {
        let r = find_equilibrium(&pair(1.0, 0.0), &[0.2, 0.9], 0).unwrap();
        assert!(r.angles.iter().all(|a| (a - 0.2).abs() < 1e-12));
        let r = find_equilibrium(&pair(1.0, 0.5), &[0.0, 0.0], 0).unwrap();
        assert_eq!(r.angles[0], 0.0);
        assert!((r.angles[1] + 0.5f64.asin()).abs() < 1e-12);
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn gauge_covariance() {
        let s = StageModel::new(
            vec![0.3, -0.1, -0.2],
            vec![1.0; 3],
            vec![
                vec![0.0, 1.0, 0.8],
                vec![1.0, 0.0, 0.5],
                vec![0.8, 0.5, 0.0],
            ],
        )
        .unwrap();
        let a = find_equilibrium(&s, &[0.0, 0.0, 0.0], 0).unwrap();
        let b = find_equilibrium(&s, &[1.5, 1.5, 1.5], 0).unwrap();
        for i in 0..3 {
            assert!((b.angles[i] - a.angles[i] - 1.5).abs() < 1e-10);
        }
    }

    #[test]
    fn infeasible_injection_does_not_converge() {
        // No equilibrium exists when |p| > k.
        assert!(find_equilibrium(&pair(1.0, 1.5), &[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn stable_equilibrium_diagnostic() {
        let s = pair(1.0, 0.5);
        assert!(is_linearly_stable(&s, &[0.0, -0.5f64.asin()], 1e-9));
        // The other branch (difference pi - arcsin) is a saddle.
        assert!(!is_linearly_stable(&s, &[0.0, -(PI - 0.5f64.asin())], 1e-9));
    }
}
