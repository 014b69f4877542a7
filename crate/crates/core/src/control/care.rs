//! Continuous-time algebraic Riccati equation via the ordered real Schur form
//! of the Hamiltonian matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{KronicError, Result};
use crate::linalg::{ordered_real_schur, pbh_rank_deficient, solve_lyapunov};

/// Stabilizing solution `P` of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` and the gain `C = R⁻¹BᵀP`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub residual: f64,
}

#[derive(Serialize)]
struct RiccatiJson {
    n: usize,
    p: Vec<f64>,
    gain_rows: usize,
    gain: Vec<f64>,
    residual: f64,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl RiccatiSolution {
    /// JSON with `p` and `gain` flattened row-major.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&RiccatiJson {
            n: self.p.nrows(),
            p: row_major(&self.p),
            gain_rows: self.gain.nrows(),
            gain: row_major(&self.gain),
            residual: self.residual,
        })
        .expect("riccati solution serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CareOptions {
    /// Run Newton–Kleinman iterations after the Schur solve.
    pub newton_refine: bool,
    /// Tolerance of the PBH rank tests, relative to max(1, ‖A‖, ‖B‖).
    pub pbh_tol: f64,
}

impl Default for CareOptions {
    fn default() -> Self {
        Self {
            newton_refine: false,
            pbh_tol: 1e-9,
        }
    }
}

pub fn care_residual(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    (a.transpose() * p + p * a - p * s * p + q).norm()
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

pub(crate) fn check_weights(q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let sym = |m: &DMatrix<f64>| (m - m.transpose()).norm() <= 1e-12 * m.norm().max(1.0);
    if !q.is_square() || !sym(q) {
        return Err(KronicError::InvalidWeights("Q must be square and symmetric".into()));
    }
    if !r.is_square() || !sym(r) {
        return Err(KronicError::InvalidWeights("R must be square and symmetric".into()));
    }
    if q.nrows() > 0 && min_symmetric_eigenvalue(q) < -1e-10 * q.norm().max(1.0) {
        return Err(KronicError::InvalidWeights("Q must be positive semidefinite".into()));
    }
    if r.nrows() == 0 || r.clone().cholesky().is_none() {
        return Err(KronicError::InvalidWeights("R must be positive definite".into()));
    }
    Ok(())
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(KronicError::DimensionMismatch(format!(
            "CARE shapes: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// Unstable or marginal eigenvalues of `a` (Re λ ≥ −tol).
fn closed_rhp_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let eig = a
        .clone()
        .try_schur(f64::EPSILON, 0)
        .ok_or_else(|| KronicError::Eigensolver("Schur iteration did not converge".into()))?
        .complex_eigenvalues();
    let tol = 1e-12 * a.norm().max(1.0);
    let mut out: Vec<Complex64> = eig.iter().copied().filter(|l| l.re >= -tol).collect();
    out.sort_by(|x, y| y.re.partial_cmp(&x.re).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiSolution> {
    solve_care_with(a, b, q, r, &CareOptions::default())
}

pub fn solve_care_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &CareOptions,
) -> Result<RiccatiSolution> {
    check_shapes(a, b, q, r)?;
    check_weights(q, r)?;
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| KronicError::InvalidWeights("R is singular".into()))?;
    let s = b * &r_inv * b.transpose();

    for lambda in closed_rhp_eigenvalues(a)? {
        if pbh_rank_deficient(a, b, lambda, opts.pbh_tol)? {
            return Err(KronicError::Unstabilizable { eigenvalue: lambda });
        }
        if pbh_rank_deficient(&a.transpose(), q, lambda, opts.pbh_tol)? {
            return Err(KronicError::Undetectable { eigenvalue: lambda });
        }
    }

    let mut p = if n == 1 {
        // Positive root of 2ap − sp² + q = 0 (or the Lyapunov solution when s = 0).
        let (a0, s0, q0) = (a[(0, 0)], s[(0, 0)], q[(0, 0)]);
        let p0 = if s0 > 0.0 {
            let disc = (a0 * a0 + s0 * q0).sqrt();
            if a0 > 0.0 {
                (a0 + disc) / s0
            } else {
                q0 / (disc - a0)
            }
        } else {
            -q0 / (2.0 * a0)
        };
        DMatrix::from_element(1, 1, p0)
    } else {
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(a);
        h.view_mut((0, n), (n, n)).copy_from(&(-&s));
        h.view_mut((n, 0), (n, n)).copy_from(&(-q));
        h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
        let (z, _t, k) = ordered_real_schur(&h, |l| l.re < 0.0)?;
        if k != n {
            return Err(KronicError::Eigensolver(format!(
                "Hamiltonian matrix has {k} stable eigenvalues, expected {n}"
            )));
        }
        let u11 = z.view((0, 0), (n, n)).into_owned();
        let u21 = z.view((n, 0), (n, n)).into_owned();
        // P U11 = U21  <=>  U11ᵀ Pᵀ = U21ᵀ
        let pt = u11
            .transpose()
            .lu()
            .solve(&u21.transpose())
            .ok_or_else(|| KronicError::Eigensolver("stable subspace basis U11 is singular".into()))?;
        pt.transpose()
    };
    p = (&p + p.transpose()) * 0.5;

    let tolerance = |p: &DMatrix<f64>| 1e-8 * (1.0 + p.norm());
    let mut residual = care_residual(a, &s, q, &p);
    if opts.newton_refine || residual > tolerance(&p) {
        for _ in 0..5 {
            let closed = a - &s * &p;
            let rhs = q + &p * &s * &p;
            let Ok(next) = solve_lyapunov(&closed, &rhs) else { break };
            let next = (&next + next.transpose()) * 0.5;
            let res = care_residual(a, &s, q, &next);
            if !(res < residual) {
                break;
            }
            p = next;
            residual = res;
            if residual <= 1e-15 * (1.0 + p.norm()) {
                break;
            }
        }
    }
    if !(residual <= tolerance(&p)) {
        return Err(KronicError::RiccatiConvergence {
            residual,
            tolerance: tolerance(&p),
        });
    }
    let gain = &r_inv * b.transpose() * &p;
    Ok(RiccatiSolution { p, gain, residual })
}
