//! Eigenfunction identification: sparse null-space regression on the generator
//! equation, least-squares generator spectra, discrete-time EDMD, and
//! validation of candidates against held-out trajectories.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::MonomialLibrary;
use crate::error::{KronicError, Result};
use crate::linalg::{self, right_svd, to_complex, CMatrix, CVector};
use crate::systems::Trajectory;

/// Tolerances for the thresholded restricted-SVD sparsification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullspaceOptions {
    /// Relative singular-value threshold defining the numerical null space.
    pub svd_tol: f64,
    /// Coefficients below `sparse_tol * max|ξ|` are zeroed.
    pub sparse_tol: f64,
    pub max_iter: usize,
    /// Scale library columns to unit 2-norm before the SVD (ξ is returned unscaled).
    pub column_scaling: bool,
}

impl Default for NullspaceOptions {
    fn default() -> Self {
        Self {
            svd_tol: 1e-8,
            sparse_tol: 0.05,
            max_iter: 20,
            column_scaling: false,
        }
    }
}

/// An identified eigenfunction `φ(x) = Θ(x)ξ` with `dφ/dt ≈ λφ`.
#[derive(Debug, Clone)]
pub struct EigenfunctionModel {
    pub lambda: Complex64,
    /// Unit 2-norm, phase-normalized so the largest entry is real and positive.
    pub xi: CVector,
    pub library: Option<MonomialLibrary>,
    /// `‖(λΘ − Γ)ξ‖ / (‖ξ‖ √m)`.
    pub residual: f64,
    pub nnz: usize,
    /// Singular values of the regression matrix, descending.
    pub singular_values: Vec<f64>,
    /// Support size after each sparsification pass.
    pub support_history: Vec<usize>,
}

impl EigenfunctionModel {
    pub fn with_library(mut self, lib: &MonomialLibrary) -> Self {
        self.library = Some(lib.clone());
        self
    }

    fn lib(&self) -> Result<&MonomialLibrary> {
        let lib = self.library.as_ref().ok_or_else(|| {
            KronicError::DimensionMismatch("model has no library attached".into())
        })?;
        if lib.len() != self.xi.len() {
            return Err(KronicError::DimensionMismatch(format!(
                "model has {} coefficients, library has {} terms",
                self.xi.len(),
                lib.len()
            )));
        }
        Ok(lib)
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.xi.len()).filter(|&k| self.xi[k].norm() > 0.0).collect()
    }

    pub fn is_real(&self) -> bool {
        self.lambda.im == 0.0 && self.xi.iter().all(|z| z.im == 0.0)
    }

    pub fn xi_re(&self) -> Vec<f64> {
        self.xi.iter().map(|z| z.re).collect()
    }

    pub fn xi_im(&self) -> Vec<f64> {
        self.xi.iter().map(|z| z.im).collect()
    }

    /// φ(x).
    pub fn eval(&self, x: &[f64]) -> Result<Complex64> {
        let lib = self.lib()?;
        if x.len() != lib.n {
            return Err(KronicError::DimensionMismatch(format!(
                "point has {} coordinates, library has n = {}",
                x.len(),
                lib.n
            )));
        }
        Ok(lib
            .eval_row(x)
            .iter()
            .zip(self.xi.iter())
            .map(|(&t, &c)| c * t)
            .sum())
    }

    /// ∇φ(x) (complex when ξ is complex).
    pub fn gradient(&self, x: &[f64]) -> Result<CVector> {
        let lib = self.lib()?;
        let re = lib.eval_candidate_gradient(&self.xi_re(), x)?;
        let im = lib.eval_candidate_gradient(&self.xi_im(), x)?;
        Ok(CVector::from_fn(re.len(), |i, _| Complex64::new(re[i], im[i])))
    }

    pub fn expression(&self, tol: f64) -> String {
        match &self.library {
            None => String::new(),
            Some(lib) if self.xi.iter().all(|z| z.im == 0.0) => lib.pretty_print(&self.xi_re(), tol),
            Some(lib) => format!(
                "({}) + i({})",
                lib.pretty_print(&self.xi_re(), tol),
                lib.pretty_print(&self.xi_im(), tol)
            ),
        }
    }
}

fn l1_over_l2(v: &CVector) -> f64 {
    let l2 = v.norm();
    if l2 == 0.0 {
        return f64::INFINITY;
    }
    v.iter().map(|z| z.norm()).sum::<f64>() / l2
}

fn residual_of(m: &CMatrix, xi: &CVector) -> f64 {
    let rows = m.nrows().max(1) as f64;
    let nx = xi.norm();
    if nx == 0.0 {
        return f64::INFINITY;
    }
    (m * xi).norm() / (nx * rows.sqrt())
}

/// Sparsest-null-vector search on an arbitrary regression matrix `M`.
pub fn sparse_null_vector(
    m: &CMatrix,
    lambda: Complex64,
    opts: &NullspaceOptions,
) -> Result<EigenfunctionModel> {
    if !(opts.svd_tol > 0.0) || !(opts.sparse_tol > 0.0) {
        return Err(KronicError::DegenerateParameter(
            "svd_tol and sparse_tol must be positive".into(),
        ));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(KronicError::DegenerateData("regression matrix has non-finite entries".into()));
    }
    let p = m.ncols();
    let scales: Vec<f64> = if opts.column_scaling {
        (0..p)
            .map(|j| {
                let n = m.column(j).norm();
                if n > 0.0 {
                    1.0 / n
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; p]
    };
    let mut ms = m.clone();
    for (j, &s) in scales.iter().enumerate() {
        if s != 1.0 {
            ms.column_mut(j).scale_mut(s);
        }
    }

    let svd = right_svd(&ms)?;
    let threshold = opts.svd_tol * svd.sigma_max();
    let null_cols: Vec<usize> = (0..p)
        .filter(|&j| svd.singular_values[j] <= threshold)
        .collect();
    if null_cols.is_empty() {
        return Err(KronicError::NoEigenfunction {
            lambda,
            sigma_min: svd.sigma_min(),
            threshold,
        });
    }
    let mut best = null_cols[0];
    let mut best_ratio = f64::INFINITY;
    for &j in &null_cols {
        let r = l1_over_l2(&svd.v.column(j).into_owned());
        if r < best_ratio * (1.0 - 1e-12) {
            best = j;
            best_ratio = r;
        }
    }
    let mut xi: CVector = svd.v.column(best).into_owned();
    let mut support: Vec<usize> = (0..p).collect();
    let mut history = Vec::new();
    for _ in 0..opts.max_iter {
        let peak = xi.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let cut = opts.sparse_tol * peak;
        let next: Vec<usize> = support
            .iter()
            .copied()
            .filter(|&k| xi[k].norm() >= cut && xi[k].norm() > 0.0)
            .collect();
        if next.is_empty() {
            return Err(KronicError::SparsificationFailed);
        }
        let restricted = ms.select_columns(next.iter());
        let v = right_svd(&restricted)?.smallest();
        let mut updated = CVector::zeros(p);
        for (i, &k) in next.iter().enumerate() {
            updated[k] = v[i];
        }
        xi = updated;
        history.push(next.len());
        let stable = next == support;
        support = next;
        if stable {
            break;
        }
    }

    // Undo column scaling, renormalize and fix the phase.
    for (j, &s) in scales.iter().enumerate() {
        xi[j] *= s;
    }
    let nrm = xi.norm();
    if nrm == 0.0 {
        return Err(KronicError::SparsificationFailed);
    }
    xi /= Complex64::new(nrm, 0.0);
    linalg::normalize_phase(&mut xi);
    for z in xi.iter_mut() {
        if lambda.im == 0.0 && m.iter().all(|e| e.im == 0.0) {
            z.im = 0.0;
        }
    }
    let nnz = xi.iter().filter(|z| z.norm() > 0.0).count();
    Ok(EigenfunctionModel {
        lambda,
        residual: residual_of(m, &xi),
        xi,
        library: None,
        nnz,
        singular_values: svd.singular_values,
        support_history: history,
    })
}

fn check_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(KronicError::DimensionMismatch(format!(
            "library matrices differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(KronicError::DegenerateData("empty library matrix".into()));
    }
    Ok(())
}

/// Sparse solution of `(λΘ − Γ)ξ = 0`.
pub fn nullspace_sparse(
    theta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    lambda: Complex64,
    opts: &NullspaceOptions,
) -> Result<EigenfunctionModel> {
    check_pair(theta, gamma)?;
    let m = to_complex(theta) * lambda - to_complex(gamma);
    sparse_null_vector(&m, lambda, opts)
}

/// Conserved quantity: the λ = 0 case, `Γξ = 0`.
pub fn identify_conserved(
    theta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    svd_tol: f64,
    sparse_tol: f64,
) -> Result<EigenfunctionModel> {
    let opts = NullspaceOptions {
        svd_tol,
        sparse_tol,
        ..NullspaceOptions::default()
    };
    nullspace_sparse(theta, gamma, Complex64::new(0.0, 0.0), &opts)
}

/// Sparse solution of `(λΘ(X) − Θ(X′))ξ = 0` for the discrete-time operator.
pub fn nullspace_sparse_discrete(
    theta_x: &DMatrix<f64>,
    theta_xp: &DMatrix<f64>,
    lambda: Complex64,
    opts: &NullspaceOptions,
) -> Result<EigenfunctionModel> {
    nullspace_sparse(theta_x, theta_xp, lambda, opts)
}

/// Least-squares generator `K = Θ†Γ` (singular values below `1e-10·σ_max` dropped).
pub fn generator_ls(theta: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    generator_ls_rcond(theta, gamma, 1e-10)
}

pub fn generator_ls_rcond(
    theta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    rcond: f64,
) -> Result<DMatrix<f64>> {
    check_pair(theta, gamma)?;
    Ok(linalg::pinv(theta, rcond)? * gamma)
}

/// Eigenpairs of `K` sorted by |Re λ| ascending (lightly damped first);
/// ties go to the larger imaginary part.
pub fn generator_eigs(k: &DMatrix<f64>) -> Result<Vec<(Complex64, CVector)>> {
    let mut pairs = linalg::eigenpairs(k)?;
    pairs.sort_by(|a, b| {
        a.0.re
            .abs()
            .partial_cmp(&b.0.re.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.0.im.partial_cmp(&a.0.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(pairs)
}

/// Discrete-time EDMD operator and its spectrum.
#[derive(Debug, Clone)]
pub struct EdmdResult {
    pub k_d: DMatrix<f64>,
    /// Sorted by |λ| descending (closest to the unit circle first).
    pub eigenpairs: Vec<(Complex64, CVector)>,
}

/// `K_d = Θ(X)†Θ(X′)`.
pub fn edmd_discrete(theta_x: &DMatrix<f64>, theta_xp: &DMatrix<f64>) -> Result<EdmdResult> {
    let k_d = generator_ls(theta_x, theta_xp)?;
    let mut eigenpairs = linalg::eigenpairs(&k_d)?;
    eigenpairs.sort_by(|a, b| {
        b.0.norm()
            .partial_cmp(&a.0.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.0.im.partial_cmp(&a.0.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(EdmdResult { k_d, eigenpairs })
}

/// Maximum deviation from exponential behavior along an unforced trajectory:
/// `max_t |φ(x(t)) − e^{λ(t−t0)} φ(x(t0))| / max(1, max_t |φ(x(t))|)`.
pub fn validate_linearity(model: &EigenfunctionModel, test: &Trajectory) -> Result<f64> {
    if test.is_empty() {
        return Err(KronicError::DegenerateData("empty validation trajectory".into()));
    }
    let t0 = test.times[0];
    let mut buf = vec![0.0; test.n()];
    let mut vals = Vec::with_capacity(test.len());
    for k in 0..test.len() {
        buf.iter_mut().zip(test.states.row(k).iter()).for_each(|(b, &v)| *b = v);
        vals.push(model.eval(&buf)?);
    }
    let phi0 = vals[0];
    let scale = vals.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let err = vals
        .iter()
        .zip(&test.times)
        .map(|(&v, &t)| (v - (model.lambda * (t - t0)).exp() * phi0).norm())
        .fold(0.0, f64::max);
    Ok(err / scale)
}

/// Least-squares eigenvalue estimate for a fixed ξ: argmin_λ ‖λΘξ − Γξ‖.
pub fn rayleigh_lambda(theta: &DMatrix<f64>, gamma: &DMatrix<f64>, xi: &CVector) -> Complex64 {
    let a = to_complex(theta) * xi;
    let b = to_complex(gamma) * xi;
    let den = a.dotc(&a);
    if den.norm() == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    a.dotc(&b) / den
}

/// Stacked Θ(X) and Γ(X, Ẋ) for trajectories that carry derivatives.
pub fn data_matrices(
    lib: &MonomialLibrary,
    trajectories: &[&Trajectory],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m: usize = trajectories.iter().map(|t| t.len()).sum();
    let p = lib.len();
    let mut theta = DMatrix::zeros(m, p);
    let mut gamma = DMatrix::zeros(m, p);
    let mut row = 0;
    for traj in trajectories {
        let d = traj.derivatives.as_ref().ok_or_else(|| {
            KronicError::DegenerateData("trajectory has no derivatives".into())
        })?;
        let th = lib.eval_theta(&traj.states)?;
        let ga = lib.eval_gamma(&traj.states, d)?;
        theta.rows_mut(row, traj.len()).copy_from(&th);
        gamma.rows_mut(row, traj.len()).copy_from(&ga);
        row += traj.len();
    }
    Ok((theta, gamma))
}

/// Options for the seeded eigenvalue sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub nullspace: NullspaceOptions,
    /// Re-estimate λ from the sparse ξ and solve again.
    pub refine: bool,
    pub validation_threshold: f64,
    /// Additional uniform grid of real eigenvalues to try.
    pub lambda_grid: Vec<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            nullspace: NullspaceOptions::default(),
            refine: true,
            validation_threshold: 1e-4,
            lambda_grid: Vec::new(),
        }
    }
}

/// Outcome of an identification sweep.
#[derive(Debug, Clone)]
pub struct IdentificationReport {
    pub models: Vec<EigenfunctionModel>,
    /// Validation error per accepted model (NaN when no validation data was given).
    pub validation: Vec<f64>,
    /// Singular values of Γ (the λ = 0 regression matrix), descending.
    pub singular_values: Vec<f64>,
    pub sample_count: usize,
    pub wall_time_seconds: f64,
    /// Seeds whose candidate failed the null-space test or validation.
    pub rejected: usize,
}

/// Seeded sweep: for each seed λ solve the sparse null-space problem, optionally
/// refine λ, and keep candidates whose validation error stays below threshold.
pub fn sweep_eigenvalues(
    lib: &MonomialLibrary,
    theta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    seeds: &[Complex64],
    validation: &[&Trajectory],
    opts: &SweepOptions,
) -> Result<IdentificationReport> {
    check_pair(theta, gamma)?;
    let start = Instant::now();
    let mut all_seeds: Vec<Complex64> = seeds.to_vec();
    all_seeds.extend(opts.lambda_grid.iter().map(|&l| Complex64::new(l, 0.0)));

    let candidates: Vec<Option<(EigenfunctionModel, f64)>> = all_seeds
        .par_iter()
        .map(|&seed| {
            let mut model = nullspace_sparse(theta, gamma, seed, &opts.nullspace).ok()?;
            if opts.refine {
                let refined = rayleigh_lambda(theta, gamma, &model.xi);
                let refined = if seed.im == 0.0 {
                    Complex64::new(refined.re, 0.0)
                } else {
                    refined
                };
                if let Ok(m2) = nullspace_sparse(theta, gamma, refined, &opts.nullspace) {
                    if m2.residual <= model.residual {
                        model = m2;
                    }
                }
            }
            let model = model.with_library(lib);
            let mut worst = f64::NAN;
            for traj in validation {
                let e = validate_linearity(&model, traj).ok()?;
                worst = if worst.is_nan() { e } else { worst.max(e) };
            }
            if !validation.is_empty() && !(worst < opts.validation_threshold) {
                log::debug!("rejected seed {seed}: validation error {worst:e}");
                return None;
            }
            Some((model, worst))
        })
        .collect();

    let mut models: Vec<EigenfunctionModel> = Vec::new();
    let mut errs = Vec::new();
    let mut rejected = 0;
    for c in candidates {
        match c {
            None => rejected += 1,
            Some((model, err)) => {
                let duplicate = models.iter().any(|m| {
                    (m.lambda - model.lambda).norm() <= 1e-8 * model.lambda.norm().max(1.0)
                        && m.support() == model.support()
                });
                if !duplicate {
                    models.push(model);
                    errs.push(err);
                }
            }
        }
    }
    let singular_values = right_svd(&to_complex(gamma))?.singular_values;
    Ok(IdentificationReport {
        models,
        validation: errs,
        singular_values,
        sample_count: theta.nrows(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        rejected,
    })
}

/// Maximum coefficient deviation after least-squares scale alignment of `xi` to `reference`.
pub fn aligned_coefficient_error(xi: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = xi.iter().zip(reference).map(|(a, b)| a * b).sum();
    let den: f64 = xi.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return f64::INFINITY;
    }
    let c = num / den;
    xi.iter()
        .zip(reference)
        .map(|(a, b)| (c * a - b).abs())
        .fold(0.0, f64::max)
}

/// `max |c·φ − H|` over samples after least-squares scaling of φ onto H.
pub fn scaled_max_deviation(phi: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    aligned_coefficient_error(phi.as_slice(), reference.as_slice())
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    lambda: [f64; 2],
    terms: Vec<String>,
    xi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xi_imag: Option<Vec<f64>>,
    expression: String,
    residual: f64,
    nnz: usize,
    validation_error: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    models: Vec<ModelJson>,
    singular_values: Vec<f64>,
    m: usize,
    rejected: usize,
    wall_time_seconds: f64,
}

impl IdentificationReport {
    pub fn to_json_value(&self) -> serde_json::Value {
        let models = self
            .models
            .iter()
            .zip(&self.validation)
            .map(|(m, &v)| ModelJson {
                lambda: [m.lambda.re, m.lambda.im],
                terms: m.library.as_ref().map(|l| l.term_names()).unwrap_or_default(),
                xi: m.xi_re(),
                xi_imag: (!m.xi.iter().all(|z| z.im == 0.0)).then(|| m.xi_im()),
                expression: m.expression(1e-12),
                residual: m.residual,
                nnz: m.nnz,
                validation_error: v.is_finite().then_some(v),
            })
            .collect();
        serde_json::to_value(ReportJson {
            models,
            singular_values: self.singular_values.clone(),
            m: self.sample_count,
            rejected: self.rejected,
            wall_time_seconds: self.wall_time_seconds,
        })
        .expect("report serializes")
    }
}
