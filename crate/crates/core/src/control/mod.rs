//! Feedback synthesis in eigenfunction coordinates: LQR and pointwise SDRE on
//! `dφ/dt = Λφ + B_φ(x)u`, closed-form energy control, the double-well
//! switching law and the double-gyre stream-function controller.

mod care;

pub use care::{care_residual, solve_care, solve_care_with, CareOptions, RiccatiSolution};

use std::f64::consts::PI;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::{KronicError, Result};
use crate::identify::EigenfunctionModel;
use crate::systems::{
    double_well_hamiltonian, fmt17, stream_eval, Controller, DoubleGyreParams, StateVector,
    Trajectory,
};

pub type VectorMap = Arc<dyn Fn(&StateVector) -> DVector<f64> + Send + Sync>;
pub type MatrixMap = Arc<dyn Fn(&StateVector) -> DMatrix<f64> + Send + Sync>;

/// Eigenfunction coordinates `φ(x)` with linear dynamics `Λ` and input map
/// `B_φ(x) = ∇φ(x)·B`.
#[derive(Clone)]
pub struct EigenfunctionControlSystem {
    pub lambda: DMatrix<f64>,
    pub b: DMatrix<f64>,
    phi: VectorMap,
    grad_phi: MatrixMap,
}

impl std::fmt::Debug for EigenfunctionControlSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EigenfunctionControlSystem")
            .field("lambda", &self.lambda)
            .field("b", &self.b)
            .finish()
    }
}

impl EigenfunctionControlSystem {
    pub fn new(
        lambda: DMatrix<f64>,
        b: DMatrix<f64>,
        phi: impl Fn(&StateVector) -> DVector<f64> + Send + Sync + 'static,
        grad_phi: impl Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if !lambda.is_square() {
            return Err(KronicError::DimensionMismatch("Λ must be square".into()));
        }
        Ok(Self {
            lambda,
            b,
            phi: Arc::new(phi),
            grad_phi: Arc::new(grad_phi),
        })
    }

    /// Build from identified models. A complex pair `σ ± iω` contributes the
    /// real coordinates (Re φ, Im φ) with the block `[[σ, −ω], [ω, σ]]`; the
    /// conjugate partner (negative imaginary part) is skipped.
    pub fn from_models(models: &[EigenfunctionModel], b: DMatrix<f64>) -> Result<Self> {
        let mut blocks: Vec<(f64, f64)> = Vec::new();
        let mut used: Vec<EigenfunctionModel> = Vec::new();
        for m in models {
            if m.lambda.im < 0.0 {
                continue;
            }
            if m.library.is_none() {
                return Err(KronicError::DimensionMismatch("model has no library attached".into()));
            }
            blocks.push((m.lambda.re, m.lambda.im));
            used.push(m.clone());
        }
        let r: usize = blocks.iter().map(|&(_, w)| if w == 0.0 { 1 } else { 2 }).sum();
        let mut lambda = DMatrix::zeros(r, r);
        let mut i = 0;
        for &(s, w) in &blocks {
            lambda[(i, i)] = s;
            if w != 0.0 {
                lambda[(i + 1, i + 1)] = s;
                lambda[(i, i + 1)] = -w;
                lambda[(i + 1, i)] = w;
                i += 2;
            } else {
                i += 1;
            }
        }
        let phi_models = used.clone();
        let phi = move |x: &StateVector| {
            let mut out = Vec::with_capacity(r);
            for m in &phi_models {
                let v = m.eval(x.as_slice()).expect("dimension checked at construction");
                out.push(v.re);
                if m.lambda.im != 0.0 {
                    out.push(v.im);
                }
            }
            DVector::from_vec(out)
        };
        let n = used[0].library.as_ref().map(|l| l.n).unwrap_or(0);
        let grad = move |x: &StateVector| {
            let mut out = DMatrix::zeros(r, n);
            let mut row = 0;
            for m in &used {
                let g = m.gradient(x.as_slice()).expect("dimension checked at construction");
                out.row_mut(row).copy_from(&g.map(|z| z.re).transpose());
                row += 1;
                if m.lambda.im != 0.0 {
                    out.row_mut(row).copy_from(&g.map(|z| z.im).transpose());
                    row += 1;
                }
            }
            out
        };
        Self::new(lambda, b, phi, grad)
    }

    pub fn r(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    pub fn phi(&self, x: &StateVector) -> DVector<f64> {
        (self.phi)(x)
    }

    pub fn grad_phi(&self, x: &StateVector) -> DMatrix<f64> {
        (self.grad_phi)(x)
    }

    pub fn b_phi(&self, x: &StateVector) -> DMatrix<f64> {
        self.grad_phi(x) * &self.b
    }
}

/// Quadratic weights in eigenfunction coordinates and the tracking reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q_phi: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub reference: DVector<f64>,
}

impl CostWeights {
    pub fn new(q_phi: DMatrix<f64>, r: DMatrix<f64>, reference: DVector<f64>) -> Result<Self> {
        care::check_weights(&q_phi, &r)?;
        if reference.len() != q_phi.nrows() {
            return Err(KronicError::DimensionMismatch(format!(
                "reference has length {}, Q has {} rows",
                reference.len(),
                q_phi.nrows()
            )));
        }
        Ok(Self { q_phi, r, reference })
    }

    pub fn regulator(q_phi: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = q_phi.nrows();
        Self::new(q_phi, r, DVector::zeros(n))
    }
}

/// `u = −C(φ(x) − φ_ref)` with a fixed gain.
#[derive(Debug, Clone)]
pub struct LqrController {
    pub sys: EigenfunctionControlSystem,
    pub gain: DMatrix<f64>,
    pub reference: DVector<f64>,
}

impl Controller for LqrController {
    fn control(&self, x: &StateVector, _t: f64) -> DVector<f64> {
        -(&self.gain * (self.sys.phi(x) - &self.reference))
    }
}

pub fn lqr_feedback(
    sys: &EigenfunctionControlSystem,
    w: &CostWeights,
    sol: &RiccatiSolution,
) -> LqrController {
    LqrController {
        sys: sys.clone(),
        gain: sol.gain.clone(),
        reference: w.reference.clone(),
    }
}

type DynamicsMap = Arc<dyn Fn(&StateVector, f64) -> DMatrix<f64> + Send + Sync>;

struct GainCache {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    gain: Option<DMatrix<f64>>,
}

/// Pointwise SDRE: at each query freeze `A` (Λ or a state-dependent override)
/// and `B_φ(x)`, solve the CARE and apply `u = −C(x)(φ(x) − φ_ref)`.
/// Points where the frozen pair is not stabilizable yield `u = 0` and are
/// counted as uncontrollable events.
pub struct SdreController {
    pub sys: EigenfunctionControlSystem,
    pub weights: CostWeights,
    a_of: Option<DynamicsMap>,
    cache: Mutex<Option<GainCache>>,
    events: AtomicUsize,
}

impl SdreController {
    /// Override the frozen dynamics matrix with a state/time dependent `A(x, t)`.
    pub fn with_dynamics(
        mut self,
        a: impl Fn(&StateVector, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.a_of = Some(Arc::new(a));
        self
    }

    pub fn uncontrollable_events(&self) -> usize {
        self.events.load(Ordering::Relaxed)
    }

    /// Gain at `x`, or `None` where the frozen problem has no stabilizing solution.
    pub fn gain_at(&self, x: &StateVector, t: f64) -> Option<DMatrix<f64>> {
        let a = match &self.a_of {
            Some(f) => f(x, t),
            None => self.sys.lambda.clone(),
        };
        let b = self.sys.b_phi(x);
        let close = |u: &DMatrix<f64>, v: &DMatrix<f64>| {
            u.shape() == v.shape() && u.iter().zip(v.iter()).all(|(p, q)| (p - q).abs() <= 1e-12)
        };
        if let Ok(guard) = self.cache.lock() {
            if let Some(c) = guard.as_ref() {
                if close(&c.a, &a) && close(&c.b, &b) {
                    return c.gain.clone();
                }
            }
        }
        let gain = match solve_care(&a, &b, &self.weights.q_phi, &self.weights.r) {
            Ok(sol) => Some(sol.gain),
            Err(e) => {
                self.events.fetch_add(1, Ordering::Relaxed);
                log::debug!("uncontrollable point at t = {t}, x = {:?}: {e}", x.as_slice());
                None
            }
        };
        if let Ok(mut guard) = self.cache.lock() {
            *guard = Some(GainCache {
                a,
                b,
                gain: gain.clone(),
            });
        }
        gain
    }
}

impl Controller for SdreController {
    fn control(&self, x: &StateVector, t: f64) -> DVector<f64> {
        match self.gain_at(x, t) {
            Some(c) => -(c * (self.sys.phi(x) - &self.weights.reference)),
            None => DVector::zeros(self.sys.q()),
        }
    }
}

pub fn sdre_feedback(sys: &EigenfunctionControlSystem, w: &CostWeights) -> SdreController {
    SdreController {
        sys: sys.clone(),
        weights: w.clone(),
        a_of: None,
        cache: Mutex::new(None),
        events: AtomicUsize::new(0),
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Closed-form scalar energy law `u = −sign(B_H)√(Q/R)(H − E_ref)`.
pub struct EnergyController {
    h: Arc<dyn Fn(&StateVector) -> f64 + Send + Sync>,
    b_h: Arc<dyn Fn(&StateVector) -> f64 + Send + Sync>,
    pub gain: f64,
    pub e_ref: f64,
}

impl Controller for EnergyController {
    fn control(&self, x: &StateVector, _t: f64) -> DVector<f64> {
        let u = -sign0((self.b_h)(x)) * self.gain * ((self.h)(x) - self.e_ref);
        DVector::from_element(1, u)
    }
}

pub fn energy_control(
    h: impl Fn(&StateVector) -> f64 + Send + Sync + 'static,
    b_h: impl Fn(&StateVector) -> f64 + Send + Sync + 'static,
    q: f64,
    r: f64,
    e_ref: f64,
) -> Result<EnergyController> {
    if !(q > 0.0) || !(r > 0.0) {
        return Err(KronicError::InvalidWeights(format!(
            "energy control needs Q, R > 0 (got {q}, {r})"
        )));
    }
    Ok(EnergyController {
        h: Arc::new(h),
        b_h: Arc::new(b_h),
        gain: (q / r).sqrt(),
        e_ref,
    })
}

/// Which coordinates the running cost is measured in.
pub enum CostCoordinates<'a> {
    State,
    Eigenfunction(&'a EigenfunctionControlSystem),
}

/// Terminal cost and its running accumulation at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSeries {
    pub total: f64,
    pub cumulative: Vec<f64>,
}

/// `J = ½∫ zᵀQz + uᵀRu dt` by the trapezoidal rule, with `z = x` or `z = φ(x) − φ_ref`.
pub fn cost_eval(traj: &Trajectory, w: &CostWeights, coords: CostCoordinates<'_>) -> Result<CostSeries> {
    let inputs = traj.inputs.as_ref().ok_or(KronicError::MissingInputs)?;
    if inputs.ncols() != w.r.nrows() {
        return Err(KronicError::DimensionMismatch(format!(
            "{} inputs but R is {}x{}",
            inputs.ncols(),
            w.r.nrows(),
            w.r.ncols()
        )));
    }
    let mut integrand = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let x = traj.state(k);
        let z = match &coords {
            CostCoordinates::State => x,
            CostCoordinates::Eigenfunction(sys) => sys.phi(&x),
        };
        if z.len() != w.q_phi.nrows() {
            return Err(KronicError::DimensionMismatch(format!(
                "cost coordinates have length {}, Q is {}x{}",
                z.len(),
                w.q_phi.nrows(),
                w.q_phi.ncols()
            )));
        }
        let z = if z.len() == w.reference.len() { z - &w.reference } else { z };
        let u = inputs.row(k).transpose();
        integrand.push(0.5 * ((z.transpose() * &w.q_phi * &z)[(0, 0)] + (u.transpose() * &w.r * &u)[(0, 0)]));
    }
    let mut cumulative = vec![0.0; traj.len()];
    for k in 1..traj.len() {
        let dt = traj.times[k] - traj.times[k - 1];
        cumulative[k] = cumulative[k - 1] + 0.5 * dt * (integrand[k] + integrand[k - 1]);
    }
    Ok(CostSeries {
        total: cumulative.last().copied().unwrap_or(0.0),
        cumulative,
    })
}

/// Baseline for the slow-manifold system with input on x2: cancel the
/// nonlinearity and apply LQR to the resulting linear pair,
/// `u = λx1² − C_FL x`.
pub fn feedback_linearization_slow_manifold(
    mu: f64,
    lambda: f64,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<impl Controller> {
    if b.shape() != (2, 1) || b[(0, 0)] != 0.0 || b[(1, 0)] == 0.0 {
        return Err(KronicError::SingularFeedbackLinearization(
            "input enters x1 only; cancelling λx1² would need u ∝ x1⁻¹".into(),
        ));
    }
    let b_scale = b[(1, 0)];
    let a = DMatrix::from_row_slice(2, 2, &[mu, 0.0, 0.0, lambda]);
    let sol = solve_care(&a, b, q, r)?;
    let c_fl = sol.gain.clone();
    Ok(move |x: &StateVector, _t: f64| {
        let v = -(&c_fl * x)[(0, 0)];
        DVector::from_element(1, lambda * x[0] * x[0] / b_scale + v)
    })
}

/// Integral-action augmentation: state `(φ, u)`, input `u̇`.
pub fn augmented_integral_system(
    lambda: &DMatrix<f64>,
    b_phi: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = lambda.nrows();
    let q = b_phi.ncols();
    if b_phi.nrows() != r || !lambda.is_square() {
        return Err(KronicError::DimensionMismatch(format!(
            "Λ {:?} and B_φ {:?} are incompatible",
            lambda.shape(),
            b_phi.shape()
        )));
    }
    let mut a_aug = DMatrix::zeros(r + q, r + q);
    a_aug.view_mut((0, 0), (r, r)).copy_from(lambda);
    a_aug.view_mut((0, r), (r, q)).copy_from(b_phi);
    let mut b_aug = DMatrix::zeros(r + q, q);
    b_aug.view_mut((r, 0), (q, q)).copy_from(&DMatrix::identity(q, q));
    Ok((a_aug, b_aug))
}

/// Block-diagonal state weight `diag(Q_φ, R)` and input weight `R̂` for the augmented system.
pub fn augmented_weights(
    q_phi: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_hat: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nq, nr) = (q_phi.nrows(), r.nrows());
    let mut q_aug = DMatrix::zeros(nq + nr, nq + nr);
    q_aug.view_mut((0, 0), (nq, nq)).copy_from(q_phi);
    q_aug.view_mut((nq, nq), (nr, nr)).copy_from(r);
    (q_aug, r_hat.clone())
}

/// Active branch of the basin-hopping law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopBranch {
    /// Left well: raise (or lower) the energy to just above the saddle level.
    ApproachSaddle,
    /// Near the saddle energy in the left well: control off.
    Coast,
    /// Right of the saddle: track the target energy.
    Target,
}

/// Switching controller that moves a particle from the left to the right well
/// of the asymmetric double well (`B = I₂`).
#[derive(Debug, Clone)]
pub struct SwitchingController {
    pub a: f64,
    pub saddle_energy: f64,
    pub target_energy: f64,
    pub delta: f64,
    pub band: f64,
    pub q: f64,
    pub r: f64,
}

impl SwitchingController {
    pub fn branch(&self, x: &StateVector) -> HopBranch {
        let h = double_well_hamiltonian(self.a, x);
        if x[0] > self.a {
            HopBranch::Target
        } else if (h - (self.saddle_energy + self.delta)).abs() <= self.band {
            HopBranch::Coast
        } else {
            HopBranch::ApproachSaddle
        }
    }

    /// Scalar SDRE on `dH/dt = ∇H·u` (λ = 0) tracking `e_ref`.
    fn track(&self, x: &StateVector, e_ref: f64) -> DVector<f64> {
        let a = self.a;
        let b_h = DMatrix::from_row_slice(1, 2, &[x[0].powi(3) - a * x[0] * x[0] - x[0] + a, x[1]]);
        let r = DMatrix::identity(2, 2) * self.r;
        match solve_care(&DMatrix::zeros(1, 1), &b_h, &DMatrix::from_element(1, 1, self.q), &r) {
            Ok(sol) => -(sol.gain.column(0).into_owned()) * (double_well_hamiltonian(a, x) - e_ref),
            Err(_) => DVector::zeros(2),
        }
    }
}

impl Controller for SwitchingController {
    fn control(&self, x: &StateVector, _t: f64) -> DVector<f64> {
        match self.branch(x) {
            HopBranch::Coast => DVector::zeros(2),
            HopBranch::ApproachSaddle => self.track(x, self.saddle_energy + self.delta),
            HopBranch::Target => self.track(x, self.target_energy),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn switching_basin_hop(
    a: f64,
    saddle_energy: f64,
    target_energy: f64,
    delta: f64,
    band: f64,
    q: f64,
    r: f64,
) -> Result<SwitchingController> {
    if !(q > 0.0) || !(r > 0.0) {
        return Err(KronicError::InvalidWeights(format!("need Q, R > 0 (got {q}, {r})")));
    }
    Ok(SwitchingController {
        a,
        saddle_energy,
        target_energy,
        delta,
        band,
        q,
        r,
    })
}

/// How `∂Ψ/∂t = A_Ψ Ψ` is modelled for the time-periodic gyre.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDynamics {
    /// `A_Ψ = π cot(πf) ∂f/∂t`, the exact logarithmic time derivative.
    Cotangent,
    /// `A_Ψ = π arctan(πf) ∂f/∂t`.
    Arctangent,
}

/// SDRE tracking of a stream-function level by a drifter with `B = I₂`.
pub struct GyreController {
    pub params: DoubleGyreParams,
    pub psi_ref: f64,
    pub q: f64,
    pub r: DMatrix<f64>,
    pub dynamics: StreamDynamics,
    r_inv: DMatrix<f64>,
    uncontrollable: AtomicUsize,
    clamped: AtomicUsize,
}

/// Pointwise gain and control of the gyre controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyreGain {
    pub p: f64,
    pub u: [f64; 2],
}

const A_PSI_CAP: f64 = 1e6;
const STAGNATION_TOL: f64 = 1e-14;

impl GyreController {
    pub fn uncontrollable_events(&self) -> usize {
        self.uncontrollable.load(Ordering::Relaxed)
    }

    pub fn a_psi_clamp_events(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn a_psi(&self, x: f64, y: f64, t: f64) -> f64 {
        if self.params.epsilon == 0.0 {
            return 0.0;
        }
        let s = stream_eval(x, y, t, &self.params);
        match self.dynamics {
            StreamDynamics::Arctangent => PI * (PI * s.f).atan() * s.df_dt,
            StreamDynamics::Cotangent => {
                let (sin, cos) = (PI * s.f).sin_cos();
                if sin.abs() < 1e-10 {
                    self.clamped.fetch_add(1, Ordering::Relaxed);
                    log::debug!("A_Ψ clamped at ({x}, {y}, t = {t})");
                    let v = PI * cos * s.df_dt;
                    if v == 0.0 {
                        0.0
                    } else {
                        let side = if sin < 0.0 { -1.0 } else { 1.0 };
                        A_PSI_CAP * v.signum() * side
                    }
                } else {
                    (PI * cos / sin * s.df_dt).clamp(-A_PSI_CAP, A_PSI_CAP)
                }
            }
        }
    }

    pub fn gain(&self, x: f64, y: f64, t: f64) -> GyreGain {
        let s = stream_eval(x, y, t, &self.params);
        let b = DVector::from_vec(vec![s.dpsi_dx, s.dpsi_dy]);
        let g = (b.transpose() * &self.r_inv * &b)[(0, 0)];
        if !(g > STAGNATION_TOL) {
            self.uncontrollable.fetch_add(1, Ordering::Relaxed);
            log::debug!("uncontrollable point ({x}, {y}) at t = {t}: ∇Ψ = 0");
            return GyreGain { p: 0.0, u: [0.0, 0.0] };
        }
        let a = self.a_psi(x, y, t);
        let disc = (a * a + g * self.q).sqrt();
        let p = if a > 0.0 { (a + disc) / g } else { self.q / (disc - a) };
        let u = -(&self.r_inv * &b) * (p * (s.psi - self.psi_ref));
        GyreGain { p, u: [u[0], u[1]] }
    }

    /// Write the gain field on a grid as CSV with columns `x,y,t,p,u1,u2`.
    pub fn write_gain_field<W: Write>(&self, xs: &[f64], ys: &[f64], t: f64, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y", "t", "p", "u1", "u2"])?;
        for &x in xs {
            for &y in ys {
                let g = self.gain(x, y, t);
                w.write_record([fmt17(x), fmt17(y), fmt17(t), fmt17(g.p), fmt17(g.u[0]), fmt17(g.u[1])])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl Controller for GyreController {
    fn control(&self, z: &StateVector, t: f64) -> DVector<f64> {
        let g = self.gain(z[0], z[1], t);
        DVector::from_vec(g.u.to_vec())
    }
}

pub fn gyre_stream_controller(
    params: DoubleGyreParams,
    psi_ref: f64,
    q: f64,
    r: DMatrix<f64>,
    dynamics: StreamDynamics,
) -> Result<GyreController> {
    if !(q > 0.0) {
        return Err(KronicError::InvalidWeights(format!("Q must be positive, got {q}")));
    }
    if r.shape() != (2, 2) {
        return Err(KronicError::DimensionMismatch("drifter R must be 2x2".into()));
    }
    care::check_weights(&DMatrix::from_element(1, 1, q), &r)?;
    let r_inv = r.clone().try_inverse().expect("positive definite");
    Ok(GyreController {
        params,
        psi_ref,
        q,
        r,
        dynamics,
        r_inv,
        uncontrollable: AtomicUsize::new(0),
        clamped: AtomicUsize::new(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_pendulum, pendulum_hamiltonian, stream_function};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> StateVector {
        DVector::from_column_slice(xs)
    }

    fn identity_embedding(a: DMatrix<f64>, b: DMatrix<f64>) -> EigenfunctionControlSystem {
        let n = a.nrows();
        EigenfunctionControlSystem::new(a, b, |x: &StateVector| x.clone(), move |_x: &StateVector| {
            DMatrix::identity(n, n)
        })
        .unwrap()
    }

    #[test]
    fn lqr_on_identity_embedding_is_classical_lqr() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let sys = identity_embedding(a.clone(), b.clone());
        let w = CostWeights::regulator(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
        let sol = solve_care(&a, &b, &w.q_phi, &w.r).unwrap();
        let ctrl = lqr_feedback(&sys, &w, &sol);
        let x = v(&[0.3, -0.2]);
        let u = ctrl.control(&x, 0.0);
        assert_relative_eq!(u[0], -(0.3 + 3f64.sqrt() * -0.2), epsilon = 1e-12);
        let zero = RiccatiSolution {
            p: DMatrix::zeros(2, 2),
            gain: DMatrix::zeros(1, 2),
            residual: 0.0,
        };
        assert_eq!(lqr_feedback(&sys, &w, &zero).control(&x, 0.0)[0], 0.0);
    }

    #[test]
    fn sdre_matches_energy_law_for_scalar_conserved_quantity() {
        let (q, r, b) = (2.0, 0.5, -1.5);
        let sys = EigenfunctionControlSystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, b),
            |x: &StateVector| DVector::from_element(1, x[0]),
            |_x: &StateVector| DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let w = CostWeights::regulator(DMatrix::from_element(1, 1, q), DMatrix::from_element(1, 1, r)).unwrap();
        let sdre = sdre_feedback(&sys, &w);
        let energy = energy_control(|x: &StateVector| x[0], move |_x: &StateVector| b, q, r, 0.0).unwrap();
        for k in 0..50 {
            let x = v(&[-2.0 + 0.09 * k as f64]);
            let us = sdre.control(&x, 0.0)[0];
            let ue = energy.control(&x, 0.0)[0];
            assert!((us - ue).abs() < 1e-12, "{us} vs {ue}");
        }
    }

    #[test]
    fn sdre_zero_at_reference_and_on_uncontrollable_points() {
        let sys = EigenfunctionControlSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            |x: &StateVector| DVector::from_element(1, x[0]),
            |x: &StateVector| DMatrix::from_element(1, 1, x[0]),
        )
        .unwrap();
        let w = CostWeights::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.7),
        )
        .unwrap();
        let sdre = sdre_feedback(&sys, &w);
        assert_eq!(sdre.control(&v(&[0.7]), 0.0)[0], 0.0);
        assert_eq!(sdre.control(&v(&[0.0]), 0.0)[0], 0.0);
        assert_eq!(sdre.uncontrollable_events(), 1);
    }

    #[test]
    fn pendulum_energy_law_example() {
        let pend = make_pendulum();
        let ctrl = energy_control(pendulum_hamiltonian, |x: &StateVector| x[1], 1.0, 1.0, 0.0).unwrap();
        let x = v(&[PI / 2.0, 1.0]);
        assert_relative_eq!(pend.hamiltonian(&x).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(ctrl.control(&x, 0.0)[0], -0.5, epsilon = 1e-15);
        let at_ref = energy_control(pendulum_hamiltonian, |x: &StateVector| x[1], 1.0, 1.0, 0.5).unwrap();
        assert!(at_ref.control(&x, 0.0)[0].abs() < 1e-15);
        let aggressive = energy_control(pendulum_hamiltonian, |x: &StateVector| x[1], 4.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(aggressive.control(&x, 0.0)[0], -1.0, epsilon = 1e-15);
        let still = v(&[0.4, 0.0]);
        assert_eq!(ctrl.control(&still, 0.0)[0], 0.0);
    }

    #[test]
    fn cost_of_constant_state() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let states = DMatrix::from_fn(101, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let traj = Trajectory::new(times.clone(), states, Some(DMatrix::zeros(101, 1)), None).unwrap();
        let w = CostWeights::regulator(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
        let c = cost_eval(&traj, &w, CostCoordinates::State).unwrap();
        assert_relative_eq!(c.total, 0.5, epsilon = 1e-12);
        let zero = Trajectory::new(times.clone(), DMatrix::zeros(101, 2), Some(DMatrix::zeros(101, 1)), None).unwrap();
        assert_eq!(cost_eval(&zero, &w, CostCoordinates::State).unwrap().total, 0.0);
        let bare = Trajectory::new(times, DMatrix::zeros(101, 2), None, None).unwrap();
        assert!(matches!(cost_eval(&bare, &w, CostCoordinates::State), Err(KronicError::MissingInputs)));
    }

    #[test]
    fn feedback_linearization_wiring() {
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let b1 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let fl = feedback_linearization_slow_manifold(-0.1, 1.0, &b1, &q, &r).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.0, 1.0]);
        let c = solve_care(&a, &b1, &q, &r).unwrap().gain;
        let x = v(&[0.0, 0.8]);
        assert_relative_eq!(fl.control(&x, 0.0)[0], -(c * &x)[(0, 0)], epsilon = 1e-14);
        let b2 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(
            feedback_linearization_slow_manifold(0.1, -1.0, &b2, &q, &r),
            Err(KronicError::SingularFeedbackLinearization(_))
        ));
    }

    #[test]
    fn augmented_double_integrator() {
        let (a, b) = augmented_integral_system(&DMatrix::zeros(1, 1), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(b, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let (qa, rh) = augmented_weights(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
        );
        assert!(solve_care(&a, &b, &qa, &rh).unwrap().residual < 1e-10);
        let (a0, b0) = augmented_integral_system(&DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1)).unwrap();
        assert!(crate::linalg::pbh_rank_deficient(&a0, &b0, num_complex::Complex64::new(0.0, 0.0), 1e-9).unwrap());
    }

    #[test]
    fn switching_branches() {
        let a = -0.25;
        let es = double_well_hamiltonian(a, &v(&[a, 0.0]));
        let et = double_well_hamiltonian(a, &v(&[1.0, 0.0]));
        let ctrl = switching_basin_hop(a, es, et, 1e-3, 1e-3, 1.0, 1.0).unwrap();
        let left = v(&[-1.0, 0.1]);
        assert_eq!(ctrl.branch(&left), HopBranch::ApproachSaddle);
        let u = ctrl.control(&left, 0.0);
        let grad = DVector::from_vec(vec![0.0, 0.1]); // ∇H at x1 = -1
        assert!(grad.dot(&u) > 0.0, "energy should increase");
        // a left-well point at the coast energy
        let x1: f64 = -0.8;
        let x2 = (2.0 * (es + 1e-3 - crate::systems::double_well_potential(a, x1))).sqrt();
        let coast = v(&[x1, x2]);
        assert_eq!(ctrl.branch(&coast), HopBranch::Coast);
        assert_eq!(ctrl.control(&coast, 0.0), DVector::zeros(2));
        let right_min = v(&[1.0, 0.0]);
        assert_eq!(ctrl.branch(&right_min), HopBranch::Target);
        assert!(ctrl.control(&right_min, 0.0).norm() == 0.0);
    }

    #[test]
    fn gyre_controller_special_points() {
        let p = DoubleGyreParams::autonomous();
        let ctrl = gyre_stream_controller(p, 0.2, 1.0, DMatrix::identity(2, 2), StreamDynamics::Cotangent).unwrap();
        assert_eq!(ctrl.control(&v(&[0.5, 0.5]), 0.0), DVector::zeros(2));
        assert_eq!(ctrl.uncontrollable_events(), 1);
        // a point on the reference level
        let y = (0.8f64).asin() / PI;
        assert_relative_eq!(stream_function(0.5, y, 0.0, &p).unwrap().psi, 0.2, epsilon = 1e-15);
        assert!(ctrl.control(&v(&[0.5, y]), 0.0).norm() < 1e-15);
        // closed form p = sqrt(Q / |∇Ψ|²) when A_Ψ = 0
        let s = stream_function(0.3, 0.2, 0.0, &p).unwrap();
        let g = ctrl.gain(0.3, 0.2, 0.0);
        assert_relative_eq!(g.p, (1.0 / (s.dpsi_dx.powi(2) + s.dpsi_dy.powi(2))).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gain_field_csv_header() {
        let ctrl = gyre_stream_controller(
            DoubleGyreParams::default(),
            0.2,
            1.0,
            DMatrix::identity(2, 2),
            StreamDynamics::Cotangent,
        )
        .unwrap();
        let mut buf = Vec::new();
        ctrl.write_gain_field(&[0.2, 0.4], &[0.3], 0.1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,t,p,u1,u2\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
