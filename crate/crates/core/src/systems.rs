//! Benchmark dynamical systems, fixed-step RK4 integration and dataset generation.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{KronicError, Result};

/// A point in state space. Length must equal the owning system's dimension.
pub type StateVector = DVector<f64>;

pub type DriftFn = Arc<dyn Fn(&StateVector, f64) -> DVector<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&StateVector) -> f64 + Send + Sync>;
pub type GradientField = Arc<dyn Fn(&StateVector) -> DVector<f64> + Send + Sync>;

/// A feedback law `u = k(x, t)`.
pub trait Controller: Send + Sync {
    fn control(&self, x: &StateVector, t: f64) -> DVector<f64>;
}

impl<F> Controller for F
where
    F: Fn(&StateVector, f64) -> DVector<f64> + Send + Sync,
{
    fn control(&self, x: &StateVector, t: f64) -> DVector<f64> {
        self(x, t)
    }
}

/// The zero input for a system with `q` channels.
pub fn zero_controller(q: usize) -> impl Controller {
    move |_: &StateVector, _: f64| DVector::zeros(q)
}

/// Axis-aligned box the state is clamped to after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    fn clamp(&self, x: &mut StateVector) -> bool {
        let mut clamped = false;
        for i in 0..x.len() {
            let v = x[i].clamp(self.lower[i], self.upper[i]);
            if v != x[i] {
                x[i] = v;
                clamped = true;
            }
        }
        clamped
    }
}

/// `dx/dt = f(x, t) + B u` with a constant input map `B`.
#[derive(Clone)]
pub struct ControlAffineSystem {
    name: String,
    n: usize,
    drift: DriftFn,
    input_map: DMatrix<f64>,
    time_dependent: bool,
    hamiltonian: Option<(ScalarField, GradientField)>,
    domain: Option<BoxDomain>,
}

impl std::fmt::Debug for ControlAffineSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("q", &self.q())
            .field("time_dependent", &self.time_dependent)
            .field("has_hamiltonian", &self.hamiltonian.is_some())
            .finish()
    }
}

impl ControlAffineSystem {
    pub fn new(
        name: impl Into<String>,
        input_map: DMatrix<f64>,
        time_dependent: bool,
        drift: impl Fn(&StateVector, f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            n: input_map.nrows(),
            drift: Arc::new(drift),
            input_map,
            time_dependent,
            hamiltonian: None,
            domain: None,
        }
    }

    pub fn with_hamiltonian(
        mut self,
        h: impl Fn(&StateVector) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&StateVector) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hamiltonian = Some((Arc::new(h), Arc::new(grad)));
        self
    }

    pub fn with_domain(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.domain = Some(BoxDomain { lower, upper });
        self
    }

    /// Replace the input map; the row count must stay equal to `n`.
    pub fn with_input_map(mut self, b: DMatrix<f64>) -> Result<Self> {
        if b.nrows() != self.n {
            return Err(KronicError::DimensionMismatch(format!(
                "input map has {} rows, system dimension is {}",
                b.nrows(),
                self.n
            )));
        }
        self.input_map = b;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn q(&self) -> usize {
        self.input_map.ncols()
    }
    pub fn input_map(&self) -> &DMatrix<f64> {
        &self.input_map
    }
    pub fn time_dependent(&self) -> bool {
        self.time_dependent
    }
    pub fn domain(&self) -> Option<&BoxDomain> {
        self.domain.as_ref()
    }

    pub fn drift(&self, x: &StateVector, t: f64) -> DVector<f64> {
        (self.drift)(x, t)
    }

    pub fn rhs(&self, x: &StateVector, u: &DVector<f64>, t: f64) -> DVector<f64> {
        (self.drift)(x, t) + &self.input_map * u
    }

    pub fn hamiltonian(&self, x: &StateVector) -> Option<f64> {
        self.hamiltonian.as_ref().map(|(h, _)| h(x))
    }

    pub fn hamiltonian_gradient(&self, x: &StateVector) -> Option<DVector<f64>> {
        self.hamiltonian.as_ref().map(|(_, g)| g(x))
    }

    pub fn hamiltonian_fn(&self) -> Option<ScalarField> {
        self.hamiltonian.as_ref().map(|(h, _)| h.clone())
    }

    pub fn hamiltonian_gradient_fn(&self) -> Option<GradientField> {
        self.hamiltonian.as_ref().map(|(_, g)| g.clone())
    }

    fn check_state(&self, x: &StateVector) -> Result<()> {
        if x.len() != self.n {
            return Err(KronicError::DimensionMismatch(format!(
                "state has length {}, system `{}` has n = {}",
                x.len(),
                self.name,
                self.n
            )));
        }
        Ok(())
    }
}

/// Sampled trajectory: times, states and optionally inputs and state derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: Option<DMatrix<f64>>,
    pub derivatives: Option<DMatrix<f64>>,
    /// Number of steps after which the state was clamped back into the system domain.
    pub clamp_events: usize,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        states: DMatrix<f64>,
        inputs: Option<DMatrix<f64>>,
        derivatives: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = times.len();
        if states.nrows() != m {
            return Err(KronicError::DimensionMismatch(format!(
                "{} times but {} state rows",
                m,
                states.nrows()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KronicError::UnsupportedSampling(
                "times must be strictly increasing".into(),
            ));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(KronicError::DegenerateData("non-finite state entry".into()));
        }
        if let Some(u) = &inputs {
            if u.nrows() != m {
                return Err(KronicError::DimensionMismatch(format!(
                    "{} times but {} input rows",
                    m,
                    u.nrows()
                )));
            }
        }
        if let Some(d) = &derivatives {
            if d.shape() != states.shape() {
                return Err(KronicError::DimensionMismatch(
                    "derivative matrix shape differs from states".into(),
                ));
            }
        }
        Ok(Self {
            times,
            states,
            inputs,
            derivatives,
            clamp_events: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, k: usize) -> StateVector {
        self.states.row(k).transpose()
    }

    pub fn input(&self, k: usize) -> Option<DVector<f64>> {
        self.inputs.as_ref().map(|u| u.row(k).transpose())
    }

    /// First `m` samples.
    pub fn head(&self, m: usize) -> Trajectory {
        let m = m.min(self.len());
        Trajectory {
            times: self.times[..m].to_vec(),
            states: self.states.rows(0, m).into_owned(),
            inputs: self.inputs.as_ref().map(|u| u.rows(0, m).into_owned()),
            derivatives: self.derivatives.as_ref().map(|d| d.rows(0, m).into_owned()),
            clamp_events: self.clamp_events,
        }
    }

    /// Every `stride`-th sample, starting with the first.
    pub fn subsample(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        let pick = |m: &DMatrix<f64>| m.select_rows(idx.iter());
        Trajectory {
            times: idx.iter().map(|&k| self.times[k]).collect(),
            states: pick(&self.states),
            inputs: self.inputs.as_ref().map(pick),
            derivatives: self.derivatives.as_ref().map(pick),
            clamp_events: self.clamp_events,
        }
    }

    /// CSV with header `t,x1..xn[,u1..uq][,dx1..dxn]`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.n();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        if let Some(u) = &self.inputs {
            header.extend((1..=u.ncols()).map(|i| format!("u{i}")));
        }
        if self.derivatives.is_some() {
            header.extend((1..=n).map(|i| format!("dx{i}")));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt17(self.times[k])];
            row.extend(self.states.row(k).iter().map(|&v| fmt17(v)));
            if let Some(u) = &self.inputs {
                row.extend(u.row(k).iter().map(|&v| fmt17(v)));
            }
            if let Some(d) = &self.derivatives {
                row.extend(d.row(k).iter().map(|&v| fmt17(v)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Trajectory> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(KronicError::DimensionMismatch(
                "trajectory CSV must start with a `t` column".into(),
            ));
        }
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .map(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
                        .unwrap_or(false)
                })
                .count()
        };
        let n = count("x");
        let q = count("u");
        let nd = count("dx");
        if nd != 0 && nd != n {
            return Err(KronicError::DimensionMismatch(format!(
                "{n} state columns but {nd} derivative columns"
            )));
        }
        let mut times = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        KronicError::DimensionMismatch(format!("bad number `{s}`: {e}"))
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != 1 + n + q + nd {
                return Err(KronicError::DimensionMismatch(format!(
                    "row has {} fields, header has {}",
                    vals.len(),
                    1 + n + q + nd
                )));
            }
            times.push(vals[0]);
            data.extend_from_slice(&vals[1..]);
        }
        let m = times.len();
        let width = n + q + nd;
        let all = DMatrix::from_row_slice(m, width, &data);
        let states = all.columns(0, n).into_owned();
        let inputs = (q > 0).then(|| all.columns(n, q).into_owned());
        let derivatives = (nd > 0).then(|| all.columns(n + q, nd).into_owned());
        Trajectory::new(times, states, inputs, derivatives)
    }
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// One classical RK4 step of `dx/dt = f(x, t) + B u` with `u` held over the step.
pub fn rk4_step(
    system: &ControlAffineSystem,
    x: &StateVector,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
) -> Result<StateVector> {
    if !(dt > 0.0) {
        return Err(KronicError::DegenerateParameter(format!("dt must be positive, got {dt}")));
    }
    system.check_state(x)?;
    if u.len() != system.q() {
        return Err(KronicError::DimensionMismatch(format!(
            "input has length {}, system expects q = {}",
            u.len(),
            system.q()
        )));
    }
    let bu = system.input_map() * u;
    let f = |x: &StateVector, t: f64| system.drift(x, t) + &bu;
    let k1 = f(x, t);
    let k2 = f(&(x + &k1 * (0.5 * dt)), t + 0.5 * dt);
    let k3 = f(&(x + &k2 * (0.5 * dt)), t + 0.5 * dt);
    let k4 = f(&(x + &k3 * dt), t + dt);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(KronicError::IntegrationDiverged {
            t: t + dt,
            state: x.iter().copied().collect(),
        });
    }
    Ok(next)
}

/// Integrate from `x0` over `[t0, tf]` with fixed step `dt`, querying the
/// controller once per step at the step-start state. The input recorded on a
/// row is the one applied over the following step (the last row records the
/// controller output at the final state).
pub fn simulate(
    system: &ControlAffineSystem,
    x0: &StateVector,
    controller: &dyn Controller,
    t_span: (f64, f64),
    dt: f64,
    record_derivatives: bool,
) -> Result<Trajectory> {
    let (t0, tf) = t_span;
    if !(tf > t0) {
        return Err(KronicError::DegenerateParameter(format!(
            "empty time span [{t0}, {tf}]"
        )));
    }
    if !(dt > 0.0) {
        return Err(KronicError::DegenerateParameter(format!("dt must be positive, got {dt}")));
    }
    system.check_state(x0)?;
    let steps = ((tf - t0) / dt).round() as usize;
    let m = steps + 1;
    let n = system.n();
    let q = system.q();
    let mut times = Vec::with_capacity(m);
    let mut states = DMatrix::zeros(m, n);
    let mut inputs = DMatrix::zeros(m, q);
    let mut derivs = record_derivatives.then(|| DMatrix::zeros(m, n));
    let mut x = x0.clone();
    let mut clamp_events = 0usize;
    if let Some(dom) = system.domain() {
        if dom.clamp(&mut x) {
            clamp_events += 1;
        }
    }
    for k in 0..m {
        let t = t0 + k as f64 * dt;
        let u = controller.control(&x, t);
        if u.len() != q {
            return Err(KronicError::DimensionMismatch(format!(
                "controller returned {} inputs, system expects {q}",
                u.len()
            )));
        }
        times.push(t);
        states.set_row(k, &x.transpose());
        inputs.set_row(k, &u.transpose());
        if let Some(d) = derivs.as_mut() {
            d.set_row(k, &system.rhs(&x, &u, t).transpose());
        }
        if k + 1 < m {
            x = rk4_step(system, &x, &u, t, dt)?;
            if let Some(dom) = system.domain() {
                if dom.clamp(&mut x) {
                    clamp_events += 1;
                    log::debug!("{}: state clamped to domain at t = {}", system.name(), t + dt);
                }
            }
        }
    }
    let mut traj = Trajectory::new(times, states, Some(inputs), derivs)?;
    traj.clamp_events = clamp_events;
    Ok(traj)
}

/// Unforced trajectory without recorded inputs.
pub fn simulate_unforced(
    system: &ControlAffineSystem,
    x0: &StateVector,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    let zero = zero_controller(system.q());
    let mut traj = simulate(system, x0, &zero, t_span, dt, false)?;
    traj.inputs = None;
    Ok(traj)
}

/// Rows `f(x_k, t_k) + B u_k` (inputs treated as zero when absent).
pub fn derivatives_exact(system: &ControlAffineSystem, traj: &Trajectory) -> Result<DMatrix<f64>> {
    if traj.n() != system.n() {
        return Err(KronicError::DimensionMismatch(format!(
            "trajectory has {} states, system has {}",
            traj.n(),
            system.n()
        )));
    }
    if let Some(u) = &traj.inputs {
        if u.ncols() != system.q() {
            return Err(KronicError::DimensionMismatch(format!(
                "trajectory has {} inputs, system has {}",
                u.ncols(),
                system.q()
            )));
        }
    }
    let mut out = DMatrix::zeros(traj.len(), system.n());
    for k in 0..traj.len() {
        let x = traj.state(k);
        let mut row = system.drift(&x, traj.times[k]);
        if let Some(u) = traj.input(k) {
            row += system.input_map() * u;
        }
        out.set_row(k, &row.transpose());
    }
    Ok(out)
}

/// Second-order finite differences on a uniform grid: central in the interior,
/// one-sided three-point stencils at both ends.
pub fn derivatives_finite_difference(traj: &Trajectory) -> Result<DMatrix<f64>> {
    let m = traj.len();
    if m < 3 {
        return Err(KronicError::UnsupportedSampling(format!(
            "need at least 3 samples, got {m}"
        )));
    }
    let dt = traj.times[1] - traj.times[0];
    for w in traj.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) + 1e-12 * w[1].abs() {
            return Err(KronicError::UnsupportedSampling(
                "finite differences need a uniform time step".into(),
            ));
        }
    }
    let x = &traj.states;
    let mut d = DMatrix::zeros(m, x.ncols());
    for j in 0..x.ncols() {
        d[(0, j)] = (-3.0 * x[(0, j)] + 4.0 * x[(1, j)] - x[(2, j)]) / (2.0 * dt);
        for k in 1..m - 1 {
            d[(k, j)] = (x[(k + 1, j)] - x[(k - 1, j)]) / (2.0 * dt);
        }
        d[(m - 1, j)] =
            (3.0 * x[(m - 1, j)] - 4.0 * x[(m - 2, j)] + x[(m - 3, j)]) / (2.0 * dt);
    }
    Ok(d)
}

fn col(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Quadratic system with a slow manifold: `(mu x1, lambda (x2 - x1^2))`.
pub fn make_slow_manifold(mu: f64, lambda: f64, input_map: DMatrix<f64>) -> Result<ControlAffineSystem> {
    if (lambda - 2.0 * mu).abs() <= 1e-12 * lambda.abs().max(1.0) {
        return Err(KronicError::DegenerateParameter(format!(
            "lambda = 2 mu ({lambda}) makes x2 - b x1^2 undefined"
        )));
    }
    if input_map.nrows() != 2 {
        return Err(KronicError::DimensionMismatch(format!(
            "slow-manifold input map needs 2 rows, got {}",
            input_map.nrows()
        )));
    }
    Ok(ControlAffineSystem::new(
        format!("slow_manifold(mu={mu}, lambda={lambda})"),
        input_map,
        false,
        move |x: &StateVector, _t| {
            DVector::from_vec(vec![mu * x[0], lambda * (x[1] - x[0] * x[0])])
        },
    ))
}

/// `b = lambda / (lambda - 2 mu)` for the slow-manifold eigenfunction `x2 - b x1^2`.
pub fn slow_manifold_b(mu: f64, lambda: f64) -> f64 {
    lambda / (lambda - 2.0 * mu)
}

pub fn pendulum_hamiltonian(x: &StateVector) -> f64 {
    0.5 * x[1] * x[1] - x[0].cos()
}

/// Frictionless pendulum, `H = x2^2/2 - cos x1`, input on the velocity.
pub fn make_pendulum() -> ControlAffineSystem {
    ControlAffineSystem::new("pendulum", col(&[0.0, 1.0]), false, |x: &StateVector, _t| {
        DVector::from_vec(vec![x[1], -x[0].sin()])
    })
    .with_hamiltonian(pendulum_hamiltonian, |x: &StateVector| {
        DVector::from_vec(vec![x[0].sin(), x[1]])
    })
}

pub fn duffing_hamiltonian(x: &StateVector) -> f64 {
    let x1 = x[0];
    0.5 * x[1] * x[1] - 0.5 * x1 * x1 + 0.25 * x1.powi(4)
}

/// Undamped Duffing oscillator, `H = x2^2/2 - x1^2/2 + x1^4/4`.
pub fn make_duffing() -> ControlAffineSystem {
    ControlAffineSystem::new("duffing", col(&[0.0, 1.0]), false, |x: &StateVector, _t| {
        DVector::from_vec(vec![x[1], x[0] - x[0].powi(3)])
    })
    .with_hamiltonian(duffing_hamiltonian, |x: &StateVector| {
        DVector::from_vec(vec![x[0].powi(3) - x[0], x[1]])
    })
}

/// Asymmetric double-well potential `x^4/4 - x^2/2 - (a/3) x^3 + a x`.
pub fn double_well_potential(a: f64, x1: f64) -> f64 {
    0.25 * x1.powi(4) - 0.5 * x1 * x1 - a / 3.0 * x1.powi(3) + a * x1
}

pub fn double_well_hamiltonian(a: f64, x: &StateVector) -> f64 {
    0.5 * x[1] * x[1] + double_well_potential(a, x[0])
}

/// Particle in an asymmetric double well, fully actuated (`B = I`).
pub fn make_double_well(a: f64) -> ControlAffineSystem {
    ControlAffineSystem::new(
        format!("double_well(a={a})"),
        DMatrix::identity(2, 2),
        false,
        move |x: &StateVector, _t| {
            let x1 = x[0];
            DVector::from_vec(vec![x[1], -x1.powi(3) + a * x1 * x1 + x1 - a])
        },
    )
    .with_hamiltonian(
        move |x: &StateVector| double_well_hamiltonian(a, x),
        move |x: &StateVector| {
            let x1 = x[0];
            DVector::from_vec(vec![x1.powi(3) - a * x1 * x1 - x1 + a, x[1]])
        },
    )
}

/// Double-gyre parameters: amplitude `A`, forcing frequency `omega`, perturbation `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DoubleGyreParams {
    pub amplitude: f64,
    pub omega: f64,
    pub epsilon: f64,
}

impl Default for DoubleGyreParams {
    fn default() -> Self {
        Self {
            amplitude: 0.25,
            omega: 2.0 * PI,
            epsilon: 0.25,
        }
    }
}

impl DoubleGyreParams {
    pub fn new(amplitude: f64, omega: f64, epsilon: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !(omega > 0.0) || !(0.0..1.0).contains(&epsilon) {
            return Err(KronicError::DegenerateParameter(format!(
                "double gyre needs A > 0, omega > 0, 0 <= epsilon < 1 (got {amplitude}, {omega}, {epsilon})"
            )));
        }
        Ok(Self {
            amplitude,
            omega,
            epsilon,
        })
    }

    pub fn autonomous() -> Self {
        Self {
            epsilon: 0.0,
            ..Self::default()
        }
    }
}

/// Stream function value, its spatial gradient, and the time-warp `f(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSample {
    pub psi: f64,
    pub dpsi_dx: f64,
    pub dpsi_dy: f64,
    pub f: f64,
    pub df_dx: f64,
    pub df_dt: f64,
}

impl StreamSample {
    pub fn velocity(&self) -> (f64, f64) {
        (-self.dpsi_dy, self.dpsi_dx)
    }
}

/// Analytic evaluation without a domain check (used inside the integrator,
/// whose intermediate stages may step marginally outside the box).
pub fn stream_eval(x: f64, y: f64, t: f64, p: &DoubleGyreParams) -> StreamSample {
    let s = (p.omega * t).sin();
    let c = (p.omega * t).cos();
    let eps = p.epsilon;
    let f = eps * s * x * x + (1.0 - 2.0 * eps * s) * x;
    let df_dx = 2.0 * eps * s * x + 1.0 - 2.0 * eps * s;
    let df_dt = eps * p.omega * c * (x * x - 2.0 * x);
    let (sf, cf) = (PI * f).sin_cos();
    let (sy, cy) = (PI * y).sin_cos();
    StreamSample {
        psi: p.amplitude * sf * sy,
        dpsi_dx: p.amplitude * PI * cf * df_dx * sy,
        dpsi_dy: p.amplitude * PI * sf * cy,
        f,
        df_dx,
        df_dt,
    }
}

/// Double-gyre stream function `A sin(pi f(x,t)) sin(pi y)` on `[0,2]x[0,1]`.
pub fn stream_function(x: f64, y: f64, t: f64, p: &DoubleGyreParams) -> Result<StreamSample> {
    const SLACK: f64 = 1e-12;
    if !(-SLACK..=2.0 + SLACK).contains(&x) || !(-SLACK..=1.0 + SLACK).contains(&y) {
        return Err(KronicError::OutOfDomain { x, y });
    }
    Ok(stream_eval(x, y, t, p))
}

/// A passive drifter advected by the gyre velocity, actuated in both directions.
pub fn make_double_gyre_drifter(p: DoubleGyreParams) -> ControlAffineSystem {
    ControlAffineSystem::new(
        format!("double_gyre(eps={})", p.epsilon),
        DMatrix::identity(2, 2),
        p.epsilon != 0.0,
        move |z: &StateVector, t| {
            let s = stream_eval(z[0], z[1], t, &p);
            let (vx, vy) = s.velocity();
            DVector::from_vec(vec![vx, vy])
        },
    )
    .with_domain(vec![0.0, 0.0], vec![2.0, 1.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> StateVector {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let sys = ControlAffineSystem::new("zero", col(&[0.0, 0.0]), false, |x: &StateVector, _| {
            DVector::zeros(x.len())
        });
        let x = v(&[0.3, -1.2]);
        let next = rk4_step(&sys, &x, &v(&[0.0]), 0.0, 0.1).unwrap();
        assert_eq!(next, x);
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let sys = ControlAffineSystem::new("decay", col(&[1.0]), false, |x: &StateVector, _| -x);
        let traj = simulate_unforced(&sys, &v(&[1.0]), (0.0, 1.0), 1e-3).unwrap();
        let last = traj.states[(traj.len() - 1, 0)];
        assert!((last - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn pendulum_step_matches_taylor_series() {
        // Fifth-order Taylor expansion of the unforced pendulum flow; RK4 agrees to O(dt^5).
        let sys = make_pendulum();
        let x0 = v(&[0.7, 0.4]);
        let (q, p) = (x0[0], x0[1]);
        let (s, c) = q.sin_cos();
        let taylor = |h: f64| {
            let q1 = p;
            let q2 = -s;
            let q3 = -c * p;
            let q4 = s * p * p + c * s;
            let q5 = c * p.powi(3) - 3.0 * s * s * p + c * c * p;
            let x = q + q1 * h + q2 * h * h / 2.0 + q3 * h.powi(3) / 6.0 + q4 * h.powi(4) / 24.0
                + q5 * h.powi(5) / 120.0;
            let y = q1 + q2 * h + q3 * h * h / 2.0 + q4 * h.powi(3) / 6.0 + q5 * h.powi(4) / 24.0;
            (x, y)
        };
        let mut prev = f64::INFINITY;
        for &dt in &[0.1, 0.05, 0.025] {
            let next = rk4_step(&sys, &x0, &v(&[0.0]), 0.0, dt).unwrap();
            let (tx, ty) = taylor(dt);
            let err = (next[0] - tx).abs().max((next[1] - ty).abs());
            assert!(err < 2.0 * dt.powi(5), "dt {dt}: err {err}");
            if prev.is_finite() {
                assert!(err < prev / 16.0, "error should shrink at least like dt^4");
            }
            prev = err;
        }
    }

    #[test]
    fn pendulum_fixed_point_stays_put() {
        let sys = make_pendulum();
        let traj = simulate_unforced(&sys, &v(&[0.0, 0.0]), (0.0, 5.0), 0.01).unwrap();
        assert!(traj.states.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn slow_manifold_first_component_is_exponential() {
        let sys = make_slow_manifold(-0.1, 1.0, col(&[0.0, 1.0])).unwrap();
        let traj = simulate_unforced(&sys, &v(&[1.0, 1.0]), (0.0, 5.0), 1e-3).unwrap();
        for k in (0..traj.len()).step_by(500) {
            let t = traj.times[k];
            assert!((traj.states[(k, 0)] - (-0.1 * t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn slow_manifold_rejects_resonant_parameters() {
        assert!(matches!(
            make_slow_manifold(0.5, 1.0, col(&[0.0, 1.0])),
            Err(KronicError::DegenerateParameter(_))
        ));
    }

    #[test]
    fn benchmark_hamiltonian_values() {
        let pend = make_pendulum();
        assert_relative_eq!(pend.hamiltonian(&v(&[0.0, 0.0])).unwrap(), -1.0);
        assert_relative_eq!(pend.hamiltonian(&v(&[PI, 0.0])).unwrap(), 1.0);
        let duff = make_duffing();
        assert_relative_eq!(duff.hamiltonian(&v(&[1.0, 0.0])).unwrap(), -0.25);
        assert_relative_eq!(duff.hamiltonian(&v(&[-1.0, 0.0])).unwrap(), -0.25);
        for i in 0..20 {
            let x1 = -1.4 + 0.14 * i as f64;
            let x2 = x1 * (1.0 - x1 * x1 / 2.0).sqrt();
            assert!(duff.hamiltonian(&v(&[x1, x2])).unwrap().abs() < 1e-15);
        }
        assert_eq!(duff.drift(&v(&[1.0, 0.0]), 0.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn double_well_critical_points() {
        let a = -0.25;
        let sys = make_double_well(a);
        for &x1 in &[-1.0, a, 1.0] {
            assert!(sys.drift(&v(&[x1, 0.0]), 0.0).norm() < 1e-15);
        }
        let sym = make_double_well(0.0);
        let h = |x: &[f64]| sym.hamiltonian(&v(x)).unwrap();
        assert_relative_eq!(h(&[0.7, 0.3]), h(&[-0.7, 0.3]));
    }

    #[test]
    fn stream_function_values() {
        let p = DoubleGyreParams::autonomous();
        let s = stream_function(0.5, 0.5, 0.0, &p).unwrap();
        assert_relative_eq!(s.psi, 0.25, epsilon = 1e-15);
        let s = stream_function(0.5, 0.25, 3.0, &p).unwrap();
        assert_relative_eq!(s.psi, 0.25 * 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_eq!(s.f, 0.5);
        assert!(matches!(
            stream_function(2.5, 0.5, 0.0, &p),
            Err(KronicError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn gyre_center_is_stagnation_point() {
        let sys = make_double_gyre_drifter(DoubleGyreParams::autonomous());
        let vel = sys.drift(&v(&[0.5, 0.5]), 0.0);
        assert!(vel.norm() < 1e-15);
        for i in 0..=20 {
            let x = 0.1 * i as f64;
            assert!(sys.drift(&v(&[x, 0.0]), 0.0)[1].abs() < 1e-15);
            assert!(sys.drift(&v(&[x, 1.0]), 0.0)[1].abs() < 1e-15);
        }
    }

    #[test]
    fn finite_differences_exact_for_linear_motion() {
        let times: Vec<f64> = (0..10).map(|k| 0.1 * k as f64).collect();
        let states = DMatrix::from_fn(10, 2, |k, j| (j as f64 + 1.5) * times[k]);
        let traj = Trajectory::new(times, states, None, None).unwrap();
        let d = derivatives_finite_difference(&traj).unwrap();
        for k in 0..10 {
            assert_relative_eq!(d[(k, 0)], 1.5, epsilon = 1e-12);
            assert_relative_eq!(d[(k, 1)], 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn finite_differences_of_sine() {
        let dt = 1e-3;
        let m = 6284;
        let times: Vec<f64> = (0..m).map(|k| k as f64 * dt).collect();
        let states = DMatrix::from_fn(m, 1, |k, _| times[k].sin());
        let traj = Trajectory::new(times.clone(), states, None, None).unwrap();
        let d = derivatives_finite_difference(&traj).unwrap();
        let err = (0..m).map(|k| (d[(k, 0)] - times[k].cos()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn finite_differences_reject_nonuniform_grid() {
        let traj = Trajectory::new(
            vec![0.0, 0.1, 0.3],
            DMatrix::zeros(3, 1),
            None,
            None,
        )
        .unwrap();
        assert!(matches!(
            derivatives_finite_difference(&traj),
            Err(KronicError::UnsupportedSampling(_))
        ));
    }

    #[test]
    fn trajectory_rejects_unordered_times() {
        assert!(Trajectory::new(vec![0.0, 0.0], DMatrix::zeros(2, 1), None, None).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let sys = ControlAffineSystem::new("blowup", col(&[1.0]), false, |x: &StateVector, _| {
            x.map(|v| v * v * 1e300)
        });
        let err = simulate_unforced(&sys, &v(&[10.0]), (0.0, 1.0), 0.1).unwrap_err();
        assert!(matches!(err, KronicError::IntegrationDiverged { .. }));
    }

    #[test]
    fn csv_roundtrip_preserves_bits() {
        let sys = make_duffing();
        let traj = simulate(
            &sys,
            &v(&[0.1, -0.3]),
            &|x: &StateVector, _t: f64| DVector::from_element(1, -0.1 * x[1]),
            (0.0, 0.05),
            0.01,
            true,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,u1,dx1,dx2\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
    }
}
