//! Slow-manifold studies: eigenfunction identification and controller comparisons.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use super::RunContext;
use crate::basis::MonomialLibrary;
use crate::control::{
    cost_eval, feedback_linearization_slow_manifold, lqr_feedback, sdre_feedback, solve_care,
    CostCoordinates, CostWeights, EigenfunctionControlSystem,
};
use crate::error::{KronicError, Result};
use crate::identify::{
    data_matrices, generator_eigs, generator_ls, sweep_eigenvalues, NullspaceOptions, SweepOptions,
};
use crate::systems::{
    derivatives_exact, make_slow_manifold, simulate, simulate_unforced, slow_manifold_b,
    Controller, StateVector, Trajectory,
};

/// Eigenfunction coordinates `(x1, x2 − b x1², x1²)` with `Λ = diag(μ, λ, 2μ)`.
pub fn slow_manifold_kronic_system(mu: f64, lambda: f64, b_map: DMatrix<f64>) -> Result<EigenfunctionControlSystem> {
    let b = slow_manifold_b(mu, lambda);
    EigenfunctionControlSystem::new(
        DMatrix::from_diagonal(&DVector::from_vec(vec![mu, lambda, 2.0 * mu])),
        b_map,
        move |x: &StateVector| DVector::from_vec(vec![x[0], x[1] - b * x[0] * x[0], x[0] * x[0]]),
        move |x: &StateVector| {
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -2.0 * b * x[0], 1.0, 2.0 * x[0], 0.0])
        },
    )
}

/// The controllable two-dimensional reduction `(x1, x2 − b x1²)`, `Λ = diag(μ, λ)`.
pub fn slow_manifold_reduced_system(mu: f64, lambda: f64, b_map: DMatrix<f64>) -> Result<EigenfunctionControlSystem> {
    let b = slow_manifold_b(mu, lambda);
    EigenfunctionControlSystem::new(
        DMatrix::from_diagonal(&DVector::from_vec(vec![mu, lambda])),
        b_map,
        move |x: &StateVector| DVector::from_vec(vec![x[0], x[1] - b * x[0] * x[0]]),
        move |x: &StateVector| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -2.0 * b * x[0], 1.0]),
    )
}

/// Monomial embedding `y = (x1, x2, x1²)` with its closed linear dynamics.
fn embedded_y_system(mu: f64, lambda: f64, b_map: DMatrix<f64>) -> Result<EigenfunctionControlSystem> {
    EigenfunctionControlSystem::new(
        DMatrix::from_row_slice(3, 3, &[mu, 0.0, 0.0, 0.0, lambda, -lambda, 0.0, 0.0, 2.0 * mu]),
        b_map,
        |x: &StateVector| DVector::from_vec(vec![x[0], x[1], x[0] * x[0]]),
        |x: &StateVector| DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0 * x[0], 0.0]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    Unstabilizable { eigenvalue: [f64; 2] },
    Refused { reason: String },
    NotImplemented,
}

impl RowStatus {
    pub fn label(&self) -> String {
        match self {
            RowStatus::Ok => "ok".into(),
            RowStatus::Unstabilizable { eigenvalue } => {
                format!("unstabilizable ({:.6}{:+.6}i)", eigenvalue[0], eigenvalue[1])
            }
            RowStatus::Refused { .. } => "refused".into(),
            RowStatus::NotImplemented => "not-implemented".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub controller: String,
    #[serde(flatten)]
    pub status: RowStatus,
    pub j_x: Option<f64>,
    pub j_phi: Option<f64>,
    pub final_norm: Option<f64>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    #[serde(skip)]
    pub j_x_series: Vec<f64>,
}

impl ComparisonRow {
    fn status_only(name: &str, status: RowStatus) -> Self {
        Self {
            controller: name.into(),
            status,
            j_x: None,
            j_phi: None,
            final_norm: None,
            trajectory: None,
            j_x_series: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub case: u8,
    pub x0: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.controller == name)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<28} {:<32} {:>14} {:>14} {:>12}\n",
            "controller", "status", "J_x", "J_phi", "|x(T)|"
        );
        let f = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            s.push_str(&format!(
                "{:<28} {:<32} {:>14} {:>14} {:>12}\n",
                r.controller,
                r.status.label(),
                f(r.j_x),
                f(r.j_phi),
                r.final_norm.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into())
            ));
        }
        s
    }
}

/// Shared parameters of the controller comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowManifoldSetup {
    pub mu: f64,
    pub lambda: f64,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub q: f64,
    pub r: f64,
    pub r_phi: f64,
}

impl SlowManifoldSetup {
    pub fn case1() -> Self {
        Self {
            mu: -0.1,
            lambda: 1.0,
            x0: vec![1.0, 1.0],
            horizon: 50.0,
            dt: 1e-3,
            q: 1.0,
            r: 1.0,
            r_phi: 1.0,
        }
    }

    pub fn case2() -> Self {
        Self {
            mu: 0.1,
            lambda: -1.0,
            r_phi: 4.0,
            ..Self::case1()
        }
    }
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn run_row(
    name: &str,
    setup: &SlowManifoldSetup,
    b_map: &DMatrix<f64>,
    controller: &dyn Controller,
    phi_cost: Option<(&EigenfunctionControlSystem, &CostWeights)>,
) -> Result<ComparisonRow> {
    let sys = make_slow_manifold(setup.mu, setup.lambda, b_map.clone())?;
    let x0 = DVector::from_column_slice(&setup.x0);
    let traj = simulate(&sys, &x0, controller, (0.0, setup.horizon), setup.dt, false)?;
    let wx = CostWeights::regulator(DMatrix::identity(2, 2) * setup.q, scalar(setup.r))?;
    let jx = cost_eval(&traj, &wx, CostCoordinates::State)?;
    let j_phi = match phi_cost {
        Some((s, w)) => Some(cost_eval(&traj, w, CostCoordinates::Eigenfunction(s))?.total),
        None => None,
    };
    let final_norm = traj.state(traj.len() - 1).norm();
    Ok(ComparisonRow {
        controller: name.into(),
        status: RowStatus::Ok,
        j_x: Some(jx.total),
        j_phi,
        final_norm: Some(final_norm),
        trajectory: Some(traj),
        j_x_series: jx.cumulative,
    })
}

fn unstabilizable_row(name: &str, err: KronicError) -> Result<ComparisonRow> {
    match err {
        KronicError::Unstabilizable { eigenvalue } => Ok(ComparisonRow::status_only(
            name,
            RowStatus::Unstabilizable {
                eigenvalue: [eigenvalue.re, eigenvalue.im],
            },
        )),
        other => Err(other),
    }
}

/// Run the controller line-up of one slow-manifold case from a shared initial state.
pub fn compare_controllers(case: u8, setup: &SlowManifoldSetup) -> Result<Comparison> {
    let (mu, lam, q, r) = (setup.mu, setup.lambda, setup.q, setup.r);
    let b = slow_manifold_b(mu, lam);
    let a_lin = DMatrix::from_diagonal(&DVector::from_vec(vec![mu, lam]));
    let mut rows = Vec::new();
    match case {
        1 => {
            let b_map = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
            let kron = slow_manifold_kronic_system(mu, lam, b_map.clone())?;
            let q_phi = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, b, 0.0, b, b * b]) * q;
            let w_phi = CostWeights::regulator(q_phi, scalar(r))?;

            let lin = crate::control::EigenfunctionControlSystem::new(
                a_lin.clone(),
                b_map.clone(),
                |x: &StateVector| x.clone(),
                |_x: &StateVector| DMatrix::identity(2, 2),
            )?;
            let w_lin = CostWeights::regulator(DMatrix::identity(2, 2) * q, scalar(r))?;
            let sol = solve_care(&a_lin, &b_map, &w_lin.q_phi, &w_lin.r)?;
            rows.push(run_row("linearized LQR", setup, &b_map, &lqr_feedback(&lin, &w_lin, &sol), Some((&kron, &w_phi)))?);

            let ysys = embedded_y_system(mu, lam, b_map.clone())?;
            let w_y = CostWeights::regulator(DMatrix::from_diagonal(&DVector::from_vec(vec![q, q, 0.0])), scalar(r))?;
            let b_y = ysys.b_phi(&DVector::zeros(2));
            let sol_y = solve_care(&ysys.lambda, &b_y, &w_y.q_phi, &w_y.r)?;
            rows.push(run_row("KRONIC in y", setup, &b_map, &lqr_feedback(&ysys, &w_y, &sol_y), Some((&kron, &w_phi)))?);

            let b_phi = kron.b_phi(&DVector::zeros(2));
            let sol_phi = solve_care(&kron.lambda, &b_phi, &w_phi.q_phi, &w_phi.r)?;
            rows.push(run_row("KRONIC", setup, &b_map, &lqr_feedback(&kron, &w_phi, &sol_phi), Some((&kron, &w_phi)))?);

            let fl = feedback_linearization_slow_manifold(mu, lam, &b_map, &w_lin.q_phi, &w_lin.r)?;
            rows.push(run_row("feedback linearization", setup, &b_map, &fl, Some((&kron, &w_phi)))?);
        }
        2 => {
            let b_map = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
            let red = slow_manifold_reduced_system(mu, lam, b_map.clone())?;
            let w_red = CostWeights::regulator(DMatrix::identity(2, 2) * q, scalar(setup.r_phi))?;

            let lin = EigenfunctionControlSystem::new(
                a_lin.clone(),
                b_map.clone(),
                |x: &StateVector| x.clone(),
                |_x: &StateVector| DMatrix::identity(2, 2),
            )?;
            let w_lin = CostWeights::regulator(DMatrix::identity(2, 2) * q, scalar(r))?;
            let sol = solve_care(&a_lin, &b_map, &w_lin.q_phi, &w_lin.r)?;
            rows.push(run_row("linearized LQR", setup, &b_map, &lqr_feedback(&lin, &w_lin, &sol), Some((&red, &w_red)))?);

            let ysys = embedded_y_system(mu, lam, b_map.clone())?;
            let b_y = ysys.b_phi(&DVector::zeros(2));
            let q_y = DMatrix::from_diagonal(&DVector::from_vec(vec![q, q, 0.0]));
            match solve_care(&ysys.lambda, &b_y, &q_y, &scalar(r)) {
                Ok(_) => {
                    return Err(KronicError::Eigensolver(
                        "embedded pair unexpectedly stabilizable".into(),
                    ))
                }
                Err(e) => rows.push(unstabilizable_row("LQR on embedded y", e)?),
            }

            let full = slow_manifold_kronic_system(mu, lam, b_map.clone())?;
            let b_full = full.b_phi(&DVector::zeros(2));
            match solve_care(&full.lambda, &b_full, &(DMatrix::identity(3, 3) * q), &scalar(setup.r_phi)) {
                Ok(_) => {
                    return Err(KronicError::Eigensolver(
                        "three-state eigenfunction pair unexpectedly stabilizable".into(),
                    ))
                }
                Err(e) => rows.push(unstabilizable_row("KRONIC (3-state)", e)?),
            }

            let sdre = sdre_feedback(&red, &w_red);
            let mut row = run_row("KRONIC-SDRE", setup, &b_map, &sdre, Some((&red, &w_red)))?;
            if sdre.uncontrollable_events() > 0 {
                log::warn!("SDRE hit {} uncontrollable points", sdre.uncontrollable_events());
            }
            row.controller = "KRONIC-SDRE".into();
            rows.push(row);

            match feedback_linearization_slow_manifold(mu, lam, &b_map, &w_lin.q_phi, &w_lin.r) {
                Err(KronicError::SingularFeedbackLinearization(reason)) => rows.push(
                    ComparisonRow::status_only("feedback linearization", RowStatus::Refused { reason }),
                ),
                Err(e) => return Err(e),
                Ok(_) => {
                    return Err(KronicError::InvalidConfig(
                        "feedback linearization accepted an x1 input".into(),
                    ))
                }
            }
        }
        other => {
            return Err(KronicError::InvalidConfig(format!(
                "unknown comparison case `{other}` (expected 1 or 2)"
            )))
        }
    }
    rows.push(ComparisonRow::status_only("TPBV", RowStatus::NotImplemented));
    Ok(Comparison {
        case,
        x0: setup.x0.clone(),
        rows,
    })
}

fn setup_from(ctx: &RunContext<'_>, case2: bool) -> Result<SlowManifoldSetup> {
    let c = ctx.cfg;
    Ok(SlowManifoldSetup {
        mu: c.f64("mu"),
        lambda: c.f64("lambda"),
        x0: c.vector_n("x0", 2)?,
        horizon: c.f64("horizon"),
        dt: c.f64("dt"),
        q: c.f64("q"),
        r: c.f64("r"),
        r_phi: if case2 { c.f64("r_phi") } else { c.f64("r") },
    })
}

/// Write the comparison table, cumulative-cost series and per-controller trajectories.
pub(crate) fn write_comparison(ctx: &mut RunContext<'_>, cmp: &Comparison) -> Result<()> {
    let rows: Vec<Vec<String>> = cmp
        .rows
        .iter()
        .map(|r| {
            let f = |v: Option<f64>| v.map(crate::systems::fmt17).unwrap_or_else(|| r.status.label());
            vec![r.controller.clone(), r.status.label(), f(r.j_x), f(r.j_phi), f(r.final_norm)]
        })
        .collect();
    ctx.write_table("comparison.csv", &["controller", "status", "J_x", "J_phi", "final_norm"], &rows)?;
    ctx.write_json("comparison.json", &serde_json::to_value(cmp)?)?;
    std::fs::write(ctx.path_for("comparison.txt"), cmp.render())?;

    let ok: Vec<&ComparisonRow> = cmp.rows.iter().filter(|r| r.is_ok()).collect();
    if let Some(first) = ok.first() {
        let times = &first.trajectory.as_ref().expect("ok rows carry trajectories").times;
        let stride = ((0.01 / (times[1] - times[0])).round() as usize).max(1);
        let mut header = vec!["t".to_string()];
        header.extend(ok.iter().map(|r| format!("J_x[{}]", r.controller)));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let series: Vec<Vec<f64>> = (0..times.len())
            .step_by(stride)
            .map(|k| {
                let mut row = vec![times[k]];
                row.extend(ok.iter().map(|r| r.j_x_series[k]));
                row
            })
            .collect();
        ctx.write_numeric_table("cumulative_cost.csv", &header_refs, &series)?;
    }
    for r in ok {
        let name = format!(
            "traj_{}.csv",
            r.controller.to_lowercase().replace(|c: char| !c.is_ascii_alphanumeric(), "_")
        );
        ctx.write_trajectory(&name, &r.trajectory.as_ref().expect("ok rows").subsample(10))?;
    }
    Ok(())
}

pub(crate) fn run_case1(ctx: &mut RunContext<'_>) -> Result<()> {
    let setup = setup_from(ctx, false)?;
    let cfg = ctx.cfg;
    let (mu, lam) = (setup.mu, setup.lambda);
    let b = slow_manifold_b(mu, lam);

    ctx.stage("identify");
    let sys = make_slow_manifold(mu, lam, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))?;
    let id_h = cfg.f64("id_horizon");
    let dt = setup.dt;
    let mut data = Vec::new();
    for x0 in [[1.0, 1.0], [-1.0, 0.5], [0.5, -1.0], [-0.3, -0.2]] {
        let mut t = simulate_unforced(&sys, &DVector::from_row_slice(&x0), (0.0, id_h), dt)?;
        t.derivatives = Some(derivatives_exact(&sys, &t)?);
        data.push(t);
    }
    let holdout = simulate_unforced(&sys, &DVector::from_vec(cfg.vector_n("holdout_x0", 2)?), (0.0, id_h), dt)?;
    let lib = MonomialLibrary::new(2, cfg.usize("degree") as u32, false)?;
    let refs: Vec<&Trajectory> = data.iter().collect();
    let (theta, gamma) = data_matrices(&lib, &refs)?;
    let k = generator_ls(&theta, &gamma)?;
    let seeds: Vec<Complex64> = generator_eigs(&k)?.into_iter().map(|(l, _)| l).collect();
    let opts = SweepOptions {
        nullspace: NullspaceOptions {
            svd_tol: cfg.f64("svd_tol"),
            sparse_tol: cfg.f64("sparse_tol"),
            max_iter: cfg.usize("max_iter"),
            column_scaling: false,
        },
        validation_threshold: cfg.f64("validation_threshold"),
        ..SweepOptions::default()
    };
    let report = sweep_eigenvalues(&lib, &theta, &gamma, &seeds, &[&holdout], &opts)?;
    ctx.write_json("identification.json", &report.to_json_value())?;
    ctx.write_json("library.json", &serde_json::to_value(&lib)?)?;

    let i_x1 = lib.index_of(&[1, 0]);
    let i_x2 = lib.index_of(&[0, 1]);
    let i_x11 = lib.index_of(&[2, 0]);
    let fast = report.models.iter().find(|m| {
        (m.lambda - lam).norm() < 1e-4 && Some(m.support()) == i_x2.zip(i_x11).map(|(a, c)| {
            let mut s = vec![a, c];
            s.sort();
            s
        })
    });
    let ratio_err = fast
        .map(|m| ((m.xi[i_x11.unwrap()] / m.xi[i_x2.unwrap()]).re + b).abs())
        .unwrap_or(f64::INFINITY);
    ctx.check_below(
        "eigenfunction.fast",
        "model with λ ≈ lambda on {x2, x1²}: |ratio + b|",
        ratio_err,
        1e-4,
    );
    let slow_err = report
        .models
        .iter()
        .filter(|m| Some(m.support()) == i_x1.map(|i| vec![i]))
        .map(|m| (m.lambda - mu).norm())
        .fold(f64::INFINITY, f64::min);
    ctx.check_below("eigenfunction.slow", "model supported on {x1}: |λ − mu|", slow_err, 1e-4);
    let worst = report.validation.iter().copied().fold(0.0, f64::max);
    ctx.check_below(
        "eigenfunction.validation",
        "maximum held-out linearity error of accepted models",
        worst,
        cfg.f64("validation_threshold"),
    );

    case1_control(ctx)
}

pub(crate) fn case1_control(ctx: &mut RunContext<'_>) -> Result<()> {
    let setup = setup_from(ctx, false)?;
    ctx.stage("control");
    let cmp = compare_controllers(1, &setup)?;
    write_comparison(ctx, &cmp)?;
    let jx = |name: &str| cmp.row(name).and_then(|r| r.j_x).unwrap_or(f64::NAN);
    let (jk, jy, jl, jf) = (jx("KRONIC"), jx("KRONIC in y"), jx("linearized LQR"), jx("feedback linearization"));
    ctx.check_below("cost.kronic_vs_y", "|J_x(KRONIC) − J_x(KRONIC in y)|", (jk - jy).abs(), 1e-9);
    ctx.check("cost.kronic_vs_lqr", "J_x(KRONIC) − J_x(linearized LQR) ≤ 0", jk - jl, 0.0, jk - jl <= 0.0);
    ctx.check("cost.fl_vs_kronic", "J_x(feedback linearization) − J_x(KRONIC) ≥ 0", jf - jk, 0.0, jf - jk >= 0.0);
    let fin = cmp.row("KRONIC").and_then(|r| r.final_norm).unwrap_or(f64::NAN);
    ctx.check_below("kronic.final_norm", "‖x(T)‖ under KRONIC", fin, 1e-2);
    Ok(())
}

pub(crate) fn run_case2(ctx: &mut RunContext<'_>) -> Result<()> {
    let setup = setup_from(ctx, true)?;
    ctx.stage("control");
    let cmp = compare_controllers(2, &setup)?;
    write_comparison(ctx, &cmp)?;
    let two_mu = 2.0 * setup.mu;
    let emb = match cmp.row("LQR on embedded y").map(|r| &r.status) {
        Some(RowStatus::Unstabilizable { eigenvalue }) => {
            Complex64::new(eigenvalue[0], eigenvalue[1]) - two_mu
        }
        _ => Complex64::new(f64::INFINITY, 0.0),
    };
    ctx.check_below(
        "embedding.unstabilizable",
        "embedded 3-state pair reported unstabilizable at 2·mu: |λ − 2mu|",
        emb.norm(),
        1e-9,
    );
    let sdre = cmp.row("KRONIC-SDRE").expect("row present");
    ctx.check_below(
        "sdre.final_norm",
        "‖x(T)‖ under the reduced-system SDRE",
        sdre.final_norm.unwrap_or(f64::INFINITY),
        ctx.cfg.f64("stab_tol"),
    );
    let finite = sdre.j_x.is_some_and(f64::is_finite) && sdre.j_phi.is_some_and(f64::is_finite);
    ctx.check("sdre.costs_finite", "J_x and J_phi of the SDRE run are finite", finite as u8 as f64, 1.0, finite);
    let refused = matches!(cmp.row("feedback linearization").map(|r| &r.status), Some(RowStatus::Refused { .. }));
    ctx.check("fl.refused", "feedback linearization refuses the x1 input", refused as u8 as f64, 1.0, refused);
    Ok(())
}
