//! Energy-based studies: pendulum and Duffing energy control from identified
//! Hamiltonians, and the double-well basin hop.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use super::RunContext;
use crate::basis::{MonomialLibrary, TrigTerm};
use crate::control::{energy_control, switching_basin_hop, HopBranch};
use crate::error::{KronicError, Result};
use crate::identify::{
    aligned_coefficient_error, data_matrices, generator_eigs, generator_ls, identify_conserved,
    scaled_max_deviation, sweep_eigenvalues, validate_linearity, EigenfunctionModel,
    NullspaceOptions, SweepOptions,
};
use crate::systems::{
    derivatives_exact, double_well_hamiltonian, duffing_hamiltonian, make_double_well,
    make_duffing, make_pendulum, pendulum_hamiltonian, simulate, simulate_unforced,
    ControlAffineSystem, StateVector, Trajectory,
};

/// A conserved quantity `H(x) = Θ(x)ξ` rescaled so the `x2²` coefficient is ½.
#[derive(Debug, Clone)]
pub(crate) struct IdentifiedEnergy {
    lib: MonomialLibrary,
    xi: Vec<f64>,
}

impl IdentifiedEnergy {
    pub(crate) fn from_model(model: &EigenfunctionModel, lib: &MonomialLibrary) -> Result<Self> {
        let k = lib
            .index_of(&[0, 2])
            .ok_or_else(|| KronicError::DegenerateData("library lacks x2²".into()))?;
        let xi = model.xi_re();
        let c = xi[k];
        if !(c.abs() > 1e-12) {
            return Err(KronicError::DegenerateData(
                "identified conserved quantity has no kinetic x2² term".into(),
            ));
        }
        Ok(Self {
            lib: lib.clone(),
            xi: xi.iter().map(|v| 0.5 * v / c).collect(),
        })
    }

    pub(crate) fn h(&self, x: &StateVector) -> f64 {
        self.lib.eval_candidate(&self.xi, x.as_slice()).unwrap_or(f64::NAN)
    }

    pub(crate) fn grad(&self, x: &StateVector) -> DVector<f64> {
        self.lib
            .eval_candidate_gradient(&self.xi, x.as_slice())
            .unwrap_or_else(|_| DVector::from_element(x.len(), f64::NAN))
    }
}

fn unforced_data(sys: &ControlAffineSystem, x0s: &[Vec<f64>], horizon: f64, dt: f64) -> Result<Vec<Trajectory>> {
    x0s.iter()
        .map(|x0| {
            let mut t = simulate_unforced(sys, &DVector::from_column_slice(x0), (0.0, horizon), dt)?;
            t.derivatives = Some(derivatives_exact(sys, &t)?);
            Ok(t)
        })
        .collect()
}

fn conserved_from(lib: &MonomialLibrary, data: &[&Trajectory], opts: &NullspaceOptions) -> Result<EigenfunctionModel> {
    let (theta, gamma) = data_matrices(lib, data)?;
    Ok(identify_conserved(&theta, &gamma, opts.svd_tol, opts.sparse_tol)?.with_library(lib))
}

fn coefficients(lib: &MonomialLibrary, terms: &[(&[u32], f64)]) -> Vec<f64> {
    let mut v = vec![0.0; lib.len()];
    for (e, c) in terms {
        v[lib.index_of(e).expect("term in library")] = *c;
    }
    v
}

fn nullspace_opts(ctx: &RunContext<'_>) -> NullspaceOptions {
    let c = ctx.cfg;
    let has = |k: &str| c.values.contains_key(k);
    NullspaceOptions {
        svd_tol: c.f64("svd_tol"),
        sparse_tol: c.f64("sparse_tol"),
        max_iter: if has("max_iter") { c.usize("max_iter") } else { 20 },
        column_scaling: false,
    }
}

/// Largest increase of `(H − E)²` between consecutive samples where `|B_H| > floor` at both ends.
fn max_error_increase(traj: &Trajectory, h: impl Fn(&StateVector) -> f64, b_h: impl Fn(&StateVector) -> f64, e: f64, floor: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let mut prev: Option<(f64, bool)> = None;
    for k in 0..traj.len() {
        let x = traj.state(k);
        let err2 = (h(&x) - e).powi(2);
        let active = b_h(&x).abs() > floor;
        if let Some((p, pa)) = prev {
            if pa && active {
                worst = worst.max(err2 - p);
            }
        }
        prev = Some((err2, active));
    }
    worst.max(0.0)
}

/// `½∫(Q(H − E)² + R u²) dt` with the trapezoidal rule.
fn energy_cost(traj: &Trajectory, h: impl Fn(&StateVector) -> f64, e: f64, q: f64, r: f64) -> f64 {
    let integrand: Vec<f64> = (0..traj.len())
        .map(|k| {
            let u = traj.input(k).map(|u| u.norm_squared()).unwrap_or(0.0);
            0.5 * (q * (h(&traj.state(k)) - e).powi(2) + r * u)
        })
        .collect();
    (1..traj.len())
        .map(|k| 0.5 * (integrand[k] + integrand[k - 1]) * (traj.times[k] - traj.times[k - 1]))
        .sum()
}

fn fmt_target(e: f64) -> String {
    format!("{e}").replace('-', "m")
}

pub(crate) fn run_pendulum(ctx: &mut RunContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let dt = cfg.f64("dt");
    let sys = make_pendulum();

    ctx.stage("identify");
    let lib = MonomialLibrary::new(2, cfg.usize("degree") as u32, false)?
        .with_trig(TrigTerm::Cos { var: 0, freq: 1.0 })?;
    let data = unforced_data(&sys, &[vec![1.0, 0.0], vec![0.5, 0.5]], cfg.f64("id_horizon"), dt)?;
    let refs: Vec<&Trajectory> = data.iter().collect();
    let model = conserved_from(&lib, &refs, &nullspace_opts(ctx))?;
    let energy = Arc::new(IdentifiedEnergy::from_model(&model, &lib)?);
    let mut reference = coefficients(&lib, &[(&[0, 2], 0.5)]);
    reference[lib.index_of_trig(TrigTerm::Cos { var: 0, freq: 1.0 }).expect("cos term")] = -1.0;
    let coef_err = aligned_coefficient_error(&model.xi_re(), &reference);
    ctx.write_json(
        "identification.json",
        &serde_json::json!({
            "terms": lib.term_names(),
            "xi": model.xi_re(),
            "expression": lib.pretty_print(&energy.xi, 1e-12),
            "residual": model.residual,
            "nnz": model.nnz,
        }),
    )?;
    ctx.check_below("identify.coefficients", "aligned coefficient error against x2²/2 − cos x1", coef_err, 1e-6);
    ctx.check_below("identify.residual", "equation residual of the conserved quantity", model.residual, 1e-6);

    ctx.stage("control");
    let (q, r, tol, slack) = (cfg.f64("q"), cfg.f64("r"), cfg.f64("tol"), cfg.f64("monotone_slack"));
    let horizon = cfg.f64("horizon");
    let x0 = cfg.vector_n("x0", 2)?;
    let x0_low = cfg.vector_n("x0_low", 2)?;
    let mut rows = Vec::new();
    for e in cfg.vector("targets") {
        let start = if e <= -1.0 { &x0_low } else { &x0 };
        let (h, g) = (energy.clone(), energy.clone());
        let ctrl = energy_control(move |x: &StateVector| h.h(x), move |x: &StateVector| g.grad(x)[1], q, r, e)?;
        let traj = simulate(&sys, &DVector::from_column_slice(start), &ctrl, (0.0, horizon), dt, false)?;
        let err: Vec<f64> = (0..traj.len()).map(|k| (pendulum_hamiltonian(&traj.state(k)) - e).abs()).collect();
        let terminal = *err.last().expect("non-empty trajectory");
        let reached = err.iter().position(|&v| v < tol).map(|k| traj.times[k]).unwrap_or(f64::NAN);
        let rise = max_error_increase(&traj, pendulum_hamiltonian, |x| x[1], e, 1e-3);
        let tag = fmt_target(e);
        ctx.check_below(&format!("energy.E{tag}.terminal"), &format!("|H(x(T)) − E| for E = {e}"), terminal, tol);
        ctx.check(
            &format!("energy.E{tag}.monotone"),
            &format!("largest increase of (H − E)² between samples for E = {e} while |B_H| > 1e-3"),
            rise,
            slack,
            rise <= slack,
        );
        ctx.write_trajectory(&format!("traj_E{tag}.csv"), &traj.subsample(10))?;
        rows.push(vec![e, start[0], start[1], terminal, reached, energy_cost(&traj, pendulum_hamiltonian, e, q, r)]);
    }
    ctx.write_numeric_table(
        "energy_control.csv",
        &["target", "x0_1", "x0_2", "terminal_error", "time_to_tol", "cost"],
        &rows,
    )?;
    Ok(())
}

fn duffing_reference(lib: &MonomialLibrary) -> Vec<f64> {
    coefficients(lib, &[(&[2, 0], -2.0 / 3.0), (&[0, 2], 2.0 / 3.0), (&[4, 0], 1.0 / 3.0)])
}

fn duffing_support(lib: &MonomialLibrary) -> Vec<usize> {
    let mut s: Vec<usize> = [[2, 0], [0, 2], [4, 0]]
        .iter()
        .map(|e| lib.index_of(e).expect("degree ≥ 4"))
        .collect();
    s.sort();
    s
}

fn h_values(traj: &Trajectory, f: impl Fn(&StateVector) -> f64) -> DVector<f64> {
    DVector::from_fn(traj.len(), |k, _| f(&traj.state(k)))
}

pub(crate) fn run_duffing_identify(ctx: &mut RunContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let dt = cfg.f64("dt");
    let horizon = cfg.f64("horizon");
    let sys = make_duffing();
    let opts = nullspace_opts(ctx);
    let lib = MonomialLibrary::new(2, cfg.usize("degree") as u32, false)?;
    if lib.degree < 4 {
        return Err(KronicError::InvalidConfig("the Duffing Hamiltonian needs degree ≥ 4".into()));
    }
    let reference = duffing_reference(&lib);
    let support = duffing_support(&lib);

    ctx.stage("simulate");
    let x0 = cfg.vector_n("x0", 2)?;
    let fine = unforced_data(&sys, std::slice::from_ref(&x0), horizon, dt)?.remove(0);
    let holdout = simulate_unforced(&sys, &DVector::from_vec(cfg.vector_n("holdout_x0", 2)?), (0.0, horizon), dt)?;
    let h_hold = h_values(&holdout, duffing_hamiltonian);

    ctx.stage("identify");
    let start = Instant::now();
    let model = conserved_from(&lib, &[&fine], &opts)?;
    let fine_time = start.elapsed().as_secs_f64();
    let coef_err = aligned_coefficient_error(&model.xi_re(), &reference);
    ctx.check(
        "fine.support",
        "support equals {x1², x2², x1⁴} (1 = yes)",
        (model.support() == support) as u8 as f64,
        1.0,
        model.support() == support,
    );
    ctx.check_below("fine.coefficients", "aligned deviation from (−2/3, 2/3, 1/3)", coef_err, cfg.f64("coef_tol"));
    ctx.check_below("fine.residual", "equation residual", model.residual, cfg.f64("residual_tol"));
    let val = validate_linearity(&model, &holdout)?;
    ctx.check_below("fine.validation", "held-out linearity error", val, cfg.f64("validation_threshold"));

    ctx.stage("coarse");
    let stride = (cfg.f64("coarse_dt") / dt).round().max(1.0) as usize;
    let coarse = fine.subsample(stride).head(cfg.usize("coarse_samples"));
    let coarse_model = conserved_from(&lib, &[&coarse], &opts)?;
    let ok = coarse_model.support() == support;
    ctx.check("coarse.support", "coarse support equals {x1², x2², x1⁴} (1 = yes)", ok as u8 as f64, 1.0, ok);
    ctx.check_below("coarse.residual", "coarse equation residual", coarse_model.residual, cfg.f64("coarse_residual_tol"));

    ctx.stage("sweep");
    let (theta, gamma) = data_matrices(&lib, &[&fine])?;
    let mut seeds: Vec<_> = generator_eigs(&generator_ls(&theta, &gamma)?)?.into_iter().map(|(l, _)| l).collect();
    seeds.push(num_complex::Complex64::new(0.0, 0.0));
    let sweep = sweep_eigenvalues(
        &lib,
        &theta,
        &gamma,
        &seeds,
        &[&holdout],
        &SweepOptions {
            nullspace: opts,
            validation_threshold: cfg.f64("validation_threshold"),
            ..SweepOptions::default()
        },
    )?;
    let worst = sweep.validation.iter().copied().fold(0.0, f64::max);
    ctx.check_below(
        "sweep.validation",
        "maximum held-out linearity error of accepted models",
        worst,
        cfg.f64("validation_threshold"),
    );
    let mut report = sweep.to_json_value();
    report["wall_time_seconds"] = serde_json::Value::Null;
    ctx.write_json("identification.json", &report)?;

    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for m in cfg.vector("sweep_sizes") {
        let m = (m as usize).min(fine.len());
        let t0 = Instant::now();
        let (res, ce, he, sup) = match conserved_from(&lib, &[&fine.head(m)], &opts) {
            Ok(md) => {
                let phi = DVector::from_fn(holdout.len(), |k, _| {
                    md.eval(holdout.states.row(k).transpose().as_slice()).map(|z| z.re).unwrap_or(f64::NAN)
                });
                (
                    md.residual,
                    aligned_coefficient_error(&md.xi_re(), &reference),
                    scaled_max_deviation(&phi, &h_hold),
                    (md.support() == support) as u8 as f64,
                )
            }
            Err(e) => {
                log::info!("m = {m}: {e}");
                (f64::NAN, f64::NAN, f64::NAN, 0.0)
            }
        };
        timing.push(vec![m as f64, t0.elapsed().as_secs_f64()]);
        rows.push(vec![m as f64, res, ce, he, sup]);
    }
    ctx.write_numeric_table("sample_sweep.csv", &["m", "residual", "coef_error", "h_error", "support_ok"], &rows)?;
    ctx.write_numeric_table("timing.csv", &["m", "wall_time_seconds"], &timing)?;
    ctx.write_trajectory("identification_trajectory.csv", &fine.subsample(10))?;
    ctx.check_below("runtime", "fine identification wall time in seconds", fine_time, 10.0);
    Ok(())
}

struct DuffingRun {
    traj: Trajectory,
    terminal: f64,
    cost: f64,
}

#[allow(clippy::too_many_arguments)]
fn duffing_energy_run(sys: &ControlAffineSystem, energy: IdentifiedEnergy, x0: &[f64], e: f64, q: f64, r: f64, horizon: f64, dt: f64) -> Result<DuffingRun> {
    let energy = Arc::new(energy);
    let (h, g) = (energy.clone(), energy);
    let ctrl = energy_control(move |x: &StateVector| h.h(x), move |x: &StateVector| g.grad(x)[1], q, r, e)?;
    let traj = simulate(sys, &DVector::from_column_slice(x0), &ctrl, (0.0, horizon), dt, false)?;
    let terminal = (duffing_hamiltonian(&traj.state(traj.len() - 1)) - e).abs();
    let cost = energy_cost(&traj, duffing_hamiltonian, e, q, r);
    Ok(DuffingRun { traj, terminal, cost })
}

pub(crate) fn run_duffing_control(ctx: &mut RunContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let dt = cfg.f64("dt");
    let horizon = cfg.f64("horizon");
    let sys = make_duffing();
    let opts = nullspace_opts(ctx);
    let lib = MonomialLibrary::new(2, cfg.usize("degree") as u32, false)?;
    let x0 = cfg.vector_n("x0", 2)?;
    let (q, r, e) = (cfg.f64("q"), cfg.f64("r"), cfg.f64("target"));

    ctx.stage("identify");
    let data = unforced_data(&sys, std::slice::from_ref(&x0), horizon, dt)?.remove(0);
    let m = cfg.usize("id_samples").min(data.len());
    let model = conserved_from(&lib, &[&data.head(m)], &opts)?;
    let energy = IdentifiedEnergy::from_model(&model, &lib)?;
    ctx.write_json(
        "identification.json",
        &serde_json::json!({
            "m": m,
            "terms": lib.term_names(),
            "xi": model.xi_re(),
            "expression": lib.pretty_print(&energy.xi, 1e-12),
            "residual": model.residual,
        }),
    )?;

    ctx.stage("control");
    let run = duffing_energy_run(&sys, energy, &x0, e, q, r, horizon, dt)?;
    ctx.write_trajectory("traj_controlled.csv", &run.traj.subsample(10))?;
    ctx.check_below("control.terminal", &format!("|H(x(T)) − {e}| with the identified energy"), run.terminal, cfg.f64("tol"));

    ctx.stage("sweep");
    let mut rows = Vec::new();
    for ms in cfg.vector("sweep_sizes") {
        let ms = (ms as usize).min(data.len());
        let out = conserved_from(&lib, &[&data.head(ms)], &opts)
            .and_then(|md| IdentifiedEnergy::from_model(&md, &lib))
            .and_then(|en| duffing_energy_run(&sys, en, &x0, e, q, r, horizon, dt));
        match out {
            Ok(run) => rows.push(vec![ms as f64, run.cost, run.terminal]),
            Err(err) => {
                log::info!("m = {ms}: {err}");
                rows.push(vec![ms as f64, f64::NAN, f64::NAN]);
            }
        }
    }
    ctx.write_numeric_table("cost_sweep.csv", &["m", "J", "terminal_error"], &rows)?;
    Ok(())
}

pub(crate) fn run_double_well(ctx: &mut RunContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let dt = cfg.f64("dt");
    let a = cfg.f64("a");
    let sys = make_double_well(a);

    ctx.stage("identify");
    let lib = MonomialLibrary::new(2, cfg.usize("degree") as u32, false)?;
    let data = unforced_data(
        &sys,
        &[vec![-1.2, 0.0], vec![-0.7, 0.2], vec![1.3, 0.1], vec![0.0, 0.9]],
        cfg.f64("id_horizon"),
        dt,
    )?;
    let refs: Vec<&Trajectory> = data.iter().collect();
    let model = conserved_from(&lib, &refs, &nullspace_opts(ctx))?;
    let reference = coefficients(
        &lib,
        &[(&[0, 2], 0.5), (&[4, 0], 0.25), (&[2, 0], -0.5), (&[3, 0], -a / 3.0), (&[1, 0], a)],
    );
    let coef_err = aligned_coefficient_error(&model.xi_re(), &reference);
    ctx.write_json(
        "identification.json",
        &serde_json::json!({
            "terms": lib.term_names(),
            "xi": model.xi_re(),
            "expression": model.expression(1e-12),
            "residual": model.residual,
        }),
    )?;
    ctx.check_below("identify.coefficients", "aligned coefficient error against the analytic H", coef_err, 1e-6);
    ctx.check_below("identify.residual", "equation residual of the conserved quantity", model.residual, 1e-6);

    ctx.stage("control");
    let h = |x: &StateVector| double_well_hamiltonian(a, x);
    let saddle = h(&DVector::from_vec(vec![a, 0.0]));
    let target = h(&DVector::from_vec(vec![1.0, 0.0]));
    let ctrl = switching_basin_hop(a, saddle, target, cfg.f64("delta"), cfg.f64("band"), cfg.f64("q"), cfg.f64("r"))?;
    for (label, key) in [("x0", "x0"), ("x0_alt", "x0_alt")] {
        let x0 = DVector::from_vec(cfg.vector_n(key, 2)?);
        let traj = simulate(&sys, &x0, &ctrl, (0.0, cfg.f64("horizon")), dt, false)?;
        let crossed = (1..traj.len()).any(|k| {
            let (p, c) = (traj.state(k - 1), traj.state(k));
            p[0] <= a && c[0] > a && c[1] > 0.0
        });
        let terminal = (h(&traj.state(traj.len() - 1)) - target).abs();
        let mut coast_u: f64 = 0.0;
        let mut branches = Vec::with_capacity(traj.len());
        for k in 0..traj.len() {
            let x = traj.state(k);
            let b = ctrl.branch(&x);
            if b == HopBranch::Coast {
                coast_u = coast_u.max(traj.input(k).map(|u| u.amax()).unwrap_or(0.0));
            }
            branches.push(b);
        }
        ctx.check(&format!("{label}.crossing"), "crosses x1 = a moving rightward (1 = yes)", crossed as u8 as f64, 1.0, crossed);
        ctx.check_below(&format!("{label}.terminal"), "|H(x(T)) − H(1, 0)|", terminal, cfg.f64("tol"));
        ctx.check(&format!("{label}.coast"), "max |u| on coast-branch samples", coast_u, 0.0, coast_u == 0.0);

        let stride = 10;
        let rows: Vec<Vec<String>> = (0..traj.len())
            .step_by(stride)
            .map(|k| {
                let x = traj.state(k);
                vec![
                    crate::systems::fmt17(traj.times[k]),
                    crate::systems::fmt17(h(&x)),
                    format!("{:?}", branches[k]),
                ]
            })
            .collect();
        ctx.write_table(&format!("branches_{label}.csv"), &["t", "H", "branch"], &rows)?;
        ctx.write_trajectory(&format!("traj_{label}.csv"), &traj.subsample(stride))?;
    }
    Ok(())
}
