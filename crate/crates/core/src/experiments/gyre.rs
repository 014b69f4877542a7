//! Double-gyre drifter studies: autonomous ensemble tracking and a single
//! drifter in the time-periodic flow.

use std::fs::File;
use std::io::BufWriter;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::RunContext;
use crate::control::{gyre_stream_controller, StreamDynamics};
use crate::error::{KronicError, Result};
use crate::systems::{
    make_double_gyre_drifter, simulate, stream_eval, DoubleGyreParams, Trajectory,
};

const GRID_LOWER: [f64; 2] = [0.1, 0.1];
const GRID_UPPER: [f64; 2] = [1.9, 0.9];

/// `k × k` grid over `[0.1, 1.9] × [0.1, 0.9]` with `k = round(√size)`, ordered
/// row by row in y; `jitter` adds a seeded uniform perturbation of at most
/// `jitter` per coordinate (clipped to the grid box).
pub fn gyre_grid(size: usize, jitter: f64, seed: u64) -> Vec<[f64; 2]> {
    let k = ((size as f64).sqrt().round() as usize).max(1);
    let lin = |lo: f64, hi: f64, i: usize| {
        if k == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (k - 1) as f64
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            let mut p = [lin(GRID_LOWER[0], GRID_UPPER[0], i), lin(GRID_LOWER[1], GRID_UPPER[1], j)];
            if jitter > 0.0 {
                for (d, v) in p.iter_mut().enumerate() {
                    *v = (*v + rng.gen_range(-jitter..=jitter)).clamp(GRID_LOWER[d], GRID_UPPER[d]);
                }
            }
            out.push(p);
        }
    }
    out
}

/// Result of one ensemble member.
#[derive(Debug, Clone)]
pub struct GyreEnsembleOutcome {
    pub index: usize,
    pub x0: [f64; 2],
    pub final_state: [f64; 2],
    pub final_error: f64,
    /// `∇Ψ = 0` at the starting point: the drifter cannot be steered there.
    pub uncontrollable_start: bool,
    pub uncontrollable_events: usize,
    pub trajectory: Trajectory,
}

fn dynamics(ctx: &RunContext<'_>) -> StreamDynamics {
    match ctx.cfg.text("a_psi") {
        "atan" => StreamDynamics::Arctangent,
        _ => StreamDynamics::Cotangent,
    }
}

fn params(ctx: &RunContext<'_>) -> Result<DoubleGyreParams> {
    let c = ctx.cfg;
    DoubleGyreParams::new(c.f64("amplitude"), c.f64("omega"), c.f64("epsilon"))
}

fn psi_series(traj: &Trajectory, p: &DoubleGyreParams) -> Vec<f64> {
    (0..traj.len())
        .map(|k| stream_eval(traj.states[(k, 0)], traj.states[(k, 1)], traj.times[k], p).psi)
        .collect()
}

pub(crate) fn run_autonomous(ctx: &mut RunContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let p = params(ctx)?;
    let (psi_ref, q, r) = (cfg.f64("psi_ref"), cfg.f64("q"), cfg.f64("r"));
    let (horizon, dt, tol) = (cfg.f64("horizon"), cfg.f64("dt"), cfg.f64("tol"));
    let dyn_model = dynamics(ctx);
    let sys = make_double_gyre_drifter(p);

    ctx.stage("ensemble");
    let start = Instant::now();
    let grid = gyre_grid(cfg.usize("ensemble_size"), cfg.f64("jitter"), cfg.usize("seed") as u64);
    let outcomes: Vec<GyreEnsembleOutcome> = grid
        .par_iter()
        .enumerate()
        .map(|(index, &x0)| -> Result<GyreEnsembleOutcome> {
            let ctrl = gyre_stream_controller(p, psi_ref, q, DMatrix::identity(2, 2) * r, dyn_model)?;
            let s0 = stream_eval(x0[0], x0[1], 0.0, &p);
            let uncontrollable_start = s0.dpsi_dx.hypot(s0.dpsi_dy) == 0.0;
            let traj = simulate(&sys, &DVector::from_row_slice(&x0), &ctrl, (0.0, horizon), dt, false)?;
            let last = traj.len() - 1;
            let xf = [traj.states[(last, 0)], traj.states[(last, 1)]];
            let final_error = (stream_eval(xf[0], xf[1], traj.times[last], &p).psi - psi_ref).abs();
            Ok(GyreEnsembleOutcome {
                index,
                x0,
                final_state: xf,
                final_error,
                uncontrollable_start,
                uncontrollable_events: ctrl.uncontrollable_events(),
                trajectory: traj,
            })
        })
        .collect::<Result<_>>()?;
    let runtime = start.elapsed().as_secs_f64();

    let excluded = outcomes.iter().filter(|o| o.uncontrollable_start).count();
    let success = outcomes
        .iter()
        .filter(|o| !o.uncontrollable_start && o.final_error < tol)
        .count();
    let required = cfg.usize("min_success").saturating_sub(excluded);
    ctx.check(
        "ensemble.success",
        &format!("drifters with |Ψ(T) − {psi_ref}| < {tol} ({excluded} excluded as uncontrollable)"),
        success as f64,
        required as f64,
        success >= required,
    );
    ctx.check_below("runtime", "ensemble wall time in seconds", runtime, cfg.f64("max_runtime"));

    ctx.stage("write");
    let rows: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.index as f64,
                o.x0[0],
                o.x0[1],
                o.final_state[0],
                o.final_state[1],
                o.final_error,
                o.uncontrollable_start as u8 as f64,
                o.uncontrollable_events as f64,
            ]
        })
        .collect();
    ctx.write_numeric_table(
        "ensemble_summary.csv",
        &["index", "x0", "y0", "xT", "yT", "abs_psi_error", "excluded", "uncontrollable_events"],
        &rows,
    )?;
    let mut samples = Vec::new();
    for o in &outcomes {
        let psi = psi_series(&o.trajectory, &p);
        for k in (0..o.trajectory.len()).step_by(100) {
            samples.push(vec![
                o.index as f64,
                o.trajectory.times[k],
                o.trajectory.states[(k, 0)],
                o.trajectory.states[(k, 1)],
                psi[k],
            ]);
        }
    }
    ctx.write_numeric_table("ensemble.csv", &["index", "t", "x", "y", "psi"], &samples)?;
    let gain_ctrl = gyre_stream_controller(p, psi_ref, q, DMatrix::identity(2, 2) * r, dyn_model)?;
    let xs: Vec<f64> = (0..=40).map(|i| 0.05 * i as f64).collect();
    let ys: Vec<f64> = (0..=20).map(|i| 0.05 * i as f64).collect();
    let path = ctx.path_for("gain_field.csv");
    gain_ctrl.write_gain_field(&xs, &ys, 0.0, BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub(crate) fn run_nonautonomous(ctx: &mut RunContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let p = params(ctx)?;
    if p.epsilon == 0.0 {
        return Err(KronicError::InvalidConfig(
            "the time-periodic study needs epsilon > 0".into(),
        ));
    }
    let (psi_ref, q, r) = (cfg.f64("psi_ref"), cfg.f64("q"), cfg.f64("r"));
    let (horizon, dt) = (cfg.f64("horizon"), cfg.f64("dt"));
    let window = cfg.f64("window_start");
    let x0 = DVector::from_vec(cfg.vector_n("x0", 2)?);
    let sys = make_double_gyre_drifter(p);

    ctx.stage("controlled");
    let ctrl = gyre_stream_controller(p, psi_ref, q, DMatrix::identity(2, 2) * r, dynamics(ctx))?;
    let traj = simulate(&sys, &x0, &ctrl, (0.0, horizon), dt, false)?;
    let psi = psi_series(&traj, &p);
    let in_window = psi
        .iter()
        .zip(&traj.times)
        .filter(|(_, &t)| t >= window - 1e-12)
        .map(|(v, _)| (v - psi_ref).abs())
        .fold(0.0, f64::max);
    if ctrl.a_psi_clamp_events() > 0 {
        log::info!("A_Ψ clamped {} times", ctrl.a_psi_clamp_events());
    }
    ctx.check_below(
        "controlled.band",
        &format!("max |Ψ − {psi_ref}| for t ≥ {window} under control"),
        in_window,
        cfg.f64("band"),
    );

    ctx.stage("unforced");
    let free = simulate(&sys, &x0, &crate::systems::zero_controller(2), (0.0, horizon), dt, false)?;
    let psi_free = psi_series(&free, &p);
    let excursion = psi_free.iter().map(|v| (v - psi_ref).abs()).fold(0.0, f64::max);
    let min_exc = cfg.f64("min_excursion");
    ctx.check(
        "unforced.excursion",
        &format!("max |Ψ − {psi_ref}| of the unforced drifter (must exceed)"),
        excursion,
        min_exc,
        excursion > min_exc,
    );

    ctx.stage("write");
    let rows: Vec<Vec<f64>> = (0..traj.len())
        .step_by(10)
        .map(|k| vec![traj.times[k], psi[k], psi_free[k]])
        .collect();
    ctx.write_numeric_table("psi_series.csv", &["t", "psi_controlled", "psi_unforced"], &rows)?;
    ctx.write_trajectory("traj_controlled.csv", &traj.subsample(10))?;
    ctx.write_trajectory("traj_unforced.csv", &free.subsample(10))?;
    Ok(())
}
