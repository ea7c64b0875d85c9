//! Built-in models: the F16 longitudinal aircraft model and a linearized satellite orbit
//! model with time-varying dynamics.

use nalgebra::{DMatrix, DVector};

use crate::error::{config, Result};
use crate::estimation::{discrete_q_from_continuous, lyapunov_propagate, GaussianBelief};
use crate::sysmodel::{
    discretize_tustin, discretize_zoh, state_transition, NoiseFilter, Step, TimeVaryingLinearSystem,
};

/// Channel names of the F16 output vector, in order.
pub const F16_CHANNELS: [&str; 5] = ["udot", "wdot", "alpha", "q", "qbar"];

/// Continuous-time F16 longitudinal model with states `(V, α, θ, q)` and one disturbance input.
#[derive(Debug, Clone, PartialEq)]
pub struct F16Model {
    pub ac: DMatrix<f64>,
    pub bc: DMatrix<f64>,
    pub cc: DMatrix<f64>,
    pub dc: DMatrix<f64>,
    /// Cutoff of the first-order disturbance filter (rad/s).
    pub omega_c: f64,
    /// Variance of the white noise driving the disturbance filter (deg²).
    pub disturbance_variance: f64,
}

pub fn f16_model() -> F16Model {
    #[rustfmt::skip]
    let ac = DMatrix::from_row_slice(4, 4, &[
        -0.0179, 33.2244, -32.1700, 0.6728,
        -0.0001, -1.4528, 0.0, 0.9323,
        0.0, 0.0, 0.0, 1.0000,
        -0.0000, -4.1970, 0.0, -1.8836,
    ]);
    let bc = DMatrix::from_column_slice(4, 1, &[0.5697, -0.0029, 0.0, -0.4670]);
    #[rustfmt::skip]
    let c_scaled = DMatrix::from_row_slice(5, 4, &[
        -0.0000, 0.0332, -0.0322, 0.0007,
        -0.0001, -1.3544, 0.0, 0.8692,
        0.0, 0.0010, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0010,
        0.0017, 0.0, 0.0, 0.0,
    ]);
    let dc = DMatrix::from_column_slice(5, 1, &[0.5697, -2.7345, 0.0, 0.0, 0.0]);
    F16Model {
        ac,
        bc,
        cc: c_scaled * 1e3,
        dc,
        omega_c: 10.0,
        disturbance_variance: 5.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discretization {
    Zoh,
    Tustin,
}

/// Discretized F16 plant replicated as an `m`-periodic system, plus its disturbance filter.
pub fn f16_periodic_system(
    dt: f64,
    method: Discretization,
    omega_c: f64,
    m: usize,
) -> Result<(TimeVaryingLinearSystem, NoiseFilter)> {
    let f = f16_model();
    let (ad, bd, cd, dd) = match method {
        Discretization::Zoh => {
            let (ad, bd) = discretize_zoh(&f.ac, &f.bc, dt)?;
            (ad, bd, f.cc.clone(), f.dc.clone())
        }
        Discretization::Tustin => discretize_tustin(&f.ac, &f.bc, &f.cc, &f.dc, dt)?,
    };
    let variance = DMatrix::from_element(1, 1, f.disturbance_variance);
    let step = Step::new(ad, bd, cd, variance).with_feedthrough(dd);
    let sys = TimeVaryingLinearSystem::time_invariant(step, m, dt)?;
    let filter = NoiseFilter::first_order(omega_c, dt, f.disturbance_variance, 1)?;
    Ok((sys, filter))
}

/// Parameters of the satellite example (lengths in km, times in s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteParams {
    pub r_e: f64,
    pub mu_e: f64,
    pub t_p: f64,
    pub j2: f64,
    pub v_theta: f64,
    pub h: f64,
}

pub const SATELLITE_PARAMS: SatelliteParams = SatelliteParams {
    r_e: 6378.1363,
    mu_e: 398600.4415,
    t_p: 5.48e3,
    j2: 1.7555e10,
    v_theta: 7.7027,
    h: 340.0,
};

/// Linearized orbit model in normalized units with states `(r, ṙ, θ, θ̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteModel {
    pub params: SatelliteParams,
    pub b: DMatrix<f64>,
    pub qc: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    /// Grid `t_k = k·dt`.
    pub time_grid: Vec<f64>,
}

impl SatelliteModel {
    pub fn a(&self, t: f64) -> DMatrix<f64> {
        satellite_a(t)
    }

    /// `B Qc Bᵀ`
    pub fn qeff(&self) -> DMatrix<f64> {
        &self.b * &self.qc * self.b.transpose()
    }

    pub fn prior(&self) -> GaussianBelief {
        GaussianBelief {
            mean: self.mu0.clone(),
            cov: self.sigma0.clone(),
        }
    }
}

/// `A(t)` of the linearized orbit dynamics.
pub fn satellite_a(t: f64) -> DMatrix<f64> {
    let w = 12.4 * t;
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        0.416 * w.cos() + 126.4, 0.0, 0.2113 * w.sin(), 12.59,
        0.0, 0.0, 0.0, 1.0,
        0.2774 * w.sin(), -12.21, -0.1408 * w.cos(), 0.0,
    ]);
    a
}

pub fn satellite_model(dt: f64) -> Result<SatelliteModel> {
    let cells = (1.0 / dt).round();
    if !(dt > 0.0) || (cells * dt - 1.0).abs() > 1e-9 {
        return config("satellite dt must divide the unit interval");
    }
    let p = SATELLITE_PARAMS;
    let mu0 = DVector::from_vec(vec![50.0 / p.r_e, 0.0, 0.0, 0.0]);
    let sigma0 = DMatrix::from_diagonal(&(&mu0 * 0.01));
    let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let qc = DMatrix::identity(2, 2) * 0.0471_f64.powi(2);
    let time_grid = (0..=cells as usize).map(|k| k as f64 * dt).collect();
    Ok(SatelliteModel {
        params: p,
        b,
        qc,
        mu0,
        sigma0,
        time_grid,
    })
}

/// RK4 substeps per grid cell for transition matrices and covariance propagation.
pub const SATELLITE_SUBSTEPS: usize = 100;

/// Radial range row `[1, 0, 0, 0]`.
pub fn radial_range_row() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0])
}

/// Discretized satellite system over `[0, 1]`, with `m = 1/dt` and one extra step so that the
/// window starting at `t₀` has measurements at `t₁ … t_m`.
///
/// `range_rows(k)` gives the measurement matrix at `t_k`.
pub fn satellite_system<F>(dt: f64, range_rows: F) -> Result<TimeVaryingLinearSystem>
where
    F: Fn(usize) -> DMatrix<f64>,
{
    let model = satellite_model(dt)?;
    let m = model.time_grid.len() - 1;
    let qeff = model.qeff();
    let mut sigma = model.sigma0.clone();
    let mut steps = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
        let phi = state_transition(satellite_a, t0, t1, SATELLITE_SUBSTEPS)?;
        let traj = lyapunov_propagate(satellite_a, &qeff, &sigma, None, t0, t1, SATELLITE_SUBSTEPS)?;
        let next = traj.last_cov().clone();
        let q = discrete_q_from_continuous(&next, &phi, &sigma)?;
        steps.push(Step::new(phi, DMatrix::identity(4, 4), range_rows(k), q));
        sigma = next;
    }
    TimeVaryingLinearSystem::new(m, steps, false, dt)
}

/// Satellite system with the default radial-range sensor at every grid point.
pub fn satellite_default_system() -> Result<TimeVaryingLinearSystem> {
    satellite_system(0.1, |_| radial_range_row())
}

/// `trace Σ(1)` of the open-loop covariance propagated from `Σ(t₀)`.
pub fn satellite_prior_trace_at_horizon(dt: f64) -> Result<f64> {
    let model = satellite_model(dt)?;
    let cells = model.time_grid.len() - 1;
    let traj = lyapunov_propagate(
        satellite_a,
        &model.qeff(),
        &model.sigma0,
        None,
        0.0,
        1.0,
        SATELLITE_SUBSTEPS * cells,
    )?;
    Ok(traj.last_cov().trace())
}
