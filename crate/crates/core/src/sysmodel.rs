//! Discrete-time LTV / periodic system models, lifting and periodic augmentation.
//!
//! A window of `m` steps starting at index `k` is lifted into a single batch: the dynamics
//! matrices are taken from `A_k .. A_{k+m-1}` and the measurement matrices from
//! `C_{k+1} .. C_{k+m}`, so the lifted state stacks `x_{k+1} .. x_{k+m}`.

use nalgebra::{Complex, DMatrix, SVD};

use crate::error::{config, numerical, Result};
use crate::estimation::matrix_sqrt_psd;
use crate::linalg::{block_diag, check_psd, kron_identity, select_rows, spectral_radius};

/// One step of a time-varying model: `x⁺ = A x + B w`, `y = C x + D w + n`, `E[wwᵀ] = Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl Step {
    /// Step without direct feed-through (`D = 0`).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, q: DMatrix<f64>) -> Self {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Step { a, b, c, d, q }
    }

    pub fn with_feedthrough(mut self, d: DMatrix<f64>) -> Self {
        self.d = d;
        self
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }
}

/// Discrete-time linear time-varying system over a window of `m` steps.
///
/// For a periodic system the step list is repeated indefinitely. For a non-periodic system a
/// lifted window starting at `k` needs steps `k ..= k + m` (the last one only for its
/// measurement matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingLinearSystem {
    m: usize,
    steps: Vec<Step>,
    periodic: bool,
    dt: f64,
}

impl TimeVaryingLinearSystem {
    pub fn new(m: usize, steps: Vec<Step>, periodic: bool, dt: f64) -> Result<Self> {
        if m == 0 {
            return config("window length m must be positive");
        }
        if steps.is_empty() {
            return config("system needs at least one step");
        }
        let nx = steps[0].a.nrows();
        let nw = steps[0].b.ncols();
        for (j, s) in steps.iter().enumerate() {
            if !s.a.is_square() || s.a.nrows() != nx {
                return config(format!("step {j}: A must be {nx}x{nx}, got {:?}", s.a.shape()));
            }
            if s.b.nrows() != nx || s.b.ncols() != nw {
                return config(format!("step {j}: B must be {nx}x{nw}, got {:?}", s.b.shape()));
            }
            if s.c.ncols() != nx {
                return config(format!("step {j}: C must have {nx} columns, got {}", s.c.ncols()));
            }
            if s.d.nrows() != s.c.nrows() || s.d.ncols() != nw {
                return config(format!(
                    "step {j}: D must be {}x{nw}, got {:?}",
                    s.c.nrows(),
                    s.d.shape()
                ));
            }
            if s.q.shape() != (nw, nw) {
                return config(format!("step {j}: Q must be {nw}x{nw}, got {:?}", s.q.shape()));
            }
            check_psd(&s.q, &format!("step {j}: Q"))?;
        }
        if periodic && steps.len() % m != 0 {
            return config(format!(
                "periodic system with m = {m} needs a multiple of m steps, got {}",
                steps.len()
            ));
        }
        Ok(TimeVaryingLinearSystem {
            m,
            steps,
            periodic,
            dt,
        })
    }

    /// An `m`-periodic system repeating a single time-invariant step.
    pub fn time_invariant(step: Step, m: usize, dt: f64) -> Result<Self> {
        Self::new(m, vec![step; m], true, dt)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn nx(&self) -> usize {
        self.steps[0].a.nrows()
    }

    pub fn nw(&self) -> usize {
        self.steps[0].b.ncols()
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Step at absolute time index `k` (wrapped for periodic systems).
    pub fn step(&self, k: usize) -> Result<&Step> {
        if self.periodic {
            Ok(&self.steps[k % self.steps.len()])
        } else {
            self.steps.get(k).ok_or_else(|| {
                crate::Error::Config(format!(
                    "step index {k} outside the {} provided steps",
                    self.steps.len()
                ))
            })
        }
    }
}

/// One lifted `m`-step batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    /// `m·n_x × n_x`; row block `j` is `A_{k+j}···A_k`.
    pub cal_a: DMatrix<f64>,
    /// `m·n_x × m·n_w`, block lower triangular.
    pub cal_b: DMatrix<f64>,
    /// `N_y × m·n_x`, block diagonal in `C_{k+1} .. C_{k+m}`.
    pub cal_c: DMatrix<f64>,
    /// `N_y × m·n_w`, block diagonal in `D_{k+1} .. D_{k+m}`.
    pub cal_d: DMatrix<f64>,
    /// `m·n_w × m·n_w`, block diagonal in `Q_k .. Q_{k+m-1}`.
    pub cal_q: DMatrix<f64>,
    /// `[0 | I_{n_x}]`, extracts the last state of the batch.
    pub mask_m: DMatrix<f64>,
    /// Measurement dimension of each of the `m` steps.
    pub channel_dims: Vec<usize>,
}

impl LiftedSystem {
    pub fn nx(&self) -> usize {
        self.cal_a.ncols()
    }

    pub fn m(&self) -> usize {
        self.channel_dims.len()
    }

    pub fn ny(&self) -> usize {
        self.cal_c.nrows()
    }

    /// Prior covariance of the stacked states given the covariance of `x_k`.
    pub fn prior_covariance(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let p = &self.cal_a * sigma * self.cal_a.transpose()
            + &self.cal_b * &self.cal_q * self.cal_b.transpose();
        crate::linalg::symmetrize(&p)
    }

    /// `(step, channel)` label of each stacked measurement row (steps counted from 1).
    pub fn channel_labels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.ny());
        for (j, &d) in self.channel_dims.iter().enumerate() {
            for c in 0..d {
                out.push((j + 1, c));
            }
        }
        out
    }
}

/// Lifts the window of `sys.m()` steps starting at `start`.
pub fn build_lifted(sys: &TimeVaryingLinearSystem, start: usize) -> Result<LiftedSystem> {
    let m = sys.m();
    let nx = sys.nx();
    let nw = sys.nw();
    if !sys.periodic() && start + m >= sys.steps().len() {
        return config(format!(
            "window [{start}, {}] needs steps up to index {} but only {} are provided",
            start + m - 1,
            start + m,
            sys.steps().len()
        ));
    }

    let dyn_steps: Vec<&Step> = (0..m).map(|j| sys.step(start + j)).collect::<Result<_>>()?;
    let meas_steps: Vec<&Step> = (1..=m).map(|j| sys.step(start + j)).collect::<Result<_>>()?;

    let mut cal_a = DMatrix::zeros(m * nx, nx);
    let mut prod = DMatrix::identity(nx, nx);
    for (j, s) in dyn_steps.iter().enumerate() {
        prod = &s.a * prod;
        cal_a.view_mut((j * nx, 0), (nx, nx)).copy_from(&prod);
    }

    // Column block i starts with B_{k+i} on the diagonal and is pushed forward by A_{k+i+1}...
    let mut cal_b = DMatrix::zeros(m * nx, m * nw);
    for i in 0..m {
        let mut blk = dyn_steps[i].b.clone();
        cal_b.view_mut((i * nx, i * nw), (nx, nw)).copy_from(&blk);
        for j in i + 1..m {
            blk = &dyn_steps[j].a * blk;
            cal_b.view_mut((j * nx, i * nw), (nx, nw)).copy_from(&blk);
        }
    }

    let cs: Vec<DMatrix<f64>> = meas_steps.iter().map(|s| s.c.clone()).collect();
    let ds: Vec<DMatrix<f64>> = meas_steps.iter().map(|s| s.d.clone()).collect();
    let qs: Vec<DMatrix<f64>> = dyn_steps.iter().map(|s| s.q.clone()).collect();
    let channel_dims = meas_steps.iter().map(|s| s.ny()).collect();

    let mut mask_m = DMatrix::zeros(nx, m * nx);
    mask_m
        .view_mut((0, (m - 1) * nx), (nx, nx))
        .fill_with_identity();

    Ok(LiftedSystem {
        cal_a,
        cal_b,
        cal_c: block_diag(&cs),
        cal_d: block_diag(&ds),
        cal_q: block_diag(&qs),
        mask_m,
        channel_dims,
    })
}

/// First-order colored-noise filter `z⁺ = G z + H λ`, `E[λλᵀ] = inputVariance`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFilter {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub input_variance: DMatrix<f64>,
}

impl NoiseFilter {
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>, input_variance: DMatrix<f64>) -> Result<Self> {
        let nw = g.nrows();
        if !g.is_square() || h.shape() != (nw, nw) || input_variance.shape() != (nw, nw) {
            return config("noise filter matrices must all be n_w x n_w");
        }
        let rho = spectral_radius(&g);
        if rho >= 1.0 {
            return config(format!("noise filter is not stable (spectral radius {rho})"));
        }
        check_psd(&input_variance, "filter input variance")?;
        Ok(NoiseFilter {
            g,
            h,
            input_variance,
        })
    }

    /// Zero-order-hold discretization of `ẋ_d = ω_c(−x_d + w)` with unit DC gain:
    /// `G = e^{−ω_c·dt}·I`, `H = (1 − e^{−ω_c·dt})·I`.
    pub fn first_order(omega_c: f64, dt: f64, variance: f64, nw: usize) -> Result<Self> {
        if !(omega_c > 0.0) || !(dt > 0.0) {
            return config("first-order filter needs omega_c > 0 and dt > 0");
        }
        let pole = (-omega_c * dt).exp();
        Self::new(
            DMatrix::identity(nw, nw) * pole,
            DMatrix::identity(nw, nw) * (1.0 - pole),
            DMatrix::identity(nw, nw) * variance,
        )
    }

    pub fn nw(&self) -> usize {
        self.g.nrows()
    }

    /// Stationary variance of the filter output, solved by fixed-point iteration of the
    /// discrete Lyapunov equation.
    pub fn stationary_variance(&self) -> DMatrix<f64> {
        let q = &self.h * &self.input_variance * self.h.transpose();
        let mut x = q.clone();
        for _ in 0..100_000 {
            let next = &self.g * &x * self.g.transpose() + &q;
            let done = (&next - &x).norm() <= 1e-15 * (1.0 + next.norm());
            x = next;
            if done {
                break;
            }
        }
        crate::linalg::symmetrize(&x)
    }
}

/// Time-invariant model of the stacked state `Γ_k = [x_{km}; Z_k]` of an `m`-periodic system.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicAugmentedSystem {
    pub am: DMatrix<f64>,
    pub bm: DMatrix<f64>,
    pub cm: DMatrix<f64>,
    pub qm: DMatrix<f64>,
    /// `[I_{n_x} | 0]`.
    pub mask_mx: DMatrix<f64>,
    /// Measurement dimension of each step in the window.
    pub channel_dims: Vec<usize>,
}

impl PeriodicAugmentedSystem {
    /// Assembles an augmented system from raw matrices. Only shapes are validated, so this
    /// also serves plain `(A, B, C, Q)` steady-state problems where the whole state is scored.
    pub fn new(
        am: DMatrix<f64>,
        bm: DMatrix<f64>,
        cm: DMatrix<f64>,
        qm: DMatrix<f64>,
        nx: usize,
    ) -> Result<Self> {
        let n = am.nrows();
        if !am.is_square() {
            return config("A_m must be square");
        }
        if nx == 0 || nx > n {
            return config(format!("scored state dimension {nx} must lie in 1..={n}"));
        }
        if bm.nrows() != n || cm.ncols() != n {
            return config("B_m rows and C_m columns must match A_m");
        }
        if qm.shape() != (bm.ncols(), bm.ncols()) {
            return config("Q_m must be square with B_m's column count");
        }
        check_psd(&qm, "Q_m")?;
        let mut mask_mx = DMatrix::zeros(nx, n);
        mask_mx.view_mut((0, 0), (nx, nx)).fill_with_identity();
        let ny = cm.nrows();
        Ok(PeriodicAugmentedSystem {
            am,
            bm,
            cm,
            qm,
            mask_mx,
            channel_dims: vec![ny],
        })
    }

    /// Scored (physical) state dimension.
    pub fn nx(&self) -> usize {
        self.mask_mx.nrows()
    }

    /// Augmented state dimension `N_x`.
    pub fn n_aug(&self) -> usize {
        self.am.nrows()
    }

    pub fn ny(&self) -> usize {
        self.cm.nrows()
    }

    /// Effective process noise `B_m Q_m B_mᵀ`.
    pub fn qeff(&self) -> DMatrix<f64> {
        crate::linalg::symmetrize(&(&self.bm * &self.qm * self.bm.transpose()))
    }

    /// `(step, channel)` label of each measurement row (steps counted from 1).
    pub fn channel_labels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.ny());
        for (j, &d) in self.channel_dims.iter().enumerate() {
            for c in 0..d {
                out.push((j + 1, c));
            }
        }
        out
    }
}

/// Builds the `Γ`-augmented model of a periodic system driven by filtered noise.
pub fn build_periodic_augmented(
    sys: &TimeVaryingLinearSystem,
    filt: &NoiseFilter,
) -> Result<PeriodicAugmentedSystem> {
    if !sys.periodic() {
        return config("periodic augmentation needs a periodic system");
    }
    if filt.nw() != sys.nw() {
        return config(format!(
            "filter dimension {} does not match process noise dimension {}",
            filt.nw(),
            sys.nw()
        ));
    }
    if spectral_radius(&filt.g) >= 1.0 {
        return config("noise filter is not stable");
    }
    let lift = build_lifted(sys, 0)?;
    let m = sys.m();
    let nx = sys.nx();
    let nw = sys.nw();
    let n_aug = nx + m * nw;

    let mut am = DMatrix::zeros(n_aug, n_aug);
    am.view_mut((0, 0), (nx, nx))
        .copy_from(&(&lift.mask_m * &lift.cal_a));
    am.view_mut((0, nx), (nx, m * nw))
        .copy_from(&(&lift.mask_m * &lift.cal_b));
    am.view_mut((nx, nx), (m * nw, m * nw))
        .copy_from(&kron_identity(m, &filt.g));

    let mut bm = DMatrix::zeros(n_aug, m * nw);
    bm.view_mut((nx, 0), (m * nw, m * nw))
        .copy_from(&kron_identity(m, &filt.h));

    let ny = lift.ny();
    let mut cm = DMatrix::zeros(ny, n_aug);
    cm.view_mut((0, 0), (ny, nx))
        .copy_from(&(&lift.cal_c * &lift.cal_a));
    cm.view_mut((0, nx), (ny, m * nw))
        .copy_from(&(&lift.cal_c * &lift.cal_b + &lift.cal_d));

    let qm = kron_identity(m, &filt.input_variance);
    let mut mask_mx = DMatrix::zeros(nx, n_aug);
    mask_mx.view_mut((0, 0), (nx, nx)).fill_with_identity();

    Ok(PeriodicAugmentedSystem {
        am,
        bm,
        cm,
        qm,
        mask_mx,
        channel_dims: lift.channel_dims,
    })
}

/// Zero-order-hold discretization via the augmented exponential `exp([[A, B], [0, 0]]·dt)`.
pub fn discretize_zoh(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !ac.is_square() || bc.nrows() != ac.nrows() {
        return config("discretize_zoh: A must be square and B must have matching rows");
    }
    if !(dt > 0.0) {
        return config("discretize_zoh: dt must be positive");
    }
    let n = ac.nrows();
    let k = bc.ncols();
    let mut aug = DMatrix::zeros(n + k, n + k);
    aug.view_mut((0, 0), (n, n)).copy_from(ac);
    aug.view_mut((0, n), (n, k)).copy_from(bc);
    let e = (aug * dt).exp();
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, k)).into_owned(),
    ))
}

/// Bilinear (Tustin) discretization.
///
/// `Ad = (I − A·dt/2)⁻¹(I + A·dt/2)`, `Bd = (I − A·dt/2)⁻¹B·dt`, `Cd = C(I − A·dt/2)⁻¹`,
/// `Dd = D + C(I − A·dt/2)⁻¹B·dt/2`.
pub fn discretize_tustin(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    cc: &DMatrix<f64>,
    dc: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = ac.nrows();
    if !ac.is_square() || bc.nrows() != n || cc.ncols() != n {
        return config("discretize_tustin: inconsistent A, B, C shapes");
    }
    if dc.shape() != (cc.nrows(), bc.ncols()) {
        return config("discretize_tustin: D must be (rows of C) x (columns of B)");
    }
    if !(dt > 0.0) {
        return config("discretize_tustin: dt must be positive");
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let left = &eye - ac * (dt / 2.0);
    let lu = left.clone().lu();
    let inv = match lu.try_inverse() {
        Some(inv) => inv,
        None => return numerical("discretize_tustin: I - A·dt/2 is singular"),
    };
    let ad = &inv * (&eye + ac * (dt / 2.0));
    let bd = &inv * bc * dt;
    let cd = cc * &inv;
    let dd = dc + cc * &inv * bc * (dt / 2.0);
    Ok((ad, bd, cd, dd))
}

/// Classical fourth-order Runge-Kutta step for `Ẋ = f(t, X)`.
pub(crate) fn rk4_step<F>(f: &F, t: f64, x: &DMatrix<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + h / 2.0, &(x + &k1 * (h / 2.0)));
    let k3 = f(t + h / 2.0, &(x + &k2 * (h / 2.0)));
    let k4 = f(t + h, &(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// State-transition matrix `Φ(t1, t0)` of `ẋ = A(t)x`, integrated with `steps` RK4 substeps.
pub fn state_transition<F>(afun: F, t0: f64, t1: f64, steps: usize) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    if !(t1 > t0) {
        return config("state_transition: need t1 > t0");
    }
    if steps == 0 {
        return config("state_transition: steps must be at least 1");
    }
    let n = afun(t0).nrows();
    let h = (t1 - t0) / steps as f64;
    let rhs = |t: f64, phi: &DMatrix<f64>| afun(t) * phi;
    let mut phi = DMatrix::identity(n, n);
    for i in 0..steps {
        phi = rk4_step(&rhs, t0 + i as f64 * h, &phi, h);
    }
    Ok(phi)
}

/// Outcome of the PBH detectability / stabilizability test.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityReport {
    pub detectable: bool,
    pub stabilizable: bool,
    /// Non-stable eigenvalues of `A_m` that are unobservable through the retained channels.
    pub undetectable_modes: Vec<Complex<f64>>,
    /// Non-stable eigenvalues of `A_m` that the process noise does not excite.
    pub unstabilizable_modes: Vec<Complex<f64>>,
    /// Channels kept for the test (those with positive precision).
    pub retained_channels: Vec<usize>,
}

impl DetectabilityReport {
    pub fn ok(&self) -> bool {
        self.detectable && self.stabilizable
    }
}

const PBH_RANK_TOL: f64 = 1e-8;

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

fn numerical_rank(m: DMatrix<Complex<f64>>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(m, false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > PBH_RANK_TOL * top).count()
}

/// PBH rank test on every eigenvalue of `A_m` with `|λ| ≥ 1`.
///
/// Channels with zero precision are removed before testing detectability.
pub fn check_detectability_stabilizability(
    aug: &PeriodicAugmentedSystem,
    precision: &[f64],
) -> Result<DetectabilityReport> {
    if precision.len() != aug.ny() {
        return config(format!(
            "precision vector has {} entries, system has {} channels",
            precision.len(),
            aug.ny()
        ));
    }
    if precision.iter().any(|&s| s < 0.0 || !s.is_finite()) {
        return config("precisions must be finite and non-negative");
    }
    let n = aug.n_aug();
    let retained: Vec<usize> = (0..precision.len()).filter(|&i| precision[i] > 0.0).collect();
    let c = select_rows(&aug.cm, &retained);
    let noise_root = matrix_sqrt_psd(&aug.qeff())?;
    let a = to_complex(&aug.am);
    let c = to_complex(&c);
    let g = to_complex(&noise_root);

    let mut undetectable = Vec::new();
    let mut unstabilizable = Vec::new();
    for lam in aug.am.complex_eigenvalues().iter() {
        if lam.norm() < 1.0 - 1e-12 {
            continue;
        }
        let shifted = DMatrix::<Complex<f64>>::identity(n, n) * *lam - &a;

        let mut obs = DMatrix::zeros(n + c.nrows(), n);
        obs.view_mut((0, 0), (n, n)).copy_from(&shifted);
        obs.view_mut((n, 0), (c.nrows(), n)).copy_from(&c);
        if numerical_rank(obs) < n {
            undetectable.push(*lam);
        }

        let mut ctr = DMatrix::zeros(n, n + g.ncols());
        ctr.view_mut((0, 0), (n, n)).copy_from(&shifted);
        ctr.view_mut((0, n), (n, g.ncols())).copy_from(&g);
        if numerical_rank(ctr) < n {
            unstabilizable.push(*lam);
        }
    }
    Ok(DetectabilityReport {
        detectable: undetectable.is_empty(),
        stabilizable: unstabilizable.is_empty(),
        undetectable_modes: undetectable,
        unstabilizable_modes: unstabilizable,
        retained_channels: retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn single_step_lift_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 3);
        let b = rand_mat(&mut rng, 3, 2);
        let c = rand_mat(&mut rng, 2, 3);
        let q = DMatrix::identity(2, 2);
        let sys = TimeVaryingLinearSystem::time_invariant(Step::new(a.clone(), b.clone(), c.clone(), q), 1, 1.0)
            .unwrap();
        let l = build_lifted(&sys, 0).unwrap();
        assert_eq!(l.cal_a, a);
        assert_eq!(l.cal_b, b);
        assert_eq!(l.cal_c, c);
        assert_eq!(l.mask_m, DMatrix::identity(3, 3));
    }

    #[test]
    fn two_step_lift_stacks_square() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 0.9]);
        let step = Step::new(a.clone(), DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let sys = TimeVaryingLinearSystem::time_invariant(step, 2, 1.0).unwrap();
        let l = build_lifted(&sys, 0).unwrap();
        assert_eq!(l.cal_a.view((0, 0), (2, 2)).into_owned(), a);
        assert!(max_abs(&(l.cal_a.view((2, 0), (2, 2)).into_owned() - &a * &a)) < 1e-15);
    }

    #[test]
    fn three_step_lift_matches_direct_expansion() {
        // x_{k+3} written out by hand in terms of x_k and w_k, w_{k+1}, w_{k+2}.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let steps: Vec<Step> = (0..4)
            .map(|_| {
                Step::new(
                    rand_mat(&mut rng, 2, 2),
                    rand_mat(&mut rng, 2, 1),
                    rand_mat(&mut rng, 1, 2),
                    scalar(1.0),
                )
            })
            .collect();
        let sys = TimeVaryingLinearSystem::new(3, steps.clone(), false, 1.0).unwrap();
        let l = build_lifted(&sys, 0).unwrap();
        assert_eq!(l.ny(), 3);
        let (a0, a1, a2) = (&steps[0].a, &steps[1].a, &steps[2].a);
        let (b0, b1, b2) = (&steps[0].b, &steps[1].b, &steps[2].b);
        let expect_a = a2 * a1 * a0;
        let expect_b = [a2 * a1 * b0, a2 * b1, b2.clone()];
        assert!(max_abs(&(l.cal_a.view((4, 0), (2, 2)).into_owned() - expect_a)) < 1e-14);
        for (i, e) in expect_b.iter().enumerate() {
            assert!(max_abs(&(l.cal_b.view((4, i), (2, 1)).into_owned() - e)) < 1e-14);
        }
        // strictly zero above the block diagonal
        for j in 0..3 {
            for i in j + 1..3 {
                assert!(l.cal_b.view((2 * j, i), (2, 1)).iter().all(|&v| v == 0.0));
            }
        }
        // measurements come from steps 1..=3
        assert_eq!(l.cal_c.view((0, 0), (1, 2)).into_owned(), steps[1].c);
        assert_eq!(l.cal_c.view((2, 4), (1, 2)).into_owned(), steps[3].c);
    }

    #[test]
    fn lift_rejects_window_out_of_range() {
        let step = Step::new(scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0));
        let sys = TimeVaryingLinearSystem::new(2, vec![step.clone(); 2], false, 1.0).unwrap();
        assert!(matches!(build_lifted(&sys, 0), Err(crate::Error::Config(_))));
        let sys = TimeVaryingLinearSystem::new(2, vec![step; 3], false, 1.0).unwrap();
        assert!(build_lifted(&sys, 0).is_ok());
    }

    #[test]
    fn construction_rejects_bad_shapes_and_noise() {
        let bad = Step::new(scalar(1.0), DMatrix::zeros(2, 1), scalar(1.0), scalar(1.0));
        assert!(TimeVaryingLinearSystem::new(1, vec![bad], true, 1.0).is_err());
        let neg_q = Step::new(scalar(1.0), scalar(1.0), scalar(1.0), scalar(-1.0));
        assert!(TimeVaryingLinearSystem::new(1, vec![neg_q], true, 1.0).is_err());
    }

    #[test]
    fn augmented_single_step_blocks() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let d = scalar(0.3);
        let step = Step::new(a.clone(), b.clone(), c.clone(), scalar(1.0)).with_feedthrough(d.clone());
        let sys = TimeVaryingLinearSystem::time_invariant(step, 1, 1.0).unwrap();
        let filt = NoiseFilter::new(scalar(0.0), scalar(1.0), scalar(2.0)).unwrap();
        let aug = build_periodic_augmented(&sys, &filt).unwrap();
        assert_eq!(aug.n_aug(), 3);
        assert_eq!(aug.am.view((0, 0), (2, 2)).into_owned(), a);
        assert_eq!(aug.am.view((0, 2), (2, 1)).into_owned(), b);
        assert!(aug.am.row(2).iter().all(|&v| v == 0.0));
        assert!(max_abs(&(aug.cm.view((0, 0), (1, 2)).into_owned() - &c * &a)) < 1e-15);
        assert!((aug.cm[(0, 2)] - ((&c * &b)[(0, 0)] + 0.3)).abs() < 1e-15);
        assert_eq!(aug.qm, scalar(2.0));
    }

    #[test]
    fn augmented_dimension_and_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 1..4 {
            let step = Step::new(rand_mat(&mut rng, 4, 4), rand_mat(&mut rng, 4, 1), rand_mat(&mut rng, 5, 4), scalar(1.0));
            let sys = TimeVaryingLinearSystem::time_invariant(step, m, 0.01).unwrap();
            let filt = NoiseFilter::first_order(10.0, 0.01, 5.0, 1).unwrap();
            let aug = build_periodic_augmented(&sys, &filt).unwrap();
            assert_eq!(aug.n_aug(), 4 + m);
            assert!(aug.am.view((4, 0), (m, 4)).iter().all(|&v| v == 0.0));
            assert!(aug.bm.view((0, 0), (4, m)).iter().all(|&v| v == 0.0));
            let mut mx = DMatrix::zeros(4, 4 + m);
            mx.view_mut((0, 0), (4, 4)).fill_with_identity();
            assert_eq!(aug.mask_mx, mx);
            if m == 1 {
                // exactly one non-zero column entry in B_m
                assert_eq!(aug.bm.iter().filter(|&&v| v != 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn augmentation_rejects_non_periodic() {
        let step = Step::new(scalar(0.5), scalar(1.0), scalar(1.0), scalar(1.0));
        let sys = TimeVaryingLinearSystem::new(1, vec![step; 2], false, 1.0).unwrap();
        let filt = NoiseFilter::new(scalar(0.0), scalar(1.0), scalar(1.0)).unwrap();
        assert!(matches!(build_periodic_augmented(&sys, &filt), Err(crate::Error::Config(_))));
    }

    #[test]
    fn white_noise_filter_variance() {
        // With G = 0 the filter output is white with variance H·V·Hᵀ.
        let filt = NoiseFilter::new(scalar(0.0), scalar(0.7), scalar(3.0)).unwrap();
        assert!((filt.stationary_variance()[(0, 0)] - 0.49 * 3.0).abs() < 1e-14);
        // And for G ≠ 0 the closed form h²v/(1−g²) of the scalar Lyapunov equation.
        let filt = NoiseFilter::first_order(10.0, 0.01, 5.0, 1).unwrap();
        let g = (-0.1_f64).exp();
        let expect = (1.0 - g).powi(2) * 5.0 / (1.0 - g * g);
        assert!((filt.stationary_variance()[(0, 0)] - expect).abs() < 1e-12);
        assert!(NoiseFilter::new(scalar(1.0), scalar(1.0), scalar(1.0)).is_err());
    }

    #[test]
    fn zoh_trivial_cases() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (ad, bd) = discretize_zoh(&DMatrix::zeros(2, 2), &b, 0.5).unwrap();
        assert!(max_abs(&(ad - DMatrix::identity(2, 2))) < 1e-15);
        assert!(max_abs(&(bd - &b * 0.5)) < 1e-15);
        let (ad, _) = discretize_zoh(&scalar(-2.0), &scalar(1.0), 0.3).unwrap();
        assert!((ad[(0, 0)] - (-0.6_f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn zoh_semigroup() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_mat(&mut rng, 3, 3) - DMatrix::identity(3, 3) * 2.0;
        let b = rand_mat(&mut rng, 3, 1);
        let (full, _) = discretize_zoh(&a, &b, 0.2).unwrap();
        let (half, _) = discretize_zoh(&a, &b, 0.1).unwrap();
        assert!(max_abs(&(&half * &half - full)) < 1e-10);
    }

    #[test]
    fn tustin_cases() {
        let b = scalar(1.0);
        let (ad, bd, _, _) = discretize_tustin(&scalar(0.0), &b, &scalar(1.0), &scalar(0.0), 0.1).unwrap();
        assert_eq!(ad, scalar(1.0));
        assert!((bd[(0, 0)] - 0.1).abs() < 1e-15);
        let (ad, _, _, _) = discretize_tustin(&scalar(-1.0), &b, &scalar(1.0), &scalar(0.0), 2.0).unwrap();
        assert!(ad[(0, 0)].abs() < 1e-15);
        let r = discretize_tustin(&scalar(1.0), &b, &scalar(1.0), &scalar(0.0), 2.0);
        assert!(matches!(r, Err(crate::Error::Numerical(_))));
    }

    #[test]
    fn tustin_preserves_stability() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 100 {
            let a = rand_mat(&mut rng, 2, 2) * 3.0;
            if a.complex_eigenvalues().iter().any(|z| z.re >= -1e-3) {
                continue;
            }
            let (ad, ..) = discretize_tustin(&a, &scalar(1.0).resize(2, 1, 0.0), &DMatrix::zeros(1, 2), &scalar(0.0), rng.gen_range(0.01..2.0)).unwrap();
            assert!(spectral_radius(&ad) < 1.0);
            checked += 1;
        }
    }

    #[test]
    fn transition_matrix_cases() {
        let phi = state_transition(|_| DMatrix::zeros(2, 2), 0.0, 1.0, 3).unwrap();
        assert_eq!(phi, DMatrix::identity(2, 2));
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.4]);
        let phi = state_transition(|_| a.clone(), 0.0, 1.0, 100).unwrap();
        assert!(max_abs(&(phi - a.exp())) < 1e-8);
        assert!(state_transition(|_| a.clone(), 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn transition_composes() {
        let afun = |t: f64| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0 - 0.5 * (3.0 * t).sin(), -0.1]);
        let p10 = state_transition(afun, 0.0, 0.5, 50).unwrap();
        let p21 = state_transition(afun, 0.5, 1.0, 50).unwrap();
        let p20 = state_transition(afun, 0.0, 1.0, 100).unwrap();
        assert!(max_abs(&(p21 * p10 - p20)) < 1e-7);
    }

    fn scalar_aug(a: f64, c: f64) -> PeriodicAugmentedSystem {
        PeriodicAugmentedSystem::new(scalar(a), scalar(1.0), scalar(c), scalar(1.0), 1).unwrap()
    }

    #[test]
    fn pbh_scalar_cases() {
        let r = check_detectability_stabilizability(&scalar_aug(2.0, 0.0), &[1.0]).unwrap();
        assert!(!r.detectable);
        let r = check_detectability_stabilizability(&scalar_aug(2.0, 1.0), &[1.0]).unwrap();
        assert!(r.detectable && r.stabilizable);
        let r = check_detectability_stabilizability(&scalar_aug(0.5, 0.0), &[1.0]).unwrap();
        assert!(r.detectable);
        // zero precision removes the only channel
        let r = check_detectability_stabilizability(&scalar_aug(2.0, 1.0), &[0.0]).unwrap();
        assert!(!r.detectable);
        assert_eq!(r.undetectable_modes.len(), 1);
        assert!(check_detectability_stabilizability(&scalar_aug(2.0, 1.0), &[-1.0]).is_err());
    }
}
