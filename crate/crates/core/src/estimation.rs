//! Kalman prediction and update, the lifted batch update, Riccati recursions and
//! continuous-time covariance propagation.
//!
//! Everything here is independent of the SDP machinery; the precision drivers use these
//! routines to re-verify every solution they return.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{config, numerical, Result};
use crate::linalg::{check_symmetric, clip_psd, max_abs, min_eigenvalue, select_rows, symmetrize};
use crate::sysmodel::{rk4_step, LiftedSystem};

/// Mean and error covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validates symmetry, then symmetrizes and clips slightly negative eigenvalues to zero.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return config(format!(
                "covariance is {:?} but mean has {} entries",
                cov.shape(),
                mean.len()
            ));
        }
        check_symmetric(&cov, 1e-12, "covariance")?;
        let norm = cov.norm();
        let (clipped, removed) = clip_psd(&cov);
        if removed > 1e-10 * norm.max(f64::MIN_POSITIVE) {
            return config(format!(
                "covariance is not positive semidefinite (min eigenvalue {:.3e})",
                -removed
            ));
        }
        Ok(GaussianBelief { mean, cov: clipped })
    }

    pub fn zero_mean(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        Self::new(DVector::zeros(n), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Time update: `μ' = Aμ`, `Σ' = AΣAᵀ + BQBᵀ`.
pub fn kf_predict(
    b: &GaussianBelief,
    a: &DMatrix<f64>,
    bn: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    let n = b.dim();
    if a.shape() != (n, n) || bn.nrows() != n || q.shape() != (bn.ncols(), bn.ncols()) {
        return config("kf_predict: inconsistent A, B, Q shapes");
    }
    let cov = a * &b.cov * a.transpose() + bn * q * bn.transpose();
    Ok(GaussianBelief {
        mean: a * &b.mean,
        cov: symmetrize(&cov),
    })
}

/// Optimal gain `P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_gain(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let innov = symmetrize(&(c * p * c.transpose() + r));
    let pct = p * c.transpose();
    // K = P Cᵀ S⁻¹  ⇔  S Kᵀ = C P
    let kt = match innov.clone().cholesky() {
        Some(ch) => ch.solve(&pct.transpose()),
        None => match innov.lu().solve(&pct.transpose()) {
            Some(x) => x,
            None => return numerical("singular innovation covariance"),
        },
    };
    if kt.iter().any(|v| !v.is_finite()) {
        return numerical("singular innovation covariance");
    }
    Ok(kt.transpose())
}

/// Joseph-form posterior `(I − KC)P(I − KC)ᵀ + KRKᵀ` for an arbitrary gain.
pub fn posterior_with_gain(
    p_minus: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = p_minus.nrows();
    let ikc = DMatrix::<f64>::identity(n, n) - k * c;
    let out = &ikc * p_minus * ikc.transpose() + k * r * k.transpose();
    symmetrize(&out)
}

/// Measurement update with the Joseph-form covariance.
pub fn kf_update(
    b: &GaussianBelief,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<GaussianBelief> {
    let n = b.dim();
    let ny = c.nrows();
    if c.ncols() != n || r.shape() != (ny, ny) || y.len() != ny {
        return config("kf_update: inconsistent C, R, y shapes");
    }
    if ny == 0 {
        return Ok(b.clone());
    }
    let k = kalman_gain(&b.cov, c, r)?;
    let mean = &b.mean + &k * (y - c * &b.mean);
    let cov = posterior_with_gain(&b.cov, c, r, &k);
    Ok(GaussianBelief { mean, cov })
}

/// Indices of channels whose precision exceeds `rel_tol·max(s)`.
pub fn active_channels(s: &[f64], rel_tol: f64) -> Vec<usize> {
    let top = s.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return Vec::new();
    }
    (0..s.len()).filter(|&i| s[i] > rel_tol * top).collect()
}

/// Measurement matrix and noise covariance restricted to channels with positive precision.
///
/// Zero-precision channels carry no information and are deleted rather than given a huge
/// variance.
pub fn restrict_to_precision(
    c: &DMatrix<f64>,
    s: &[f64],
    rel_tol: f64,
) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>) {
    let keep = active_channels(s, rel_tol);
    let c_act = select_rows(c, &keep);
    let r_act = DMatrix::from_diagonal(&DVector::from_iterator(
        keep.len(),
        keep.iter().map(|&i| 1.0 / s[i]),
    ));
    (c_act, r_act, keep)
}

/// Result of a lifted batch update.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPosterior {
    /// Posterior of the last state of the window, `(M μ⁺, M P⁺ Mᵀ)`.
    pub last: GaussianBelief,
    /// Batch gain `𝓚` (`m·n_x × N_y`).
    pub gain: DMatrix<f64>,
    /// Prior covariance of the stacked states.
    pub p_minus: DMatrix<f64>,
}

/// Processes all `m` measurements of a lifted window in one update.
pub fn batch_update(
    lift: &LiftedSystem,
    prior: &GaussianBelief,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<BatchPosterior> {
    let ny = lift.ny();
    if prior.dim() != lift.nx() {
        return config("batch_update: prior dimension does not match the lifted system");
    }
    if r.shape() != (ny, ny) || y.len() != ny {
        return config(format!("batch_update: R must be {ny}x{ny} and Y must have {ny} entries"));
    }
    let p_minus = lift.prior_covariance(&prior.cov);
    let x_minus = &lift.cal_a * &prior.mean;
    let (gain, x_plus, p_plus) = if ny == 0 {
        (DMatrix::zeros(p_minus.nrows(), 0), x_minus, p_minus.clone())
    } else {
        let k = kalman_gain(&p_minus, &lift.cal_c, r)?;
        let x_plus = &x_minus + &k * (y - &lift.cal_c * &x_minus);
        let p_plus = posterior_with_gain(&p_minus, &lift.cal_c, r, &k);
        (k, x_plus, p_plus)
    };
    let mm = &lift.mask_m;
    let last = GaussianBelief {
        mean: mm * x_plus,
        cov: symmetrize(&(mm * p_plus * mm.transpose())),
    };
    Ok(BatchPosterior {
        last,
        gain,
        p_minus,
    })
}

/// One prior-to-prior Riccati step `A(P − PCᵀ(CPCᵀ+R)⁻¹CP)Aᵀ + Qeff`.
pub fn rde_step(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    qeff: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let post = if c.nrows() == 0 {
        p.clone()
    } else {
        let k = kalman_gain(p, c, r)?;
        p - &k * c * p
    };
    Ok(symmetrize(&(a * post * a.transpose() + qeff)))
}

fn riccati_residual(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    qeff: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    let next = rde_step(p, a, c, qeff, r)?;
    Ok((next - p).norm() / (1.0 + p.norm()))
}

/// Structured doubling for the filtering DARE. Returns `None` when the iteration breaks down.
fn dare_doubling(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    qeff: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let g0 = if c.nrows() == 0 {
        DMatrix::zeros(n, n)
    } else {
        let rinv_c = r.clone().cholesky()?.solve(c);
        symmetrize(&(c.transpose() * rinv_c))
    };
    let mut ak = a.transpose();
    let mut gk = g0;
    let mut hk = qeff.clone();
    for _ in 0..80 {
        let w = (&eye + &gk * &hk).lu();
        let w_ak = w.solve(&ak)?;
        let w_gk = w.solve(&gk)?;
        let a_next = &ak * &w_ak;
        let g_next = symmetrize(&(&gk + &ak * w_gk * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * w_ak));
        if h_next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let step = (&h_next - &hk).norm();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if step <= tol * 1e-2 * (1.0 + hk.norm()) {
            return Some(hk);
        }
    }
    None
}

/// Stabilizing solution of `P = A(P − PCᵀ(CPCᵀ+R)⁻¹CP)Aᵀ + Qeff`.
///
/// Uses structured doubling when `R` is positive definite, then polishes with fixed-point
/// `rde_step` iterations until `‖rde_step(P) − P‖/(1 + ‖P‖) ≤ tol`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    qeff: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n || qeff.shape() != (n, n) || r.shape() != (c.nrows(), c.nrows()) {
        return config("solve_dare: inconsistent A, C, Qeff, R shapes");
    }
    if !(tol > 0.0) {
        return config("solve_dare: tol must be positive");
    }
    let mut p = match dare_doubling(a, c, qeff, r, tol) {
        Some(p) => p,
        None => qeff.clone(),
    };
    for _ in 0..max_iter {
        if riccati_residual(&p, a, c, qeff, r)? <= tol {
            let (clipped, _) = clip_psd(&p);
            return Ok(clipped);
        }
        p = rde_step(&p, a, c, qeff, r)?;
    }
    if riccati_residual(&p, a, c, qeff, r)? <= tol {
        return Ok(clip_psd(&p).0);
    }
    numerical(format!("DARE did not converge within {max_iter} iterations"))
}

/// True when `P_{j+1} ⪯ P_j` for every `j < iters` of the Riccati recursion started at `p0`.
pub fn rde_monotone_check(
    p0: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    qeff: &DMatrix<f64>,
    r: &DMatrix<f64>,
    iters: usize,
) -> bool {
    let mut p = p0.clone();
    for _ in 0..iters {
        let next = match rde_step(&p, a, c, qeff, r) {
            Ok(next) => next,
            Err(_) => return false,
        };
        let drop = min_eigenvalue(&(&p - &next));
        if drop < -1e-8 * p.norm() {
            return false;
        }
        p = next;
    }
    true
}

/// Grid, covariances and (optionally) means produced by [`lyapunov_propagate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTrajectory {
    pub times: Vec<f64>,
    pub covs: Vec<DMatrix<f64>>,
    pub means: Option<Vec<DVector<f64>>>,
}

impl CovarianceTrajectory {
    pub fn last_cov(&self) -> &DMatrix<f64> {
        self.covs.last().expect("trajectory holds the initial point")
    }
}

/// RK4 integration of `Σ̇ = A(t)Σ + ΣA(t)ᵀ + Qeff` (and `μ̇ = A(t)μ` when `mean0` is given).
pub fn lyapunov_propagate<F>(
    afun: F,
    qeff: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    mean0: Option<&DVector<f64>>,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<CovarianceTrajectory>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    if steps == 0 {
        return config("lyapunov_propagate: steps must be at least 1");
    }
    if !(t1 > t0) {
        return config("lyapunov_propagate: need t1 > t0");
    }
    let n = sigma0.nrows();
    if qeff.shape() != (n, n) {
        return config("lyapunov_propagate: Qeff shape does not match Sigma0");
    }
    let h = (t1 - t0) / steps as f64;
    let cov_rhs = |t: f64, s: &DMatrix<f64>| {
        let a = afun(t);
        &a * s + s * a.transpose() + qeff
    };
    let mean_rhs = |t: f64, m: &DMatrix<f64>| afun(t) * m;

    let mut times = vec![t0];
    let mut covs = vec![symmetrize(sigma0)];
    let mut means = mean0.map(|m| vec![m.clone()]);
    let mut sigma = symmetrize(sigma0);
    let mut mu = mean0.map(|m| DMatrix::from_column_slice(n, 1, m.as_slice()));
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        sigma = symmetrize(&rk4_step(&cov_rhs, t, &sigma, h));
        covs.push(sigma.clone());
        if let (Some(m), Some(store)) = (mu.as_mut(), means.as_mut()) {
            *m = rk4_step(&mean_rhs, t, m, h);
            store.push(DVector::from_column_slice(m.as_slice()));
        }
        times.push(t0 + (i + 1) as f64 * h);
    }
    Ok(CovarianceTrajectory { times, covs, means })
}

/// `Q_k = Σ(t_{k+1}) − A_d Σ(t_k) A_dᵀ`, symmetrized and clipped at zero.
pub fn discrete_q_from_continuous(
    sigma_next: &DMatrix<f64>,
    ad: &DMatrix<f64>,
    sigma_now: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = ad.nrows();
    if !ad.is_square() || sigma_next.shape() != (n, n) || sigma_now.shape() != (n, n) {
        return config("discrete_q_from_continuous: inconsistent shapes");
    }
    let q = symmetrize(&(sigma_next - ad * sigma_now * ad.transpose()));
    let norm = q.norm();
    let (clipped, removed) = clip_psd(&q);
    if removed > 1e-6 * norm.max(max_abs(sigma_next)) {
        return numerical(format!(
            "discrete process noise has a negative eigenvalue {:.3e}; inputs are inconsistent",
            -removed
        ));
    }
    // Eigenvalues below the 1e-10 floor are treated as exact zeros.
    Ok(clipped)
}

/// Principal square root of a symmetric PSD matrix (negative eigenvalues clipped to zero).
pub fn matrix_sqrt_psd(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(p, 1e-9, "matrix_sqrt_psd input")?;
    if p.nrows() == 0 {
        return Ok(p.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(p));
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose())))
}
