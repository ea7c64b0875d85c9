#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensprec::estimation::{batch_update, kf_predict, kf_update, rde_monotone_check, rde_step, solve_dare, GaussianBelief};
use sensprec::linalg::{block_diag, min_eigenvalue};
use sensprec::sysmodel::{
    build_lifted, check_detectability_stabilizability, PeriodicAugmentedSystem, Step, TimeVaryingLinearSystem,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let g = randn(rng, n, n);
    &g * g.transpose() + DMatrix::identity(n, n) * floor
}

/// Matrix with spectral norm scaled to `rho`.
pub fn scaled(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> DMatrix<f64> {
    let a = randn(rng, n, n);
    let norm = a.clone().svd(false, false).singular_values.max();
    a * (rho / norm.max(1e-12))
}

/// Random non-periodic LTV system with `m + 1` steps and mixed scalar/vector sensors.
pub fn random_ltv(rng: &mut ChaCha8Rng, nx: usize, nw: usize, m: usize) -> TimeVaryingLinearSystem {
    let steps = (0..=m)
        .map(|_| {
            let ny = rng.gen_range(1..=2);
            let rho = rng.gen_range(0.5..1.3);
            Step::new(
                scaled(rng, nx, rho),
                randn(rng, nx, nw),
                randn(rng, ny, nx),
                random_psd(rng, nw, 0.1),
            )
        })
        .collect();
    TimeVaryingLinearSystem::new(m, steps, false, 0.1).unwrap()
}

/// Plain steady-state problem `x⁺ = A x + w`, `y = C x + v`, scoring the whole state.
pub fn random_plain_aug(rng: &mut ChaCha8Rng, n: usize, ny: usize, rho: f64) -> PeriodicAugmentedSystem {
    let a = scaled(rng, n, rho);
    let c = randn(rng, ny, n);
    let q = random_psd(rng, n, 0.2);
    PeriodicAugmentedSystem::new(a, DMatrix::identity(n, n), c, q, n).unwrap()
}

pub fn scalar_aug(a: f64, q: f64, c: f64) -> PeriodicAugmentedSystem {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    PeriodicAugmentedSystem::new(m(a), m(1.0), m(c), m(q), 1).unwrap()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Batch posterior of the last window state against `m` sequential predict/update steps.
/// Returns the relative covariance and mean discrepancies.
pub fn batch_vs_sequential(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let nx = r.gen_range(1..=4);
    let nw = r.gen_range(1..=3);
    let m = r.gen_range(1..=5);
    let sys = random_ltv(&mut r, nx, nw, m);
    let lift = build_lifted(&sys, 0).unwrap();
    let prior = GaussianBelief::new(
        DVector::from_fn(nx, |_, _| r.gen_range(-1.0..1.0)),
        random_psd(&mut r, nx, 0.05),
    )
    .unwrap();
    let blocks: Vec<DMatrix<f64>> = lift
        .channel_dims
        .iter()
        .map(|&d| random_psd(&mut r, d, 0.1))
        .collect();
    let big_r = block_diag(&blocks);
    let y = DVector::from_fn(lift.ny(), |_, _| r.gen_range(-2.0..2.0));
    let batch = batch_update(&lift, &prior, &big_r, &y).unwrap();

    let mut belief = prior;
    let mut row = 0;
    for j in 0..m {
        let st = &sys.steps()[j];
        belief = kf_predict(&belief, &st.a, &st.b, &st.q).unwrap();
        let next = &sys.steps()[j + 1];
        let d = next.ny();
        let yj = y.rows(row, d).clone_owned();
        belief = kf_update(&belief, &next.c, &blocks[j], &yj).unwrap();
        row += d;
    }
    let cov_err = rel_err(&batch.last.cov, &belief.cov);
    let mean_err = (&batch.last.mean - &belief.mean).norm() / belief.mean.norm().max(1.0);
    (cov_err, mean_err)
}

/// Random detectable/stabilizable DARE instance `(A, C, Qeff, R)` with some unstable draws.
pub fn dare_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    loop {
        let n = r.gen_range(1..=4);
        let ny = r.gen_range(1..=3);
        let rho = r.gen_range(0.3..1.6);
        let aug = random_plain_aug(&mut r, n, ny, rho);
        if check_detectability_stabilizability(&aug, &vec![1.0; ny]).unwrap().ok() {
            let rr = random_psd(&mut r, ny, 0.1);
            return (aug.am.clone(), aug.cm.clone(), aug.qeff(), rr);
        }
    }
}

/// DARE residual `‖rde(P) − P‖/(1 + ‖P‖)` of the solver output, and whether monotone persistence
/// holds from `10·P∞` and along the sequence started at `3·P∞ + I` once it first decreases.
pub fn dare_check(seed: u64) -> (f64, bool, bool) {
    let (a, c, q, rr) = dare_instance(seed);
    let p = solve_dare(&a, &c, &q, &rr, 1e-12, 100_000).unwrap();
    let next = rde_step(&p, &a, &c, &q, &rr).unwrap();
    let residual = (&next - &p).norm() / (1.0 + p.norm());
    let psd = min_eigenvalue(&p) >= -1e-10 * p.norm().max(1.0);

    // Monotone persistence: once P₁ ⪯ P₀, every later difference stays PSD.
    let mut persistent = rde_monotone_check(&(&p * 10.0), &a, &c, &q, &rr, 50);
    let mut cur = &p * 3.0 + DMatrix::identity(p.nrows(), p.nrows());
    let mut started = false;
    for _ in 0..50 {
        let nxt = rde_step(&cur, &a, &c, &q, &rr).unwrap();
        let diff = min_eigenvalue(&(&cur - &nxt));
        let tol = -1e-8 * cur.norm().max(1.0);
        if started && diff < tol {
            persistent = false;
        }
        if diff >= tol {
            started = true;
        }
        cur = nxt;
    }
    (residual, psd, persistent)
}

/// Random one-step design instance whose budget lies halfway between the posterior trace with
/// every channel at `s_max` and the prior trace, so the design problem is feasible.
pub struct OnestepInstance {
    pub sys: TimeVaryingLinearSystem,
    pub prior: GaussianBelief,
    pub lift: sensprec::sysmodel::LiftedSystem,
    pub p_minus: DMatrix<f64>,
    pub gamma_d: f64,
    pub s_max: Vec<f64>,
}

pub fn onestep_instance(seed: u64, frac: f64) -> OnestepInstance {
    let mut r = rng(seed);
    let nx = r.gen_range(1..=3);
    let nw = r.gen_range(1..=2);
    let m = r.gen_range(1..=3);
    let sys = random_ltv(&mut r, nx, nw, m);
    let prior = GaussianBelief::zero_mean(random_psd(&mut r, nx, 0.1)).unwrap();
    let lift = build_lifted(&sys, 0).unwrap();
    let p_minus = lift.prior_covariance(&prior.cov);
    let s_max = vec![50.0; lift.ny()];
    let best = sensprec::precision::onestep_verified_trace(&lift, &p_minus, &s_max).unwrap();
    let open = sensprec::linalg::masked_trace(&lift.mask_m, &p_minus);
    OnestepInstance {
        sys,
        prior,
        lift,
        p_minus,
        gamma_d: best + frac * (open - best),
        s_max,
    }
}
