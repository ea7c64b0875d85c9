//! Primal-dual interior-point solver for [`SdpProblem`].
//!
//! The problem `min cᵀx  s.t.  F_b(x) = F_b0 + Σ xᵢ F_bi ⪰ 0` is paired with its dual
//! `max −Σ tr(F_b0 Z_b)  s.t.  Σ_b tr(F_bi Z_b) = cᵢ, Z_b ⪰ 0`. Iterates follow an infeasible
//! path-following scheme with the HKM search direction and Mehrotra's predictor-corrector.
//! Box bounds and 1×1 blocks are handled as a diagonal (linear) cone.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{config, Result};
use crate::lmi::SdpProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Worst scaled violation `max(0, −λmin(F_b(x)))/(1 + ‖F_b(x)‖)` over blocks and boxes.
    pub primal_residual: f64,
    /// `‖c − A*(Z)‖/(1 + ‖c‖)`.
    pub dual_residual: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub iterations: usize,
}

pub const DEFAULT_TOL_FEAS: f64 = 1e-8;
pub const DEFAULT_TOL_GAP: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Tolerances and iteration limit passed to [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_feas: DEFAULT_TOL_FEAS,
            tol_gap: DEFAULT_TOL_GAP,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Coefficients of one variable inside a dense block.
struct VarCoef {
    var: usize,
    upper: Vec<(usize, usize, f64)>,
    full: Vec<(usize, usize, f64)>,
}

struct DenseBlk {
    n: usize,
    f0: DMatrix<f64>,
    vars: Vec<VarCoef>,
}

/// Linear constraints `f0_l + Σ a_li xᵢ ≥ 0`.
struct LinearCone {
    f0: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

struct Canonical {
    m: usize,
    c: Vec<f64>,
    dense: Vec<DenseBlk>,
    lp: LinearCone,
    /// For each reduced variable, the dense blocks it appears in (block, position in `vars`).
    occurs: Vec<Vec<(usize, usize)>>,
}

fn tr_sym(upper: &[(usize, usize, f64)], x: &DMatrix<f64>) -> f64 {
    upper
        .iter()
        .map(|&(p, q, v)| if p == q { v * x[(p, p)] } else { v * (x[(p, q)] + x[(q, p)]) })
        .sum()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl Canonical {
    fn apply(&self, x: &[f64]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let dense = self
            .dense
            .iter()
            .map(|b| {
                let mut f = b.f0.clone();
                for vc in &b.vars {
                    let xi = x[vc.var];
                    if xi != 0.0 {
                        for &(p, q, v) in &vc.full {
                            f[(p, q)] += xi * v;
                        }
                    }
                }
                f
            })
            .collect();
        let lp = self
            .lp
            .rows
            .iter()
            .zip(&self.lp.f0)
            .map(|(r, f0)| f0 + r.iter().map(|&(i, a)| a * x[i]).sum::<f64>())
            .collect();
        (dense, lp)
    }

    /// Homogeneous part `Σ xᵢ F_bi` only.
    fn apply_linear(&self, x: &[f64]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let dense = self
            .dense
            .iter()
            .map(|b| {
                let mut f = DMatrix::zeros(b.n, b.n);
                for vc in &b.vars {
                    let xi = x[vc.var];
                    if xi != 0.0 {
                        for &(p, q, v) in &vc.full {
                            f[(p, q)] += xi * v;
                        }
                    }
                }
                f
            })
            .collect();
        let lp = self
            .lp
            .rows
            .iter()
            .map(|r| r.iter().map(|&(i, a)| a * x[i]).sum::<f64>())
            .collect();
        (dense, lp)
    }

    /// `A*(Z)ᵢ = Σ_b tr(F_bi Z_b) + Σ_l a_li z_l`
    fn adjoint(&self, zd: &[DMatrix<f64>], zl: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (b, z) in self.dense.iter().zip(zd) {
            for vc in &b.vars {
                out[vc.var] += tr_sym(&vc.upper, z);
            }
        }
        for (r, &z) in self.lp.rows.iter().zip(zl) {
            for &(i, a) in r {
                out[i] += a * z;
            }
        }
        out
    }

    fn f0_dot(&self, zd: &[DMatrix<f64>], zl: &[f64]) -> f64 {
        let d: f64 = self.dense.iter().zip(zd).map(|(b, z)| b.f0.dot(z)).sum();
        d + self.lp.f0.iter().zip(zl).map(|(a, b)| a * b).sum::<f64>()
    }

    fn cone_dim(&self) -> usize {
        self.dense.iter().map(|b| b.n).sum::<usize>() + self.lp.f0.len()
    }

    /// Schur complement `H_ij = Σ_b tr(F_bi S_b⁻¹ F_bj Z_b) + Σ_l a_li a_lj z_l/s_l`.
    fn schur(&self, s_inv: &[DMatrix<f64>], zd: &[DMatrix<f64>], lp_ratio: &[f64]) -> DMatrix<f64> {
        let m = self.m;
        let cols: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut col = vec![0.0; m];
                for &(bi, pos) in &self.occurs[j] {
                    let blk = &self.dense[bi];
                    let n = blk.n;
                    let fj = &blk.vars[pos];
                    // T = S⁻¹ F_j, accumulated column by column
                    let mut t = DMatrix::<f64>::zeros(n, n);
                    let mut used = vec![false; n];
                    for &(p, q, v) in &fj.full {
                        let src = s_inv[bi].column(p);
                        let mut dst = t.column_mut(q);
                        dst.axpy(v, &src, 1.0);
                        used[q] = true;
                    }
                    // G = T Z
                    let mut g = DMatrix::<f64>::zeros(n, n);
                    for q in (0..n).filter(|&q| used[q]) {
                        let tq = t.column(q);
                        for c in 0..n {
                            let zqc = zd[bi][(q, c)];
                            if zqc != 0.0 {
                                g.column_mut(c).axpy(zqc, &tq, 1.0);
                            }
                        }
                    }
                    for vi in &blk.vars {
                        col[vi.var] += tr_sym(&vi.upper, &g);
                    }
                }
                col
            })
            .collect();
        let mut h = DMatrix::<f64>::zeros(m, m);
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                h[(i, j)] = v;
            }
        }
        for (r, &d) in self.lp.rows.iter().zip(lp_ratio) {
            for &(i, ai) in r {
                for &(j, aj) in r {
                    h[(i, j)] += ai * aj * d;
                }
            }
        }
        sym(&h)
    }
}

/// Largest step `α` with `X + αΔX ⪰ 0` (infinite if `ΔX ⪰ 0`).
fn max_step(chol: &Cholesky<f64, Dyn>, dx: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(li) = l.clone().solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows())) else {
        return 0.0;
    };
    let m = sym(&(&li * dx * li.transpose()));
    let lam = SymmetricEigen::new(m).eigenvalues.min();
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn max_step_lp(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

struct Presolved {
    canon: Canonical,
    /// Original index of each reduced variable.
    keep: Vec<usize>,
    /// Column scaling: `x_orig = d · x_reduced`.
    scale: Vec<f64>,
}

enum PresolveOutcome {
    Ready(Presolved),
    Unbounded(usize),
}

fn presolve(p: &SdpProblem) -> PresolveOutcome {
    let nv = p.num_vars;
    let mut appears = vec![false; nv];
    for b in &p.blocks {
        for (i, c) in b.coeffs.iter().enumerate() {
            if !c.is_empty() {
                appears[i] = true;
            }
        }
    }
    for i in 0..nv {
        if p.box_lower[i].is_finite() || p.box_upper[i].is_finite() {
            appears[i] = true;
        }
    }
    for i in 0..nv {
        if !appears[i] && p.objective[i] != 0.0 {
            return PresolveOutcome::Unbounded(i);
        }
    }
    let keep: Vec<usize> = (0..nv).filter(|&i| appears[i]).collect();
    let mut new_index = vec![usize::MAX; nv];
    for (k, &i) in keep.iter().enumerate() {
        new_index[i] = k;
    }
    let m = keep.len();

    // column scaling from the largest coefficient norm of each variable
    let mut col_norm = vec![0.0_f64; m];
    for b in &p.blocks {
        for (i, c) in b.coeffs.iter().enumerate() {
            if appears[i] {
                let k = new_index[i];
                col_norm[k] = col_norm[k].max(c.norm());
            }
        }
    }
    for (k, &i) in keep.iter().enumerate() {
        if p.box_lower[i].is_finite() || p.box_upper[i].is_finite() {
            col_norm[k] = col_norm[k].max(1.0);
        }
    }
    let scale: Vec<f64> = col_norm.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect();

    let mut dense = Vec::new();
    let mut lp = LinearCone {
        f0: Vec::new(),
        rows: Vec::new(),
    };
    for b in &p.blocks {
        if b.size == 1 {
            let row: Vec<(usize, f64)> = b
                .coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.is_empty())
                .map(|(i, c)| {
                    let k = new_index[i];
                    (k, c.entries.iter().map(|e| e.2).sum::<f64>() * scale[k])
                })
                .collect();
            lp.f0.push(b.constant[(0, 0)]);
            lp.rows.push(row);
            continue;
        }
        let vars = b
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_empty())
            .map(|(i, c)| {
                let k = new_index[i];
                let d = scale[k];
                let upper: Vec<(usize, usize, f64)> = c.entries.iter().map(|&(p, q, v)| (p, q, v * d)).collect();
                let mut full = upper.clone();
                full.extend(upper.iter().filter(|e| e.0 != e.1).map(|&(p, q, v)| (q, p, v)));
                VarCoef { var: k, upper, full }
            })
            .collect();
        dense.push(DenseBlk {
            n: b.size,
            f0: sym(&b.constant),
            vars,
        });
    }
    for (k, &i) in keep.iter().enumerate() {
        if p.box_lower[i].is_finite() {
            lp.f0.push(-p.box_lower[i]);
            lp.rows.push(vec![(k, scale[k])]);
        }
        if p.box_upper[i].is_finite() {
            lp.f0.push(p.box_upper[i]);
            lp.rows.push(vec![(k, -scale[k])]);
        }
    }
    let c_raw: Vec<f64> = keep.iter().enumerate().map(|(k, &i)| p.objective[i] * scale[k]).collect();
    let cmax = c_raw.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let obj_scale = if cmax > 0.0 { 1.0 / cmax } else { 1.0 };
    let c = c_raw.iter().map(|v| v * obj_scale).collect();

    let mut occurs = vec![Vec::new(); m];
    for (bi, b) in dense.iter().enumerate() {
        for (pos, vc) in b.vars.iter().enumerate() {
            occurs[vc.var].push((bi, pos));
        }
    }
    PresolveOutcome::Ready(Presolved {
        canon: Canonical {
            m,
            c,
            dense,
            lp,
            occurs,
        },
        keep,
        scale,
    })
}

/// Iterate of the interior-point method.
#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    sl: Vec<f64>,
    zl: Vec<f64>,
}

struct Measures {
    pinf: f64,
    dinf: f64,
    gap: f64,
    mu: f64,
    pobj: f64,
    dobj: f64,
    rp: Vec<DMatrix<f64>>,
    rpl: Vec<f64>,
    rd: Vec<f64>,
}

fn measure(c: &Canonical, it: &Iterate) -> Measures {
    let (fx, fl) = c.apply(&it.x);
    let rp: Vec<DMatrix<f64>> = it.s.iter().zip(&fx).map(|(s, f)| s - f).collect();
    let rpl: Vec<f64> = it.sl.iter().zip(&fl).map(|(s, f)| s - f).collect();
    let az = c.adjoint(&it.z, &it.zl);
    let rd: Vec<f64> = c.c.iter().zip(&az).map(|(ci, a)| ci - a).collect();

    let f0n: f64 = (c.dense.iter().map(|b| b.f0.norm_squared()).sum::<f64>()
        + c.lp.f0.iter().map(|v| v * v).sum::<f64>())
    .sqrt();
    let rpn = (rp.iter().map(|r| r.norm_squared()).sum::<f64>() + rpl.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let cn = c.c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rdn = rd.iter().map(|v| v * v).sum::<f64>().sqrt();

    let comp: f64 = it.s.iter().zip(&it.z).map(|(s, z)| s.dot(z)).sum::<f64>()
        + it.sl.iter().zip(&it.zl).map(|(a, b)| a * b).sum::<f64>();
    let pobj: f64 = c.c.iter().zip(&it.x).map(|(a, b)| a * b).sum();
    let dobj = -c.f0_dot(&it.z, &it.zl);
    let denom = 1.0 + pobj.abs() + dobj.abs();
    Measures {
        pinf: rpn / (1.0 + f0n),
        dinf: rdn / (1.0 + cn),
        gap: (pobj - dobj).abs().max(comp.abs()) / denom,
        mu: comp / c.cone_dim().max(1) as f64,
        pobj,
        dobj,
        rp,
        rpl,
        rd,
    }
}

fn initial_point(c: &Canonical) -> Iterate {
    let mut s = Vec::new();
    let mut z = Vec::new();
    for b in &c.dense {
        let sqn = (b.n as f64).sqrt();
        let mut xi = 10.0_f64.max(sqn).max(b.f0.norm());
        let mut eta = 10.0_f64.max(sqn);
        for vc in &b.vars {
            let fnorm = vc.upper.iter().map(|&(p, q, v)| if p == q { v * v } else { 2.0 * v * v }).sum::<f64>().sqrt();
            xi = xi.max(fnorm);
            eta = eta.max(sqn * (1.0 + c.c[vc.var].abs()) / (1.0 + fnorm));
        }
        s.push(DMatrix::identity(b.n, b.n) * xi);
        z.push(DMatrix::identity(b.n, b.n) * eta);
    }
    let mut sl = Vec::new();
    let mut zl = Vec::new();
    for (r, f0) in c.lp.rows.iter().zip(&c.lp.f0) {
        let mut xi = 10.0_f64.max(f0.abs());
        let mut eta = 10.0_f64;
        for &(i, a) in r {
            xi = xi.max(a.abs());
            eta = eta.max((1.0 + c.c[i].abs()) / (1.0 + a.abs()));
        }
        sl.push(xi);
        zl.push(eta);
    }
    Iterate {
        x: vec![0.0; c.m],
        s,
        z,
        sl,
        zl,
    }
}

struct Direction {
    dx: Vec<f64>,
    ds: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dsl: Vec<f64>,
    dzl: Vec<f64>,
}

/// Solves the Newton system for target `σμ` with optional second-order correction.
#[allow(clippy::too_many_arguments)]
fn direction(
    c: &Canonical,
    it: &Iterate,
    ms: &Measures,
    s_inv: &[DMatrix<f64>],
    hfac: &HFactor,
    sigma_mu: f64,
    corr: Option<(&[DMatrix<f64>], &[f64])>,
) -> Option<Direction> {
    // R_b = σμS⁻¹ − Z − corr + S⁻¹ rp Z
    let mut rb: Vec<DMatrix<f64>> = Vec::with_capacity(c.dense.len());
    for bi in 0..c.dense.len() {
        let mut r = &s_inv[bi] * sigma_mu - &it.z[bi] + &s_inv[bi] * &ms.rp[bi] * &it.z[bi];
        if let Some((cd, _)) = corr {
            r -= &cd[bi];
        }
        rb.push(r);
    }
    let mut rl: Vec<f64> = (0..it.sl.len())
        .map(|l| sigma_mu / it.sl[l] - it.zl[l] + it.zl[l] * ms.rpl[l] / it.sl[l])
        .collect();
    if let Some((_, cl)) = corr {
        for (r, v) in rl.iter_mut().zip(cl) {
            *r -= v;
        }
    }
    let tr = c.adjoint(&rb, &rl);
    let rhs = DVector::from_iterator(c.m, tr.iter().zip(&ms.rd).map(|(t, d)| t - d));
    let mut dx: Vec<f64> = hfac.solve(&rhs)?.iter().cloned().collect();
    let mut pass = 0;
    loop {
        if dx.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let (lin, linl) = c.apply_linear(&dx);
        let ds: Vec<DMatrix<f64>> = lin.iter().zip(&ms.rp).map(|(a, r)| a - r).collect();
        let dsl: Vec<f64> = linl.iter().zip(&ms.rpl).map(|(a, r)| a - r).collect();
        let mut dz = Vec::with_capacity(ds.len());
        for bi in 0..ds.len() {
            let mut d = &s_inv[bi] * sigma_mu - &it.z[bi] - &s_inv[bi] * &ds[bi] * &it.z[bi];
            if let Some((cd, _)) = corr {
                d -= &cd[bi];
            }
            dz.push(sym(&d));
        }
        let dzl: Vec<f64> = (0..dsl.len())
            .map(|l| {
                let mut v = sigma_mu / it.sl[l] - it.zl[l] - it.zl[l] * dsl[l] / it.sl[l];
                if let Some((_, cl)) = corr {
                    v -= cl[l];
                }
                v
            })
            .collect();
        // Newton residual A*(ΔZ) − r_d; since ∂A*(ΔZ)/∂Δx = −H, correct Δx by H⁻¹·residual.
        let adz = c.adjoint(&dz, &dzl);
        let res = DVector::from_iterator(c.m, adz.iter().zip(&ms.rd).map(|(a, d)| a - d));
        let scale = 1.0 + ms.rd.iter().map(|v| v * v).sum::<f64>().sqrt() + c.c.iter().map(|v| v * v).sum::<f64>().sqrt();
        pass += 1;
        if pass > NEWTON_REFINE || res.norm() <= 1e-14 * scale {
            return Some(Direction { dx, ds, dz, dsl, dzl });
        }
        let delta = hfac.solve(&res)?;
        for (x, d) in dx.iter_mut().zip(delta.iter()) {
            *x += d;
        }
    }
}

const NEWTON_REFINE: usize = 2;

enum Factor {
    Chol(Cholesky<f64, Dyn>),
    Lu(nalgebra::LU<f64, Dyn, Dyn>),
}

/// Factorized Schur complement; solves are refined against the unregularized matrix.
struct HFactor {
    h: DMatrix<f64>,
    factor: Factor,
}

impl HFactor {
    fn new(h: DMatrix<f64>) -> Option<HFactor> {
        let dmax = h.diagonal().max().max(1e-300);
        if let Some(ch) = h.clone().cholesky() {
            return Some(HFactor { h, factor: Factor::Chol(ch) });
        }
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += 1e-13 * dmax;
        }
        if let Some(ch) = hr.cholesky() {
            return Some(HFactor { h, factor: Factor::Chol(ch) });
        }
        let lu = h.clone().lu();
        if lu.is_invertible() {
            Some(HFactor { h, factor: Factor::Lu(lu) })
        } else {
            None
        }
    }

    fn raw_solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match &self.factor {
            Factor::Chol(c) => Some(c.solve(b)),
            Factor::Lu(l) => l.solve(b),
        }
    }

    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.raw_solve(b)?;
        let bn = b.norm();
        for _ in 0..REFINE_STEPS {
            let r = b - &self.h * &x;
            if r.norm() <= 1e-15 * bn {
                break;
            }
            x += self.raw_solve(&r)?;
        }
        Some(x)
    }
}

const REFINE_STEPS: usize = 3;

fn step_lengths(it: &Iterate, d: &Direction, chol_s: &[Cholesky<f64, Dyn>], chol_z: &[Cholesky<f64, Dyn>]) -> (f64, f64) {
    let mut ap = max_step_lp(&it.sl, &d.dsl);
    let mut ad = max_step_lp(&it.zl, &d.dzl);
    for (ch, ds) in chol_s.iter().zip(&d.ds) {
        ap = ap.min(max_step(ch, ds));
    }
    for (ch, dz) in chol_z.iter().zip(&d.dz) {
        ad = ad.min(max_step(ch, dz));
    }
    (ap, ad)
}

fn take_step(it: &Iterate, d: &Direction, ap: f64, ad: f64) -> Iterate {
    Iterate {
        x: it.x.iter().zip(&d.dx).map(|(x, dx)| x + ap * dx).collect(),
        s: it.s.iter().zip(&d.ds).map(|(s, ds)| sym(&(s + ds * ap))).collect(),
        z: it.z.iter().zip(&d.dz).map(|(z, dz)| sym(&(z + dz * ad))).collect(),
        sl: it.sl.iter().zip(&d.dsl).map(|(s, ds)| s + ap * ds).collect(),
        zl: it.zl.iter().zip(&d.dzl).map(|(z, dz)| z + ad * dz).collect(),
    }
}

fn complementarity(a: &Iterate) -> f64 {
    a.s.iter().zip(&a.z).map(|(s, z)| s.dot(z)).sum::<f64>() + a.sl.iter().zip(&a.zl).map(|(x, y)| x * y).sum::<f64>()
}

/// Primal infeasibility ray: `A*(Z) ≈ 0` with `tr(F0 Z) < 0`.
fn infeasibility_certificate(c: &Canonical, it: &Iterate, ms: &Measures) -> bool {
    let t = -c.f0_dot(&it.z, &it.zl);
    if t <= 0.0 {
        return false;
    }
    let az: f64 = c.c.iter().zip(&ms.rd).map(|(ci, r)| (ci - r).powi(2)).sum::<f64>().sqrt();
    az / t < 1e-8 && t > 1e6
}

/// Dual infeasibility ray: `Σ xᵢ F_i ⪰ 0` with `cᵀx < 0`.
fn unbounded_certificate(c: &Canonical, it: &Iterate, ms: &Measures) -> bool {
    if ms.pobj > -1e8 {
        return false;
    }
    let (lin, linl) = c.apply_linear(&it.x);
    let worst = lin
        .into_iter()
        .map(|m| SymmetricEigen::new(sym(&m)).eigenvalues.min())
        .chain(linl)
        .fold(f64::INFINITY, f64::min);
    worst / (-ms.pobj) > -1e-8
}

/// Eigenvalue-based primal violation on the original problem data.
pub fn primal_violation(p: &SdpProblem, x: &[f64]) -> f64 {
    let mut worst = 0.0_f64;
    for b in &p.blocks {
        let f = b.evaluate(x);
        let lam = SymmetricEigen::new(sym(&f)).eigenvalues.min();
        worst = worst.max(-lam / (1.0 + f.norm()));
    }
    for i in 0..p.num_vars {
        worst = worst.max((p.box_lower[i] - x[i]) / (1.0 + p.box_lower[i].abs()));
        worst = worst.max((x[i] - p.box_upper[i]) / (1.0 + p.box_upper[i].abs()));
    }
    worst
}

/// Minimizes `p.objective·x` subject to the blocks and boxes of `p`.
///
/// Deterministic for fixed inputs: the only parallel section computes independent columns of
/// the Schur complement.
pub fn solve(p: &SdpProblem, tol_feas: f64, tol_gap: f64, max_iter: usize) -> Result<SolveResult> {
    p.validate()?;
    if !(tol_feas > 0.0) || !(tol_gap > 0.0) {
        return config("solver tolerances must be positive");
    }
    let pre = match presolve(p) {
        PresolveOutcome::Ready(pre) => pre,
        PresolveOutcome::Unbounded(i) => {
            log::debug!("variable {} is unconstrained with a non-zero cost", p.var_names[i]);
            return Ok(SolveResult {
                status: SolveStatus::Unbounded,
                x: vec![0.0; p.num_vars],
                objective: f64::NEG_INFINITY,
                primal_residual: 0.0,
                dual_residual: f64::INFINITY,
                gap: f64::INFINITY,
                iterations: 0,
            });
        }
    };
    let c = &pre.canon;
    let mut it = initial_point(c);
    let mut best: Option<(f64, Iterate)> = None;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut stalls = 0;

    for iter in 0..=max_iter {
        iterations = iter;
        let ms = measure(c, &it);
        let merit = ms.pinf.max(ms.dinf).max(ms.gap);
        if best.as_ref().map_or(true, |(b, _)| merit < *b) {
            best = Some((merit, it.clone()));
        }
        log::trace!(
            "ipm {iter:3}: pobj {:+.6e} dobj {:+.6e} pinf {:.2e} dinf {:.2e} gap {:.2e}",
            ms.pobj,
            ms.dobj,
            ms.pinf,
            ms.dinf,
            ms.gap
        );
        if ms.pinf <= tol_feas && ms.dinf <= tol_feas && ms.gap <= tol_gap {
            status = SolveStatus::Optimal;
            best = Some((merit, it.clone()));
            break;
        }
        if infeasibility_certificate(c, &it, &ms) {
            status = SolveStatus::Infeasible;
            break;
        }
        if unbounded_certificate(c, &it, &ms) {
            status = SolveStatus::Unbounded;
            break;
        }
        if iter == max_iter {
            break;
        }

        let Some(chol_s) = it.s.iter().map(|s| s.clone().cholesky()).collect::<Option<Vec<_>>>() else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let Some(chol_z) = it.z.iter().map(|z| z.clone().cholesky()).collect::<Option<Vec<_>>>() else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let s_inv: Vec<DMatrix<f64>> = chol_s.iter().map(|ch| sym(&ch.inverse())).collect();
        let ratio: Vec<f64> = it.zl.iter().zip(&it.sl).map(|(z, s)| z / s).collect();
        let h = c.schur(&s_inv, &it.z, &ratio);
        let Some(hfac) = HFactor::new(h) else {
            status = SolveStatus::NumericalFailure;
            break;
        };

        // predictor
        let Some(aff) = direction(c, &it, &ms, &s_inv, &hfac, 0.0, None) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let (ap, ad) = step_lengths(&it, &aff, &chol_s, &chol_z);
        let trial = take_step(&it, &aff, ap.min(1.0), ad.min(1.0));
        let mu_aff = complementarity(&trial) / c.cone_dim().max(1) as f64;
        let sigma = if ms.mu > 0.0 { (mu_aff / ms.mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        // corrector
        let corr_d: Vec<DMatrix<f64>> = (0..c.dense.len())
            .map(|b| sym(&(&s_inv[b] * &aff.ds[b] * &aff.dz[b])))
            .collect();
        let corr_l: Vec<f64> = (0..it.sl.len()).map(|l| aff.dsl[l] * aff.dzl[l] / it.sl[l]).collect();
        let Some(d) = direction(c, &it, &ms, &s_inv, &hfac, sigma * ms.mu, Some((&corr_d, &corr_l))) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let (ap, ad) = step_lengths(&it, &d, &chol_s, &chol_z);
        let tau = 0.98;
        let (ap, ad) = ((tau * ap).min(1.0), (tau * ad).min(1.0));
        if ap.max(ad) < 1e-10 {
            stalls += 1;
            if stalls > 5 {
                status = SolveStatus::NumericalFailure;
                break;
            }
        } else {
            stalls = 0;
        }
        log::trace!("steps: primal {ap:.3e} dual {ad:.3e} sigma {sigma:.3e}");
        it = take_step(&it, &d, ap, ad);
    }

    let final_it = match status {
        SolveStatus::Infeasible | SolveStatus::Unbounded => it,
        _ => best.map(|(_, b)| b).unwrap_or(it),
    };
    let ms = measure(c, &final_it);
    let mut x = vec![0.0; p.num_vars];
    for (k, &i) in pre.keep.iter().enumerate() {
        x[i] = final_it.x[k] * pre.scale[k];
    }
    let objective = p.objective_value(&x);
    let primal_residual = primal_violation(p, &x);
    if status == SolveStatus::Optimal && primal_residual > tol_feas {
        log::debug!("converged iterate violates the original blocks by {primal_residual:.3e}");
        status = SolveStatus::NumericalFailure;
    }
    Ok(SolveResult {
        status,
        x,
        objective,
        primal_residual,
        dual_residual: ms.dinf,
        gap: ms.gap,
        iterations,
    })
}

/// Solves with the default tolerances and iteration limit.
pub fn solve_default(p: &SdpProblem) -> Result<SolveResult> {
    solve_with(p, &SolverSettings::default())
}

pub fn solve_with(p: &SdpProblem, s: &SolverSettings) -> Result<SolveResult> {
    solve(p, s.tol_feas, s.tol_gap, s.max_iter)
}
