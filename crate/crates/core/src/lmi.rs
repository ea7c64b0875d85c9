//! Assembly of the one-step and steady-state precision design problems as affine
//! matrix-inequality programs.
//!
//! An [`SdpProblem`] minimizes `objective·x` subject to `constant + Σ xᵢ·Mᵢ ⪰ 0` for every
//! block and `box_lower ≤ x ≤ box_upper`. Symmetric matrix unknowns are stored as their upper
//! triangle, with off-diagonal coordinates scaled by √2 so that the Euclidean inner product
//! of the coordinate vector equals the trace inner product of the matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{config, Result};
use crate::estimation::matrix_sqrt_psd;
use crate::linalg::check_psd;
use crate::sysmodel::{LiftedSystem, PeriodicAugmentedSystem};

/// Symmetric coefficient matrix stored as upper-triangle triplets `(i, j, v)` with `i ≤ j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymSparse {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        self.add_to(&mut m, 1.0);
        m
    }

    /// `m += scale · self`
    pub fn add_to(&self, m: &mut DMatrix<f64>, scale: f64) {
        for &(i, j, v) in &self.entries {
            m[(i, j)] += scale * v;
            if i != j {
                m[(j, i)] += scale * v;
            }
        }
    }

    /// Frobenius norm of the full symmetric matrix.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }
}

/// One constraint `constant + Σ xᵢ·coeffs[i] ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub size: usize,
    pub constant: DMatrix<f64>,
    /// One entry per problem variable; most are empty.
    pub coeffs: Vec<SymSparse>,
}

impl LmiBlock {
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (c, &xi) in self.coeffs.iter().zip(x) {
            if xi != 0.0 {
                c.add_to(&mut m, xi);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    pub var_names: Vec<String>,
}

impl SdpProblem {
    /// Checks the structural invariants (lengths, shapes, upper-triangle storage, symmetry).
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        if self.objective.len() != n
            || self.box_lower.len() != n
            || self.box_upper.len() != n
            || self.var_names.len() != n
        {
            return config("SdpProblem: per-variable vectors must have num_vars entries");
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.constant.shape() != (b.size, b.size) || b.coeffs.len() != n {
                return config(format!("SdpProblem: block {k} has inconsistent shape"));
            }
            if (&b.constant - b.constant.transpose()).amax() > 1e-12 * (1.0 + b.constant.amax()) {
                return config(format!("SdpProblem: block {k} constant is not symmetric"));
            }
            for c in &b.coeffs {
                if c.entries.iter().any(|&(i, j, _)| i > j || j >= b.size) {
                    return config(format!("SdpProblem: block {k} has an out-of-range coefficient"));
                }
            }
        }
        // Contradictory boxes (lower > upper) are legal input; the solver reports infeasibility.
        Ok(())
    }

    pub fn block_values(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|b| b.evaluate(x)).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Plain-text SDPA sparse listing.
    ///
    /// SDPA states `Σ xᵢFᵢ − F₀ ⪰ 0`, so the constant is written negated. Finite box bounds
    /// become a trailing diagonal block.
    pub fn to_sdpa(&self) -> String {
        let mut rows: Vec<(usize, f64, f64)> = Vec::new(); // (var, sign, bound)
        for i in 0..self.num_vars {
            if self.box_lower[i].is_finite() {
                rows.push((i, 1.0, self.box_lower[i]));
            }
            if self.box_upper[i].is_finite() {
                rows.push((i, -1.0, self.box_upper[i]));
            }
        }
        let nblocks = self.blocks.len() + usize::from(!rows.is_empty());
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.num_vars);
        let _ = writeln!(out, "{nblocks}");
        let mut sizes: Vec<String> = self.blocks.iter().map(|b| b.size.to_string()).collect();
        if !rows.is_empty() {
            sizes.push(format!("-{}", rows.len()));
        }
        let _ = writeln!(out, "{}", sizes.join(" "));
        let c: Vec<String> = self.objective.iter().map(|v| format!("{v:.17e}")).collect();
        let _ = writeln!(out, "{}", c.join(" "));
        for (bi, b) in self.blocks.iter().enumerate() {
            for i in 0..b.size {
                for j in i..b.size {
                    let v = b.constant[(i, j)];
                    if v != 0.0 {
                        let _ = writeln!(out, "0 {} {} {} {:.17e}", bi + 1, i + 1, j + 1, -v);
                    }
                }
            }
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            for (vi, c) in b.coeffs.iter().enumerate() {
                for &(i, j, v) in &c.entries {
                    let _ = writeln!(out, "{} {} {} {} {:.17e}", vi + 1, bi + 1, i + 1, j + 1, v);
                }
            }
        }
        let lp = self.blocks.len() + 1;
        for (r, &(var, sign, bound)) in rows.iter().enumerate() {
            // sign·x − sign·bound ≥ 0
            if bound != 0.0 {
                let _ = writeln!(out, "0 {lp} {} {} {:.17e}", r + 1, r + 1, sign * bound);
            }
            let _ = writeln!(out, "{} {lp} {} {} {:.17e}", var + 1, r + 1, r + 1, sign);
        }
        out
    }
}

/// Location of a group of unknowns inside the variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarGroup {
    Vector { offset: usize, len: usize },
    Dense { offset: usize, rows: usize, cols: usize },
    Symmetric { offset: usize, n: usize },
}

impl VarGroup {
    pub fn count(&self) -> usize {
        match *self {
            VarGroup::Vector { len, .. } => len,
            VarGroup::Dense { rows, cols, .. } => rows * cols,
            VarGroup::Symmetric { n, .. } => n * (n + 1) / 2,
        }
    }

    pub fn offset(&self) -> usize {
        match *self {
            VarGroup::Vector { offset, .. }
            | VarGroup::Dense { offset, .. }
            | VarGroup::Symmetric { offset, .. } => offset,
        }
    }

    /// Matrix value of the group at `x` (vectors come back as a column).
    pub fn extract(&self, x: &[f64]) -> DMatrix<f64> {
        match *self {
            VarGroup::Vector { offset, len } => DMatrix::from_column_slice(len, 1, &x[offset..offset + len]),
            VarGroup::Dense { offset, rows, cols } => {
                DMatrix::from_row_slice(rows, cols, &x[offset..offset + rows * cols])
            }
            VarGroup::Symmetric { offset, n } => {
                let mut m = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = x[offset + sym_index(n, i, j)];
                        if i == j {
                            m[(i, i)] = v;
                        } else {
                            m[(i, j)] = v / std::f64::consts::SQRT_2;
                            m[(j, i)] = v / std::f64::consts::SQRT_2;
                        }
                    }
                }
                m
            }
        }
    }
}

/// Position of `(i, j)`, `i ≤ j`, in row-major upper-triangle order.
fn sym_index(n: usize, i: usize, j: usize) -> usize {
    i * n - (i * i.saturating_sub(1)) / 2 + (j - i)
}

/// Variable groups of an assembled problem, with their names as used in `var_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub groups: Vec<(String, VarGroup)>,
}

impl Layout {
    pub fn group(&self, name: &str) -> VarGroup {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| *g)
            .unwrap_or_else(|| panic!("no variable group named {name}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledProblem {
    pub problem: SdpProblem,
    pub layout: Layout,
    /// The gain is `gain_basis · K` where `K` is the value of the group named "K".
    pub gain_basis: DMatrix<f64>,
}

impl AssembledProblem {
    /// Filter gain at the solution vector `x`.
    pub fn gain(&self, x: &[f64]) -> DMatrix<f64> {
        &self.gain_basis * self.layout.group("K").extract(x)
    }
}

struct Builder {
    num_vars: usize,
    names: Vec<String>,
    groups: Vec<(String, VarGroup)>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            num_vars: 0,
            names: Vec::new(),
            groups: Vec::new(),
        }
    }

    fn vector(&mut self, name: &str, len: usize) -> VarGroup {
        let g = VarGroup::Vector {
            offset: self.num_vars,
            len,
        };
        for i in 0..len {
            self.names.push(format!("{name}[{i}]"));
        }
        self.finish(name, g)
    }

    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> VarGroup {
        let g = VarGroup::Dense {
            offset: self.num_vars,
            rows,
            cols,
        };
        for i in 0..rows {
            for j in 0..cols {
                self.names.push(format!("{name}[{i},{j}]"));
            }
        }
        self.finish(name, g)
    }

    fn symmetric(&mut self, name: &str, n: usize) -> VarGroup {
        let g = VarGroup::Symmetric {
            offset: self.num_vars,
            n,
        };
        for i in 0..n {
            for j in i..n {
                if i == j {
                    self.names.push(format!("{name}[{i},{i}]"));
                } else {
                    self.names.push(format!("sqrt2*{name}[{i},{j}]"));
                }
            }
        }
        self.finish(name, g)
    }

    fn finish(&mut self, name: &str, g: VarGroup) -> VarGroup {
        self.num_vars += g.count();
        self.groups.push((name.to_string(), g));
        g
    }
}

/// Accumulates one LMI block; `add` places a coefficient at `(i, j)` and its mirror.
struct BlockBuilder {
    size: usize,
    constant: DMatrix<f64>,
    coeffs: Vec<BTreeMap<(usize, usize), f64>>,
}

impl BlockBuilder {
    fn new(size: usize, num_vars: usize) -> Self {
        BlockBuilder {
            size,
            constant: DMatrix::zeros(size, size),
            coeffs: vec![BTreeMap::new(); num_vars],
        }
    }

    fn add(&mut self, var: usize, i: usize, j: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.coeffs[var].entry(key).or_insert(0.0) += v;
    }

    /// Sets the constant at `(i, j)` and `(j, i)`.
    fn set_const(&mut self, i: usize, j: usize, v: f64) {
        self.constant[(i, j)] = v;
        self.constant[(j, i)] = v;
    }

    /// Places the symmetric unknown `g` (or its leading `rows×rows` part) at `(r0, r0)`.
    fn symmetric_var(&mut self, g: VarGroup, r0: usize, rows: usize, scale: f64) {
        let VarGroup::Symmetric { offset, n } = g else {
            unreachable!()
        };
        for i in 0..rows.min(n) {
            for j in i..rows.min(n) {
                let var = offset + sym_index(n, i, j);
                let v = if i == j { scale } else { scale / std::f64::consts::SQRT_2 };
                self.add(var, r0 + i, r0 + j, v);
            }
        }
    }

    fn build(self) -> LmiBlock {
        LmiBlock {
            size: self.size,
            constant: self.constant,
            coeffs: self
                .coeffs
                .into_iter()
                .map(|m| SymSparse {
                    entries: m.into_iter().filter(|(_, v)| *v != 0.0).map(|((i, j), v)| (i, j, v)).collect(),
                })
                .collect(),
        }
    }
}

fn check_common(gamma_d: f64, w: &[f64], s_max: &[f64], ny: usize) -> Result<()> {
    if !(gamma_d > 0.0) || !gamma_d.is_finite() {
        return config("gamma_d must be a positive finite number");
    }
    if w.len() != ny || s_max.len() != ny {
        return config(format!("weights and s_max need {ny} entries"));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return config("weights must be finite and non-negative");
    }
    if s_max.iter().any(|&v| !(v > 0.0)) {
        return config("s_max entries must be positive");
    }
    Ok(())
}

fn objective_and_boxes(nv: usize, s: VarGroup, w: &[f64], s_max: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut obj = vec![0.0; nv];
    let mut lo = vec![f64::NEG_INFINITY; nv];
    let mut hi = vec![f64::INFINITY; nv];
    let off = s.offset();
    for (i, (&wi, &mi)) in w.iter().zip(s_max).enumerate() {
        obj[off + i] = wi;
        lo[off + i] = 0.0;
        hi[off + i] = mi;
    }
    (obj, lo, hi)
}

/// One-step design problem for the window described by `lift` with stacked prior `p_minus`.
///
/// Unknowns: `s` (`N_y`), gain `K` (`m·n_x × N_y`), `F` (symmetric `n_x`). Only the last
/// `n_x` rows of `K` enter the constraints.
pub fn assemble_thm1(
    lift: &LiftedSystem,
    p_minus: &DMatrix<f64>,
    gamma_d: f64,
    w: &[f64],
    s_max: &[f64],
) -> Result<AssembledProblem> {
    let (n, m, ny) = (lift.nx(), lift.m(), lift.ny());
    let mn = m * n;
    if p_minus.shape() != (mn, mn) {
        return config(format!("P- must be {mn}x{mn}"));
    }
    check_psd(p_minus, "P-")?;
    check_common(gamma_d, w, s_max, ny)?;

    let mut vb = Builder::new();
    let s = vb.vector("s", ny);
    let k = vb.dense("K", mn, ny);
    let f = vb.symmetric("F", n);
    let nv = vb.num_vars;
    let k_off = k.offset();

    let sqrt_p = matrix_sqrt_psd(p_minus)?;
    let m_sqrt = &lift.mask_m * &sqrt_p; // n × mn
    let c_sqrt = &lift.cal_c * &sqrt_p; // ny × mn
    let last = (m - 1) * n;

    let size = n + mn + ny;
    let mut b = BlockBuilder::new(size, nv);
    b.symmetric_var(f, 0, n, 1.0);
    for r in 0..n {
        for c in 0..mn {
            b.set_const(r, n + c, m_sqrt[(r, c)]);
            for l in 0..ny {
                b.add(k_off + (last + r) * ny + l, r, n + c, -c_sqrt[(l, c)]);
            }
        }
        for l in 0..ny {
            b.add(k_off + (last + r) * ny + l, r, n + mn + l, 1.0);
        }
    }
    for i in 0..mn {
        b.set_const(n + i, n + i, 1.0);
    }
    for l in 0..ny {
        b.add(s.offset() + l, n + mn + l, n + mn + l, 1.0);
    }

    let mut tr = BlockBuilder::new(1, nv);
    tr.set_const(0, 0, gamma_d);
    let VarGroup::Symmetric { offset: f_off, .. } = f else { unreachable!() };
    for i in 0..n {
        tr.add(f_off + sym_index(n, i, i), 0, 0, -1.0);
    }

    let (objective, box_lower, box_upper) = objective_and_boxes(nv, s, w, s_max);
    Ok(AssembledProblem {
        problem: SdpProblem {
            num_vars: nv,
            objective,
            blocks: vec![b.build(), tr.build()],
            box_lower,
            box_upper,
            var_names: vb.names,
        },
        layout: Layout { groups: vb.groups },
        gain_basis: DMatrix::identity(mn, mn),
    })
}

/// Steady-state design problem for the periodic augmented system.
///
/// Unknowns: `s` (`N_y`), gain `K` (`N_x × N_y`), `Z` and `P` (symmetric `N_x`).
pub fn assemble_thm2(
    aug: &PeriodicAugmentedSystem,
    gamma_d: f64,
    delta: f64,
    w: &[f64],
    s_max: &[f64],
) -> Result<AssembledProblem> {
    let (n, nn, ny) = (aug.nx(), aug.n_aug(), aug.ny());
    check_common(gamma_d, w, s_max, ny)?;
    if !(delta > 0.0) || !delta.is_finite() {
        return config("delta must be a positive finite number");
    }

    // The gain only enters through `Mx Am K`, so it is restricted to the row space of `Mx Am`;
    // directions in its kernel would leave the Schur complement singular.
    let mx_am_full = &aug.mask_mx * &aug.am; // n × N
    let basis = row_space_basis(&mx_am_full);
    let mx_am = &mx_am_full * &basis;
    let rank = basis.ncols();

    let mut vb = Builder::new();
    let s = vb.vector("s", ny);
    let k = vb.dense("K", rank, ny);
    let z = vb.symmetric("Z", nn);
    let p = vb.symmetric("P", nn);
    let nv = vb.num_vars;
    let k_off = k.offset();
    let bqb = &aug.mask_mx * aug.qeff() * aug.mask_mx.transpose();

    let size = n + nn + ny;
    let mut b = BlockBuilder::new(size, nv);
    // (1,1): Mx P Mxᵀ − Mx Bm Qm Bmᵀ Mxᵀ; Mx selects the leading n coordinates.
    b.symmetric_var(p, 0, n, 1.0);
    for i in 0..n {
        for j in i..n {
            b.set_const(i, j, -bqb[(i, j)]);
        }
    }
    // (1,2): Mx Am − Mx Am K Cm
    for r in 0..n {
        for c in 0..nn {
            b.set_const(r, n + c, mx_am_full[(r, c)]);
        }
        for i in 0..rank {
            let a = mx_am[(r, i)];
            if a == 0.0 {
                continue;
            }
            for l in 0..ny {
                let var = k_off + i * ny + l;
                for c in 0..nn {
                    b.add(var, r, n + c, -a * aug.cm[(l, c)]);
                }
                // (1,3): Mx Am K
                b.add(var, r, n + nn + l, a);
            }
        }
    }
    b.symmetric_var(z, n, nn, 1.0);
    for l in 0..ny {
        b.add(s.offset() + l, n + nn + l, n + nn + l, 1.0);
    }

    let mut young = BlockBuilder::new(3 * nn, nv);
    for i in 0..nn {
        young.set_const(i, i, 2.0);
        young.set_const(nn + i, nn + i, 1.0 / delta);
        young.set_const(2 * nn + i, 2 * nn + i, delta);
    }
    let (VarGroup::Symmetric { offset: p_off, .. }, VarGroup::Symmetric { offset: z_off, .. }) = (p, z) else {
        unreachable!()
    };
    for i in 0..nn {
        for j in 0..nn {
            let (a, c) = if i <= j { (i, j) } else { (j, i) };
            let scale = if i == j { 1.0 } else { 1.0 / std::f64::consts::SQRT_2 };
            young.add(p_off + sym_index(nn, a, c), i, nn + j, scale);
            young.add(z_off + sym_index(nn, a, c), i, 2 * nn + j, scale);
        }
    }

    let mut tr = BlockBuilder::new(1, nv);
    tr.set_const(0, 0, gamma_d);
    for i in 0..n {
        tr.add(p_off + sym_index(nn, i, i), 0, 0, -1.0);
    }

    let (objective, box_lower, box_upper) = objective_and_boxes(nv, s, w, s_max);
    Ok(AssembledProblem {
        problem: SdpProblem {
            num_vars: nv,
            objective,
            blocks: vec![b.build(), young.build(), tr.build()],
            box_lower,
            box_upper,
            var_names: vb.names,
        },
        layout: Layout { groups: vb.groups },
        gain_basis: basis,
    })
}

/// Orthonormal basis (columns) of the row space of `m`.
fn row_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > 1e-12 * smax)
        .collect();
    let mut basis = DMatrix::zeros(m.ncols(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    basis
}

/// Reweighting rule `W'ᵢᵢ = 1/(s*ᵢ + ε)`. The previous weights do not enter.
pub fn reweight(_w: &[f64], s_star: &[f64], eps: f64) -> Vec<f64> {
    s_star.iter().map(|&s| 1.0 / (s.max(0.0) + eps)).collect()
}

/// Default ε for [`reweight`]: `1e−6·max(1, ‖s*‖∞)`.
pub fn default_eps(s_star: &[f64]) -> f64 {
    1e-6 * s_star.iter().fold(1.0_f64, |a, &v| a.max(v.abs()))
}
