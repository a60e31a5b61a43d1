//! Memory polynomials: regressors, evaluation, identification and cost.
//!
//! A model of order `K` and memory depth `Q` computes
//!
//! ```text
//! y(n) = sum_{q=0..Q} sum_{k=1..K} w[k,q] |x(n-q)|^(k-1) x(n-q)
//! ```
//!
//! with `x(n) = 0` for `n < 0`. Coefficients are stored k-major: the index of
//! `w[k,q]` is `(k-1)(Q+1) + q`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::format::{fmt_g17, parse_f64};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Coefficient index for order `k` (1-based) and delay `q`.
#[inline]
pub fn coeff_index(k: usize, q: usize, memory_depth: usize) -> usize {
    (k - 1) * (memory_depth + 1) + q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPolynomial {
    order: usize,
    memory_depth: usize,
    coeffs: Vec<Complex64>,
}

impl MemoryPolynomial {
    pub fn new(order: usize, memory_depth: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if order < 1 {
            return arg("order K must be at least 1");
        }
        let want = order * (memory_depth + 1);
        if coeffs.len() != want {
            return arg(format!(
                "K={order}, Q={memory_depth} needs {want} coefficients, got {}",
                coeffs.len()
            ));
        }
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return arg("coefficients must be finite");
        }
        Ok(Self { order, memory_depth, coeffs })
    }

    pub fn zeros(order: usize, memory_depth: usize) -> Result<Self> {
        Self::new(order, memory_depth, vec![ZERO; order.max(1) * (memory_depth + 1)])
    }

    /// The pass-through model `y = x`.
    pub fn identity(order: usize, memory_depth: usize) -> Result<Self> {
        let mut m = Self::zeros(order, memory_depth)?;
        m.coeffs[0] = Complex64::new(1.0, 0.0);
        Ok(m)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn memory_depth(&self) -> usize {
        self.memory_depth
    }

    pub fn num_coeffs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize, q: usize) -> Complex64 {
        self.coeffs[coeff_index(k, q, self.memory_depth)]
    }

    pub fn set_coeffs(&mut self, coeffs: &[Complex64]) -> Result<()> {
        *self = Self::new(self.order, self.memory_depth, coeffs.to_vec())?;
        Ok(())
    }

    /// Horner evaluation per delay branch.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (k_max, q_max) = (self.order, self.memory_depth);
        // branch[q] = w[1..=K, q], reversed for Horner.
        let branches: Vec<Vec<Complex64>> = (0..=q_max)
            .map(|q| (1..=k_max).rev().map(|k| self.coeff(k, q)).collect())
            .collect();
        (0..x.len())
            .map(|n| {
                let mut y = ZERO;
                for (q, branch) in branches.iter().enumerate().take(n + 1) {
                    let xv = x[n - q];
                    let r = xv.norm();
                    let mut p = branch[0];
                    for &w in &branch[1..] {
                        p = p * r + w;
                    }
                    y += p * xv;
                }
                y
            })
            .collect()
    }

    /// Evaluation as `regressor_matrix(x) * coeffs`.
    pub fn apply_matrix(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let r = regressor_matrix(x, self.order, self.memory_depth)?;
        Ok((r * DVector::from_column_slice(&self.coeffs)).as_slice().to_vec())
    }

    /// Rows `k,q,re,im` after a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,q,re,im\n");
        for k in 1..=self.order {
            for q in 0..=self.memory_depth {
                let c = self.coeff(k, q);
                s.push_str(&format!("{k},{q},{},{}\n", fmt_g17(c.re), fmt_g17(c.im)));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('k')) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Parse(format!("line {}: expected k,q,re,im", lineno + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let k: usize = f[0].parse().map_err(|_| bad())?;
            let q: usize = f[1].parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            entries.push((k, q, Complex64::new(parse_f64(f[2])?, parse_f64(f[3])?)));
        }
        let order = entries.iter().map(|e| e.0).max().ok_or_else(|| {
            Error::Parse("coefficient file has no rows".into())
        })?;
        let depth = entries.iter().map(|e| e.1).max().unwrap_or(0);
        if entries.len() != order * (depth + 1) {
            return Err(Error::Parse(format!(
                "expected {} coefficient rows for K={order}, Q={depth}, got {}",
                order * (depth + 1),
                entries.len()
            )));
        }
        let mut coeffs = vec![Complex64::new(f64::NAN, 0.0); order * (depth + 1)];
        for (k, q, c) in entries {
            coeffs[coeff_index(k, q, depth)] = c;
        }
        if coeffs.iter().any(|c| c.re.is_nan()) {
            return Err(Error::Parse("duplicate or missing (k,q) rows".into()));
        }
        Self::new(order, depth, coeffs)
    }
}

/// Free-function form of [`MemoryPolynomial::apply`].
pub fn mp_apply(x: &[Complex64], model: &MemoryPolynomial) -> Vec<Complex64> {
    model.apply(x)
}

/// `len(x) x K(Q+1)` matrix whose column `(k,q)` holds `|x(n-q)|^(k-1) x(n-q)`.
pub fn regressor_matrix(x: &[Complex64], order: usize, memory_depth: usize) -> Result<DMatrix<Complex64>> {
    if order < 1 {
        return arg("order K must be at least 1");
    }
    if x.len() <= memory_depth {
        return arg(format!(
            "need more than Q={memory_depth} samples, got {}",
            x.len()
        ));
    }
    let n = x.len();
    let cols = order * (memory_depth + 1);
    let mut r = DMatrix::from_element(n, cols, ZERO);
    for q in 0..=memory_depth {
        for i in q..n {
            let xv = x[i - q];
            let mag = xv.norm();
            let mut v = xv;
            for k in 1..=order {
                r[(i, coeff_index(k, q, memory_depth))] = v;
                v *= mag;
            }
        }
    }
    Ok(r)
}

/// Regressor row for sample `n`, written into `out` (length `K(Q+1)`).
pub fn regressor_row(x: &[Complex64], n: usize, order: usize, memory_depth: usize, out: &mut [Complex64]) {
    for q in 0..=memory_depth {
        let xv = if n >= q { x[n - q] } else { ZERO };
        let mag = xv.norm();
        let mut v = xv;
        for k in 1..=order {
            out[coeff_index(k, q, memory_depth)] = v;
            v *= mag;
        }
    }
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LsFit {
    pub coeffs: Vec<Complex64>,
    /// 2-norm condition number of the column-equilibrated regressor.
    pub condition: f64,
    pub rank: usize,
}

impl LsFit {
    pub const MAX_CONDITION: f64 = 1e12;

    pub fn is_ill_conditioned(&self) -> bool {
        self.rank < self.coeffs.len() || !(self.condition <= Self::MAX_CONDITION)
    }

    /// Errors if the fit was rank deficient.
    pub fn require_well_conditioned(self) -> Result<Self> {
        if self.is_ill_conditioned() {
            Err(Error::IllConditioned { condition: self.condition })
        } else {
            Ok(self)
        }
    }
}

/// Least-squares solution of `R w ~ y` by Householder QR on the
/// column-equilibrated matrix. When the triangular factor is numerically
/// singular the minimum-norm solution is returned and flagged through
/// [`LsFit::is_ill_conditioned`].
pub fn ls_fit(r: &DMatrix<Complex64>, y: &[Complex64]) -> Result<LsFit> {
    let (m, n) = r.shape();
    if m < n {
        return arg(format!("least squares needs rows >= cols, got {m}x{n}"));
    }
    if y.len() != m {
        return arg(format!("target has {} samples, regressor has {m} rows", y.len()));
    }
    if r.iter().chain(y).any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return arg("least-squares inputs must be finite");
    }
    if n == 0 {
        return Ok(LsFit { coeffs: vec![], condition: 1.0, rank: 0 });
    }

    let scale: Vec<f64> = r
        .column_iter()
        .map(|c| {
            let s = c.norm();
            if s > 0.0 { 1.0 / s } else { 1.0 }
        })
        .collect();
    let mut a = r.clone();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).scale_mut(*s);
    }

    let qr = a.qr();
    let q = qr.q();
    let tri = qr.r();
    let rhs = q.ad_mul(&DVector::from_column_slice(y));

    let sv = tri.clone().svd(true, true);
    let smax = sv.singular_values.max();
    let smin = sv.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let tol = smax * n.max(m) as f64 * f64::EPSILON;
    let rank = sv.singular_values.iter().filter(|&&s| s > tol).count();

    let w = if condition <= LsFit::MAX_CONDITION && rank == n {
        tri.solve_upper_triangular(&rhs)
            .ok_or(Error::IllConditioned { condition })?
    } else {
        sv.solve(&rhs, tol).map_err(|_| Error::IllConditioned { condition })?
    };
    let coeffs = w.iter().zip(&scale).map(|(c, s)| c * *s).collect();
    Ok(LsFit { coeffs, condition, rank })
}

/// Complex LMS filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct LmsState {
    pub weights: Vec<Complex64>,
    pub step_size: f64,
    pub iteration: usize,
    pub last_error_norm: f64,
    /// Cap the step at `1 / ||row||^2`, the size that exactly cancels the
    /// a-priori error, so single large samples cannot overshoot.
    pub normalized: bool,
}

impl LmsState {
    pub const DEFAULT_STEP: f64 = 0.01;

    pub fn new(weights: Vec<Complex64>, step_size: f64) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return arg(format!("LMS step size must be positive, got {step_size}"));
        }
        Ok(Self { weights, step_size, iteration: 0, last_error_norm: 0.0, normalized: false })
    }

    /// One per-sample update. Returns the a-priori error.
    #[inline]
    pub fn update(&mut self, row: &[Complex64], target: Complex64) -> Result<Complex64> {
        debug_assert_eq!(row.len(), self.weights.len());
        let est: Complex64 = row.iter().zip(&self.weights).map(|(r, w)| r * w).sum();
        let e = target - est;
        let mu = if self.normalized {
            let energy: f64 = row.iter().map(|r| r.norm_sqr()).sum();
            self.step_size.min(1.0 / (energy + f64::MIN_POSITIVE))
        } else {
            self.step_size
        };
        let g = e * mu;
        for (w, r) in self.weights.iter_mut().zip(row) {
            *w += r.conj() * g;
        }
        self.iteration += 1;
        self.last_error_norm = e.norm();
        if !self.weights.iter().all(|w| w.re.is_finite() && w.im.is_finite()) {
            return Err(Error::Divergence { iteration: self.iteration });
        }
        Ok(e)
    }
}

/// Feeds a block of regressor rows through the filter one sample at a time,
/// so any block length reproduces per-sample adaptation. For a single-row
/// block this is `w += mu R^H e` with `e = y - R w`. `last_error_norm` is the
/// norm of the block's a-priori errors.
pub fn lms_step(state: &LmsState, r_m: &DMatrix<Complex64>, y_m: &[Complex64]) -> Result<LmsState> {
    if r_m.ncols() != state.weights.len() {
        return arg(format!(
            "block has {} columns, filter has {} weights",
            r_m.ncols(),
            state.weights.len()
        ));
    }
    if r_m.nrows() != y_m.len() {
        return arg(format!("block has {} rows but {} targets", r_m.nrows(), y_m.len()));
    }
    let mut next = state.clone();
    let mut row = vec![ZERO; r_m.ncols()];
    let mut err2 = 0.0;
    for (i, &y) in y_m.iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = r_m[(i, j)];
        }
        err2 += next.update(&row, y)?.norm_sqr();
    }
    next.last_error_norm = err2.sqrt();
    Ok(next)
}

/// Per-sample cost of running `N_t` memory polynomials by Horner recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub order: usize,
    pub memory_depth: usize,
    pub num_antennas: usize,
    pub flops: u64,
}

/// `(4K + 2) Q N_t`.
pub fn flops(order: usize, memory_depth: usize, num_antennas: usize) -> Result<FlopReport> {
    if order < 1 || num_antennas < 1 {
        return arg("flops needs K >= 1 and N_t >= 1");
    }
    let flops = (4 * order as u64 + 2) * memory_depth as u64 * num_antennas as u64;
    Ok(FlopReport { order, memory_depth, num_antennas, flops })
}

/// `4 (K_C - K_P) Q N_t`.
pub fn flop_savings(k_conv: usize, k_prop: usize, memory_depth: usize, num_antennas: usize) -> Result<u64> {
    if k_prop < 1 || k_conv < k_prop {
        return arg(format!("need K_C >= K_P >= 1, got K_C={k_conv}, K_P={k_prop}"));
    }
    Ok(4 * (k_conv - k_prop) as u64 * memory_depth as u64 * num_antennas as u64)
}
