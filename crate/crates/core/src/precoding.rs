//! Downlink channel, zero-forcing precoder and precoder adaptation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::format::{fmt_g17, parse_f64};
use crate::mempoly::LmsState;
use crate::signals::SignalFrame;

/// Largest accepted condition number of `H H^H`.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

const GEN_RETRIES: u64 = 8;

/// `M_r x N_t` downlink channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    h: DMatrix<Complex64>,
}

impl ChannelMatrix {
    /// Accepts `M_r <= N_t`; the square case is only useful for tests.
    pub fn new(h: DMatrix<Complex64>) -> Result<Self> {
        let (m, n) = h.shape();
        if m == 0 || m > n {
            return arg(format!("channel must have 1 <= M_r <= N_t, got {m}x{n}"));
        }
        if h.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return arg("channel entries must be finite");
        }
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.h
    }

    pub fn num_users(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_antennas(&self) -> usize {
        self.h.ncols()
    }

    pub fn to_csv(&self) -> String {
        grid_to_csv(&self.h)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::new(grid_from_csv(text)?)
    }
}

/// `N_t x M_r` precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingMatrix {
    p: DMatrix<Complex64>,
}

impl PrecodingMatrix {
    pub fn new(p: DMatrix<Complex64>) -> Result<Self> {
        if p.is_empty() {
            return arg("precoder must be non-empty");
        }
        if p.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return arg("precoder entries must be finite");
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.p
    }

    pub fn num_antennas(&self) -> usize {
        self.p.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.p.ncols()
    }

    /// `||H P - I||_F`.
    pub fn zf_residual(&self, h: &ChannelMatrix) -> f64 {
        let hp = h.matrix() * &self.p;
        (hp - DMatrix::identity(h.num_users(), h.num_users())).norm()
    }

    pub fn to_csv(&self) -> String {
        grid_to_csv(&self.p)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::new(grid_from_csv(text)?)
    }
}

/// One line per matrix row, each entry written as a `re,im` pair.
fn grid_to_csv(m: &DMatrix<Complex64>) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let line: Vec<String> =
            row.iter().map(|v| format!("{},{}", fmt_g17(v.re), fmt_g17(v.im))).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn grid_from_csv(text: &str) -> Result<DMatrix<Complex64>> {
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals = line.split(',').map(|f| parse_f64(f.trim())).collect::<Result<Vec<_>>>()?;
        if vals.len() % 2 != 0 {
            return Err(Error::Parse(format!("line {}: odd number of fields", i + 1)));
        }
        rows.push(vals.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect());
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("matrix rows are empty or ragged".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// i.i.d. unit-variance circularly-symmetric Gaussian channel.
pub fn gen_channel(num_users: usize, num_antennas: usize, seed: u64) -> Result<ChannelMatrix> {
    if num_users < 1 || num_users >= num_antennas {
        return arg(format!(
            "channel needs 1 <= M_r < N_t, got M_r={num_users}, N_t={num_antennas}"
        ));
    }
    for attempt in 0..GEN_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let h = DMatrix::from_fn(num_users, num_antennas, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        });
        let ch = ChannelMatrix::new(h)?;
        if gram_condition(&ch) <= MAX_GRAM_CONDITION {
            return Ok(ch);
        }
    }
    Err(Error::Generation(format!("no full-rank channel after {GEN_RETRIES} draws")))
}

fn gram_condition(h: &ChannelMatrix) -> f64 {
    let g = h.matrix() * h.matrix().adjoint();
    let sv = g.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min > 0.0 { max / min } else { f64::INFINITY }
}

/// Minimum-norm right inverse `H^H (H H^H)^-1`.
pub fn zf_pinv(h: &ChannelMatrix) -> Result<PrecodingMatrix> {
    let condition = gram_condition(h);
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let hm = h.matrix();
    let gram = hm * hm.adjoint();
    let x = gram.lu().solve(hm).ok_or(Error::IllConditioned { condition })?;
    PrecodingMatrix::new(x.adjoint())
}

/// `out(n) = M in(n)` for every sample column.
pub(crate) fn mat_frame(m: &DMatrix<Complex64>, x: &SignalFrame) -> Result<SignalFrame> {
    if m.ncols() != x.num_rows() {
        return arg(format!("matrix has {} columns, frame has {} rows", m.ncols(), x.num_rows()));
    }
    let len = x.len();
    let rows = (0..m.nrows())
        .into_par_iter()
        .map(|i| {
            let mut out = vec![Complex64::new(0.0, 0.0); len];
            for (j, src) in x.rows().iter().enumerate() {
                let a = m[(i, j)];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(src) {
                    *o += a * v;
                }
            }
            out
        })
        .collect();
    SignalFrame::new(rows, x.sample_rate_hz())
}

/// `x = P s`.
pub fn precode(p: &PrecodingMatrix, s: &SignalFrame) -> Result<SignalFrame> {
    mat_frame(p.matrix(), s)
}

/// `r = H z + n` with complex white noise of power `noise_power` per user,
/// drawn from `noise_seed`.
pub fn apply_channel(
    h: &ChannelMatrix,
    z: &SignalFrame,
    noise_power: f64,
    noise_seed: u64,
) -> Result<SignalFrame> {
    if !(noise_power >= 0.0 && noise_power.is_finite()) {
        return arg(format!("noise power must be finite and nonnegative, got {noise_power}"));
    }
    let r = mat_frame(h.matrix(), z)?;
    if noise_power == 0.0 {
        return Ok(r);
    }
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let fs = r.sample_rate_hz();
    let rows = r
        .into_rows()
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    v + Complex64::new(re, im) * sigma
                })
                .collect()
        })
        .collect();
    SignalFrame::new(rows, fs)
}

/// Row-wise LMS adaptation of a precoder. Row `i` is an `M_r`-tap
/// spatial filter predicting antenna signal `x_i` from the user streams.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderLms {
    rows: Vec<LmsState>,
}

impl PrecoderLms {
    /// A zero step size is allowed and freezes the precoder.
    pub fn new(p: &PrecodingMatrix, step_size: f64) -> Result<Self> {
        Self::with_normalization(p, step_size, false)
    }

    /// Like [`PrecoderLms::new`], optionally with power-normalized steps.
    pub fn with_normalization(p: &PrecodingMatrix, step_size: f64, normalized: bool) -> Result<Self> {
        if !(step_size >= 0.0 && step_size.is_finite()) {
            return arg(format!("step size must be finite and nonnegative, got {step_size}"));
        }
        let m = p.matrix();
        let rows = (0..m.nrows())
            .map(|i| LmsState {
                weights: m.row(i).iter().copied().collect(),
                step_size,
                iteration: 0,
                last_error_norm: 0.0,
                normalized,
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn precoder(&self) -> Result<PrecodingMatrix> {
        let n = self.rows.len();
        let m = self.rows[0].weights.len();
        PrecodingMatrix::new(DMatrix::from_fn(n, m, |i, j| self.rows[i].weights[j]))
    }

    pub fn row_states(&self) -> &[LmsState] {
        &self.rows
    }

    /// Root-sum-square of the per-row error norms from the last step.
    pub fn last_error_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.last_error_norm.powi(2)).sum::<f64>().sqrt()
    }
}

/// Runs one block of per-sample updates on every row of the precoder.
pub fn precoder_lms_step(
    state: &PrecoderLms,
    r_block: &SignalFrame,
    x_block: &SignalFrame,
) -> Result<PrecoderLms> {
    let m_r = state.rows[0].weights.len();
    if r_block.num_rows() != m_r {
        return arg(format!("feedback has {} rows, precoder has {m_r} users", r_block.num_rows()));
    }
    if x_block.num_rows() != state.rows.len() {
        return arg(format!(
            "target has {} rows, precoder has {} antennas",
            x_block.num_rows(),
            state.rows.len()
        ));
    }
    if r_block.len() != x_block.len() {
        return arg("feedback and target blocks differ in length");
    }
    let len = r_block.len();
    let regressors: Vec<Vec<Complex64>> =
        (0..len).map(|n| (0..m_r).map(|j| r_block.row(j)[n]).collect()).collect();
    let rows = state
        .rows
        .par_iter()
        .zip(x_block.rows().par_iter())
        .map(|(row, target)| {
            let mut s = row.clone();
            if s.step_size == 0.0 {
                return Ok(s);
            }
            let mut err2 = 0.0;
            for (reg, &t) in regressors.iter().zip(target) {
                err2 += s.update(reg, t)?.norm_sqr();
            }
            s.last_error_norm = err2.sqrt();
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrecoderLms { rows })
}

/// Projector onto the null space of `H`, `I - H^H (H H^H)^-1 H`.
pub fn null_space_projector(h: &ChannelMatrix) -> Result<DMatrix<Complex64>> {
    let p = zf_pinv(h)?;
    let n = h.num_antennas();
    Ok(DMatrix::identity(n, n) - p.matrix() * h.matrix())
}
