//! DPD training: per-PA indirect learning and the joint precoder/DPD loop.
//!
//! Both trainers adapt postdistorters with complex LMS on memory-polynomial
//! regressors and copy them into the predistorter position. Before adapting,
//! each antenna's regressor is passed through a fixed triangular transform
//! that decorrelates its columns (estimated once from the first observation).
//! The transform changes the basis the LMS runs in, not the model class, so
//! the learned coefficients are reported in the usual `w[k,q]` layout.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::format::{fmt_g17, fmt_general};
use crate::mempoly::{flops, regressor_matrix, regressor_row, FlopReport, LmsState, MemoryPolynomial};
use crate::pa::{bank_forward, PaBank};
use crate::precoding::{
    apply_channel, mat_frame, precode, precoder_lms_step, zf_pinv, ChannelMatrix, PrecoderLms,
    PrecodingMatrix,
};
use crate::signals::{
    gen_multicarrier, nmse_db, oob_ratio_db, psd_welch, Band, PsdEstimate, SignalFrame,
    WaveformConfig,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One predistorter per antenna, all with the same `(K, Q)`, and the target
/// linear gain `G0` of each DPD+PA cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdBank {
    predistorters: Vec<MemoryPolynomial>,
    gain: f64,
}

impl DpdBank {
    pub fn new(predistorters: Vec<MemoryPolynomial>, gain: f64) -> Result<Self> {
        let first = predistorters.first().ok_or_else(|| Error::Argument("empty DPD bank".into()))?;
        let (k, q) = (first.order(), first.memory_depth());
        if predistorters.iter().any(|p| p.order() != k || p.memory_depth() != q) {
            return arg("all predistorters must share order and memory depth");
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return arg(format!("linear gain must be positive, got {gain}"));
        }
        Ok(Self { predistorters, gain })
    }

    pub fn identity(num_antennas: usize, order: usize, memory_depth: usize, gain: f64) -> Result<Self> {
        let id = MemoryPolynomial::identity(order, memory_depth)?;
        Self::new(vec![id; num_antennas], gain)
    }

    pub fn predistorters(&self) -> &[MemoryPolynomial] {
        &self.predistorters
    }

    pub fn num_antennas(&self) -> usize {
        self.predistorters.len()
    }

    pub fn order(&self) -> usize {
        self.predistorters[0].order()
    }

    pub fn memory_depth(&self) -> usize {
        self.predistorters[0].memory_depth()
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Rows `antenna,k,q,re,im`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("antenna,k,q,re,im\n");
        for (i, p) in self.predistorters.iter().enumerate() {
            for k in 1..=p.order() {
                for q in 0..=p.memory_depth() {
                    let c = p.coeff(k, q);
                    s.push_str(&format!("{i},{k},{q},{},{}\n", fmt_g17(c.re), fmt_g17(c.im)));
                }
            }
        }
        s
    }
}

/// `row i = predistorter_i(x_i)`.
pub fn dpd_apply(g: &DpdBank, x: &SignalFrame) -> Result<SignalFrame> {
    if x.num_rows() != g.num_antennas() {
        return arg(format!(
            "frame has {} rows, DPD bank has {} antennas",
            x.num_rows(),
            g.num_antennas()
        ));
    }
    let rows = x
        .rows()
        .par_iter()
        .zip(g.predistorters.par_iter())
        .map(|(row, p)| p.apply(row))
        .collect();
    SignalFrame::new(rows, x.sample_rate_hz())
}

/// Signal fed to the postdistorter during joint training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackTap {
    /// Each PA output divided by `G0`.
    PerAntenna,
    /// The received user signals mapped back to the antennas, `P H z / G0`.
    #[default]
    ThroughPrecoder,
}

/// How per-user errors combine into the loop error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorAggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// DPD LMS step size.
    pub step_size: f64,
    pub precoder_step_size: f64,
    /// Decorrelate regressors before adapting.
    pub whiten: bool,
    /// Power-normalized LMS steps in both trainers.
    pub normalized: bool,
    /// Report the mean of the DPD weights over the second half of each
    /// epoch instead of the final iterate.
    pub average_weights: bool,
    /// Iteration cap of the conventional trainer.
    pub conventional_iterations: usize,
    /// The conventional trainer stops once no antenna's epoch error moves
    /// by more than this between iterations.
    pub settle_tolerance_db: f64,
    pub threshold_db: f64,
    pub max_iterations: usize,
    pub feedback_tap: FeedbackTap,
    pub refresh_between_updates: bool,
    pub error_aggregation: ErrorAggregation,
    /// Samples per LMS update; 0 uses the whole frame.
    pub update_window: usize,
    /// Target cascade gain. When absent it is measured as the peak gain of
    /// the undistorted training pass, `max|z| / max|x|`.
    pub linear_gain: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 3e-4,
            precoder_step_size: 0.01,
            whiten: true,
            normalized: true,
            average_weights: true,
            conventional_iterations: 4,
            settle_tolerance_db: 0.1,
            threshold_db: -60.0,
            max_iterations: 200,
            feedback_tap: FeedbackTap::default(),
            refresh_between_updates: true,
            error_aggregation: ErrorAggregation::default(),
            update_window: 0,
            linear_gain: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.precoder_step_size >= 0.0 && self.precoder_step_size.is_finite()) {
            return bad(format!(
                "precoder_step_size must be nonnegative, got {}",
                self.precoder_step_size
            ));
        }
        if !self.threshold_db.is_finite() {
            return bad("threshold_db must be finite".into());
        }
        if self.max_iterations == 0 || self.conventional_iterations == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        if !(self.settle_tolerance_db >= 0.0) {
            return bad("settle_tolerance_db must be nonnegative".into());
        }
        if let Some(g) = self.linear_gain {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("linear_gain must be positive, got {g}"));
            }
        }
        Ok(())
    }

    fn resolve_gain(&self, bank: &PaBank, x: &SignalFrame) -> Result<f64> {
        if let Some(g) = self.linear_gain {
            return Ok(g);
        }
        let z = bank_forward(x, bank)?;
        let (zp, xp) = (z.max_abs(), x.max_abs());
        if !(xp > 0.0 && zp > 0.0) {
            return arg("cannot measure the cascade gain of a silent frame");
        }
        Ok(zp / xp)
    }
}

/// Upper-triangular `T` such that the rows of `R T` have roughly identity
/// covariance.
#[derive(Debug, Clone)]
struct Whitener {
    t: DMatrix<Complex64>,
}

impl Whitener {
    fn identity(n: usize) -> Self {
        Self { t: DMatrix::identity(n, n) }
    }

    fn estimate(input: &[Complex64], order: usize, depth: usize) -> Result<Self> {
        let cols = order * (depth + 1);
        let r = regressor_matrix(input, order, depth)?;
        let mut gram = r.ad_mul(&r) / Complex64::new(input.len() as f64, 0.0);
        let scale: Vec<f64> = (0..cols)
            .map(|j| {
                let d = gram[(j, j)].re;
                if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 }
            })
            .collect();
        for i in 0..cols {
            for j in 0..cols {
                gram[(i, j)] *= scale[i] * scale[j];
            }
            if gram[(i, i)].re == 0.0 {
                gram[(i, i)] = Complex64::new(1.0, 0.0);
            }
        }
        let mut ridge = 0.0;
        let chol = loop {
            let mut g = gram.clone();
            for i in 0..cols {
                g[(i, i)] += ridge;
            }
            if let Some(c) = g.cholesky() {
                break c;
            }
            ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
        };
        let lh = chol.l().adjoint();
        let mut t = lh
            .solve_upper_triangular(&DMatrix::identity(cols, cols))
            .unwrap_or_else(|| DMatrix::identity(cols, cols));
        for (i, s) in scale.iter().enumerate() {
            t.row_mut(i).scale_mut(*s);
        }
        Ok(Self { t })
    }

    #[inline]
    fn transform(&self, row: &[Complex64], out: &mut [Complex64]) {
        let n = row.len();
        for j in 0..n {
            let mut acc = ZERO;
            for i in 0..=j {
                acc += row[i] * self.t[(i, j)];
            }
            out[j] = acc;
        }
    }

    /// Coefficients in the model basis from weights in the whitened basis.
    fn to_model(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..v.len())
            .map(|i| (i..v.len()).map(|j| self.t[(i, j)] * v[j]).sum())
            .collect()
    }

    fn to_whitened(&self, w: &[Complex64]) -> Vec<Complex64> {
        let rhs = nalgebra::DVector::from_column_slice(w);
        self.t
            .solve_upper_triangular(&rhs)
            .map(|v| v.as_slice().to_vec())
            .unwrap_or_else(|| w.to_vec())
    }
}

/// LMS-adapted postdistorter for one antenna.
#[derive(Debug, Clone)]
struct AdaptiveDpd {
    order: usize,
    depth: usize,
    whiten: bool,
    average: bool,
    whitener: Option<Whitener>,
    lms: LmsState,
}

impl AdaptiveDpd {
    fn new(order: usize, depth: usize, cfg: &TrainConfig) -> Result<Self> {
        let init = MemoryPolynomial::identity(order, depth)?.coeffs().to_vec();
        let mut lms = LmsState::new(init, cfg.step_size)?;
        lms.normalized = cfg.normalized;
        Ok(Self { order, depth, whiten: cfg.whiten, average: cfg.average_weights, whitener: None, lms })
    }

    fn coeffs(&self) -> Vec<Complex64> {
        match &self.whitener {
            Some(w) => w.to_model(&self.lms.weights),
            None => self.lms.weights.clone(),
        }
    }

    fn model(&self) -> Result<MemoryPolynomial> {
        MemoryPolynomial::new(self.order, self.depth, self.coeffs())
    }

    /// One pass over `range`, fitting `input -> target`. Returns the mean
    /// a-priori error power relative to the target power, in dB.
    fn epoch(&mut self, input: &[Complex64], target: &[Complex64], range: std::ops::Range<usize>) -> Result<f64> {
        if self.whiten || self.whitener.is_none() {
            let model = self.coeffs();
            let w = if self.whiten {
                Whitener::estimate(input, self.order, self.depth)?
            } else {
                Whitener::identity(model.len())
            };
            self.lms.weights = w.to_whitened(&model);
            self.whitener = Some(w);
        }
        let w = self.whitener.as_ref().expect("whitener set above");
        let cols = self.lms.weights.len();
        let mut raw = vec![ZERO; cols];
        let mut psi = vec![ZERO; cols];
        let (mut err, mut sig) = (0.0, 0.0);
        let avg_from = range.start + range.len() / 2;
        let mut sum = vec![ZERO; cols];
        let mut count = 0usize;
        for n in range {
            regressor_row(input, n, self.order, self.depth, &mut raw);
            if self.whiten {
                w.transform(&raw, &mut psi);
            } else {
                psi.copy_from_slice(&raw);
            }
            err += self.lms.update(&psi, target[n])?.norm_sqr();
            sig += target[n].norm_sqr();
            if self.average && n >= avg_from {
                for (a, w) in sum.iter_mut().zip(&self.lms.weights) {
                    *a += w;
                }
                count += 1;
            }
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            for (w, a) in self.lms.weights.iter_mut().zip(&sum) {
                *w = a * inv;
            }
        }
        Ok(if sig > 0.0 && err > 0.0 { 10.0 * (err / sig).log10() } else { -300.0 })
    }
}

fn update_range(iteration: usize, len: usize, window: usize) -> std::ops::Range<usize> {
    if window == 0 || window >= len {
        return 0..len;
    }
    let blocks = len / window;
    let b = iteration % blocks;
    b * window..(b + 1) * window
}

fn dpd_bank_from(dpds: &[AdaptiveDpd], gain: f64) -> Result<DpdBank> {
    DpdBank::new(dpds.iter().map(AdaptiveDpd::model).collect::<Result<_>>()?, gain)
}

/// Runs one LMS pass per antenna in parallel, mapping `obs_i -> target_i`.
fn adapt_all(
    dpds: &mut [AdaptiveDpd],
    obs: &SignalFrame,
    target: &SignalFrame,
    range: std::ops::Range<usize>,
) -> std::result::Result<Vec<f64>, (usize, Error)> {
    dpds.par_iter_mut()
        .enumerate()
        .map(|(i, d)| d.epoch(obs.row(i), target.row(i), range.clone()).map_err(|e| (i, e)))
        .collect()
}

/// Per-PA indirect learning. Each antenna adapts a postdistorter from its
/// own gain-normalized PA output to its PA input, and the result is copied
/// into the predistorter. `x` is the precoded drive signal.
///
/// The trainer observes nothing but its own antenna, so coupling between
/// neighbouring paths appears to it as unexplained interference.
pub fn train_conventional(
    bank: &PaBank,
    order: usize,
    memory_depth: usize,
    x: &SignalFrame,
    cfg: &TrainConfig,
) -> Result<(DpdBank, usize)> {
    cfg.validate()?;
    let n_t = bank.num_antennas();
    if x.num_rows() != n_t {
        return arg(format!("training frame has {} rows, PA bank has {n_t} antennas", x.num_rows()));
    }
    if x.len() <= memory_depth {
        return arg("training frame is shorter than the memory depth");
    }
    let g0 = cfg.resolve_gain(bank, x)?;
    let mut dpds = (0..n_t)
        .map(|_| AdaptiveDpd::new(order, memory_depth, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut g = DpdBank::identity(n_t, order, memory_depth, g0)?;
    let mut last: Option<Vec<f64>> = None;
    let mut used = 0;
    for it in 0..cfg.conventional_iterations {
        let y = dpd_apply(&g, x)?;
        let z = bank_forward(&y, bank)?.scaled(Complex64::new(1.0 / g0, 0.0));
        let range = update_range(it, x.len(), cfg.update_window);
        let errs = adapt_all(&mut dpds, &z, &y, range)
            .map_err(|(antenna, e)| Error::Training { antenna, source: Box::new(e) })?;
        g = dpd_bank_from(&dpds, g0)?;
        used = it + 1;
        if let Some(prev) = &last {
            let moved = errs.iter().zip(prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if moved < cfg.settle_tolerance_db {
                break;
            }
        }
        last = Some(errs);
    }
    Ok((g, used))
}

/// State of the joint precoder/DPD loop.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub dpd: DpdBank,
    pub precoder: PrecodingMatrix,
    pub initial_precoder: PrecodingMatrix,
    pub iteration: usize,
    /// Loop error before each iteration's updates, dB.
    pub error_history: Vec<f64>,
    pub converged: bool,
    pub threshold_db: f64,
    pub max_iterations: usize,
}

impl TrainingState {
    /// Rows `iteration,error_db`, iterations counted from 1.
    pub fn error_history_csv(&self) -> String {
        let mut s = String::from("iteration,error_db\n");
        for (i, e) in self.error_history.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, crate::format::fmt_db(*e)));
        }
        s
    }

    /// `||P - P0||_F / ||P0||_F`.
    pub fn precoder_change(&self) -> f64 {
        let p0 = self.initial_precoder.matrix();
        (self.precoder.matrix() - p0).norm() / p0.norm()
    }
}

fn aggregate(errors: &[f64], how: ErrorAggregation) -> f64 {
    match how {
        ErrorAggregation::Max => errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ErrorAggregation::Mean => errors.iter().sum::<f64>() / errors.len() as f64,
    }
}

fn per_user_nmse(r: &SignalFrame, s: &SignalFrame) -> Result<Vec<f64>> {
    (0..s.num_rows()).map(|k| nmse_db(r.row(k), s.row(k))).collect()
}

struct ForwardPass {
    x: SignalFrame,
    y: SignalFrame,
    z: SignalFrame,
    /// `H z / G0`.
    r: SignalFrame,
}

fn forward(
    h: &ChannelMatrix,
    bank: &PaBank,
    g: &DpdBank,
    p: &PrecodingMatrix,
    s: &SignalFrame,
) -> Result<ForwardPass> {
    let x = precode(p, s)?;
    let y = dpd_apply(g, &x)?;
    let z = bank_forward(&y, bank)?;
    let r = apply_channel(h, &z, 0.0, 0)?.scaled(Complex64::new(1.0 / g.gain(), 0.0));
    if !(z.is_finite() && r.is_finite()) {
        return Err(Error::Domain("forward pass produced non-finite samples".into()));
    }
    Ok(ForwardPass { x, y, z, r })
}

/// Joint adaptation of the precoder and a low-order DPD bank.
///
/// `s` holds the user streams at the drive level. Starting from the
/// zero-forcing precoder and identity predistorters, each iteration measures
/// the per-user error, adapts the DPD bank on `z' -> y`, optionally re-runs
/// the forward path, and adapts the precoder on `r -> x`.
pub fn successive_refinement(
    h: &ChannelMatrix,
    bank: &PaBank,
    s: &SignalFrame,
    order: usize,
    memory_depth: usize,
    cfg: &TrainConfig,
) -> Result<TrainingState> {
    cfg.validate()?;
    let n_t = bank.num_antennas();
    if h.num_antennas() != n_t || s.num_rows() != h.num_users() {
        return arg(format!(
            "dimension mismatch: H is {}x{}, bank has {n_t} antennas, s has {} rows",
            h.num_users(),
            h.num_antennas(),
            s.num_rows()
        ));
    }
    if s.len() <= memory_depth {
        return arg("training frame is shorter than the memory depth");
    }
    let p0 = zf_pinv(h)?;
    let g0 = cfg.resolve_gain(bank, &precode(&p0, s)?)?;
    let level = (0..s.num_rows()).map(|k| s.row_power(k)).sum::<f64>() / s.num_rows() as f64;
    if !(level > 0.0) {
        return arg("user streams have zero power");
    }
    let unit = Complex64::new(1.0 / level.sqrt(), 0.0);

    let mut dpds = (0..n_t)
        .map(|_| AdaptiveDpd::new(order, memory_depth, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut state = TrainingState {
        dpd: DpdBank::identity(n_t, order, memory_depth, g0)?,
        precoder: p0.clone(),
        initial_precoder: p0,
        iteration: 0,
        error_history: Vec::new(),
        converged: false,
        threshold_db: cfg.threshold_db,
        max_iterations: cfg.max_iterations,
    };
    let mut plms = PrecoderLms::with_normalization(&state.precoder, cfg.precoder_step_size, cfg.normalized)?;

    while state.iteration < cfg.max_iterations {
        let m = state.iteration + 1;
        let wrap = |e: Error| Error::Refinement { iteration: m, source: Box::new(e) };
        let mut fp = forward(h, bank, &state.dpd, &state.precoder, s).map_err(wrap)?;
        let err = aggregate(&per_user_nmse(&fp.r, s).map_err(wrap)?, cfg.error_aggregation);
        state.error_history.push(err);
        state.iteration = m;
        if err < cfg.threshold_db {
            state.converged = true;
            break;
        }

        let obs = match cfg.feedback_tap {
            FeedbackTap::PerAntenna => fp.z.scaled(Complex64::new(1.0 / g0, 0.0)),
            FeedbackTap::ThroughPrecoder => mat_frame(state.precoder.matrix(), &fp.r).map_err(wrap)?,
        };
        let range = update_range(m - 1, s.len(), cfg.update_window);
        adapt_all(&mut dpds, &obs, &fp.y, range.clone()).map_err(|(_, e)| wrap(e))?;
        state.dpd = dpd_bank_from(&dpds, g0).map_err(wrap)?;

        if cfg.refresh_between_updates {
            fp = forward(h, bank, &state.dpd, &state.precoder, s).map_err(wrap)?;
        }
        let r_unit = window(&fp.r.scaled(unit), &range);
        let x_unit = window(&fp.x.scaled(unit), &range);
        plms = precoder_lms_step(&plms, &r_unit, &x_unit).map_err(wrap)?;
        state.precoder = plms.precoder().map_err(wrap)?;
    }
    Ok(state)
}

fn window(f: &SignalFrame, range: &std::ops::Range<usize>) -> SignalFrame {
    if range.start == 0 && range.end == f.len() {
        return f.clone();
    }
    let rows = f.rows().iter().map(|r| r[range.clone()].to_vec()).collect();
    SignalFrame::new(rows, f.sample_rate_hz()).expect("window of a valid frame")
}

/// A linearization scheme under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    NoDpd,
    Conventional { order: usize },
    Proposed { order: usize },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::NoDpd => "no_dpd",
            Scheme::Conventional { .. } => "conventional",
            Scheme::Proposed { .. } => "proposed",
        }
    }

    pub fn order(&self) -> Option<usize> {
        match *self {
            Scheme::NoDpd => None,
            Scheme::Conventional { order } | Scheme::Proposed { order } => Some(order),
        }
    }

    /// `no_dpd`, `conventional_9`, `proposed_3`.
    pub fn label(&self) -> String {
        match self.order() {
            None => self.name().to_string(),
            Some(k) => format!("{}_{k}", self.name()),
        }
    }

    pub fn parse(name: &str, order: Option<usize>) -> Result<Self> {
        let need = |o: Option<usize>| {
            o.filter(|&k| k >= 1)
                .ok_or_else(|| Error::Config(format!("scheme {name} needs an order K >= 1")))
        };
        match name {
            "no_dpd" => Ok(Scheme::NoDpd),
            "conventional" => Ok(Scheme::Conventional { order: need(order)? }),
            "proposed" => Ok(Scheme::Proposed { order: need(order)? }),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?}; expected no_dpd, conventional or proposed"
            ))),
        }
    }
}

/// Everything needed to train and evaluate one scheme.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub channel: ChannelMatrix,
    pub bank: PaBank,
    pub waveform: WaveformConfig,
    pub memory_depth: usize,
    pub train: TrainConfig,
    pub training_seed: u64,
    pub evaluation_seed: u64,
    /// Peak precoded amplitude as a fraction of the PA saturation input.
    pub drive_peak_fraction: f64,
    /// Receiver noise power per user during evaluation.
    pub noise_power: f64,
    pub psd_segment_length: usize,
    pub psd_overlap: f64,
    pub inband: Band,
    pub adjacent: Band,
    /// Antenna whose PA output is used for the spectrum; defaults to the one
    /// with the largest zero-forcing weight norm.
    pub oob_antenna: Option<usize>,
}

/// Results for one scheme on the evaluation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetrics {
    pub scheme: Scheme,
    pub memory_depth: usize,
    /// PA output vs precoded drive, gain aligned.
    pub antenna_nmse_db: Vec<f64>,
    /// Received signal vs user stream, gain aligned.
    pub user_nmse_db: Vec<f64>,
    pub oob_ratio_db: f64,
    pub oob_antenna: usize,
    pub psd: PsdEstimate,
    pub flops: Option<FlopReport>,
    pub iterations: usize,
    pub converged: Option<bool>,
    pub error_history: Vec<f64>,
    /// `||H P - I||_F` of the precoder in use.
    pub zf_residual: f64,
    /// `||P - P0||_F / ||P0||_F`.
    pub precoder_change: f64,
}

impl ScenarioMetrics {
    /// Worst-user NMSE, the headline fidelity figure.
    pub fn nmse_db(&self) -> f64 {
        self.user_nmse_db.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_antenna_nmse_db(&self) -> f64 {
        self.antenna_nmse_db.iter().sum::<f64>() / self.antenna_nmse_db.len() as f64
    }

    pub fn flop_count(&self) -> u64 {
        self.flops.map_or(0, |f| f.flops)
    }
}

/// Multiplier that puts the largest precoded sample at `fraction` of the
/// mean PA saturation input.
pub fn drive_scale(p0: &PrecodingMatrix, s: &SignalFrame, bank: &PaBank, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction.is_finite()) {
        return arg(format!("drive fraction must be positive, got {fraction}"));
    }
    let peak = precode(p0, s)?.max_abs();
    if !(peak > 0.0) {
        return arg("precoded training frame is all zero");
    }
    let sat = bank.models().iter().map(|m| m.saleh.saturation_input()).sum::<f64>()
        / bank.num_antennas() as f64;
    Ok(fraction * sat / peak)
}

/// Trains `scheme` on the training frame and measures it on a fresh
/// evaluation frame.
pub fn evaluate(exp: &Experiment, scheme: Scheme) -> Result<ScenarioMetrics> {
    if exp.training_seed == exp.evaluation_seed {
        return Err(Error::Config(
            "training and evaluation seeds must differ".into(),
        ));
    }
    exp.train.validate()?;
    let n_t = exp.bank.num_antennas();
    let m_r = exp.channel.num_users();
    if exp.channel.num_antennas() != n_t {
        return Err(Error::Config(format!(
            "channel has {} antennas, PA bank has {n_t}",
            exp.channel.num_antennas()
        )));
    }
    let wave = |seed| gen_multicarrier(&WaveformConfig { seed, ..exp.waveform.clone() }, m_r);
    let s_train = wave(exp.training_seed)?;
    let s_eval = wave(exp.evaluation_seed)?;
    let p0 = zf_pinv(&exp.channel)?;
    let d = Complex64::new(drive_scale(&p0, &s_train, &exp.bank, exp.drive_peak_fraction)?, 0.0);
    let s_train = s_train.scaled(d);
    let s_eval = s_eval.scaled(d);
    let q = exp.memory_depth;

    let (dpd, precoder, iterations, converged, history) = match scheme {
        Scheme::NoDpd => (None, p0.clone(), 0, None, vec![]),
        Scheme::Conventional { order } => {
            let x = precode(&p0, &s_train)?;
            let (g, used) = train_conventional(&exp.bank, order, q, &x, &exp.train)?;
            (Some(g), p0.clone(), used, None, vec![])
        }
        Scheme::Proposed { order } => {
            let st = successive_refinement(&exp.channel, &exp.bank, &s_train, order, q, &exp.train)?;
            (Some(st.dpd), st.precoder, st.iteration, Some(st.converged), st.error_history)
        }
    };

    let x = precode(&precoder, &s_eval)?;
    let y = match &dpd {
        Some(g) => dpd_apply(g, &x)?,
        None => x.clone(),
    };
    let z = bank_forward(&y, &exp.bank)?;
    let r = apply_channel(&exp.channel, &z, exp.noise_power, exp.evaluation_seed)?;
    if !(z.is_finite() && r.is_finite()) {
        return Err(Error::Domain(format!("{} produced non-finite output", scheme.label())));
    }

    let antenna_nmse_db = (0..n_t).map(|i| nmse_db(z.row(i), x.row(i))).collect::<Result<_>>()?;
    let user_nmse_db = per_user_nmse(&r, &s_eval)?;
    let oob_antenna = match exp.oob_antenna {
        Some(a) if a < n_t => a,
        Some(a) => return Err(Error::Config(format!("oob_antenna {a} out of range"))),
        None => strongest_row(&p0),
    };
    let psd = psd_welch(
        z.row(oob_antenna),
        z.sample_rate_hz(),
        exp.psd_segment_length,
        exp.psd_overlap,
        exp.waveform.occupied_bandwidth_hz,
    )?;
    let oob = oob_ratio_db(&psd, exp.inband, exp.adjacent)?;
    let flops = scheme.order().map(|k| flops(k, q, n_t)).transpose()?;
    let p0m = p0.matrix();

    Ok(ScenarioMetrics {
        scheme,
        memory_depth: q,
        antenna_nmse_db,
        user_nmse_db,
        oob_ratio_db: oob,
        oob_antenna,
        psd,
        flops,
        iterations,
        converged,
        error_history: history,
        zf_residual: precoder.zf_residual(&exp.channel),
        precoder_change: (precoder.matrix() - p0m).norm() / p0m.norm(),
    })
}

fn strongest_row(p: &PrecodingMatrix) -> usize {
    let m = p.matrix();
    (0..m.nrows())
        .map(|i| (i, m.row(i).norm()))
        .fold((0, f64::NEG_INFINITY), |best, (i, n)| if n > best.1 { (i, n) } else { best })
        .0
}

/// `%g` rendering used in summaries.
pub fn fmt_ratio(v: f64) -> String {
    fmt_general(v, 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pa::{CrosstalkPlacement, PaBankConfig, PaModel, SalehParams};
    use crate::precoding::gen_channel;
    use crate::signals::Constellation;

    fn linear_bank(n: usize, crosstalk_db: f64) -> PaBank {
        let lin = SalehParams { alpha_a: 1.0, beta_a: 1e-300, alpha_phi: 0.0, beta_phi: 1.0 };
        PaBank::from_models(vec![PaModel::memoryless(lin); n], crosstalk_db, CrosstalkPlacement::PrePa)
            .unwrap()
    }

    fn saleh_bank(n: usize, crosstalk_db: f64, taps: Vec<[f64; 2]>) -> PaBank {
        let cfg = PaBankConfig { crosstalk_db, memory_taps: taps, jitter_fraction: 0.0, ..Default::default() };
        PaBank::new(&cfg, n).unwrap()
    }

    fn frame(rows: usize, seed: u64, symbols: usize) -> SignalFrame {
        let cfg = WaveformConfig {
            num_symbols: symbols,
            seed,
            constellation: Constellation::Qam16,
            ..Default::default()
        };
        gen_multicarrier(&cfg, rows).unwrap()
    }

    fn mean_nmse(a: &SignalFrame, b: &SignalFrame) -> f64 {
        (0..a.num_rows()).map(|i| nmse_db(a.row(i), b.row(i)).unwrap()).sum::<f64>()
            / a.num_rows() as f64
    }

    #[test]
    fn dpd_apply_examples() {
        let x = frame(3, 1, 64);
        let id = DpdBank::identity(3, 5, 2, 1.0).unwrap();
        assert_eq!(dpd_apply(&id, &x).unwrap(), x);
        let zero = SignalFrame::zeros(3, 32, 1.0);
        assert_eq!(dpd_apply(&id, &zero).unwrap(), zero);
        assert!(dpd_apply(&id, &frame(2, 1, 64)).is_err());
    }

    #[test]
    fn bank_rejects_mixed_shapes() {
        let a = MemoryPolynomial::identity(3, 1).unwrap();
        let b = MemoryPolynomial::identity(3, 2).unwrap();
        assert!(DpdBank::new(vec![a.clone(), b], 1.0).is_err());
        assert!(DpdBank::new(vec![a], 0.0).is_err());
        assert!(DpdBank::new(vec![], 1.0).is_err());
    }

    #[test]
    fn conventional_on_linear_bank_learns_identity() {
        let bank = linear_bank(2, f64::NEG_INFINITY);
        let x = frame(2, 3, 256).scaled(Complex64::new(0.3, 0.0));
        let (g, _) = train_conventional(&bank, 3, 1, &x, &TrainConfig::default()).unwrap();
        let id = MemoryPolynomial::identity(3, 1).unwrap();
        for p in g.predistorters() {
            for (a, b) in p.coeffs().iter().zip(id.coeffs()) {
                assert!((a - b).norm() < 1e-6);
            }
        }
        let y = dpd_apply(&g, &x).unwrap();
        for (a, b) in y.rows().iter().flatten().zip(x.rows().iter().flatten()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn conventional_single_pa_improves_fidelity() {
        let bank = saleh_bank(1, f64::NEG_INFINITY, vec![[1.0, 0.0], [0.2, 0.0], [0.1, 0.0]]);
        let s = frame(1, 4, 2048);
        let x = s.scaled(Complex64::new(0.3 / 2.2f64.sqrt() / s.max_abs(), 0.0));
        let cfg = TrainConfig::default();
        let before = mean_nmse(&bank_forward(&x, &bank).unwrap(), &x);
        let (g, _) = train_conventional(&bank, 9, 5, &x, &cfg).unwrap();
        let after = mean_nmse(&bank_forward(&dpd_apply(&g, &x).unwrap(), &bank).unwrap(), &x);
        assert!(after < before - 15.0, "before {before:.2} after {after:.2}");
    }

    #[test]
    fn crosstalk_hurts_conventional() {
        let s = frame(2, 5, 1024);
        let x = s.scaled(Complex64::new(0.3 / 2.2f64.sqrt() / s.max_abs(), 0.0));
        let cfg = TrainConfig::default();
        let run = |db: f64| {
            let bank = saleh_bank(2, db, vec![[1.0, 0.0]]);
            let (g, _) = train_conventional(&bank, 5, 1, &x, &cfg).unwrap();
            mean_nmse(&bank_forward(&dpd_apply(&g, &x).unwrap(), &bank).unwrap(), &x)
        };
        let (coupled, clean) = (run(-20.0), run(f64::NEG_INFINITY));
        assert!(coupled > clean, "coupled {coupled:.2} clean {clean:.2}");
    }

    #[test]
    fn refinement_on_linear_chain_stops_immediately() {
        let h = gen_channel(2, 6, 1).unwrap();
        let bank = linear_bank(6, f64::NEG_INFINITY);
        let s = frame(2, 6, 128).scaled(Complex64::new(0.1, 0.0));
        let st = successive_refinement(&h, &bank, &s, 3, 1, &TrainConfig::default()).unwrap();
        assert!(st.converged);
        assert_eq!(st.iteration, 1);
        assert_eq!(st.error_history.len(), 1);
        assert!(st.error_history[0] < -200.0);
        assert_eq!(st.precoder, st.initial_precoder);
        assert_eq!(st.dpd, DpdBank::identity(6, 3, 1, 1.0).unwrap());
    }

    #[test]
    fn refinement_reports_non_convergence() {
        let h = gen_channel(2, 6, 2).unwrap();
        let bank = saleh_bank(6, -20.0, vec![[1.0, 0.0]]);
        let s = frame(2, 7, 128);
        let s = s.scaled(Complex64::new(0.05, 0.0));
        let cfg = TrainConfig { threshold_db: -250.0, max_iterations: 3, ..Default::default() };
        let st = successive_refinement(&h, &bank, &s, 3, 1, &cfg).unwrap();
        assert!(!st.converged);
        assert_eq!(st.iteration, 3);
        assert_eq!(st.error_history.len(), 3);
    }

    #[test]
    fn refinement_beats_zf_with_crosstalk() {
        let h = gen_channel(2, 8, 3).unwrap();
        let bank = saleh_bank(8, -20.0, vec![[1.0, 0.0]]);
        let s = frame(2, 8, 1024);
        let p0 = zf_pinv(&h).unwrap();
        let d = drive_scale(&p0, &s, &bank, 0.3).unwrap();
        let s = s.scaled(Complex64::new(d, 0.0));
        let cfg = TrainConfig { threshold_db: -300.0, max_iterations: 15, ..Default::default() };
        let st = successive_refinement(&h, &bank, &s, 3, 0, &cfg).unwrap();
        let first = st.error_history[0];
        let last = *st.error_history.last().unwrap();
        assert!(last < first - 10.0, "{:?}", st.error_history);
        assert!(st.precoder_change() > 0.0);
    }

    #[test]
    fn scheme_labels() {
        assert_eq!(Scheme::parse("no_dpd", None).unwrap().label(), "no_dpd");
        assert_eq!(Scheme::parse("proposed", Some(3)).unwrap().label(), "proposed_3");
        assert!(Scheme::parse("proposed", None).is_err());
        assert!(Scheme::parse("other", Some(3)).is_err());
    }

    fn tiny_experiment() -> Experiment {
        Experiment {
            channel: gen_channel(2, 6, 11).unwrap(),
            bank: saleh_bank(6, -20.0, vec![[1.0, 0.0], [0.2, 0.0]]),
            waveform: WaveformConfig { num_symbols: 512, ..Default::default() },
            memory_depth: 1,
            train: TrainConfig { max_iterations: 5, conventional_iterations: 3, ..Default::default() },
            training_seed: 1,
            evaluation_seed: 2,
            drive_peak_fraction: 0.3,
            noise_power: 0.0,
            psd_segment_length: 256,
            psd_overlap: 0.5,
            inband: Band { lo_hz: -4.5e6, hi_hz: 4.5e6 },
            adjacent: Band { lo_hz: 6e6, hi_hz: 15e6 },
            oob_antenna: None,
        }
    }

    #[test]
    fn evaluate_rejects_shared_seed() {
        let exp = Experiment { evaluation_seed: 1, ..tiny_experiment() };
        assert!(matches!(evaluate(&exp, Scheme::NoDpd), Err(Error::Config(_))));
    }

    #[test]
    fn evaluate_is_deterministic_and_reports_flops() {
        let exp = tiny_experiment();
        let a = evaluate(&exp, Scheme::Proposed { order: 3 }).unwrap();
        let b = evaluate(&exp, Scheme::Proposed { order: 3 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.flop_count(), flops(3, 1, 6).unwrap().flops);
        let none = evaluate(&exp, Scheme::NoDpd).unwrap();
        assert_eq!(none.flop_count(), 0);
        assert_eq!(none.precoder_change, 0.0);
        assert!(none.zf_residual < 1e-10);
    }
}
