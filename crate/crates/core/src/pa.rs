//! Behavioral models of the transmit chain.
//!
//! Each antenna has a Saleh AM/AM + AM/PM static nonlinearity combined with a
//! short FIR memory. The bank adds linear coupling between adjacent RF paths.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::signals::SignalFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalehParams {
    pub alpha_a: f64,
    pub beta_a: f64,
    pub alpha_phi: f64,
    pub beta_phi: f64,
}

impl Default for SalehParams {
    fn default() -> Self {
        Self { alpha_a: 2.0, beta_a: 2.2, alpha_phi: 2.0, beta_phi: 1.0 }
    }
}

impl SalehParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_a, self.beta_a, self.alpha_phi, self.beta_phi];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("Saleh parameters must be finite".into()));
        }
        if self.beta_a <= 0.0 || self.beta_phi <= 0.0 {
            return Err(Error::Config(format!(
                "beta_a and beta_phi must be positive, got {} and {}",
                self.beta_a, self.beta_phi
            )));
        }
        Ok(())
    }

    /// Input amplitude at which the AM/AM curve peaks, `1/sqrt(beta_a)`.
    pub fn saturation_input(&self) -> f64 {
        1.0 / self.beta_a.sqrt()
    }

    /// Maximum output amplitude, `alpha_a / (2 sqrt(beta_a))`.
    pub fn saturation_output(&self) -> f64 {
        self.alpha_a / (2.0 * self.beta_a.sqrt())
    }

    /// Small-signal gain.
    pub fn linear_gain(&self) -> f64 {
        self.alpha_a
    }

    #[inline]
    fn amam(&self, r: f64) -> f64 {
        self.alpha_a * r / (1.0 + self.beta_a * r * r)
    }

    #[inline]
    fn ampm(&self, r: f64) -> f64 {
        let r2 = r * r;
        self.alpha_phi * r2 / (1.0 + self.beta_phi * r2)
    }

    /// Static nonlinearity on one complex sample.
    #[inline]
    pub fn apply(&self, x: Complex64) -> Complex64 {
        let r = x.norm();
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        // Output phase is arg(x) + ampm(r); rotate x/r instead of calling atan2.
        let gain = self.amam(r) / r;
        x * Complex64::from_polar(gain, self.ampm(r))
    }
}

/// `A(r) = alpha_a r / (1 + beta_a r^2)`.
pub fn saleh_amam(r: f64, p: &SalehParams) -> Result<f64> {
    if !(r >= 0.0) {
        return arg(format!("amplitude must be nonnegative, got {r}"));
    }
    Ok(p.amam(r))
}

/// `Phi(r) = alpha_phi r^2 / (1 + beta_phi r^2)`, in radians.
pub fn saleh_ampm(r: f64, p: &SalehParams) -> Result<f64> {
    if !(r >= 0.0) {
        return arg(format!("amplitude must be nonnegative, got {r}"));
    }
    Ok(p.ampm(r))
}

/// Where the FIR memory sits relative to the static nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPlacement {
    /// Saleh then FIR (Hammerstein).
    #[default]
    AfterNonlinearity,
    /// FIR then Saleh (Wiener).
    BeforeNonlinearity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaModel {
    pub saleh: SalehParams,
    memory_taps: Vec<Complex64>,
    pub placement: MemoryPlacement,
}

impl PaModel {
    /// Builds a model, scaling `memory_taps` to unit DC gain so a slowly
    /// varying small input passes with the Saleh small-signal gain only.
    pub fn new(
        saleh: SalehParams,
        memory_taps: &[Complex64],
        placement: MemoryPlacement,
    ) -> Result<Self> {
        saleh.validate()?;
        if memory_taps.is_empty() {
            return Err(Error::Config("memory_taps must not be empty".into()));
        }
        if memory_taps.iter().any(|t| !(t.re.is_finite() && t.im.is_finite())) {
            return Err(Error::Config("memory_taps must be finite".into()));
        }
        let dc: Complex64 = memory_taps.iter().sum();
        if dc.norm() < 1e-12 {
            return Err(Error::Config("memory_taps have zero DC gain".into()));
        }
        let memory_taps = memory_taps.iter().map(|t| t / dc).collect();
        Ok(Self { saleh, memory_taps, placement })
    }

    pub fn memoryless(saleh: SalehParams) -> Self {
        Self {
            saleh,
            memory_taps: vec![Complex64::new(1.0, 0.0)],
            placement: MemoryPlacement::AfterNonlinearity,
        }
    }

    pub fn memory_taps(&self) -> &[Complex64] {
        &self.memory_taps
    }
}

fn fir(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    if taps.len() == 1 {
        return x.iter().map(|v| v * taps[0]).collect();
    }
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(q, t)| t * x[n - q])
                .sum()
        })
        .collect()
}

/// One PA: Saleh static nonlinearity and FIR memory, zero initial state,
/// output truncated to the input length.
pub fn pa_apply(x: &[Complex64], pa: &PaModel) -> Result<Vec<Complex64>> {
    if x.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return arg("PA input contains non-finite samples");
    }
    Ok(match pa.placement {
        MemoryPlacement::AfterNonlinearity => {
            let z: Vec<_> = x.iter().map(|&v| pa.saleh.apply(v)).collect();
            fir(&z, &pa.memory_taps)
        }
        MemoryPlacement::BeforeNonlinearity => {
            fir(x, &pa.memory_taps).into_iter().map(|v| pa.saleh.apply(v)).collect()
        }
    })
}

/// Whether adjacent-path coupling acts on the PA inputs or outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrosstalkPlacement {
    #[default]
    PrePa,
    PostPa,
}

/// Serializable description of a [`PaBank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaBankConfig {
    #[serde(default)]
    pub saleh: SalehParams,
    /// `[re, im]` pairs, normalized to unit DC gain on construction.
    #[serde(default = "default_taps")]
    pub memory_taps: Vec<[f64; 2]>,
    #[serde(default)]
    pub memory_placement: MemoryPlacement,
    /// Coupling to each neighbor in dB; `-inf` disables it.
    #[serde(default = "default_crosstalk")]
    pub crosstalk_db: f64,
    #[serde(default)]
    pub crosstalk_placement: CrosstalkPlacement,
    /// Uniform relative perturbation of each Saleh parameter per antenna.
    #[serde(default = "default_jitter")]
    pub jitter_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_taps() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [0.2, 0.0], [0.1, 0.0]]
}

fn default_crosstalk() -> f64 {
    -20.0
}

fn default_jitter() -> f64 {
    0.05
}

impl Default for PaBankConfig {
    fn default() -> Self {
        Self {
            saleh: SalehParams::default(),
            memory_taps: default_taps(),
            memory_placement: MemoryPlacement::default(),
            crosstalk_db: default_crosstalk(),
            crosstalk_placement: CrosstalkPlacement::default(),
            jitter_fraction: default_jitter(),
            seed: 0,
        }
    }
}

impl PaBankConfig {
    pub fn validate(&self) -> Result<()> {
        self.saleh.validate()?;
        if self.crosstalk_db.is_nan() || self.crosstalk_db >= 0.0 {
            return Err(Error::Config(format!(
                "crosstalk_db must be negative or -inf, got {}",
                self.crosstalk_db
            )));
        }
        if !(0.0..=0.2).contains(&self.jitter_fraction) {
            return Err(Error::Config(format!(
                "jitter_fraction must lie in [0, 0.2], got {}",
                self.jitter_fraction
            )));
        }
        Ok(())
    }

    pub fn taps(&self) -> Vec<Complex64> {
        self.memory_taps.iter().map(|[re, im]| Complex64::new(*re, *im)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaBank {
    models: Vec<PaModel>,
    crosstalk_db: f64,
    coupling: f64,
    crosstalk_placement: CrosstalkPlacement,
}

impl PaBank {
    /// Builds `num_antennas` PAs, jittering the Saleh parameters per antenna
    /// from `cfg.seed`.
    pub fn new(cfg: &PaBankConfig, num_antennas: usize) -> Result<Self> {
        cfg.validate()?;
        if num_antennas == 0 {
            return arg("a PA bank needs at least one antenna");
        }
        let taps = cfg.taps();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let j = cfg.jitter_fraction;
        let models = (0..num_antennas)
            .map(|_| {
                let mut jitter = || 1.0 + j * rng.random_range(-1.0..=1.0);
                let s = cfg.saleh;
                let saleh = SalehParams {
                    alpha_a: s.alpha_a * jitter(),
                    beta_a: s.beta_a * jitter(),
                    alpha_phi: s.alpha_phi * jitter(),
                    beta_phi: s.beta_phi * jitter(),
                };
                PaModel::new(saleh, &taps, cfg.memory_placement)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models, cfg.crosstalk_db, cfg.crosstalk_placement)
    }

    pub fn from_models(
        models: Vec<PaModel>,
        crosstalk_db: f64,
        crosstalk_placement: CrosstalkPlacement,
    ) -> Result<Self> {
        if models.is_empty() {
            return arg("a PA bank needs at least one antenna");
        }
        if crosstalk_db.is_nan() || crosstalk_db >= 0.0 {
            return Err(Error::Config(format!(
                "crosstalk_db must be negative or -inf, got {crosstalk_db}"
            )));
        }
        let coupling = 10f64.powf(crosstalk_db / 20.0);
        Ok(Self { models, crosstalk_db, coupling, crosstalk_placement })
    }

    pub fn num_antennas(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[PaModel] {
        &self.models
    }

    pub fn crosstalk_db(&self) -> f64 {
        self.crosstalk_db
    }

    /// Linear coupling coefficient to each neighbor.
    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn crosstalk_placement(&self) -> CrosstalkPlacement {
        self.crosstalk_placement
    }

    /// Mean small-signal gain of the bank.
    pub fn linear_gain(&self) -> f64 {
        self.models.iter().map(|m| m.saleh.linear_gain()).sum::<f64>() / self.models.len() as f64
    }

    /// Tridiagonal coupling matrix: unit diagonal, `coupling` on the first
    /// super- and sub-diagonals. Edge antennas have one neighbor.
    pub fn crosstalk_matrix(&self) -> DMatrix<Complex64> {
        let n = self.models.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else if i.abs_diff(j) == 1 {
                Complex64::new(self.coupling, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }
}

/// Per-sample product of the coupling matrix with the antenna column.
pub fn crosstalk_apply(x: &SignalFrame, bank: &PaBank) -> Result<SignalFrame> {
    let n = bank.num_antennas();
    if x.num_rows() != n {
        return arg(format!("frame has {} rows, PA bank has {n} antennas", x.num_rows()));
    }
    let c = bank.coupling;
    if c == 0.0 {
        return Ok(x.clone());
    }
    let rows = x.rows();
    let out = (0..n)
        .map(|i| {
            let mut row = rows[i].clone();
            for nb in [i.checked_sub(1), (i + 1 < n).then_some(i + 1)].into_iter().flatten() {
                for (o, v) in row.iter_mut().zip(&rows[nb]) {
                    *o += c * v;
                }
            }
            row
        })
        .collect();
    SignalFrame::new(out, x.sample_rate_hz())
}

fn apply_rows(x: &SignalFrame, bank: &PaBank) -> Result<SignalFrame> {
    let rows = x
        .rows()
        .par_iter()
        .zip(bank.models.par_iter())
        .map(|(row, pa)| pa_apply(row, pa))
        .collect::<Result<Vec<_>>>()?;
    SignalFrame::new(rows, x.sample_rate_hz())
}

/// Full PA-bank map: coupling and per-antenna PAs in the configured order.
pub fn bank_forward(x: &SignalFrame, bank: &PaBank) -> Result<SignalFrame> {
    if x.num_rows() != bank.num_antennas() {
        return arg(format!(
            "frame has {} rows, PA bank has {} antennas",
            x.num_rows(),
            bank.num_antennas()
        ));
    }
    match bank.crosstalk_placement {
        CrosstalkPlacement::PrePa => apply_rows(&crosstalk_apply(x, bank)?, bank),
        CrosstalkPlacement::PostPa => crosstalk_apply(&apply_rows(x, bank)?, bank),
    }
}
