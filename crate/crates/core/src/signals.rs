//! Waveforms, complex-baseband frames and quality metrics.
//!
//! The test waveform is an oversampled multicarrier signal synthesized with a
//! single inverse FFT over the whole frame, so every row is exactly band
//! limited (circularly) and any out-of-band power measured downstream comes
//! from the nonlinear chain, not from symbol-boundary splatter.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::format::{fmt_exp, parse_f64};

/// Lower clamp applied to every dB metric.
pub const DB_FLOOR: f64 = -300.0;
/// Upper clamp, reached only by NMSE against an orthogonal reference.
pub const DB_CEIL: f64 = 300.0;

pub(crate) fn clamp_db(v: f64) -> f64 {
    if v.is_nan() {
        DB_CEIL
    } else {
        v.clamp(DB_FLOOR, DB_CEIL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Constellation {
    fn levels(self) -> u32 {
        match self {
            Constellation::Qpsk => 2,
            Constellation::Qam16 => 4,
            Constellation::Qam64 => 8,
        }
    }

    /// Draws one symbol on the odd-integer grid (unnormalized).
    fn draw<R: Rng>(self, rng: &mut R) -> Complex64 {
        let m = self.levels();
        let level = |v: u32| (2 * v) as f64 - (m as f64 - 1.0);
        Complex64::new(level(rng.random_range(0..m)), level(rng.random_range(0..m)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub sample_rate_hz: f64,
    pub occupied_bandwidth_hz: f64,
    pub oversampling_factor: usize,
    /// Frame length is `num_symbols * oversampling_factor` samples.
    pub num_symbols: usize,
    pub constellation: Constellation,
    pub seed: u64,
    /// RF carrier. Recorded for reports only; all processing is baseband.
    pub carrier_hz: f64,
}

fn default_carrier() -> f64 {
    3.5e9
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 40e6,
            occupied_bandwidth_hz: 10e6,
            oversampling_factor: 4,
            num_symbols: 4096,
            constellation: Constellation::Qam16,
            seed: 42,
            carrier_hz: default_carrier(),
        }
    }
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad(format!("sample_rate_hz must be positive, got {}", self.sample_rate_hz));
        }
        if !(self.occupied_bandwidth_hz > 0.0 && self.occupied_bandwidth_hz.is_finite()) {
            return bad(format!(
                "occupied_bandwidth_hz must be positive, got {}",
                self.occupied_bandwidth_hz
            ));
        }
        if self.oversampling_factor < 2 {
            return bad(format!(
                "oversampling_factor must be at least 2, got {}",
                self.oversampling_factor
            ));
        }
        if self.occupied_bandwidth_hz * self.oversampling_factor as f64 > self.sample_rate_hz {
            return bad(format!(
                "occupied_bandwidth_hz * oversampling_factor ({} * {}) exceeds sample_rate_hz ({})",
                self.occupied_bandwidth_hz, self.oversampling_factor, self.sample_rate_hz
            ));
        }
        if self.num_symbols < 8 {
            return bad(format!("num_symbols must be at least 8, got {}", self.num_symbols));
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        self.num_symbols * self.oversampling_factor
    }
}

/// Complex baseband samples, one row per logical path.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalFrame {
    rows: Vec<Vec<Complex64>>,
    sample_rate_hz: f64,
}

impl SignalFrame {
    pub fn new(rows: Vec<Vec<Complex64>>, sample_rate_hz: f64) -> Result<Self> {
        if let Some(first) = rows.first() {
            let n = first.len();
            if let Some(i) = rows.iter().position(|r| r.len() != n) {
                return arg(format!("row {i} has {} samples, expected {n}", rows[i].len()));
            }
        }
        Ok(Self { rows, sample_rate_hz })
    }

    pub fn zeros(num_rows: usize, len: usize, sample_rate_hz: f64) -> Self {
        Self { rows: vec![vec![Complex64::new(0.0, 0.0); len]; num_rows], sample_rate_hz }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Samples per row.
    pub fn len(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<Complex64>] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Vec<Complex64>> {
        self.rows
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let rows = self.rows.iter().map(|r| r.iter().map(|&v| v * c).collect()).collect();
        Self { rows, sample_rate_hz: self.sample_rate_hz }
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn row_power(&self, i: usize) -> f64 {
        mean_power(&self.rows[i])
    }
}

pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Per-user multicarrier waveform with unit mean power per row.
///
/// Each row carries independent random symbols on the FFT bins inside the
/// occupied band (symmetric about DC) and zeros elsewhere.
pub fn gen_multicarrier(cfg: &WaveformConfig, num_users: usize) -> Result<SignalFrame> {
    cfg.validate()?;
    if num_users == 0 {
        return arg("num_users must be at least 1");
    }
    let n = cfg.frame_len();
    let active = ((n as f64) * cfg.occupied_bandwidth_hz / cfg.sample_rate_hz).floor() as usize;
    let half = active.saturating_sub(1) / 2;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut rows = Vec::with_capacity(num_users);
    for _ in 0..num_users {
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        for k in -(half as isize)..=(half as isize) {
            spec[k.rem_euclid(n as isize) as usize] = cfg.constellation.draw(&mut rng);
        }
        ifft.process(&mut spec);
        let scale = 1.0 / mean_power(&spec).sqrt();
        spec.iter_mut().for_each(|v| *v *= scale);
        rows.push(spec);
    }
    SignalFrame::new(rows, cfg.sample_rate_hz)
}

/// Peak-to-average power ratio in dB.
pub fn papr_db(x: &[Complex64]) -> f64 {
    let peak = x.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    10.0 * (peak / mean_power(x)).log10()
}

/// Least-squares complex gain `a` minimizing `|test - a * reference|`.
pub fn align_gain(test: &[Complex64], reference: &[Complex64]) -> Complex64 {
    let num: Complex64 = reference.iter().zip(test).map(|(r, t)| r.conj() * t).sum();
    let den: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    num / den
}

/// Gain-aligned NMSE of `test` against `reference`, in dB.
///
/// The reference is first scaled by the least-squares complex gain, so any
/// pure linear gain between the two signals is not counted as error. Results
/// are clamped to `[-300, 300]` dB.
pub fn nmse_db(test: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if test.len() != reference.len() {
        return arg(format!(
            "length mismatch: test has {} samples, reference {}",
            test.len(),
            reference.len()
        ));
    }
    if test.is_empty() {
        return arg("nmse_db needs at least one sample");
    }
    let ref_energy: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
    if ref_energy == 0.0 {
        return Err(Error::Domain("reference signal has zero energy".into()));
    }
    let a = align_gain(test, reference);
    let err: f64 = test.iter().zip(reference).map(|(t, r)| (t - a * r).norm_sqr()).sum();
    let sig = a.norm_sqr() * ref_energy;
    Ok(clamp_db(10.0 * (err / sig).log10()))
}

/// Two-sided power spectral density, normalized to the occupied band.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    pub freqs_hz: Vec<f64>,
    /// dB relative to the mean density over the occupied band.
    pub power_db: Vec<f64>,
    pub segment_length: usize,
    pub overlap_fraction: f64,
    /// Absolute density (power per Hz) that `power_db` is referenced to.
    pub inband_density: f64,
    pub bin_width_hz: f64,
}

impl PsdEstimate {
    /// Total power implied by the estimate (Parseval).
    pub fn total_power(&self) -> f64 {
        self.power_db
            .iter()
            .map(|p| self.inband_density * 10f64.powf(p / 10.0) * self.bin_width_hz)
            .sum()
    }

    /// CSV with header `freq_hz,power_db`, values in `%.6e`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,power_db\n");
        for (f, p) in self.freqs_hz.iter().zip(&self.power_db) {
            out.push_str(&fmt_exp(*f, 6));
            out.push(',');
            out.push_str(&fmt_exp(*p, 6));
            out.push('\n');
        }
        out
    }

    /// Reads back the `(freq_hz, power_db)` pairs of [`PsdEstimate::to_csv`].
    pub fn parse_csv(text: &str) -> Result<Vec<(f64, f64)>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("freq_hz,power_db") {
            return Err(Error::Parse("missing freq_hz,power_db header".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (f, p) = l
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("bad PSD row {l:?}")))?;
                Ok((parse_f64(f)?, parse_f64(p)?))
            })
            .collect()
    }
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic (DFT-even) Hann.
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch averaged periodogram with a Hann window.
///
/// Returns bins symmetric about 0 Hz (for even segment lengths the Nyquist
/// bin is dropped). `power_db` is normalized so that the mean linear density
/// over `|f| <= occupied_bandwidth_hz / 2` is exactly 0 dB.
pub fn psd_welch(
    x: &[Complex64],
    sample_rate_hz: f64,
    segment_length: usize,
    overlap_fraction: f64,
    occupied_bandwidth_hz: f64,
) -> Result<PsdEstimate> {
    if segment_length < 8 {
        return arg(format!("segment_length must be at least 8, got {segment_length}"));
    }
    if x.len() < segment_length {
        return arg(format!(
            "input has {} samples, shorter than segment_length {segment_length}",
            x.len()
        ));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return arg(format!("overlap_fraction must lie in [0, 1), got {overlap_fraction}"));
    }
    if !(sample_rate_hz > 0.0) || !(occupied_bandwidth_hz > 0.0) {
        return arg("sample rate and occupied bandwidth must be positive");
    }

    let l = segment_length;
    let window = hann(l);
    let win_energy: f64 = window.iter().map(|w| w * w).sum();
    let step = ((l as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);

    let mut acc = vec![0.0; l];
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    let mut count = 0usize;
    let mut start = 0;
    while start + l <= x.len() {
        for (b, (v, w)) in buf.iter_mut().zip(x[start..start + l].iter().zip(&window)) {
            *b = v * w;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }

    let df = sample_rate_hz / l as f64;
    let norm = 1.0 / (count as f64 * sample_rate_hz * win_energy);
    // Shifted order: bins -(l-1)/2 ..= (l-1)/2 for odd l, -(l/2-1) ..= l/2-1 for even.
    let half = (l as isize - 1) / 2;
    let mut freqs = Vec::with_capacity(2 * half as usize + 1);
    let mut density = Vec::with_capacity(freqs.capacity());
    for k in -half..=half {
        freqs.push(k as f64 * df);
        density.push(acc[k.rem_euclid(l as isize) as usize] * norm);
    }

    let edge = occupied_bandwidth_hz / 2.0;
    let (sum, n) = freqs
        .iter()
        .zip(&density)
        .filter(|(f, _)| f.abs() <= edge)
        .fold((0.0, 0usize), |(s, n), (_, d)| (s + d, n + 1));
    if n == 0 {
        return arg("occupied band contains no PSD bins");
    }
    let inband = sum / n as f64;
    let power_db = if inband > 0.0 {
        density.iter().map(|d| clamp_db(10.0 * (d / inband).log10())).collect()
    } else {
        // Silent in-band: report everything at the floor.
        vec![DB_FLOOR; density.len()]
    };

    Ok(PsdEstimate {
        freqs_hz: freqs,
        power_db,
        segment_length,
        overlap_fraction,
        inband_density: inband,
        bin_width_hz: df,
    })
}

/// Closed frequency interval in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub const fn new(lo_hz: f64, hi_hz: f64) -> Self {
        Self { lo_hz, hi_hz }
    }

    fn contains(&self, f: f64) -> bool {
        f >= self.lo_hz && f <= self.hi_hz
    }

    fn overlaps(&self, other: &Band) -> bool {
        self.lo_hz < other.hi_hz && other.lo_hz < self.hi_hz
    }
}

/// Mean linear density in `adjacent` over the mean in `inband`, in dB.
pub fn oob_ratio_db(psd: &PsdEstimate, inband: Band, adjacent: Band) -> Result<f64> {
    let (fmin, fmax) = match (psd.freqs_hz.first(), psd.freqs_hz.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return arg("empty PSD"),
    };
    let tol = psd.bin_width_hz;
    for (name, b) in [("in-band", inband), ("adjacent", adjacent)] {
        if !(b.lo_hz < b.hi_hz) {
            return arg(format!("{name} interval [{}, {}] is empty", b.lo_hz, b.hi_hz));
        }
        if b.lo_hz < fmin - tol || b.hi_hz > fmax + tol {
            return arg(format!(
                "{name} interval [{}, {}] exceeds PSD range [{fmin}, {fmax}]",
                b.lo_hz, b.hi_hz
            ));
        }
    }
    if inband.overlaps(&adjacent) {
        return arg("in-band and adjacent intervals overlap");
    }
    let mean_lin = |b: Band| -> Result<f64> {
        let (s, n) = psd
            .freqs_hz
            .iter()
            .zip(&psd.power_db)
            .filter(|(f, _)| b.contains(**f))
            .fold((0.0, 0usize), |(s, n), (_, p)| (s + 10f64.powf(p / 10.0), n + 1));
        if n == 0 {
            return arg(format!("interval [{}, {}] selects no PSD bins", b.lo_hz, b.hi_hz));
        }
        Ok(s / n as f64)
    };
    let ratio = mean_lin(adjacent)? / mean_lin(inband)?;
    Ok(if ratio > 0.0 { clamp_db(10.0 * ratio.log10()) } else { DB_FLOOR })
}
