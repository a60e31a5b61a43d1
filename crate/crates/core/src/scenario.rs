//! Scenario files.
//!
//! A scenario is a TOML document with `schema_version = 1` and the sections
//! `[array]`, `[seeds]`, `[waveform]`, `[pa]`, `[experiment]`, `[psd]`,
//! `[training]` and `[output]`, plus a `schemes` array. Every section and
//! key is optional except `schema_version`; omitted values take the defaults
//! below, which describe the 100-antenna, 10-user reference scenario.
//!
//! The three seeds in `[seeds]` drive all randomness: `channel` draws the
//! channel and the per-antenna PA spread, `training` and `evaluation` draw
//! the two user-symbol frames.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{Experiment, Scheme, TrainConfig};
use crate::pa::{PaBank, PaBankConfig};
use crate::precoding::gen_channel;
use crate::signals::{Band, WaveformConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub num_antennas: usize,
    pub num_users: usize,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self { num_antennas: 100, num_users: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub channel: u64,
    pub training: u64,
    pub evaluation: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { channel: 7, training: 1, evaluation: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub memory_depth: usize,
    /// Peak precoded amplitude relative to the PA saturation input.
    pub drive_peak_fraction: f64,
    pub noise_power: f64,
    pub oob_antenna: Option<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { memory_depth: 5, drive_peak_fraction: 0.3, noise_power: 0.0, oob_antenna: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdSection {
    pub segment_length: usize,
    pub overlap: f64,
    /// `[lo, hi]` in Hz.
    pub inband_hz: [f64; 2],
    pub adjacent_hz: [f64; 2],
}

impl Default for PsdSection {
    fn default() -> Self {
        Self {
            segment_length: 4096,
            overlap: 0.5,
            inband_hz: [-4.5e6, 4.5e6],
            adjacent_hz: [6e6, 15e6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeEntry {
    pub kind: String,
    #[serde(default)]
    pub order: Option<usize>,
}

impl SchemeEntry {
    pub fn to_scheme(&self) -> Result<Scheme> {
        Scheme::parse(&self.kind, self.order)
    }

    pub fn from_scheme(s: Scheme) -> Self {
        Self { kind: s.name().into(), order: s.order() }
    }
}

fn default_schemes() -> Vec<SchemeEntry> {
    [
        Scheme::NoDpd,
        Scheme::Conventional { order: 3 },
        Scheme::Conventional { order: 9 },
        Scheme::Conventional { order: 11 },
        Scheme::Proposed { order: 3 },
    ]
    .into_iter()
    .map(SchemeEntry::from_scheme)
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub array: ArraySection,
    pub seeds: Seeds,
    pub waveform: WaveformConfig,
    pub pa: PaBankConfig,
    pub experiment: ExperimentSection,
    pub psd: PsdSection,
    pub training: TrainConfig,
    pub output: OutputSection,
    pub schemes: Vec<SchemeEntry>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let mut cfg = Self {
            schema_version: SCHEMA_VERSION,
            array: ArraySection::default(),
            seeds: Seeds::default(),
            waveform: WaveformConfig::default(),
            pa: PaBankConfig::default(),
            experiment: ExperimentSection::default(),
            psd: PsdSection::default(),
            training: TrainConfig::default(),
            output: OutputSection::default(),
            schemes: default_schemes(),
        };
        cfg.sync_seeds();
        cfg
    }
}

/// 1-based line of `key` inside `[section]` (or at top level when `section`
/// is empty), falling back to the section header.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        let in_section = current == section
            || (section.is_empty() && current.is_empty());
        if in_section && !key.is_empty() {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

struct Located<'a> {
    text: &'a str,
}

impl Located<'_> {
    fn fail<T>(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Result<T> {
        let place = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        Err(Error::Config(match locate(self.text, section, key) {
            Some(line) => format!("line {line}: {place}: {msg}"),
            None => format!("{place}: {msg}"),
        }))
    }

    fn check(&self, section: &str, key: &str, r: Result<()>) -> Result<()> {
        match r {
            Err(Error::Config(m)) | Err(Error::Argument(m)) => self.fail(section, key, m),
            other => other,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        let loc = Located { text };
        for section in ["waveform", "pa"] {
            if raw.get(section).and_then(|v| v.get("seed")).is_some() {
                return loc.fail(section, "seed", "seeds are set only in [seeds]");
            }
        }
        if raw.get("schema_version").is_none() {
            return loc.fail("", "schema_version", "missing; this build reads version 1");
        }
        let mut cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.sync_seeds();
        cfg.validate_in(&loc)?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.pa.seed = 0;
        let mut text = toml::to_string(&copy).map_err(|e| Error::Config(e.to_string()))?;
        // Derived seeds are not part of the file format.
        text = text
            .lines()
            .filter(|l| !l.trim_start().starts_with("seed ="))
            .collect::<Vec<_>>()
            .join("\n");
        text.push('\n');
        Ok(text)
    }

    fn sync_seeds(&mut self) {
        self.pa.seed = self.seeds.channel;
        self.waveform.seed = self.seeds.training;
    }

    pub fn set_seeds(&mut self, channel: Option<u64>, training: Option<u64>, evaluation: Option<u64>) {
        if let Some(s) = channel {
            self.seeds.channel = s;
        }
        if let Some(s) = training {
            self.seeds.training = s;
        }
        if let Some(s) = evaluation {
            self.seeds.evaluation = s;
        }
        self.sync_seeds();
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_in(&Located { text: "" })
    }

    fn validate_in(&self, loc: &Located) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return loc.fail(
                "",
                "schema_version",
                format!("unsupported version {}; this build reads {SCHEMA_VERSION}", self.schema_version),
            );
        }
        let a = &self.array;
        if a.num_users < 1 {
            return loc.fail("array", "num_users", "need at least one user");
        }
        if a.num_users >= a.num_antennas {
            return loc.fail(
                "array",
                "num_users",
                format!(
                    "M_r < N_t violated: {} users for {} antennas",
                    a.num_users, a.num_antennas
                ),
            );
        }
        if self.seeds.training == self.seeds.evaluation {
            return loc.fail("seeds", "evaluation", "training and evaluation seeds must differ");
        }
        loc.check("waveform", "", self.waveform.validate())?;
        loc.check("pa", "", self.pa.validate())?;
        loc.check("training", "", self.training.validate())?;

        let e = &self.experiment;
        let frame = self.waveform.frame_len();
        if e.memory_depth >= frame {
            return loc.fail("experiment", "memory_depth", "must be shorter than the frame");
        }
        if !(e.drive_peak_fraction > 0.0 && e.drive_peak_fraction <= 1.0) {
            return loc.fail(
                "experiment",
                "drive_peak_fraction",
                format!("must lie in (0, 1], got {}", e.drive_peak_fraction),
            );
        }
        if !(e.noise_power >= 0.0 && e.noise_power.is_finite()) {
            return loc.fail("experiment", "noise_power", "must be finite and nonnegative");
        }
        if let Some(i) = e.oob_antenna {
            if i >= a.num_antennas {
                return loc.fail("experiment", "oob_antenna", format!("antenna {i} out of range"));
            }
        }

        let p = &self.psd;
        if p.segment_length < 8 || p.segment_length > frame {
            return loc.fail(
                "psd",
                "segment_length",
                format!("must lie in [8, {frame}] for this frame length"),
            );
        }
        if !(0.0..1.0).contains(&p.overlap) {
            return loc.fail("psd", "overlap", "must lie in [0, 1)");
        }
        let nyq = self.waveform.sample_rate_hz / 2.0;
        for (key, b) in [("inband_hz", p.inband_hz), ("adjacent_hz", p.adjacent_hz)] {
            if !(b[0] < b[1]) || b[0] < -nyq || b[1] > nyq {
                return loc.fail("psd", key, format!("need lo < hi within +-{nyq} Hz"));
            }
        }
        if p.inband_hz[0] < p.adjacent_hz[1] && p.adjacent_hz[0] < p.inband_hz[1] {
            return loc.fail("psd", "adjacent_hz", "overlaps the in-band interval");
        }

        if self.schemes.is_empty() {
            return loc.fail("", "schemes", "at least one scheme is required");
        }
        for s in &self.schemes {
            if let Err(err) = s.to_scheme() {
                return loc.fail("", "schemes", err.to_string().trim_start_matches("invalid configuration: "));
            }
        }
        Ok(())
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        self.schemes.iter().map(SchemeEntry::to_scheme).collect()
    }

    pub fn build_experiment(&self) -> Result<Experiment> {
        self.validate()?;
        let channel = gen_channel(self.array.num_users, self.array.num_antennas, self.seeds.channel)?;
        let bank = PaBank::new(&self.pa, self.array.num_antennas)?;
        let band = |b: [f64; 2]| Band { lo_hz: b[0], hi_hz: b[1] };
        Ok(Experiment {
            channel,
            bank,
            waveform: self.waveform.clone(),
            memory_depth: self.experiment.memory_depth,
            train: self.training.clone(),
            training_seed: self.seeds.training,
            evaluation_seed: self.seeds.evaluation,
            drive_peak_fraction: self.experiment.drive_peak_fraction,
            noise_power: self.experiment.noise_power,
            psd_segment_length: self.psd.segment_length,
            psd_overlap: self.psd.overlap,
            inband: band(self.psd.inband_hz),
            adjacent: band(self.psd.adjacent_hz),
            oob_antenna: self.experiment.oob_antenna,
        })
    }
}
