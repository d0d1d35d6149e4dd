//! Experiment configuration: a TOML file mirroring [`ExperimentConfig`], with
//! every field optional and defaults taken from the chosen scale profile.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use isac_core::array::Upa;
use isac_core::beamform::QcqpOptions;
use isac_core::gridsim::Allocation;
use isac_core::metrics::Gates;
use isac_core::scene::{OfdmNumerology, Scene};
use isac_core::sensing::{AngleGrid, ChainConfig, Denoise, EqualizerKind, KaPolicy, PeakOptions, Weighting};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 4x4 array, 256x256 grid, two users.
    Desk,
    /// 8x8 array, 1024x1024 grid, four users.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Dedicated,
    Zero,
}

impl Scheme {
    pub fn allocation(self) -> Allocation {
        match self {
            Scheme::Dedicated => Allocation::Dedicated,
            Scheme::Zero => Allocation::ZeroOverhead,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Dedicated => "dedicated",
            Scheme::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchDesign {
    Sdr,
    ClosedForm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumerologyConfig {
    pub p_count: usize,
    pub q_count: usize,
    pub delta_f_hz: f64,
    pub t_cp_s: f64,
    pub f_c_hz: f64,
    pub n0_dbm_per_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub m: usize,
    pub n: usize,
    #[serde(default = "half")]
    pub spacing: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    pub kappa_p: f64,
    pub kappa_q: f64,
    /// Defaults to the upper half of the band.
    pub p_start: Option<usize>,
    /// Defaults to the second half of the frame.
    pub q_start: Option<usize>,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self { kappa_p: 0.5, kappa_q: 0.5, p_start: None, q_start: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    /// Zero-overhead E_min/γ̄ in dBm while searching.
    pub search_ratio_dbm: f64,
    /// Zero-overhead γ̄/γ̄_s in dB while tracking.
    pub track_ratio_db: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { search_ratio_dbm: -30.0, track_ratio_db: 30.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamformingConfig {
    pub search_design: SearchDesign,
    pub randomization_samples: usize,
}

impl Default for BeamformingConfig {
    fn default() -> Self {
        Self { search_design: SearchDesign::Sdr, randomization_samples: 200 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Keep the strongest L delay-Doppler bins (default 100); 0 disables
    /// denoising.
    pub denoise_keep: Option<usize>,
    pub denoise_threshold: Option<f64>,
    /// Subarray offsets (I, J); defaults to 2 on 4x4 arrays and 3 otherwise.
    pub smoothing: Option<[usize; 2]>,
    pub grid_step_deg: f64,
    pub oversample: usize,
    /// Fixed source count; defaults to the number of distinct target angles.
    pub source_count: Option<usize>,
    /// Estimate the source count from the eigenvalue ratio instead.
    pub eigen_ratio: Option<f64>,
    pub peak_threshold: f64,
    pub max_peaks: usize,
    pub delay_suppression_cells: f64,
    pub polish: bool,
    pub weighting: WeightingName,
    pub equalizer: EqualizerName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingName {
    Uniform,
    GainSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizerName {
    Symbols,
    Equivalent,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            denoise_keep: None,
            denoise_threshold: None,
            smoothing: None,
            grid_step_deg: 0.5,
            oversample: 4,
            source_count: None,
            eigen_ratio: None,
            peak_threshold: 0.25,
            max_peaks: 8,
            delay_suppression_cells: 0.5,
            polish: true,
            weighting: WeightingName::GainSquared,
            equalizer: EqualizerName::Equivalent,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    /// Standard deviation of the Gaussian error added to each prior angle.
    pub prior_angle_std_deg: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { prior_angle_std_deg: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub angle_gate_bins: f64,
    pub delay_gate_bins: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let g = Gates::default();
        Self { angle_gate_bins: g.angle_bins, delay_gate_bins: g.delay_bins }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DumpConfig {
    /// MUSIC and periodogram cuts for the first seed of every point.
    pub spectra: bool,
    /// Binary sensing tensor for the first seed of every point.
    pub tensor: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub numerology: Option<NumerologyConfig>,
    pub array: Option<ArrayConfig>,
    /// Built-in names ("far", "close") or paths to scene files.
    pub scenes: Vec<String>,
    /// Users file for built-in target scenes; defaults to the scale's users.
    pub users: Option<String>,
    pub schemes: Vec<Scheme>,
    /// Average transmit power per resource element, in dBm. Defaults to
    /// 0..45 dBm at desk scale and -30..15 dBm at paper scale.
    pub power_dbm: Option<Vec<f64>>,
    pub seeds: usize,
    pub seed: u64,
    pub noise: bool,
    pub allocation: AllocationConfig,
    pub thresholds: ThresholdConfig,
    pub beamforming: BeamformingConfig,
    pub estimator: EstimatorConfig,
    pub track: TrackConfig,
    pub scoring: ScoringConfig,
    pub dump: DumpConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scale: Scale::Desk,
            numerology: None,
            array: None,
            scenes: vec!["far".into(), "close".into()],
            users: None,
            schemes: vec![Scheme::Dedicated, Scheme::Zero],
            power_dbm: None,
            seeds: 50,
            seed: 1,
            noise: true,
            allocation: AllocationConfig::default(),
            thresholds: ThresholdConfig::default(),
            beamforming: BeamformingConfig::default(),
            estimator: EstimatorConfig::default(),
            track: TrackConfig::default(),
            scoring: ScoringConfig::default(),
            dump: DumpConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

const DESK_USERS: &str = include_str!("../scenes/desk_users.toml");
const PAPER_USERS: &str = include_str!("../scenes/paper_users.toml");
const DESK_FAR: &str = include_str!("../scenes/desk_far.toml");
const DESK_CLOSE: &str = include_str!("../scenes/desk_close.toml");
const PAPER_FAR: &str = include_str!("../scenes/paper_far.toml");
const PAPER_CLOSE: &str = include_str!("../scenes/paper_close.toml");

/// A scene description and the label used in output rows.
#[derive(Debug, Clone)]
pub struct SceneSource {
    pub label: String,
    pub text: String,
}

impl SceneSource {
    pub fn build(&self, num: &OfdmNumerology, seed: u64) -> Result<Scene, CliError> {
        Scene::from_toml_str(&self.text, num, seed).map_err(|e| CliError::Config(format!("scene {}: {e}", self.label)))
    }
}

pub const DEFAULT_DENOISE_KEEP: usize = 100;

/// The default bin count scaled to the grid size, ⌈100 · PQ / 1024²⌉.
pub fn scaled_denoise_keep(num: &OfdmNumerology) -> usize {
    (100 * num.p_count * num.q_count).div_ceil(1024 * 1024)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks every field that does not need the scale profile resolved.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        let sweep = self.power_sweep();
        if sweep.is_empty() {
            return bad("power sweep is empty");
        }
        if sweep.iter().any(|p| !p.is_finite()) {
            return bad("power sweep contains a non-finite value");
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.schemes.is_empty() || self.scenes.is_empty() {
            return bad("schemes and scenes must be nonempty");
        }
        let a = &self.allocation;
        if !(a.kappa_p > 0.0 && a.kappa_p <= 1.0 && a.kappa_q > 0.0 && a.kappa_q <= 1.0) {
            return bad("allocation fractions must lie in (0, 1]");
        }
        let e = &self.estimator;
        if !(e.grid_step_deg > 0.0) || e.oversample == 0 || !(e.peak_threshold > 0.0 && e.peak_threshold <= 1.0) || e.max_peaks == 0 {
            return bad("estimator settings must be positive");
        }
        if !(self.track.prior_angle_std_deg >= 0.0) {
            return bad("prior angle spread must be non-negative");
        }
        if !(self.scoring.angle_gate_bins > 0.0 && self.scoring.delay_gate_bins > 0.0) {
            return bad("scoring gates must be positive");
        }
        for s in self.scenes.iter().chain(self.users.iter()) {
            if s.ends_with(".toml") && !self.base_dir.join(s).is_file() {
                return Err(CliError::Config(format!("scene file {} not found", self.base_dir.join(s).display())));
            }
        }
        self.numerology()?;
        self.upa()?;
        Ok(())
    }

    pub fn numerology(&self) -> Result<OfdmNumerology, CliError> {
        let num = match (&self.numerology, self.scale) {
            (Some(n), _) => OfdmNumerology::new(n.p_count, n.q_count, n.delta_f_hz, n.t_cp_s, n.f_c_hz, n.n0_dbm_per_hz)?,
            (None, Scale::Desk) => OfdmNumerology::desk_scale(),
            (None, Scale::Paper) => OfdmNumerology::full_scale(),
        };
        Ok(num)
    }

    pub fn upa(&self) -> Result<Upa, CliError> {
        Ok(match (&self.array, self.scale) {
            (Some(a), _) => Upa::new(a.m, a.n, a.spacing)?,
            (None, Scale::Desk) => Upa::half_wavelength(4, 4),
            (None, Scale::Paper) => Upa::half_wavelength(8, 8),
        })
    }

    fn read_relative(&self, path: &str) -> Result<String, CliError> {
        let full = self.base_dir.join(path);
        std::fs::read_to_string(&full).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))
    }

    /// Scene descriptions in configuration order.
    pub fn scene_sources(&self) -> Result<Vec<SceneSource>, CliError> {
        let users = match &self.users {
            Some(p) => self.read_relative(p)?,
            None => match self.scale {
                Scale::Desk => DESK_USERS.to_string(),
                Scale::Paper => PAPER_USERS.to_string(),
            },
        };
        self.scenes
            .iter()
            .map(|name| {
                let (label, targets) = match (name.as_str(), self.scale) {
                    ("far", Scale::Desk) => ("F".to_string(), DESK_FAR.to_string()),
                    ("close", Scale::Desk) => ("C".to_string(), DESK_CLOSE.to_string()),
                    ("far", Scale::Paper) => ("F".to_string(), PAPER_FAR.to_string()),
                    ("close", Scale::Paper) => ("C".to_string(), PAPER_CLOSE.to_string()),
                    (path, _) if path.ends_with(".toml") => {
                        let stem = Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or(path).to_string();
                        let text = self.read_relative(path)?;
                        // A file with its own users replaces the default users.
                        let text = if text.contains("[[user]]") { text } else { format!("{users}\n{text}") };
                        return Ok(SceneSource { label: stem, text });
                    }
                    (other, _) => return Err(CliError::Config(format!("unknown scene {other:?}"))),
                };
                Ok(SceneSource { label, text: format!("{users}\n{targets}") })
            })
            .collect()
    }

    pub fn chain_config(&self, upa: &Upa, source_count: usize) -> ChainConfig {
        let e = &self.estimator;
        let smoothing = match e.smoothing {
            Some([i, j]) => (i, j),
            None if upa.m <= 4 || upa.n <= 4 => (2.min(upa.m), 2.min(upa.n)),
            None => (3, 3),
        };
        let keep = e.denoise_keep.unwrap_or(DEFAULT_DENOISE_KEEP);
        let denoise = match (e.denoise_threshold, keep) {
            (Some(t), _) => Denoise::Threshold(t),
            (None, 0) => Denoise::Off,
            (None, l) => Denoise::KeepTop(l),
        };
        ChainConfig {
            denoise,
            smoothing,
            grid: AngleGrid { step_deg: e.grid_step_deg, ..Default::default() },
            sources: match e.eigen_ratio {
                Some(r) => KaPolicy::EigenRatio(r),
                None => KaPolicy::Known(e.source_count.unwrap_or(source_count)),
            },
            polish_angles: e.polish,
            oversample: e.oversample,
            peaks: PeakOptions {
                relative_threshold: e.peak_threshold,
                max_peaks: e.max_peaks,
                delay_suppression_cells: e.delay_suppression_cells,
                polish: e.polish,
            },
            weighting: match e.weighting {
                WeightingName::Uniform => Weighting::Uniform,
                WeightingName::GainSquared => Weighting::GainSquared,
            },
            equalizer: match e.equalizer {
                EqualizerName::Symbols => EqualizerKind::Symbols,
                EqualizerName::Equivalent => EqualizerKind::Equivalent,
            },
        }
    }

    pub fn gates(&self) -> Gates {
        Gates { angle_bins: self.scoring.angle_gate_bins, delay_bins: self.scoring.delay_gate_bins }
    }

    pub fn qcqp_options(&self, seed: u64) -> QcqpOptions {
        QcqpOptions { randomization_samples: self.beamforming.randomization_samples, seed, ..Default::default() }
    }

    pub fn power_sweep(&self) -> Vec<f64> {
        let start = match self.scale {
            Scale::Desk => 0.0,
            Scale::Paper => -30.0,
        };
        self.power_dbm.clone().unwrap_or_else(|| (0..10).map(|k| start + 5.0 * k as f64).collect())
    }

    /// Sensing block origin: the quadrant a fourth user would otherwise hold.
    pub fn block_origin(&self, num: &OfdmNumerology) -> (usize, usize) {
        let a = &self.allocation;
        let pl = (a.kappa_p * num.p_count as f64).round() as usize;
        let ql = (a.kappa_q * num.q_count as f64).round() as usize;
        (a.p_start.unwrap_or(num.p_count - pl), a.q_start.unwrap_or(num.q_count - ql))
    }
}
