//! Receive-side estimation chain: delay-Doppler preprocessing, MUSIC angle
//! search and per-angle delay/Doppler/coefficient estimation.

pub mod dd;
pub mod delay_doppler;
pub mod music;

pub use dd::{dd_transform, denoise, remove_symbol_randomness, DdLayout, DdTensor, Denoise, SensingRegion};
pub use delay_doppler::{
    equalize, estimate_alpha, extract_angle_grid, periodogram, pick_delay_doppler, symbol_set_for_angle, AngleGridSignal,
    DelayDopplerPeak, Equalized, EqualizedRe, Equalizer, PeakOptions, Periodogram, Weighting,
};
pub use music::{count_sources, music_spectrum, pick_angles, smoothed_covariance, AngleEstimate, AngleGrid, KaPolicy, MusicSpectrum};

use rayon::prelude::*;

use crate::array::{AngleAzZe, Upa};
use crate::beamform::{zf_extractor, BeamPlan, Stage};
use crate::gridsim::{ResourcePlan, SensingTensor, SymbolGrid};
use crate::scene::OfdmNumerology;
use crate::{CVec, IsacError, Result, C64, SPEED_OF_LIGHT};

/// One estimated target. Range is c·τ/2 and velocity c·f_D/(2f_c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub angle: AngleAzZe,
    pub delay: f64,
    pub doppler: f64,
    pub range: f64,
    pub velocity: f64,
    pub alpha: C64,
    /// |Per|² at the peak.
    pub power: f64,
}

impl Detection {
    pub fn new(angle: AngleAzZe, delay: f64, doppler: f64, alpha: C64, power: f64, num: &OfdmNumerology) -> Self {
        Self {
            angle,
            delay,
            doppler,
            range: SPEED_OF_LIGHT * delay / 2.0,
            velocity: SPEED_OF_LIGHT * doppler / (2.0 * num.f_c),
            alpha,
            power,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectionReport {
    pub detections: Vec<Detection>,
    pub angles: Vec<AngleEstimate>,
    pub source_count: usize,
    /// REs dropped by the equalizer floor, summed over angles.
    pub excluded_res: usize,
    /// Angles skipped because ZF extraction or symbol-set selection failed.
    pub skipped_angles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqualizerKind {
    /// Divide by b only; α̂ uses the sensing beam of the first symbol in the set.
    Symbols,
    /// Divide by β̂ = âᵀ f b.
    Equivalent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub denoise: Denoise,
    /// Subarray offsets (I, J).
    pub smoothing: (usize, usize),
    pub grid: AngleGrid,
    pub sources: KaPolicy,
    /// Newton refinement of MUSIC peaks on the noise-subspace projection.
    pub polish_angles: bool,
    pub oversample: usize,
    pub peaks: PeakOptions,
    pub weighting: Weighting,
    pub equalizer: EqualizerKind,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            denoise: Denoise::KeepTop(100),
            smoothing: (3, 3),
            grid: AngleGrid::default(),
            sources: KaPolicy::Known(3),
            polish_angles: true,
            oversample: 4,
            peaks: PeakOptions::default(),
            weighting: Weighting::GainSquared,
            equalizer: EqualizerKind::Equivalent,
        }
    }
}

pub struct ChainInputs<'a> {
    pub tensor: &'a SensingTensor,
    pub symbols: &'a SymbolGrid,
    pub plan: &'a ResourcePlan,
    pub beams: &'a BeamPlan,
    pub upa: &'a Upa,
    pub num: &'a OfdmNumerology,
    pub stage: Stage,
}

/// REs processed by the receiver: the sensing block when one exists, the
/// whole grid otherwise.
pub fn sensing_region(plan: &ResourcePlan) -> SensingRegion {
    if plan.has_sensing_block() {
        SensingRegion { p: plan.p_start..plan.p_start + plan.p_len, q: plan.q_start..plan.q_start + plan.q_len }
    } else {
        SensingRegion::full(plan.p_count, plan.q_count)
    }
}

/// Intermediate products of the angle stage, exposed for spectrum dumps.
pub struct AngleStage {
    pub dd: DdTensor,
    pub covariance: crate::CMat,
    pub spectrum: MusicSpectrum,
    pub angles: Vec<AngleEstimate>,
    pub source_count: usize,
}

pub fn angle_stage(inp: &ChainInputs<'_>, cfg: &ChainConfig) -> Result<AngleStage> {
    let region = sensing_region(inp.plan);
    let sweep = match inp.stage {
        Stage::Search => Some(inp.beams.sweep.as_ref().ok_or_else(|| IsacError::InvalidArgument("search needs a sweep schedule".into()))?),
        Stage::Track => None,
    };
    let y_tilde = remove_symbol_randomness(inp.tensor, inp.symbols)?;
    let dd = denoise(&dd_transform(&y_tilde, &region, sweep)?, cfg.denoise);
    let (i, j) = cfg.smoothing;
    let covariance = smoothed_covariance(&dd, inp.upa, i, j)?;
    let source_count = count_sources(&covariance, cfg.sources);
    let upa_sub = Upa::new(inp.upa.m - i + 1, inp.upa.n - j + 1, inp.upa.spacing)?;
    let spectrum = music_spectrum(&covariance, source_count, &upa_sub, &cfg.grid)?;
    let angles = pick_angles(&spectrum, source_count, cfg.polish_angles);
    Ok(AngleStage { dd, covariance, spectrum, angles, source_count })
}

/// Equalized periodogram for estimated angle k, with the ZF combiner, the
/// transmit beam used by symbol-only equalization and the excluded-RE count.
pub struct AnglePeriodogram {
    pub periodogram: Option<Periodogram>,
    pub f_zf: CVec,
    pub f_tx: Option<CVec>,
    pub excluded: usize,
}

pub fn angle_periodogram(inp: &ChainInputs<'_>, cfg: &ChainConfig, angles: &[AngleAzZe], k: usize) -> Result<AnglePeriodogram> {
    let region = sensing_region(inp.plan);
    let angle = angles[k];
    let f_zf = zf_extractor(angles, k, inp.upa)?;
    let symbols: Vec<usize> = match inp.stage {
        Stage::Search => {
            let window = inp.beams.sweep.as_ref().ok_or_else(|| IsacError::InvalidArgument("search needs a sweep schedule".into()))?;
            symbol_set_for_angle(window, &angle)?
        }
        Stage::Track => region.q.clone().collect(),
    };
    let res: Vec<(usize, usize)> = symbols.iter().flat_map(|&q| region.p.clone().map(move |p| (p, q))).collect();
    let y = extract_angle_grid(inp.tensor, &f_zf)?;
    let (eq, f_tx) = match cfg.equalizer {
        EqualizerKind::Symbols => {
            let (p0, q0) = res[0];
            let role = inp.plan.role(p0, q0);
            let f = inp.beams.get(q0, role).ok_or_else(|| IsacError::MissingBeam { q: q0, role: role.to_string() })?;
            (equalize(&y, &res, &Equalizer::Symbols(inp.symbols), cfg.weighting)?, Some(f.clone()))
        }
        EqualizerKind::Equivalent => {
            let e = Equalizer::Equivalent { angle, upa: inp.upa, plan: inp.plan, beams: inp.beams, symbols: inp.symbols };
            (equalize(&y, &res, &e, cfg.weighting)?, None)
        }
    };
    let periodogram = if eq.entries.is_empty() { None } else { Some(periodogram(&eq, inp.num, cfg.oversample)?) };
    Ok(AnglePeriodogram { periodogram, f_zf, f_tx, excluded: eq.excluded })
}

/// Delay, Doppler and α estimation for estimated angle k.
pub fn process_angle(inp: &ChainInputs<'_>, cfg: &ChainConfig, angles: &[AngleAzZe], k: usize) -> Result<(Vec<Detection>, usize)> {
    let ap = angle_periodogram(inp, cfg, angles, k)?;
    let Some(per) = ap.periodogram else {
        return Ok((Vec::new(), ap.excluded));
    };
    let mut out = Vec::new();
    for peak in pick_delay_doppler(&per, &cfg.peaks) {
        let alpha = estimate_alpha(peak.value, &ap.f_zf, &angles[k], inp.upa, ap.f_tx.as_ref())?;
        out.push(Detection::new(angles[k], peak.delay, peak.doppler, alpha, peak.value.norm_sqr(), inp.num));
    }
    Ok((out, ap.excluded))
}

/// Runs the full chain. Angles whose ZF combiner or symbol set cannot be
/// formed are skipped and counted.
pub fn run_chain(inp: &ChainInputs<'_>, cfg: &ChainConfig) -> Result<DetectionReport> {
    let stage = angle_stage(inp, cfg)?;
    let angles: Vec<AngleAzZe> = stage.angles.iter().map(|a| a.angle).collect();
    let per_angle: Vec<Result<(Vec<Detection>, usize)>> = (0..angles.len()).into_par_iter().map(|k| process_angle(inp, cfg, &angles, k)).collect();
    let mut report = DetectionReport { angles: stage.angles, source_count: stage.source_count, ..Default::default() };
    for r in per_angle {
        match r {
            Ok((d, excluded)) => {
                report.detections.extend(d);
                report.excluded_res += excluded;
            }
            Err(IsacError::IllConditioned(_)) | Err(IsacError::NoCoverage) => report.skipped_angles += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
