//! Builds one trial's resource plan and transmit beams: thresholds follow the
//! power-ratio rule of each scheme, the beams are designed once at unit γ̄ and
//! then scaled so the average transmit power per RE hits the requested value.

use isac_core::array::{sweep_schedule, AngleAzZe, Upa};
use isac_core::beamform::{
    calibrate_power_ratio, mrt, search_beam_closed_form, search_beam_sdr, track_beam_dedicated, track_beam_shared, BeamPlan, Stage,
    SweepWindow, Thresholds, TrackPrior,
};
use isac_core::gridsim::{average_transmit_power, build_resource_plan, ResourcePlan, Role};
use isac_core::linalg::real;
use isac_core::rng::{normal, stream, DOMAIN_PRIORS};
use isac_core::scene::{channel_covariance, ChannelStats, OfdmNumerology, Scene, UeChannel};
use isac_core::{CVec, IsacError};

use crate::config::{ExperimentConfig, Scheme, SearchDesign};
use crate::error::CliError;

pub struct Design {
    pub plan: ResourcePlan,
    pub beams: BeamPlan,
    /// Channels of the served users, indexed like `Role::User`.
    pub channels: Vec<UeChannel>,
    pub thresholds: Thresholds,
    /// Average transmit power per RE after scaling (mW).
    pub tx_power: f64,
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// One prior per distinct target angle, carrying the weakest coefficient seen
/// at that angle. Prior angles are perturbed when the config asks for it.
pub fn track_priors(cfg: &ExperimentConfig, scene: &Scene, seed: u64) -> Result<Vec<TrackPrior>, CliError> {
    let std = cfg.track.prior_angle_std_deg;
    let mut rng = stream(seed, DOMAIN_PRIORS, 0);
    let mut priors = Vec::new();
    for angle in scene.distinct_angles() {
        let alpha = scene
            .targets
            .iter()
            .filter(|t| t.angle == angle)
            .map(|t| t.alpha)
            .min_by(|a, b| a.norm().total_cmp(&b.norm()))
            .expect("angle taken from the target list");
        let angle = if std > 0.0 {
            let az = (angle.azimuth + normal(&mut rng, std)).clamp(0.0, 180.0);
            let ze = (angle.zenith + normal(&mut rng, std)).clamp(0.0, 180.0);
            AngleAzZe::new(az, ze)?
        } else {
            angle
        };
        priors.push(TrackPrior { angle, alpha });
    }
    if priors.is_empty() {
        return Err(CliError::Config("tracking needs at least one target".into()));
    }
    Ok(priors)
}

fn user_beam(stats: &ChannelStats, gamma_bar: f64, sigma2: f64) -> CVec {
    &stats.h_u * real((sigma2 * gamma_bar).sqrt() / stats.lambda())
}

#[allow(clippy::too_many_arguments)]
pub fn design(
    cfg: &ExperimentConfig,
    num: &OfdmNumerology,
    upa: &Upa,
    scene: &Scene,
    scheme: Scheme,
    stage: Stage,
    power_mw: f64,
    seed: u64,
) -> Result<Design, CliError> {
    let alloc = scheme.allocation();
    let users = scene.active_users(scheme == Scheme::Dedicated);
    let (ps, qs) = cfg.block_origin(num);
    let a = &cfg.allocation;
    let plan = build_resource_plan(num, users.len(), alloc, a.kappa_p, a.kappa_q, ps, qs)?;
    let channels = users.iter().map(|u| UeChannel::new(&u.paths, upa, num)).collect::<Result<Vec<_>, _>>()?;
    let stats: Vec<Option<ChannelStats>> = users
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let set = plan.user_set(k);
            if set.is_empty() {
                Ok(None)
            } else {
                channel_covariance(&u.paths, upa, num, &set).map(Some)
            }
        })
        .collect::<Result<_, IsacError>>()?;
    let base_ratio = match stage {
        Stage::Search => dbm_to_mw(cfg.thresholds.search_ratio_dbm),
        Stage::Track => 10f64.powf(cfg.thresholds.track_ratio_db / 10.0),
    };
    let kappa = match scheme {
        Scheme::Dedicated => plan.kappa(),
        Scheme::Zero => 0.0,
    };
    let kappa_for_ratio = if kappa >= 1.0 { 0.5 } else { kappa };
    let thresholds = calibrate_power_ratio(stage, alloc, kappa_for_ratio, 1.0, base_ratio)?;
    let sigma2 = num.sigma2();
    let opts = cfg.qcqp_options(seed);
    let mut beams = BeamPlan::new(upa.elements(), num.q_count);

    let user_stats = |k: usize| stats[k].as_ref();
    match (stage, scheme) {
        (Stage::Search, Scheme::Zero) => {
            let window = SweepWindow { schedule: sweep_schedule(upa, num.q_count)?, q_start: 0 };
            for b in 0..window.schedule.beam_count() {
                let angle_s = window.schedule.beam(b);
                let symbols = window.symbols_of_beam(b);
                let mut present: Vec<usize> = symbols
                    .clone()
                    .flat_map(|q| plan.roles_on_symbol(q))
                    .filter_map(|r| match r {
                        Role::User(u) => Some(u),
                        Role::Sensing => None,
                    })
                    .collect();
                present.sort();
                present.dedup();
                for u in present {
                    let s = user_stats(u).expect("user holds REs on this symbol");
                    let f = match cfg.beamforming.search_design {
                        SearchDesign::Sdr => {
                            search_beam_sdr(&s.h_u, s.lambda(), &angle_s, thresholds.gamma_bar, thresholds.sensing, sigma2, upa, &opts)?.f
                        }
                        SearchDesign::ClosedForm => {
                            search_beam_closed_form(&s.h_u, s.lambda(), &angle_s, thresholds.gamma_bar, thresholds.sensing, sigma2, upa)
                        }
                    };
                    let h = beams.push_vector(f);
                    for q in symbols.clone() {
                        beams.assign(q, Role::User(u), h);
                    }
                }
            }
            beams.sweep = Some(window);
        }
        (Stage::Search, Scheme::Dedicated) => {
            for (k, s) in stats.iter().enumerate() {
                if let Some(s) = s {
                    beams.set_all(Role::User(k), user_beam(s, thresholds.gamma_bar, sigma2));
                }
            }
            let window = SweepWindow { schedule: sweep_schedule(upa, plan.q_len)?, q_start: plan.q_start };
            let scale = (thresholds.sensing / upa.elements() as f64).sqrt();
            for b in 0..window.schedule.beam_count() {
                let h = beams.push_vector(mrt(&window.schedule.beam(b), upa) * real(scale));
                for q in window.symbols_of_beam(b) {
                    beams.assign(q, Role::Sensing, h);
                }
            }
            beams.sweep = Some(window);
        }
        (Stage::Track, Scheme::Zero) => {
            let priors = track_priors(cfg, scene, seed)?;
            for (k, s) in stats.iter().enumerate() {
                if let Some(s) = s {
                    let sol = track_beam_shared(&s.h_u, s.lambda(), &priors, thresholds.gamma_bar, thresholds.sensing, sigma2, upa, &opts)?;
                    beams.set_all(Role::User(k), sol.f);
                }
            }
        }
        (Stage::Track, Scheme::Dedicated) => {
            let priors = track_priors(cfg, scene, seed)?;
            for (k, s) in stats.iter().enumerate() {
                if let Some(s) = s {
                    beams.set_all(Role::User(k), user_beam(s, thresholds.gamma_bar, sigma2));
                }
            }
            let sol = track_beam_dedicated(&priors, thresholds.sensing, sigma2, upa, &opts)?;
            beams.set_all(Role::Sensing, sol.f);
        }
    }
    let current = average_transmit_power(&plan, &beams)?;
    if !(current > 0.0) {
        return Err(IsacError::NearZero(current).into());
    }
    beams.scale((power_mw / current).sqrt());
    let tx_power = average_transmit_power(&plan, &beams)?;
    Ok(Design { plan, beams, channels, thresholds, tx_power })
}
