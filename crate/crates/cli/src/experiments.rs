//! Monte Carlo experiment drivers. Trials fan out over the rayon pool and are
//! collected in a fixed order, so outputs do not depend on the thread count.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use isac_core::array::{steering_vector, AngleAzZe, Upa};
use isac_core::beamform::{mrt, search_beam_closed_form, search_beam_sdr, Stage, SweepWindow};
use isac_core::gridsim::{draw_symbols, sum_rate, synth_sensing_tensor, SensingTensor};
use isac_core::metrics::{acrb, match_and_score, pooled_rmse, resolution, ScoreReport};
use isac_core::scene::{channel_covariance, OfdmNumerology};
use isac_core::sensing::{angle_periodogram, angle_stage, run_chain, ChainInputs, DetectionReport};
use isac_core::SPEED_OF_LIGHT;

use crate::config::{ExperimentConfig, SceneSource, Scheme};
use crate::design::{dbm_to_mw, design, mw_to_dbm};
use crate::error::CliError;
use crate::output::{write_csv, write_table};

pub fn stage_label(stage: Stage) -> &'static str {
    match stage {
        Stage::Search => "search",
        Stage::Track => "track",
    }
}

/// Resolved configuration shared by every trial.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub num: OfdmNumerology,
    pub upa: Upa,
    pub scenes: Vec<SceneSource>,
    pub powers: Vec<f64>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let num = cfg.numerology()?;
        let upa = cfg.upa()?;
        let scenes = cfg.scene_sources()?;
        let powers = cfg.power_sweep();
        Ok(Self { cfg, num, upa, scenes, powers })
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.cfg.seeds as u64).map(move |k| self.cfg.seed + k)
    }

    fn tensor_bytes(&self) -> usize {
        self.upa.elements() * self.num.p_count * self.num.q_count * 16
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SensingRow {
    pub stage: &'static str,
    pub scheme: &'static str,
    pub scenario: String,
    pub power_dbm: f64,
    pub seed: u64,
    pub detected: usize,
    pub targets: usize,
    pub rmse_az_deg: f64,
    pub rmse_ze_deg: f64,
    pub rmse_delay_ns: f64,
    pub rmse_doppler_hz: f64,
    pub tx_power_dbm: f64,
    pub excluded_res: usize,
    pub skipped_angles: usize,
    pub status: String,
}

pub struct TrialResult {
    pub row: SensingRow,
    pub score: ScoreReport,
    pub report: Option<DetectionReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrialPoint {
    pub stage: Stage,
    pub scheme: Scheme,
    pub scene: usize,
    pub power_dbm: f64,
    pub seed: u64,
}

/// One synthesised trial, before estimation.
pub struct Simulated {
    pub tensor: SensingTensor,
    pub symbols: isac_core::gridsim::SymbolGrid,
    pub design: crate::design::Design,
    pub scene: isac_core::scene::Scene,
}

impl Simulated {
    pub fn inputs<'a>(&'a self, ctx: &'a Context, stage: Stage) -> ChainInputs<'a> {
        ChainInputs {
            tensor: &self.tensor,
            symbols: &self.symbols,
            plan: &self.design.plan,
            beams: &self.design.beams,
            upa: &ctx.upa,
            num: &ctx.num,
            stage,
        }
    }
}

pub fn simulate(ctx: &Context, pt: &TrialPoint) -> Result<Simulated, CliError> {
    let scene = ctx.scenes[pt.scene].build(&ctx.num, pt.seed)?;
    let design = design(&ctx.cfg, &ctx.num, &ctx.upa, &scene, pt.scheme, pt.stage, dbm_to_mw(pt.power_dbm), pt.seed)?;
    let symbols = draw_symbols(pt.seed, &ctx.num);
    let noise = ctx.cfg.noise.then_some(pt.seed);
    let tensor = synth_sensing_tensor(&scene.targets, &ctx.upa, &ctx.num, &design.plan, &design.beams, &symbols, noise)?;
    Ok(Simulated { tensor, symbols, design, scene })
}

/// Simulates and scores one trial. Failures are reported in the row's status
/// and scored as if nothing was detected.
pub fn run_trial(ctx: &Context, pt: &TrialPoint, dump: Option<&Path>) -> TrialResult {
    let label = ctx.scenes[pt.scene].label.clone();
    let mut row = SensingRow {
        stage: stage_label(pt.stage),
        scheme: pt.scheme.label(),
        scenario: label,
        power_dbm: pt.power_dbm,
        seed: pt.seed,
        detected: 0,
        targets: 0,
        rmse_az_deg: 0.0,
        rmse_ze_deg: 0.0,
        rmse_delay_ns: 0.0,
        rmse_doppler_hz: 0.0,
        tx_power_dbm: f64::NAN,
        excluded_res: 0,
        skipped_angles: 0,
        status: "ok".into(),
    };
    let outcome = (|| -> Result<(isac_core::scene::Scene, Option<DetectionReport>, Option<String>), CliError> {
        let sim = simulate(ctx, pt)?;
        row.tx_power_dbm = mw_to_dbm(sim.design.tx_power);
        let inp = sim.inputs(ctx, pt.stage);
        let chain = ctx.cfg.chain_config(&ctx.upa, sim.scene.distinct_angles().len());
        if let Some(dir) = dump {
            dump_trial(ctx, pt, &inp, &chain, dir)?;
        }
        match run_chain(&inp, &chain) {
            Ok(r) => Ok((sim.scene, Some(r), None)),
            Err(e) => Ok((sim.scene, None, Some(format!("estimation failed: {e}")))),
        }
    })();
    let (scene, report) = match outcome {
        Ok((scene, report, status)) => {
            if let Some(s) = status {
                row.status = s;
            }
            (Some(scene), report)
        }
        Err(e) => {
            row.status = format!("design failed: {e}");
            (ctx.scenes[pt.scene].build(&ctx.num, pt.seed).ok(), None)
        }
    };
    let truth = scene.map(|s| s.targets).unwrap_or_default();
    let dets = report.as_ref().map(|r| r.detections.clone()).unwrap_or_default();
    let score = match_and_score(&truth, &dets, ctx.cfg.gates(), &ctx.num, &ctx.upa).expect("gates validated");
    row.detected = score.detected_count;
    row.targets = score.target_count;
    row.rmse_az_deg = score.rmse_azimuth;
    row.rmse_ze_deg = score.rmse_zenith;
    row.rmse_delay_ns = score.rmse_delay * 1e9;
    row.rmse_doppler_hz = score.rmse_doppler;
    if let Some(r) = &report {
        row.excluded_res = r.excluded_res;
        row.skipped_angles = r.skipped_angles;
    }
    TrialResult { row, score, report }
}

fn point_tag(ctx: &Context, pt: &TrialPoint) -> String {
    format!("{}_{}_{}_{:+.1}dBm", stage_label(pt.stage), pt.scheme.label(), ctx.scenes[pt.scene].label, pt.power_dbm)
}

fn db(x: f64) -> f64 {
    10.0 * x.max(1e-300).log10()
}

fn dump_trial(ctx: &Context, pt: &TrialPoint, inp: &ChainInputs<'_>, chain: &isac_core::sensing::ChainConfig, dir: &Path) -> Result<(), CliError> {
    let tag = point_tag(ctx, pt);
    if ctx.cfg.dump.tensor {
        std::fs::create_dir_all(dir.join("tensors"))?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("tensors").join(format!("{tag}.bin")))?);
        inp.tensor.write_binary(f)?;
    }
    if !ctx.cfg.dump.spectra {
        return Ok(());
    }
    let stage = angle_stage(inp, chain)?;
    let spec = &stage.spectrum;
    let peak = spec.values.iter().cloned().fold(0.0, f64::max);
    let mut rows = Vec::with_capacity(spec.values.len());
    for (ia, az) in spec.azimuth.iter().enumerate() {
        for (iz, ze) in spec.zenith.iter().enumerate() {
            rows.push(vec![az.to_string(), ze.to_string(), format!("{:.4}", db(spec.at(ia, iz) / peak))]);
        }
    }
    write_table(&dir.join("spectra").join(format!("music_{tag}.csv")), "music", &["azimuth_deg", "zenith_deg", "spectrum_db"], rows)?;
    let angles: Vec<AngleAzZe> = stage.angles.iter().map(|a| a.angle).collect();
    for k in 0..angles.len() {
        let Ok(ap) = angle_periodogram(inp, chain, &angles, k) else { continue };
        let Some(per) = ap.periodogram else { continue };
        let (nd, nw) = (per.delay_bins, per.doppler_bins);
        let power = |g: usize, w: usize| per.values[w * nd + g].norm_sqr();
        let (mut gb, mut wb, mut best) = (0, 0, -1.0);
        for w in 0..nw {
            for g in 0..nd {
                if power(g, w) > best {
                    (gb, wb, best) = (g, w, power(g, w));
                }
            }
        }
        let mut rows = Vec::new();
        for g in 0..nd {
            let tau = g as f64 / (nd as f64 * ctx.num.delta_f);
            rows.push(vec!["delay".into(), format!("{:.6}", tau * 1e9), format!("{:.4}", db(power(g, wb) / best))]);
        }
        for w in 0..nw {
            let y = w as f64 / nw as f64;
            let y = if y > 0.5 { y - 1.0 } else { y };
            rows.push(vec!["doppler".into(), format!("{:.6}", y / ctx.num.t_o), format!("{:.4}", db(power(gb, w) / best))]);
        }
        let name = format!("periodogram_{tag}_angle{k}.csv");
        write_table(&dir.join("spectra").join(name), "periodogram-cut", &["axis", "value", "power_db"], rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub stage: &'static str,
    pub scheme: &'static str,
    pub scenario: String,
    pub power_dbm: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_detected: f64,
    pub all_detected_rate: f64,
    pub rmse_az_deg: f64,
    pub rmse_ze_deg: f64,
    pub rmse_angle_deg: f64,
    pub rmse_delay_ns: f64,
    pub rmse_doppler_hz: f64,
}

pub fn points(ctx: &Context, stage: Stage) -> Vec<TrialPoint> {
    let mut schemes = ctx.cfg.schemes.clone();
    schemes.sort();
    schemes.dedup();
    let mut out = Vec::new();
    for &scheme in &schemes {
        for scene in 0..ctx.scenes.len() {
            for &power_dbm in &ctx.powers {
                for seed in ctx.seeds() {
                    out.push(TrialPoint { stage, scheme, scene, power_dbm, seed });
                }
            }
        }
    }
    out
}

pub fn run_points(ctx: &Context, pts: &[TrialPoint], out: Option<&Path>) -> Vec<TrialResult> {
    let first_seed = ctx.cfg.seed;
    let dump_dir = |pt: &TrialPoint| out.filter(|_| pt.seed == first_seed && (ctx.cfg.dump.spectra || ctx.cfg.dump.tensor));
    // Full-scale tensors are large; run those trials one at a time and let
    // the inner stages use the pool.
    if ctx.tensor_bytes() > (256 << 20) {
        pts.iter().map(|pt| run_trial(ctx, pt, dump_dir(pt))).collect()
    } else {
        pts.par_iter().map(|pt| run_trial(ctx, pt, dump_dir(pt))).collect()
    }
}

pub fn summarize(results: &[TrialResult]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut groups: Vec<(&SensingRow, Vec<&TrialResult>)> = Vec::new();
    for r in results {
        let key = |x: &SensingRow| (x.stage, x.scheme, x.scenario.clone(), x.power_dbm.to_bits());
        match groups.iter_mut().find(|(k, _)| key(k) == key(&r.row)) {
            Some((_, v)) => v.push(r),
            None => groups.push((&r.row, vec![r])),
        }
    }
    for (k, v) in groups {
        let scores: Vec<ScoreReport> = v.iter().map(|r| r.score.clone()).collect();
        let [az, ze, dl, dp] = pooled_rmse(&scores);
        let n = v.len() as f64;
        out.push(SummaryRow {
            stage: k.stage,
            scheme: k.scheme,
            scenario: k.scenario.clone(),
            power_dbm: k.power_dbm,
            trials: v.len(),
            failures: v.iter().filter(|r| r.row.status != "ok").count(),
            mean_detected: v.iter().map(|r| r.row.detected as f64).sum::<f64>() / n,
            all_detected_rate: v.iter().filter(|r| r.row.detected == r.row.targets).count() as f64 / n,
            rmse_az_deg: az,
            rmse_ze_deg: ze,
            rmse_angle_deg: ((az * az + ze * ze) / 2.0).sqrt(),
            rmse_delay_ns: dl * 1e9,
            rmse_doppler_hz: dp,
        });
    }
    out
}

/// Runs every (scheme, scene, power, seed) point of one stage and writes
/// `<stage>_trials.csv` and `<stage>_summary.csv` when `out` is given.
pub fn run_sensing(ctx: &Context, stage: Stage, out: Option<&Path>) -> Result<(Vec<SensingRow>, Vec<SummaryRow>), CliError> {
    let pts = points(ctx, stage);
    let results = run_points(ctx, &pts, out);
    let summary = summarize(&results);
    let rows: Vec<SensingRow> = results.into_iter().map(|r| r.row).collect();
    if let Some(dir) = out {
        let s = stage_label(stage);
        write_csv(&dir.join(format!("{s}_trials.csv")), &format!("{s}-trials"), &rows)?;
        write_csv(&dir.join(format!("{s}_summary.csv")), &format!("{s}-summary"), &summary)?;
    }
    Ok((rows, summary))
}

pub fn run_search(ctx: &Context, out: Option<&Path>) -> Result<(Vec<SensingRow>, Vec<SummaryRow>), CliError> {
    run_sensing(ctx, Stage::Search, out)
}

pub fn run_track(ctx: &Context, out: Option<&Path>) -> Result<(Vec<SensingRow>, Vec<SummaryRow>), CliError> {
    run_sensing(ctx, Stage::Track, out)
}

/// Lowest power at which the summary's angle RMSE reaches `target`, linearly
/// interpolated in (dBm, log RMSE) between the bracketing sweep points.
pub fn power_for_rmse(summary: &[SummaryRow], scheme: &str, scenario: &str, target: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = summary
        .iter()
        .filter(|r| r.scheme == scheme && r.scenario == scenario)
        .map(|r| (r.power_dbm, r.rmse_angle_deg))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.first()?.1 <= target {
        return Some(pts[0].0);
    }
    for w in pts.windows(2) {
        let ((p0, r0), (p1, r1)) = (w[0], w[1]);
        if r1 <= target {
            let (l0, l1, lt) = (r0.max(1e-300).ln(), r1.max(1e-300).ln(), target.ln());
            return Some(p0 + (p1 - p0) * (l0 - lt) / (l0 - l1));
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct CommRow {
    pub stage: &'static str,
    pub scheme: &'static str,
    pub scenario: String,
    pub power_dbm: f64,
    pub users: usize,
    pub sum_rate_bps: f64,
    pub tx_power_dbm: f64,
    pub status: String,
}

/// Sum rate of both schemes over the power sweep in both stages.
pub fn run_comm(ctx: &Context, out: Option<&Path>) -> Result<Vec<CommRow>, CliError> {
    let mut pts = Vec::new();
    for stage in [Stage::Search, Stage::Track] {
        let mut schemes = ctx.cfg.schemes.clone();
        schemes.sort();
        schemes.dedup();
        for &scheme in &schemes {
            for scene in 0..ctx.scenes.len() {
                for &power_dbm in &ctx.powers {
                    pts.push(TrialPoint { stage, scheme, scene, power_dbm, seed: ctx.cfg.seed });
                }
            }
        }
    }
    let rows: Vec<CommRow> = pts
        .par_iter()
        .map(|pt| {
            let mut row = CommRow {
                stage: stage_label(pt.stage),
                scheme: pt.scheme.label(),
                scenario: ctx.scenes[pt.scene].label.clone(),
                power_dbm: pt.power_dbm,
                users: 0,
                sum_rate_bps: 0.0,
                tx_power_dbm: f64::NAN,
                status: "ok".into(),
            };
            let r = (|| -> Result<(), CliError> {
                let scene = ctx.scenes[pt.scene].build(&ctx.num, pt.seed)?;
                let d = design(&ctx.cfg, &ctx.num, &ctx.upa, &scene, pt.scheme, pt.stage, dbm_to_mw(pt.power_dbm), pt.seed)?;
                row.users = d.channels.len();
                row.tx_power_dbm = mw_to_dbm(d.tx_power);
                row.sum_rate_bps = sum_rate(&d.plan, &d.channels, &d.beams, &ctx.num)?;
                Ok(())
            })();
            if let Err(e) = r {
                row.status = e.to_string();
            }
            row
        })
        .collect();
    if let Some(dir) = out {
        write_csv(&dir.join("comm.csv"), "comm", &rows)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct PatternRow {
    pub beam: &'static str,
    pub azimuth_deg: f64,
    pub zenith_deg: f64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchPowerRow {
    pub user: usize,
    pub beam_index: usize,
    pub sensing_azimuth_deg: f64,
    pub sensing_zenith_deg: f64,
    pub power_sdr_mw: f64,
    pub power_closed_form_mw: f64,
    pub gap_db: f64,
}

/// Beam patterns on a 1° grid (MRT toward the first user, and the SDR and
/// closed-form searching beams toward the first target), plus a table of
/// SDR versus closed-form power over every sweep beam and user.
pub fn emit_beampattern(ctx: &Context, out: Option<&Path>) -> Result<(Vec<PatternRow>, Vec<SearchPowerRow>), CliError> {
    let cfg = &ctx.cfg;
    let scene = ctx.scenes[0].build(&ctx.num, cfg.seed)?;
    let users = scene.active_users(false);
    let all: Vec<(usize, usize)> = (0..ctx.num.q_count).flat_map(|q| (0..ctx.num.p_count).map(move |p| (p, q))).collect();
    let stats: Vec<_> = users.iter().map(|u| channel_covariance(&u.paths, &ctx.upa, &ctx.num, &all)).collect::<Result<_, _>>()?;
    let sigma2 = ctx.num.sigma2();
    let gamma = 1.0;
    let e_min = dbm_to_mw(cfg.thresholds.search_ratio_dbm) * gamma;
    let opts = cfg.qcqp_options(cfg.seed);
    let target = scene.targets.first().map(|t| t.angle).ok_or_else(|| CliError::Config("beampattern needs a target".into()))?;
    let s0 = &stats[0];
    let sdr = search_beam_sdr(&s0.h_u, s0.lambda(), &target, gamma, e_min, sigma2, &ctx.upa, &opts)?.f;
    let cf = search_beam_closed_form(&s0.h_u, s0.lambda(), &target, gamma, e_min, sigma2, &ctx.upa);
    let user_mrt = mrt(&users[0].paths[0].angle, &ctx.upa);
    let beams: [(&'static str, &isac_core::CVec); 3] = [("mrt_user1", &user_mrt), ("search_sdr", &sdr), ("search_closed_form", &cf)];
    let mut pattern = Vec::new();
    for (name, f) in beams {
        let norm = f.norm_squared();
        for az in 0..=180 {
            for ze in 0..=180 {
                let a = steering_vector(&ctx.upa, &AngleAzZe { azimuth: az as f64, zenith: ze as f64 });
                let g = a.dot(f).norm_sqr() / norm;
                pattern.push(PatternRow { beam: name, azimuth_deg: az as f64, zenith_deg: ze as f64, gain_db: db(g) });
            }
        }
    }
    let window = SweepWindow { schedule: isac_core::array::sweep_schedule(&ctx.upa, ctx.upa.elements())?, q_start: 0 };
    let mut table = Vec::new();
    for (u, s) in stats.iter().enumerate() {
        for b in 0..window.schedule.beam_count() {
            let angle = window.schedule.beam(b);
            let p_sdr = search_beam_sdr(&s.h_u, s.lambda(), &angle, gamma, e_min, sigma2, &ctx.upa, &opts)?.power;
            let p_cf = search_beam_closed_form(&s.h_u, s.lambda(), &angle, gamma, e_min, sigma2, &ctx.upa).norm_squared();
            table.push(SearchPowerRow {
                user: u + 1,
                beam_index: b,
                sensing_azimuth_deg: angle.azimuth,
                sensing_zenith_deg: angle.zenith,
                power_sdr_mw: p_sdr,
                power_closed_form_mw: p_cf,
                gap_db: db(p_cf) - db(p_sdr),
            });
        }
    }
    if let Some(dir) = out {
        write_csv(&dir.join("beampattern.csv"), "beampattern", &pattern)?;
        write_csv(&dir.join("search_power.csv"), "search-power", &table)?;
    }
    Ok((pattern, table))
}

#[derive(Debug, Clone, Serialize)]
pub struct CrlbRow {
    pub kappa_p: f64,
    pub kappa_q: f64,
    pub sensing_power_dbm: f64,
    pub acrb_delay_s2: f64,
    pub acrb_doppler_hz2: f64,
    pub crb_range_m: f64,
    pub crb_velocity_mps: f64,
    pub delay_resolution_ns: f64,
    pub doppler_resolution_hz: f64,
}

/// ACRB and resolution against the sensing fraction, for the first target of
/// the first scene illuminated by a unit-power MRT beam, at every sweep power.
pub fn crlb(ctx: &Context, out: Option<&Path>) -> Result<Vec<CrlbRow>, CliError> {
    let scene = ctx.scenes[0].build(&ctx.num, ctx.cfg.seed)?;
    let t = scene.targets.first().ok_or_else(|| CliError::Config("crlb needs a target".into()))?;
    let gain2 = t.alpha.norm_sqr() * ctx.upa.elements() as f64;
    let mut rows = Vec::new();
    for &p in &ctx.powers {
        for k in 1..=10 {
            let kappa = k as f64 / 10.0;
            let r = acrb(&ctx.num, kappa, kappa, gain2, dbm_to_mw(p), &ctx.upa)?;
            let (dt, df) = resolution(&ctx.num, kappa, kappa)?;
            rows.push(CrlbRow {
                kappa_p: kappa,
                kappa_q: kappa,
                sensing_power_dbm: p,
                acrb_delay_s2: r.acrb_delay,
                acrb_doppler_hz2: r.acrb_doppler,
                crb_range_m: SPEED_OF_LIGHT * r.acrb_delay.sqrt() / 2.0,
                crb_velocity_mps: SPEED_OF_LIGHT * r.acrb_doppler.sqrt() / (2.0 * ctx.num.f_c),
                delay_resolution_ns: dt * 1e9,
                doppler_resolution_hz: df,
            });
        }
    }
    if let Some(dir) = out {
        write_csv(&dir.join("crlb.csv"), "crlb", &rows)?;
    }
    Ok(rows)
}
