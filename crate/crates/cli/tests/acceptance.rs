//! Acceptance run: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so every line is printed; exits non-zero when any criterion fails.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isac_core::array::{AngleAzZe, Upa};
use isac_core::beamform::{mrt, search_beam_closed_form, search_beam_sdr, BeamPlan, QcqpOptions, Stage};
use isac_core::gridsim::{build_resource_plan, draw_symbols, sum_rate, synth_sensing_tensor, Allocation, Role};
use isac_core::linalg::real;
use isac_core::metrics::{acrb, dedicated_rate_closed_form};
use isac_core::rng::complex_normal;
use isac_core::scene::{alpha_magnitude_from_rcs, OfdmNumerology, PathSpec, TargetSpec, UeChannel};
use isac_core::sensing::{angle_stage, run_chain, ChainConfig, ChainInputs, Denoise, KaPolicy};
use isac_core::{CVec, C64};
use isac_sim::config::{scaled_denoise_keep, SceneSource, Scheme};
use isac_sim::experiments::{
    power_for_rmse, run_comm, run_search, run_sensing, run_trial, simulate, Context, SummaryRow, TrialPoint,
};
use isac_sim::ExperimentConfig;

struct Outcome {
    pass: bool,
    detail: String,
    info: Vec<String>,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, info: Vec::new() }
}

const DESK_USERS: &str = include_str!("../scenes/desk_users.toml");

fn context_with_scene(cfg: ExperimentConfig, label: &str, text: String) -> Context {
    let base = Context::new(cfg).expect("valid config");
    Context { scenes: vec![SceneSource { label: label.into(), text }], ..base }
}

/// Minimum of max_i t_i/|g_iᴴd|² over unit directions d = cosβ e₁ + sinβ e^{jψ} e₂
/// in span{g₁, g₂}. Nested grid search: ψ on an outer grid, β on an inner one,
/// each zoomed around its incumbent.
fn brute_force_power(g: [&CVec; 2], t: [f64; 2]) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let n1 = g[0].norm();
    let e1 = g[0] / real(n1);
    let r = g[1] - &e1 * e1.dotc(g[1]);
    let e2 = if r.norm() > 1e-12 * g[1].norm() { &r / real(r.norm()) } else { e1.clone() };
    let (c21, c22) = (e1.dotc(g[1]).conj(), e2.dotc(g[1]).conj());
    let power = |b: f64, s: f64| {
        let d1 = n1 * b.cos();
        let d2 = c21 * b.cos() + c22 * C64::from_polar(b.sin(), s);
        (t[0] / (d1 * d1)).max(t[1] / d2.norm_sqr())
    };
    // min over x in [lo, hi] of f(x) by repeated n-point grids, keeping ±4 cells
    let zoom = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize, rounds: usize, clamp: bool| {
        let (mut c, mut w) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        let mut best = f64::INFINITY;
        for _ in 0..rounds {
            let mut nc = c;
            for i in 0..=n {
                let mut x = c - w + 2.0 * w * i as f64 / n as f64;
                if clamp {
                    x = x.clamp(lo, hi);
                }
                let v = f(x);
                if v < best {
                    (best, nc) = (v, x);
                }
            }
            c = nc;
            w *= 8.0 / n as f64;
        }
        best
    };
    let inner = |s: f64| zoom(&|b| power(b, s), 0.0, FRAC_PI_2, 60, 16, true);
    zoom(&inner, 0.0, 2.0 * PI, 120, 12, false)
}

struct Instance {
    h: CVec,
    lambda: f64,
    angle: AngleAzZe,
    e_min: f64,
    upa: Upa,
}

fn random_instance(rng: &mut ChaCha8Rng, orthogonal: bool) -> Instance {
    const SHAPES: [(usize, usize); 9] = [(4, 4), (4, 5), (5, 5), (4, 8), (6, 6), (5, 8), (7, 7), (6, 8), (8, 8)];
    let (m, n) = SHAPES[rng.random_range(0..SHAPES.len())];
    let upa = Upa::half_wavelength(m, n);
    let angle = AngleAzZe::new(rng.random_range(5.0..175.0), rng.random_range(5.0..175.0)).unwrap();
    let mut h = CVec::from_fn(m * n, |_, _| complex_normal(rng, 1.0));
    if orthogonal {
        let a = mrt(&angle, &upa);
        let proj = a.dotc(&h) / real(a.norm_squared());
        h -= a * proj;
    }
    h /= real(h.norm());
    Instance { h, lambda: 10f64.powf(rng.random_range(-6.0..-3.0)), angle, e_min: 10f64.powf(rng.random_range(-5.0..-1.0)), upa }
}

fn criteria_1_and_2() -> (Outcome, Outcome) {
    let num = OfdmNumerology::desk_scale();
    let sigma2 = num.sigma2();
    let opts = QcqpOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let (mut worst_gap, mut worst_slack, mut min_cf_margin) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut failures = 0;
    for _ in 0..500 {
        let inst = random_instance(&mut rng, false);
        let sol = match search_beam_sdr(&inst.h, inst.lambda, &inst.angle, 1.0, inst.e_min, sigma2, &inst.upa, &opts) {
            Ok(s) => s,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let a = mrt(&inst.angle, &inst.upa);
        let t = [sigma2 / (inst.lambda * inst.lambda), inst.upa.elements() as f64 * inst.e_min];
        let bf = brute_force_power([&inst.h, &a], t);
        worst_gap = worst_gap.max((sol.power - bf).abs() / bf);
        let ratio = (inst.h.dotc(&sol.f).norm_sqr() / t[0]).min(a.dotc(&sol.f).norm_sqr() / t[1]);
        worst_slack = worst_slack.max(1.0 - ratio);
        let cf = search_beam_closed_form(&inst.h, inst.lambda, &inst.angle, 1.0, inst.e_min, sigma2, &inst.upa);
        min_cf_margin = min_cf_margin.min((cf.norm_squared() - sol.power) / sol.power);
    }
    let secs = start.elapsed().as_secs_f64();
    let c1 = outcome(
        failures == 0 && worst_gap <= 1e-3 && worst_slack <= 1e-6 && secs < 60.0,
        format!("500 instances, {failures} solver failures, worst power gap to brute force {worst_gap:.2e}, worst slack {worst_slack:.2e}, {secs:.1} s"),
    );
    let mut worst_eq = 0.0f64;
    for _ in 0..200 {
        let inst = random_instance(&mut rng, true);
        let sol = search_beam_sdr(&inst.h, inst.lambda, &inst.angle, 1.0, inst.e_min, sigma2, &inst.upa, &opts).unwrap();
        let cf = search_beam_closed_form(&inst.h, inst.lambda, &inst.angle, 1.0, inst.e_min, sigma2, &inst.upa);
        worst_eq = worst_eq.max((cf.norm_squared() - sol.power).abs() / sol.power);
    }
    let c2 = outcome(
        min_cf_margin >= -1e-9 && worst_eq <= 1e-6,
        format!("min (P_cf - P_sdr)/P_sdr = {min_cf_margin:.2e} over 500 instances; orthogonal worst |gap| {worst_eq:.2e} over 200"),
    );
    (c1, c2)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.noise = false;
    let num = OfdmNumerology::desk_scale();
    let on_grid = [(60.0, 100.0, 11usize, 16i64, 0.3), (125.0, 110.0, 26, -32, 1.9), (95.0, 65.0, 17, 0, -2.2)];
    let mut text = String::from(DESK_USERS);
    for (az, ze, g, w, ph) in on_grid {
        let delay = g as f64 / (num.p_count as f64 * num.delta_f);
        let doppler = w as f64 / (num.q_count as f64 * num.t_o);
        text += &format!(
            "\n[[target]]\nazimuth_deg = {az}\nzenith_deg = {ze}\nrange_m = {:.17e}\nvelocity_mps = {:.17e}\nalpha_abs = 8e-7\nalpha_phase_deg = {}\n",
            num.range_of_delay(delay),
            num.velocity_of_doppler(doppler),
            f64::to_degrees(ph)
        );
    }
    let ctx = context_with_scene(cfg, "oracle", text);
    let (dt, dfd) = (1.0 / (4.0 * num.p_count as f64 * num.delta_f), 1.0 / (4.0 * num.q_count as f64 * num.t_o));
    let mut worst = [0.0f64; 4];
    let mut missing: Vec<String> = Vec::new();
    for scheme in [Scheme::Dedicated, Scheme::Zero] {
        let r = run_trial(&ctx, &TrialPoint { stage: Stage::Search, scheme, scene: 0, power_dbm: 20.0, seed: 1 }, None);
        let scene = ctx.scenes[0].build(&ctx.num, 1).unwrap();
        let Some(report) = r.report else {
            missing.push(format!("{} trial: {}", scheme.label(), r.row.status));
            continue;
        };
        for (i, t) in scene.targets.iter().enumerate() {
            let Some(d) = report
                .detections
                .iter()
                .find(|d| (d.angle.azimuth - t.angle.azimuth).abs() < 1.0 && (d.angle.zenith - t.angle.zenith).abs() < 1.0 && (d.delay - t.delay()).abs() < dt)
            else {
                missing.push(format!("{} T{}", scheme.label(), i + 1));
                continue;
            };
            let errs = [
                (d.angle.azimuth - t.angle.azimuth).abs().max((d.angle.zenith - t.angle.zenith).abs()),
                (d.delay - t.delay()).abs() / dt,
                (d.doppler - t.doppler(&num)).abs() / dfd,
                (d.alpha - t.alpha).norm() / t.alpha.norm(),
            ];
            for k in 0..4 {
                worst[k] = worst[k].max(errs[k]);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        missing.is_empty() && worst[0] < 1.0 && worst[1] < 1.0 && worst[2] < 1.0 && worst[3] < 1e-6 && secs < 300.0,
        format!(
            "both modes: worst angle error {:.1e} deg, delay {:.1e} bins, Doppler {:.1e} bins, alpha {:.1e} relative, missing [{}], {secs:.1} s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            missing.join(", ")
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.schemes = vec![Scheme::Zero];
    cfg.array = Some(isac_sim::config::ArrayConfig { m: 8, n: 8, spacing: 0.5 });
    let targets = include_str!("../scenes/paper_far.toml");
    let ctx = context_with_scene(cfg, "F", format!("{DESK_USERS}\n{targets}"));
    let keep = scaled_denoise_keep(&ctx.num);
    let seeds: Vec<u64> = (1..=50).collect();
    let hits = |power: f64, seed: u64, rule: Denoise| -> Vec<bool> {
        let pt = TrialPoint { stage: Stage::Search, scheme: Scheme::Zero, scene: 0, power_dbm: power, seed };
        let sim = simulate(&ctx, &pt).unwrap();
        let truth = sim.scene.distinct_angles();
        let mut chain = ctx.cfg.chain_config(&ctx.upa, truth.len());
        chain.denoise = rule;
        let st = angle_stage(&sim.inputs(&ctx, Stage::Search), &chain).unwrap();
        let (mu, nv) = (ctx.upa.m as f64 * ctx.upa.spacing, ctx.upa.n as f64 * ctx.upa.spacing);
        truth
            .iter()
            .map(|t| {
                let (u, v) = t.direction_cosines();
                st.angles.iter().any(|e| {
                    let (x, y) = e.angle.direction_cosines();
                    (x - u).abs() * mu <= 0.5 && (y - v).abs() * nv <= 0.5
                })
            })
            .collect()
    };
    // Calibration: the highest sweep power at which raw MUSIC still misses
    // the (143°, 112°) target in at least 80% of seeds.
    let mut chosen = None;
    let mut scan = Vec::new();
    for power in [16.0, 18.0, 20.0] {
        let miss = seeds.iter().filter(|&&s| !hits(power, s, Denoise::Off)[1]).count();
        scan.push(format!("{power} dBm: {miss}/50"));
        if miss * 10 >= seeds.len() * 8 {
            chosen = Some(power);
        }
    }
    let Some(power) = chosen else {
        return outcome(false, format!("no calibration point: raw misses {}", scan.join(", ")));
    };
    let all = |rule: Denoise| seeds.iter().filter(|&&s| hits(power, s, rule).iter().all(|&x| x)).count();
    let scaled = all(Denoise::KeepTop(keep));
    let mut o = outcome(
        scaled * 10 >= seeds.len() * 8,
        format!("8x8, 256x256, {power} dBm (raw misses {}); top-{keep} denoising recovers all three AoAs in {scaled}/50", scan.join(", ")),
    );
    let unscaled = all(Denoise::KeepTop(100));
    o.info.push(format!("top-100 denoising at the same point recovers all three AoAs in {unscaled}/50"));
    o
}

fn criterion_5() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.scenes = vec!["close".into()];
    let ctx = Context::new(cfg).unwrap();
    let power = 45.0;
    let mut counts = Vec::new();
    for scheme in [Scheme::Dedicated, Scheme::Zero] {
        let n = (1..=50u64)
            .filter(|&seed| {
                let r = run_trial(&ctx, &TrialPoint { stage: Stage::Search, scheme, scene: 0, power_dbm: power, seed }, None);
                match scheme {
                    Scheme::Dedicated => r.row.detected <= 2,
                    Scheme::Zero => r.row.detected == 3,
                }
            })
            .count();
        counts.push(n);
    }
    outcome(
        counts[0] >= 45 && counts[1] >= 45,
        format!("close scene at {power} dBm: dedicated detects <=2 in {}/50, zero-overhead detects 3 in {}/50", counts[0], counts[1]),
    )
}

fn criterion_6() -> Outcome {
    let full = OfdmNumerology::full_scale();
    let r = acrb(&full, 1.0, 1.0, 1e-12, 1.0, &Upa::half_wavelength(8, 8)).unwrap();
    let oracle = (r.acrb_delay / 2.320_228_931_916_447_3e-22 - 1.0).abs().max((r.acrb_doppler / 3.079_204_803_341_255_2e-2 - 1.0).abs());

    let num = OfdmNumerology::desk_scale();
    let upa = Upa::half_wavelength(4, 4);
    let angle = AngleAzZe::new(63.0, 109.0).unwrap();
    let alpha = C64::from_polar(alpha_magnitude_from_rcs(20.0, 53.7, &num).unwrap(), 0.3);
    let target = TargetSpec { angle, range: 53.7, velocity: 10.0, alpha, rcs_dbsm: Some(20.0) };
    let p_s = 0.01;
    let f_s = mrt(&angle, &upa) * real((p_s / upa.elements() as f64).sqrt());
    let chain = ChainConfig { smoothing: (2, 2), sources: KaPolicy::Known(1), ..Default::default() };
    let mut rmse = Vec::new();
    let mut bound = Vec::new();
    for kappa_p in [0.25, 0.5, 1.0] {
        let plan = build_resource_plan(&num, 1, Allocation::Dedicated, kappa_p, 1.0, 0, 0).unwrap();
        let mut beams = BeamPlan::new(upa.elements(), num.q_count);
        beams.set_all(Role::Sensing, f_s.clone());
        if kappa_p < 1.0 {
            beams.set_all(Role::User(0), mrt(&AngleAzZe::new(106.0, 41.0).unwrap(), &upa));
        }
        let mut sq = 0.0;
        let seeds = 50;
        for seed in 1..=seeds {
            let symbols = draw_symbols(seed, &num);
            let tensor = synth_sensing_tensor(std::slice::from_ref(&target), &upa, &num, &plan, &beams, &symbols, Some(seed)).unwrap();
            let inp = ChainInputs { tensor: &tensor, symbols: &symbols, plan: &plan, beams: &beams, upa: &upa, num: &num, stage: Stage::Track };
            let err = run_chain(&inp, &chain)
                .ok()
                .and_then(|rep| rep.detections.iter().map(|d| (d.delay - target.delay()).abs()).min_by(|a, b| a.total_cmp(b)))
                .unwrap_or(f64::INFINITY);
            sq += err * err;
        }
        rmse.push((sq / seeds as f64).sqrt());
        let gain2 = alpha.norm_sqr() * upa.elements() as f64;
        bound.push(acrb(&num, kappa_p, 1.0, gain2, p_s * kappa_p, &upa).unwrap().acrb_delay.sqrt());
    }
    let decreasing = rmse[0] > rmse[1] && rmse[1] > rmse[2];
    // The bound charges full-band noise N0·PΔf per RE; the simulated tensor
    // carries Δf·N0, so the matching bound is ACRB/P.
    let efficiency: Vec<String> = rmse.iter().zip(&bound).map(|(r, b)| format!("{:.2}", r / (b / (num.p_count as f64).sqrt()))).collect();
    let mut o = outcome(
        oracle < 1e-12 && decreasing && rmse[2] <= 2.0 * bound[2],
        format!(
            "ACRB oracle rel err {oracle:.1e}; delay RMSE (ps) at kappa_P 0.25/0.5/1: {:.3}/{:.3}/{:.3}, sqrt(ACRB) {:.3}/{:.3}/{:.3}",
            rmse[0] * 1e12,
            rmse[1] * 1e12,
            rmse[2] * 1e12,
            bound[0] * 1e12,
            bound[1] * 1e12,
            bound[2] * 1e12
        ),
    );
    o.info.push(format!("RMSE / sqrt(ACRB/P) at kappa_P 0.25/0.5/1: {}", efficiency.join("/")));
    o
}

fn criterion_7() -> Outcome {
    let cfg = ExperimentConfig::from_toml_str("scale = \"paper\"\nseeds = 1").unwrap();
    let ctx = Context::new(cfg).unwrap();
    let rows = run_comm(&ctx, None).unwrap();
    let mut violations = 0;
    let mut points = 0;
    let mut min_ratio = f64::INFINITY;
    for z in rows.iter().filter(|r| r.scheme == "zero") {
        let d = rows
            .iter()
            .find(|d| d.scheme == "dedicated" && d.stage == z.stage && d.scenario == z.scenario && d.power_dbm == z.power_dbm)
            .unwrap();
        points += 1;
        min_ratio = min_ratio.min(z.sum_rate_bps / d.sum_rate_bps);
        if !(z.sum_rate_bps > d.sum_rate_bps) || z.status != "ok" || d.status != "ok" {
            violations += 1;
        }
    }

    let num = OfdmNumerology::full_scale();
    let upa = Upa::half_wavelength(8, 8);
    let path = PathSpec { alpha: C64::new(2.4e-5, 0.0), angle: AngleAzZe::new(106.0, 41.0).unwrap(), delay: 0.0, doppler: 0.0 };
    let ch = UeChannel::new(&[path], &upa, &num).unwrap();
    let p_c = 1e-2;
    let mut worst_cu = 0.0f64;
    for (kp, kq) in [(0.5, 0.5), (0.5, 1.0), (0.25, 0.5)] {
        let plan = build_resource_plan(&num, 1, Allocation::Dedicated, kp, kq, 0, 0).unwrap();
        let kappa = plan.kappa();
        let mut beams = BeamPlan::new(upa.elements(), num.q_count);
        beams.set_all(Role::User(0), mrt(&path.angle, &upa) * real((p_c / (1.0 - kappa) / upa.elements() as f64).sqrt()));
        beams.set_all(Role::Sensing, CVec::zeros(upa.elements()));
        let sim = sum_rate(&plan, std::slice::from_ref(&ch), &beams, &num).unwrap();
        let closed = dedicated_rate_closed_form(&num, kappa, p_c, 2.4e-5, &upa).unwrap();
        worst_cu = worst_cu.max((sim / closed - 1.0).abs());
    }
    let cu: Vec<f64> = (0..=5).map(|k| dedicated_rate_closed_form(&num, k as f64 / 10.0, p_c, 2.4e-5, &upa).unwrap()).collect();
    let monotone = cu.windows(2).all(|w| w[1] < w[0]);
    outcome(
        violations == 0 && points == 40 && worst_cu <= 1e-9 && monotone,
        format!(
            "paper profile: zero-overhead > dedicated at {}/{points} points (min ratio {min_ratio:.3}); C_U sim vs closed form {worst_cu:.1e}; C_U decreasing in kappa: {monotone}",
            points - violations
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.scenes = vec!["far".into()];
    cfg.seeds = 20;
    let search_ctx = Context::new(cfg.clone()).unwrap();
    cfg.power_dbm = Some((0..14).map(|k| -20.0 + 5.0 * k as f64).collect());
    let track_ctx = Context::new(cfg).unwrap();
    let (_, search) = run_sensing(&search_ctx, Stage::Search, None).unwrap();
    let (_, track) = run_sensing(&track_ctx, Stage::Track, None).unwrap();
    let top = search_ctx.powers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut gaps = Vec::new();
    let mut parts = Vec::new();
    for scheme in ["dedicated", "zero"] {
        let reference: &SummaryRow = search.iter().find(|r| r.scheme == scheme && r.power_dbm == top).unwrap();
        let target = reference.rmse_angle_deg;
        let ps = power_for_rmse(&search, scheme, "F", target);
        let pt = power_for_rmse(&track, scheme, "F", target);
        let gap = match (ps, pt) {
            (Some(a), Some(b)) => a - b,
            _ => f64::NAN,
        };
        parts.push(format!("{scheme}: {target:.3} deg reached at {:.1} dBm searching, {:.1} dBm tracking, gap {gap:.1} dB", ps.unwrap_or(f64::NAN), pt.unwrap_or(f64::NAN)));
        gaps.push(gap);
    }
    outcome(gaps.iter().all(|&g| g >= 15.0), parts.join("; "))
}

fn criterion_9() -> Outcome {
    let cfg = ExperimentConfig::from_toml_str("seeds = 2\npower_dbm = [20.0, 40.0]").unwrap();
    let ctx = Context::new(cfg).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, threads) in dirs.iter().zip([1, 4]) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run_search(&ctx, Some(dir.path())).unwrap();
            run_comm(&ctx, Some(dir.path())).unwrap();
        });
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    let files = ["search_trials.csv", "search_summary.csv", "comm.csv"];
    let same = files.iter().all(|f| read(dirs[0].path(), f) == read(dirs[1].path(), f));
    outcome(same, format!("{} CSVs compared between 1 and 4 worker threads", files.len()))
}

fn report(k: u32, o: &Outcome) {
    println!("criterion {k}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    for line in &o.info {
        println!("    note: {line}");
    }
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let (c1, c2) = criteria_1_and_2();
    let steps: [(u32, fn() -> Outcome); 7] =
        [(3, criterion_3), (4, criterion_4), (5, criterion_5), (6, criterion_6), (7, criterion_7), (8, criterion_8), (9, criterion_9)];
    for (k, o) in [(1, c1), (2, c2)] {
        report(k, &o);
        failed += usize::from(!o.pass);
    }
    for (k, f) in steps {
        let o = f();
        report(k, &o);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed in {:.0} s", 9 - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
