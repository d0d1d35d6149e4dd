use isac_core::array::{sweep_schedule, AngleAzZe, Upa};
use isac_core::beamform::{mrt, search_beam_sdr, BeamPlan, QcqpOptions, Stage, SweepWindow};
use isac_core::gridsim::{build_resource_plan, draw_symbols, synth_sensing_tensor, Allocation, Role};
use isac_core::linalg::real;
use isac_core::scene::{channel_covariance, OfdmNumerology, PathSpec, TargetSpec};
use isac_core::sensing::{run_chain, ChainConfig, ChainInputs, KaPolicy};
use isac_core::C64;

fn on_grid_target(num: &OfdmNumerology, az: f64, ze: f64, g: usize, w: i64, alpha: C64) -> TargetSpec {
    let delay = g as f64 / (num.p_count as f64 * num.delta_f);
    let doppler = w as f64 / (num.q_count as f64 * num.t_o);
    TargetSpec {
        angle: AngleAzZe::new(az, ze).unwrap(),
        range: num.range_of_delay(delay),
        velocity: num.velocity_of_doppler(doppler),
        alpha,
        rcs_dbsm: None,
    }
}

fn targets(num: &OfdmNumerology) -> Vec<TargetSpec> {
    vec![
        on_grid_target(num, 60.0, 100.0, 11, 16, C64::from_polar(8e-7, 0.3)),
        on_grid_target(num, 125.0, 110.0, 26, -32, C64::from_polar(8e-7, 1.9)),
        on_grid_target(num, 95.0, 65.0, 17, 0, C64::from_polar(8e-7, -2.2)),
    ]
}

fn check(alloc: Allocation) {
    let num = OfdmNumerology::desk_scale();
    let upa = Upa::half_wavelength(4, 4);
    let user = vec![PathSpec { alpha: C64::new(2.4e-5, 0.0), angle: AngleAzZe::new(106.0, 41.0).unwrap(), delay: 0.0, doppler: 0.0 }];
    let plan = build_resource_plan(&num, 1, alloc, 0.5, 0.5, 128, 128).unwrap();
    let mut beams = BeamPlan::new(upa.elements(), num.q_count);
    let stats = channel_covariance(&user, &upa, &num, &plan.user_set(0)).unwrap();
    let sigma2 = num.sigma2();
    match alloc {
        Allocation::ZeroOverhead => {
            let window = SweepWindow { schedule: sweep_schedule(&upa, num.q_count).unwrap(), q_start: 0 };
            for b in 0..upa.elements() {
                let s = search_beam_sdr(&stats.h_u, stats.lambda(), &window.schedule.beam(b), 1.0, 1e-3, sigma2, &upa, &QcqpOptions::default()).unwrap();
                let h = beams.push_vector(s.f);
                for q in window.symbols_of_beam(b) {
                    beams.assign(q, Role::User(0), h);
                }
            }
            beams.sweep = Some(window);
        }
        Allocation::Dedicated => {
            beams.set_all(Role::User(0), stats.h_u.clone());
            let window = SweepWindow { schedule: sweep_schedule(&upa, plan.q_len).unwrap(), q_start: plan.q_start };
            for b in 0..upa.elements() {
                let h = beams.push_vector(mrt(&window.schedule.beam(b), &upa) * real(0.25));
                for q in window.symbols_of_beam(b) {
                    beams.assign(q, Role::Sensing, h);
                }
            }
            beams.sweep = Some(window);
        }
    }
    let truth = targets(&num);
    let symbols = draw_symbols(7, &num);
    let tensor = synth_sensing_tensor(&truth, &upa, &num, &plan, &beams, &symbols, None).unwrap();
    let cfg = ChainConfig { smoothing: (2, 2), sources: KaPolicy::Known(3), ..Default::default() };
    let inp = ChainInputs { tensor: &tensor, symbols: &symbols, plan: &plan, beams: &beams, upa: &upa, num: &num, stage: Stage::Search };
    let report = run_chain(&inp, &cfg).unwrap();
    assert_eq!(report.excluded_res, 0);
    for t in &truth {
        let d = report
            .detections
            .iter()
            .find(|d| (d.angle.azimuth - t.angle.azimuth).abs() < 1.0 && (d.angle.zenith - t.angle.zenith).abs() < 1.0)
            .unwrap_or_else(|| panic!("{alloc:?}: no detection near {:?}; got {:#?}", t.angle, report.detections));
        assert!((d.delay - t.delay()).abs() < 1e-12, "{alloc:?} delay {} vs {}", d.delay, t.delay());
        assert!((d.doppler - t.doppler(&num)).abs() < 1e-6, "{alloc:?} doppler {} vs {}", d.doppler, t.doppler(&num));
        let rel = (d.alpha - t.alpha).norm() / t.alpha.norm();
        assert!(rel < 1e-6, "{alloc:?} alpha error {rel:e}");
    }
}

#[test]
fn noiseless_search_recovers_on_grid_targets_zero_overhead() {
    check(Allocation::ZeroOverhead);
}

#[test]
fn noiseless_search_recovers_on_grid_targets_dedicated() {
    check(Allocation::Dedicated);
}
