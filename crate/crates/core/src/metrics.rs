//! Bounds and scores: averaged Cramér-Rao bounds, resolution, the dedicated
//! MRT rate in closed form, and detection matching with miss penalties.

use crate::array::Upa;
use crate::scene::{OfdmNumerology, TargetSpec};
use crate::sensing::Detection;
use crate::{IsacError, Result};

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcrbReport {
    /// s²
    pub acrb_delay: f64,
    /// Hz²
    pub acrb_doppler: f64,
    pub kappa_p: f64,
    pub kappa_q: f64,
    pub p_tx_s: f64,
    pub gain2: f64,
}

/// ACRB_τ = 3N0 / (2π² P_s g² (κ_P²P²−1) Q MN Δf) and
/// ACRB_fD = 3N0Δf / (2π² P_s g² (κ_Q²Q²−1) Q MN T_O²), with g² = |α aᵀf̄|².
pub fn acrb(num: &OfdmNumerology, kappa_p: f64, kappa_q: f64, gain2: f64, p_tx_s: f64, upa: &Upa) -> Result<AcrbReport> {
    let (p, q) = (num.p_count as f64, num.q_count as f64);
    let dp = kappa_p * kappa_p * p * p - 1.0;
    let dq = kappa_q * kappa_q * q * q - 1.0;
    if !(dp > 0.0 && dq > 0.0) {
        return Err(IsacError::InvalidArgument(format!("degenerate sensing fractions ({kappa_p}, {kappa_q})")));
    }
    if !(gain2 > 0.0 && p_tx_s > 0.0) {
        return Err(IsacError::InvalidArgument("sensing power and gain must be positive".into()));
    }
    let mn = upa.elements() as f64;
    let common = 2.0 * PI * PI * p_tx_s * gain2 * q * mn;
    Ok(AcrbReport {
        acrb_delay: 3.0 * num.n0 / (common * dp * num.delta_f),
        acrb_doppler: 3.0 * num.n0 * num.delta_f / (common * dq * num.t_o * num.t_o),
        kappa_p,
        kappa_q,
        p_tx_s,
        gain2,
    })
}

/// (Δτ, Δf_D) = (1/(κ_P P Δf), 1/(κ_Q Q T_O))
pub fn resolution(num: &OfdmNumerology, kappa_p: f64, kappa_q: f64) -> Result<(f64, f64)> {
    if !(kappa_p > 0.0 && kappa_q > 0.0) {
        return Err(IsacError::InvalidArgument(format!("sensing fractions ({kappa_p}, {kappa_q})")));
    }
    Ok((
        1.0 / (kappa_p * num.p_count as f64 * num.delta_f),
        1.0 / (kappa_q * num.q_count as f64 * num.t_o),
    ))
}

/// C_U = ((1−κ)P/T_O) log2(1 + MN P_c |α|² / ((1−κ)σ²)) for one LoS user
/// served by MRT with average communication power P_c.
pub fn dedicated_rate_closed_form(num: &OfdmNumerology, kappa: f64, p_tx_c: f64, alpha_u: f64, upa: &Upa) -> Result<f64> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(IsacError::InvalidArgument(format!("sensing fraction {kappa}")));
    }
    let mn = upa.elements() as f64;
    let snr = mn * p_tx_c * alpha_u * alpha_u / ((1.0 - kappa) * num.sigma2());
    Ok((1.0 - kappa) * num.p_count as f64 / num.t_o * (1.0 + snr).log2())
}

/// Detection region around each true target, in normalised units: angle
/// offsets in direction-cosine bins (M·d·Δu, N·d·Δv) and delay offsets in
/// full-grid delay bins (PΔf·Δτ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gates {
    pub angle_bins: f64,
    pub delay_bins: f64,
}

impl Default for Gates {
    /// One resolution cell centred on the truth.
    fn default() -> Self {
        Self { angle_bins: 0.5, delay_bins: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub detected_count: usize,
    pub target_count: usize,
    pub rmse_azimuth: f64,
    pub rmse_zenith: f64,
    pub rmse_delay: f64,
    pub rmse_doppler: f64,
    pub matched: Vec<bool>,
    /// Squared errors per target (az°², ze°², s², Hz²) for pooling across trials.
    pub squared_errors: Vec<[f64; 4]>,
}

/// Missed targets score 90° in both angles, the target delay spread in delay
/// and the target Doppler spread in Doppler.
pub const MISSED_ANGLE_ERROR_DEG: f64 = 90.0;

fn spread(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = v.fold(f64::INFINITY, f64::min);
    if max.is_finite() {
        max - min
    } else {
        0.0
    }
}

pub fn match_and_score(
    truth: &[TargetSpec],
    est: &[Detection],
    gates: Gates,
    num: &OfdmNumerology,
    upa: &Upa,
) -> Result<ScoreReport> {
    if !(gates.angle_bins > 0.0 && gates.delay_bins > 0.0) {
        return Err(IsacError::InvalidArgument("gates must be positive".into()));
    }
    let scale_u = upa.m as f64 * upa.spacing;
    let scale_v = upa.n as f64 * upa.spacing;
    let bw = num.bandwidth();
    let coords = |angle: &crate::array::AngleAzZe, delay: f64| {
        let (u, v) = angle.direction_cosines();
        [u * scale_u, v * scale_v, delay * bw]
    };
    // Candidate pairs inside the gate, ordered by normalised distance; ties
    // resolved by estimate content so the result ignores estimate order.
    let mut pairs = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        let ct = coords(&t.angle, t.delay());
        for (j, e) in est.iter().enumerate() {
            let ce = coords(&e.angle, e.delay);
            let d = [(ce[0] - ct[0]).abs(), (ce[1] - ct[1]).abs(), (ce[2] - ct[2]).abs()];
            if d[0] <= gates.angle_bins && d[1] <= gates.angle_bins && d[2] <= gates.delay_bins {
                let dist = ((d[0] / gates.angle_bins).powi(2) + (d[1] / gates.angle_bins).powi(2) + (d[2] / gates.delay_bins).powi(2)).sqrt();
                pairs.push((dist, i, j));
            }
        }
    }
    let key = |j: usize| (est[j].delay, est[j].angle.azimuth, est[j].angle.zenith, est[j].doppler);
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then_with(|| {
            let (ka, kb) = (key(a.2), key(b.2));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2)).then(ka.3.total_cmp(&kb.3))
        })
    });
    let mut truth_to_est = vec![None; truth.len()];
    let mut used = vec![false; est.len()];
    for (_, i, j) in pairs {
        if truth_to_est[i].is_none() && !used[j] {
            truth_to_est[i] = Some(j);
            used[j] = true;
        }
    }
    let delay_spread = spread(truth.iter().map(TargetSpec::delay));
    let doppler_spread = spread(truth.iter().map(|t| t.doppler(num)));
    let mut squared = Vec::with_capacity(truth.len());
    for (i, t) in truth.iter().enumerate() {
        squared.push(match truth_to_est[i] {
            Some(j) => {
                let e = &est[j];
                [
                    (e.angle.azimuth - t.angle.azimuth).powi(2),
                    (e.angle.zenith - t.angle.zenith).powi(2),
                    (e.delay - t.delay()).powi(2),
                    (e.doppler - t.doppler(num)).powi(2),
                ]
            }
            None => [
                MISSED_ANGLE_ERROR_DEG.powi(2),
                MISSED_ANGLE_ERROR_DEG.powi(2),
                delay_spread.powi(2),
                doppler_spread.powi(2),
            ],
        });
    }
    let rmse = |k: usize| {
        if squared.is_empty() {
            0.0
        } else {
            (squared.iter().map(|s| s[k]).sum::<f64>() / squared.len() as f64).sqrt()
        }
    };
    let matched: Vec<bool> = truth_to_est.iter().map(Option::is_some).collect();
    Ok(ScoreReport {
        detected_count: matched.iter().filter(|&&m| m).count(),
        target_count: truth.len(),
        rmse_azimuth: rmse(0),
        rmse_zenith: rmse(1),
        rmse_delay: rmse(2),
        rmse_doppler: rmse(3),
        matched,
        squared_errors: squared,
    })
}

/// Root-mean-square errors pooled over every target of every report.
pub fn pooled_rmse(reports: &[ScoreReport]) -> [f64; 4] {
    let mut acc = [0.0; 4];
    let mut n = 0usize;
    for r in reports {
        for s in &r.squared_errors {
            for k in 0..4 {
                acc[k] += s[k];
            }
            n += 1;
        }
    }
    if n == 0 {
        return [0.0; 4];
    }
    acc.map(|v| (v / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::AngleAzZe;
    use crate::C64;

    fn num() -> OfdmNumerology {
        OfdmNumerology::full_scale()
    }

    #[test]
    fn acrb_table_one_baseline() {
        // Hand evaluation with N0 = 10^(−16.9) mW/Hz, g² = 1e−12, P_s = 1 mW, MN = 64.
        let r = acrb(&num(), 1.0, 1.0, 1e-12, 1.0, &Upa::half_wavelength(8, 8)).unwrap();
        assert!((r.acrb_delay / 2.320_228_931_916_447_3e-22 - 1.0).abs() < 1e-12);
        assert!((r.acrb_doppler / 3.079_204_803_341_255_2e-2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn acrb_scaling() {
        let upa = Upa::half_wavelength(8, 8);
        let a = acrb(&num(), 1.0, 1.0, 1e-12, 1.0, &upa).unwrap();
        let h = acrb(&num(), 0.5, 1.0, 1e-12, 1.0, &upa).unwrap();
        assert!((h.acrb_delay / a.acrb_delay - 4.0).abs() < 1e-4);
        let d = acrb(&num(), 1.0, 1.0, 1e-12, 2.0, &upa).unwrap();
        assert!((d.acrb_delay / a.acrb_delay - 0.5).abs() < 1e-12);
        assert!((d.acrb_doppler / a.acrb_doppler - 0.5).abs() < 1e-12);
        assert!(acrb(&num(), 1.0 / 1024.0, 1.0, 1e-12, 1.0, &upa).is_err());
    }

    #[test]
    fn resolution_table_one() {
        let (dt, dfd) = resolution(&num(), 1.0, 1.0).unwrap();
        assert!((dt - 8.138e-9).abs() < 0.001e-9);
        assert!((num().range_of_delay(dt) - 1.22).abs() < 0.005);
        assert!((dfd - 93.75).abs() < 0.01);
        assert!((num().velocity_of_doppler(dfd) - 0.502).abs() < 0.001);
        let (dt2, _) = resolution(&num(), 0.5, 1.0).unwrap();
        assert!((dt2 / dt - 2.0).abs() < 1e-12);
        assert!(resolution(&num(), 0.0, 1.0).is_err());
    }

    #[test]
    fn dedicated_rate_oracle_and_monotonicity() {
        let upa = Upa::half_wavelength(8, 8);
        let c = dedicated_rate_closed_form(&num(), 0.25, 1.0, 2.4e-5, &upa).unwrap();
        assert!((c / 371_180_493.059_026_6 - 1.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in [0.0, 0.25, 0.5, 0.9, 0.999999] {
            let r = dedicated_rate_closed_form(&num(), k, 1.0, 2.4e-5, &upa).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(prev < 1e-4 * c);
        assert!(dedicated_rate_closed_form(&num(), 1.0, 1.0, 2.4e-5, &upa).is_err());
    }

    fn target(az: f64, ze: f64, range: f64) -> TargetSpec {
        TargetSpec { angle: AngleAzZe::new(az, ze).unwrap(), range, velocity: 0.0, alpha: C64::new(1.0, 0.0), rcs_dbsm: None }
    }

    fn perfect(t: &TargetSpec) -> Detection {
        Detection {
            angle: t.angle,
            delay: t.delay(),
            doppler: 0.0,
            range: t.range,
            velocity: 0.0,
            alpha: t.alpha,
            power: 1.0,
        }
    }

    #[test]
    fn scoring_rules() {
        let upa = Upa::half_wavelength(4, 4);
        let truth = vec![target(63.0, 109.0, 53.7), target(143.0, 112.0, 125.7), target(77.0, 109.0, 67.1)];
        let est: Vec<Detection> = truth.iter().map(perfect).collect();
        let s = match_and_score(&truth, &est, Gates::default(), &num(), &upa).unwrap();
        assert_eq!(s.detected_count, 3);
        assert_eq!(s.rmse_azimuth, 0.0);
        assert_eq!(s.rmse_delay, 0.0);

        let none = match_and_score(&truth, &[], Gates::default(), &num(), &upa).unwrap();
        assert_eq!(none.detected_count, 0);
        assert!((none.rmse_azimuth - 90.0).abs() < 1e-12);
        let spread = truth[1].delay() - truth[0].delay();
        assert!((none.rmse_delay - spread).abs() < 1e-18);

        let mut partial = est.clone();
        partial.remove(1);
        partial[0].angle.azimuth += 0.3;
        let p = match_and_score(&truth, &partial, Gates::default(), &num(), &upa).unwrap();
        assert_eq!(p.matched, vec![true, false, true]);
        let want = ((0.3f64.powi(2) + 90f64.powi(2)) / 3.0).sqrt();
        assert!((p.rmse_azimuth - want).abs() < 1e-9);

        let mut shuffled = est.clone();
        shuffled.reverse();
        assert_eq!(match_and_score(&truth, &shuffled, Gates::default(), &num(), &upa).unwrap(), s);
    }
}
