//! Per-angle processing: symbol-set selection, ZF extraction, equalization,
//! the delay-Doppler periodogram and scattering-coefficient recovery.

use std::f64::consts::TAU;

use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::array::{steering_vector, AngleAzZe, Upa};
use crate::beamform::{BeamPlan, SweepWindow};
use crate::gridsim::{ResourcePlan, SensingTensor, SymbolGrid};
use crate::linalg::cis;
use crate::scene::OfdmNumerology;
use crate::{CVec, IsacError, Result, C64};

/// Υ: sweep symbols whose beam satisfies −1/M ≤ d(cosφ_s − cosφ̂) < 1/M and
/// −1/N ≤ d(cosθ_s − cosθ̂) < 1/N.
pub fn symbol_set_for_angle(window: &SweepWindow, angle: &AngleAzZe) -> Result<Vec<usize>> {
    let sched = &window.schedule;
    let (m, n) = sched.grid;
    let d = sched.spacing;
    let hx = d * angle.azimuth.to_radians().cos();
    let hz = d * angle.zenith.to_radians().cos();
    let (wx, wz) = (1.0 / m as f64, 1.0 / n as f64);
    let inside = |gap: f64, w: f64| -w <= gap && gap < w;
    let out: Vec<usize> = (0..sched.beam_count())
        .filter(|&b| {
            let (sx, sz) = sched.beam_frequencies(b);
            inside(sx - hx, wx) && inside(sz - hz, wz)
        })
        .flat_map(|b| window.symbols_of_beam(b))
        .collect();
    if out.is_empty() {
        return Err(IsacError::NoCoverage);
    }
    Ok(out)
}

/// Y[p, q] = f_zfᴴ 𝒴[:, p, q] stored at q·P + p.
#[derive(Debug, Clone)]
pub struct AngleGridSignal {
    pub p_count: usize,
    pub q_count: usize,
    pub values: Vec<C64>,
}

impl AngleGridSignal {
    pub fn get(&self, p: usize, q: usize) -> C64 {
        self.values[q * self.p_count + p]
    }
}

pub fn extract_angle_grid(tensor: &SensingTensor, f_zf: &CVec) -> Result<AngleGridSignal> {
    if f_zf.len() != tensor.mn {
        return Err(IsacError::DimensionMismatch { expected: tensor.mn, got: f_zf.len() });
    }
    let fc: Vec<C64> = f_zf.iter().map(|x| x.conj()).collect();
    let values = tensor.samples.par_chunks(tensor.mn).map(|col| col.iter().zip(&fc).map(|(y, f)| y * f).sum()).collect();
    Ok(AngleGridSignal { p_count: tensor.p_count, q_count: tensor.q_count, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Every RE counts equally.
    Uniform,
    /// REs weighted by |β̂|², the matched-filter combination of the raw samples.
    GainSquared,
}

pub enum Equalizer<'a> {
    /// Divide by b_{p,q} only.
    Symbols(&'a SymbolGrid),
    /// Divide by β̂ = âᵀ f_{role(p,q), q} b_{p,q}.
    Equivalent { angle: AngleAzZe, upa: &'a Upa, plan: &'a ResourcePlan, beams: &'a BeamPlan, symbols: &'a SymbolGrid },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualizedRe {
    pub p: usize,
    pub q: usize,
    pub value: C64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Equalized {
    pub entries: Vec<EqualizedRe>,
    /// REs dropped because their divisor fell below the floor.
    pub excluded: usize,
}

/// Equalizes the listed REs. Divisors below 1e−12·√(1/P) drop the RE.
pub fn equalize(y: &AngleGridSignal, res: &[(usize, usize)], eq: &Equalizer<'_>, weighting: Weighting) -> Result<Equalized> {
    let floor = 1e-12 * (1.0 / y.p_count as f64).sqrt();
    let a_hat = match eq {
        Equalizer::Equivalent { angle, upa, .. } => Some(steering_vector(upa, angle)),
        Equalizer::Symbols(_) => None,
    };
    let mut out = Equalized::default();
    for &(p, q) in res {
        let div = match eq {
            Equalizer::Symbols(s) => s.get(p, q),
            Equalizer::Equivalent { plan, beams, symbols, .. } => {
                let role = plan.role(p, q);
                let f = beams.get(q, role).ok_or_else(|| IsacError::MissingBeam { q, role: role.to_string() })?;
                a_hat.as_ref().expect("set for equivalent mode").dot(f) * symbols.get(p, q)
            }
        };
        if !(div.norm() >= floor) {
            out.excluded += 1;
            continue;
        }
        let weight = match weighting {
            Weighting::Uniform => 1.0,
            Weighting::GainSquared => div.norm_sqr(),
        };
        out.entries.push(EqualizedRe { p, q, value: y.get(p, q) / div, weight });
    }
    Ok(out)
}

/// Per(τ, f_D) = Σ w Ỹ e^{j2π(pΔfτ − qT_O f_D)} / Σ w on an oversampled grid.
/// `values` is indexed w·delay_bins + g with τ = g/(delay_bins·Δf) and
/// f_D = w/(doppler_bins·T_O).
#[derive(Debug, Clone)]
pub struct Periodogram {
    pub delay_bins: usize,
    pub doppler_bins: usize,
    pub values: Vec<C64>,
    pub delta_f: f64,
    pub t_o: f64,
    entries: Vec<EqualizedRe>,
    weight_sum: f64,
}

pub fn periodogram(eq: &Equalized, num: &OfdmNumerology, oversample: usize) -> Result<Periodogram> {
    if eq.entries.is_empty() {
        return Err(IsacError::Empty("periodogram RE set"));
    }
    if oversample == 0 {
        return Err(IsacError::InvalidArgument("oversample must be at least 1".into()));
    }
    let weight_sum: f64 = eq.entries.iter().map(|e| e.weight).sum();
    if !(weight_sum > 0.0) {
        return Err(IsacError::NearZero(weight_sum));
    }
    let (nd, nw) = (oversample * num.p_count, oversample * num.q_count);
    let mut planner = FftPlanner::<f64>::new();
    let fwd_q = planner.plan_fft_forward(nw);
    let inv_p = planner.plan_fft_inverse(nd);

    let mut rows: Vec<Option<Vec<C64>>> = vec![None; num.p_count];
    for e in &eq.entries {
        let row = rows[e.p].get_or_insert_with(|| vec![C64::default(); nw]);
        row[e.q] += e.value * (e.weight / weight_sum);
    }
    rows.par_iter_mut().for_each(|r| {
        if let Some(r) = r {
            fwd_q.process(r);
        }
    });
    let cols: Vec<Vec<C64>> = (0..nw)
        .into_par_iter()
        .map(|w| {
            let mut line = vec![C64::default(); nd];
            for (p, r) in rows.iter().enumerate() {
                if let Some(r) = r {
                    line[p] = r[w];
                }
            }
            inv_p.process(&mut line);
            line
        })
        .collect();
    Ok(Periodogram {
        delay_bins: nd,
        doppler_bins: nw,
        values: cols.concat(),
        delta_f: num.delta_f,
        t_o: num.t_o,
        entries: eq.entries.clone(),
        weight_sum,
    })
}

/// Peak-picking settings for [`pick_delay_doppler`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakOptions {
    /// Peaks below this fraction of the maximum |Per|² are ignored.
    pub relative_threshold: f64,
    pub max_peaks: usize,
    /// A weaker peak closer in delay than this many resolution cells of the
    /// RE set to an accepted one is dropped.
    pub delay_suppression_cells: f64,
    /// Newton refinement on the exact periodogram after interpolation.
    pub polish: bool,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self { relative_threshold: 0.25, max_peaks: 8, delay_suppression_cells: 0.5, polish: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDopplerPeak {
    pub delay: f64,
    pub doppler: f64,
    pub value: C64,
}

impl Periodogram {
    /// Exact Per at normalised coordinates x = τΔf, y = f_D·T_O.
    pub fn evaluate(&self, x: f64, y: f64) -> C64 {
        self.exact(x, y).0
    }

    /// Per and its first and second derivatives in (x, y).
    fn exact(&self, x: f64, y: f64) -> (C64, [C64; 2], [C64; 3]) {
        let mut s = C64::default();
        let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (C64::default(), C64::default(), C64::default(), C64::default(), C64::default());
        for e in &self.entries {
            let (p, q) = (e.p as f64, e.q as f64);
            let t = e.value * e.weight * cis(TAU * (p * x - q * y));
            let (dx, dy) = (C64::new(0.0, TAU * p), C64::new(0.0, -TAU * q));
            s += t;
            sx += t * dx;
            sy += t * dy;
            sxx += t * dx * dx;
            sxy += t * dx * dy;
            syy += t * dy * dy;
        }
        let k = 1.0 / self.weight_sum;
        (s * k, [sx * k, sy * k], [sxx * k, sxy * k, syy * k])
    }

    fn power_derivatives(&self, x: f64, y: f64) -> (f64, [f64; 2], [f64; 3]) {
        let (s, d1, d2) = self.exact(x, y);
        let g = [2.0 * (s.conj() * d1[0]).re, 2.0 * (s.conj() * d1[1]).re];
        let h = [
            2.0 * (d1[0].norm_sqr() + (s.conj() * d2[0]).re),
            2.0 * ((d1[0].conj() * d1[1]).re + (s.conj() * d2[1]).re),
            2.0 * (d1[1].norm_sqr() + (s.conj() * d2[2]).re),
        ];
        (s.norm_sqr(), g, h)
    }

    /// Newton ascent of |Per|² staying within one oversampled bin of (x0, y0).
    fn polish(&self, x0: f64, y0: f64) -> (f64, f64) {
        let (rx, ry) = (1.0 / self.delay_bins as f64, 1.0 / self.doppler_bins as f64);
        let (mut x, mut y) = (x0, y0);
        let (mut val, mut g, mut h) = self.power_derivatives(x, y);
        for _ in 0..30 {
            let det = h[0] * h[2] - h[1] * h[1];
            if !(h[0] < 0.0 && det > 0.0) {
                break;
            }
            let dx = -(h[2] * g[0] - h[1] * g[1]) / det;
            let dy = -(h[0] * g[1] - h[1] * g[0]) / det;
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..20 {
                let (nx, ny) = (x + t * dx, y + t * dy);
                if (nx - x0).abs() <= rx && (ny - y0).abs() <= ry {
                    let next = self.power_derivatives(nx, ny);
                    if next.0 > val {
                        x = nx;
                        y = ny;
                        (val, g, h) = next;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved || (t * dx).abs().max((t * dy).abs()) < 1e-15 {
                break;
            }
        }
        (x, y)
    }

    fn power(&self, g: usize, w: usize) -> f64 {
        self.values[w * self.delay_bins + g].norm_sqr()
    }

    fn delay_span(&self) -> f64 {
        let lo = self.entries.iter().map(|e| e.p).min().unwrap_or(0);
        let hi = self.entries.iter().map(|e| e.p).max().unwrap_or(0);
        (hi - lo + 1) as f64
    }
}

fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den < 0.0 {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Local maxima of |Per|² (8-neighbour, circular in both axes) above the
/// relative threshold, strongest first, each refined by a parabola through
/// |Per| along each axis and optionally by exact Newton ascent. Peaks within
/// the delay-suppression radius of a stronger accepted peak are dropped.
/// Doppler is reported in (−1/(2T_O), 1/(2T_O)].
pub fn pick_delay_doppler(per: &Periodogram, opts: &PeakOptions) -> Vec<DelayDopplerPeak> {
    let (nd, nw) = (per.delay_bins, per.doppler_bins);
    let max = per.values.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let thr = opts.relative_threshold * max;
    let mut cands = Vec::new();
    for w in 0..nw {
        for g in 0..nd {
            let c = per.power(g, w);
            if c < thr {
                continue;
            }
            let mut peak = true;
            'n: for dw in [nw - 1, 0, 1] {
                for dg in [nd - 1, 0, 1] {
                    if dw == 0 && dg == 0 {
                        continue;
                    }
                    let (gg, ww) = ((g + dg) % nd, (w + dw) % nw);
                    if (gg, ww) != (g, w) && per.power(gg, ww) >= c {
                        peak = false;
                        break 'n;
                    }
                }
            }
            if peak {
                cands.push((c, g, w));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mag = |g: usize, w: usize| per.power(g, w).sqrt();
    let mut refined: Vec<(f64, f64, f64)> = cands
        .iter()
        .take(opts.max_peaks.max(1) * 4)
        .map(|&(_, g, w)| {
            let og = parabolic_offset(mag((g + nd - 1) % nd, w), mag(g, w), mag((g + 1) % nd, w));
            let ow = parabolic_offset(mag(g, (w + nw - 1) % nw), mag(g, w), mag(g, (w + 1) % nw));
            let (mut x, mut y) = ((g as f64 + og) / nd as f64, (w as f64 + ow) / nw as f64);
            if opts.polish {
                (x, y) = per.polish(x, y);
            }
            (per.evaluate(x, y).norm_sqr(), x, y)
        })
        .collect();
    refined.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    let radius = opts.delay_suppression_cells / per.delay_span();
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for (_, x, y) in refined {
        if kept.len() >= opts.max_peaks {
            break;
        }
        if kept.iter().all(|&(kx, _)| (kx - x).abs() > radius) {
            kept.push((x, y));
        }
    }
    kept.into_iter()
        .map(|(x, y)| {
            let value = per.evaluate(x, y);
            let yw = y - y.round();
            let yw = if yw <= -0.5 { yw + 1.0 } else { yw };
            DelayDopplerPeak { delay: x / per.delta_f, doppler: yw / per.t_o, value }
        })
        .collect()
}

/// α̂ = Per / (f_zfᴴâ · âᵀf_tx) with a transmit beam, Per / (f_zfᴴâ) without.
pub fn estimate_alpha(peak: C64, f_zf: &CVec, angle: &AngleAzZe, upa: &Upa, f_tx: Option<&CVec>) -> Result<C64> {
    let a = steering_vector(upa, angle);
    let mut den = f_zf.dotc(&a);
    if let Some(f) = f_tx {
        den *= a.dot(f);
    }
    if !(den.norm() > 1e-12) {
        return Err(IsacError::NearZero(den.norm()));
    }
    Ok(peak / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::Upa;

    fn small() -> OfdmNumerology {
        OfdmNumerology::new(16, 12, 120e3, 0.6e-6, 28e9, -169.0).unwrap()
    }

    fn tone_entries(num: &OfdmNumerology, x0: f64, y0: f64, amp: C64) -> Equalized {
        let mut out = Equalized::default();
        for q in 0..num.q_count {
            for p in 0..num.p_count {
                let value = amp * cis(-TAU * (p as f64 * x0 - q as f64 * y0));
                out.entries.push(EqualizedRe { p, q, value, weight: 1.0 });
            }
        }
        out
    }

    #[test]
    fn off_grid_tone_is_recovered_exactly() {
        let num = small();
        let (x0, y0) = (0.2137, -0.1813);
        let amp = C64::new(0.3, -0.7);
        let per = periodogram(&tone_entries(&num, x0, y0, amp), &num, 4).unwrap();
        let peaks = pick_delay_doppler(&per, &PeakOptions::default());
        assert_eq!(peaks.len(), 1);
        let pk = peaks[0];
        assert!((pk.delay * num.delta_f - x0).abs() < 1e-9);
        assert!((pk.doppler * num.t_o - y0).abs() < 1e-9);
        assert!((pk.value - amp).norm() < 1e-9);
    }

    #[test]
    fn grid_values_match_exact_evaluation() {
        let num = small();
        let eq = tone_entries(&num, 0.31, 0.07, C64::new(1.0, 0.5));
        let per = periodogram(&eq, &num, 2).unwrap();
        for (g, w) in [(0, 0), (5, 3), (31, 23), (17, 9)] {
            let x = g as f64 / per.delay_bins as f64;
            let y = w as f64 / per.doppler_bins as f64;
            assert!((per.values[w * per.delay_bins + g] - per.evaluate(x, y)).norm() < 1e-10);
        }
    }

    #[test]
    fn periodogram_is_linear_and_weight_scale_free() {
        let num = small();
        let a = tone_entries(&num, 0.1, 0.2, C64::new(1.0, 0.0));
        let b = tone_entries(&num, 0.6, -0.3, C64::new(0.0, 2.0));
        let mut sum = a.clone();
        for (s, e) in sum.entries.iter_mut().zip(&b.entries) {
            s.value += e.value * 3.0;
        }
        let (pa, pb, ps) = (periodogram(&a, &num, 1).unwrap(), periodogram(&b, &num, 1).unwrap(), periodogram(&sum, &num, 1).unwrap());
        for k in 0..ps.values.len() {
            assert!((ps.values[k] - pa.values[k] - pb.values[k] * 3.0).norm() < 1e-10);
        }
        let mut heavy = a.clone();
        heavy.entries.iter_mut().for_each(|e| e.weight = 7.5);
        let ph = periodogram(&heavy, &num, 1).unwrap();
        assert!(ph.values.iter().zip(&pa.values).all(|(x, y)| (x - y).norm() < 1e-12));
    }

    #[test]
    fn periodogram_rejects_degenerate_input() {
        let num = small();
        assert!(periodogram(&Equalized::default(), &num, 2).is_err());
        assert!(periodogram(&tone_entries(&num, 0.0, 0.0, C64::new(1.0, 0.0)), &num, 0).is_err());
    }

    #[test]
    fn suppression_keeps_one_peak_per_delay_cell() {
        let num = small();
        let mut eq = tone_entries(&num, 0.25, 0.1, C64::new(1.0, 0.0));
        let other = tone_entries(&num, 0.25 + 0.2 / num.p_count as f64, -0.3, C64::new(0.9, 0.0));
        for (s, e) in eq.entries.iter_mut().zip(&other.entries) {
            s.value += e.value;
        }
        let per = periodogram(&eq, &num, 4).unwrap();
        let opts = PeakOptions { relative_threshold: 0.5, ..Default::default() };
        assert_eq!(pick_delay_doppler(&per, &opts).len(), 1);
        let loose = PeakOptions { delay_suppression_cells: 0.0, ..opts };
        assert_eq!(pick_delay_doppler(&per, &loose).len(), 2);
    }

    #[test]
    fn zero_forcing_nulls_the_other_direction() {
        let upa = Upa::half_wavelength(4, 4);
        let (a1, a2) = (AngleAzZe::new(60.0, 100.0).unwrap(), AngleAzZe::new(120.0, 80.0).unwrap());
        let (s1, s2) = (steering_vector(&upa, &a1), steering_vector(&upa, &a2));
        // f = s2 minus its projection on s1
        let f_zf = &s2 - &s1 * (s1.dotc(&s2) / s1.norm_squared());
        let mut t = SensingTensor::zeros(upa.elements(), 3, 2, 0.0);
        for q in 0..2 {
            for p in 0..3 {
                let c = cis(0.4 * (p + 3 * q) as f64);
                for (x, s) in t.column_mut(p, q).iter_mut().zip(s1.iter().zip(s2.iter())) {
                    *x = s.0 * c + s.1 * 2.0;
                }
            }
        }
        let y = extract_angle_grid(&t, &f_zf).unwrap();
        let expect = f_zf.dotc(&s2) * 2.0;
        for q in 0..2 {
            for p in 0..3 {
                assert!((y.get(p, q) - expect).norm() < 1e-9);
            }
        }
        assert!(extract_angle_grid(&t, &CVec::zeros(3)).is_err());
    }

    #[test]
    fn alpha_round_trip() {
        let upa = Upa::half_wavelength(4, 2);
        let angle = AngleAzZe::new(70.0, 95.0).unwrap();
        let a = steering_vector(&upa, &angle);
        let f_tx = a.map(|x| x.conj()) * C64::new(0.1, 0.05);
        let alpha = C64::new(-2e-7, 5e-7);
        let peak = alpha * a.dotc(&a) * a.dot(&f_tx);
        let est = estimate_alpha(peak, &a, &angle, &upa, Some(&f_tx)).unwrap();
        assert!((est - alpha).norm() < 1e-18);
        assert!(estimate_alpha(peak, &CVec::zeros(8), &angle, &upa, None).is_err());
    }
}
