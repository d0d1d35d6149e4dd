//! Spatially smoothed covariance, source counting and the MUSIC angle search.

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::array::{subarray_indices, AngleAzZe, Upa};
use crate::linalg::{cis, hermitian_eigen};
use crate::sensing::dd::DdTensor;
use crate::{CMat, IsacError, Result, C64};

/// Forward-backward smoothed covariance over every (I, J) subarray offset.
///
/// The full-array sample covariance (1/#bins)·Σ y yᴴ is formed once over
/// the non-zero DD bins; each subarray covariance is a principal submatrix
/// of it. The backward term is J R* J.
pub fn smoothed_covariance(dd: &DdTensor, upa: &Upa, i_count: usize, j_count: usize) -> Result<CMat> {
    if dd.mn != upa.elements() {
        return Err(IsacError::DimensionMismatch { expected: upa.elements(), got: dd.mn });
    }
    if i_count == 0 || j_count == 0 || i_count > upa.m || j_count > upa.n {
        return Err(IsacError::SubarrayOutOfRange { i: i_count, j: j_count, m_sub: upa.m, n_sub: upa.n });
    }
    let (m_sub, n_sub) = (upa.m - i_count + 1, upa.n - j_count + 1);
    let live: Vec<&[C64]> = dd.bins.chunks(dd.mn).filter(|c| c.iter().any(|x| x.norm_sqr() > 0.0)).collect();
    let mut r_full = CMat::zeros(dd.mn, dd.mn);
    if !live.is_empty() {
        let y = CMat::from_fn(dd.mn, live.len(), |r, c| live[c][r]);
        r_full = &y * y.adjoint();
        r_full /= C64::new(dd.bin_count() as f64, 0.0);
    }
    let l = m_sub * n_sub;
    let mut r = CMat::zeros(l, l);
    for i in 0..i_count {
        for j in 0..j_count {
            let idx = subarray_indices(upa, i, j, m_sub, n_sub)?;
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    r[(a, b)] += r_full[(ia, ib)];
                }
            }
        }
    }
    r /= C64::new((i_count * j_count) as f64, 0.0);
    let fb = CMat::from_fn(l, l, |a, b| 0.5 * (r[(a, b)] + r[(l - 1 - a, l - 1 - b)].conj()));
    Ok(crate::linalg::hermitize(&fb))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KaPolicy {
    Known(usize),
    /// Smallest k with λ_{k+1}/λ_1 below the ratio.
    EigenRatio(f64),
}

pub fn count_sources(r_fb: &CMat, policy: KaPolicy) -> usize {
    match policy {
        KaPolicy::Known(k) => k,
        KaPolicy::EigenRatio(ratio) => {
            let (vals, _) = hermitian_eigen(r_fb);
            let top = vals.first().copied().unwrap_or(0.0);
            if !(top > 0.0) {
                return 0;
            }
            (1..vals.len()).find(|&k| vals[k] / top < ratio).unwrap_or(vals.len())
        }
    }
}

/// Rectangular (azimuth, zenith) search grid in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleGrid {
    pub step_deg: f64,
    pub azimuth: (f64, f64),
    pub zenith: (f64, f64),
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self { step_deg: 0.5, azimuth: (0.0, 180.0), zenith: (0.0, 180.0) }
    }
}

impl AngleGrid {
    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|k| lo + k as f64 * step).collect()
    }

    pub fn azimuth_axis(&self) -> Vec<f64> {
        Self::axis(self.azimuth.0, self.azimuth.1, self.step_deg)
    }

    pub fn zenith_axis(&self) -> Vec<f64> {
        Self::axis(self.zenith.0, self.zenith.1, self.step_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    pub angle: AngleAzZe,
    pub spectrum_peak: f64,
}

/// MUSIC pseudo-spectrum 1/(aᴴ E_n E_nᴴ a) sampled on a grid. `values` is
/// azimuth-major: index ia·|zenith| + iz.
#[derive(Debug, Clone)]
pub struct MusicSpectrum {
    pub azimuth: Vec<f64>,
    pub zenith: Vec<f64>,
    pub values: Vec<f64>,
    pub noise_basis: CMat,
    pub upa_sub: Upa,
}

impl MusicSpectrum {
    pub fn at(&self, ia: usize, iz: usize) -> f64 {
        self.values[ia * self.zenith.len() + iz]
    }

    /// aᴴ E_n E_nᴴ a at direction cosines (u, v).
    pub fn null_projection(&self, u: f64, v: f64) -> f64 {
        self.derivatives(u, v).0
    }

    /// Value, gradient and Hessian of aᴴ E_n E_nᴴ a in (u, v).
    fn derivatives(&self, u: f64, v: f64) -> (f64, [f64; 2], [[f64; 2]; 3]) {
        let (ms, ns, d) = (self.upa_sub.m, self.upa_sub.n, self.upa_sub.spacing);
        let k = TAU * d;
        let mut val = 0.0;
        let mut g = [0.0; 2];
        let (mut huu, mut huv, mut hvv) = (0.0, 0.0, 0.0);
        for col in self.noise_basis.column_iter() {
            let (mut s, mut su, mut sv, mut suu, mut suv, mut svv) = (C64::default(), C64::default(), C64::default(), C64::default(), C64::default(), C64::default());
            for a in 0..ms {
                for b in 0..ns {
                    let e = col[a * ns + b].conj() * cis(k * (a as f64 * u + b as f64 * v));
                    let (da, db) = (C64::new(0.0, k * a as f64), C64::new(0.0, k * b as f64));
                    s += e;
                    su += e * da;
                    sv += e * db;
                    suu += e * da * da;
                    suv += e * da * db;
                    svv += e * db * db;
                }
            }
            val += s.norm_sqr();
            g[0] += 2.0 * (s.conj() * su).re;
            g[1] += 2.0 * (s.conj() * sv).re;
            huu += 2.0 * (su.norm_sqr() + (s.conj() * suu).re);
            hvv += 2.0 * (sv.norm_sqr() + (s.conj() * svv).re);
            huv += 2.0 * ((su.conj() * sv).re + (s.conj() * suv).re);
        }
        (val, g, [[huu, huv], [huv, hvv], [0.0, 0.0]])
    }

    /// Newton descent of the null-space projection from (u, v), never moving
    /// farther than `radius` in either coordinate.
    pub fn polish(&self, u0: f64, v0: f64, radius: f64) -> (f64, f64) {
        let (mut u, mut v) = (u0, v0);
        let (mut val, mut g, mut h) = self.derivatives(u, v);
        for _ in 0..30 {
            let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
            if !(h[0][0] > 0.0 && det > 0.0) {
                break;
            }
            let du = -(h[1][1] * g[0] - h[0][1] * g[1]) / det;
            let dv = -(h[0][0] * g[1] - h[0][1] * g[0]) / det;
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..20 {
                let (nu, nv) = (u + t * du, v + t * dv);
                if (nu - u0).abs() <= radius && (nv - v0).abs() <= radius {
                    let next = self.derivatives(nu, nv);
                    if next.0 < val {
                        u = nu;
                        v = nv;
                        (val, g, h) = next;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved || (t * du).abs().max((t * dv).abs()) < 1e-15 {
                break;
            }
        }
        (u, v)
    }
}

/// Splits the eigenvectors of `r_fb` into signal (largest k_a) and noise
/// subspaces and evaluates the pseudo-spectrum on `grid`, one zenith row per
/// task.
pub fn music_spectrum(r_fb: &CMat, k_a: usize, upa_sub: &Upa, grid: &AngleGrid) -> Result<MusicSpectrum> {
    let l = upa_sub.elements();
    if r_fb.nrows() != l || r_fb.ncols() != l {
        return Err(IsacError::DimensionMismatch { expected: l, got: r_fb.nrows() });
    }
    if k_a >= l {
        return Err(IsacError::InvalidArgument(format!("{k_a} sources need more than {l} subarray elements")));
    }
    if !(grid.step_deg > 0.0) {
        return Err(IsacError::InvalidArgument("grid step must be positive".into()));
    }
    let (_, vecs) = hermitian_eigen(r_fb);
    let noise_basis = vecs.columns(k_a, l - k_a).into_owned();
    let azimuth = grid.azimuth_axis();
    let zenith = grid.zenith_axis();
    let (ms, ns, d) = (upa_sub.m, upa_sub.n, upa_sub.spacing);
    let cols: Vec<Vec<f64>> = zenith
        .par_iter()
        .map(|&ze| {
            let theta = ze.to_radians();
            let az_phase: Vec<C64> = (0..ns).map(|b| cis(TAU * d * b as f64 * theta.cos())).collect();
            // c_k[a] = Σ_b conj(e_k[a, b])·a_z[b]
            let partial: Vec<Vec<C64>> = noise_basis
                .column_iter()
                .map(|e| (0..ms).map(|a| (0..ns).map(|b| e[a * ns + b].conj() * az_phase[b]).sum()).collect())
                .collect();
            azimuth
                .iter()
                .map(|&az| {
                    let u = az.to_radians().cos() * theta.sin();
                    let ax: Vec<C64> = (0..ms).map(|a| cis(TAU * d * a as f64 * u)).collect();
                    let den: f64 = partial.iter().map(|c| c.iter().zip(&ax).map(|(x, y)| x * y).sum::<C64>().norm_sqr()).sum();
                    1.0 / den.max(f64::MIN_POSITIVE)
                })
                .collect()
        })
        .collect();
    let nz = zenith.len();
    let mut values = vec![0.0; azimuth.len() * nz];
    for (iz, col) in cols.iter().enumerate() {
        for (ia, &x) in col.iter().enumerate() {
            values[ia * nz + iz] = x;
        }
    }
    Ok(MusicSpectrum { azimuth, zenith, values, noise_basis, upa_sub: *upa_sub })
}

fn parabolic_offset(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den < 0.0 {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// The `k_a` largest strict local maxima (all existing 8 neighbours lower),
/// each refined by a parabola through the log-spectrum along each axis and
/// then by Newton descent of the null-space projection within half a grid
/// step. Returns fewer than `k_a` entries when the spectrum has fewer peaks.
pub fn pick_angles(spec: &MusicSpectrum, k_a: usize, polish: bool) -> Vec<AngleEstimate> {
    let (na, nz) = (spec.azimuth.len(), spec.zenith.len());
    let mut peaks = Vec::new();
    for ia in 0..na {
        for iz in 0..nz {
            let c = spec.at(ia, iz);
            let mut is_peak = true;
            'n: for da in -1i64..=1 {
                for dz in -1i64..=1 {
                    if da == 0 && dz == 0 {
                        continue;
                    }
                    let (a, z) = (ia as i64 + da, iz as i64 + dz);
                    if a < 0 || z < 0 || a >= na as i64 || z >= nz as i64 {
                        continue;
                    }
                    if spec.at(a as usize, z as usize) >= c {
                        is_peak = false;
                        break 'n;
                    }
                }
            }
            if is_peak {
                peaks.push((c, ia, iz));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    peaks.truncate(k_a);
    let step_a = spec.azimuth.get(1).map_or(0.0, |x| x - spec.azimuth[0]);
    let step_z = spec.zenith.get(1).map_or(0.0, |x| x - spec.zenith[0]);
    peaks
        .into_iter()
        .map(|(c, ia, iz)| {
            let lc = c.ln();
            let off_a = if ia > 0 && ia + 1 < na { parabolic_offset(spec.at(ia - 1, iz).ln(), lc, spec.at(ia + 1, iz).ln()) } else { 0.0 };
            let off_z = if iz > 0 && iz + 1 < nz { parabolic_offset(spec.at(ia, iz - 1).ln(), lc, spec.at(ia, iz + 1).ln()) } else { 0.0 };
            let clamp = |x: f64| x.clamp(0.0, 180.0);
            let mut angle = AngleAzZe { azimuth: clamp(spec.azimuth[ia] + off_a * step_a), zenith: clamp(spec.zenith[iz] + off_z * step_z) };
            if polish {
                let (u0, v0) = angle.direction_cosines();
                let radius = (step_a.max(step_z)).to_radians() * 0.5;
                let (u, v) = spec.polish(u0, v0, radius);
                if let Some(a) = AngleAzZe::from_direction_cosines(u, v) {
                    angle = a;
                }
            }
            let (u, v) = angle.direction_cosines();
            AngleEstimate { angle, spectrum_peak: 1.0 / spec.null_projection(u, v).max(f64::MIN_POSITIVE) }
        })
        .collect()
}
