//! Uniform planar array geometry, steering vectors, beam-sweep schedules and
//! subarray index maps.
//!
//! Elements are ordered with the x index outermost: element (m', n') sits at
//! position m'·N + n', so a steering vector is a_x ⊗ a_z.

use serde::{Deserialize, Serialize};

use crate::linalg::cis;
use crate::{CVec, IsacError, Result};

use std::f64::consts::TAU;

/// M×N uniform planar array in the x-z plane; spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Upa {
    pub m: usize,
    pub n: usize,
    pub spacing: f64,
}

impl Upa {
    pub fn new(m: usize, n: usize, spacing: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(IsacError::InvalidArgument(format!("array size {m}x{n}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(IsacError::InvalidArgument(format!("element spacing {spacing}")));
        }
        Ok(Self { m, n, spacing })
    }

    pub fn half_wavelength(m: usize, n: usize) -> Self {
        Self::new(m, n, 0.5).expect("positive dimensions")
    }

    /// Total element count MN.
    pub fn elements(&self) -> usize {
        self.m * self.n
    }
}

/// Azimuth/zenith pair in degrees, both within [0°, 180°].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleAzZe {
    pub azimuth: f64,
    pub zenith: f64,
}

impl AngleAzZe {
    pub fn new(azimuth: f64, zenith: f64) -> Result<Self> {
        let ok = |x: f64| x.is_finite() && (0.0..=180.0).contains(&x);
        if !ok(azimuth) || !ok(zenith) {
            return Err(IsacError::InvalidArgument(format!(
                "angle ({azimuth}, {zenith}) outside [0, 180] degrees"
            )));
        }
        Ok(Self { azimuth, zenith })
    }

    /// Spatial frequencies (cosφ·sinθ, cosθ) seen by the x and z axes.
    pub fn direction_cosines(&self) -> (f64, f64) {
        let (phi, theta) = (self.azimuth.to_radians(), self.zenith.to_radians());
        (phi.cos() * theta.sin(), theta.cos())
    }

    /// Builds the angle whose direction cosines are (u, v). Returns `None`
    /// when the pair lies outside the visible region.
    pub fn from_direction_cosines(u: f64, v: f64) -> Option<Self> {
        if !(-1.0..=1.0).contains(&v) {
            return None;
        }
        let theta = v.acos();
        let s = theta.sin();
        let c = if s == 0.0 { 0.0 } else { u / s };
        if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&c) {
            return None;
        }
        let phi = c.clamp(-1.0, 1.0).acos();
        Some(Self { azimuth: phi.to_degrees(), zenith: theta.to_degrees() })
    }
}

fn axis_phases(count: usize, step: f64) -> impl Iterator<Item = crate::C64> {
    (0..count).map(move |k| cis(TAU * k as f64 * step))
}

/// a(φ,θ) = a_x ⊗ a_z with a_x[m'] = e^{j2π m' d cosφ sinθ}, a_z[n'] = e^{j2π n' d cosθ}.
pub fn steering_vector(upa: &Upa, angle: &AngleAzZe) -> CVec {
    let (u, v) = angle.direction_cosines();
    let ax: Vec<_> = axis_phases(upa.m, upa.spacing * u).collect();
    let az: Vec<_> = axis_phases(upa.n, upa.spacing * v).collect();
    CVec::from_iterator(upa.elements(), ax.iter().flat_map(|x| az.iter().map(move |z| x * z)))
}

/// |aᵀ(angle)·f|²
pub fn beam_gain(upa: &Upa, f: &CVec, angle: &AngleAzZe) -> Result<f64> {
    if f.len() != upa.elements() {
        return Err(IsacError::DimensionMismatch { expected: upa.elements(), got: f.len() });
    }
    Ok(steering_vector(upa, angle).dot(f).norm_sqr())
}

/// Beam directions for the target-searching sweep, one entry per sweep symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSchedule {
    pub beams: Vec<AngleAzZe>,
    pub symbols_per_beam: usize,
    pub total_symbols: usize,
    /// Array size the schedule was built for.
    pub grid: (usize, usize),
    pub spacing: f64,
}

impl SweepSchedule {
    pub fn beam_count(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Index n_b of the beam active at sweep symbol q̃.
    pub fn beam_index(&self, q_tilde: usize) -> usize {
        q_tilde / self.symbols_per_beam
    }

    /// Direction of beam n_b.
    pub fn beam(&self, n_b: usize) -> AngleAzZe {
        self.beams[n_b * self.symbols_per_beam]
    }

    /// Normalised spatial frequencies (d·cosφ_s, d·cosθ_s) of beam n_b. On
    /// the sweep grid these are 1/2 − i/M and 1/2 − j/N exactly.
    pub fn beam_frequencies(&self, n_b: usize) -> (f64, f64) {
        let (m, n) = self.grid;
        let i = n_b / n;
        let j = n_b % n;
        (0.5 - i as f64 / m as f64, 0.5 - j as f64 / n as f64)
    }
}

/// φ_s = arccos[(1/d)(1/2 − ⌊M q̃/Q̃⌋/M)], θ_s = arccos[(1/d)(1/2 − mod(⌊q̃MN/Q̃⌋, N)/N)].
pub fn sweep_schedule(upa: &Upa, total_symbols: usize) -> Result<SweepSchedule> {
    let mn = upa.elements();
    if total_symbols == 0 || total_symbols % mn != 0 {
        return Err(IsacError::ScheduleLength { total: total_symbols, beams: mn });
    }
    let acos_checked = |x: f64| {
        if (-1.0..=1.0).contains(&x) {
            Ok(x.acos().to_degrees())
        } else {
            Err(IsacError::ArccosDomain(x))
        }
    };
    let mut distinct = Vec::with_capacity(mn);
    for n_b in 0..mn {
        let i = n_b / upa.n;
        let j = n_b % upa.n;
        let phi = acos_checked((0.5 - i as f64 / upa.m as f64) / upa.spacing)?;
        let theta = acos_checked((0.5 - j as f64 / upa.n as f64) / upa.spacing)?;
        distinct.push(AngleAzZe { azimuth: phi, zenith: theta });
    }
    let qb = total_symbols / mn;
    let beams = (0..total_symbols).map(|q| distinct[q / qb]).collect();
    Ok(SweepSchedule {
        beams,
        symbols_per_beam: qb,
        total_symbols,
        grid: (upa.m, upa.n),
        spacing: upa.spacing,
    })
}

/// Element indices of the (i, j)-th m_sub×n_sub subarray, row-major.
pub fn subarray_indices(upa: &Upa, i: usize, j: usize, m_sub: usize, n_sub: usize) -> Result<Vec<usize>> {
    if m_sub == 0 || n_sub == 0 || i + m_sub > upa.m || j + n_sub > upa.n {
        return Err(IsacError::SubarrayOutOfRange { i, j, m_sub, n_sub });
    }
    Ok((0..m_sub).flat_map(|a| (0..n_sub).map(move |b| (i + a) * upa.n + (j + b))).collect())
}

/// Scalar relating a subarray's slice of the full steering vector to the
/// subarray's own steering vector.
pub fn subarray_shift_phase(upa: &Upa, i: usize, j: usize, angle: &AngleAzZe) -> crate::C64 {
    let (u, v) = angle.direction_cosines();
    cis(TAU * upa.spacing * (i as f64 * u + j as f64 * v))
}
