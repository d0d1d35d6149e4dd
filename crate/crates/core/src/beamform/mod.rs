//! Transmit beamformer designs: MRT sweeps, searching-stage dual-function
//! beams (SDR and closed form), tracking-stage beams for both allocation
//! schemes, zero-forcing receive combiners and power-ratio calibration.

pub mod qcqp;
pub mod sdp;

pub use qcqp::{solve_min_power_qcqp, QcqpOptions, QcqpSolution, QcqpSpec};

use crate::array::{steering_vector, AngleAzZe, SweepSchedule, Upa};
use crate::gridsim::{Allocation, Role};
use crate::linalg::real;
use crate::{CMat, CVec, IsacError, Result, C64};

/// Sweep schedule placed on the symbol axis starting at `q_start`.
#[derive(Debug, Clone)]
pub struct SweepWindow {
    pub schedule: SweepSchedule,
    pub q_start: usize,
}

impl SweepWindow {
    /// Beam index active at absolute symbol q, if q is inside the sweep.
    pub fn beam_at(&self, q: usize) -> Option<usize> {
        let rel = q.checked_sub(self.q_start)?;
        (rel < self.schedule.total_symbols).then(|| self.schedule.beam_index(rel))
    }

    /// Absolute symbol range of beam n_b.
    pub fn symbols_of_beam(&self, n_b: usize) -> std::ops::Range<usize> {
        let qb = self.schedule.symbols_per_beam;
        let s = self.q_start + n_b * qb;
        s..s + qb
    }
}

/// Per-symbol transmit beamformers keyed by role. Vectors are stored once and
/// referenced from every symbol that uses them.
#[derive(Debug, Clone)]
pub struct BeamPlan {
    pub mn: usize,
    pub q_count: usize,
    vectors: Vec<CVec>,
    slots: Vec<Vec<(Role, usize)>>,
    pub sweep: Option<SweepWindow>,
}

impl BeamPlan {
    pub fn new(mn: usize, q_count: usize) -> Self {
        Self { mn, q_count, vectors: Vec::new(), slots: vec![Vec::new(); q_count], sweep: None }
    }

    /// Stores a vector and returns its handle for [`BeamPlan::assign`].
    pub fn push_vector(&mut self, f: CVec) -> usize {
        assert_eq!(f.len(), self.mn, "beamformer length");
        self.vectors.push(f);
        self.vectors.len() - 1
    }

    pub fn assign(&mut self, q: usize, role: Role, handle: usize) {
        let slot = &mut self.slots[q];
        match slot.iter_mut().find(|(r, _)| *r == role) {
            Some(entry) => entry.1 = handle,
            None => slot.push((role, handle)),
        }
    }

    pub fn set(&mut self, q: usize, role: Role, f: CVec) {
        let h = self.push_vector(f);
        self.assign(q, role, h);
    }

    /// Uses `f` for `role` on every symbol.
    pub fn set_all(&mut self, role: Role, f: CVec) {
        let h = self.push_vector(f);
        for q in 0..self.q_count {
            self.assign(q, role, h);
        }
    }

    pub fn get(&self, q: usize, role: Role) -> Option<&CVec> {
        self.slots.get(q)?.iter().find(|(r, _)| *r == role).map(|&(_, h)| &self.vectors[h])
    }

    pub fn roles(&self, q: usize) -> impl Iterator<Item = Role> + '_ {
        self.slots[q].iter().map(|(r, _)| *r)
    }

    /// Multiplies every stored vector by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.vectors {
            *v *= real(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.iter().all(|x| x.re.is_finite() && x.im.is_finite()))
    }
}

/// f = a*(angle)
pub fn mrt(angle: &AngleAzZe, upa: &Upa) -> CVec {
    steering_vector(upa, angle).conjugate()
}

/// Minimum-power beam meeting the user SNR |λ_u h_uᴴ f|²/σ² ≥ γ̄ and the
/// sensing-direction power |a_sᵀ f|² ≥ MN·E_min.
#[allow(clippy::too_many_arguments)]
pub fn search_beam_sdr(
    h_u: &CVec,
    lambda_u: f64,
    angle_s: &AngleAzZe,
    gamma_bar: f64,
    e_min: f64,
    sigma2: f64,
    upa: &Upa,
    opts: &QcqpOptions,
) -> Result<QcqpSolution> {
    let spec = QcqpSpec {
        dim: upa.elements(),
        constraints: vec![
            (h_u.clone(), sigma2 * gamma_bar / (lambda_u * lambda_u)),
            (mrt(angle_s, upa), upa.elements() as f64 * e_min),
        ],
    };
    solve_min_power_qcqp(&spec, opts)
}

/// f = a_u h_u + b e^{jφ} a_s* with a_u = √γ̄ σ/λ_u, φ = ∠(a_sᵀh_u) and
/// b = max{(√(MN E_min) − a_u|a_sᵀh_u|)/MN, 0}.
#[allow(clippy::too_many_arguments)]
pub fn search_beam_closed_form(
    h_u: &CVec,
    lambda_u: f64,
    angle_s: &AngleAzZe,
    gamma_bar: f64,
    e_min: f64,
    sigma2: f64,
    upa: &Upa,
) -> CVec {
    let mn = upa.elements() as f64;
    let a_s = steering_vector(upa, angle_s);
    let a_u = gamma_bar.sqrt() * sigma2.sqrt() / lambda_u;
    let inner = a_s.dot(h_u);
    let b = ((mn * e_min).sqrt() - a_u * inner.norm()).max(0.0) / mn;
    let rot = if inner.norm() > 0.0 { inner / inner.norm() } else { C64::new(1.0, 0.0) };
    h_u * real(a_u) + a_s.conjugate() * (rot * b)
}

/// A prior estimate of a target being tracked.
#[derive(Debug, Clone, Copy)]
pub struct TrackPrior {
    pub angle: AngleAzZe,
    pub alpha: C64,
}

fn track_constraints(track: &[TrackPrior], gamma_s: f64, sigma2: f64, upa: &Upa) -> Vec<(CVec, f64)> {
    track
        .iter()
        .map(|t| ((steering_vector(upa, &t.angle) * t.alpha).conjugate(), sigma2 * gamma_s))
        .collect()
}

/// Minimum-power sensing beam with |α̃_k ã_kᵀ f|²/σ² ≥ γ̄_s for every tracked target.
pub fn track_beam_dedicated(
    track: &[TrackPrior],
    gamma_s: f64,
    sigma2: f64,
    upa: &Upa,
    opts: &QcqpOptions,
) -> Result<QcqpSolution> {
    if track.is_empty() {
        return Err(IsacError::Empty("track set"));
    }
    let spec = QcqpSpec { dim: upa.elements(), constraints: track_constraints(track, gamma_s, sigma2, upa) };
    solve_min_power_qcqp(&spec, opts)
}

/// As [`track_beam_dedicated`] with the user SNR constraint added.
#[allow(clippy::too_many_arguments)]
pub fn track_beam_shared(
    h_u: &CVec,
    lambda_u: f64,
    track: &[TrackPrior],
    gamma_bar: f64,
    gamma_s: f64,
    sigma2: f64,
    upa: &Upa,
    opts: &QcqpOptions,
) -> Result<QcqpSolution> {
    let mut constraints = vec![(h_u.clone(), sigma2 * gamma_bar / (lambda_u * lambda_u))];
    constraints.extend(track_constraints(track, gamma_s, sigma2, upa));
    solve_min_power_qcqp(&QcqpSpec { dim: upa.elements(), constraints }, opts)
}

/// Unit-norm combiner f = Qâ_k/‖Qâ_k‖ with Q the projector onto the
/// orthogonal complement of the other estimated steering vectors.
pub fn zf_extractor(angles: &[AngleAzZe], k: usize, upa: &Upa) -> Result<CVec> {
    if k >= angles.len() {
        return Err(IsacError::InvalidArgument(format!("angle index {k} of {}", angles.len())));
    }
    let a_k = steering_vector(upa, &angles[k]);
    let others: Vec<CVec> = angles.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, a)| steering_vector(upa, a)).collect();
    let projected = if others.is_empty() {
        a_k
    } else {
        let mn = upa.elements();
        let mut a = CMat::zeros(mn, others.len());
        for (c, v) in others.iter().enumerate() {
            a.set_column(c, v);
        }
        let gram = a.adjoint() * &a;
        let (vals, _) = crate::linalg::hermitian_eigen(&gram);
        let cond = vals[0] / vals.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        if !(cond < 1e12) {
            return Err(IsacError::IllConditioned(cond));
        }
        let coeffs = gram.lu().solve(&(a.adjoint() * &a_k)).ok_or(IsacError::IllConditioned(cond))?;
        let mut r = &a_k - &a * coeffs;
        // A second projection pass removes what rounding left behind.
        let c2 = a.adjoint() * &r;
        if let Some(fix) = (a.adjoint() * &a).lu().solve(&c2) {
            r -= &a * fix;
        }
        r
    };
    let norm = projected.norm();
    if norm <= 1e-12 * (upa.elements() as f64).sqrt() {
        return Err(IsacError::IllConditioned(f64::INFINITY));
    }
    Ok(projected / real(norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Search,
    Track,
}

/// Communication and sensing thresholds for one scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub gamma_bar: f64,
    /// E_min (mW) when searching, γ̄_s when tracking.
    pub sensing: f64,
}

/// Keeps the communication-to-sensing power ratio equal across schemes.
///
/// Searching: the zero-overhead ratio E_min/γ̄ is `base_ratio` (mW); the
/// dedicated scheme multiplies it by (1−κ)/κ. Tracking: the zero-overhead
/// ratio γ̄/γ̄_s is `base_ratio`; the dedicated scheme multiplies it by κ/(1−κ).
pub fn calibrate_power_ratio(
    stage: Stage,
    allocation: Allocation,
    kappa: f64,
    base_gamma: f64,
    base_ratio: f64,
) -> Result<Thresholds> {
    let multiplier = match allocation {
        Allocation::ZeroOverhead => 1.0,
        Allocation::Dedicated => {
            if !(kappa > 0.0 && kappa < 1.0) {
                return Err(IsacError::InvalidArgument(format!("dedicated sensing fraction {kappa}")));
            }
            (1.0 - kappa) / kappa
        }
    };
    let sensing = match stage {
        Stage::Search => base_gamma * base_ratio * multiplier,
        Stage::Track => base_gamma / (base_ratio / multiplier),
    };
    Ok(Thresholds { gamma_bar: base_gamma, sensing })
}
