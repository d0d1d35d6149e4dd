//! Ground-truth propagation: OFDM numerology, UE multipath channels,
//! monostatic point targets and the radar-equation link between RCS and the
//! two-way scattering coefficient.

use rand::Rng;
use serde::Deserialize;

use crate::array::{steering_vector, AngleAzZe, Upa};
use crate::linalg::{cis, hermitian_eigen};
use crate::rng::{stream, unit_phase, DOMAIN_PHASES};
use crate::{CMat, CVec, IsacError, Result, C64, SPEED_OF_LIGHT};

use std::f64::consts::{PI, TAU};

/// OFDM grid parameters. Powers are in mW throughout the crate, so `n0` is
/// the noise power spectral density in mW/Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmNumerology {
    pub p_count: usize,
    pub q_count: usize,
    pub delta_f: f64,
    pub t_cp: f64,
    pub t_o: f64,
    pub f_c: f64,
    pub n0: f64,
}

impl OfdmNumerology {
    pub fn new(p_count: usize, q_count: usize, delta_f: f64, t_cp: f64, f_c: f64, n0_dbm_per_hz: f64) -> Result<Self> {
        if p_count == 0 || q_count == 0 {
            return Err(IsacError::InvalidArgument("empty resource grid".into()));
        }
        if !(delta_f > 0.0 && t_cp >= 0.0 && f_c > 0.0 && n0_dbm_per_hz.is_finite()) {
            return Err(IsacError::InvalidArgument("non-physical numerology".into()));
        }
        Ok(Self {
            p_count,
            q_count,
            delta_f,
            t_cp,
            t_o: 1.0 / delta_f + t_cp,
            f_c,
            n0: 10f64.powf(n0_dbm_per_hz / 10.0),
        })
    }

    /// 28 GHz, 120 kHz spacing, 1024×1024 grid, 2.0833 µs CP, −169 dBm/Hz.
    pub fn full_scale() -> Self {
        Self::new(1024, 1024, 120e3, 2.0833e-6, 28e9, -169.0).expect("valid constants")
    }

    /// Same carrier and spacing on a 256×256 grid.
    pub fn desk_scale() -> Self {
        Self::new(256, 256, 120e3, 2.0833e-6, 28e9, -169.0).expect("valid constants")
    }

    /// Per-resource-element noise power σ̃² = Δf·N0.
    pub fn sigma_tilde2(&self) -> f64 {
        self.delta_f * self.n0
    }

    /// Full-band noise power σ² = P·Δf·N0.
    pub fn sigma2(&self) -> f64 {
        self.p_count as f64 * self.sigma_tilde2()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }

    pub fn bandwidth(&self) -> f64 {
        self.p_count as f64 * self.delta_f
    }

    /// Width of one delay bin on the full grid, 1/(PΔf).
    pub fn delay_step(&self) -> f64 {
        1.0 / self.bandwidth()
    }

    /// Width of one Doppler bin on the full grid, 1/(Q T_O).
    pub fn doppler_step(&self) -> f64 {
        1.0 / (self.q_count as f64 * self.t_o)
    }

    pub fn range_of_delay(&self, delay: f64) -> f64 {
        SPEED_OF_LIGHT * delay / 2.0
    }

    pub fn velocity_of_doppler(&self, doppler: f64) -> f64 {
        SPEED_OF_LIGHT * doppler / (2.0 * self.f_c)
    }
}

/// One propagation path of a UE channel, with delay and Doppler relative to
/// the path the UE synchronises to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSpec {
    pub alpha: C64,
    pub angle: AngleAzZe,
    pub delay: f64,
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub angle: AngleAzZe,
    pub range: f64,
    pub velocity: f64,
    pub alpha: C64,
    pub rcs_dbsm: Option<f64>,
}

impl TargetSpec {
    /// τ = 2R/c
    pub fn delay(&self) -> f64 {
        2.0 * self.range / SPEED_OF_LIGHT
    }

    /// f_D = 2 v f_c / c
    pub fn doppler(&self, num: &OfdmNumerology) -> f64 {
        2.0 * self.velocity * num.f_c / SPEED_OF_LIGHT
    }
}

/// Phase shift hᴴ picks up from a path with the given delay/Doppler at RE (p, q):
/// e^{j2π(f_D q T_O − p Δf τ)}.
fn path_rotation(num: &OfdmNumerology, delay: f64, doppler: f64, p: usize, q: usize) -> C64 {
    cis(TAU * (doppler * q as f64 * num.t_o - p as f64 * num.delta_f * delay))
}

/// Returns h_{u,p,q} with hᴴ = Σ_l α_l aᵀ(angle_l) e^{j2π(f̃_D q T_O − p Δf τ̃)}.
pub fn ue_channel_at(paths: &[PathSpec], upa: &Upa, num: &OfdmNumerology, p: usize, q: usize) -> Result<CVec> {
    if paths.is_empty() {
        return Err(IsacError::Empty("UE path list"));
    }
    let mut h = CVec::zeros(upa.elements());
    for path in paths {
        let coeff = (path.alpha * path_rotation(num, path.delay, path.doppler, p, q)).conj();
        h += steering_vector(upa, &path.angle).conjugate() * coeff;
    }
    Ok(h)
}

/// UE channel with per-path steering vectors cached for repeated evaluation.
#[derive(Debug, Clone)]
pub struct UeChannel {
    paths: Vec<PathSpec>,
    conj_steering: Vec<CVec>,
    num: OfdmNumerology,
}

impl UeChannel {
    pub fn new(paths: &[PathSpec], upa: &Upa, num: &OfdmNumerology) -> Result<Self> {
        if paths.is_empty() {
            return Err(IsacError::Empty("UE path list"));
        }
        let conj_steering = paths.iter().map(|p| steering_vector(upa, &p.angle).conjugate()).collect();
        Ok(Self { paths: paths.to_vec(), conj_steering, num: *num })
    }

    pub fn paths(&self) -> &[PathSpec] {
        &self.paths
    }

    /// hᴴ f at RE (p, q) without materialising h.
    pub fn response(&self, f: &CVec, p: usize, q: usize) -> C64 {
        self.paths
            .iter()
            .zip(&self.conj_steering)
            .map(|(path, a_conj)| {
                // aᵀ f = Σ conj(a*) f
                let atf = a_conj.dotc(f);
                path.alpha * atf * path_rotation(&self.num, path.delay, path.doppler, p, q)
            })
            .sum()
    }

    pub fn at(&self, p: usize, q: usize) -> CVec {
        let mut h = CVec::zeros(self.conj_steering[0].len());
        for (path, a_conj) in self.paths.iter().zip(&self.conj_steering) {
            let coeff = (path.alpha * path_rotation(&self.num, path.delay, path.doppler, p, q)).conj();
            h += a_conj * coeff;
        }
        h
    }
}

/// Statistical channel of a UE over its resource set.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    pub covariance: CMat,
    /// Largest eigenvalue λ_u² of the covariance.
    pub lambda2: f64,
    /// Unit-norm dominant eigenvector h_u.
    pub h_u: CVec,
}

impl ChannelStats {
    pub fn lambda(&self) -> f64 {
        self.lambda2.sqrt()
    }
}

/// R_u = (1/|Γ_u|) Σ h hᴴ over the UE's resource set, with its dominant
/// eigenpair. Evaluated through the L×L path cross-correlation, which is exact
/// and avoids touching every RE with an MN×MN outer product.
pub fn channel_covariance(
    paths: &[PathSpec],
    upa: &Upa,
    num: &OfdmNumerology,
    gamma_u: &[(usize, usize)],
) -> Result<ChannelStats> {
    if paths.is_empty() {
        return Err(IsacError::Empty("UE path list"));
    }
    if gamma_u.is_empty() {
        return Err(IsacError::Empty("UE resource set"));
    }
    let l = paths.len();
    // h = Σ_l c_l v_l with v_l = a_l* and c_l = conj(α_l e^{jψ_l}).
    let mut w = vec![C64::new(0.0, 0.0); l * l];
    for &(p, q) in gamma_u {
        let c: Vec<C64> = paths
            .iter()
            .map(|path| (path.alpha * path_rotation(num, path.delay, path.doppler, p, q)).conj())
            .collect();
        for i in 0..l {
            for k in 0..l {
                w[i * l + k] += c[i] * c[k].conj();
            }
        }
    }
    let inv = 1.0 / gamma_u.len() as f64;
    let v: Vec<CVec> = paths.iter().map(|p| steering_vector(upa, &p.angle).conjugate()).collect();
    let mn = upa.elements();
    let mut r = CMat::zeros(mn, mn);
    for i in 0..l {
        for k in 0..l {
            r += &v[i] * v[k].adjoint() * (w[i * l + k] * inv);
        }
    }
    let (vals, vecs) = hermitian_eigen(&r);
    Ok(ChannelStats { covariance: r, lambda2: vals[0].max(0.0), h_u: vecs.column(0).into_owned() })
}

/// Two-way coefficient magnitude from the monostatic radar equation,
/// |α| = sqrt(λ² σ / ((4π)³ R⁴)).
pub fn alpha_magnitude_from_rcs(rcs_dbsm: f64, range_m: f64, num: &OfdmNumerology) -> Result<f64> {
    if !(range_m > 0.0) {
        return Err(IsacError::InvalidArgument(format!("range {range_m} m")));
    }
    let sigma = 10f64.powf(rcs_dbsm / 10.0);
    let lambda = num.wavelength();
    Ok((lambda * lambda * sigma / ((4.0 * PI).powi(3) * range_m.powi(4))).sqrt())
}

/// Radar-equation magnitude with a uniformly random phase.
pub fn alpha_from_rcs<R: Rng + ?Sized>(rcs_dbsm: f64, range_m: f64, num: &OfdmNumerology, rng: &mut R) -> Result<C64> {
    Ok(unit_phase(rng) * alpha_magnitude_from_rcs(rcs_dbsm, range_m, num)?)
}

/// e^{−j2π p Δf τ_k} e^{j2π f_D,k q T_O}
pub fn target_phase(target: &TargetSpec, num: &OfdmNumerology, p: usize, q: usize) -> C64 {
    path_rotation(num, target.delay(), target.doppler(num), p, q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserSpec {
    pub name: String,
    pub paths: Vec<PathSpec>,
    /// Served only when no resources are reserved for sensing.
    pub zero_overhead_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub users: Vec<UserSpec>,
    pub targets: Vec<TargetSpec>,
}

impl Scene {
    /// Users served under the given allocation.
    pub fn active_users(&self, reserve_sensing: bool) -> Vec<&UserSpec> {
        self.users.iter().filter(|u| !(reserve_sensing && u.zero_overhead_only)).collect()
    }

    /// Max minus min target delay.
    pub fn delay_spread(&self) -> f64 {
        let d: Vec<f64> = self.targets.iter().map(TargetSpec::delay).collect();
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        if d.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    /// Distinct target angles, in order of first appearance.
    pub fn distinct_angles(&self) -> Vec<AngleAzZe> {
        let mut out: Vec<AngleAzZe> = Vec::new();
        for t in &self.targets {
            if !out.iter().any(|a| (a.azimuth - t.angle.azimuth).abs() < 1e-9 && (a.zenith - t.angle.zenith).abs() < 1e-9) {
                out.push(t.angle);
            }
        }
        out
    }

    /// Parses a scene description. Coefficient phases not given explicitly are
    /// drawn from `seed`, one independent stream per entry.
    pub fn from_toml_str(text: &str, num: &OfdmNumerology, seed: u64) -> Result<Self> {
        let file: SceneFile = toml::from_str(text).map_err(|e| IsacError::Scene(e.to_string()))?;
        file.build(num, seed)
    }

    pub fn from_file(path: &std::path::Path, num: &OfdmNumerology, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, num, seed)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default)]
    user: Vec<UserEntry>,
    #[serde(default)]
    target: Vec<TargetEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathEntry {
    azimuth_deg: f64,
    zenith_deg: f64,
    alpha_abs: f64,
    alpha_phase_deg: Option<f64>,
    #[serde(default)]
    delay_ns: f64,
    #[serde(default)]
    doppler_hz: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserEntry {
    name: Option<String>,
    #[serde(default)]
    zero_overhead_only: bool,
    #[serde(rename = "path")]
    paths: Vec<PathEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetEntry {
    azimuth_deg: f64,
    zenith_deg: f64,
    range_m: f64,
    #[serde(default)]
    velocity_mps: f64,
    rcs_dbsm: Option<f64>,
    alpha_abs: Option<f64>,
    alpha_phase_deg: Option<f64>,
}

impl SceneFile {
    fn build(self, num: &OfdmNumerology, seed: u64) -> Result<Scene> {
        let mut stream_index = 0u64;
        let mut next_phase = |explicit: Option<f64>| {
            let idx = stream_index;
            stream_index += 1;
            match explicit {
                Some(deg) => cis(deg.to_radians()),
                None => unit_phase(&mut stream(seed, DOMAIN_PHASES, idx)),
            }
        };
        let mut users = Vec::new();
        for (k, u) in self.user.into_iter().enumerate() {
            if u.paths.is_empty() {
                return Err(IsacError::Scene(format!("user {k} has no paths")));
            }
            // Synchronise to the strongest path.
            let strongest = u
                .paths
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.alpha_abs.total_cmp(&b.1.alpha_abs).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let (ref_delay, ref_doppler) = (u.paths[strongest].delay_ns, u.paths[strongest].doppler_hz);
            let mut paths = Vec::new();
            for p in &u.paths {
                if !(p.alpha_abs > 0.0) {
                    return Err(IsacError::Scene(format!("user {k}: |alpha| must be positive")));
                }
                let delay = (p.delay_ns - ref_delay) * 1e-9;
                if delay < 0.0 {
                    return Err(IsacError::Scene(format!("user {k}: path arrives before the strongest path")));
                }
                paths.push(PathSpec {
                    alpha: next_phase(p.alpha_phase_deg) * p.alpha_abs,
                    angle: AngleAzZe::new(p.azimuth_deg, p.zenith_deg)?,
                    delay,
                    doppler: p.doppler_hz - ref_doppler,
                });
            }
            users.push(UserSpec {
                name: u.name.unwrap_or_else(|| format!("u{}", k + 1)),
                paths,
                zero_overhead_only: u.zero_overhead_only,
            });
        }
        let mut targets = Vec::new();
        for (k, t) in self.target.into_iter().enumerate() {
            if !(t.range_m > 0.0) {
                return Err(IsacError::Scene(format!("target {k}: range must be positive")));
            }
            let magnitude = match (t.alpha_abs, t.rcs_dbsm) {
                (Some(a), _) => a,
                (None, Some(rcs)) => alpha_magnitude_from_rcs(rcs, t.range_m, num)?,
                (None, None) => return Err(IsacError::Scene(format!("target {k}: give rcs_dbsm or alpha_abs"))),
            };
            targets.push(TargetSpec {
                angle: AngleAzZe::new(t.azimuth_deg, t.zenith_deg)?,
                range: t.range_m,
                velocity: t.velocity_mps,
                alpha: next_phase(t.alpha_phase_deg) * magnitude,
                rcs_dbsm: t.rcs_dbsm,
            });
        }
        Ok(Scene { users, targets })
    }
}
