//! OFDM resource planning, modulation symbols, and resource-element-level
//! synthesis of UE grids and the MN×P×Q monostatic sensing tensor.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::array::{steering_vector, Upa};
use crate::beamform::BeamPlan;
use crate::rng::{complex_normal, stream, DOMAIN_SENSING_NOISE, DOMAIN_SYMBOLS, DOMAIN_UE_NOISE};
use crate::scene::{target_phase, OfdmNumerology, TargetSpec, UeChannel};
use crate::{CVec, IsacError, Result, C64};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    User(usize),
    Sensing,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Role::User(u) => write!(f, "user {u}"),
            Role::Sensing => write!(f, "sensing"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Allocation {
    /// A block of REs is reserved for sensing beams.
    Dedicated,
    /// Every RE carries user data; sensing rides on the user beams.
    ZeroOverhead,
}

/// Partition of the P×Q grid into user sets Γ_u and a sensing block Γ_s.
#[derive(Debug, Clone)]
pub struct ResourcePlan {
    pub p_count: usize,
    pub q_count: usize,
    pub user_count: usize,
    pub allocation: Allocation,
    pub kappa_p: f64,
    pub kappa_q: f64,
    pub p_start: usize,
    pub q_start: usize,
    /// P_s and Q_s; both zero when there is no sensing block.
    pub p_len: usize,
    pub q_len: usize,
    owner: Vec<Role>,
}

impl ResourcePlan {
    pub fn role(&self, p: usize, q: usize) -> Role {
        self.owner[q * self.p_count + p]
    }

    /// κ = κ_P κ_Q, the fraction of REs reserved for sensing.
    pub fn kappa(&self) -> f64 {
        (self.p_len * self.q_len) as f64 / (self.p_count * self.q_count) as f64
    }

    pub fn user_set(&self, u: usize) -> Vec<(usize, usize)> {
        self.set_of(Role::User(u))
    }

    pub fn sensing_set(&self) -> Vec<(usize, usize)> {
        self.set_of(Role::Sensing)
    }

    fn set_of(&self, role: Role) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for q in 0..self.q_count {
            for p in 0..self.p_count {
                if self.role(p, q) == role {
                    out.push((p, q));
                }
            }
        }
        out
    }

    /// Roles present on symbol q, sorted.
    pub fn roles_on_symbol(&self, q: usize) -> Vec<Role> {
        let mut r: Vec<Role> = (0..self.p_count).map(|p| self.role(p, q)).collect();
        r.sort();
        r.dedup();
        r
    }

    pub fn has_sensing_block(&self) -> bool {
        self.p_len * self.q_len > 0
    }

    /// Disjoint and exhaustive by construction; checks that every user index
    /// is in range and that the sensing block matches its declared extent.
    pub fn check_partition(&self) -> bool {
        let mut sensing = 0usize;
        for q in 0..self.q_count {
            for p in 0..self.p_count {
                match self.role(p, q) {
                    Role::Sensing => {
                        sensing += 1;
                        let inside = (self.p_start..self.p_start + self.p_len).contains(&p)
                            && (self.q_start..self.q_start + self.q_len).contains(&q);
                        if !inside {
                            return false;
                        }
                    }
                    Role::User(u) if u >= self.user_count => return false,
                    Role::User(_) => {}
                }
            }
        }
        sensing == self.p_len * self.q_len && self.owner.len() == self.p_count * self.q_count
    }
}

/// Quadrant index of RE (p, q): 2·[p ≥ P/2] + [q ≥ Q/2].
fn quadrant(p: usize, q: usize, p_count: usize, q_count: usize) -> usize {
    2 * usize::from(2 * p >= p_count) + usize::from(2 * q >= q_count)
}

/// Builds the block allocation. Non-sensing REs are tiled by grid quadrant,
/// quadrant j going to user j mod U; with four users each owns one
/// P/2×Q/2 quadrant. In dedicated mode the sensing block is
/// [p_s, p_s+κ_P P) × [q_s, q_s+κ_Q Q).
pub fn build_resource_plan(
    num: &OfdmNumerology,
    users: usize,
    allocation: Allocation,
    kappa_p: f64,
    kappa_q: f64,
    p_start: usize,
    q_start: usize,
) -> Result<ResourcePlan> {
    let (pc, qc) = (num.p_count, num.q_count);
    let (p_len, q_len) = match allocation {
        Allocation::ZeroOverhead => (0, 0),
        Allocation::Dedicated => {
            if !(kappa_p > 0.0 && kappa_p <= 1.0 && kappa_q > 0.0 && kappa_q <= 1.0) {
                return Err(IsacError::InvalidArgument(format!("sensing fractions ({kappa_p}, {kappa_q})")));
            }
            let pl = (kappa_p * pc as f64).round() as usize;
            let ql = (kappa_q * qc as f64).round() as usize;
            if pl == 0 || ql == 0 || p_start + pl > pc || q_start + ql > qc {
                return Err(IsacError::InvalidArgument(format!(
                    "sensing block {pl}x{ql} at ({p_start}, {q_start}) does not fit a {pc}x{qc} grid"
                )));
            }
            (pl, ql)
        }
    };
    let full_sensing = p_len == pc && q_len == qc;
    if users == 0 && !full_sensing {
        return Err(IsacError::InvalidArgument("at least one user is required".into()));
    }
    let mut owner = Vec::with_capacity(pc * qc);
    for q in 0..qc {
        for p in 0..pc {
            let in_block = (p_start..p_start + p_len).contains(&p) && (q_start..q_start + q_len).contains(&q);
            owner.push(if in_block { Role::Sensing } else { Role::User(quadrant(p, q, pc, qc) % users) });
        }
    }
    let (kp, kq) = match allocation {
        Allocation::Dedicated => (p_len as f64 / pc as f64, q_len as f64 / qc as f64),
        Allocation::ZeroOverhead => (0.0, 0.0),
    };
    Ok(ResourcePlan {
        p_count: pc,
        q_count: qc,
        user_count: users,
        allocation,
        kappa_p: kp,
        kappa_q: kq,
        p_start: if p_len > 0 { p_start } else { 0 },
        q_start: if q_len > 0 { q_start } else { 0 },
        p_len,
        q_len,
        owner,
    })
}

/// P×Q modulation symbols, stored symbol-major (index q·P + p).
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    pub p_count: usize,
    pub q_count: usize,
    pub values: Vec<C64>,
}

impl SymbolGrid {
    pub fn get(&self, p: usize, q: usize) -> C64 {
        self.values[q * self.p_count + p]
    }

    /// Grid with every entry equal to `value`.
    pub fn constant(num: &OfdmNumerology, value: C64) -> Self {
        Self { p_count: num.p_count, q_count: num.q_count, values: vec![value; num.p_count * num.q_count] }
    }
}

/// QPSK with |b|² = 1/P exactly; symbol column q draws from its own stream.
pub fn draw_symbols(seed: u64, num: &OfdmNumerology) -> SymbolGrid {
    let (pc, qc) = (num.p_count, num.q_count);
    let amp = (0.5 / pc as f64).sqrt();
    let mut values = vec![C64::new(0.0, 0.0); pc * qc];
    values.par_chunks_mut(pc).enumerate().for_each(|(q, col)| {
        let mut rng = stream(seed, DOMAIN_SYMBOLS, q as u64);
        for b in col.iter_mut() {
            let bits: u8 = rng.random_range(0..4);
            let re = if bits & 1 == 0 { amp } else { -amp };
            let im = if bits & 2 == 0 { amp } else { -amp };
            *b = C64::new(re, im);
        }
    });
    SymbolGrid { p_count: pc, q_count: qc, values }
}

/// Received sensing cube, stored column-by-column: sample (n, p, q) lives at
/// index (q·P + p)·MN + n.
#[derive(Debug, Clone)]
pub struct SensingTensor {
    pub mn: usize,
    pub p_count: usize,
    pub q_count: usize,
    pub samples: Vec<C64>,
    /// Per-element noise variance σ̃².
    pub noise_var: f64,
}

impl SensingTensor {
    pub fn zeros(mn: usize, p_count: usize, q_count: usize, noise_var: f64) -> Self {
        Self { mn, p_count, q_count, samples: vec![C64::new(0.0, 0.0); mn * p_count * q_count], noise_var }
    }

    pub fn column(&self, p: usize, q: usize) -> &[C64] {
        let start = (q * self.p_count + p) * self.mn;
        &self.samples[start..start + self.mn]
    }

    pub fn column_mut(&mut self, p: usize, q: usize) -> &mut [C64] {
        let start = (q * self.p_count + p) * self.mn;
        &mut self.samples[start..start + self.mn]
    }

    /// Little-endian dump: three u64 header words {MN, P, Q} followed by
    /// interleaved (re, im) f64 pairs in storage order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for d in [self.mn, self.p_count, self.q_count] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.mn * self.p_count * 16);
        for chunk in self.samples.chunks(self.mn * self.p_count) {
            buf.clear();
            for s in chunk {
                buf.extend_from_slice(&s.re.to_le_bytes());
                buf.extend_from_slice(&s.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, noise_var: f64) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut word)?;
            *d = u64::from_le_bytes(word) as usize;
        }
        let count = dims[0] * dims[1] * dims[2];
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            samples.push(C64::new(re, f64::from_le_bytes(word)));
        }
        Ok(Self { mn: dims[0], p_count: dims[1], q_count: dims[2], samples, noise_var })
    }
}

/// Per-symbol cache of aᵀf for every (target, role) pair active on the symbol.
fn target_gains(
    steering: &[CVec],
    plan: &ResourcePlan,
    beams: &BeamPlan,
    q: usize,
) -> Result<Vec<(Role, Vec<C64>)>> {
    plan.roles_on_symbol(q)
        .into_iter()
        .map(|role| {
            let f = beams.get(q, role).ok_or_else(|| IsacError::MissingBeam { q, role: role.to_string() })?;
            if f.len() != steering.first().map_or(f.len(), |a| a.len()) {
                return Err(IsacError::DimensionMismatch { expected: steering[0].len(), got: f.len() });
            }
            Ok((role, steering.iter().map(|a| a.dot(f)).collect()))
        })
        .collect()
}

/// Writes symbol column q of the sensing tensor into `out` (length P·MN).
#[allow(clippy::too_many_arguments)]
fn synth_column(
    out: &mut [C64],
    q: usize,
    targets: &[TargetSpec],
    steering: &[CVec],
    num: &OfdmNumerology,
    plan: &ResourcePlan,
    beams: &BeamPlan,
    symbols: &SymbolGrid,
    noise_seed: Option<u64>,
) -> Result<()> {
    let mn = steering.first().map_or(beams.mn, |a| a.len());
    let gains = target_gains(steering, plan, beams, q)?;
    let mut rng = noise_seed.map(|s| stream(s, DOMAIN_SENSING_NOISE, q as u64));
    let var = num.sigma_tilde2();
    for p in 0..num.p_count {
        let col = &mut out[p * mn..(p + 1) * mn];
        let role = plan.role(p, q);
        let g = &gains.iter().find(|(r, _)| *r == role).expect("role cached").1;
        let b = symbols.get(p, q);
        col.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for (k, t) in targets.iter().enumerate() {
            let s = t.alpha * g[k] * b * target_phase(t, num, p, q);
            for (x, a) in col.iter_mut().zip(steering[k].iter()) {
                *x += a * s;
            }
        }
        if let Some(rng) = rng.as_mut() {
            for x in col.iter_mut() {
                *x += complex_normal(rng, var);
            }
        }
    }
    Ok(())
}

/// [𝒴]_{:,p,q} = Σ_k α_k a_k (a_kᵀ f_{p,q}) b_{p,q} e^{−j2πpΔfτ_k} e^{j2πf_{D,k} q T_O} + noise.
/// Each symbol column is synthesised independently with its own noise stream,
/// so results do not depend on the rayon thread count. `noise_seed = None`
/// gives the noiseless tensor.
#[allow(clippy::too_many_arguments)]
pub fn synth_sensing_tensor(
    targets: &[TargetSpec],
    upa: &Upa,
    num: &OfdmNumerology,
    plan: &ResourcePlan,
    beams: &BeamPlan,
    symbols: &SymbolGrid,
    noise_seed: Option<u64>,
) -> Result<SensingTensor> {
    let mn = upa.elements();
    let steering: Vec<CVec> = targets.iter().map(|t| steering_vector(upa, &t.angle)).collect();
    let mut tensor = SensingTensor::zeros(mn, num.p_count, num.q_count, num.sigma_tilde2());
    tensor
        .samples
        .par_chunks_mut(mn * num.p_count)
        .enumerate()
        .try_for_each(|(q, out)| synth_column(out, q, targets, &steering, num, plan, beams, symbols, noise_seed))?;
    Ok(tensor)
}

/// Streams the tensor straight to a binary sink one symbol column at a time,
/// in the same format as [`SensingTensor::write_binary`].
#[allow(clippy::too_many_arguments)]
pub fn stream_sensing_tensor<W: Write>(
    mut sink: W,
    targets: &[TargetSpec],
    upa: &Upa,
    num: &OfdmNumerology,
    plan: &ResourcePlan,
    beams: &BeamPlan,
    symbols: &SymbolGrid,
    noise_seed: Option<u64>,
) -> Result<()> {
    let mn = upa.elements();
    let steering: Vec<CVec> = targets.iter().map(|t| steering_vector(upa, &t.angle)).collect();
    for d in [mn, num.p_count, num.q_count] {
        sink.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut col = vec![C64::new(0.0, 0.0); mn * num.p_count];
    let mut buf = Vec::with_capacity(col.len() * 16);
    for q in 0..num.q_count {
        synth_column(&mut col, q, targets, &steering, num, plan, beams, symbols, noise_seed)?;
        buf.clear();
        for s in &col {
            buf.extend_from_slice(&s.re.to_le_bytes());
            buf.extend_from_slice(&s.im.to_le_bytes());
        }
        sink.write_all(&buf)?;
    }
    Ok(())
}

/// [Y_u]_{p,q} = h_{u,p,q}ᴴ f_{u,q} b_{p,q} + Z on Γ_u, zero elsewhere.
/// Returned symbol-major (index q·P + p).
pub fn synth_ue_grid(
    channel: &UeChannel,
    user: usize,
    num: &OfdmNumerology,
    plan: &ResourcePlan,
    beams: &BeamPlan,
    symbols: &SymbolGrid,
    noise_seed: Option<u64>,
) -> Result<Vec<C64>> {
    let (pc, qc) = (num.p_count, num.q_count);
    let role = Role::User(user);
    let var = num.sigma_tilde2();
    let mut grid = vec![C64::new(0.0, 0.0); pc * qc];
    grid.par_chunks_mut(pc).enumerate().try_for_each(|(q, col)| -> Result<()> {
        if !(0..pc).any(|p| plan.role(p, q) == role) {
            return Ok(());
        }
        let f = beams.get(q, role).ok_or_else(|| IsacError::MissingBeam { q, role: role.to_string() })?;
        let mut rng = noise_seed.map(|s| stream(s, DOMAIN_UE_NOISE, ((user as u64) << 32) | q as u64));
        for (p, y) in col.iter_mut().enumerate() {
            if plan.role(p, q) != role {
                continue;
            }
            *y = channel.response(f, p, q) * symbols.get(p, q);
            if let Some(rng) = rng.as_mut() {
                *y += complex_normal(rng, var);
            }
        }
        Ok(())
    })?;
    Ok(grid)
}

/// C_sum = (1/(Q T_O)) Σ_u Σ_{Γ_u} log2(1 + |hᴴ f_u|²/σ²) with full-band σ².
pub fn sum_rate(plan: &ResourcePlan, channels: &[UeChannel], beams: &BeamPlan, num: &OfdmNumerology) -> Result<f64> {
    let sigma2 = num.sigma2();
    let per_symbol: Vec<f64> = (0..num.q_count)
        .into_par_iter()
        .map(|q| -> Result<f64> {
            let mut acc = 0.0;
            for p in 0..num.p_count {
                if let Role::User(u) = plan.role(p, q) {
                    let f = beams.get(q, Role::User(u)).ok_or_else(|| IsacError::MissingBeam {
                        q,
                        role: format!("user {u}"),
                    })?;
                    let ch = channels.get(u).ok_or(IsacError::DimensionMismatch { expected: u + 1, got: channels.len() })?;
                    acc += (1.0 + ch.response(f, p, q).norm_sqr() / sigma2).log2();
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(per_symbol.iter().sum::<f64>() / (num.q_count as f64 * num.t_o))
}

/// Average transmit power (1/PQ) Σ_{p,q} ‖f_{p,q}‖², which reduces to
/// (1−κ)‖f_U‖² + κ‖f_S‖² for a dedicated plan with one user beam.
pub fn average_transmit_power(plan: &ResourcePlan, beams: &BeamPlan) -> Result<f64> {
    let mut acc = 0.0;
    for q in 0..plan.q_count {
        for role in plan.roles_on_symbol(q) {
            let count = (0..plan.p_count).filter(|&p| plan.role(p, q) == role).count();
            let f = beams.get(q, role).ok_or_else(|| IsacError::MissingBeam { q, role: role.to_string() })?;
            acc += count as f64 * f.norm_squared();
        }
    }
    Ok(acc / (plan.p_count * plan.q_count) as f64)
}
