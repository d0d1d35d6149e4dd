//! Symbol-randomness removal, delay-Doppler transforms and energy-based
//! denoising of the sensing tensor.

use std::ops::Range;

use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::beamform::SweepWindow;
use crate::gridsim::{SensingTensor, SymbolGrid};
use crate::{IsacError, Result, C64};

/// Rectangular block of REs the receiver processes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingRegion {
    pub p: Range<usize>,
    pub q: Range<usize>,
}

impl SensingRegion {
    pub fn full(p_count: usize, q_count: usize) -> Self {
        Self { p: 0..p_count, q: 0..q_count }
    }
}

/// 𝒴̃ = 𝒴 / b element-wise over symbol columns.
pub fn remove_symbol_randomness(tensor: &SensingTensor, symbols: &SymbolGrid) -> Result<SensingTensor> {
    if symbols.p_count != tensor.p_count || symbols.q_count != tensor.q_count {
        return Err(IsacError::DimensionMismatch { expected: tensor.p_count * tensor.q_count, got: symbols.values.len() });
    }
    if let Some(k) = symbols.values.iter().position(|b| b.norm() == 0.0) {
        return Err(IsacError::ZeroSymbol { p: k % symbols.p_count, q: k / symbols.p_count });
    }
    let mut out = tensor.clone();
    out.samples.par_chunks_mut(tensor.mn).enumerate().for_each(|(idx, col)| {
        let inv = 1.0 / symbols.values[idx];
        col.iter_mut().for_each(|x| *x *= inv);
    });
    out.noise_var = tensor.noise_var * tensor.p_count as f64;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdLayout {
    /// One Doppler FFT per sweep beam, each `block` symbols wide.
    Search { block: usize },
    /// A single Doppler FFT across every sensing symbol.
    Track,
}

/// Delay-Doppler cube: bin (n, g, c) at index (c·P + g)·MN + n, with c the
/// Doppler column (n_b·Q_b + w when searching).
#[derive(Debug, Clone)]
pub struct DdTensor {
    pub mn: usize,
    pub delay_bins: usize,
    pub doppler_cols: usize,
    pub layout: DdLayout,
    pub bins: Vec<C64>,
}

impl DdTensor {
    pub fn bin(&self, g: usize, c: usize) -> &[C64] {
        let s = (c * self.delay_bins + g) * self.mn;
        &self.bins[s..s + self.mn]
    }

    pub fn bin_count(&self) -> usize {
        self.delay_bins * self.doppler_cols
    }

    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|x| x.norm_sqr()).sum()
    }

    /// Bin energies ‖column‖² indexed by c·P + g.
    pub fn bin_energies(&self) -> Vec<f64> {
        self.bins.chunks(self.mn).map(|c| c.iter().map(|x| x.norm_sqr()).sum()).collect()
    }
}

/// Sums Σ_p Σ_q 𝒴̃ e^{j2πpg/P} e^{−j2πq'w/L} over the region, where q' is the
/// symbol offset inside its Doppler block of length L. Blocks are the sweep
/// beams when searching and the whole region when tracking. Both axes are
/// unnormalised FFTs, so the output energy is P·L times the input energy.
pub fn dd_transform(y_tilde: &SensingTensor, region: &SensingRegion, sweep: Option<&SweepWindow>) -> Result<DdTensor> {
    let (mn, pc) = (y_tilde.mn, y_tilde.p_count);
    if region.p.end > pc || region.q.end > y_tilde.q_count || region.p.is_empty() || region.q.is_empty() {
        return Err(IsacError::InvalidArgument("sensing region outside the grid".into()));
    }
    let (layout, blocks): (DdLayout, Vec<Range<usize>>) = match sweep {
        Some(w) => {
            let qb = w.schedule.symbols_per_beam;
            let span = w.q_start..w.q_start + w.schedule.total_symbols;
            if span != region.q {
                return Err(IsacError::InvalidArgument(format!(
                    "sweep covers symbols {span:?} but the sensing region is {:?}",
                    region.q
                )));
            }
            (DdLayout::Search { block: qb }, (0..w.schedule.beam_count()).map(|b| w.symbols_of_beam(b)).collect())
        }
        None => (DdLayout::Track, vec![region.q.clone()]),
    };
    let cols: usize = blocks.iter().map(|b| b.len()).sum();
    let mut planner = FftPlanner::<f64>::new();
    let ifft_p = planner.plan_fft_inverse(pc);
    let block_ffts: Vec<_> = blocks.iter().map(|b| planner.plan_fft_forward(b.len())).collect();

    // Per element: a cols×P plane, transformed along p then along q.
    let planes: Vec<Vec<C64>> = (0..mn)
        .into_par_iter()
        .map(|n| {
            let mut plane = vec![C64::new(0.0, 0.0); cols * pc];
            let mut col0 = 0;
            for (block, fft) in blocks.iter().zip(&block_ffts) {
                for (k, q) in block.clone().enumerate() {
                    let row = &mut plane[(col0 + k) * pc..(col0 + k + 1) * pc];
                    for p in region.p.clone() {
                        row[p] = y_tilde.column(p, q)[n];
                    }
                    ifft_p.process(row);
                }
                let len = block.len();
                let mut line = vec![C64::new(0.0, 0.0); len];
                for g in 0..pc {
                    for k in 0..len {
                        line[k] = plane[(col0 + k) * pc + g];
                    }
                    fft.process(&mut line);
                    for k in 0..len {
                        plane[(col0 + k) * pc + g] = line[k];
                    }
                }
                col0 += len;
            }
            plane
        })
        .collect();
    let mut bins = vec![C64::new(0.0, 0.0); cols * pc * mn];
    bins.par_chunks_mut(mn).enumerate().for_each(|(idx, out)| {
        for (n, o) in out.iter_mut().enumerate() {
            *o = planes[n][idx];
        }
    });
    Ok(DdTensor { mn, delay_bins: pc, doppler_cols: cols, layout, bins })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Denoise {
    /// Keep the L most energetic bins.
    KeepTop(usize),
    /// Zero bins whose energy is below the threshold.
    Threshold(f64),
    Off,
}

/// Zeroes low-energy bins. With `KeepTop(L)` exactly L bins survive; equal
/// energies are ranked by the lower (g, w) index.
pub fn denoise(dd: &DdTensor, rule: Denoise) -> DdTensor {
    let energies = dd.bin_energies();
    let p = dd.delay_bins;
    let keep: Vec<bool> = match rule {
        Denoise::Off => vec![true; energies.len()],
        Denoise::Threshold(t) => energies.iter().map(|&e| e >= t).collect(),
        Denoise::KeepTop(l) => {
            let mut order: Vec<usize> = (0..energies.len()).collect();
            let gw = |idx: usize| (idx % p, idx / p);
            order.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]).then(gw(a).cmp(&gw(b))));
            let mut keep = vec![false; energies.len()];
            for &i in order.iter().take(l) {
                keep[i] = true;
            }
            keep
        }
    };
    let mut out = dd.clone();
    for (i, chunk) in out.bins.chunks_mut(dd.mn).enumerate() {
        if !keep[i] {
            chunk.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        }
    }
    out
}
