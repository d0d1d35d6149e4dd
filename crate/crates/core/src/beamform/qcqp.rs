//! Minimum-power beamforming under rank-one quality constraints,
//!
//! ```text
//!   minimise ‖f‖²  subject to  |g_iᴴ f|² ≥ t_i,
//! ```
//!
//! solved by semidefinite relaxation in the span of the generators.

use super::sdp::{psd_factor, reduce_rank, solve_trace_min, SdpOptions};
use crate::linalg::{hermitian_eigen, orthonormal_basis, outer, real};
use crate::rng::{complex_normal, stream, DOMAIN_RANDOMIZATION};
use crate::{CMat, CVec, IsacError, Result};

#[derive(Debug, Clone)]
pub struct QcqpSpec {
    pub dim: usize,
    /// (g_i, t_i) meaning |g_iᴴ f|² ≥ t_i.
    pub constraints: Vec<(CVec, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct QcqpOptions {
    pub sdp: SdpOptions,
    /// λ₂/λ₁ at or below which the relaxed solution counts as rank one.
    pub rank_one_ratio: f64,
    pub randomization_samples: usize,
    pub seed: u64,
}

impl Default for QcqpOptions {
    fn default() -> Self {
        Self { sdp: SdpOptions::default(), rank_one_ratio: 1e-6, randomization_samples: 200, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub f: CVec,
    pub power: f64,
    /// Optimal value of the relaxation, a lower bound on any feasible power.
    pub relaxation_bound: f64,
    pub rank_one: bool,
    pub iterations: usize,
}

impl QcqpSpec {
    /// Smallest |g_iᴴ f|²/t_i over the constraints with t_i > 0.
    pub fn min_ratio(&self, f: &CVec) -> f64 {
        self.constraints
            .iter()
            .filter(|(_, t)| *t > 0.0)
            .map(|(g, t)| g.dotc(f).norm_sqr() / t)
            .fold(f64::INFINITY, f64::min)
    }

    /// Scales f so the tightest constraint holds with equality.
    pub fn rescale_to_feasible(&self, f: &CVec) -> Option<CVec> {
        let r = self.min_ratio(f);
        if r.is_finite() && r > 0.0 {
            Some(f * real(1.0 / r.sqrt()))
        } else {
            None
        }
    }

    fn validate(&self) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(IsacError::Empty("constraint list"));
        }
        for (i, (g, t)) in self.constraints.iter().enumerate() {
            if g.len() != self.dim {
                return Err(IsacError::DimensionMismatch { expected: self.dim, got: g.len() });
            }
            if !(t.is_finite() && *t >= 0.0) {
                return Err(IsacError::InvalidArgument(format!("constraint {i} threshold {t}")));
            }
            if g.norm() == 0.0 {
                return Err(IsacError::ZeroConstraint(i));
            }
        }
        Ok(())
    }
}

pub fn solve_min_power_qcqp(spec: &QcqpSpec, opts: &QcqpOptions) -> Result<QcqpSolution> {
    spec.validate()?;
    let active: Vec<&(CVec, f64)> = spec.constraints.iter().filter(|(_, t)| *t > 0.0).collect();
    if active.is_empty() {
        return Ok(QcqpSolution { f: CVec::zeros(spec.dim), power: 0.0, relaxation_bound: 0.0, rank_one: true, iterations: 0 });
    }
    if active.len() == 1 {
        let (g, t) = active[0];
        let f = g * real(t.sqrt() / g.norm_squared());
        let power = f.norm_squared();
        return Ok(QcqpSolution { f, power, relaxation_bound: power, rank_one: true, iterations: 0 });
    }

    // The optimum lies in span{g_i}: any orthogonal component adds power
    // without changing a single gᵢᴴf.
    let gens: Vec<CVec> = active.iter().map(|(g, _)| g.clone()).collect();
    let basis = orthonormal_basis(&gens, 1e-10);
    let reduced: Vec<CVec> = gens.iter().map(|g| basis.adjoint() * g).collect();
    let theta = active
        .iter()
        .zip(&reduced)
        .map(|((_, t), gr)| t / gr.norm_squared())
        .fold(f64::INFINITY, f64::min);
    let a: Vec<CMat> = active
        .iter()
        .zip(&reduced)
        .map(|((_, t), gr)| outer(gr) * real(theta / t))
        .collect();
    let b = vec![1.0; a.len()];
    let sol = solve_trace_min(&a, &b, &opts.sdp)?;
    let x = reduce_rank(&sol.x, &a, 1e-9) * real(theta);
    let bound = sol.primal_objective.min(sol.dual_objective) * theta;

    let (vals, vecs) = hermitian_eigen(&x);
    let rank_one = vals.len() < 2 || vals[1].max(0.0) <= opts.rank_one_ratio * vals[0];
    let principal = &basis * (vecs.column(0) * real(vals[0].max(0.0).sqrt()));
    let mut best = spec.rescale_to_feasible(&principal);

    if !rank_one {
        let factor = psd_factor(&x, 1e-12);
        let mut rng = stream(opts.seed, DOMAIN_RANDOMIZATION, 0);
        for _ in 0..opts.randomization_samples {
            let w = CVec::from_fn(factor.ncols(), |_, _| complex_normal(&mut rng, 1.0));
            let cand = &basis * (&factor * w);
            if let Some(c) = spec.rescale_to_feasible(&cand) {
                if best.as_ref().map_or(true, |bf| c.norm_squared() < bf.norm_squared()) {
                    best = Some(c);
                }
            }
        }
    }
    let f = best.ok_or(IsacError::NonConvergence {
        iterations: sol.iterations,
        gap: f64::NAN,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
    })?;
    let power = f.norm_squared();
    Ok(QcqpSolution { f, power, relaxation_bound: bound, rank_one, iterations: sol.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    fn v(xs: &[(f64, f64)]) -> CVec {
        CVec::from_iterator(xs.len(), xs.iter().map(|&(r, i)| C64::new(r, i)))
    }

    #[test]
    fn single_constraint_is_matched_filter() {
        let g = v(&[(1.0, 0.0), (0.0, 2.0), (-1.0, 1.0)]);
        let spec = QcqpSpec { dim: 3, constraints: vec![(g.clone(), 4.0)] };
        let sol = solve_min_power_qcqp(&spec, &QcqpOptions::default()).unwrap();
        assert!((sol.power - 4.0 / g.norm_squared()).abs() < 1e-12);
        assert!((g.dotc(&sol.f).norm_sqr() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_constraints_add_up() {
        let g1 = v(&[(2.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        let g2 = v(&[(0.0, 0.0), (0.0, 0.0), (0.0, 1.0), (0.0, 0.0)]);
        let spec = QcqpSpec { dim: 4, constraints: vec![(g1, 1.0), (g2, 3.0)] };
        let sol = solve_min_power_qcqp(&spec, &QcqpOptions::default()).unwrap();
        assert!(sol.rank_one);
        assert!((sol.power - (0.25 + 3.0)).abs() < 1e-6);
        assert!(spec.min_ratio(&sol.f) >= 1.0 - 1e-9);
        assert!(sol.relaxation_bound <= sol.power * (1.0 + 1e-6));
    }

    #[test]
    fn zero_thresholds_need_no_power() {
        let spec = QcqpSpec { dim: 2, constraints: vec![(v(&[(1.0, 0.0), (0.0, 1.0)]), 0.0)] };
        let sol = solve_min_power_qcqp(&spec, &QcqpOptions::default()).unwrap();
        assert_eq!(sol.power, 0.0);
    }

    #[test]
    fn malformed_specs_are_rejected() {
        let opts = QcqpOptions::default();
        assert!(solve_min_power_qcqp(&QcqpSpec { dim: 2, constraints: vec![] }, &opts).is_err());
        let short = QcqpSpec { dim: 3, constraints: vec![(v(&[(1.0, 0.0)]), 1.0)] };
        assert!(matches!(solve_min_power_qcqp(&short, &opts), Err(IsacError::DimensionMismatch { .. })));
        let zero = QcqpSpec { dim: 1, constraints: vec![(v(&[(0.0, 0.0)]), 1.0)] };
        assert!(matches!(solve_min_power_qcqp(&zero, &opts), Err(IsacError::ZeroConstraint(0))));
        let neg = QcqpSpec { dim: 1, constraints: vec![(v(&[(1.0, 0.0)]), -1.0)] };
        assert!(solve_min_power_qcqp(&neg, &opts).is_err());
    }
}
