//! Primal-dual interior-point solver for small dense complex SDPs of the form
//!
//! ```text
//!   minimise tr(X)  subject to  tr(A_i X) ≥ b_i,  X ⪰ 0
//! ```
//!
//! with Hermitian A_i. Slacks turn the inequalities into equalities
//! tr(A_i X) − s_i = b_i, s ≥ 0; the dual is max bᵀy s.t. Σ y_i A_i + Z = I,
//! y ≥ 0, Z ⪰ 0. Search directions use the HKM scaling with a Mehrotra
//! predictor-corrector.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::linalg::{hermitian_eigen, hermitize, re_trace_product, real};
use crate::{CMat, IsacError, Result, C64};

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    /// Relative duality-gap and residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of the step to the boundary taken each iteration.
    pub step_fraction: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100, step_fraction: 0.95 }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: CMat,
    pub y: Vec<f64>,
    pub z: CMat,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

struct Direction {
    dx: CMat,
    dz: CMat,
    ds: Vec<f64>,
    dy: Vec<f64>,
}

/// Largest α ≤ 1/ε-scale such that X + αΔ stays PSD, computed from the
/// eigenvalues of L⁻¹ΔL⁻ᴴ with X = LLᴴ.
fn max_psd_step(x: &CMat, d: &CMat) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let li_d = l.solve_lower_triangular(d).expect("triangular solve");
    let m = l.solve_lower_triangular(&li_d.adjoint()).expect("triangular solve");
    let (vals, _) = hermitian_eigen(&m);
    let min = vals.last().copied().unwrap_or(0.0);
    if min < 0.0 {
        -1.0 / min
    } else {
        f64::INFINITY
    }
}

fn max_pos_step(v: &[f64], d: &[f64]) -> f64 {
    v.iter().zip(d).filter(|(_, &dv)| dv < 0.0).map(|(&x, &dv)| -x / dv).fold(f64::INFINITY, f64::min)
}

fn inverse_pd(m: &CMat) -> Option<CMat> {
    Cholesky::new(hermitize(m)).map(|c| c.inverse())
}

pub fn solve_trace_min(a: &[CMat], b: &[f64], opts: &SdpOptions) -> Result<SdpSolution> {
    let m = a.len();
    if m == 0 || m != b.len() {
        return Err(IsacError::InvalidArgument("SDP needs matching, nonempty constraint data".into()));
    }
    let n = a[0].nrows();
    let ident = CMat::identity(n, n);

    // Start well inside the cone: scale X so every constraint has unit slack
    // margin, and pick y small enough that Z = I − Σ y_i A_i stays ⪰ I/2 for
    // PSD data.
    let mut xi: f64 = 1.0;
    for (ai, &bi) in a.iter().zip(b) {
        let tr = ai.trace().re;
        if tr > 0.0 {
            xi = xi.max(2.0 * (bi.abs() + 1.0) / tr);
        }
    }
    let mut x = &ident * real(xi);
    let mut s: Vec<f64> = a.iter().zip(b).map(|(ai, &bi)| (re_trace_product(ai, &x) - bi).max(1.0)).collect();
    let norm_max = a.iter().map(|ai| ai.norm()).fold(0.0, f64::max).max(1e-300);
    let mut y = vec![0.5 / (m as f64 * norm_max); m];
    let mut z = &ident - a.iter().zip(&y).fold(CMat::zeros(n, n), |acc, (ai, &yi)| acc + ai * real(yi));
    if Cholesky::new(z.clone()).is_none() {
        z = ident.clone();
    }

    let bnorm = 1.0 + b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut last = (f64::NAN, f64::NAN, f64::NAN);
    for iter in 0..opts.max_iter {
        let rp: Vec<f64> = (0..m).map(|i| b[i] - re_trace_product(&a[i], &x) + s[i]).collect();
        let sum_ya = a.iter().zip(&y).fold(CMat::zeros(n, n), |acc, (ai, &yi)| acc + ai * real(yi));
        let rd = &ident - sum_ya - &z;
        let pobj = x.trace().re;
        let dobj: f64 = b.iter().zip(&y).map(|(bi, yi)| bi * yi).sum();
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pres = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        let dres = rd.norm() / (1.0 + (n as f64).sqrt());
        last = (gap, pres, dres);
        if gap <= opts.tol && pres <= opts.tol && dres <= opts.tol {
            return Ok(SdpSolution { x, y, z, iterations: iter, primal_objective: pobj, dual_objective: dobj });
        }
        let mu = (re_trace_product(&x, &z) + s.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()) / (n + m) as f64;

        let zinv = inverse_pd(&z).ok_or(IsacError::NonConvergence {
            iterations: iter,
            gap,
            primal_residual: pres,
            dual_residual: dres,
        })?;
        // Schur complement M_ij = Re tr(A_i X A_j Z⁻¹) + δ_ij s_i/y_i.
        let xaz: Vec<CMat> = a.iter().map(|aj| &x * aj * &zinv).collect();
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                schur[(i, j)] = re_trace_product(&a[i], &xaz[j]);
            }
            schur[(i, i)] += s[i] / y[i];
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        let factor = Cholesky::new(schur.clone());
        let lu = schur.clone().lu();
        let solve = |rhs: DVector<f64>| -> Option<DVector<f64>> {
            match &factor {
                Some(c) => Some(c.solve(&rhs)),
                None => lu.solve(&rhs),
            }
        };
        let x_rd_zinv = &x * &rd * &zinv;

        let direction = |k_mat: &CMat, k_vec: &[f64]| -> Option<Direction> {
            let kz = k_mat * &zinv - &x;
            let rhs = DVector::from_fn(m, |i, _| {
                rp[i] - re_trace_product(&a[i], &kz) + re_trace_product(&a[i], &x_rd_zinv) + (k_vec[i] - s[i] * y[i]) / y[i]
            });
            let dy = solve(rhs)?;
            let dz = &rd - a.iter().zip(dy.iter()).fold(CMat::zeros(n, n), |acc, (ai, &d)| acc + ai * real(d));
            let dx = hermitize(&(&kz - &x * &dz * &zinv));
            let ds = (0..m).map(|i| (k_vec[i] - s[i] * y[i] - s[i] * dy[i]) / y[i]).collect();
            Some(Direction { dx, dz, ds, dy: dy.iter().copied().collect() })
        };
        let fail = || IsacError::NonConvergence { iterations: iter, gap, primal_residual: pres, dual_residual: dres };

        let steps = |d: &Direction, frac: f64| {
            let ap = max_psd_step(&x, &d.dx).min(max_pos_step(&s, &d.ds));
            let ad = max_psd_step(&z, &d.dz).min(max_pos_step(&y, &d.dy));
            ((frac * ap).min(1.0), (frac * ad).min(1.0))
        };

        let pred = direction(&CMat::zeros(n, n), &vec![0.0; m]).ok_or_else(fail)?;
        let (ap, ad) = steps(&pred, 1.0);
        let x_a = &x + &pred.dx * real(ap);
        let z_a = &z + &pred.dz * real(ad);
        let comp_a: f64 = (0..m).map(|i| (s[i] + ap * pred.ds[i]) * (y[i] + ad * pred.dy[i])).sum();
        let mu_aff = (re_trace_product(&x_a, &z_a) + comp_a) / (n + m) as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let k_mat = &ident * real(sigma * mu) - &pred.dx * &pred.dz;
        let k_vec: Vec<f64> = (0..m).map(|i| sigma * mu - pred.ds[i] * pred.dy[i]).collect();
        let corr = direction(&k_mat, &k_vec).ok_or_else(fail)?;
        let (ap, ad) = steps(&corr, opts.step_fraction);
        if !(ap > 0.0 && ad > 0.0) {
            return Err(fail());
        }
        x = hermitize(&(&x + &corr.dx * real(ap)));
        z = hermitize(&(&z + &corr.dz * real(ad)));
        for i in 0..m {
            s[i] += ap * corr.ds[i];
            y[i] += ad * corr.dy[i];
        }
    }
    Err(IsacError::NonConvergence {
        iterations: opts.max_iter,
        gap: last.0,
        primal_residual: last.1,
        dual_residual: last.2,
    })
}

/// Lowers the rank of an optimal X without changing any tr(A_i X), by moving
/// along Hermitian directions Δ in the face spanned by X's range until an
/// eigenvalue hits zero. Continues while rank² exceeds the constraint count,
/// which is when such a Δ is guaranteed to exist.
pub fn reduce_rank(x: &CMat, a: &[CMat], rel_tol: f64) -> CMat {
    let mut v = psd_factor(x, rel_tol);
    loop {
        let r = v.ncols();
        if r <= 1 || r * r <= a.len() {
            break;
        }
        let w: Vec<CMat> = a.iter().map(|ai| v.adjoint() * ai * &v).collect();
        // Real parameterisation of Hermitian r×r matrices: r diagonal entries,
        // then (re, im) for each strictly upper entry.
        let params = r * r;
        let basis = |k: usize| -> CMat {
            let mut e = CMat::zeros(r, r);
            if k < r {
                e[(k, k)] = real(1.0);
                return e;
            }
            let mut idx = r;
            for i in 0..r {
                for j in (i + 1)..r {
                    if idx == k {
                        e[(i, j)] = real(1.0);
                        e[(j, i)] = real(1.0);
                        return e;
                    }
                    if idx + 1 == k {
                        e[(i, j)] = C64::new(0.0, 1.0);
                        e[(j, i)] = C64::new(0.0, -1.0);
                        return e;
                    }
                    idx += 2;
                }
            }
            e
        };
        let basis_mats: Vec<CMat> = (0..params).map(basis).collect();
        // Square system padded with zero rows so the SVD exposes the null space.
        let mut sys = DMatrix::<f64>::zeros(params, params);
        for (i, wi) in w.iter().enumerate() {
            for (k, e) in basis_mats.iter().enumerate() {
                sys[(i, k)] = re_trace_product(wi, e);
            }
        }
        let svd = sys.svd(false, true);
        let vt = svd.v_t.expect("requested V");
        let smallest = (0..params)
            .min_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]))
            .expect("nonempty");
        let coeffs = vt.row(smallest);
        let delta = basis_mats.iter().zip(coeffs.iter()).fold(CMat::zeros(r, r), |acc, (e, &c)| acc + e * real(c));
        let (dvals, _) = hermitian_eigen(&delta);
        let lead = if dvals[0].abs() >= dvals[r - 1].abs() { dvals[0] } else { dvals[r - 1] };
        if lead.abs() < 1e-300 {
            break;
        }
        let shrink = hermitize(&(CMat::identity(r, r) - delta * real(1.0 / lead)));
        let inner = psd_factor(&shrink, rel_tol);
        if inner.ncols() >= r {
            break;
        }
        v = &v * inner;
    }
    &v * v.adjoint()
}

/// V with X ≈ VVᴴ, dropping eigenvalues below rel_tol·λ_max.
pub fn psd_factor(x: &CMat, rel_tol: f64) -> CMat {
    let (vals, vecs) = hermitian_eigen(x);
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] > rel_tol * top && vals[k] > 0.0).collect();
    let mut v = CMat::zeros(x.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        v.set_column(c, &(vecs.column(k) * real(vals[k].sqrt())));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::outer;
    use crate::CVec;

    fn vecc(v: &[(f64, f64)]) -> CVec {
        CVec::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))
    }

    #[test]
    fn single_rank_one_constraint() {
        let g = vecc(&[(1.0, 0.0), (0.0, 2.0)]);
        let sol = solve_trace_min(&[outer(&g)], &[3.0], &SdpOptions::default()).unwrap();
        // Optimum t/‖g‖² = 3/5.
        assert!((sol.primal_objective - 0.6).abs() < 1e-8);
        assert!((sol.dual_objective - 0.6).abs() < 1e-8);
    }

    #[test]
    fn orthogonal_constraints_then_rank_reduction() {
        let g1 = vecc(&[(1.0, 0.0), (0.0, 0.0)]);
        let g2 = vecc(&[(0.0, 0.0), (0.0, 1.0)]);
        let a = [outer(&g1), outer(&g2)];
        let sol = solve_trace_min(&a, &[1.0, 2.0], &SdpOptions::default()).unwrap();
        assert!((sol.primal_objective - 3.0).abs() < 1e-7);
        let reduced = reduce_rank(&sol.x, &a, 1e-9);
        let (vals, _) = hermitian_eigen(&reduced);
        assert!(vals[1].abs() <= 1e-6 * vals[0]);
        for (ai, bi) in a.iter().zip([1.0, 2.0]) {
            assert!((re_trace_product(ai, &reduced) - bi).abs() < 1e-6);
        }
        assert!((reduced.trace().re - 3.0).abs() < 1e-6);
    }

    #[test]
    fn dual_certificate_is_consistent() {
        let g1 = vecc(&[(1.0, 0.5), (0.3, -0.2), (0.0, 1.0)]);
        let g2 = vecc(&[(0.2, 0.0), (1.0, 1.0), (-0.4, 0.1)]);
        let g3 = vecc(&[(0.0, -1.0), (0.5, 0.5), (1.0, 0.0)]);
        let a = [outer(&g1), outer(&g2), outer(&g3)];
        let b = [1.0, 0.5, 2.0];
        let sol = solve_trace_min(&a, &b, &SdpOptions::default()).unwrap();
        assert!(sol.y.iter().all(|&v| v >= -1e-12));
        let (zvals, _) = hermitian_eigen(&sol.z);
        assert!(zvals.last().unwrap() > &-1e-9);
        assert!((sol.primal_objective - sol.dual_objective).abs() < 1e-7 * (1.0 + sol.primal_objective));
    }
}
