//! Truncated factorizations and the low-rank approximation experiment.
//!
//! [`truncated_svd`] estimates the leading singular triplets of a square
//! matrix by block power (subspace) iteration followed by a Rayleigh–Ritz
//! step; the small projected problem is solved with cyclic Jacobi
//! rotations. The truncation `U_k Σ_k V_kᵀ` is the best rank-`k`
//! approximation once the iteration has converged.
//!
//! [`lowrank_error_experiment`] draws random full residuals `R`, truncates
//! them to rank `k`, and measures how far `(I + R_k) ⊗_c x` lands from
//! `(I + R) ⊗_c x` for random ball points `x`.

use alloc::vec;
use alloc::vec::Vec;

use crate::ball::raw;
use crate::ghdm::LowRankProjection;
use crate::math::{abs, dot, ln, norm, sqrt};
use crate::{rng, Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `n × r`, orthonormal columns.
    pub u: Matrix,
    /// Descending singular values.
    pub s: Vec<f64>,
    /// `n × r`, orthonormal columns.
    pub v: Matrix,
}

impl TruncatedSvd {
    /// `(U_k Σ_k, V_k)` as a residual projection `I + U_k Σ_k V_kᵀ`.
    pub fn factors(&self, k: usize) -> LowRankProjection {
        let n = self.u.rows();
        let mut m_a = Matrix::zeros(n, k);
        let mut m_b = Matrix::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                m_a.set(i, j, self.u.get(i, j) * self.s[j]);
                m_b.set(i, j, self.v.get(i, j));
            }
        }
        LowRankProjection {
            m_a,
            m_b,
            residual: true,
        }
    }
}

/// Orthonormalizes the columns of `m` in place (modified Gram–Schmidt,
/// applied twice). Columns that collapse numerically are zeroed.
fn orthonormalize(m: &mut Matrix) {
    let (n, r) = m.shape();
    let mut cols: Vec<Vec<f64>> = (0..r)
        .map(|j| (0..n).map(|i| m.get(i, j)).collect())
        .collect();
    for j in 0..r {
        for _ in 0..2 {
            for p in 0..j {
                let proj = dot(&cols[p], &cols[j]);
                let (head, tail) = cols.split_at_mut(j);
                for (x, q) in tail[0].iter_mut().zip(&head[p]) {
                    *x -= proj * q;
                }
            }
        }
        let len = norm(&cols[j]);
        let col = &mut cols[j];
        if len > 1e-12 {
            col.iter_mut().for_each(|x| *x /= len);
        } else {
            col.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            m.set(i, j, x);
        }
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut a = a.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum();
        let scale: f64 = a.as_slice().iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if abs(apq) < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (abs(theta) + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, dst, v.get(k, src));
        }
    }
    (values, vecs)
}

/// Leading `rank` singular triplets of the square matrix `m`.
pub fn truncated_svd(
    m: &Matrix,
    rank: usize,
    power_iters: usize,
    seed: u64,
) -> Result<TruncatedSvd> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape {
            op: "truncated_svd",
            left: m.shape(),
            right: (n, n),
        });
    }
    if rank > n {
        return Err(Error::RankTooLarge { rank, dim: n });
    }
    let block = (rank + 10).min(n);
    let mut r = rng::seeded(seed);
    let omega = Matrix::from_vec(n, block, rng::normal_vec(&mut r, n * block, 1.0))?;
    let mt = m.transpose();
    let mut q = m.matmul(&omega)?;
    orthonormalize(&mut q);
    for _ in 0..power_iters {
        let mut z = mt.matmul(&q)?;
        orthonormalize(&mut z);
        q = m.matmul(&z)?;
        orthonormalize(&mut q);
    }
    // B = Qᵀ M, then B Bᵀ = W Λ Wᵀ
    let b = q.transpose().matmul(m)?;
    let gram = b.matmul(&b.transpose())?;
    let (values, w) = symmetric_eigen(&gram);
    let u_full = q.matmul(&w)?;
    let bt_w = b.transpose().matmul(&w)?;
    let mut u = Matrix::zeros(n, rank);
    let mut v = Matrix::zeros(n, rank);
    let mut s = Vec::with_capacity(rank);
    for j in 0..rank {
        let sigma = sqrt(values[j].max(0.0));
        s.push(sigma);
        for i in 0..n {
            u.set(i, j, u_full.get(i, j));
            v.set(
                i,
                j,
                if sigma > 0.0 {
                    bt_w.get(i, j) / sigma
                } else {
                    0.0
                },
            );
        }
    }
    Ok(TruncatedSvd { u, s, v })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub trials: usize,
    /// Ball points drawn per trial.
    pub points_per_trial: usize,
    /// Residual entries are `N(0, scale² / n)`.
    pub residual_scale: f64,
    pub kappa: f64,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            points_per_trial: 4,
            residual_scale: 0.5,
            kappa: 1.0,
            power_iters: 8,
            seed: 0,
        }
    }
}

/// Error quantiles for one `(n, k)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub dim: usize,
    pub rank: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
    pub samples: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Median (and spread) of `‖(I + R_k) ⊗ x - (I + R) ⊗ x‖` for every rank in `ranks`.
///
/// `k = n` uses the exact factorization `R · Iᵀ`, which reproduces the
/// full product bit for bit.
pub fn lowrank_error_experiment(
    dim: usize,
    ranks: &[usize],
    cfg: &ExperimentConfig,
) -> Result<Vec<ErrorRow>> {
    if let Some(&k) = ranks.iter().find(|&&k| k > dim || k == 0) {
        return Err(Error::RankTooLarge { rank: k, dim });
    }
    if cfg.trials == 0 || cfg.points_per_trial == 0 {
        return Err(Error::invalid(
            "trials and points_per_trial must be positive",
        ));
    }
    let kappa = cfg.kappa;
    let radius = 1.0 / sqrt(kappa);
    let truncated_max = ranks
        .iter()
        .copied()
        .filter(|&k| k < dim)
        .max()
        .unwrap_or(0);
    let mut errors: Vec<Vec<f64>> =
        vec![Vec::with_capacity(cfg.trials * cfg.points_per_trial); ranks.len()];

    for trial in 0..cfg.trials {
        let mut r = rng::stream(cfg.seed ^ ((dim as u64) << 32), trial as u64);
        let std = cfg.residual_scale / sqrt(dim as f64);
        let residual = Matrix::from_vec(dim, dim, rng::normal_vec(&mut r, dim * dim, std))?;
        let svd = if truncated_max > 0 {
            let svd_seed = rand::RngCore::next_u64(&mut r);
            Some(truncated_svd(
                &residual,
                truncated_max,
                cfg.power_iters,
                svd_seed,
            )?)
        } else {
            None
        };
        let projections: Vec<LowRankProjection> = ranks
            .iter()
            .map(|&k| {
                if k == dim {
                    LowRankProjection {
                        m_a: residual.clone(),
                        m_b: Matrix::identity(dim),
                        residual: true,
                    }
                } else {
                    svd.as_ref().expect("truncated ranks present").factors(k)
                }
            })
            .collect();

        for _ in 0..cfg.points_per_trial {
            let dir = rng::normal_vec(&mut r, dim, 1.0);
            let len = rng::uniform(&mut r, 0.0, 0.9) * radius / norm(&dir);
            let x: Vec<f64> = dir.iter().map(|d| d * len).collect();

            let mut target: Vec<f64> = (0..dim).map(|i| x[i] + dot(residual.row(i), &x)).collect();
            raw::matvec_rescale(&x, &mut target, kappa);

            for (slot, proj) in errors.iter_mut().zip(&projections) {
                let mut approx = vec![0.0; dim];
                proj.apply(&x, &mut approx);
                raw::matvec_rescale(&x, &mut approx, kappa);
                let err = sqrt(
                    approx
                        .iter()
                        .zip(&target)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum(),
                );
                slot.push(err);
            }
        }
    }

    Ok(ranks
        .iter()
        .zip(errors)
        .map(|(&rank, mut e)| {
            e.sort_by(f64::total_cmp);
            ErrorRow {
                dim,
                rank,
                median: quantile(&e, 0.5),
                q25: quantile(&e, 0.25),
                q75: quantile(&e, 0.75),
                q90: quantile(&e, 0.9),
                max: *e.last().expect("non-empty"),
                samples: e.len(),
            }
        })
        .collect())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (ln(*x), ln(*y)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes() {
        let a = Matrix::from_vec(3, 3, vec![4., 1., 0.5, 1., 3., 0.2, 0.5, 0.2, 1.]).unwrap();
        let (vals, vecs) = symmetric_eigen(&a);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for j in 0..3 {
            let col: Vec<f64> = (0..3).map(|i| vecs.get(i, j)).collect();
            let av = a.matvec(&col);
            for i in 0..3 {
                assert!((av[i] - vals[j] * col[i]).abs() < 1e-12);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 8.0).abs() < 1e-12);
    }

    #[test]
    fn svd_recovers_planted_spectrum() {
        // diag(5, 3, 1, 0.5) rotated by a permutation
        let n = 4;
        let mut m = Matrix::zeros(n, n);
        for (i, (j, s)) in [(2, 5.0), (0, 3.0), (3, 1.0), (1, 0.5)].iter().enumerate() {
            m.set(i, *j, *s);
        }
        let svd = truncated_svd(&m, 2, 10, 1).unwrap();
        assert!((svd.s[0] - 5.0).abs() < 1e-10);
        assert!((svd.s[1] - 3.0).abs() < 1e-10);
        let approx = svd.factors(2).to_dense();
        // I + rank-2 part: the two largest entries survive, the rest vanish
        assert!((approx.get(0, 2) - 5.0).abs() < 1e-10);
        assert!((approx.get(1, 0) - 3.0).abs() < 1e-10);
        assert!(approx.get(2, 3).abs() < 1e-10);
        assert!(matches!(
            truncated_svd(&m, 5, 1, 0),
            Err(Error::RankTooLarge { .. })
        ));
    }

    #[test]
    fn full_rank_error_is_exactly_zero() {
        let cfg = ExperimentConfig {
            trials: 3,
            ..ExperimentConfig::default()
        };
        let rows = lowrank_error_experiment(8, &[2, 4, 8], &cfg).unwrap();
        assert_eq!(rows[2].max, 0.0);
        assert!(rows[0].median >= rows[1].median);
        assert!(lowrank_error_experiment(8, &[9], &cfg).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * libm::pow(*x, -0.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
    }
}
