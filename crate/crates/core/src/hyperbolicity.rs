//! Gromov δ-hyperbolicity of finite metric spaces.
//!
//! δ is computed from the Gromov-product matrix `A` at a fixed base point as
//! `max_{i,j} (max_k min(A_ik, A_kj) - A_ij)`, i.e. a (max, min) matrix
//! product followed by the largest entrywise excess over `A`. The relative
//! value `δ_rel = 2δ / diam` lies in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::ball::{raw, CurvatureMag};
use crate::math::sqrt;
use crate::{rng, Error, Result};

/// Symmetric, zero-diagonal, non-negative distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    m: usize,
    d: Vec<f64>,
}

/// Gromov products `(i, j)_base` for every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GromovMatrix {
    m: usize,
    base: usize,
    a: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicityReport {
    pub delta: f64,
    pub diam: f64,
    pub delta_rel: f64,
    /// Standard deviation of `delta_rel` across trials (0 for a single trial).
    pub delta_rel_std: f64,
    pub num_samples: usize,
    pub num_trials: usize,
}

/// Distance used to build a [`DistanceMatrix`] from raw coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Euclidean,
    Poincare(CurvatureMag),
}

impl Metric {
    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Metric::Euclidean => Ok(sqrt(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())),
            Metric::Poincare(k) => raw::distance(x, y, k.get()).map(|(d, _)| d),
        }
    }
}

impl DistanceMatrix {
    /// Validates a row-major `m × m` matrix.
    pub fn new(m: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                got: d.len(),
            });
        }
        for i in 0..m {
            if d[i * m + i] != 0.0 {
                return Err(Error::invalid("distance matrix diagonal must be zero"));
            }
            for j in 0..m {
                let v = d[i * m + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid("distances must be finite and non-negative"));
                }
                if v != d[j * m + i] {
                    return Err(Error::invalid("distance matrix must be symmetric"));
                }
            }
        }
        Ok(Self { m, d })
    }

    /// Pairwise distances of `points`; only the upper triangle is evaluated.
    pub fn from_points<P: AsRef<[f64]>>(points: &[P], metric: Metric) -> Result<Self> {
        let m = points.len();
        let mut d = vec![0.0; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let v = metric.distance(points[i].as_ref(), points[j].as_ref())?;
                d[i * m + j] = v;
                d[j * m + i] = v;
            }
        }
        Self::new(m, d)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.m + j]
    }

    pub fn diameter(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    /// Every entry multiplied by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.m, self.d.iter().map(|v| v * alpha).collect())
    }
}

impl GromovMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.m + j]
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
}

/// `A_ij = ½ (d(base, i) + d(base, j) - d(i, j))`.
pub fn gromov_products(d: &DistanceMatrix, base: usize) -> Result<GromovMatrix> {
    let m = d.len();
    if base >= m {
        return Err(Error::IndexOutOfRange {
            index: base,
            len: m,
        });
    }
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        let di = d.get(base, i);
        for j in 0..m {
            a[i * m + j] = 0.5 * (di + d.get(base, j) - d.get(i, j));
        }
    }
    Ok(GromovMatrix { m, base, a })
}

/// δ from the (max, min) product of the Gromov matrix with itself, base point 0.
pub fn delta_hyperbolicity(d: &DistanceMatrix) -> Result<HyperbolicityReport> {
    let m = d.len();
    if m < 3 {
        return Err(Error::InsufficientPoints { need: 3, got: m });
    }
    let a = gromov_products(d, 0)?;
    let mut delta = 0.0f64;
    let mut row = vec![0.0; m];
    for i in 0..m {
        // row[j] = max_k min(A_ik, A_kj)
        row.iter_mut().for_each(|r| *r = f64::NEG_INFINITY);
        let a_i = &a.a[i * m..(i + 1) * m];
        for k in 0..m {
            let aik = a_i[k];
            let a_k = &a.a[k * m..(k + 1) * m];
            for (r, &akj) in row.iter_mut().zip(a_k) {
                let v = if aik < akj { aik } else { akj };
                if v > *r {
                    *r = v;
                }
            }
        }
        for (r, &aij) in row.iter().zip(a_i) {
            delta = delta.max(r - aij);
        }
    }
    let diam = d.diameter();
    let delta_rel = if diam > 0.0 { 2.0 * delta / diam } else { 0.0 };
    Ok(HyperbolicityReport {
        delta,
        diam,
        delta_rel,
        delta_rel_std: 0.0,
        num_samples: m,
        num_trials: 1,
    })
}

/// Subsampling protocol: `trials` random subsets of `sample_size` points,
/// δ_rel per subset, averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub metric: Metric,
    pub sample_size: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            sample_size: 200,
            trials: 100,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    fn validate(&self, available: usize) -> Result<()> {
        if available == 0 {
            return Err(Error::EmptyInput);
        }
        if self.sample_size < 3 {
            return Err(Error::InsufficientPoints {
                need: 3,
                got: self.sample_size,
            });
        }
        if self.sample_size > available {
            return Err(Error::InsufficientPoints {
                need: self.sample_size,
                got: available,
            });
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        Ok(())
    }
}

/// One trial of [`delta_rel_sampled`]. Trial `t` draws its subset from an
/// independent seeded stream, so trials may run in any order.
pub fn delta_rel_trial<P: AsRef<[f64]>>(
    points: &[P],
    config: &SamplingConfig,
    trial: usize,
) -> Result<HyperbolicityReport> {
    config.validate(points.len())?;
    let mut r = rng::stream(config.seed, trial as u64);
    let idx = rng::sample_indices(&mut r, points.len(), config.sample_size);
    let subset: Vec<&[f64]> = idx.iter().map(|&i| points[i].as_ref()).collect();
    let d = DistanceMatrix::from_points(&subset, config.metric)?;
    delta_hyperbolicity(&d)
}

/// Averages per-trial reports in trial order.
pub fn mean_report(trials: &[HyperbolicityReport]) -> Result<HyperbolicityReport> {
    let t = trials.len();
    if t == 0 {
        return Err(Error::EmptyInput);
    }
    let tf = t as f64;
    let delta = trials.iter().map(|r| r.delta).sum::<f64>() / tf;
    let diam = trials.iter().map(|r| r.diam).sum::<f64>() / tf;
    let delta_rel = trials.iter().map(|r| r.delta_rel).sum::<f64>() / tf;
    let var = trials
        .iter()
        .map(|r| (r.delta_rel - delta_rel) * (r.delta_rel - delta_rel))
        .sum::<f64>()
        / tf;
    Ok(HyperbolicityReport {
        delta,
        diam,
        delta_rel,
        delta_rel_std: sqrt(var),
        num_samples: trials[0].num_samples,
        num_trials: t,
    })
}

/// Mean δ_rel over seeded random subsamples.
pub fn delta_rel_sampled<P: AsRef<[f64]>>(
    points: &[P],
    config: &SamplingConfig,
) -> Result<HyperbolicityReport> {
    config.validate(points.len())?;
    let reports = (0..config.trials)
        .map(|t| delta_rel_trial(points, config, t))
        .collect::<Result<Vec<_>>>()?;
    mean_report(&reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(coords: &[f64]) -> DistanceMatrix {
        let pts: Vec<[f64; 1]> = coords.iter().map(|&c| [c]).collect();
        DistanceMatrix::from_points(&pts, Metric::Euclidean).unwrap()
    }

    #[test]
    fn gromov_product_examples() {
        let d = line(&[0.0, 1.0, 2.0]);
        let a = gromov_products(&d, 0).unwrap();
        assert_eq!(a.get(1, 2), 1.0);
        assert_eq!(a.get(2, 2), d.get(0, 2));
        assert_eq!(a.get(0, 2), 0.0);
        assert!(matches!(
            gromov_products(&d, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn path_graph_is_zero_hyperbolic() {
        let d = line(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let r = delta_hyperbolicity(&d).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.diam, 4.0);
        assert_eq!(r.delta_rel, 0.0);
    }

    #[test]
    fn four_cycle() {
        // unit 4-cycle: opposite vertices at distance 2
        let d = DistanceMatrix::new(
            4,
            vec![
                0., 1., 2., 1., //
                1., 0., 1., 2., //
                2., 1., 0., 1., //
                1., 2., 1., 0.,
            ],
        )
        .unwrap();
        // Exhaustive (i, j, k) evaluation at base 0: A_13 = 0 while
        // min(A_1k, A_k3) reaches 1 at k = 2, so δ = 1 and δ_rel = 2·1/2.
        let r = delta_hyperbolicity(&d).unwrap();
        assert_eq!(r.delta, 1.0);
        assert_eq!(r.delta_rel, 1.0);
    }

    #[test]
    fn rejects_tiny_and_malformed_inputs() {
        assert!(matches!(
            delta_hyperbolicity(&line(&[0.0, 1.0])),
            Err(Error::InsufficientPoints { need: 3, got: 2 })
        ));
        assert!(DistanceMatrix::new(2, vec![0., 1., 2., 0.]).is_err());
        assert!(DistanceMatrix::new(2, vec![1., 1., 1., 0.]).is_err());
        assert!(DistanceMatrix::new(2, vec![0., -1., -1., 0.]).is_err());
    }

    #[test]
    fn sampled_protocol_validates() {
        let pts: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let mut cfg = SamplingConfig {
            sample_size: 2,
            trials: 3,
            ..SamplingConfig::default()
        };
        assert!(delta_rel_sampled(&pts, &cfg).is_err());
        cfg.sample_size = 11;
        assert!(delta_rel_sampled(&pts, &cfg).is_err());
        let empty: Vec<[f64; 1]> = Vec::new();
        assert_eq!(delta_rel_sampled(&empty, &cfg), Err(Error::EmptyInput));
        cfg.sample_size = 5;
        let r = delta_rel_sampled(&pts, &cfg).unwrap();
        assert_eq!(r.delta_rel, 0.0);
        assert_eq!(r.delta_rel_std, 0.0);
        assert_eq!(r.num_trials, 3);
        assert_eq!(r.num_samples, 5);
    }

    #[test]
    fn duplicated_geometry_has_zero_variance() {
        // every subset of a regular simplex is isometric
        let pts: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let mut v = vec![0.0; 8];
                v[i] = 1.0;
                v
            })
            .collect();
        let cfg = SamplingConfig {
            sample_size: 5,
            trials: 7,
            seed: 3,
            ..SamplingConfig::default()
        };
        let r = delta_rel_sampled(&pts, &cfg).unwrap();
        assert!(r.delta_rel_std < 1e-15);
    }
}
