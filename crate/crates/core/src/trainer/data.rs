//! Synthetic hierarchical datasets.
//!
//! A balanced tree of tangent-space anchors is grown from the origin. Each
//! leaf is a class; its points are `exp_0(anchor + noise)`. The last
//! `nuisance_dims` coordinates carry no anchor offset, only noise that is
//! `nuisance_scale` times stronger than in the signal coordinates.

use alloc::vec;
use alloc::vec::Vec;

use crate::ball::{exp0, BallPoint, CurvatureMag};
use crate::math::norm;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    /// Levels below the root.
    pub depth: usize,
    pub branching: usize,
    /// Number of leaves used as classes (the first ones in breadth-first order).
    pub classes: usize,
    pub dim: usize,
    pub noise_scale: f64,
    pub per_class: usize,
    pub seed: u64,
    pub kappa: f64,
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
    /// Tangent length of the edges leaving the root; each level is `level_decay` shorter.
    pub root_offset: f64,
    pub level_decay: f64,
    /// Outward component of every non-root edge, relative to its sideways part.
    pub radial_weight: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            branching: 4,
            classes: 64,
            dim: 64,
            noise_scale: 0.015,
            per_class: 40,
            seed: 0,
            kappa: 0.5,
            nuisance_dims: 16,
            nuisance_scale: 3.0,
            root_offset: 0.3,
            level_decay: 0.3,
            radial_weight: 1.0,
        }
    }
}

impl TreeConfig {
    pub fn leaves(&self) -> usize {
        self.branching.saturating_pow(self.depth as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.branching < 2 {
            return Err(Error::InfeasibleConfig(
                "depth and branching must both be at least 2".into(),
            ));
        }
        if self.classes == 0 || self.classes > self.leaves() {
            return Err(Error::InfeasibleConfig(alloc::format!(
                "{} classes requested but the tree has {} leaves",
                self.classes,
                self.leaves()
            )));
        }
        if self.per_class == 0 {
            return Err(Error::InfeasibleConfig("per_class must be positive".into()));
        }
        if self.dim == 0 || self.nuisance_dims >= self.dim {
            return Err(Error::InfeasibleConfig(
                "need at least one signal dimension".into(),
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite())
            || !(self.nuisance_scale >= 0.0 && self.nuisance_scale.is_finite())
            || !(self.root_offset > 0.0 && self.root_offset.is_finite())
            || !(self.level_decay > 0.0 && self.level_decay.is_finite())
        {
            return Err(Error::invalid("scales must be finite and non-negative"));
        }
        CurvatureMag::new(self.kappa)?;
        Ok(())
    }

    pub fn signal_dims(&self) -> usize {
        self.dim - self.nuisance_dims
    }
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 1e-12).then(|| v.iter().map(|x| x / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub points: Vec<BallPoint>,
    pub labels: Vec<u32>,
    /// Parent of every tree node in breadth-first order; the root has none.
    pub tree: Vec<Option<usize>>,
    pub config: TreeConfig,
}

/// Builds the tree and samples `per_class` points for each class.
pub fn generate_tree_dataset(cfg: &TreeConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let kappa = CurvatureMag::new(cfg.kappa)?;
    let signal = cfg.signal_dims();
    let mut r = rng::seeded(cfg.seed);

    let mut tree = vec![None];
    let mut anchors = vec![vec![0.0; cfg.dim]];
    let mut level = vec![0usize];
    let mut scale = cfg.root_offset;
    for _ in 0..cfg.depth {
        let mut next = Vec::with_capacity(level.len() * cfg.branching);
        for &parent in &level {
            let outward = unit(&anchors[parent][..signal]);
            let mut siblings: Vec<Vec<f64>> = Vec::with_capacity(cfg.branching);
            for _ in 0..cfg.branching {
                // random direction orthogonal to the earlier siblings and the parent ray
                let mut dir = rng::normal_vec(&mut r, signal, 1.0);
                for basis in siblings.iter().chain(outward.as_ref()) {
                    let proj = crate::math::dot(&dir, basis);
                    dir.iter_mut().zip(basis).for_each(|(d, b)| *d -= proj * b);
                }
                let dir = unit(&dir).unwrap_or_else(|| vec![0.0; signal]);
                siblings.push(dir);
            }
            for side in &siblings {
                let mut anchor = anchors[parent].clone();
                for (i, a) in anchor.iter_mut().take(signal).enumerate() {
                    let radial = outward.as_ref().map_or(0.0, |o| cfg.radial_weight * o[i]);
                    *a += scale * (side[i] + radial);
                }
                next.push(anchors.len());
                tree.push(Some(parent));
                anchors.push(anchor);
            }
        }
        level = next;
        scale *= cfg.level_decay;
    }

    let mut points = Vec::with_capacity(cfg.classes * cfg.per_class);
    let mut labels = Vec::with_capacity(points.capacity());
    for (class, &leaf) in level.iter().take(cfg.classes).enumerate() {
        for _ in 0..cfg.per_class {
            let mut v = anchors[leaf].clone();
            for (i, x) in v.iter_mut().enumerate() {
                let s = if i < signal {
                    cfg.noise_scale
                } else {
                    cfg.noise_scale * cfg.nuisance_scale
                };
                if s > 0.0 {
                    *x += s * rng::normal(&mut r);
                }
            }
            points.push(exp0(&v, kappa)?);
            labels.push(class as u32);
        }
    }
    Ok(SyntheticDataset {
        points,
        labels,
        tree,
        config: *cfg,
    })
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn kappa(&self) -> CurvatureMag {
        CurvatureMag::new(self.config.kappa).expect("validated on construction")
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .iter()
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Point indices of every class, indexed by class id.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l as usize].push(i);
        }
        members
    }

    /// Checks the invariants of a dataset assembled from parts (e.g. read from disk).
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.points.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.points.len(),
                got: self.labels.len(),
            });
        }
        let kappa = self.config.kappa;
        for p in &self.points {
            if p.dim() != self.config.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.dim,
                    got: p.dim(),
                });
            }
            if p.kappa().get() != kappa {
                return Err(Error::CurvatureMismatch {
                    left: kappa,
                    right: p.kappa().get(),
                });
            }
        }
        for (i, parent) in self.tree.iter().enumerate() {
            if let Some(p) = *parent {
                if p >= i {
                    return Err(Error::invalid("tree parents must precede their children"));
                }
            }
        }
        Ok(())
    }

    /// Same points with class ids permuted at random.
    pub fn shuffled_labels(&self, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut labels = self.labels.clone();
        rng::shuffle(&mut r, &mut labels);
        Self {
            labels,
            ..self.clone()
        }
    }
}

/// An i.i.d. Gaussian cloud with the same size, dimension and tangent-space
/// RMS coordinate as `data`, mapped into the same ball. All labels are 0.
pub fn gaussian_control(data: &SyntheticDataset, seed: u64) -> Result<SyntheticDataset> {
    data.validate()?;
    let kappa = data.kappa();
    let mut sq = 0.0;
    for p in &data.points {
        sq += crate::math::norm_sq(&crate::ball::log0(p).0);
    }
    let rms = crate::math::sqrt(sq / (data.len() * data.dim()) as f64);
    let mut r = rng::seeded(seed);
    let points = (0..data.len())
        .map(|_| exp0(&rng::normal_vec(&mut r, data.dim(), rms), kappa))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        labels: vec![0; points.len()],
        points,
        tree: vec![None],
        config: data.config,
    })
}

/// Splits class ids into disjoint training and held-out pools: every third
/// class is held out.
pub fn split_classes(num_classes: usize) -> (Vec<u32>, Vec<u32>) {
    (0..num_classes as u32).partition(|c| c % 3 != 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TreeConfig {
        TreeConfig {
            depth: 2,
            branching: 3,
            classes: 9,
            dim: 8,
            per_class: 6,
            nuisance_dims: 2,
            ..TreeConfig::default()
        }
    }

    #[test]
    fn shape_and_tree() {
        let d = generate_tree_dataset(&small()).unwrap();
        assert_eq!(d.len(), 54);
        assert_eq!(d.tree.len(), 1 + 3 + 9);
        assert_eq!(d.tree[0], None);
        assert_eq!(d.tree[4], Some(1));
        assert_eq!(d.num_classes(), 9);
        assert!(d.class_members().iter().all(|m| m.len() == 6));
        d.validate().unwrap();
    }

    #[test]
    fn zero_noise_collapses_classes() {
        let d = generate_tree_dataset(&TreeConfig {
            noise_scale: 0.0,
            ..small()
        })
        .unwrap();
        for members in d.class_members() {
            assert!(members.iter().all(|&i| d.points[i] == d.points[members[0]]));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_tree_dataset(&small()).unwrap();
        let b = generate_tree_dataset(&small()).unwrap();
        let c = generate_tree_dataset(&TreeConfig { seed: 1, ..small() }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn infeasible_configs() {
        for cfg in [
            TreeConfig {
                depth: 1,
                ..small()
            },
            TreeConfig {
                branching: 1,
                ..small()
            },
            TreeConfig {
                classes: 10,
                ..small()
            },
            TreeConfig {
                per_class: 0,
                ..small()
            },
            TreeConfig {
                nuisance_dims: 8,
                ..small()
            },
        ] {
            assert!(matches!(
                generate_tree_dataset(&cfg),
                Err(Error::InfeasibleConfig(_))
            ));
        }
    }

    #[test]
    fn class_split_is_disjoint() {
        let (train, test) = split_classes(9);
        assert_eq!(train, [0, 1, 3, 4, 6, 7]);
        assert_eq!(test, [2, 5, 8]);
    }
}
