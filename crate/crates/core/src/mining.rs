//! Prototypes and hard-query mining.
//!
//! A query is hard when its nearest and second-nearest prototypes are
//! almost equally far away: with `d₁ ≤ d₂` the geodesic distances to them,
//! the query is selected iff `d₁ / d₂ > T`. Distances here are always the
//! fixed geodesic distance of the base ball.

use alloc::vec::Vec;

use crate::ball::{einstein_midpoint, raw, BallPoint};
use crate::{Error, Result};

/// One Einstein-midpoint prototype per class, sorted by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Vec<BallPoint>,
    pub class_ids: Vec<u32>,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Column of `class` in logits, if present.
    pub fn position(&self, class: u32) -> Option<usize> {
        self.class_ids.binary_search(&class).ok()
    }
}

/// Selected queries and their ratios, in query order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HardSet {
    pub members: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl HardSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Nearest / second-nearest prototype of a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryRatio {
    pub query: usize,
    /// Prototype positions (not class ids).
    pub nearest: usize,
    pub second: usize,
    pub d1: f64,
    pub d2: f64,
    pub ratio: f64,
}

impl QueryRatio {
    pub fn is_hard(&self, threshold: f64) -> bool {
        self.ratio > threshold
    }
}

/// Prototypes for every class present in `labels`.
pub fn build_prototypes(support: &[BallPoint], labels: &[u32]) -> Result<PrototypeSet> {
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    build_prototypes_for(support, labels, &classes)
}

/// Prototypes for the given classes; fails if one of them has no support point.
pub fn build_prototypes_for(
    support: &[BallPoint],
    labels: &[u32],
    classes: &[u32],
) -> Result<PrototypeSet> {
    if support.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: support.len(),
            got: labels.len(),
        });
    }
    if support.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut class_ids = classes.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let mut prototypes = Vec::with_capacity(class_ids.len());
    for &class in &class_ids {
        let members: Vec<BallPoint> = support
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(p, _)| p.clone())
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        prototypes.push(einstein_midpoint(&members)?);
    }
    Ok(PrototypeSet {
        prototypes,
        class_ids,
    })
}

/// Distance ratio of every query; ties on the nearest prototype go to the
/// lower prototype position.
pub fn rank_queries(queries: &[BallPoint], protos: &PrototypeSet) -> Result<Vec<QueryRatio>> {
    if protos.len() < 2 {
        return Err(Error::InsufficientPrototypes(protos.len()));
    }
    let kappa = protos.prototypes[0].kappa();
    queries
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            if q.kappa() != kappa {
                return Err(Error::CurvatureMismatch {
                    left: kappa.get(),
                    right: q.kappa().get(),
                });
            }
            let mut best = (f64::INFINITY, 0usize);
            let mut second = (f64::INFINITY, 0usize);
            for (pi, p) in protos.prototypes.iter().enumerate() {
                let (d, _) = raw::distance(q.coords(), p.coords(), kappa.get())?;
                if d < best.0 {
                    second = best;
                    best = (d, pi);
                } else if d < second.0 {
                    second = (d, pi);
                }
            }
            let (d1, d2) = (best.0, second.0);
            let ratio = if d1 == 0.0 { 0.0 } else { d1 / d2 };
            Ok(QueryRatio {
                query: qi,
                nearest: best.1,
                second: second.1,
                d1,
                d2,
                ratio,
            })
        })
        .collect()
}

/// Keeps the queries with `d₁ / d₂ > threshold`.
pub fn select_hard(ranked: &[QueryRatio], threshold: f64) -> HardSet {
    let mut set = HardSet::default();
    for r in ranked.iter().filter(|r| r.is_hard(threshold)) {
        set.members.push(r.query);
        set.ratios.push(r.ratio);
    }
    set
}

pub fn mine_hard(queries: &[BallPoint], protos: &PrototypeSet, threshold: f64) -> Result<HardSet> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    Ok(select_hard(&rank_queries(queries, protos)?, threshold))
}
