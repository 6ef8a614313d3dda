//! Episode sampling and the combined easy/hard classifier.

use alloc::vec;
use alloc::vec::Vec;

use super::data::SyntheticDataset;
use crate::ball::BallPoint;
use crate::ghdm::{adapted_distance, GeneratorParams};
use crate::mining::{build_prototypes_for, rank_queries, select_hard, PrototypeSet, QueryRatio};
use crate::{rng, Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeShape {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 5,
            queries: 15,
        }
    }
}

impl EpisodeShape {
    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 || self.shots == 0 || self.queries == 0 {
            return Err(Error::InfeasibleConfig(
                "episodes need at least 2 ways, 1 shot and 1 query".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<BallPoint>,
    pub support_labels: Vec<u32>,
    pub query: Vec<BallPoint>,
    pub query_labels: Vec<u32>,
    /// Episode classes, ascending. Logit column `j` belongs to `classes[j]`.
    pub classes: Vec<u32>,
    pub seed: u64,
}

/// Draws a `ways`-way episode from `pool` using stream `index` of `seed`.
pub fn sample_episode(
    data: &SyntheticDataset,
    members: &[Vec<usize>],
    pool: &[u32],
    shape: EpisodeShape,
    seed: u64,
    index: u64,
) -> Result<Episode> {
    shape.validate()?;
    if pool.len() < shape.ways {
        return Err(Error::InfeasibleConfig(alloc::format!(
            "{}-way episodes need {} classes, pool has {}",
            shape.ways,
            shape.ways,
            pool.len()
        )));
    }
    let per = shape.shots + shape.queries;
    let mut r = rng::stream(seed, index);
    let mut classes: Vec<u32> = rng::sample_indices(&mut r, pool.len(), shape.ways)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    classes.sort_unstable();

    let mut ep = Episode {
        support: Vec::with_capacity(shape.ways * shape.shots),
        support_labels: Vec::with_capacity(shape.ways * shape.shots),
        query: Vec::with_capacity(shape.ways * shape.queries),
        query_labels: Vec::with_capacity(shape.ways * shape.queries),
        classes: classes.clone(),
        seed: index,
    };
    for &c in &classes {
        let m = members.get(c as usize).map(Vec::as_slice).unwrap_or(&[]);
        if m.len() < per {
            return Err(Error::InfeasibleConfig(alloc::format!(
                "class {c} has {} points, episodes need {per}",
                m.len()
            )));
        }
        let picks = rng::sample_indices(&mut r, m.len(), per);
        for (n, &p) in picks.iter().enumerate() {
            let point = data.points[m[p]].clone();
            if n < shape.shots {
                ep.support.push(point);
                ep.support_labels.push(c);
            } else {
                ep.query.push(point);
                ep.query_labels.push(c);
            }
        }
    }
    Ok(ep)
}

impl Episode {
    pub fn prototypes(&self) -> Result<PrototypeSet> {
        build_prototypes_for(&self.support, &self.support_labels, &self.classes)
    }

    /// Logit column of every query's true class.
    pub fn targets(&self) -> Vec<usize> {
        self.query_labels
            .iter()
            .map(|l| {
                self.classes
                    .binary_search(l)
                    .expect("query class is in the episode")
            })
            .collect()
    }
}

/// Output of the combined classifier on one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLogits {
    pub ranked: Vec<QueryRatio>,
    /// Query indices routed to the adapted measure.
    pub hard: Vec<usize>,
    /// `softmax(-d_{M,c})` over prototypes, one row per hard query.
    pub logits: Matrix,
    /// Predicted column for every query: argmax of its logits row when hard,
    /// nearest prototype under the fixed distance when easy.
    pub predictions: Vec<usize>,
}

pub fn softmax_neg_rows(distances: &Matrix) -> Matrix {
    let mut out = distances.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = crate::math::exp(m - *x);
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}

/// First index of the row maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Adapted distances from every listed query to every prototype.
pub fn hard_distances(
    params: &GeneratorParams,
    queries: &[BallPoint],
    hard: &[usize],
    protos: &PrototypeSet,
) -> Result<Matrix> {
    let p = protos.len();
    let mut d = Matrix::zeros(hard.len(), p);
    for (row, &q) in hard.iter().enumerate() {
        for (j, proto) in protos.prototypes.iter().enumerate() {
            d.set(row, j, adapted_distance(params, &queries[q], proto)?);
        }
    }
    Ok(d)
}

/// Mines the episode at `threshold` and scores hard queries with the
/// adapted measure.
pub fn episode_logits(
    params: &GeneratorParams,
    episode: &Episode,
    threshold: f64,
) -> Result<EpisodeLogits> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    let protos = episode.prototypes()?;
    let ranked = rank_queries(&episode.query, &protos)?;
    let hard = select_hard(&ranked, threshold).members;
    let logits = softmax_neg_rows(&hard_distances(params, &episode.query, &hard, &protos)?);
    let mut predictions: Vec<usize> = ranked.iter().map(|r| r.nearest).collect();
    for (row, &q) in hard.iter().enumerate() {
        predictions[q] = argmax(logits.row(row));
    }
    Ok(EpisodeLogits {
        ranked,
        hard,
        logits,
        predictions,
    })
}

/// Per-episode counts used by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeScore {
    pub queries: usize,
    pub hard: usize,
    /// Combined pipeline.
    pub correct: usize,
    /// Fixed measure on every query.
    pub fixed_correct: usize,
    /// Fixed measure, split by mining outcome.
    pub fixed_correct_easy: usize,
    pub fixed_correct_hard: usize,
}

impl EpisodeScore {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.queries as f64
    }

    pub fn fixed_accuracy(&self) -> f64 {
        self.fixed_correct as f64 / self.queries as f64
    }
}

pub fn score_episode(
    params: &GeneratorParams,
    episode: &Episode,
    threshold: f64,
) -> Result<EpisodeScore> {
    let out = episode_logits(params, episode, threshold)?;
    let targets = episode.targets();
    let mut is_hard = vec![false; targets.len()];
    out.hard.iter().for_each(|&q| is_hard[q] = true);
    let mut s = EpisodeScore {
        queries: targets.len(),
        hard: out.hard.len(),
        ..EpisodeScore::default()
    };
    for (q, &t) in targets.iter().enumerate() {
        if out.predictions[q] == t {
            s.correct += 1;
        }
        if out.ranked[q].nearest == t {
            s.fixed_correct += 1;
            if is_hard[q] {
                s.fixed_correct_hard += 1;
            } else {
                s.fixed_correct_easy += 1;
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghdm::GhdmConfig;
    use crate::trainer::data::{generate_tree_dataset, TreeConfig};

    fn data(noise: f64) -> SyntheticDataset {
        generate_tree_dataset(&TreeConfig {
            depth: 2,
            branching: 3,
            classes: 9,
            dim: 8,
            per_class: 8,
            nuisance_dims: 2,
            noise_scale: noise,
            ..TreeConfig::default()
        })
        .unwrap()
    }

    fn shape() -> EpisodeShape {
        EpisodeShape {
            ways: 3,
            shots: 2,
            queries: 4,
        }
    }

    fn params() -> GeneratorParams {
        GeneratorParams::random(
            GhdmConfig {
                hidden: 8,
                ..GhdmConfig::new(8, 2)
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn episodes_are_disjoint_and_complete() {
        let d = data(0.05);
        let members = d.class_members();
        let pool: Vec<u32> = (0..9).collect();
        let ep = sample_episode(&d, &members, &pool, shape(), 11, 4).unwrap();
        assert_eq!(ep.support.len(), 6);
        assert_eq!(ep.query.len(), 12);
        for c in &ep.classes {
            assert!(ep.support_labels.contains(c) && ep.query_labels.contains(c));
        }
        for q in &ep.query {
            assert!(!ep.support.contains(q));
        }
        assert_eq!(
            ep,
            sample_episode(&d, &members, &pool, shape(), 11, 4).unwrap()
        );
    }

    #[test]
    fn infeasible_episode() {
        let d = data(0.05);
        let members = d.class_members();
        let big = EpisodeShape {
            queries: 7,
            ..shape()
        };
        assert!(sample_episode(&d, &members, &[0, 1, 2], big, 0, 0).is_err());
        assert!(sample_episode(&d, &members, &[0, 1], shape(), 0, 0).is_err());
    }

    #[test]
    fn logits_rows_are_distributions() {
        let d = data(0.3);
        let ep = sample_episode(&d, &d.class_members(), &[0, 1, 2, 3], shape(), 2, 0).unwrap();
        let out = episode_logits(&params(), &ep, 0.0).unwrap();
        assert_eq!(out.hard.len(), 12);
        for r in 0..out.logits.rows() {
            let s: f64 = out.logits.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_two_way_is_perfect() {
        let d = data(0.0);
        let two = EpisodeShape { ways: 2, ..shape() };
        for i in 0..5 {
            let ep = sample_episode(&d, &d.class_members(), &[0, 4, 8], two, 9, i).unwrap();
            let s = score_episode(&params(), &ep, 0.96).unwrap();
            assert_eq!(s.correct, s.queries);
        }
    }

    #[test]
    fn threshold_one_matches_fixed() {
        let d = data(0.4);
        let ep = sample_episode(&d, &d.class_members(), &[0, 1, 2, 3, 4], shape(), 5, 1).unwrap();
        let s = score_episode(&params(), &ep, 1.0).unwrap();
        assert_eq!(s.hard, 0);
        assert_eq!(s.correct, s.fixed_correct);
    }
}
