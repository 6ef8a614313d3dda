//! Wall-clock measurements.

use std::hint::black_box;
use std::time::Instant;

use hypergeo_core::ball::{exp0, BallPoint};
use hypergeo_core::ghdm::{adapted_distance, GeneratorParams, GhdmConfig};
use hypergeo_core::trainer::{
    evaluate_on, split_classes, EvalConfig, EvalReport, SyntheticDataset,
};
use hypergeo_core::{rng, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTimingConfig {
    pub dim: usize,
    pub hidden: usize,
    pub pairs: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for PairTimingConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            hidden: 64,
            pairs: 16,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairTiming {
    pub dim: usize,
    pub rank: usize,
    pub hidden: usize,
    /// Multiply-adds of one projected matvec.
    pub projection_madds: usize,
    /// Best of `repeats` batch means.
    pub seconds_per_pair: f64,
}

fn random_points(dim: usize, count: usize, kappa: f64, seed: u64) -> Result<Vec<BallPoint>> {
    let k = hypergeo_core::ball::CurvatureMag::new(kappa)?;
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| exp0(&rng::normal_vec(&mut r, dim, 1.0 / (dim as f64).sqrt()), k))
        .collect()
}

/// Time of one end-to-end adapted distance (both generators plus the distance) at `rank`.
pub fn time_pairs(rank: usize, cfg: &PairTimingConfig) -> Result<PairTiming> {
    let ghdm = GhdmConfig {
        hidden: cfg.hidden,
        ..GhdmConfig::new(cfg.dim, rank)
    };
    let params = GeneratorParams::random(ghdm, cfg.seed)?;
    let xs = random_points(cfg.dim, 2 * cfg.pairs, ghdm.base_kappa, cfg.seed ^ 0x7069)?;
    let mut best = f64::INFINITY;
    // one untimed pass warms caches and the allocator
    for rep in 0..=cfg.repeats {
        let start = Instant::now();
        for p in xs.chunks_exact(2) {
            black_box(adapted_distance(&params, &p[0], &p[1])?);
        }
        let per_pair = start.elapsed().as_secs_f64() / cfg.pairs as f64;
        if rep > 0 {
            best = best.min(per_pair);
        }
    }
    Ok(PairTiming {
        dim: cfg.dim,
        rank,
        hidden: cfg.hidden,
        projection_madds: 2 * cfg.dim * rank,
        seconds_per_pair: best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiningTiming {
    pub threshold: f64,
    pub episodes: usize,
    pub seconds: f64,
    pub hard_fraction: f64,
}

/// Held-out evaluation time at each threshold; best of `repeats`.
pub fn time_evaluation(
    params: &GeneratorParams,
    data: &SyntheticDataset,
    thresholds: &[f64],
    episodes: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<MiningTiming>> {
    let (_, held_out) = split_classes(data.num_classes());
    thresholds
        .iter()
        .map(|&threshold| {
            let cfg = EvalConfig {
                threshold,
                episodes,
                ..EvalConfig::benchmark(seed)
            };
            let mut best = f64::INFINITY;
            let mut report: Option<EvalReport> = None;
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                report = Some(black_box(evaluate_on(params, data, &held_out, &cfg)?));
                best = best.min(start.elapsed().as_secs_f64());
            }
            Ok(MiningTiming {
                threshold,
                episodes,
                seconds: best,
                hard_fraction: report.map_or(f64::NAN, |r| r.hard_fraction),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_timing_runs() {
        let cfg = PairTimingConfig {
            dim: 8,
            hidden: 4,
            pairs: 2,
            repeats: 1,
            seed: 1,
        };
        let t = time_pairs(2, &cfg).unwrap();
        assert_eq!(t.projection_madds, 32);
        assert!(t.seconds_per_pair > 0.0);
    }
}
