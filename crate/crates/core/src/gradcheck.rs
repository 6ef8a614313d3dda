//! Finite-difference check of the adapted distance gradients.
//!
//! The tape gradient of `d_{M,c}(x, y)` with respect to generator
//! parameters is compared with central differences of the plain inference
//! path, so the check also covers agreement of the two implementations.

use alloc::vec::Vec;

use crate::autodiff::Tape;
use crate::ball::BallPoint;
use crate::ghdm::{
    adapted_distance, batch_distances, GeneratorParams, GhdmConfig, ParamId, ParamVars,
};
use crate::math::{abs, norm};
use crate::{rng, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates probed per parameter tensor.
    pub coords_per_tensor: usize,
    /// Input points are drawn with norm up to this fraction of the radius
    /// of the largest generated curvature.
    pub point_scale: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords_per_tensor: 6,
            point_scale: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
}

/// `|a - f| / max(|a|, |f|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    abs(analytic - numeric) / abs(analytic).max(abs(numeric)).max(1e-6)
}

fn random_point(r: &mut rng::Rng, cfg: &GhdmConfig, scale: f64) -> Result<BallPoint> {
    let v = rng::normal_vec(r, cfg.dim, 1.0);
    let target = scale * rng::uniform(r, 0.2, 1.0) / crate::math::sqrt(cfg.c_max);
    let s = target / norm(&v).max(f64::MIN_POSITIVE);
    BallPoint::new(v.iter().map(|x| x * s).collect(), cfg.base())
}

/// Checks random parameters and a random pair drawn from `check.seed`.
pub fn check_random(config: GhdmConfig, check: &GradCheckConfig) -> Result<GradCheckReport> {
    let params = GeneratorParams::random(config, check.seed)?;
    let mut r = rng::stream(check.seed, 1);
    let x = random_point(&mut r, &config, check.point_scale)?;
    let y = random_point(&mut r, &config, check.point_scale)?;
    check_pair(&params, &x, &y, check)
}

pub fn check_pair(
    params: &GeneratorParams,
    x: &BallPoint,
    y: &BallPoint,
    check: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let cfg = *params.config();
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let xi = Matrix::row_vector(x.coords().to_vec());
    let xj = Matrix::row_vector(y.coords().to_vec());
    let d = batch_distances(&mut tape, &vars, &cfg, &xi, &xj)?;
    let loss = tape.sum(d)?;
    tape.backward(loss)?;
    let grads = vars.gradients(&mut tape);

    let mut r = rng::stream(check.seed, 2);
    let mut probe = params.clone();
    let mut probes = Vec::new();
    for id in ParamId::ALL {
        if (!cfg.adapt_projection && id.is_projection())
            || (!cfg.adapt_curvature
                && matches!(
                    id,
                    ParamId::F1W | ParamId::F1B | ParamId::F2W | ParamId::F2B
                ))
            || (cfg.symmetric
                && matches!(
                    id,
                    ParamId::FbHiddenW | ParamId::FbHiddenB | ParamId::FbOutW | ParamId::FbOutB
                ))
        {
            continue;
        }
        let len = params.get(id).len();
        let picks = rng::sample_indices(&mut r, len, check.coords_per_tensor.min(len));
        for index in picks {
            let orig = params.get(id).as_slice()[index];
            probe.get_mut(id).as_mut_slice()[index] = orig + check.step;
            let plus = adapted_distance(&probe, x, y)?;
            probe.get_mut(id).as_mut_slice()[index] = orig - check.step;
            let minus = adapted_distance(&probe, x, y)?;
            probe.get_mut(id).as_mut_slice()[index] = orig;
            let numeric = (plus - minus) / (2.0 * check.step);
            let analytic = grads[id as usize].as_slice()[index];
            probes.push(Probe {
                param: id,
                index,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
        }
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        max_rel_error,
    })
}
