//! Geometry-aware hyperbolic distance.
//!
//! For a pair `(x_i, x_j)` two small networks produce a projection
//! `M = I + M_a M_bᵀ` (`M_a, M_b ∈ ℝ^{n×k}`) and a curvature `c`, and the
//! pair is compared with
//!
//! ```text
//! d_{M,c}(x_i, x_j) = d_c(M ⊗_c x_i, M ⊗_c x_j)
//! ```
//!
//! Both generators read the tangent coordinates `log_0(x)` of the inputs in
//! the base ball. `f_a`, `f_b` are two-layer networks `2n → h → n·k` with a
//! `tanh` hidden layer; `f_1`, `f_2` are single linear maps `n → n` whose
//! outputs are multiplied elementwise, summed and squashed:
//! `c = c_min + (c_max - c_min)·σ(Σ f_1(x_i) ∘ f_2(x_j))`.
//!
//! [`adapted_distance`] evaluates one pair with plain arithmetic and never
//! forms `M`; [`batch_distances`] records the same computation for a batch
//! of pairs on an autodiff [`Tape`].

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::ball::{raw, BallPoint, CurvatureMag};
use crate::math::{dot, norm, sigmoid, sqrt, tanh};
use crate::{rng, Error, Matrix, Result, BOUNDARY_EPS, DENOM_EPS};

/// Shape and switches of the two generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhdmConfig {
    /// Embedding dimension `n`.
    pub dim: usize,
    /// Residual rank `k`.
    pub rank: usize,
    /// Hidden width of `f_a` / `f_b`.
    pub hidden: usize,
    pub c_min: f64,
    pub c_max: f64,
    /// Curvature magnitude of the ball the inputs live in.
    pub base_kappa: f64,
    /// `M = I + M_a M_bᵀ` when set, `M = M_a M_bᵀ` otherwise.
    pub residual: bool,
    /// Use `M_a M_aᵀ` instead of `M_a M_bᵀ`.
    pub symmetric: bool,
    /// When unset `M = I`.
    pub adapt_projection: bool,
    /// When unset the curvature is `fixed_curvature`.
    pub adapt_curvature: bool,
    pub fixed_curvature: f64,
}

impl GhdmConfig {
    /// Defaults: hidden width `4n`, learned curvature in `[1e-4, 3.0]`,
    /// base curvature 0.5, residual asymmetric factorization.
    pub fn new(dim: usize, rank: usize) -> Self {
        Self {
            dim,
            rank,
            hidden: 4 * dim,
            c_min: 1e-4,
            c_max: 3.0,
            base_kappa: 0.5,
            residual: true,
            symmetric: false,
            adapt_projection: true,
            adapt_curvature: true,
            fixed_curvature: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.rank == 0 {
            return Err(Error::InfeasibleConfig(
                "dim, rank and hidden must be positive".into(),
            ));
        }
        if self.rank > self.dim {
            return Err(Error::RankTooLarge {
                rank: self.rank,
                dim: self.dim,
            });
        }
        if !(self.c_min > 0.0 && self.c_min < self.c_max && self.c_max.is_finite()) {
            return Err(Error::InfeasibleConfig("need 0 < c_min < c_max".into()));
        }
        CurvatureMag::new(self.base_kappa)?;
        CurvatureMag::new(self.fixed_curvature)?;
        Ok(())
    }

    pub fn base(&self) -> CurvatureMag {
        CurvatureMag::new(self.base_kappa).expect("validated base curvature")
    }
}

/// Index of each trainable tensor inside [`GeneratorParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    FaHiddenW,
    FaHiddenB,
    FaOutW,
    FaOutB,
    FbHiddenW,
    FbHiddenB,
    FbOutW,
    FbOutB,
    F1W,
    F1B,
    F2W,
    F2B,
}

impl ParamId {
    pub const ALL: [ParamId; 12] = [
        ParamId::FaHiddenW,
        ParamId::FaHiddenB,
        ParamId::FaOutW,
        ParamId::FaOutB,
        ParamId::FbHiddenW,
        ParamId::FbHiddenB,
        ParamId::FbOutW,
        ParamId::FbOutB,
        ParamId::F1W,
        ParamId::F1B,
        ParamId::F2W,
        ParamId::F2B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::FaHiddenW => "f_a.hidden.weight",
            ParamId::FaHiddenB => "f_a.hidden.bias",
            ParamId::FaOutW => "f_a.out.weight",
            ParamId::FaOutB => "f_a.out.bias",
            ParamId::FbHiddenW => "f_b.hidden.weight",
            ParamId::FbHiddenB => "f_b.hidden.bias",
            ParamId::FbOutW => "f_b.out.weight",
            ParamId::FbOutB => "f_b.out.bias",
            ParamId::F1W => "f_1.weight",
            ParamId::F1B => "f_1.bias",
            ParamId::F2W => "f_2.weight",
            ParamId::F2B => "f_2.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// `(rows, cols)`; weights are stored input-major so `y = x·W + b`.
    pub fn shape(self, cfg: &GhdmConfig) -> (usize, usize) {
        let (n, k, h) = (cfg.dim, cfg.rank, cfg.hidden);
        match self {
            ParamId::FaHiddenW | ParamId::FbHiddenW => (2 * n, h),
            ParamId::FaHiddenB | ParamId::FbHiddenB => (1, h),
            ParamId::FaOutW | ParamId::FbOutW => (h, n * k),
            ParamId::FaOutB | ParamId::FbOutB => (1, n * k),
            ParamId::F1W | ParamId::F2W => (n, n),
            ParamId::F1B | ParamId::F2B => (1, n),
        }
    }

    /// Tensors that belong to `f_a` / `f_b`.
    pub fn is_projection(self) -> bool {
        (self as usize) < 8
    }
}

/// All trainable weights of the projection and curvature generators.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    config: GhdmConfig,
    tensors: Vec<Matrix>,
}

impl GeneratorParams {
    pub fn zeros(config: GhdmConfig) -> Result<Self> {
        config.validate()?;
        let tensors = ParamId::ALL
            .iter()
            .map(|id| {
                let (r, c) = id.shape(&config);
                Matrix::zeros(r, c)
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Scaled Gaussian initialization. Output layers of `f_a`/`f_b` start
    /// small so `M` starts close to `I` (or close to 0 without the
    /// residual connection).
    pub fn random(config: GhdmConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut r = rng::seeded(seed);
        for id in ParamId::ALL {
            let (rows, cols) = id.shape(&config);
            let std = match id {
                ParamId::FaHiddenW | ParamId::FbHiddenW | ParamId::F1W | ParamId::F2W => {
                    1.0 / sqrt(rows as f64)
                }
                ParamId::FaOutW | ParamId::FbOutW => 0.02 / sqrt(rows as f64),
                _ => 0.0,
            };
            if std > 0.0 {
                let data = rng::normal_vec(&mut r, rows * cols, std);
                params.tensors[id as usize] = Matrix::from_vec(rows, cols, data)?;
            }
        }
        Ok(params)
    }

    /// Builds parameters from named tensors, checking every shape.
    pub fn from_tensors(config: GhdmConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::DimensionMismatch {
                expected: ParamId::ALL.len(),
                got: tensors.len(),
            });
        }
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            let want = id.shape(&config);
            if t.shape() != want {
                return Err(Error::Shape {
                    op: id.name(),
                    left: want,
                    right: t.shape(),
                });
            }
            if !t.is_finite() {
                return Err(Error::invalid("parameter tensor has non-finite entries"));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &GhdmConfig {
        &self.config
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id as usize]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id as usize]
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    /// Zeroes the output layers of `f_a` and `f_b`, so `M_a = M_b = 0`.
    pub fn zero_projection_output(&mut self) {
        for id in [
            ParamId::FaOutW,
            ParamId::FaOutB,
            ParamId::FbOutW,
            ParamId::FbOutB,
        ] {
            self.tensors[id as usize].fill(0.0);
        }
    }

    /// Number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }
}

/// `M = I + m_a m_bᵀ` (or `m_a m_bᵀ` without the residual), kept factored.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankProjection {
    pub m_a: Matrix,
    pub m_b: Matrix,
    pub residual: bool,
}

impl LowRankProjection {
    pub fn identity(dim: usize, rank: usize) -> Self {
        Self {
            m_a: Matrix::zeros(dim, rank),
            m_b: Matrix::zeros(dim, rank),
            residual: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.m_a.rows()
    }

    pub fn rank(&self) -> usize {
        self.m_a.cols()
    }

    /// Writes `M·x` into `out` as `x + m_a (m_bᵀ x)` and returns the number
    /// of multiply-adds spent (`2nk`).
    pub fn apply(&self, x: &[f64], out: &mut [f64]) -> usize {
        let (n, k) = (self.dim(), self.rank());
        let mut t = vec![0.0; k];
        for (i, &xi) in x.iter().enumerate() {
            for (tj, bij) in t.iter_mut().zip(self.m_b.row(i)) {
                *tj += bij * xi;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let base = if self.residual { x[i] } else { 0.0 };
            *o = base + dot(self.m_a.row(i), &t);
        }
        2 * n * k
    }

    /// Dense `n × n` matrix; for checks only.
    pub fn to_dense(&self) -> Matrix {
        let mut m = if self.residual {
            Matrix::identity(self.dim())
        } else {
            Matrix::zeros(self.dim(), self.dim())
        };
        let prod = self
            .m_a
            .matmul(&self.m_b.transpose())
            .expect("n×k times k×n");
        m.add_assign(&prod);
        m
    }
}

/// Curvature magnitude generated for one pair.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PairCurvature(pub f64);

impl PairCurvature {
    pub fn kappa(self) -> CurvatureMag {
        CurvatureMag::new(self.0).expect("generated curvature is positive")
    }
}

/// Generator input for a ball point: `log_0(x)` in the base ball.
pub fn features(x: &BallPoint) -> Vec<f64> {
    let mut out = vec![0.0; x.dim()];
    raw::log0(x.coords(), x.kappa().get(), &mut out);
    out
}

fn check_dim(cfg: &GhdmConfig, v: &[f64]) -> Result<()> {
    if v.len() != cfg.dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.dim,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite generator input"));
    }
    Ok(())
}

/// `y = x·W + b` for a single input row.
fn affine(x: &[f64], w: &Matrix, b: &Matrix, out: &mut [f64]) {
    out.copy_from_slice(b.as_slice());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wij;
        }
    }
}

fn two_layer(params: &GeneratorParams, input: &[f64], ids: [ParamId; 4]) -> Matrix {
    let cfg = params.config;
    let mut hidden = vec![0.0; cfg.hidden];
    affine(input, params.get(ids[0]), params.get(ids[1]), &mut hidden);
    hidden.iter_mut().for_each(|h| *h = tanh(*h));
    let mut out = vec![0.0; cfg.dim * cfg.rank];
    affine(&hidden, params.get(ids[2]), params.get(ids[3]), &mut out);
    Matrix::from_vec(cfg.dim, cfg.rank, out).expect("n·k outputs")
}

/// `M_a = f_a([x_i, x_j])`, `M_b = f_b([x_i, x_j])`, both reshaped to `n × k`.
pub fn generate_projection(
    params: &GeneratorParams,
    x_i: &[f64],
    x_j: &[f64],
) -> Result<LowRankProjection> {
    let cfg = params.config;
    check_dim(&cfg, x_i)?;
    check_dim(&cfg, x_j)?;
    if !cfg.adapt_projection {
        return Ok(LowRankProjection::identity(cfg.dim, cfg.rank));
    }
    let mut input = Vec::with_capacity(2 * cfg.dim);
    input.extend_from_slice(x_i);
    input.extend_from_slice(x_j);
    let m_a = two_layer(
        params,
        &input,
        [
            ParamId::FaHiddenW,
            ParamId::FaHiddenB,
            ParamId::FaOutW,
            ParamId::FaOutB,
        ],
    );
    let m_b = if cfg.symmetric {
        m_a.clone()
    } else {
        two_layer(
            params,
            &input,
            [
                ParamId::FbHiddenW,
                ParamId::FbHiddenB,
                ParamId::FbOutW,
                ParamId::FbOutB,
            ],
        )
    };
    Ok(LowRankProjection {
        m_a,
        m_b,
        residual: cfg.residual,
    })
}

/// Factorized bilinear pooling followed by a sigmoid, rescaled to
/// `(c_min, c_max)`.
pub fn generate_curvature(
    params: &GeneratorParams,
    x_i: &[f64],
    x_j: &[f64],
) -> Result<PairCurvature> {
    let cfg = params.config;
    check_dim(&cfg, x_i)?;
    check_dim(&cfg, x_j)?;
    if !cfg.adapt_curvature {
        return Ok(PairCurvature(cfg.fixed_curvature));
    }
    let mut a = vec![0.0; cfg.dim];
    let mut b = vec![0.0; cfg.dim];
    affine(
        x_i,
        params.get(ParamId::F1W),
        params.get(ParamId::F1B),
        &mut a,
    );
    affine(
        x_j,
        params.get(ParamId::F2W),
        params.get(ParamId::F2B),
        &mut b,
    );
    let pooled = dot(&a, &b);
    Ok(PairCurvature(
        cfg.c_min + (cfg.c_max - cfg.c_min) * sigmoid(pooled),
    ))
}

/// `M ⊗_c x` for a point already inside the `c`-ball.
pub fn projected_point(proj: &LowRankProjection, x: &[f64], c: f64) -> Vec<f64> {
    let mut mx = vec![0.0; x.len()];
    proj.apply(x, &mut mx);
    raw::matvec_rescale(x, &mut mx, c);
    mx
}

/// `d_{M,c}(x_i, x_j)` with `M` and `c` generated from the pair.
///
/// Both points are first rescaled into the guarded ball of the generated
/// curvature.
pub fn adapted_distance(params: &GeneratorParams, x_i: &BallPoint, x_j: &BallPoint) -> Result<f64> {
    let cfg = params.config;
    for x in [x_i, x_j] {
        if x.kappa().get() != cfg.base_kappa {
            return Err(Error::CurvatureMismatch {
                left: cfg.base_kappa,
                right: x.kappa().get(),
            });
        }
    }
    let f_i = features(x_i);
    let f_j = features(x_j);
    let proj = generate_projection(params, &f_i, &f_j)?;
    let c = generate_curvature(params, &f_i, &f_j)?.0;
    let mut p_i = x_i.coords().to_vec();
    let mut p_j = x_j.coords().to_vec();
    raw::project_in_place(&mut p_i, c);
    raw::project_in_place(&mut p_j, c);
    let y_i = projected_point(&proj, &p_i, c);
    let y_j = projected_point(&proj, &p_j, c);
    Ok(raw::distance(&y_i, &y_j, c)?.0)
}

/// Tape handles for every tensor of a [`GeneratorParams`], in [`ParamId`] order.
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    /// Registers every tensor as a gradient-tracked leaf.
    pub fn register(tape: &mut Tape, params: &GeneratorParams) -> Self {
        Self(
            params
                .tensors
                .iter()
                .map(|t| tape.param(t.clone()))
                .collect(),
        )
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id as usize]
    }

    /// Pulls every gradient out of the tape after `backward`.
    pub fn gradients(&self, tape: &mut Tape) -> Vec<Matrix> {
        self.0.iter().map(|&v| tape.take_grad(v)).collect()
    }
}

fn record_two_layer(
    tape: &mut Tape,
    vars: &ParamVars,
    input: Var,
    ids: [ParamId; 4],
) -> Result<Var> {
    let h = tape.matmul(input, vars.get(ids[0]))?;
    let h = tape.add_row(h, vars.get(ids[1]))?;
    let h = tape.tanh(h)?;
    let o = tape.matmul(h, vars.get(ids[2]))?;
    tape.add_row(o, vars.get(ids[3]))
}

/// Rescales rows whose norm exceeds `(1 - ε)/√c` back onto that radius.
fn record_guard(tape: &mut Tape, x: Var, norms: Var, radius: Var) -> Result<Var> {
    let safe = tape.add_scalar(norms, DENOM_EPS)?;
    let ratio = tape.div(radius, safe)?;
    let factor = tape.clamp(ratio, f64::NEG_INFINITY, 1.0)?;
    tape.mul_col(x, factor)
}

/// `M ⊗_c x` row by row.
fn record_matvec(
    tape: &mut Tape,
    x: Var,
    m_a: Option<(Var, Var)>,
    residual: bool,
    sqrt_c: Var,
    radius: Var,
    dim: usize,
) -> Result<Var> {
    let mx = match m_a {
        Some((a, b)) => {
            let t = tape.batch_matvec_t(b, x, dim)?;
            let u = tape.batch_matvec(a, t, dim)?;
            if residual {
                tape.add(x, u)?
            } else {
                u
            }
        }
        None => x,
    };
    let x_norm = tape.l2_norm(x)?;
    let mx_norm = tape.l2_norm(mx)?;
    let x_safe = tape.add_scalar(x_norm, DENOM_EPS)?;
    let mx_safe = tape.add_scalar(mx_norm, DENOM_EPS)?;
    let ratio = tape.div(mx_norm, x_safe)?;
    let scaled = tape.mul(sqrt_c, x_norm)?;
    let clipped = tape.clamp(scaled, 0.0, 1.0 - BOUNDARY_EPS)?;
    let angle = tape.arctanh(clipped)?;
    let arg = tape.mul(ratio, angle)?;
    let t = tape.tanh(arg)?;
    let denom = tape.mul(sqrt_c, mx_safe)?;
    let factor = tape.div(t, denom)?;
    let y = tape.mul_col(mx, factor)?;
    let y_norm = tape.l2_norm(y)?;
    record_guard(tape, y, y_norm, radius)
}

/// Geodesic distance of matching rows of `x` and `y` at per-row curvature `c`.
pub fn record_geodesic(tape: &mut Tape, x: Var, y: Var, c: Var, sqrt_c: Var) -> Result<Var> {
    // w = (-x) ⊕ y
    let nx = tape.neg(x)?;
    let xy_e = tape.mul(nx, y)?;
    let xy = tape.sum_pool(xy_e)?;
    let xx_e = tape.mul(nx, nx)?;
    let x2 = tape.sum_pool(xx_e)?;
    let yy_e = tape.mul(y, y)?;
    let y2 = tape.sum_pool(yy_e)?;
    let cxy = tape.mul(c, xy)?;
    let two_cxy = tape.scale(cxy, 2.0)?;
    let cy2 = tape.mul(c, y2)?;
    let a = tape.add(two_cxy, cy2)?;
    let a = tape.add_scalar(a, 1.0)?;
    let cx2 = tape.mul(c, x2)?;
    let b = tape.neg(cx2)?;
    let b = tape.add_scalar(b, 1.0)?;
    let c2 = tape.mul(c, c)?;
    let x2y2 = tape.mul(x2, y2)?;
    let quart = tape.mul(c2, x2y2)?;
    let den = tape.add(two_cxy, quart)?;
    let den = tape.add_scalar(den, 1.0)?;
    let ax = tape.mul_col(nx, a)?;
    let by = tape.mul_col(y, b)?;
    let num = tape.add(ax, by)?;
    let num_norm = tape.l2_norm(num)?;
    let w_norm = tape.div(num_norm, den)?;
    let scaled = tape.mul(sqrt_c, w_norm)?;
    let clipped = tape.clamp(scaled, 0.0, 1.0 - BOUNDARY_EPS)?;
    let at = tape.arctanh(clipped)?;
    let d = tape.div(at, sqrt_c)?;
    tape.scale(d, 2.0)
}

/// Curvature column `B × 1` for a batch of feature pairs.
pub fn record_curvature(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &GhdmConfig,
    f_i: Var,
    f_j: Var,
) -> Result<Var> {
    let rows = tape.value(f_i).rows();
    if !cfg.adapt_curvature {
        return Ok(tape.constant(Matrix::filled(rows, 1, cfg.fixed_curvature)));
    }
    let a = tape.matmul(f_i, vars.get(ParamId::F1W))?;
    let a = tape.add_row(a, vars.get(ParamId::F1B))?;
    let b = tape.matmul(f_j, vars.get(ParamId::F2W))?;
    let b = tape.add_row(b, vars.get(ParamId::F2B))?;
    let prod = tape.hadamard(a, b)?;
    let pooled = tape.sum_pool(prod)?;
    let s = tape.sigmoid(pooled)?;
    let s = tape.scale(s, cfg.c_max - cfg.c_min)?;
    tape.add_scalar(s, cfg.c_min)
}

/// Records `d_{M,c}` for `B` pairs: row `b` of `x_i` against row `b` of `x_j`
/// (base-ball coordinates). Returns a `B × 1` column.
pub fn batch_distances(
    tape: &mut Tape,
    vars: &ParamVars,
    cfg: &GhdmConfig,
    x_i: &Matrix,
    x_j: &Matrix,
) -> Result<Var> {
    if x_i.shape() != x_j.shape() || x_i.cols() != cfg.dim {
        return Err(Error::Shape {
            op: "batch_distances",
            left: x_i.shape(),
            right: x_j.shape(),
        });
    }
    let rows = x_i.rows();
    let log_rows = |x: &Matrix| {
        let mut f = Matrix::zeros(rows, cfg.dim);
        for r in 0..rows {
            raw::log0(x.row(r), cfg.base_kappa, f.row_mut(r));
        }
        f
    };
    let f_i = tape.constant(log_rows(x_i));
    let f_j = tape.constant(log_rows(x_j));

    let c = record_curvature(tape, vars, cfg, f_i, f_j)?;
    let sqrt_c = tape.sqrt(c)?;
    let ones = tape.constant(Matrix::filled(rows, 1, 1.0 - BOUNDARY_EPS));
    let radius = tape.div(ones, sqrt_c)?;

    let factors = if cfg.adapt_projection {
        let input = tape.concat(f_i, f_j)?;
        let a = record_two_layer(
            tape,
            vars,
            input,
            [
                ParamId::FaHiddenW,
                ParamId::FaHiddenB,
                ParamId::FaOutW,
                ParamId::FaOutB,
            ],
        )?;
        let b = if cfg.symmetric {
            a
        } else {
            record_two_layer(
                tape,
                vars,
                input,
                [
                    ParamId::FbHiddenW,
                    ParamId::FbHiddenB,
                    ParamId::FbOutW,
                    ParamId::FbOutB,
                ],
            )?
        };
        Some((a, b))
    } else {
        None
    };

    let mut mapped = [None, None];
    for (slot, x) in mapped.iter_mut().zip([x_i, x_j]) {
        let norms = Matrix::column((0..rows).map(|r| norm(x.row(r))).collect());
        let xv = tape.constant(x.clone());
        let nv = tape.constant(norms);
        let inside = record_guard(tape, xv, nv, radius)?;
        *slot = Some(record_matvec(
            tape,
            inside,
            factors,
            cfg.residual,
            sqrt_c,
            radius,
            cfg.dim,
        )?);
    }
    let [Some(y_i), Some(y_j)] = mapped else {
        unreachable!("both endpoints mapped")
    };
    record_geodesic(tape, y_i, y_j, c, sqrt_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball::{geodesic_distance, project_to_ball};

    fn small_cfg() -> GhdmConfig {
        GhdmConfig {
            hidden: 12,
            ..GhdmConfig::new(6, 2)
        }
    }

    fn point(r: &mut rng::Rng, cfg: &GhdmConfig, frac: f64) -> BallPoint {
        let v = rng::normal_vec(r, cfg.dim, 1.0);
        let s = frac * cfg.base().radius() / norm(&v);
        BallPoint::new(v.iter().map(|x| x * s).collect(), cfg.base()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(GhdmConfig::new(4, 5).validate().is_err());
        assert!(GhdmConfig::new(4, 0).validate().is_err());
        let mut cfg = GhdmConfig::new(4, 2);
        cfg.c_min = 3.0;
        assert!(cfg.validate().is_err());
        assert!(GhdmConfig::new(4, 4).validate().is_ok());
    }

    #[test]
    fn zero_generators_give_identity_and_midpoint_curvature() {
        let cfg = small_cfg();
        let params = GeneratorParams::zeros(cfg).unwrap();
        let x = vec![0.1; cfg.dim];
        let proj = generate_projection(&params, &x, &x).unwrap();
        assert_eq!(proj.to_dense(), Matrix::identity(cfg.dim));
        let c = generate_curvature(&params, &x, &x).unwrap();
        assert_eq!(c.0, cfg.c_min + 0.5 * (cfg.c_max - cfg.c_min));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let params = GeneratorParams::random(cfg, 5).unwrap();
        let x = vec![0.2, -0.1, 0.0, 0.3, 0.05, -0.2];
        let y = vec![-0.1, 0.1, 0.2, 0.0, 0.1, 0.1];
        let first = generate_projection(&params, &x, &y).unwrap();
        for _ in 0..10 {
            assert_eq!(generate_projection(&params, &x, &y).unwrap(), first);
        }
        assert!(generate_projection(&params, &x[..3], &y).is_err());
    }

    #[test]
    fn curvature_stays_inside_range() {
        let mut cfg = small_cfg();
        cfg.c_min = 0.2;
        cfg.c_max = 0.9;
        let mut params = GeneratorParams::random(cfg, 9).unwrap();
        // push the pooled logit hard in both directions
        params.get_mut(ParamId::F1B).fill(30.0);
        params.get_mut(ParamId::F2B).fill(30.0);
        let x = vec![0.0; cfg.dim];
        let hi = generate_curvature(&params, &x, &x).unwrap().0;
        assert!(hi <= 0.9 && hi > 0.2);
        params.get_mut(ParamId::F2B).fill(-30.0);
        let lo = generate_curvature(&params, &x, &x).unwrap().0;
        assert!((0.2..0.9).contains(&lo));
    }

    #[test]
    fn low_rank_apply_matches_dense() {
        let mut r = rng::seeded(1);
        let (n, k) = (7, 3);
        let proj = LowRankProjection {
            m_a: Matrix::from_vec(n, k, rng::normal_vec(&mut r, n * k, 0.3)).unwrap(),
            m_b: Matrix::from_vec(n, k, rng::normal_vec(&mut r, n * k, 0.3)).unwrap(),
            residual: true,
        };
        let x = rng::normal_vec(&mut r, n, 1.0);
        let mut out = vec![0.0; n];
        let ops = proj.apply(&x, &mut out);
        assert_eq!(ops, 2 * n * k);
        let dense = proj.to_dense().matvec(&x);
        for (a, b) in out.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residual_reduces_to_geodesic() {
        let cfg = small_cfg();
        let mut params = GeneratorParams::random(cfg, 3).unwrap();
        params.zero_projection_output();
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let x = point(&mut r, &cfg, 0.8);
            let y = point(&mut r, &cfg, 0.8);
            let d = adapted_distance(&params, &x, &y).unwrap();
            let c = generate_curvature(&params, &features(&x), &features(&y))
                .unwrap()
                .kappa();
            let xc = project_to_ball(x.coords().to_vec(), c).unwrap();
            let yc = project_to_ball(y.coords().to_vec(), c).unwrap();
            let reference = geodesic_distance(&xc, &yc).unwrap();
            assert!((d - reference).abs() < 1e-12, "{d} vs {reference}");
            assert_eq!(adapted_distance(&params, &x, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn tape_batch_matches_inference_path() {
        for (residual, symmetric, proj, curv) in [
            (true, false, true, true),
            (false, false, true, true),
            (true, true, true, true),
            (true, false, false, true),
            (true, false, true, false),
        ] {
            let cfg = GhdmConfig {
                residual,
                symmetric,
                adapt_projection: proj,
                adapt_curvature: curv,
                ..small_cfg()
            };
            let mut params = GeneratorParams::random(cfg, 17).unwrap();
            // a residual large enough to matter
            params.get_mut(ParamId::FaOutB).fill(0.3);
            params.get_mut(ParamId::FbOutB).fill(-0.2);
            let mut r = rng::seeded(4);
            let xs: Vec<BallPoint> = (0..5).map(|_| point(&mut r, &cfg, 0.4)).collect();
            let ys: Vec<BallPoint> = (0..5).map(|_| point(&mut r, &cfg, 0.4)).collect();
            let mi = Matrix::from_rows(&xs.iter().map(|p| p.coords()).collect::<Vec<_>>()).unwrap();
            let mj = Matrix::from_rows(&ys.iter().map(|p| p.coords()).collect::<Vec<_>>()).unwrap();
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params);
            let d = batch_distances(&mut tape, &vars, &cfg, &mi, &mj).unwrap();
            for b in 0..5 {
                let want = adapted_distance(&params, &xs[b], &ys[b]).unwrap();
                let got = tape.value(d).get(b, 0);
                assert!((want - got).abs() < 1e-10, "{want} vs {got}");
            }
        }
    }

    #[test]
    fn rejects_points_from_another_ball() {
        let cfg = small_cfg();
        let params = GeneratorParams::zeros(cfg).unwrap();
        let other = BallPoint::origin(cfg.dim, CurvatureMag::new(1.0).unwrap());
        assert!(matches!(
            adapted_distance(&params, &other, &other),
            Err(Error::CurvatureMismatch { .. })
        ));
    }

    #[test]
    fn param_names_round_trip() {
        for id in ParamId::ALL {
            assert_eq!(ParamId::from_name(id.name()), Some(id));
        }
        assert_eq!(ParamId::from_name("nope"), None);
        assert!(ParamId::FbOutB.is_projection());
        assert!(!ParamId::F1W.is_projection());
    }
}
