//! JSON dataset and checkpoint files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hypergeo_core::ball::{BallPoint, CurvatureMag};
use hypergeo_core::ghdm::{GeneratorParams, GhdmConfig, ParamId};
use hypergeo_core::trainer::{LossKind, SyntheticDataset, TrainConfig, TreeConfig};
use hypergeo_core::Matrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TreeConfigFile {
    pub depth: usize,
    pub branching: usize,
    pub classes: usize,
    pub dim: usize,
    pub noise_scale: f64,
    pub per_class: usize,
    pub seed: u64,
    pub kappa: f64,
    pub nuisance_dims: usize,
    pub nuisance_scale: f64,
    pub root_offset: f64,
    pub level_decay: f64,
    pub radial_weight: f64,
}

impl From<TreeConfig> for TreeConfigFile {
    fn from(c: TreeConfig) -> Self {
        Self {
            depth: c.depth,
            branching: c.branching,
            classes: c.classes,
            dim: c.dim,
            noise_scale: c.noise_scale,
            per_class: c.per_class,
            seed: c.seed,
            kappa: c.kappa,
            nuisance_dims: c.nuisance_dims,
            nuisance_scale: c.nuisance_scale,
            root_offset: c.root_offset,
            level_decay: c.level_decay,
            radial_weight: c.radial_weight,
        }
    }
}

impl From<TreeConfigFile> for TreeConfig {
    fn from(c: TreeConfigFile) -> Self {
        Self {
            depth: c.depth,
            branching: c.branching,
            classes: c.classes,
            dim: c.dim,
            noise_scale: c.noise_scale,
            per_class: c.per_class,
            seed: c.seed,
            kappa: c.kappa,
            nuisance_dims: c.nuisance_dims,
            nuisance_scale: c.nuisance_scale,
            root_offset: c.root_offset,
            level_decay: c.level_decay,
            radial_weight: c.radial_weight,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetFile {
    pub dim: usize,
    pub kappa: f64,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    /// Parent index per node, `-1` for the root.
    pub tree: Vec<i64>,
    pub config: TreeConfigFile,
}

impl From<&SyntheticDataset> for DatasetFile {
    fn from(d: &SyntheticDataset) -> Self {
        Self {
            dim: d.dim(),
            kappa: d.config.kappa,
            points: d.points.iter().map(|p| p.coords().to_vec()).collect(),
            labels: d.labels.clone(),
            tree: d.tree.iter().map(|p| p.map_or(-1, |i| i as i64)).collect(),
            config: d.config.into(),
        }
    }
}

impl TryFrom<DatasetFile> for SyntheticDataset {
    type Error = CliError;

    fn try_from(f: DatasetFile) -> CliResult<Self> {
        if f.dim != f.config.dim || f.kappa != f.config.kappa {
            return Err(CliError::Format(
                "dataset header disagrees with its config".into(),
            ));
        }
        let kappa = CurvatureMag::new(f.kappa)?;
        let points = f
            .points
            .into_iter()
            .map(|p| BallPoint::new(p, kappa))
            .collect::<Result<Vec<_>, _>>()?;
        let tree = f
            .tree
            .iter()
            .map(|&p| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(CliError::Format(format!("invalid tree parent {p}"))),
            })
            .collect::<CliResult<Vec<_>>>()?;
        let data = SyntheticDataset {
            points,
            labels: f.labels,
            tree,
            config: f.config.into(),
        };
        data.validate()?;
        Ok(data)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GhdmConfigFile {
    pub dim: usize,
    pub rank: usize,
    pub hidden: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub base_kappa: f64,
    pub residual: bool,
    pub symmetric: bool,
    pub adapt_projection: bool,
    pub adapt_curvature: bool,
    pub fixed_curvature: f64,
}

impl From<GhdmConfig> for GhdmConfigFile {
    fn from(c: GhdmConfig) -> Self {
        Self {
            dim: c.dim,
            rank: c.rank,
            hidden: c.hidden,
            c_min: c.c_min,
            c_max: c.c_max,
            base_kappa: c.base_kappa,
            residual: c.residual,
            symmetric: c.symmetric,
            adapt_projection: c.adapt_projection,
            adapt_curvature: c.adapt_curvature,
            fixed_curvature: c.fixed_curvature,
        }
    }
}

impl From<GhdmConfigFile> for GhdmConfig {
    fn from(c: GhdmConfigFile) -> Self {
        Self {
            dim: c.dim,
            rank: c.rank,
            hidden: c.hidden,
            c_min: c.c_min,
            c_max: c.c_max,
            base_kappa: c.base_kappa,
            residual: c.residual,
            symmetric: c.symmetric,
            adapt_projection: c.adapt_projection,
            adapt_curvature: c.adapt_curvature,
            fixed_curvature: c.fixed_curvature,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFile {
    CrossEntropy,
    Contrastive { margin: f64 },
}

/// Training configuration file. Missing fields take the benchmark defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfigFile {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub threshold: f64,
    pub rank: usize,
    pub hidden: Option<usize>,
    pub c_min: f64,
    pub c_max: f64,
    pub residual: bool,
    pub symmetric: bool,
    pub adapt_projection: bool,
    pub adapt_curvature: bool,
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub loss: LossFile,
    pub seed: u64,
}

impl Default for TrainConfigFile {
    fn default() -> Self {
        let b = TrainConfig::benchmark(0);
        Self {
            ways: b.shape.ways,
            shots: b.shape.shots,
            queries: b.shape.queries,
            threshold: b.threshold,
            rank: b.ghdm.rank,
            hidden: None,
            c_min: b.ghdm.c_min,
            c_max: b.ghdm.c_max,
            residual: b.ghdm.residual,
            symmetric: b.ghdm.symmetric,
            adapt_projection: b.ghdm.adapt_projection,
            adapt_curvature: b.ghdm.adapt_curvature,
            lr: b.lr,
            momentum: b.momentum,
            steps: b.steps,
            loss: LossFile::CrossEntropy,
            seed: b.seed,
        }
    }
}

impl TrainConfigFile {
    /// Resolves against a dataset, which fixes `n` and the base curvature.
    pub fn resolve(&self, data: &SyntheticDataset) -> TrainConfig {
        let dim = data.dim();
        let ghdm = GhdmConfig {
            hidden: self.hidden.unwrap_or(4 * dim),
            c_min: self.c_min,
            c_max: self.c_max,
            base_kappa: data.config.kappa,
            residual: self.residual,
            symmetric: self.symmetric,
            adapt_projection: self.adapt_projection,
            adapt_curvature: self.adapt_curvature,
            ..GhdmConfig::new(dim, self.rank)
        };
        TrainConfig {
            shape: hypergeo_core::trainer::EpisodeShape {
                ways: self.ways,
                shots: self.shots,
                queries: self.queries,
            },
            threshold: self.threshold,
            ghdm,
            lr: self.lr,
            momentum: self.momentum,
            steps: self.steps,
            loss: match self.loss {
                LossFile::CrossEntropy => LossKind::CrossEntropy,
                LossFile::Contrastive { margin } => LossKind::Contrastive { margin },
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorFile {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointFile {
    pub format_version: u32,
    pub config: GhdmConfigFile,
    pub params: BTreeMap<String, TensorFile>,
}

impl From<&GeneratorParams> for CheckpointFile {
    fn from(p: &GeneratorParams) -> Self {
        let params = ParamId::ALL
            .iter()
            .map(|&id| {
                let t = p.get(id);
                (
                    id.name().to_string(),
                    TensorFile {
                        shape: [t.rows(), t.cols()],
                        data: t.as_slice().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            config: (*p.config()).into(),
            params,
        }
    }
}

impl TryFrom<CheckpointFile> for GeneratorParams {
    type Error = CliError;

    fn try_from(mut f: CheckpointFile) -> CliResult<Self> {
        if f.format_version != CHECKPOINT_VERSION {
            return Err(CliError::Format(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                f.format_version
            )));
        }
        let config: GhdmConfig = f.config.into();
        let mut tensors = Vec::with_capacity(ParamId::ALL.len());
        for id in ParamId::ALL {
            let t = f.params.remove(id.name()).ok_or_else(|| {
                CliError::Format(format!("checkpoint is missing `{}`", id.name()))
            })?;
            if (t.shape[0], t.shape[1]) != id.shape(&config) {
                return Err(CliError::Format(format!(
                    "`{}` has shape {:?}, the config needs {:?}",
                    id.name(),
                    t.shape,
                    id.shape(&config)
                )));
            }
            tensors.push(Matrix::from_vec(t.shape[0], t.shape[1], t.data)?);
        }
        if let Some(extra) = f.params.keys().next() {
            return Err(CliError::Format(format!(
                "checkpoint has unknown tensor `{extra}`"
            )));
        }
        Ok(GeneratorParams::from_tensors(config, tensors)?)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_dataset(path: &Path) -> CliResult<SyntheticDataset> {
    read_json::<DatasetFile>(path)?.try_into()
}

pub fn write_dataset(path: &Path, data: &SyntheticDataset) -> CliResult<()> {
    write_json(path, &DatasetFile::from(data))
}

pub fn read_checkpoint(path: &Path) -> CliResult<GeneratorParams> {
    read_json::<CheckpointFile>(path)?.try_into()
}

pub fn write_checkpoint(path: &Path, params: &GeneratorParams) -> CliResult<()> {
    write_json(path, &CheckpointFile::from(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hypergeo_core::trainer::generate_tree_dataset;

    fn tiny() -> SyntheticDataset {
        generate_tree_dataset(&TreeConfig {
            depth: 2,
            branching: 2,
            classes: 4,
            dim: 4,
            per_class: 3,
            nuisance_dims: 1,
            ..TreeConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let d = tiny();
        let text = serde_json::to_string(&DatasetFile::from(&d)).unwrap();
        let back: SyntheticDataset = serde_json::from_str::<DatasetFile>(&text)
            .unwrap()
            .try_into()
            .unwrap();
        assert_eq!(back, d);
        assert!(text.contains("\"tree\":[-1,0,0,1,1,2,2]"));
    }

    #[test]
    fn checkpoint_round_trip_and_version() {
        let p = GeneratorParams::random(
            GhdmConfig {
                hidden: 5,
                ..GhdmConfig::new(4, 2)
            },
            1,
        )
        .unwrap();
        let file = CheckpointFile::from(&p);
        let back: GeneratorParams = file.clone().try_into().unwrap();
        assert_eq!(back, p);

        let mut wrong = file.clone();
        wrong.format_version = 2;
        assert!(matches!(
            GeneratorParams::try_from(wrong),
            Err(CliError::Format(_))
        ));

        let mut shape = file;
        shape.config.rank = 3;
        let err = GeneratorParams::try_from(shape).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
    }

    #[test]
    fn train_config_defaults_fill_missing_fields() {
        let f: TrainConfigFile =
            serde_json::from_str(r#"{"steps": 7, "loss": {"kind": "contrastive", "margin": 0.5}}"#)
                .unwrap();
        let cfg = f.resolve(&tiny());
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.ghdm.dim, 4);
        assert_eq!(cfg.ghdm.hidden, 16);
        assert_eq!(cfg.loss, LossKind::Contrastive { margin: 0.5 });
        assert!(serde_json::from_str::<TrainConfigFile>(r#"{"stepz": 1}"#).is_err());
    }
}
