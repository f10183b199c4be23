//! Run configuration: a TOML file with dotted sections, overridden by flags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use csgan::metrics::MetricKind;
use csgan::networks::{DiscriminatorConfig, GeneratorConfig};
use csgan::objectives::{EXTRA_L1, EXTRA_SYN};
use csgan::trainer::UpdateOrder;
use csgan::{
    DatasetOptions, Direction, Layout, LossWeights, Method, ModelConfig, ObjectiveSpec, Precision,
    TrainConfig,
};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Every key a config file or override may set.
pub const VALID_KEYS: &[&str] = &[
    "dataset.root",
    "dataset.layout",
    "dataset.name",
    "dataset.image_size",
    "dataset.train_count",
    "dataset.swap_domains",
    "dataset.flip",
    "method",
    "model.base_width",
    "model.residual_blocks",
    "model.disc_widths",
    "model.precision",
    "train.epochs",
    "train.epochs_constant",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.batch_size",
    "train.seed",
    "train.init_mean",
    "train.init_std",
    "train.checkpoint_every",
    "train.d_first",
    "train.d_steps",
    "train.image_pool",
    "loss.lambda_a",
    "loss.lambda_b",
    "loss.mu_a",
    "loss.mu_b",
    "loss.syn",
    "loss.l1",
    "loss.halve_d",
    "eval.metrics",
    "eval.direction",
    "lpips.weights",
    "output_dir",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub root: Option<PathBuf>,
    pub layout: String,
    pub name: Option<String>,
    pub image_size: usize,
    pub train_count: Option<usize>,
    pub swap_domains: bool,
    pub flip: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            root: None,
            layout: Layout::SplitFolders.to_string(),
            name: None,
            image_size: 256,
            train_count: None,
            swap_domains: false,
            flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub base_width: usize,
    pub residual_blocks: usize,
    pub disc_widths: Vec<usize>,
    pub precision: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            base_width: g.base_width,
            residual_blocks: g.n_residual_blocks,
            disc_widths: DiscriminatorConfig::default().widths,
            precision: Precision::F32.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Defaults to half of `epochs`.
    pub epochs_constant: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub init_mean: f64,
    pub init_std: f64,
    pub checkpoint_every: usize,
    pub d_first: bool,
    pub d_steps: usize,
    pub image_pool: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(ObjectiveSpec::preset(Method::CsGan), ModelConfig::default());
        Self {
            epochs: t.epochs_total,
            epochs_constant: None,
            lr: t.lr_initial,
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            batch_size: t.batch_size,
            seed: t.seed,
            init_mean: t.init_mean,
            init_std: t.init_std,
            checkpoint_every: t.checkpoint_every,
            d_first: false,
            d_steps: t.d_steps,
            image_pool: t.image_pool,
        }
    }
}

/// Unset weights take the method preset's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda_a: Option<f64>,
    pub lambda_b: Option<f64>,
    pub mu_a: Option<f64>,
    pub mu_b: Option<f64>,
    pub syn: Option<f64>,
    pub l1: Option<f64>,
    pub halve_d: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: String,
    pub direction: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: "mse,psnr,ssim,lpips".into(),
            direction: Direction::AToB.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpipsSection {
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: String,
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub eval: EvalSection,
    pub lpips: LpipsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::CsGan.name().into(),
            output_dir: None,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            loss: LossSection::default(),
            eval: EvalSection::default(),
            lpips: LpipsSection::default(),
        }
    }
}

/// A resolved configuration plus the keys the user set explicitly.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub explicit: BTreeSet<String>,
}

fn flatten(prefix: &str, table: &Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Table {
    let mut root = Table::new();
    for (key, v) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let mut table = &mut root;
        for p in parts {
            table = table
                .entry(p)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("sections hold tables");
        }
        table.insert(last.to_string(), v.clone());
    }
    root
}

fn invalid_key(key: &str) -> CliError {
    CliError::Core(csgan::Error::Config(format!(
        "unknown config key `{key}`; valid keys: {}",
        VALID_KEYS.join(", ")
    )))
}

/// Reads `path` (if any), applies `overrides` (dotted key → value) on top and
/// checks every key against [`VALID_KEYS`].
pub fn load(path: Option<&Path>, overrides: &[(&str, Value)]) -> Result<Loaded, CliError> {
    let mut flat = BTreeMap::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Core(csgan::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        })?;
        let table: Table = toml::from_str(&text)
            .map_err(|e| CliError::Core(csgan::Error::Config(format!("{}: {e}", path.display()))))?;
        flatten("", &table, &mut flat);
    }
    for (k, v) in overrides {
        flat.insert(k.to_string(), v.clone());
    }
    if let Some(bad) = flat.keys().find(|k| !VALID_KEYS.contains(&k.as_str())) {
        return Err(invalid_key(bad));
    }
    let explicit = flat.keys().cloned().collect();
    let text = toml::to_string(&unflatten(&flat)).map_err(|e| CliError::Core(csgan::Error::Config(e.to_string())))?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| CliError::Core(csgan::Error::Config(e.message().to_string())))?;
    Ok(Loaded { config, explicit })
}

fn core<T>(r: csgan::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::Core)
}

impl RunConfig {
    pub fn method(&self) -> Result<Method, CliError> {
        core(self.method.parse())
    }

    pub fn direction(&self) -> Result<Direction, CliError> {
        core(self.eval.direction.parse())
    }

    pub fn metrics(&self) -> Result<Vec<MetricKind>, CliError> {
        core(MetricKind::parse_list(&self.eval.metrics))
    }

    pub fn dataset_options(&self) -> Result<DatasetOptions, CliError> {
        Ok(DatasetOptions {
            layout: core(self.dataset.layout.parse())?,
            image_size: self.dataset.image_size,
            train_count: self.dataset.train_count,
            swap_domains: self.dataset.swap_domains,
            flip: self.dataset.flip,
        })
    }

    pub fn dataset_root(&self) -> Result<&Path, CliError> {
        self.dataset
            .root
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset root; pass --dataset-root or set dataset.root".into()))
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        Ok(ModelConfig {
            generator: GeneratorConfig {
                base_width: self.model.base_width,
                n_residual_blocks: self.model.residual_blocks,
                image_size: self.dataset.image_size,
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig {
                widths: self.model.disc_widths.clone(),
                ..DiscriminatorConfig::default()
            },
            precision: core(self.model.precision.parse())?,
        })
    }

    pub fn objective(&self) -> Result<ObjectiveSpec, CliError> {
        let mut spec = ObjectiveSpec::preset(self.method()?);
        let l = &self.loss;
        spec.weights = LossWeights {
            lambda_a: l.lambda_a.unwrap_or(spec.weights.lambda_a),
            lambda_b: l.lambda_b.unwrap_or(spec.weights.lambda_b),
            mu_a: l.mu_a.unwrap_or(spec.weights.mu_a),
            mu_b: l.mu_b.unwrap_or(spec.weights.mu_b),
        };
        for (key, v) in [(EXTRA_SYN, l.syn), (EXTRA_L1, l.l1)] {
            if let Some(v) = v {
                spec.extra_weights.insert(key.to_string(), v);
            }
        }
        if let Some(h) = l.halve_d {
            spec.halve_d_loss = h;
        }
        core(spec.validate())?;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let mut cfg = TrainConfig::new(self.objective()?, self.model_config()?);
        cfg.epochs_total = t.epochs;
        cfg.epochs_constant = t.epochs_constant.unwrap_or(t.epochs / 2);
        cfg.lr_initial = t.lr;
        cfg.adam_beta1 = t.beta1;
        cfg.adam_beta2 = t.beta2;
        cfg.batch_size = t.batch_size;
        cfg.seed = t.seed;
        cfg.init_mean = t.init_mean;
        cfg.init_std = t.init_std;
        cfg.checkpoint_every = t.checkpoint_every;
        cfg.update_order = if t.d_first {
            UpdateOrder::DiscriminatorsFirst
        } else {
            UpdateOrder::GeneratorsFirst
        };
        cfg.d_steps = t.d_steps;
        cfg.image_pool = t.image_pool;
        core(cfg.validate())?;
        Ok(cfg)
    }

    /// Copy with every derived default written out, so the snapshot alone
    /// reproduces the run.
    pub fn resolved(&self) -> Result<RunConfig, CliError> {
        let mut r = self.clone();
        let spec = self.objective()?;
        r.method = spec.method.name().into();
        r.loss = LossSection {
            lambda_a: Some(spec.weights.lambda_a),
            lambda_b: Some(spec.weights.lambda_b),
            mu_a: Some(spec.weights.mu_a),
            mu_b: Some(spec.weights.mu_b),
            syn: spec.extra_weights.get(EXTRA_SYN).copied(),
            l1: spec.extra_weights.get(EXTRA_L1).copied(),
            halve_d: Some(spec.halve_d_loss),
        };
        r.train.epochs_constant = Some(self.train.epochs_constant.unwrap_or(self.train.epochs / 2));
        Ok(r)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// `--out`, then `output_dir`, then `$CSGAN_OUT_DIR`, then `./runs`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        match std::env::var_os("CSGAN_OUT_DIR") {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => PathBuf::from("runs"),
        }
    }
}
