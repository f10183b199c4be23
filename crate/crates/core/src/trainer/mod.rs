//! Joint alternating training of both generators and both discriminators.

mod adam;
mod checkpoint;
mod pool;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngSnapshot, FORMAT_VERSION};
pub use pool::ImagePool;

use crate::data::{PairedBatch, PairedDataset};
use crate::error::{contract, Error, Result};
use crate::networks::{Module, ModelBundle, ModelConfig};
use crate::objectives::{
    discriminator_objective, generator_objective, total_objective, LossBreakdown, LossParts,
    ObjectiveSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    GeneratorsFirst,
    DiscriminatorsFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_total: usize,
    /// Epochs at `lr_initial` before the linear decay to zero begins.
    pub epochs_constant: usize,
    pub lr_initial: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub init_mean: f64,
    pub init_std: f64,
    /// Save every this many epochs (0: only the initial and final checkpoints).
    pub checkpoint_every: usize,
    pub update_order: UpdateOrder,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Generated-image history size per discriminator (0 disables it).
    pub image_pool: usize,
    pub objective: ObjectiveSpec,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Default schedule for the given objective and architecture. The
    /// discriminator input width is adjusted to the objective.
    pub fn new(objective: ObjectiveSpec, mut model: ModelConfig) -> Self {
        model.discriminator.in_channels = objective.discriminator_channels(&model.generator);
        Self {
            epochs_total: 200,
            epochs_constant: 100,
            lr_initial: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 2,
            seed: 0,
            init_mean: 0.0,
            init_std: 0.02,
            checkpoint_every: 10,
            update_order: UpdateOrder::GeneratorsFirst,
            d_steps: 1,
            image_pool: 0,
            objective,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs_constant > self.epochs_total {
            return fail(format!(
                "epochs_constant ({}) exceeds epochs_total ({})",
                self.epochs_constant, self.epochs_total
            ));
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return fail(format!("lr_initial must be positive, got {}", self.lr_initial));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std must be positive, got {}", self.init_std));
        }
        if self.d_steps == 0 {
            return fail("d_steps must be at least 1".into());
        }
        self.objective.validate()?;
        self.model.validate()?;
        let want = self.objective.discriminator_channels(&self.model.generator);
        if self.model.discriminator.in_channels != want {
            return fail(format!(
                "{} needs discriminators with {want} input channels, configured {}",
                self.objective.method, self.model.discriminator.in_channels
            ));
        }
        Ok(())
    }
}

/// Learning rate for 1-based `epoch`: constant for the first `epochs_constant`
/// epochs, then linear decay reaching zero at `epochs_total`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs_total {
        return Err(contract!("epoch {epoch} outside 1..={}", cfg.epochs_total));
    }
    if epoch <= cfg.epochs_constant {
        return Ok(cfg.lr_initial);
    }
    let decay_len = (cfg.epochs_total - cfg.epochs_constant) as f64;
    let into_decay = (epoch - cfg.epochs_constant) as f64;
    Ok(cfg.lr_initial * (1.0 - into_decay / decay_len))
}

/// One row of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub losses: LossBreakdown,
}

pub const LOSS_LOG_HEADER: &str = "epoch,step,adv_A,adv_B,cyc_A,cyc_B,cs_A,cs_B,total_G,total_D,lr";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch, self.step, l.adv_a, l.adv_b, l.cyc_a, l.cyc_b, l.cs_a, l.cs_b, l.total_g, l.total_d, self.lr
        )
    }
}

/// Append-only CSV loss log.
pub struct LossLog {
    path: PathBuf,
    file: fs::File,
}

impl LossLog {
    /// Opens `path` for appending, writing the header if the file is new or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        if empty {
            writeln!(file, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn record(&mut self, r: &StepRecord) -> Result<()> {
        writeln!(self.file, "{}", r.csv_row()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Owns the four networks, both optimizers and all training-time randomness.
pub struct Trainer {
    config: TrainConfig,
    bundle: ModelBundle,
    opt_g: Adam,
    opt_d: Adam,
    pool_a: ImagePool,
    pool_b: ImagePool,
    rng: ChaCha8Rng,
    epoch: usize,
    iteration: u64,
}

impl Trainer {
    /// Fresh networks initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle::initialized(&config.model, config.init_mean, config.init_std, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // init draws use streams 1..=4 of the same seed
        rng.set_stream(u64::MAX);
        Self::assemble(config, bundle, rng)
    }

    fn assemble(config: TrainConfig, bundle: ModelBundle, rng: ChaCha8Rng) -> Result<Self> {
        let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Self {
            opt_g: Adam::new(bundle.generator_parameters(), b1, b2, eps)?,
            opt_d: Adam::new(bundle.discriminator_parameters(), b1, b2, eps)?,
            pool_a: ImagePool::new(config.image_pool),
            pool_b: ImagePool::new(config.image_pool),
            bundle,
            rng,
            config,
            epoch: 0,
            iteration: 0,
        })
    }

    /// Restores the exact state captured by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        ckpt.ensure_model(&ckpt.config.model)?;
        let bundle = ckpt.bundle()?;
        let mut t = Self::assemble(ckpt.config.clone(), bundle, ckpt.rng.restore())?;
        t.opt_g.load_state(ckpt.optimizer_g.clone())?;
        t.opt_d.load_state(ckpt.optimizer_d.clone())?;
        t.pool_a = ImagePool::from_images(ckpt.config.image_pool, ckpt.pool_a.clone());
        t.pool_b = ImagePool::from_images(ckpt.config.image_pool, ckpt.pool_b.clone());
        t.epoch = ckpt.epoch;
        t.iteration = ckpt.iteration;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let parameters = self
            .bundle
            .parameters()
            .into_iter()
            .map(|p| Ok((p.name, p.var.as_tensor().copy()?)))
            .collect::<Result<_>>()?;
        Ok(Checkpoint {
            epoch: self.epoch,
            iteration: self.iteration,
            config: self.config.clone(),
            fingerprint: self.config.model.fingerprint(),
            parameters,
            optimizer_g: self.opt_g.state()?,
            optimizer_d: self.opt_d.state()?,
            pool_a: self.pool_a.images().to_vec(),
            pool_b: self.pool_b.images().to_vec(),
            rng: RngSnapshot::capture(&self.rng),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Completed training steps.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    fn numeric_check(&self, parts: &LossParts, iteration: u64) -> Result<()> {
        total_objective(parts, &self.config.objective)
            .map(|_| ())
            .map_err(|e| match e {
                Error::Numeric { term, .. } => Error::Numeric { term, iteration },
                other => other,
            })
    }

    fn update_generators(&mut self, batch: &PairedBatch, lr: f64) -> Result<(LossParts, Option<Tensor>, Tensor)> {
        let obj = generator_objective(&self.bundle, batch, &self.config.objective)?;
        self.numeric_check(&obj.parts, self.iteration + 1)?;
        let grads = obj.total.backward()?;
        self.opt_g.step(&grads, lr)?;
        Ok((obj.parts, obj.fake_a, obj.fake_b))
    }

    /// Updates only the discriminators on detached fakes; returns `(d_A, d_B)` from
    /// before the first update.
    pub fn update_discriminators(
        &mut self,
        batch: &PairedBatch,
        fake_a: Option<&Tensor>,
        fake_b: &Tensor,
        lr: f64,
    ) -> Result<(f64, f64)> {
        let fake_a = match fake_a {
            Some(f) => Some(self.pool_a.query(f, &mut self.rng)?),
            None => None,
        };
        let fake_b = self.pool_b.query(fake_b, &mut self.rng)?;
        let mut first = None;
        for _ in 0..self.config.d_steps {
            let obj = discriminator_objective(
                &self.bundle,
                batch,
                &self.config.objective,
                fake_a.as_ref(),
                &fake_b,
            )?;
            for (term, v) in [("d_A", obj.d_a), ("d_B", obj.d_b)] {
                if !v.is_finite() {
                    return Err(Error::Numeric {
                        term: term.into(),
                        iteration: self.iteration + 1,
                    });
                }
            }
            first.get_or_insert((obj.d_a, obj.d_b));
            let grads = obj.total.backward()?;
            self.opt_d.step(&grads, lr)?;
        }
        Ok(first.expect("d_steps >= 1"))
    }

    /// One joint update at learning rate `lr`. Returns the losses measured before
    /// the parameters changed.
    pub fn training_step(&mut self, batch: &PairedBatch, lr: f64) -> Result<LossBreakdown> {
        let (mut parts, d_losses) = match self.config.update_order {
            UpdateOrder::GeneratorsFirst => {
                let (parts, fake_a, fake_b) = self.update_generators(batch, lr)?;
                let d = self.update_discriminators(batch, fake_a.as_ref(), &fake_b, lr)?;
                (parts, d)
            }
            UpdateOrder::DiscriminatorsFirst => {
                let fake_b = self.bundle.g_ab.forward(batch.a.tensor())?.detach();
                let fake_a = if self.config.objective.bidirectional {
                    Some(self.bundle.g_ba.forward(batch.b.tensor())?.detach())
                } else {
                    None
                };
                let d = self.update_discriminators(batch, fake_a.as_ref(), &fake_b, lr)?;
                let (parts, _, _) = self.update_generators(batch, lr)?;
                (parts, d)
            }
        };
        (parts.d_a, parts.d_b) = d_losses;
        self.iteration += 1;
        total_objective(&parts, &self.config.objective)
    }

    /// Runs the next epoch over `ds`, passing every step's record to `on_step`.
    pub fn train_epoch(
        &mut self,
        ds: &PairedDataset,
        on_step: &mut dyn FnMut(&StepRecord) -> Result<()>,
    ) -> Result<()> {
        let epoch = self.epoch + 1;
        let lr = lr_at(epoch, &self.config)?;
        let dtype = self.config.model.precision.dtype();
        for batch in ds.batches(self.config.batch_size, self.config.seed, epoch, dtype)? {
            let losses = self.training_step(&batch?, lr)?;
            on_step(&StepRecord {
                epoch,
                step: self.iteration,
                lr,
                losses,
            })?;
        }
        self.epoch = epoch;
        Ok(())
    }

    /// Trains the remaining epochs, logging to `<out_dir>/loss.csv` and saving
    /// checkpoints to `<out_dir>/checkpoints/`.
    pub fn fit(&mut self, ds: &PairedDataset, out_dir: &Path) -> Result<TrainSummary> {
        check_dataset(&self.config, ds)?;
        let run = RunDir::create(out_dir)?;
        let mut log = LossLog::open(&run.loss_log())?;
        let mut summary = TrainSummary::default();
        while self.epoch < self.config.epochs_total {
            self.train_epoch(ds, &mut |r| {
                summary.steps += 1;
                summary.last = Some(r.losses.clone());
                log.record(r)
            })?;
            log.flush()?;
            let every = self.config.checkpoint_every;
            if self.epoch == self.config.epochs_total || (every > 0 && self.epoch % every == 0) {
                summary.checkpoints.push(run.save(&self.checkpoint()?)?);
            }
        }
        Ok(summary)
    }
}

#[derive(Debug, Default, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub last: Option<LossBreakdown>,
    pub checkpoints: Vec<PathBuf>,
}

fn check_dataset(cfg: &TrainConfig, ds: &PairedDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Pairing("training dataset is empty".into()));
    }
    if ds.image_size() != cfg.model.generator.image_size {
        return Err(Error::Config(format!(
            "dataset image size {} differs from the configured {}",
            ds.image_size(),
            cfg.model.generator.image_size
        )));
    }
    Ok(())
}

/// Output directory of a training run.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("checkpoints")).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn loss_log(&self) -> PathBuf {
        self.root.join("loss.csv")
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
    }

    pub fn save(&self, ckpt: &Checkpoint) -> Result<PathBuf> {
        let path = self.checkpoint_path(ckpt.epoch);
        save_checkpoint(ckpt, &path)?;
        Ok(path)
    }
}

/// Fresh run: writes the initial (epoch 0) checkpoint, then trains all epochs.
pub fn train(cfg: &TrainConfig, ds: &PairedDataset, out_dir: &Path) -> Result<TrainSummary> {
    check_dataset(cfg, ds)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    let initial = RunDir::create(out_dir)?.save(&trainer.checkpoint()?)?;
    let mut summary = trainer.fit(ds, out_dir)?;
    summary.checkpoints.insert(0, initial);
    Ok(summary)
}

/// Continues a run from a saved checkpoint, appending to `out_dir`'s loss log.
pub fn resume(checkpoint: &Path, ds: &PairedDataset, out_dir: &Path) -> Result<TrainSummary> {
    let ckpt = load_checkpoint(checkpoint)?;
    Trainer::from_checkpoint(&ckpt)?.fit(ds, out_dir)
}
