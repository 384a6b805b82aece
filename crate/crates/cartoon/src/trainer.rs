//! The training loop: initialisation epochs, then adversarial epochs, with
//! per-epoch statistics and resumable checkpoints.
//!
//! Data position is a pure function of the global step, so a checkpoint
//! only needs the step counter (plus the running epoch sums) to resume.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use cartoon_core::checkpoint::Checkpoint;
use cartoon_core::train::{derive_seed, StepConfig, StepStats, TrainState, TrainingBatch};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};

const PHOTO_STREAM: u64 = 10;
const CARTOON_STREAM: u64 = 11;
const SMOOTHED_STREAM: u64 = 12;

pub const META_CONFIG: &str = "train.config";
pub const META_EPOCH: &str = "train.epoch_sums";
pub const META_GENERATOR: &str = "generator.config";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Gan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub phase: Phase,
    pub steps: u64,
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
    pub g_con: f64,
    pub total: f64,
    pub wall_secs: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,phase,steps,d_loss,g_adv,g_con,total,wall_secs";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let phase = match self.phase {
            Phase::Init => "init",
            Phase::Gan => "gan",
        };
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{phase},{},{},{},{},{},{:.3}",
            self.epoch,
            self.steps,
            opt(self.d_loss),
            opt(self.g_adv),
            self.g_con,
            self.total,
            self.wall_secs
        );
        s
    }
}

/// Running sums of the current epoch. Wall time is kept out of the
/// checkpoint so equal runs give equal bytes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct EpochSums {
    d_loss: f64,
    g_adv: f64,
    g_con: f64,
    total: f64,
    steps: u64,
    #[serde(skip)]
    wall_secs: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    step_cfg: StepConfig,
    state: TrainState,
    photos: Dataset,
    cartoons: Option<Dataset>,
    smoothed: Option<Dataset>,
    sums: EpochSums,
}

/// What one call to [`Trainer::step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub stats: StepStats,
    pub phase: Phase,
    /// Set when this step completed an epoch.
    pub epoch: Option<EpochStats>,
}

impl Trainer {
    /// Fresh networks seeded from `cfg.seed`. Cartoon and smoothed sets
    /// are required only when there are adversarial epochs.
    pub fn new(cfg: TrainConfig, photos: Dataset, cartoons: Option<Dataset>, smoothed: Option<Dataset>) -> Result<Self> {
        let state = TrainState::new(cfg.generator, cfg.discriminator, cfg.extractor, cfg.seed);
        Self::assemble(cfg, state, photos, cartoons, smoothed, EpochSums::default())
    }

    /// Loads the configured directories.
    pub fn from_dirs(cfg: TrainConfig) -> Result<Self> {
        let (photos, cartoons, smoothed) = load_sets(&cfg)?;
        Self::new(cfg, photos, cartoons, smoothed)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]; the
    /// configuration comes from the checkpoint.
    pub fn resume(ck: &Checkpoint, photos: Dataset, cartoons: Option<Dataset>, smoothed: Option<Dataset>) -> Result<Self> {
        let cfg = stored_config(ck)?;
        let state = TrainState::from_checkpoint(ck, cfg.generator, cfg.discriminator, cfg.extractor)?;
        let sums = match ck.meta(META_EPOCH) {
            Some(raw) => serde_json::from_str(raw).map_err(|e| Error::Config(format!("{META_EPOCH}: {e}")))?,
            None => EpochSums::default(),
        };
        Self::assemble(cfg, state, photos, cartoons, smoothed, sums)
    }

    fn assemble(
        cfg: TrainConfig,
        state: TrainState,
        photos: Dataset,
        cartoons: Option<Dataset>,
        smoothed: Option<Dataset>,
        sums: EpochSums,
    ) -> Result<Self> {
        cfg.validate()?;
        let bs = cfg.batch_size;
        if photos.batches_per_epoch(bs) == 0 {
            return Err(Error::Config(format!("{} photos cannot fill one batch of {bs}", photos.len())));
        }
        if cfg.gan_epochs > 0 {
            for (name, set) in [("cartoon", &cartoons), ("smoothed", &smoothed)] {
                match set {
                    Some(s) if s.batches_per_epoch(bs) > 0 => {}
                    Some(s) => return Err(Error::Config(format!("{} {name} images cannot fill one batch of {bs}", s.len()))),
                    None => return Err(Error::Config(format!("adversarial epochs need a {name} set"))),
                }
            }
        }
        let step_cfg = cfg.step_config()?;
        let photos = photos.with_flip(cfg.flip);
        let cartoons = cartoons.map(|d| d.with_flip(cfg.flip));
        let smoothed = smoothed.map(|d| d.with_flip(cfg.flip));
        Ok(Self {
            cfg,
            step_cfg,
            state,
            photos,
            cartoons,
            smoothed,
            sums,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainState {
        &mut self.state
    }

    pub fn step_index(&self) -> u64 {
        self.state.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.photos.batches_per_epoch(self.cfg.batch_size) as u64
    }

    pub fn init_steps(&self) -> u64 {
        self.cfg.init_epochs * self.steps_per_epoch()
    }

    pub fn total_steps(&self) -> u64 {
        (self.cfg.init_epochs + self.cfg.gan_epochs) * self.steps_per_epoch()
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    /// Photo, cartoon and smoothed batches of global step `t`.
    pub fn batch_at(&self, t: u64) -> Result<TrainingBatch> {
        let (bs, per) = (self.cfg.batch_size, self.steps_per_epoch());
        let seed = self.cfg.seed;
        let p = self.photos.batch(derive_seed(seed, PHOTO_STREAM), t / per, (t % per) as usize, bs)?;
        let k = t.checked_sub(self.init_steps()).ok_or_else(|| Error::Config(format!("step {t} is an initialisation step")))?;
        fn need(d: &Option<Dataset>) -> Result<&Dataset> {
            d.as_ref().ok_or_else(|| Error::Config("missing adversarial data".into()))
        }
        let c = need(&self.cartoons)?.cycled_batch(derive_seed(seed, CARTOON_STREAM), k, bs)?;
        let e = need(&self.smoothed)?.cycled_batch(derive_seed(seed, SMOOTHED_STREAM), k, bs)?;
        Ok(TrainingBatch::new(p, c, e)?)
    }

    /// Runs the next step. Any error (including a non-finite loss) leaves
    /// the caller's last written checkpoint as the good state.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let t = self.state.step;
        if self.is_done() {
            return Err(Error::Config(format!("training already finished at step {t}")));
        }
        let started = Instant::now();
        let per = self.steps_per_epoch();
        let (stats, phase) = if t < self.init_steps() {
            let p = self.photos.batch(derive_seed(self.cfg.seed, PHOTO_STREAM), t / per, (t % per) as usize, self.cfg.batch_size)?;
            (self.state.init_step(&p, &self.step_cfg)?, Phase::Init)
        } else {
            let batch = self.batch_at(t)?;
            (self.state.gan_step(&batch, &self.step_cfg)?, Phase::Gan)
        };
        let s = &mut self.sums;
        s.d_loss += stats.d_loss.unwrap_or(0.0);
        s.g_adv += stats.g_adv.unwrap_or(0.0);
        s.g_con += stats.g_con;
        s.total += stats.total;
        s.steps += 1;
        s.wall_secs += started.elapsed().as_secs_f64();
        let epoch = (t + 1).is_multiple_of(per).then(|| {
            let s = std::mem::take(&mut self.sums);
            let n = s.steps.max(1) as f64;
            let adv = (phase == Phase::Gan).then_some(());
            EpochStats {
                epoch: t / per,
                phase,
                steps: s.steps,
                d_loss: adv.map(|_| s.d_loss / n),
                g_adv: adv.map(|_| s.g_adv / n),
                g_con: s.g_con / n,
                total: s.total / n,
                wall_secs: s.wall_secs,
            }
        });
        Ok(StepOutcome { stats, phase, epoch })
    }

    /// Steps until the initialisation epochs are complete.
    pub fn init_phase(&mut self) -> Result<Vec<EpochStats>> {
        let mut out = Vec::new();
        while self.state.step < self.init_steps() {
            out.extend(self.step()?.epoch);
        }
        Ok(out)
    }

    /// Steps until the end of training.
    pub fn run(&mut self) -> Result<Vec<EpochStats>> {
        let mut out = Vec::new();
        while !self.is_done() {
            out.extend(self.step()?.epoch);
        }
        Ok(out)
    }

    /// Full state: networks, optimizer moments, buffers, step, the
    /// configuration and the partial epoch sums.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.state.to_checkpoint()?;
        ck.set_meta(META_CONFIG, to_json(&self.cfg)?)?;
        ck.set_meta(META_GENERATOR, to_json(&self.cfg.generator)?)?;
        ck.set_meta(META_EPOCH, to_json(&self.sums)?)?;
        Ok(ck)
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

/// The training configuration stored in a checkpoint.
pub fn stored_config(ck: &Checkpoint) -> Result<TrainConfig> {
    let raw = ck
        .meta(META_CONFIG)
        .ok_or_else(|| Error::Config(format!("checkpoint has no `{META_CONFIG}` entry")))?;
    serde_json::from_str(raw).map_err(|e| Error::Config(format!("{META_CONFIG}: {e}")))
}

/// Photo set, plus the cartoon and smoothed sets when adversarial epochs
/// are configured.
pub fn load_sets(cfg: &TrainConfig) -> Result<(Dataset, Option<Dataset>, Option<Dataset>)> {
    cfg.validate_dirs()?;
    let photos = load_dataset(&cfg.photo_dir, cfg.image_size)?;
    if cfg.gan_epochs == 0 {
        return Ok((photos, None, None));
    }
    let cartoons = load_dataset(&cfg.cartoon_dir, cfg.image_size)?;
    let smoothed = load_dataset(&cfg.smoothed_dir, cfg.image_size)?;
    Ok((photos, Some(cartoons), Some(smoothed)))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(crate::error::io_at(path))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

/// Encodes to a temp file and renames it into place.
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::io::write_atomic(path, &ck.to_bytes())
}
