//! Alternating discriminator / generator training.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::{batch_at, clip_seed, held_out_clips, Clip, Frame};
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{ExtractorKind, TrainConfig};
use crate::harness::eval::{clip_window, evaluate_generator, noise_batch, EvalReport, Generator};
use crate::harness::io::load_clip_dir;
use crate::losses::{
    disc_loss, scale_targets, ConvExtractor, Discriminator, FeatureExtractor, IdentityExtractor,
    JointLoss, LossReport, ParamMode,
};
use crate::metrics::ColorMode;
use crate::model::{frames_to_tensor, sequences_to_tensor, Bipn};
use crate::scalar::Scalar;
use crate::tensor::{adam_step, Graph, ParamStore, Tensor, Var};

/// Mixed into the run seed for per-sample training noise.
const NOISE_SALT: u64 = 0x6e6f_6973_6500_0000;

pub const CONFIG_FILE: &str = "config.txt";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const EVAL_LOG: &str = "eval_log.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub enum Extractor<T> {
    Identity,
    Conv(ConvExtractor<T>),
}

impl<T: Scalar> Extractor<T> {
    pub fn params(&self) -> ParamStore<T> {
        match self {
            Extractor::Identity => ParamStore::new(),
            Extractor::Conv(c) => c.params().clone(),
        }
    }
}

impl<T: Scalar> FeatureExtractor<T> for Extractor<T> {
    fn min_size(&self) -> usize {
        match self {
            Extractor::Identity => FeatureExtractor::<T>::min_size(&IdentityExtractor),
            Extractor::Conv(c) => c.min_size(),
        }
    }

    fn extract(&self, g: &mut Graph<T>, frames: Var) -> Result<Var> {
        match self {
            Extractor::Identity => IdentityExtractor.extract(g, frames),
            Extractor::Conv(c) => c.extract(g, frames),
        }
    }
}

#[derive(Debug, Clone)]
enum Data<T> {
    Shapes,
    Clips(Vec<Clip<T>>),
}

/// One training run: model, both players' parameters and the iteration count.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    config: TrainConfig,
    model: Bipn,
    disc: Discriminator,
    pub generator: ParamStore<T>,
    pub discriminator: ParamStore<T>,
    extractor: Extractor<T>,
    iteration: u64,
    data: Data<T>,
}

/// Something worth logging during [`Trainer::run`].
#[derive(Debug, Clone)]
pub enum TrainEvent<'a> {
    Loss(&'a LossReport),
    Eval {
        iteration: u64,
        report: &'a EvalReport,
    },
}

fn check_clips<T: Scalar>(clips: &[Clip<T>], cfg: &TrainConfig, what: &str) -> Result<()> {
    let m = &cfg.model;
    for (i, c) in clips.iter().enumerate() {
        let f = &c.frames[0];
        if f.height != m.resolution || f.width != m.resolution || f.channels != m.channels {
            return Err(Error::Dataset(format!(
                "{what} clip {i} is {}x{}x{}, expected {r}x{r}x{}",
                f.height,
                f.width,
                f.channels,
                m.channels,
                r = m.resolution
            )));
        }
        clip_window(c, m.frames)?;
    }
    Ok(())
}

impl<T: Scalar> Trainer<T> {
    /// Fresh run with parameters initialised from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Bipn::new(config.model.clone())?;
        let disc = Discriminator::new(&config.model, config.disc_channels)?;
        let generator = model.init_params(config.seed)?;
        let discriminator = disc.init_params(config.seed)?;
        let extractor = match config.extractor {
            ExtractorKind::Identity => Extractor::Identity,
            ExtractorKind::Conv => {
                Extractor::Conv(ConvExtractor::new(config.model.channels, config.seed)?)
            }
        };
        let data = Self::load_data(&config)?;
        Ok(Self {
            config,
            model,
            disc,
            generator,
            discriminator,
            extractor,
            iteration: 0,
            data,
        })
    }

    fn load_data(config: &TrainConfig) -> Result<Data<T>> {
        match &config.data_dir {
            None => Ok(Data::Shapes),
            Some(dir) => {
                let clips = load_clip_dir(dir)?;
                check_clips(&clips, config, "training")?;
                Ok(Data::Clips(clips))
            }
        }
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        let config = ck.config;
        config.validate()?;
        let model = Bipn::new(config.model.clone())?;
        let disc = Discriminator::new(&config.model, config.disc_channels)?;
        let expect = |store: &ParamStore<T>, fresh: ParamStore<T>, what: &str| -> Result<()> {
            let same = store.len() == fresh.len()
                && store
                    .iter()
                    .zip(fresh.iter())
                    .all(|((a, x), (b, y))| a == b && x.value.shape() == y.value.shape());
            if same {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "checkpoint {what} parameters do not match its configuration"
                )))
            }
        };
        expect(&ck.generator, model.init_params(0)?, "generator")?;
        expect(&ck.discriminator, disc.init_params(0)?, "discriminator")?;
        let extractor = match config.extractor {
            ExtractorKind::Identity => Extractor::Identity,
            ExtractorKind::Conv => Extractor::Conv(ConvExtractor::from_params(ck.extractor)?),
        };
        let data = Self::load_data(&config)?;
        Ok(Self {
            config,
            model,
            disc,
            generator: ck.generator,
            discriminator: ck.discriminator,
            extractor,
            iteration: ck.iteration,
            data,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            extractor: self.extractor.params(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Bipn {
        &self.model
    }

    pub fn discriminator_net(&self) -> &Discriminator {
        &self.disc
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn generator_view(&self) -> Generator<'_, T> {
        Generator {
            model: &self.model,
            params: &self.generator,
        }
    }

    /// Training clips of iteration `it` (0-based).
    pub fn batch(&self, it: u64) -> Result<Vec<Clip<T>>> {
        let bs = self.config.batch_size;
        match &self.data {
            Data::Shapes => batch_at(self.config.seed, &self.config.clip_config(), bs, it),
            Data::Clips(clips) => {
                let first = it * bs as u64;
                Ok((0..bs as u64)
                    .map(|i| clips[((first + i) % clips.len() as u64) as usize].clone())
                    .collect())
            }
        }
    }

    /// The fixed held-out set: seeded clips disjoint from training, or the
    /// clips of `eval_dir`.
    pub fn held_out(&self) -> Result<Vec<Clip<T>>> {
        match (&self.config.eval_dir, &self.data) {
            (Some(dir), _) => {
                let clips = load_clip_dir(dir)?;
                check_clips(&clips, &self.config, "held-out")?;
                Ok(clips)
            }
            (None, Data::Shapes) => held_out_clips(
                self.config.seed,
                &self.config.clip_config(),
                self.config.eval_clips,
            ),
            (None, Data::Clips(_)) => Err(Error::Dataset(
                "directory training needs eval_dir for evaluation".into(),
            )),
        }
    }

    pub fn evaluate(&self, clips: &[Clip<T>]) -> Result<EvalReport> {
        evaluate_generator(
            &self.generator_view(),
            clips,
            self.config.batch_size,
            ColorMode::Luminance,
        )
    }

    /// One discriminator step followed by one generator step on the next batch.
    pub fn step(&mut self) -> Result<LossReport> {
        let it = self.iteration;
        let cfg = self.config.clone();
        let l = cfg.model.frames;
        let clips = self.batch(it)?;
        let windows = clips
            .iter()
            .map(|c| clip_window(c, l))
            .collect::<Result<Vec<_>>>()?;
        let starts: Vec<&Frame<T>> = windows.iter().map(|w| w.0).collect();
        let ends: Vec<&Frame<T>> = windows.iter().map(|w| w.2).collect();
        let seqs: Vec<&[Frame<T>]> = windows.iter().map(|w| w.1).collect();
        let targets = scale_targets(&sequences_to_tensor(&seqs)?, &cfg.model)?;

        let mut g = Graph::new();
        let st = g.constant(frames_to_tensor(&starts)?);
        let ed = g.constant(frames_to_tensor(&ends)?);
        let noise = cfg.model.noise_enabled().then(|| {
            let bs = cfg.batch_size as u64;
            let seeds: Vec<u64> = (0..bs)
                .map(|i| clip_seed(cfg.seed ^ NOISE_SALT, it * bs + i))
                .collect();
            g.constant(noise_batch::<T>(&seeds))
        });
        let preds = self.model.forward(&mut g, &self.generator, st, ed, noise)?;

        let mut disc_value = None;
        if cfg.weights.adv != 0.0 {
            let fakes: Vec<Tensor<T>> = preds.iter().map(|&p| g.value(p).clone()).collect();
            let v = self.disc_step(&targets, fakes)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    term: "L_D".into(),
                    iteration: it + 1,
                    value: v,
                });
            }
            disc_value = Some(v);
        }

        let target_vars: Vec<Var> = targets.into_iter().map(|t| g.constant(t)).collect();
        let joint = JointLoss {
            extractor: &self.extractor,
            discriminator: &self.disc,
            disc_params: &self.discriminator,
            mode: cfg.mode,
            weights: cfg.weights,
            channels: cfg.model.channels,
        };
        let (loss, mut report) = joint.evaluate(&mut g, &preds, &target_vars)?;
        report.iteration = it + 1;
        report.disc = disc_value;
        if let Some((term, value)) = report.first_non_finite() {
            return Err(Error::NonFinite {
                term: term.into(),
                iteration: it + 1,
                value,
            });
        }
        g.backward(loss)?;
        self.generator.absorb_grads(&g);
        adam_step(&mut self.generator, &self.config.adam)?;
        self.iteration += 1;
        Ok(report)
    }

    /// Updates the discriminators on real targets versus detached predictions.
    fn disc_step(&mut self, reals: &[Tensor<T>], fakes: Vec<Tensor<T>>) -> Result<f64> {
        let mut g = Graph::new();
        let mut real_p = Vec::with_capacity(reals.len());
        let mut fake_p = Vec::with_capacity(reals.len());
        for (k, (real, fake)) in reals.iter().zip(fakes).enumerate() {
            let r = g.constant(real.clone());
            let f = g.constant(fake);
            real_p.push(self.disc.forward(
                &mut g,
                &self.discriminator,
                k + 1,
                r,
                ParamMode::Trainable,
            )?);
            fake_p.push(self.disc.forward(
                &mut g,
                &self.discriminator,
                k + 1,
                f,
                ParamMode::Trainable,
            )?);
        }
        let loss = disc_loss(&mut g, &real_p, &fake_p)?;
        let value = g.scalar(loss.total).as_f64();
        if value.is_finite() {
            g.backward(loss.total)?;
            self.discriminator.absorb_grads(&g);
            adam_step(&mut self.discriminator, &self.config.adam)?;
        }
        Ok(value)
    }

    /// Trains until `config.iterations`, evaluating every `eval_every`
    /// iterations and at the end when evaluation is enabled.
    pub fn run(&mut self, mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>) -> Result<()> {
        let held_out = if self.config.eval_every > 0 {
            Some(self.held_out()?)
        } else {
            None
        };
        while self.iteration < self.config.iterations {
            let report = self.step()?;
            on_event(TrainEvent::Loss(&report))?;
            if let Some(clips) = &held_out {
                let it = self.iteration;
                if it.is_multiple_of(self.config.eval_every) || it == self.config.iterations {
                    let report = self.evaluate(clips)?;
                    on_event(TrainEvent::Eval {
                        iteration: it,
                        report: &report,
                    })?;
                }
            }
        }
        Ok(())
    }

    /// Runs to completion, writing the config snapshot, TSV logs and final
    /// checkpoint into `output_dir` when one is configured.
    pub fn run_logged(&mut self) -> Result<()> {
        self.run_logged_with(|_| Ok(()))
    }

    /// [`Trainer::run_logged`] that also forwards every event to `on_event`.
    pub fn run_logged_with(
        &mut self,
        mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
    ) -> Result<()> {
        let Some(dir) = self.config.output_dir.clone() else {
            return self.run(on_event);
        };
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(CONFIG_FILE), self.config.to_text())?;
        let resume = self.iteration > 0;
        let mut train_log = open_log(&dir.join(TRAIN_LOG), LossReport::TSV_HEADER, resume)?;
        let mut eval_log = open_log(
            &dir.join(EVAL_LOG),
            "iteration\tpsnr\tssim\tsharpdiff",
            resume,
        )?;
        self.run(|ev| {
            match &ev {
                TrainEvent::Loss(r) => writeln!(train_log, "{r}")?,
                TrainEvent::Eval { iteration, report } => writeln!(
                    eval_log,
                    "{iteration}\t{:.6}\t{:.6}\t{:.6}",
                    report.mean_psnr(),
                    report.mean_ssim(),
                    report.mean_sharpdiff()
                )?,
            }
            on_event(ev)
        })?;
        train_log.flush()?;
        eval_log.flush()?;
        self.checkpoint().save(&dir.join(CHECKPOINT_FILE))
    }
}

fn open_log(path: &Path, header: &str, append: bool) -> Result<BufWriter<File>> {
    let file = if append && path.exists() {
        fs::OpenOptions::new().append(true).open(path)?
    } else {
        let mut f = File::create(path)?;
        writeln!(f, "{header}")?;
        f
    };
    Ok(BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig::from_text(
            "precision=f64\nscales=1\nframes=2\nresolution=16\nenc_channels=4,4,4\ndec_channels=4,4,4\n\
             disc_channels=4,4,4\nn_shapes=1\nsize_min=2\nsize_max=3\nbatch_size=2\niterations=2\nseed=5",
        )
        .unwrap()
    }

    #[test]
    fn one_iteration_updates_both_players() {
        let mut cfg = tiny();
        cfg.iterations = 1;
        let mut t = Trainer::<f64>::new(cfg).unwrap();
        let g0 = t.generator.clone();
        let d0 = t.discriminator.clone();
        t.run(|_| Ok(())).unwrap();
        assert_eq!(t.iteration(), 1);
        assert_eq!(t.generator.step_count(), 1);
        assert_eq!(t.discriminator.step_count(), 1);
        assert_ne!(t.generator, g0);
        assert_ne!(t.discriminator, d0);
        assert_eq!(t.checkpoint().iteration, 1);
    }

    #[test]
    fn zero_adversarial_weight_skips_discriminator() {
        let mut cfg = tiny();
        cfg.weights.adv = 0.0;
        cfg.weights.feat = 0.0;
        let mut t = Trainer::<f64>::new(cfg).unwrap();
        let report = t.step().unwrap();
        assert!(report.adv.is_none() && report.feat.is_none() && report.disc.is_none());
        assert_eq!(t.discriminator.step_count(), 0);
    }

    #[test]
    fn non_finite_loss_aborts_with_term() {
        let mut cfg = tiny();
        cfg.adam.learning_rate = 1e300;
        cfg.weights.adv = 0.0;
        let mut t = Trainer::<f64>::new(cfg).unwrap();
        let mut err = None;
        for _ in 0..5 {
            if let Err(e) = t.step() {
                err = Some(e);
                break;
            }
        }
        let msg = err.map(|e| (e.category(), e.to_string()));
        assert!(
            matches!(msg, Some(("non-finite", ref m)) if m.contains("iteration")),
            "{msg:?}"
        );
    }
}
