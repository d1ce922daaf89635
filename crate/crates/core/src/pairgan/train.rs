use std::path::Path;

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminator::{ConvDiscriminator, DiscriminatorConfig};
use super::generator::{sample_noise, GeneratorConfig, PairGenerator, PAIR_CHANNELS};
use crate::archive::{read_artifact, write_artifact, NamedArrays};
use crate::error::{Error, Result};
use crate::metrics::{feature_frechet, RandomFeaturizer};
use crate::nn::{Adam, AdamConfig, Params};
use crate::scalar::{sigmoid, softplus, Real};
use crate::synthvideo::{sample_pairs, VideoClip};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairTrainConfig {
    pub generator: GeneratorConfig,
    /// Discriminator widths; `None` picks the standard ladder for the
    /// generator's resolution.
    pub discriminator_channels: Option<Vec<usize>>,
    pub k: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub gamma: f64,
    /// Lazy R1: the penalty runs every `r1_interval` D steps, scaled up by
    /// the interval.
    pub r1_interval: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Samples per side for checkpoint proxy-Fréchet scoring.
    pub eval_samples: usize,
    pub feature_dim: usize,
    pub feature_seed: u64,
}

impl Default for PairTrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator_channels: None,
            k: 4,
            batch: 32,
            steps: 2000,
            lr_g: 0.002,
            lr_d: 0.002,
            gamma: 1.0,
            r1_interval: 16,
            seed: 0,
            checkpoint_every: 250,
            eval_samples: 256,
            feature_dim: RandomFeaturizer::DEFAULT_DIM,
            feature_seed: 1234,
        }
    }
}

impl PairTrainConfig {
    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        let res = self.generator.resolution();
        match &self.discriminator_channels {
            Some(ch) => DiscriminatorConfig { in_channels: PAIR_CHANNELS, resolution: res, channels: ch.clone() },
            None => DiscriminatorConfig::for_input(PAIR_CHANNELS, res),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator_config().validate()?;
        if self.k == 0 || self.batch == 0 || self.r1_interval == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("k, batch, r1_interval and checkpoint_every must be positive".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0 && self.gamma >= 0.0) {
            return Err(Error::Config("learning rates must be positive and gamma non-negative".into()));
        }
        if self.eval_samples < 2 {
            return Err(Error::Config("eval_samples must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    /// `γ/2 · E‖∇D(x)‖²` on the steps where R1 ran.
    pub r1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub proxy_frechet: f64,
}

/// Result of [`train_pairgan`]. `generator`/`discriminator` are the
/// lowest-proxy-Fréchet checkpoint.
#[derive(Clone, Debug)]
pub struct PairGanRun<T> {
    pub generator: PairGenerator<T>,
    pub discriminator: ConvDiscriminator<T>,
    pub best_step: usize,
    pub final_generator: PairGenerator<T>,
    pub history: Vec<StepRecord>,
    pub checkpoints: Vec<CheckpointRecord>,
}

fn flatten<T: Real>(x: impl IntoIterator<Item = f32>) -> Vec<T> {
    x.into_iter().map(|v| T::c(v as f64)).collect()
}

/// Non-saturating D loss `E softplus(D(fake)) + E softplus(−D(real))`, plus
/// R1 on the reals when `r1_scale` is set (penalty weight per sample before
/// averaging). Gradients accumulate into `grad`; returns `(loss, r1)`.
pub fn discriminator_step_grads<T: Real>(
    d: &ConvDiscriminator<T>,
    real: &[Vec<T>],
    fake: &[Vec<T>],
    r1_scale: Option<T>,
    grad: &mut ConvDiscriminator<T>,
) -> (T, Option<T>) {
    let nr = T::c(real.len() as f64);
    let nf = T::c(fake.len() as f64);
    let mut loss = T::zero();
    for x in real {
        let cache = d.forward(x);
        loss += softplus(-cache.logit) / nr;
        d.backward(&cache, -sigmoid(-cache.logit) / nr, Some(grad));
    }
    for x in fake {
        let cache = d.forward(x);
        loss += softplus(cache.logit) / nf;
        d.backward(&cache, sigmoid(cache.logit) / nf, Some(grad));
    }
    let r1 = r1_scale.map(|s| real.iter().map(|x| d.r1_penalty(x, s / nr, grad)).sum::<T>());
    (loss, r1)
}

/// Non-saturating G loss `E softplus(−D(G(z)))`; accumulates into `grad`.
pub fn generator_step_grads<T: Real>(
    g: &PairGenerator<T>,
    d: &ConvDiscriminator<T>,
    zs: &[Vec<T>],
    grad: &mut PairGenerator<T>,
) -> T {
    let n = T::c(zs.len() as f64);
    let mut loss = T::zero();
    for z in zs {
        let (w, mcache) = g.mapping.forward(z);
        let scache = g.synthesis.forward(&w);
        let dcache = d.forward(scache.output());
        loss += softplus(-dcache.logit) / n;
        let dx = d.backward(&dcache, -sigmoid(-dcache.logit) / n, None);
        let dw = g.synthesis.backward(&scache, &dx, Some(&mut grad.synthesis));
        g.mapping.backward(&mcache, &dw, Some(&mut grad.mapping));
    }
    loss
}

/// Proxy Fréchet distance between generated pairs (from fixed noise) and a
/// fixed set of flattened real pairs.
pub fn pair_proxy_frechet<T: Real>(
    g: &PairGenerator<T>,
    noise: &[Vec<T>],
    real: &[Vec<f32>],
    featurizer: &RandomFeaturizer,
) -> Result<f64> {
    let fake: Vec<Vec<f32>> = noise
        .iter()
        .map(|z| {
            let w = g.mapping.forward(z).0;
            g.synthesize_flat(&w).iter().map(|v| v.value() as f32).collect()
        })
        .collect();
    feature_frechet(real, &fake, featurizer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub d_z: usize,
    pub d_w: usize,
    pub block_dims: Vec<usize>,
    pub step: usize,
    pub seed: u64,
    pub k: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Hash of the corpus the checkpoint was trained on, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_hash: Option<String>,
}

pub fn save_checkpoint<T: Real>(
    dir: &Path,
    name: &str,
    g: &PairGenerator<T>,
    d: &ConvDiscriminator<T>,
    step: usize,
    seed: u64,
    k: usize,
) -> Result<String> {
    save_checkpoint_from(dir, name, g, d, step, seed, k, None)
}

/// [`save_checkpoint`] recording the hash of the training corpus.
#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint_from<T: Real>(
    dir: &Path,
    name: &str,
    g: &PairGenerator<T>,
    d: &ConvDiscriminator<T>,
    step: usize,
    seed: u64,
    k: usize,
    corpus_hash: Option<&str>,
) -> Result<String> {
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        d_z: g.config.d_z,
        d_w: g.config.d_w,
        block_dims: g.config.channels.clone(),
        step,
        seed,
        k,
        generator: g.config.clone(),
        discriminator: d.config.clone(),
        corpus_hash: corpus_hash.map(str::to_string),
    };
    let mut arrays = NamedArrays::default();
    arrays.extend_params("generator", g);
    arrays.extend_params("discriminator", d);
    write_artifact(dir, name, &manifest, &arrays)
}

/// Loads a checkpoint; the manifest must describe the architecture the
/// arrays were saved from. Returns `(G, D, manifest, hash)`.
pub fn load_checkpoint<T: Real>(
    dir: &Path,
    name: &str,
) -> Result<(PairGenerator<T>, ConvDiscriminator<T>, CheckpointManifest, String)> {
    let art = read_artifact::<CheckpointManifest>(dir, name)?;
    let m = &art.manifest;
    if m.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("checkpoint format {} unsupported (expected {CHECKPOINT_FORMAT})", m.format_version)));
    }
    if m.d_z != m.generator.d_z || m.d_w != m.generator.d_w || m.block_dims != m.generator.channels {
        return Err(Error::Format("checkpoint manifest disagrees with its generator config".into()));
    }
    if m.discriminator.in_channels != PAIR_CHANNELS || m.discriminator.resolution != m.generator.resolution() {
        return Err(Error::Format("checkpoint discriminator does not match the generator output".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = PairGenerator::new(m.generator.clone(), &mut rng)?;
    let mut d = ConvDiscriminator::new(m.discriminator.clone(), &mut rng)?;
    art.arrays.load_params("generator", &mut g)?;
    art.arrays.load_params("discriminator", &mut d)?;
    let expected = g.param_count() + d.param_count();
    if art.arrays.entries.iter().map(|(_, a)| a.len()).sum::<usize>() != expected {
        return Err(Error::Format("checkpoint holds arrays the architecture does not use".into()));
    }
    Ok((g, d, art.manifest, art.hash))
}

/// Adversarial training on interval-`k` pairs with lazy R1 on reals.
///
/// Checkpoints are scored by proxy Fréchet distance every
/// `checkpoint_every` steps (and at steps 0 and `steps`) and written to
/// `checkpoint_dir` when given. A non-finite loss or gradient aborts the run
/// after saving the last finite state as `pairgan_last_finite`.
pub fn train_pairgan<T: Real>(
    corpus: &[VideoClip],
    config: &PairTrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<PairGanRun<T>> {
    config.validate()?;
    let res = config.generator.resolution();
    if let Some(c) = corpus.first() {
        if c.height() != res || c.width() != res {
            return Err(Error::Config(format!(
                "corpus is {}x{} but the generator emits {res}x{res}",
                c.height(),
                c.width()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut g = PairGenerator::<T>::new(config.generator.clone(), &mut rng)?;
    let mut d = ConvDiscriminator::<T>::new(config.discriminator_config(), &mut rng)?;
    let mut opt_g = Adam::new(AdamConfig::gan(config.lr_g), &g);
    let mut opt_d = Adam::new(AdamConfig::gan(config.lr_d), &d);
    let mut grad_g = g.zeros_like();
    let mut grad_d = d.zeros_like();

    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.feature_seed);
    let featurizer = RandomFeaturizer::new(config.feature_seed, PAIR_CHANNELS * res * res, config.feature_dim);
    let eval_real: Vec<Vec<f32>> = sample_pairs(corpus, config.k, config.eval_samples, &mut eval_rng)?
        .into_iter()
        .map(|p| p.pixels.iter().copied().collect())
        .collect();
    let eval_noise: Vec<Vec<T>> = (0..config.eval_samples).map(|_| sample_noise(config.generator.d_z, &mut eval_rng)).collect();

    let mut history = Vec::with_capacity(config.steps);
    let mut checkpoints = Vec::new();
    let mut best = (f64::INFINITY, 0, g.clone(), d.clone());
    let r1_weight = T::c(config.gamma * config.r1_interval as f64);

    for step in 0..=config.steps {
        if step % config.checkpoint_every == 0 || step == config.steps {
            let fd = pair_proxy_frechet(&g, &eval_noise, &eval_real, &featurizer)?;
            info!("pairgan step {step}: proxy Fréchet {fd:.4}");
            checkpoints.push(CheckpointRecord { step, proxy_frechet: fd });
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(dir, &format!("pairgan_step{step:06}"), &g, &d, step, config.seed, config.k)?;
            }
            if fd < best.0 {
                best = (fd, step, g.clone(), d.clone());
            }
        }
        if step == config.steps {
            break;
        }

        let real: Vec<Vec<T>> = sample_pairs(corpus, config.k, config.batch, &mut rng)?
            .into_iter()
            .map(|p| flatten(p.pixels.iter().copied()))
            .collect();
        let fake: Vec<Vec<T>> = (0..config.batch)
            .map(|_| {
                let z = sample_noise::<T, _>(config.generator.d_z, &mut rng);
                let w = g.mapping.forward(&z).0;
                g.synthesize_flat(&w)
            })
            .collect();
        grad_d.fill_zero();
        let lazy = (step % config.r1_interval == 0 && config.gamma > 0.0).then_some(r1_weight);
        let (loss_d, r1) = discriminator_step_grads(&d, &real, &fake, lazy, &mut grad_d);
        let r1 = r1.map(|v| v / T::c(config.r1_interval as f64));
        if !loss_d.is_finite() || !grad_d.all_finite() || r1.is_some_and(|v| !v.is_finite()) {
            return Err(diverged(step, "discriminator", checkpoint_dir, &g, &d, config));
        }
        opt_d.update(&mut d, &grad_d);

        let zs: Vec<Vec<T>> = (0..config.batch).map(|_| sample_noise(config.generator.d_z, &mut rng)).collect();
        grad_g.fill_zero();
        let loss_g = generator_step_grads(&g, &d, &zs, &mut grad_g);
        if !loss_g.is_finite() || !grad_g.all_finite() {
            return Err(diverged(step, "generator", checkpoint_dir, &g, &d, config));
        }
        opt_g.update(&mut g, &grad_g);

        let rec = StepRecord { step, loss_d: loss_d.value(), loss_g: loss_g.value(), r1: r1.map(|v| v.value()) };
        debug!("pairgan {rec:?}");
        history.push(rec);
    }

    let (_, best_step, generator, discriminator) = best;
    Ok(PairGanRun { generator, discriminator, best_step, final_generator: g, history, checkpoints })
}

fn diverged<T: Real>(
    step: usize,
    which: &str,
    dir: Option<&Path>,
    g: &PairGenerator<T>,
    d: &ConvDiscriminator<T>,
    config: &PairTrainConfig,
) -> Error {
    warn!("pairgan diverged at step {step} ({which} loss or gradient non-finite)");
    let saved = match dir {
        Some(dir) => match save_checkpoint(dir, "pairgan_last_finite", g, d, step, config.seed, config.k) {
            Ok(_) => "; last finite state saved as pairgan_last_finite".to_string(),
            Err(e) => format!("; saving last finite state failed: {e}"),
        },
        None => String::new(),
    };
    Error::Numerical(format!("pair GAN diverged at step {step}: non-finite {which} loss or gradient{saved}"))
}
