use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discriminators::{GanLoss, VideoDiscKind, VideoDiscriminator};
use super::{render_backward, render_video, roll_latents, rollout_backward, CodeBook, FirstFrame, Sequencer, SequencerConfig};
use crate::archive::{read_artifact, verify_hash, write_artifact, NamedArrays};
use crate::error::{Error, Result};
use crate::motionspace::MotionBasis;
use crate::nn::{Adam, AdamConfig, Params};
use crate::pairgan::{sample_noise, ConvDiscriminator, DiscriminatorConfig, PairGenerator};
use crate::scalar::{sigmoid, softplus, Real};
use crate::synthvideo::{sample_clips, subsample_clip, VideoClip};

pub const SEQUENCER_FORMAT: u32 = 1;

/// Which discriminators train the sequencer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorSet {
    Tvd,
    Bvd,
    #[default]
    TvdBvd,
    TvdBvdId,
}

impl DiscriminatorSet {
    pub fn video_kinds(self) -> Vec<VideoDiscKind> {
        match self {
            DiscriminatorSet::Tvd => vec![VideoDiscKind::Traditional],
            DiscriminatorSet::Bvd => vec![VideoDiscKind::Bidirectional],
            DiscriminatorSet::TvdBvd | DiscriminatorSet::TvdBvdId => {
                vec![VideoDiscKind::Traditional, VideoDiscKind::Bidirectional]
            }
        }
    }

    pub fn has_image(self) -> bool {
        self == DiscriminatorSet::TvdBvdId
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequencerTrainConfig {
    pub n_frames: usize,
    pub batch: usize,
    pub epochs: usize,
    /// Steps per epoch; `None` means one pass over the corpus,
    /// `ceil(n_videos / batch)`.
    pub steps_per_epoch: Option<usize>,
    pub lr_g: f64,
    pub lr_d: f64,
    pub discriminators: DiscriminatorSet,
    pub first: FirstFrame,
    pub gen_loss: GanLoss,
    pub seed: u64,
    /// Real clips keep every `stride`-th frame.
    pub stride: usize,
    pub disc_channels: Vec<usize>,
    pub max_edit_norm: Option<f64>,
}

impl Default for SequencerTrainConfig {
    fn default() -> Self {
        Self {
            n_frames: 16,
            batch: 8,
            epochs: 20,
            steps_per_epoch: None,
            lr_g: 1e-4,
            lr_d: 1e-4,
            discriminators: DiscriminatorSet::default(),
            first: FirstFrame::default(),
            gen_loss: GanLoss::default(),
            seed: 0,
            stride: 1,
            disc_channels: vec![16, 32, 32, 32],
            max_edit_norm: None,
        }
    }
}

impl SequencerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 || self.batch == 0 || self.stride == 0 {
            return Err(Error::Config("sequencer training needs n_frames >= 2, batch >= 1, stride >= 1".into()));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        Ok(())
    }

    /// Source frames spanned by one training clip.
    pub fn span(&self) -> usize {
        (self.n_frames - 1) * self.stride + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequencerStepRecord {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
}

#[derive(Clone, Debug)]
pub struct SequencerRun<T> {
    pub sequencer: Sequencer<T>,
    pub history: Vec<SequencerStepRecord>,
    pub steps: usize,
}

struct Fake<T> {
    clip: VideoClip<T>,
    caches: Vec<crate::pairgan::SynthesisCache<T>>,
    rollout: super::Rollout<T>,
}

/// Adversarially trains a sequencer against the frozen generator `g` and
/// motion codes `basis`. `basis_generator_hash` is the generator hash the
/// basis was extracted from and must equal `generator_hash`.
pub fn train_sequencer<T: Real>(
    g: &PairGenerator<T>,
    generator_hash: &str,
    basis: &MotionBasis,
    basis_generator_hash: &str,
    corpus: &[VideoClip],
    config: &SequencerTrainConfig,
) -> Result<SequencerRun<T>> {
    config.validate()?;
    verify_hash("generator behind the motion basis", generator_hash, basis_generator_hash)?;
    let d_w = g.config.d_w;
    if basis.dim() != d_w {
        return Err(Error::shape("motion basis", d_w, basis.dim()));
    }
    let res = g.resolution();
    if corpus.is_empty() {
        return Err(Error::Sampling("empty corpus".into()));
    }
    if corpus[0].height() != res || corpus[0].width() != res {
        return Err(Error::Config(format!("corpus is {}x{} but the generator emits {res}x{res}", corpus[0].height(), corpus[0].width())));
    }
    let book = CodeBook::<T>::from_basis(basis);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seq_config = SequencerConfig {
        d_w,
        m: basis.m(),
        n_frames: config.n_frames,
        max_edit_norm: config.max_edit_norm,
        stride: config.stride,
    };
    let mut seq = Sequencer::<T>::new(seq_config, &mut rng)?;
    let mut vds = config
        .discriminators
        .video_kinds()
        .into_iter()
        .map(|k| VideoDiscriminator::<T>::new(k, &config.disc_channels, config.n_frames, res, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut id = if config.discriminators.has_image() {
        Some(ConvDiscriminator::<T>::new(DiscriminatorConfig::for_input(3, res), &mut rng)?)
    } else {
        None
    };
    let mut opt_g = Adam::new(AdamConfig::gan(config.lr_g), &seq);
    let mut opt_vd: Vec<Adam<T>> = vds.iter().map(|d| Adam::new(AdamConfig::gan(config.lr_d), d)).collect();
    let mut opt_id = id.as_ref().map(|d| Adam::new(AdamConfig::gan(config.lr_d), d));
    let mut grad_seq = seq.zeros_like();
    let mut grad_vd: Vec<VideoDiscriminator<T>> = vds.iter().map(|d| d.zeros_like()).collect();
    let mut grad_id = id.as_ref().map(|d| d.zeros_like());

    let steps_per_epoch = config.steps_per_epoch.unwrap_or(corpus.len().div_ceil(config.batch));
    let total = steps_per_epoch * config.epochs;
    let n = T::c(config.batch as f64);
    let frame_len = 3 * res * res;
    let mut history = Vec::with_capacity(total);

    for step in 0..total {
        let real: Vec<VideoClip<T>> = sample_clips(corpus, config.span(), config.batch, &mut rng)?
            .iter()
            .map(|c| subsample_clip(c, config.stride).map(|c| c.cast()))
            .collect::<Result<_>>()?;
        let fakes: Vec<Fake<T>> = (0..config.batch)
            .map(|_| {
                let z = sample_noise::<T, _>(g.config.d_z, &mut rng);
                let w0 = g.mapping.forward(&z).0;
                let rollout = roll_latents(&seq, &book, &w0, config.n_frames - 1, config.first)?;
                let (clip, caches) = render_video(g, &rollout.latents, config.first)?;
                Ok(Fake { clip, caches, rollout })
            })
            .collect::<Result<_>>()?;

        // Discriminator update.
        let mut loss_d = T::zero();
        for (d, grad) in vds.iter().zip(grad_vd.iter_mut()) {
            grad.fill_zero();
            for (r, f) in real.iter().zip(&fakes) {
                let cr = d.forward(r);
                let cf = d.forward(&f.clip);
                loss_d += (softplus(-cr.logit) + softplus(cf.logit)) / n;
                d.backward(&cr, -sigmoid(-cr.logit) / n, Some(grad));
                d.backward(&cf, sigmoid(cf.logit) / n, Some(grad));
            }
        }
        if let (Some(d), Some(grad)) = (&id, &mut grad_id) {
            grad.fill_zero();
            for f in &fakes {
                let k = T::c((config.n_frames - 1) as f64);
                for t in 0..config.n_frames {
                    let x = &f.clip.frames.as_slice().expect("contiguous")[t * frame_len..(t + 1) * frame_len];
                    let c = d.forward(x);
                    if t == 0 {
                        loss_d += softplus(-c.logit) / n;
                        d.backward(&c, -sigmoid(-c.logit) / n, Some(grad));
                    } else {
                        loss_d += softplus(c.logit) / (n * k);
                        d.backward(&c, sigmoid(c.logit) / (n * k), Some(grad));
                    }
                }
            }
        }
        let d_ok = grad_vd.iter().all(|g| g.all_finite()) && grad_id.as_ref().is_none_or(|g| g.all_finite());
        if !loss_d.is_finite() || !d_ok {
            return Err(Error::Numerical(format!("sequencer discriminators diverged at step {step}")));
        }
        for ((d, grad), opt) in vds.iter_mut().zip(&grad_vd).zip(&mut opt_vd) {
            opt.update(d, grad);
        }
        if let (Some(d), Some(grad), Some(opt)) = (&mut id, &grad_id, &mut opt_id) {
            opt.update(d, grad);
        }

        // Sequencer update through the frozen synthesis network.
        grad_seq.fill_zero();
        let mut loss_g = T::zero();
        for f in &fakes {
            let mut d_frames = vec![T::zero(); config.n_frames * frame_len];
            for d in &vds {
                let c = d.forward(&f.clip);
                let (l, dl) = config.gen_loss.generator(c.logit);
                loss_g += l / n;
                for (a, b) in d_frames.iter_mut().zip(d.backward(&c, dl / n, None)) {
                    *a += b;
                }
            }
            if let Some(d) = &id {
                let k = T::c((config.n_frames - 1) as f64);
                for t in 1..config.n_frames {
                    let x = &f.clip.frames.as_slice().expect("contiguous")[t * frame_len..(t + 1) * frame_len];
                    let c = d.forward(x);
                    let (l, dl) = config.gen_loss.generator(c.logit);
                    loss_g += l / (n * k);
                    let dx = d.backward(&c, dl / (n * k), None);
                    for (a, b) in d_frames[t * frame_len..(t + 1) * frame_len].iter_mut().zip(dx) {
                        *a += b;
                    }
                }
            }
            let d_latents = render_backward(g, &f.caches, config.first, &d_frames);
            rollout_backward(&seq, &book, &f.rollout, &d_latents, config.first, &mut grad_seq);
        }
        if !loss_g.is_finite() || !grad_seq.all_finite() {
            return Err(Error::Numerical(format!("sequencer diverged at step {step}")));
        }
        opt_g.update(&mut seq, &grad_seq);
        let record = SequencerStepRecord { step, loss_d: loss_d.value(), loss_g: loss_g.value() };
        if step % steps_per_epoch.max(1) == 0 {
            info!("sequencer step {step}/{total}: L_D {:.4} L_G {:.4}", record.loss_d, record.loss_g);
        }
        history.push(record);
    }
    Ok(SequencerRun { sequencer: seq, history, steps: total })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequencerManifest {
    pub format_version: u32,
    pub config: SequencerConfig,
    pub train: SequencerTrainConfig,
    pub generator_hash: String,
    pub basis_hash: String,
}

pub fn save_sequencer<T: Real>(dir: &Path, name: &str, seq: &Sequencer<T>, manifest: &SequencerManifest) -> Result<String> {
    if manifest.config != seq.config {
        return Err(Error::Config("manifest config differs from the sequencer's".into()));
    }
    let mut arrays = NamedArrays::default();
    arrays.extend_params("sequencer", seq);
    write_artifact(dir, name, manifest, &arrays)
}

pub fn load_sequencer<T: Real>(dir: &Path, name: &str) -> Result<(Sequencer<T>, SequencerManifest, String)> {
    let art = read_artifact::<SequencerManifest>(dir, name)?;
    if art.manifest.format_version != SEQUENCER_FORMAT {
        return Err(Error::Format(format!("unsupported sequencer format {}", art.manifest.format_version)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seq = Sequencer::<T>::new(art.manifest.config.clone(), &mut rng)?;
    art.arrays.load_params("sequencer", &mut seq)?;
    if art.arrays.entries.len() != { let mut k = 0; seq.visit("", &mut |_, _| k += 1); k } {
        return Err(Error::Format("sequencer archive has unexpected arrays".into()));
    }
    Ok((seq, art.manifest, art.hash))
}
