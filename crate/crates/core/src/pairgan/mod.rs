//! Image-pair GAN: a StyleGAN2-style generator whose synthesis network emits
//! two frames at once, and a 6-channel pair discriminator.

mod discriminator;
mod generator;
mod train;

pub use discriminator::{ConvDiscriminator, DiscriminatorCache, DiscriminatorConfig};
pub use generator::{
    sample_noise, GeneratorConfig, LatentCode, Mapping, MappingCache, ModConv, ModConvCache, PairGenerator, Synthesis,
    SynthesisCache, PAIR_CHANNELS,
};
pub use train::{
    discriminator_step_grads, generator_step_grads, load_checkpoint, pair_proxy_frechet, save_checkpoint, save_checkpoint_from, train_pairgan,
    CheckpointManifest, CheckpointRecord, PairGanRun, PairTrainConfig, StepRecord,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::synthvideo::ImagePair;

/// Discriminator over 6-channel image pairs.
pub type PairDiscriminator<T> = ConvDiscriminator<T>;

pub fn new_pair_discriminator<T: Real, R: Rng + ?Sized>(resolution: usize, rng: &mut R) -> Result<PairDiscriminator<T>> {
    ConvDiscriminator::new(DiscriminatorConfig::for_input(PAIR_CHANNELS, resolution), rng)
}

/// Scalar realness logit for a pair.
pub fn discriminate_pair<T: Real>(d: &PairDiscriminator<T>, pair: &ImagePair<T>) -> Result<T> {
    let (c, h, w) = pair.pixels.dim();
    if c != PAIR_CHANNELS || d.config.in_channels != PAIR_CHANNELS {
        return Err(Error::shape("discriminate_pair", "6 channels", c));
    }
    if h != d.config.resolution || w != d.config.resolution {
        return Err(Error::shape("discriminate_pair", d.config.resolution, format!("{h}x{w}")));
    }
    let x: Vec<T> = pair.pixels.iter().copied().collect();
    Ok(d.logit(&x))
}
