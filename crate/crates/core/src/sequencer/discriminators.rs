use ndarray::ArrayD;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{lrelu, lrelu_grad};
use crate::nn::{join, Conv3d, Dense, Params};
use crate::pairgan::ConvDiscriminator;
use crate::scalar::{sigmoid, softplus, Real};
use crate::synthvideo::VideoClip;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoDiscKind {
    /// Sees `[x_t, x_0]` at every `t`.
    Traditional,
    /// Sees `[x_t, x_{T−1−t}]` at every `t`.
    Bidirectional,
}

/// Generator objective used against every discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    /// `L_G = −softplus(l_fake)`, i.e. minimizing `log(1 − D(fake))`.
    #[default]
    Saturating,
    /// `L_G = softplus(−l_fake)`.
    NonSaturating,
}

impl GanLoss {
    /// Generator loss and its derivative with respect to the fake logit.
    pub fn generator<T: Real>(self, l_fake: T) -> (T, T) {
        match self {
            GanLoss::Saturating => (-softplus(l_fake), -sigmoid(l_fake)),
            GanLoss::NonSaturating => (softplus(-l_fake), -sigmoid(-l_fake)),
        }
    }
}

/// Channel-stacks each frame with its partner frame: `[6, T, H, W]`.
pub fn video_input<T: Real>(clip: &VideoClip<T>, kind: VideoDiscKind) -> Vec<T> {
    let (t_len, c, h, w) = clip.frames.dim();
    let hw = h * w;
    let mut out = vec![T::zero(); 2 * c * t_len * hw];
    for t in 0..t_len {
        let partner = match kind {
            VideoDiscKind::Traditional => 0,
            VideoDiscKind::Bidirectional => t_len - 1 - t,
        };
        for (slot, src) in [(0, t), (c, partner)] {
            for ch in 0..c {
                let dst = &mut out[((slot + ch) * t_len + t) * hw..][..hw];
                for (d, &v) in dst.iter_mut().zip(clip.frames.slice(ndarray::s![src, ch, .., ..])) {
                    *d = v;
                }
            }
        }
    }
    out
}

/// Adjoint of [`video_input`]: folds `[6, T, H, W]` cotangents back onto
/// `[T, 3, H, W]` frames.
pub fn video_input_backward<T: Real>(d_input: &[T], kind: VideoDiscKind, t_len: usize, h: usize, w: usize) -> Vec<T> {
    let c = 3;
    let hw = h * w;
    let mut out = vec![T::zero(); t_len * c * hw];
    for t in 0..t_len {
        let partner = match kind {
            VideoDiscKind::Traditional => 0,
            VideoDiscKind::Bidirectional => t_len - 1 - t,
        };
        for (slot, dst_t) in [(0, t), (c, partner)] {
            for ch in 0..c {
                let src = &d_input[((slot + ch) * t_len + t) * hw..][..hw];
                for (d, &v) in out[(dst_t * c + ch) * hw..][..hw].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
    }
    out
}

/// Space-time convolutional discriminator over stacked frame pairs.
#[derive(Clone, Debug)]
pub struct VideoDiscriminator<T> {
    pub kind: VideoDiscKind,
    pub blocks: Vec<Conv3d<T>>,
    pub out: Dense<T>,
    pub frames: usize,
    pub resolution: usize,
}

#[derive(Clone, Debug)]
pub struct VideoDiscCache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    dims: Vec<(usize, usize, usize)>,
    flat: Vec<T>,
    pub logit: T,
}

impl<T: Real> VideoDiscriminator<T> {
    pub const TEMPORAL_STRIDES: [usize; 4] = [1, 2, 2, 2];

    pub fn new<R: Rng + ?Sized>(
        kind: VideoDiscKind,
        channels: &[usize],
        frames: usize,
        resolution: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if channels.len() != 4 || channels.contains(&0) {
            return Err(Error::Config("video discriminator needs 4 positive block widths".into()));
        }
        if frames < 2 || resolution < 1 {
            return Err(Error::Config("video discriminator needs at least 2 frames".into()));
        }
        let mut cin = 6;
        let (mut t, mut h) = (frames, resolution);
        let mut blocks = Vec::new();
        for (&cout, &st) in channels.iter().zip(&Self::TEMPORAL_STRIDES) {
            blocks.push(Conv3d::new(cin, cout, st, 2, rng));
            t = (t - 1) / st + 1;
            h = (h - 1) / 2 + 1;
            cin = cout;
        }
        let out = Dense::new(cin * t * h * h, 1, 1.0, 0.0, rng);
        Ok(Self { kind, blocks, out, frames, resolution })
    }

    pub fn cast<U: Real>(&self) -> VideoDiscriminator<U> {
        VideoDiscriminator {
            kind: self.kind,
            blocks: self.blocks.iter().map(Conv3d::cast).collect(),
            out: self.out.cast(),
            frames: self.frames,
            resolution: self.resolution,
        }
    }

    pub fn check_clip(&self, clip: &VideoClip<T>) -> Result<()> {
        let (t, c, h, w) = clip.frames.dim();
        if t != self.frames || c != 3 || h != self.resolution || w != self.resolution {
            return Err(Error::shape(
                "video discriminator",
                format!("[{}, 3, {r}, {r}]", self.frames, r = self.resolution),
                format!("[{t}, {c}, {h}, {w}]"),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, clip: &VideoClip<T>) -> VideoDiscCache<T> {
        let mut x = video_input(clip, self.kind);
        let (mut t, mut h) = (self.frames, self.resolution);
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut pre = Vec::with_capacity(self.blocks.len());
        let mut dims = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let g = b.geom(t, h, h);
            let y = b.forward(&x, &g);
            let (to, ho, _) = g.out_dims();
            dims.push((t, h, h));
            inputs.push(std::mem::replace(&mut x, y.iter().map(|&v| lrelu(v)).collect()));
            pre.push(y);
            t = to;
            h = ho;
        }
        let logit = self.out.forward(&x)[0];
        VideoDiscCache { inputs, pre, dims, flat: x, logit }
    }

    pub fn logit(&self, clip: &VideoClip<T>) -> T {
        self.forward(clip).logit
    }

    /// Backpropagates `d_logit`; returns cotangents of the `[T, 3, H, W]`
    /// frames.
    pub fn backward(&self, cache: &VideoDiscCache<T>, d_logit: T, mut grad: Option<&mut VideoDiscriminator<T>>) -> Vec<T> {
        let mut d = self.out.backward(&cache.flat, &[d_logit], grad.as_deref_mut().map(|g| &mut g.out));
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let dpre: Vec<T> = d.iter().zip(&cache.pre[i]).map(|(&g, &p)| g * lrelu_grad(p)).collect();
            let (t, h, w) = cache.dims[i];
            d = b.backward(&cache.inputs[i], &b.geom(t, h, w), &dpre, grad.as_deref_mut().map(|g| &mut g.blocks[i]));
        }
        video_input_backward(&d, self.kind, self.frames, self.resolution, self.resolution)
    }
}

impl<T: Real> Params<T> for VideoDiscriminator<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

fn video_losses<T: Real>(
    d: &VideoDiscriminator<T>,
    real: &[VideoClip<T>],
    fake: &[VideoClip<T>],
    gen_loss: GanLoss,
) -> Result<(T, T)> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::shape("video discriminator batch", real.len(), fake.len()));
    }
    for c in real.iter().chain(fake) {
        d.check_clip(c)?;
    }
    let n = T::c(real.len() as f64);
    let mut loss_d = T::zero();
    let mut loss_g = T::zero();
    for (r, f) in real.iter().zip(fake) {
        let (lr, lf) = (d.logit(r), d.logit(f));
        loss_d += softplus(-lr) + softplus(lf);
        loss_g += gen_loss.generator(lf).0;
    }
    Ok((loss_d / n, loss_g / n))
}

/// `(L_D, L_G)` of the traditional video discriminator.
pub fn d_v_loss<T: Real>(
    d: &VideoDiscriminator<T>,
    real: &[VideoClip<T>],
    fake: &[VideoClip<T>],
    gen_loss: GanLoss,
) -> Result<(T, T)> {
    if d.kind != VideoDiscKind::Traditional {
        return Err(Error::Config("d_v_loss needs a traditional video discriminator".into()));
    }
    video_losses(d, real, fake, gen_loss)
}

/// `(L_D, L_G)` of the bidirectional video discriminator.
pub fn d_r_loss<T: Real>(
    d: &VideoDiscriminator<T>,
    real: &[VideoClip<T>],
    fake: &[VideoClip<T>],
    gen_loss: GanLoss,
) -> Result<(T, T)> {
    if d.kind != VideoDiscKind::Bidirectional {
        return Err(Error::Config("d_r_loss needs a bidirectional video discriminator".into()));
    }
    video_losses(d, real, fake, gen_loss)
}

/// `(L_D, L_G)` of the image discriminator over generated clips: the first
/// frame of each clip is the real sample, the following frames are fake.
pub fn d_i_loss<T: Real>(d: &ConvDiscriminator<T>, fake: &[VideoClip<T>], gen_loss: GanLoss) -> Result<(T, T)> {
    if fake.is_empty() {
        return Err(Error::Config("image discriminator needs at least one clip".into()));
    }
    let mut loss_d = T::zero();
    let mut loss_g = T::zero();
    for clip in fake {
        if clip.len() < 2 {
            return Err(Error::shape("image discriminator clip", "at least 2 frames", clip.len()));
        }
        let frames: Vec<Vec<T>> = (0..clip.len()).map(|t| clip.frame(t).iter().copied().collect()).collect();
        d.check_input(&frames[0])?;
        let k = T::c((clip.len() - 1) as f64);
        loss_d += softplus(-d.logit(&frames[0]));
        for f in &frames[1..] {
            let l = d.logit(f);
            loss_d += softplus(l) / k;
            loss_g += gen_loss.generator(l).0 / k;
        }
    }
    let n = T::c(fake.len() as f64);
    Ok((loss_d / n, loss_g / n))
}
