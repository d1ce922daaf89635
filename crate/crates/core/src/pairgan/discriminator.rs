use ndarray::ArrayD;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{self, lrelu, lrelu_grad};
use crate::nn::{join, Conv2d, Dense, Params};
use crate::scalar::{Dual, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub resolution: usize,
    /// Widths after the 1×1 input layer, then after each downsampling block.
    /// Length must be `log2(resolution / 4) + 1`.
    pub channels: Vec<usize>,
}

impl DiscriminatorConfig {
    /// Standard widths for a given input.
    pub fn for_input(in_channels: usize, resolution: usize) -> Self {
        let blocks = (resolution / 4).trailing_zeros() as usize;
        let channels = (0..=blocks).map(|i| (8usize << i).min(32)).collect();
        Self { in_channels, resolution, channels }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 4 {
            return Err(Error::Config(format!("discriminator resolution {} must be a power of two >= 4", self.resolution)));
        }
        let blocks = (self.resolution / 4).trailing_zeros() as usize;
        if self.channels.len() != blocks + 1 {
            return Err(Error::Config(format!(
                "discriminator needs {} channel entries for resolution {}",
                blocks + 1,
                self.resolution
            )));
        }
        Ok(())
    }
}

/// Image discriminator: 1×1 input conv, [3×3 conv + 2× avg-pool] down to
/// 4×4, then 3×3 conv and two dense layers to a scalar logit.
#[derive(Clone, Debug)]
pub struct ConvDiscriminator<T> {
    pub config: DiscriminatorConfig,
    pub from_rgb: Conv2d<T>,
    pub blocks: Vec<Conv2d<T>>,
    pub final_conv: Conv2d<T>,
    pub fc: Dense<T>,
    pub out: Dense<T>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorCache<T> {
    input: Vec<T>,
    rgb_pre: Vec<T>,
    block_in: Vec<Vec<T>>,
    block_pre: Vec<Vec<T>>,
    final_in: Vec<T>,
    final_pre: Vec<T>,
    fc_in: Vec<T>,
    fc_pre: Vec<T>,
    out_in: Vec<T>,
    pub logit: T,
}

impl<T: Real> ConvDiscriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ch = &config.channels;
        let last = *ch.last().unwrap();
        Ok(Self {
            from_rgb: Conv2d::new(config.in_channels, ch[0], 1, rng),
            blocks: ch.windows(2).map(|p| Conv2d::new(p[0], p[1], 3, rng)).collect(),
            final_conv: Conv2d::new(last, last, 3, rng),
            fc: Dense::new(last * 16, last, 1.0, 0.0, rng),
            out: Dense::new(last, 1, 1.0, 0.0, rng),
            config,
        })
    }

    pub fn cast<U: Real>(&self) -> ConvDiscriminator<U> {
        ConvDiscriminator {
            config: self.config.clone(),
            from_rgb: self.from_rgb.cast(),
            blocks: self.blocks.iter().map(Conv2d::cast).collect(),
            final_conv: self.final_conv.cast(),
            fc: self.fc.cast(),
            out: self.out.cast(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.config.in_channels * self.config.resolution * self.config.resolution
    }

    pub fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::shape(
                "discriminator input",
                format!("[{}, {r}, {r}]", self.config.in_channels, r = self.config.resolution),
                format!("{} values", x.len()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> DiscriminatorCache<T> {
        let mut r = self.config.resolution;
        let rgb_pre = self.from_rgb.forward(x, r, r);
        let mut h: Vec<T> = rgb_pre.iter().map(|&v| lrelu(v)).collect();
        let mut block_in = Vec::new();
        let mut block_pre = Vec::new();
        for b in &self.blocks {
            let pre = b.forward(&h, r, r);
            let act: Vec<T> = pre.iter().map(|&v| lrelu(v)).collect();
            block_in.push(std::mem::replace(&mut h, ops::avgpool2(&act, b.cout(), r, r)));
            block_pre.push(pre);
            r /= 2;
        }
        let final_pre = self.final_conv.forward(&h, 4, 4);
        let fc_in: Vec<T> = final_pre.iter().map(|&v| lrelu(v)).collect();
        let fc_pre = self.fc.forward(&fc_in);
        let out_in: Vec<T> = fc_pre.iter().map(|&v| lrelu(v)).collect();
        let logit = self.out.forward(&out_in)[0];
        DiscriminatorCache {
            input: x.to_vec(),
            rgb_pre,
            block_in,
            block_pre,
            final_in: h,
            final_pre,
            fc_in,
            fc_pre,
            out_in,
            logit,
        }
    }

    pub fn logit(&self, x: &[T]) -> T {
        self.forward(x).logit
    }

    /// Backpropagates `d_logit`; returns dL/dinput.
    pub fn backward(&self, cache: &DiscriminatorCache<T>, d_logit: T, mut grad: Option<&mut ConvDiscriminator<T>>) -> Vec<T> {
        let d = self.out.backward(&cache.out_in, &[d_logit], grad.as_deref_mut().map(|g| &mut g.out));
        let d: Vec<T> = d.iter().zip(&cache.fc_pre).map(|(&g, &p)| g * lrelu_grad(p)).collect();
        let d = self.fc.backward(&cache.fc_in, &d, grad.as_deref_mut().map(|g| &mut g.fc));
        let d: Vec<T> = d.iter().zip(&cache.final_pre).map(|(&g, &p)| g * lrelu_grad(p)).collect();
        let mut d = self.final_conv.backward(&cache.final_in, 4, 4, &d, grad.as_deref_mut().map(|g| &mut g.final_conv));
        let mut r = 4;
        for (i, b) in self.blocks.iter().enumerate().rev() {
            r *= 2;
            let dact = ops::avgpool2_backward(&d, b.cout(), r, r);
            let dpre: Vec<T> = dact.iter().zip(&cache.block_pre[i]).map(|(&g, &p)| g * lrelu_grad(p)).collect();
            d = b.backward(&cache.block_in[i], r, r, &dpre, grad.as_deref_mut().map(|g| &mut g.blocks[i]));
        }
        let dpre: Vec<T> = d.iter().zip(&cache.rgb_pre).map(|(&g, &p)| g * lrelu_grad(p)).collect();
        self.from_rgb.backward(&cache.input, r, r, &dpre, grad.map(|g| &mut g.from_rgb))
    }

    /// Gradient of the logit with respect to the input.
    pub fn input_gradient(&self, x: &[T]) -> Vec<T> {
        let cache = self.forward(x);
        self.backward(&cache, T::one(), None)
    }

    /// R1 penalty `scale/2 · ‖∇ₓD(x)‖²` at `x`; accumulates its parameter
    /// gradient into `grad` and returns the penalty value.
    ///
    /// The parameter gradient is the mixed second derivative
    /// `(∂²D/∂θ∂x)·∇ₓD`, obtained exactly by running the backward pass in
    /// dual numbers with the input tangent set to `∇ₓD(x)`.
    pub fn r1_penalty(&self, x: &[T], scale: T, grad: &mut ConvDiscriminator<T>) -> T {
        let gx = self.input_gradient(x);
        let sq: T = gx.iter().map(|&v| v * v).sum();
        let dual: ConvDiscriminator<Dual<T>> = self.cast();
        let xd: Vec<Dual<T>> = x.iter().zip(&gx).map(|(&v, &g)| Dual::new(v, g)).collect();
        let cache = dual.forward(&xd);
        let mut dgrad = dual.zeros_like();
        dual.backward(&cache, Dual::constant(T::one()), Some(&mut dgrad));
        let mut tangents = Vec::new();
        dgrad.visit("", &mut |_, a| tangents.push(a));
        let mut i = 0;
        grad.visit_mut("", &mut |_, a| {
            a.zip_mut_with(tangents[i], |g, t| *g += scale * t.eps);
            i += 1;
        });
        scale * T::c(0.5) * sq
    }
}

impl<T: Real> Params<T> for ConvDiscriminator<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        self.from_rgb.visit(&join(prefix, "from_rgb"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.final_conv.visit(&join(prefix, "final_conv"), f);
        self.fc.visit(&join(prefix, "fc"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        self.from_rgb.visit_mut(&join(prefix, "from_rgb"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.final_conv.visit_mut(&join(prefix, "final_conv"), f);
        self.fc.visit_mut(&join(prefix, "fc"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
