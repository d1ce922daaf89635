use ndarray::{Array3, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{self, lrelu, lrelu_grad};
use crate::nn::{cast_array, join, randn, slice, slice_mut, Dense, Params};
use crate::scalar::Real;
use crate::synthvideo::{ImagePair, PairSource};

/// Output channels of the synthesis network: two stacked RGB frames.
pub const PAIR_CHANNELS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d_z: usize,
    pub d_w: usize,
    pub mapping_layers: usize,
    pub mapping_lr_mul: f64,
    /// Channel widths: the 4×4 constant first, then one entry per
    /// upsampling block. Output resolution is `4 · 2^(len - 1)`.
    pub channels: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_z: 64,
            d_w: 64,
            mapping_layers: 4,
            mapping_lr_mul: 0.01,
            channels: vec![32, 32, 16, 8],
        }
    }
}

impl GeneratorConfig {
    pub fn resolution(&self) -> usize {
        4 << (self.channels.len() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(Error::Config("generator needs a constant and at least one block".into()));
        }
        if self.d_z == 0 || self.d_w == 0 || self.mapping_layers == 0 {
            return Err(Error::Config("latent sizes and mapping depth must be positive".into()));
        }
        Ok(())
    }
}

/// Intermediate latent code ω.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode<T> {
    pub values: Vec<T>,
}

impl<T: Real> LatentCode<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cast<U: Real>(&self) -> LatentCode<U> {
        LatentCode::new(self.values.iter().map(|v| U::c(v.value())).collect())
    }
}

impl<T> std::ops::Deref for LatentCode<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.values
    }
}

/// Convolution whose input channels are scaled by a per-sample style
/// computed from ω, optionally followed by weight demodulation.
#[derive(Clone, Debug)]
pub struct ModConv<T> {
    pub weight: ArrayD<T>,
    pub bias: ArrayD<T>,
    pub affine: Dense<T>,
    pub k: usize,
    pub demodulate: bool,
}

#[derive(Clone, Debug)]
pub struct ModConvCache<T> {
    style: Vec<T>,
    /// Modulated weights before demodulation (includes the equalized gain).
    modulated: Vec<T>,
    /// Final convolution weights.
    effective: Vec<T>,
    demod: Vec<T>,
}

impl<T: Real> ModConv<T> {
    pub fn new<R: Rng + ?Sized>(d_w: usize, cin: usize, cout: usize, k: usize, demodulate: bool, rng: &mut R) -> Self {
        Self {
            weight: randn(&[cout, cin, k, k], 1.0, rng),
            bias: ArrayD::from_elem(vec![cout], T::zero()),
            affine: Dense::new(d_w, cin, 1.0, 1.0, rng),
            k,
            demodulate,
        }
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[0]
    }

    fn gain(&self) -> T {
        T::c(1.0 / ((self.cin() * self.k * self.k) as f64).sqrt())
    }

    pub fn cast<U: Real>(&self) -> ModConv<U> {
        ModConv {
            weight: cast_array(&self.weight),
            bias: cast_array(&self.bias),
            affine: self.affine.cast(),
            k: self.k,
            demodulate: self.demodulate,
        }
    }

    /// Returns the pre-activation output `[cout, h, w]` (bias included).
    pub fn forward(&self, x: &[T], h: usize, w: usize, latent: &[T]) -> (Vec<T>, ModConvCache<T>) {
        let style = self.affine.forward(latent);
        let (cout, cin, kk) = (self.cout(), self.cin(), self.k * self.k);
        let g = self.gain();
        let raw = slice(&self.weight);
        let mut modulated = vec![T::zero(); raw.len()];
        for o in 0..cout {
            for i in 0..cin {
                let s = style[i] * g;
                let base = (o * cin + i) * kk;
                for j in 0..kk {
                    modulated[base + j] = raw[base + j] * s;
                }
            }
        }
        let mut demod = vec![T::one(); cout];
        let effective = if self.demodulate {
            let mut eff = modulated.clone();
            for o in 0..cout {
                let row = &mut eff[o * cin * kk..(o + 1) * cin * kk];
                let ss: T = row.iter().map(|&v| v * v).sum();
                demod[o] = (ss + T::c(1e-8)).sqrt().recip();
                for v in row.iter_mut() {
                    *v *= demod[o];
                }
            }
            eff
        } else {
            modulated.clone()
        };
        let mut y = ops::conv2d(x, cin, h, w, &effective, cout, self.k);
        let hw = h * w;
        for (o, &b) in slice(&self.bias).iter().enumerate() {
            for v in &mut y[o * hw..(o + 1) * hw] {
                *v += b;
            }
        }
        (y, ModConvCache { style, modulated, effective, demod })
    }

    /// Returns `(dx, dlatent)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[T],
        h: usize,
        w: usize,
        latent: &[T],
        cache: &ModConvCache<T>,
        dy: &[T],
        grad: Option<&mut ModConv<T>>,
    ) -> (Vec<T>, Vec<T>) {
        let (cout, cin, kk) = (self.cout(), self.cin(), self.k * self.k);
        let mut dx = vec![T::zero(); x.len()];
        let mut d_eff = vec![T::zero(); cache.effective.len()];
        ops::conv2d_backward(x, cin, h, w, &cache.effective, cout, self.k, dy, Some(&mut dx), Some(&mut d_eff));
        // Through demodulation: w'' = u·d(u), d = (Σu² + ε)^(-1/2).
        let d_mod = if self.demodulate {
            let mut du = vec![T::zero(); d_eff.len()];
            for o in 0..cout {
                let r = o * cin * kk..(o + 1) * cin * kk;
                let d = cache.demod[o];
                let gu: T = ops::dot(&d_eff[r.clone()], &cache.modulated[r.clone()]);
                let corr = d * d * d * gu;
                for j in r {
                    du[j] = d * d_eff[j] - corr * cache.modulated[j];
                }
            }
            du
        } else {
            d_eff
        };
        let g = self.gain();
        let raw = slice(&self.weight);
        let mut dstyle = vec![T::zero(); cin];
        for o in 0..cout {
            for i in 0..cin {
                let base = (o * cin + i) * kk;
                dstyle[i] += ops::dot(&d_mod[base..base + kk], &raw[base..base + kk]) * g;
            }
        }
        let dlatent = match grad {
            Some(gr) => {
                let gw = slice_mut(&mut gr.weight);
                for o in 0..cout {
                    for i in 0..cin {
                        let s = cache.style[i] * g;
                        let base = (o * cin + i) * kk;
                        for j in 0..kk {
                            gw[base + j] += d_mod[base + j] * s;
                        }
                    }
                }
                let hw = h * w;
                for (o, d) in slice_mut(&mut gr.bias).iter_mut().enumerate() {
                    *d += dy[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
                }
                self.affine.backward(latent, &dstyle, Some(&mut gr.affine))
            }
            None => self.affine.backward(latent, &dstyle, None),
        };
        (dx, dlatent)
    }
}

impl<T: Real> Params<T> for ModConv<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
        self.affine.visit(&join(prefix, "affine"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
        self.affine.visit_mut(&join(prefix, "affine"), f);
    }
}

/// Learned 4×4 constant → upsample + modulated 3×3 conv blocks → modulated
/// 1×1 head to six channels → tanh.
#[derive(Clone, Debug)]
pub struct Synthesis<T> {
    pub constant: ArrayD<T>,
    pub blocks: Vec<ModConv<T>>,
    pub head: ModConv<T>,
}

/// Activations of one synthesis pass, needed for backpropagation.
#[derive(Clone, Debug)]
pub struct SynthesisCache<T> {
    latent: Vec<T>,
    block_inputs: Vec<Vec<T>>,
    block_pre: Vec<Vec<T>>,
    block_caches: Vec<ModConvCache<T>>,
    head_input: Vec<T>,
    head_cache: ModConvCache<T>,
    output: Vec<T>,
}

impl<T> SynthesisCache<T> {
    /// `[6, res, res]` output in channel-major order.
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

impl<T: Real> Synthesis<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Self {
        let ch = &cfg.channels;
        Self {
            constant: randn(&[ch[0], 4, 4], 1.0, rng),
            blocks: ch.windows(2).map(|p| ModConv::new(cfg.d_w, p[0], p[1], 3, true, rng)).collect(),
            head: ModConv::new(cfg.d_w, *ch.last().unwrap(), PAIR_CHANNELS, 1, false, rng),
        }
    }

    pub fn resolution(&self) -> usize {
        4 << self.blocks.len()
    }

    pub fn cast<U: Real>(&self) -> Synthesis<U> {
        Synthesis {
            constant: cast_array(&self.constant),
            blocks: self.blocks.iter().map(ModConv::cast).collect(),
            head: self.head.cast(),
        }
    }

    pub fn forward(&self, latent: &[T]) -> SynthesisCache<T> {
        let mut x: Vec<T> = slice(&self.constant).to_vec();
        let mut res = 4;
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut block_pre = Vec::with_capacity(self.blocks.len());
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let up = ops::upsample2(&x, block.cin(), res, res);
            res *= 2;
            let (pre, cache) = block.forward(&up, res, res, latent);
            x = pre.iter().map(|&v| lrelu(v)).collect();
            block_inputs.push(up);
            block_pre.push(pre);
            block_caches.push(cache);
        }
        let (pre, head_cache) = self.head.forward(&x, res, res, latent);
        let output = pre.iter().map(|v| v.tanh()).collect();
        SynthesisCache {
            latent: latent.to_vec(),
            block_inputs,
            block_pre,
            block_caches,
            head_input: x,
            head_cache,
            output,
        }
    }

    /// Backpropagates `d_output` (`[6, res, res]`); returns dL/dω and
    /// accumulates parameter gradients when `grad` is given.
    pub fn backward(&self, cache: &SynthesisCache<T>, d_output: &[T], mut grad: Option<&mut Synthesis<T>>) -> Vec<T> {
        let res = self.resolution();
        let one = T::one();
        let d_pre: Vec<T> = d_output.iter().zip(&cache.output).map(|(&g, &o)| g * (one - o * o)).collect();
        let (mut dx, mut d_latent) = self.head.backward(
            &cache.head_input,
            res,
            res,
            &cache.latent,
            &cache.head_cache,
            &d_pre,
            grad.as_deref_mut().map(|g| &mut g.head),
        );
        let mut r = res;
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let d_pre: Vec<T> = dx.iter().zip(&cache.block_pre[i]).map(|(&g, &p)| g * lrelu_grad(p)).collect();
            let (d_up, d_lat) = block.backward(
                &cache.block_inputs[i],
                r,
                r,
                &cache.latent,
                &cache.block_caches[i],
                &d_pre,
                grad.as_deref_mut().map(|g| &mut g.blocks[i]),
            );
            for (a, b) in d_latent.iter_mut().zip(d_lat) {
                *a += b;
            }
            r /= 2;
            dx = ops::upsample2_backward(&d_up, block.cin(), r, r);
        }
        if let Some(g) = grad {
            for (a, b) in slice_mut(&mut g.constant).iter_mut().zip(dx) {
                *a += b;
            }
        }
        d_latent
    }
}

impl<T: Real> Params<T> for Synthesis<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        f(join(prefix, "constant"), &self.constant);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        f(join(prefix, "constant"), &mut self.constant);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Fully connected z → ω network; z is normalized to unit second moment.
#[derive(Clone, Debug)]
pub struct Mapping<T> {
    pub layers: Vec<Dense<T>>,
}

#[derive(Clone, Debug)]
pub struct MappingCache<T> {
    z: Vec<T>,
    inv_norm: T,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Real> Mapping<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Self {
        let layers = (0..cfg.mapping_layers)
            .map(|i| {
                let fan_in = if i == 0 { cfg.d_z } else { cfg.d_w };
                Dense::new(fan_in, cfg.d_w, cfg.mapping_lr_mul, 0.0, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn cast<U: Real>(&self) -> Mapping<U> {
        Mapping { layers: self.layers.iter().map(Dense::cast).collect() }
    }

    pub fn forward(&self, z: &[T]) -> (Vec<T>, MappingCache<T>) {
        let ms: T = z.iter().map(|&v| v * v).sum::<T>() / T::c(z.len() as f64);
        let inv_norm = (ms + T::c(1e-8)).sqrt().recip();
        let mut x: Vec<T> = z.iter().map(|&v| v * inv_norm).collect();
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for layer in &self.layers {
            let p = layer.forward(&x);
            inputs.push(std::mem::replace(&mut x, p.iter().map(|&v| lrelu(v)).collect()));
            pre.push(p);
        }
        (x, MappingCache { z: z.to_vec(), inv_norm, inputs, pre })
    }

    /// Accumulates parameter gradients; returns dL/dz.
    pub fn backward(&self, cache: &MappingCache<T>, d_out: &[T], mut grad: Option<&mut Mapping<T>>) -> Vec<T> {
        let mut d = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let dp: Vec<T> = d.iter().zip(&cache.pre[i]).map(|(&g, &p)| g * lrelu_grad(p)).collect();
            d = layer.backward(&cache.inputs[i], &dp, grad.as_deref_mut().map(|g| &mut g.layers[i]));
        }
        // x = z·r, r = (mean z² + ε)^(-1/2): dz = r·dx − r³/n · z (z·dx)
        let n = T::c(cache.z.len() as f64);
        let r = cache.inv_norm;
        let zd: T = cache.z.iter().zip(&d).map(|(&a, &b)| a * b).sum();
        cache.z.iter().zip(&d).map(|(&z, &g)| r * g - r * r * r / n * z * zd).collect()
    }
}

impl<T: Real> Params<T> for Mapping<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
    }
}

/// Mapping + synthesis networks producing image pairs.
#[derive(Clone, Debug)]
pub struct PairGenerator<T> {
    pub config: GeneratorConfig,
    pub mapping: Mapping<T>,
    pub synthesis: Synthesis<T>,
}

impl<T: Real> PairGenerator<T> {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mapping = Mapping::new(&config, rng);
        let synthesis = Synthesis::new(&config, rng);
        Ok(Self { config, mapping, synthesis })
    }

    pub fn cast<U: Real>(&self) -> PairGenerator<U> {
        PairGenerator {
            config: self.config.clone(),
            mapping: self.mapping.cast(),
            synthesis: self.synthesis.cast(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.synthesis.resolution()
    }

    /// ω = G_M(z).
    pub fn map_latent(&self, z: &[T]) -> Result<LatentCode<T>> {
        if z.len() != self.config.d_z {
            return Err(Error::shape("map_latent", self.config.d_z, z.len()));
        }
        Ok(LatentCode::new(self.mapping.forward(z).0))
    }

    pub fn check_latent(&self, latent: &[T]) -> Result<()> {
        if latent.len() != self.config.d_w {
            return Err(Error::shape("synthesize_pair", self.config.d_w, latent.len()));
        }
        Ok(())
    }

    /// `[x_former, x_latter] = G_S(ω)` as one 6-channel raster.
    pub fn synthesize_pair(&self, latent: &[T]) -> Result<ImagePair<T>> {
        self.check_latent(latent)?;
        let cache = self.synthesis.forward(latent);
        let r = self.resolution();
        let pixels = Array3::from_shape_vec((PAIR_CHANNELS, r, r), cache.output).expect("output size");
        Ok(ImagePair { pixels, source: PairSource::Generated })
    }

    /// Flattened synthesis output (`2·d_x` values, former frame first).
    pub fn synthesize_flat(&self, latent: &[T]) -> Vec<T> {
        self.synthesis.forward(latent).output
    }

    /// Samples z ~ N(0, I) and maps it.
    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentCode<T> {
        let z = sample_noise::<T, R>(self.config.d_z, rng);
        self.map_latent(&z).expect("noise has d_z entries")
    }
}

pub fn sample_noise<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<T> {
    use rand_distr::{Distribution, StandardNormal};
    (0..d)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::c(v)
        })
        .collect()
}

impl<T: Real> Params<T> for PairGenerator<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        self.mapping.visit(&join(prefix, "mapping"), f);
        self.synthesis.visit(&join(prefix, "synthesis"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        self.mapping.visit_mut(&join(prefix, "mapping"), f);
        self.synthesis.visit_mut(&join(prefix, "synthesis"), f);
    }
}
