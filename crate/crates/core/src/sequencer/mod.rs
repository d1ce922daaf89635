//! Latent code sequencer: an LSTM encoder/decoder emitting per-step motion
//! coefficients, the alternating backward/forward latent recursion, frame
//! selection from generated pairs, and the video discriminators used to
//! train it.

mod discriminators;
mod train;

pub use discriminators::{
    d_i_loss, d_r_loss, d_v_loss, video_input, video_input_backward, GanLoss, VideoDiscCache, VideoDiscKind,
    VideoDiscriminator,
};
pub use train::{
    load_sequencer, save_sequencer, train_sequencer, DiscriminatorSet, SequencerManifest, SequencerRun,
    SequencerStepRecord, SequencerTrainConfig, SEQUENCER_FORMAT,
};

use ndarray::{Array4, ArrayD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motionspace::MotionBasis;
use crate::nn::{join, randn, Dense, LstmCache, LstmCell, Params};
use crate::pairgan::{PairGenerator, SynthesisCache};
use crate::scalar::Real;
use crate::synthvideo::VideoClip;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequencerConfig {
    pub d_w: usize,
    pub m: usize,
    /// Frames per generated clip; a rollout has `n_frames − 1` steps.
    pub n_frames: usize,
    /// Caps `‖ω_t − ω_0‖` when set.
    pub max_edit_norm: Option<f64>,
    /// Temporal stride of the clips the sequencer was trained on.
    pub stride: usize,
}

impl SequencerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_w == 0 || self.m == 0 || self.n_frames < 2 || self.stride == 0 {
            return Err(Error::Config("sequencer needs d_w, m, stride >= 1 and n_frames >= 2".into()));
        }
        if self.max_edit_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("max_edit_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Which frame of the first pair opens the video. Also fixes which code
/// set drives odd and even steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstFrame {
    /// `x̃01, x̃10, x̃21, …`; odd steps use `Ω_b`, even steps `Ω_f`.
    #[default]
    LatterFirst,
    /// `x̃00, x̃11, x̃20, …`; odd steps use `Ω_f`, even steps `Ω_b`.
    FormerFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeSet {
    Backward,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Half {
    Former,
    Latter,
}

impl FirstFrame {
    /// Code set added at step `t ≥ 1`.
    pub fn code_set(self, t: usize) -> CodeSet {
        match (self, t % 2 == 1) {
            (FirstFrame::LatterFirst, true) | (FirstFrame::FormerFirst, false) => CodeSet::Backward,
            _ => CodeSet::Forward,
        }
    }

    /// Half of pair `i` that becomes frame `i`.
    pub fn half(self, i: usize) -> Half {
        match (self, i.is_multiple_of(2)) {
            (FirstFrame::LatterFirst, true) | (FirstFrame::FormerFirst, false) => Half::Latter,
            _ => Half::Former,
        }
    }
}

/// Motion codes as rows in the working scalar type.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeBook<T> {
    pub backward: Vec<Vec<T>>,
    pub forward: Vec<Vec<T>>,
}

impl<T: Real> CodeBook<T> {
    pub fn from_basis(basis: &MotionBasis) -> Self {
        let rows = |m: &nalgebra::DMatrix<f64>| {
            (0..m.nrows()).map(|r| m.row(r).iter().map(|&v| T::c(v)).collect()).collect()
        };
        Self { backward: rows(&basis.omega_b), forward: rows(&basis.omega_f) }
    }

    pub fn m(&self) -> usize {
        self.backward.len()
    }

    pub fn rows(&self, set: CodeSet) -> &[Vec<T>] {
        match set {
            CodeSet::Backward => &self.backward,
            CodeSet::Forward => &self.forward,
        }
    }
}

/// Encoder LSTM over `ω_0`, decoder LSTM fed a learned constant, and a
/// zero-initialized affine map from decoder state to coefficients.
#[derive(Clone, Debug)]
pub struct Sequencer<T> {
    pub config: SequencerConfig,
    pub encoder: LstmCell<T>,
    pub decoder: LstmCell<T>,
    pub decoder_input: ArrayD<T>,
    pub out: Dense<T>,
}

impl<T: Real> Sequencer<T> {
    pub fn new<R: Rng + ?Sized>(config: SequencerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_w;
        Ok(Self {
            encoder: LstmCell::new(d, d, rng),
            decoder: LstmCell::new(d, d, rng),
            decoder_input: randn(&[d], 1.0, rng),
            out: Dense::zeros(d, config.m),
            config,
        })
    }

    pub fn cast<U: Real>(&self) -> Sequencer<U> {
        Sequencer {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            decoder_input: crate::nn::cast_array(&self.decoder_input),
            out: self.out.cast(),
        }
    }

    /// `(h_0, c_0) = LSTM_enc(ω_0)` from a zero state.
    pub fn encode_content(&self, w0: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (h, c, _) = self.encode_cached(w0)?;
        Ok((h, c))
    }

    fn encode_cached(&self, w0: &[T]) -> Result<(Vec<T>, Vec<T>, LstmCache<T>)> {
        if w0.len() != self.config.d_w {
            return Err(Error::shape("encode_content", self.config.d_w, w0.len()));
        }
        let zero = vec![T::zero(); self.config.d_w];
        Ok(self.encoder.step(w0, &zero, &zero))
    }

    /// `M_t, h_t, c_t = LSTM_dec(h_{t−1}, c_{t−1})`.
    pub fn decode_step(&self, h: &[T], c: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        let (m, h, c, _) = self.decode_cached(h, c)?;
        Ok((m, h, c))
    }

    fn decode_cached(&self, h: &[T], c: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>, LstmCache<T>)> {
        let d = self.config.d_w;
        if h.len() != d || c.len() != d {
            return Err(Error::shape("decode_step", d, format!("{} / {}", h.len(), c.len())));
        }
        if h.iter().chain(c).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite decoder state".into()));
        }
        let x = self.decoder_input.as_slice().expect("contiguous");
        let (h2, c2, cache) = self.decoder.step(x, h, c);
        let m = self.out.forward(&h2);
        Ok((m, h2, c2, cache))
    }
}

impl<T: Real> Params<T> for Sequencer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
        f(join(prefix, "decoder_input"), &self.decoder_input);
        self.out.visit(&join(prefix, "out"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        f(join(prefix, "decoder_input"), &mut self.decoder_input);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// One code-row access made during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodeTouch {
    pub step: usize,
    pub set: CodeSet,
    pub row: usize,
}

/// A rollout with everything needed to backpropagate through it.
#[derive(Clone, Debug)]
pub struct Rollout<T> {
    /// `ω_0 … ω_n`.
    pub latents: Vec<Vec<T>>,
    /// `M_1 … M_n`.
    pub coefficients: Vec<Vec<T>>,
    pub touches: Vec<CodeTouch>,
    encoder_cache: LstmCache<T>,
    decoder_caches: Vec<LstmCache<T>>,
    hidden: Vec<Vec<T>>,
    /// `(offset before capping, scale)` when the cap engaged at a step.
    capped: Vec<Option<(Vec<T>, T)>>,
}

/// Runs `n` steps of the alternating recursion from `ω_0`.
pub fn roll_latents<T: Real>(
    seq: &Sequencer<T>,
    book: &CodeBook<T>,
    w0: &[T],
    n: usize,
    first: FirstFrame,
) -> Result<Rollout<T>> {
    if book.m() != seq.config.m {
        return Err(Error::shape("roll_latents", format!("{} motion codes", seq.config.m), book.m()));
    }
    let (mut h, mut c, encoder_cache) = seq.encode_cached(w0)?;
    let mut latents = vec![w0.to_vec()];
    let mut coefficients = Vec::with_capacity(n);
    let mut touches = Vec::new();
    let mut decoder_caches = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    let mut capped = Vec::with_capacity(n);
    for t in 1..=n {
        let (m, h2, c2, cache) = seq.decode_cached(&h, &c)?;
        let set = first.code_set(t);
        let mut next = latents[t - 1].clone();
        for (row, (&coef, code)) in m.iter().zip(book.rows(set)).enumerate() {
            touches.push(CodeTouch { step: t, set, row });
            for (w, &v) in next.iter_mut().zip(code) {
                *w += coef * v;
            }
        }
        let mut cap_info = None;
        if let Some(cap) = seq.config.max_edit_norm {
            let offset: Vec<T> = next.iter().zip(w0).map(|(&a, &b)| a - b).collect();
            let norm = offset.iter().map(|&v| v * v).sum::<T>().sqrt();
            let cap = T::c(cap);
            if norm > cap {
                let scale = cap / norm;
                next = w0.iter().zip(&offset).map(|(&b, &o)| b + o * scale).collect();
                cap_info = Some((offset, scale));
            }
        }
        capped.push(cap_info);
        latents.push(next);
        coefficients.push(m);
        decoder_caches.push(cache);
        hidden.push(h2.clone());
        h = h2;
        c = c2;
    }
    Ok(Rollout { latents, coefficients, touches, encoder_cache, decoder_caches, hidden, capped })
}

/// Backpropagates latent cotangents `d_latents[t]` (for `ω_0 … ω_n`) into
/// the sequencer parameters.
pub fn rollout_backward<T: Real>(
    seq: &Sequencer<T>,
    book: &CodeBook<T>,
    rollout: &Rollout<T>,
    d_latents: &[Vec<T>],
    first: FirstFrame,
    grad: &mut Sequencer<T>,
) {
    let n = rollout.coefficients.len();
    let d = seq.config.d_w;
    let mut dw = vec![T::zero(); d];
    let mut dh_next = vec![T::zero(); d];
    let mut dc_next = vec![T::zero(); d];
    for t in (1..=n).rev() {
        for (a, &b) in dw.iter_mut().zip(&d_latents[t]) {
            *a += b;
        }
        // dw is now dL/dω_t; map it through the cap to dL/du_t.
        let du = match &rollout.capped[t - 1] {
            None => dw.clone(),
            Some((offset, scale)) => {
                let norm2 = offset.iter().map(|&v| v * v).sum::<T>();
                let proj = offset.iter().zip(&dw).map(|(&o, &g)| o * g).sum::<T>() / norm2;
                offset.iter().zip(&dw).map(|(&o, &g)| (g - o * proj) * *scale).collect()
            }
        };
        let set = first.code_set(t);
        let dm: Vec<T> = book.rows(set).iter().map(|code| code.iter().zip(&du).map(|(&v, &g)| v * g).sum()).collect();
        let mut dh = seq.out.backward(&rollout.hidden[t - 1], &dm, Some(&mut grad.out));
        for (a, &b) in dh.iter_mut().zip(&dh_next) {
            *a += b;
        }
        let (dx, dh_prev, dc_prev) = seq.decoder.backward(&rollout.decoder_caches[t - 1], &dh, &dc_next, Some(&mut grad.decoder));
        for (a, &b) in grad.decoder_input.iter_mut().zip(&dx) {
            *a += b;
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
        // ω_{t−1} receives du directly (and ω_0 also the capped remainder,
        // which has no trainable upstream).
        dw = du;
    }
    seq.encoder.backward(&rollout.encoder_cache, &dh_next, &dc_next, Some(&mut grad.encoder));
}

/// Frames selected from the pairs of `latents`, with synthesis caches.
pub fn render_video<T: Real>(
    g: &PairGenerator<T>,
    latents: &[Vec<T>],
    first: FirstFrame,
) -> Result<(VideoClip<T>, Vec<SynthesisCache<T>>)> {
    let r = g.resolution();
    let d_x = 3 * r * r;
    let mut frames = Array4::zeros((latents.len(), 3, r, r));
    let mut caches = Vec::with_capacity(latents.len());
    for (i, w) in latents.iter().enumerate() {
        g.check_latent(w)?;
        let cache = g.synthesis.forward(w);
        let off = match first.half(i) {
            Half::Former => 0,
            Half::Latter => d_x,
        };
        let dst = frames.index_axis_mut(ndarray::Axis(0), i);
        for (o, &v) in dst.into_iter().zip(&cache.output()[off..off + d_x]) {
            *o = v;
        }
        caches.push(cache);
    }
    Ok((VideoClip::new(frames, None, 0), caches))
}

/// Maps frame cotangents (`[T, 3, r, r]` flattened) back to latents.
pub fn render_backward<T: Real>(
    g: &PairGenerator<T>,
    caches: &[SynthesisCache<T>],
    first: FirstFrame,
    d_frames: &[T],
) -> Vec<Vec<T>> {
    let r = g.resolution();
    let d_x = 3 * r * r;
    caches
        .iter()
        .enumerate()
        .map(|(i, cache)| {
            let mut d_out = vec![T::zero(); 2 * d_x];
            let off = match first.half(i) {
                Half::Former => 0,
                Half::Latter => d_x,
            };
            d_out[off..off + d_x].copy_from_slice(&d_frames[i * d_x..(i + 1) * d_x]);
            g.synthesis.backward(cache, &d_out, None)
        })
        .collect()
}

/// `[x̃_{0·}, x̃_{1·}, …]` per the frame-selection rule of `first`.
pub fn assemble_video<T: Real>(g: &PairGenerator<T>, latents: &[Vec<T>], first: FirstFrame) -> Result<VideoClip<T>> {
    Ok(render_video(g, latents, first)?.0)
}

/// One `n_frames`-long video from `ω_0`.
pub fn generate_video<T: Real>(
    g: &PairGenerator<T>,
    seq: &Sequencer<T>,
    book: &CodeBook<T>,
    w0: &[T],
    first: FirstFrame,
) -> Result<VideoClip<T>> {
    let roll = roll_latents(seq, book, w0, seq.config.n_frames - 1, first)?;
    assemble_video(g, &roll.latents, first)
}

/// Inserts `factor − 1` evenly spaced codes between neighbours.
pub fn interpolate_latents<T: Real>(latents: &[Vec<T>], factor: usize) -> Result<Vec<Vec<T>>> {
    if factor < 1 {
        return Err(Error::Config("interpolation factor must be at least 1".into()));
    }
    if latents.len() < 2 {
        return Err(Error::Config("interpolation needs at least 2 latents".into()));
    }
    let mut out = Vec::with_capacity((latents.len() - 1) * factor + 1);
    for pair in latents.windows(2) {
        out.push(pair[0].clone());
        for j in 1..factor {
            let a = T::c(j as f64 / factor as f64);
            out.push(pair[0].iter().zip(&pair[1]).map(|(&x, &y)| x + (y - x) * a).collect());
        }
    }
    out.push(latents.last().unwrap().clone());
    Ok(out)
}

/// How long videos are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LongVideoMode {
    /// Stretch a rollout of the given sequencer by latent interpolation.
    Interpolate { factor: usize },
    /// Use a sequencer trained on subsampled clips and interpolate back to
    /// the nominal frame rate by its training stride.
    SubsampledModel,
}

/// A `total_frames`-long video. Frame `j` takes the half that the nearest
/// rollout step would select.
pub fn generate_long_video<T: Real>(
    g: &PairGenerator<T>,
    seq: &Sequencer<T>,
    book: &CodeBook<T>,
    w0: &[T],
    total_frames: usize,
    mode: LongVideoMode,
    first: FirstFrame,
) -> Result<VideoClip<T>> {
    let n_frames = seq.config.n_frames;
    if total_frames < n_frames {
        return Err(Error::Config(format!("total_frames {total_frames} is below the sequencer's {n_frames}")));
    }
    let factor = match mode {
        LongVideoMode::Interpolate { factor } => factor,
        LongVideoMode::SubsampledModel => {
            if seq.config.stride < 2 {
                return Err(Error::Config("subsampled_model mode needs a sequencer trained on subsampled clips".into()));
            }
            seq.config.stride
        }
    };
    if factor < 1 {
        return Err(Error::Config("interpolation factor must be at least 1".into()));
    }
    if total_frames == n_frames && matches!(mode, LongVideoMode::Interpolate { .. }) {
        return generate_video(g, seq, book, w0, first);
    }
    let steps = (total_frames - 1).div_ceil(factor).max(1);
    let roll = roll_latents(seq, book, w0, steps, first)?;
    let codes = interpolate_latents(&roll.latents, factor)?;
    let r = g.resolution();
    let d_x = 3 * r * r;
    let mut frames = Array4::zeros((total_frames, 3, r, r));
    for (j, w) in codes.iter().take(total_frames).enumerate() {
        let step = (j + factor / 2) / factor;
        let out = g.synthesize_flat(w);
        let off = match first.half(step) {
            Half::Former => 0,
            Half::Latter => d_x,
        };
        for (o, &v) in frames.index_axis_mut(ndarray::Axis(0), j).into_iter().zip(&out[off..off + d_x]) {
            *o = v;
        }
    }
    Ok(VideoClip::new(frames, None, 0))
}
