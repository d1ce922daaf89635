//! Evaluation metrics: proxy Fréchet distance on random-projection features,
//! a content oracle for the synthetic corpus, motion magnitude and a loop
//! score.
//!
//! The proxy Fréchet distance keeps the Gaussian-fit machinery of FID/FVD but
//! swaps the pretrained feature network for a fixed random projection, so its
//! values are only comparable with other values from the same extractor seed.

use nalgebra::{DMatrix, DVector, RealField};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::synthvideo::{window, VideoClip};

/// Mean and covariance of a feature distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats<T: RealField + Copy> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: RealField + Copy> GaussianStats<T> {
    /// Sample mean and unbiased covariance of row samples.
    pub fn fit(samples: &[Vec<T>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Protocol(format!("need at least 2 samples for a covariance, got {}", samples.len())));
        }
        let d = samples[0].len();
        let n = T::from_usize(samples.len()).unwrap();
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let c = DVector::from_column_slice(s) - &mean;
            cov.ger(T::one(), &c, &c, T::one());
        }
        cov /= n - T::one();
        Ok(Self { mean, cov })
    }
}

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// are clipped to zero.
pub fn psd_sqrt<T: RealField + Copy>(m: &DMatrix<T>) -> DMatrix<T> {
    let sym = (m + m.transpose()) * T::from_f64(0.5).unwrap();
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| if v > T::zero() { v.sqrt() } else { T::zero() });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa Σb)^{1/2})`.
///
/// The trace of `(Σa Σb)^{1/2}` is computed as the trace of the symmetric
/// matrix `(Σa^{1/2} Σb Σa^{1/2})^{1/2}`, which has the same eigenvalues.
pub fn frechet_gaussian<T: RealField + Copy>(a: &GaussianStats<T>, b: &GaussianStats<T>) -> Result<T> {
    if a.mean.len() != b.mean.len() || a.cov.shape() != b.cov.shape() || a.cov.nrows() != a.mean.len() {
        return Err(Error::shape(
            "frechet_gaussian",
            format!("dimension {}", a.mean.len()),
            format!("dimension {}", b.mean.len()),
        ));
    }
    let diff = &a.mean - &b.mean;
    let sa = psd_sqrt(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let cross = psd_sqrt(&inner).trace();
    let d = diff.dot(&diff) + a.cov.trace() + b.cov.trace() - cross * T::from_f64(2.0).unwrap();
    Ok(if d < T::zero() { T::zero() } else { d })
}

/// Fixed seeded random projection followed by `|·|`.
#[derive(Clone, Debug)]
pub struct RandomFeaturizer {
    pub seed: u64,
    pub input_len: usize,
    pub dim: usize,
    projection: Vec<f32>,
}

impl RandomFeaturizer {
    pub const DEFAULT_DIM: usize = 128;

    pub fn new(seed: u64, input_len: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_len as f64).sqrt();
        let projection = (0..dim * input_len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                (v * scale) as f32
            })
            .collect();
        Self { seed, input_len, dim, projection }
    }

    pub fn features(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.input_len {
            return Err(Error::shape("featurizer input", self.input_len, x.len()));
        }
        Ok((0..self.dim)
            .map(|r| {
                let row = &self.projection[r * self.input_len..(r + 1) * self.input_len];
                crate::nn::ops::dot(row, x).abs() as f64
            })
            .collect())
    }
}

/// Proxy Fréchet distance between two sample sets (flattened images, pairs
/// or clips of equal length).
pub fn feature_frechet(set_a: &[Vec<f32>], set_b: &[Vec<f32>], extractor: &RandomFeaturizer) -> Result<f64> {
    if set_a.len() < 2 || set_b.len() < 2 {
        return Err(Error::Protocol(format!(
            "proxy Fréchet needs >= 2 samples per set, got {} and {}",
            set_a.len(),
            set_b.len()
        )));
    }
    let fa = set_a.iter().map(|x| extractor.features(x)).collect::<Result<Vec<_>>>()?;
    let fb = set_b.iter().map(|x| extractor.features(x)).collect::<Result<Vec<_>>>()?;
    frechet_gaussian(&GaussianStats::fit(&fa)?, &GaussianStats::fit(&fb)?)
}

/// How real clips are drawn for video-level comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipProtocol {
    /// One random window from every real video.
    OneClipPerVideo,
    /// Windows from uniformly drawn videos (with replacement).
    Uniform,
}

pub fn real_clips<R: Rng + ?Sized>(
    corpus: &[VideoClip],
    t_clip: usize,
    count: usize,
    protocol: ClipProtocol,
    rng: &mut R,
) -> Result<Vec<VideoClip>> {
    let eligible: Vec<&VideoClip> = corpus.iter().filter(|c| c.len() >= t_clip).collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(format!("no clip has {t_clip} frames")));
    }
    let pick = |c: &VideoClip, rng: &mut R| {
        let start = rng.random_range(0..=c.len() - t_clip);
        window(c, start, t_clip)
    };
    Ok(match protocol {
        ClipProtocol::OneClipPerVideo => eligible.iter().take(count).map(|c| pick(c, rng)).collect(),
        ClipProtocol::Uniform => (0..count)
            .map(|_| {
                let c = *eligible.choose(rng).expect("non-empty");
                pick(c, rng)
            })
            .collect(),
    })
}

pub fn flatten_clip<T: Real>(clip: &VideoClip<T>) -> Vec<f32> {
    clip.frames.iter().map(|v| v.value() as f32).collect()
}

/// Hue and coverage of the single foreground shape in a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContentAttributes {
    /// Hue of the mean foreground color, in [0, 1).
    pub hue: f64,
    /// Coverage-weighted foreground area as a fraction of the frame.
    pub area: f64,
}

/// Reads content attributes off synthetic-corpus style frames (one bright
/// shape on black).
#[derive(Clone, Copy, Debug)]
pub struct ContentOracle {
    /// Minimum brightest-channel value in [0, 1] for a pixel to count.
    pub threshold: f64,
    /// Hue difference that counts as total drift.
    pub hue_scale: f64,
    /// Relative area change attributed to rasterization and ignored.
    pub area_tolerance: f64,
    /// Relative area change beyond the tolerance that counts as total drift.
    pub area_scale: f64,
}

impl Default for ContentOracle {
    fn default() -> Self {
        Self { threshold: 0.02, hue_scale: 0.2, area_tolerance: 0.1, area_scale: 0.5 }
    }
}

/// Result of [`content_consistency`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsistencyScore {
    pub score: f64,
    /// Largest circular hue distance between any two frames (0.5 max).
    pub hue_drift: f64,
    pub area_drift: f64,
    /// Frames where no foreground was found; a clip with any is scored 0.
    pub blank_frames: usize,
}

pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn rgb_hue(r: f64, g: f64, b: f64) -> f64 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    if c <= 1e-12 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    h / 6.0
}

impl ContentOracle {
    pub fn attributes<T: Real>(&self, frame: ndarray::ArrayView3<'_, T>) -> Option<ContentAttributes> {
        let (_, h, w) = frame.dim();
        let mut sum = [0.0f64; 3];
        let mut weight = 0.0;
        for y in 0..h {
            for x in 0..w {
                let rgb = [0, 1, 2].map(|c| ((frame[[c, y, x]].value() + 1.0) * 0.5).clamp(0.0, 1.0));
                let v = rgb[0].max(rgb[1]).max(rgb[2]);
                if v >= self.threshold {
                    for c in 0..3 {
                        sum[c] += rgb[c];
                    }
                    weight += v;
                }
            }
        }
        if weight <= 0.0 {
            return None;
        }
        Some(ContentAttributes {
            hue: rgb_hue(sum[0], sum[1], sum[2]),
            area: weight / (h * w) as f64,
        })
    }
}

/// `1 − max(hue drift / hue_scale, (area drift − area_tolerance) / area_scale)`,
/// clipped to [0, 1].
pub fn content_consistency<T: Real>(clip: &VideoClip<T>, oracle: &ContentOracle) -> ConsistencyScore {
    let attrs: Vec<Option<ContentAttributes>> = (0..clip.len()).map(|t| oracle.attributes(clip.frame(t))).collect();
    let blank_frames = attrs.iter().filter(|a| a.is_none()).count();
    if blank_frames > 0 {
        return ConsistencyScore { score: 0.0, hue_drift: 0.5, area_drift: 1.0, blank_frames };
    }
    let attrs: Vec<ContentAttributes> = attrs.into_iter().flatten().collect();
    let mut hue_drift: f64 = 0.0;
    for i in 0..attrs.len() {
        for j in i + 1..attrs.len() {
            hue_drift = hue_drift.max(hue_distance(attrs[i].hue, attrs[j].hue));
        }
    }
    let amax = attrs.iter().map(|a| a.area).fold(0.0, f64::max);
    let amin = attrs.iter().map(|a| a.area).fold(f64::INFINITY, f64::min);
    let area_drift = if amax > 0.0 { (amax - amin) / amax } else { 0.0 };
    let area_term = (area_drift - oracle.area_tolerance).max(0.0) / oracle.area_scale;
    let score = (1.0 - (hue_drift / oracle.hue_scale).max(area_term)).clamp(0.0, 1.0);
    ConsistencyScore { score, hue_drift, area_drift, blank_frames }
}

/// Default bound on per-clip hue drift (hue in [0, 1)) for a clip to count
/// as content-consistent.
pub const HUE_PASS_TOLERANCE: f64 = 0.1;

/// True when every frame has a foreground and the hue drift stays below
/// `tolerance`.
pub fn passes_hue_oracle<T: Real>(clip: &VideoClip<T>, oracle: &ContentOracle, tolerance: f64) -> bool {
    let s = content_consistency(clip, oracle);
    s.blank_frames == 0 && s.hue_drift < tolerance
}

fn mean_abs_diff<T: Real>(a: ndarray::ArrayView3<'_, T>, b: ndarray::ArrayView3<'_, T>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x.value() - y.value()).abs()).sum::<f64>() / n
}

/// Mean over consecutive frame pairs of the mean absolute pixel change.
pub fn motion_magnitude<T: Real>(clip: &VideoClip<T>) -> f64 {
    if clip.len() < 2 {
        return 0.0;
    }
    (1..clip.len()).map(|t| mean_abs_diff(clip.frame(t - 1), clip.frame(t))).sum::<f64>() / (clip.len() - 1) as f64
}

/// Loop-likeness in [0, 1]: the best period `p ∈ [2, T/2]` similarity
/// `1 − mean_t d(f_t, f_{t+p}) / d̄`, where `d` is mean absolute pixel
/// difference and `d̄` the clip's mean pairwise frame distance. Clips whose
/// frames are all (numerically) identical score 1.
pub fn loop_score<T: Real>(clip: &VideoClip<T>) -> Result<f64> {
    let n = clip.len();
    if n < 4 {
        return Err(Error::Config(format!("loop_score needs at least 4 frames, got {n}")));
    }
    let mut dist = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = mean_abs_diff(clip.frame(i), clip.frame(j));
            dist[i * n + j] = d;
            total += d;
        }
    }
    let mean_pair = total / (n * (n - 1) / 2) as f64;
    if mean_pair < 1e-6 {
        return Ok(1.0);
    }
    let mut best: f64 = 0.0;
    for p in 2..=n / 2 {
        let shifted = (0..n - p).map(|t| dist[t * n + t + p]).sum::<f64>() / (n - p) as f64;
        best = best.max((1.0 - shifted / mean_pair).clamp(0.0, 1.0));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthvideo::{make_corpus, CorpusConfig};
    use ndarray::{Array4, Axis};

    fn stats(mean: &[f64], cov: &[f64]) -> GaussianStats<f64> {
        let d = mean.len();
        GaussianStats { mean: DVector::from_column_slice(mean), cov: DMatrix::from_row_slice(d, d, cov) }
    }

    #[test]
    fn frechet_analytic_cases() {
        let a = stats(&[1.0, 2.0], &[2.0, 0.3, 0.3, 1.0]);
        assert!(frechet_gaussian(&a, &a).unwrap().abs() < 1e-8);
        let b = stats(&[1.5, 0.0], &[2.0, 0.3, 0.3, 1.0]);
        assert!((frechet_gaussian(&a, &b).unwrap() - (0.25 + 4.0)).abs() < 1e-8);
        let (m1, s1, m2, s2) = (0.3, 1.7, -1.2, 0.4);
        let d = frechet_gaussian(&stats(&[m1], &[s1 * s1]), &stats(&[m2], &[s2 * s2])).unwrap();
        assert!((d - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs() < 1e-8);
        assert!(frechet_gaussian(&a, &stats(&[0.0], &[1.0])).is_err());
    }

    #[test]
    fn frechet_is_symmetric() {
        let a = stats(&[0.1, -0.4, 2.0], &[2.0, 0.5, 0.1, 0.5, 1.0, -0.2, 0.1, -0.2, 0.7]);
        let b = stats(&[1.0, 0.4, -1.0], &[1.0, -0.3, 0.0, -0.3, 2.5, 0.4, 0.0, 0.4, 0.9]);
        let ab = frechet_gaussian(&a, &b).unwrap();
        let ba = frechet_gaussian(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-10);
        assert!(ab >= 0.0);
    }

    fn corpus() -> Vec<VideoClip> {
        make_corpus(&CorpusConfig { n_videos: 24, frames: 8, height: 16, width: 16, ..Default::default() }).unwrap()
    }

    fn frames_of(clips: &[VideoClip]) -> Vec<Vec<f32>> {
        clips.iter().flat_map(|c| (0..c.len()).map(move |t| c.frame(t).iter().copied().collect())).collect()
    }

    #[test]
    fn feature_frechet_identity_order_and_separation() {
        let clips = corpus();
        let ex = RandomFeaturizer::new(3, 3 * 16 * 16, 32);
        let set = frames_of(&clips);
        assert!(feature_frechet(&set, &set, &ex).unwrap().abs() < 1e-8);
        let mut rev = set.clone();
        rev.reverse();
        let d = feature_frechet(&set, &rev, &ex).unwrap();
        assert!(d.abs() < 1e-8, "{d}");
        assert!(feature_frechet(&set[..1], &set, &ex).is_err());

        // Same-hue halves vs different-hue corpora.
        let by_hue = |h: usize| -> Vec<VideoClip> {
            clips.iter().filter(|c| c.content_id.unwrap().hue_index == h).cloned().collect()
        };
        let pick = (0..6).filter(|&h| by_hue(h).len() >= 4).take(2).collect::<Vec<_>>();
        let a = frames_of(&by_hue(pick[0]));
        let b = frames_of(&by_hue(pick[1]));
        let (a1, a2) = a.split_at(a.len() / 2);
        let same = feature_frechet(a1, a2, &ex).unwrap();
        let diff = feature_frechet(&a, &b, &ex).unwrap();
        assert!(diff > 0.0 && diff > same, "diff {diff} same {same}");
    }

    #[test]
    fn corpus_clips_are_content_consistent() {
        let oracle = ContentOracle::default();
        for clip in corpus() {
            let s = content_consistency(&clip, &oracle);
            assert!(s.score >= 0.99, "{s:?}");
            let a = oracle.attributes(clip.frame(0)).unwrap();
            assert!(hue_distance(a.hue, clip.content_id.unwrap().hue()) < 1e-6);
        }
    }

    #[test]
    fn spliced_clip_is_inconsistent() {
        let clips = corpus();
        let a = &clips[0];
        let b = clips.iter().find(|c| c.content_id.unwrap().hue_index != a.content_id.unwrap().hue_index).unwrap();
        let mut frames = a.frames.clone();
        for t in 4..8 {
            frames.index_axis_mut(Axis(0), t).assign(&b.frame(t));
        }
        let spliced = VideoClip::new(frames, None, 0);
        assert!(content_consistency(&spliced, &ContentOracle::default()).score < 0.5);
    }

    #[test]
    fn static_and_blank_clips() {
        let clips = corpus();
        let still = Array4::from_shape_fn((6, 3, 16, 16), |(_, c, y, x)| clips[0].frames[[0, c, y, x]]);
        let still = VideoClip::new(still, None, 0);
        assert_eq!(content_consistency(&still, &ContentOracle::default()).score, 1.0);
        assert_eq!(motion_magnitude(&still), 0.0);
        assert_eq!(loop_score(&still).unwrap(), 1.0);
        let blank = VideoClip::new(Array4::from_elem((4, 3, 8, 8), -1.0f32), None, 0);
        let s = content_consistency(&blank, &ContentOracle::default());
        assert_eq!((s.score, s.blank_frames), (0.0, 4));
    }

    #[test]
    fn motion_of_alternating_clip_is_two() {
        let frames = Array4::from_shape_fn((6, 3, 4, 4), |(t, _, _, _)| if t % 2 == 0 { -1.0f32 } else { 1.0 });
        let clip = VideoClip::new(frames, None, 0);
        assert!((motion_magnitude(&clip) - 2.0).abs() < 1e-12);
        assert!(loop_score(&clip).unwrap() >= 0.99);
    }

    #[test]
    fn translation_is_less_loopy_than_a_cycle() {
        let clips = corpus();
        let moving = &clips[1];
        let cycle = Array4::from_shape_fn(moving.frames.raw_dim(), |(t, c, y, x)| moving.frames[[t % 2, c, y, x]]);
        let cycle = VideoClip::new(cycle, None, 0);
        let lm = loop_score(moving).unwrap();
        let lc = loop_score(&cycle).unwrap();
        assert!(lc >= 0.99 && lm < lc, "moving {lm} cycle {lc}");
        assert!(loop_score(&VideoClip::new(Array4::<f32>::zeros((3, 3, 4, 4)), None, 0)).is_err());
    }
}
