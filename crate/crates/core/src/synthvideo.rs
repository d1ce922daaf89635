//! Deterministic moving-shape video corpus and pair/clip samplers.
//!
//! Each clip shows one colored shape on a black background. Color, size and
//! shape kind are the clip's *content* and never change within a clip; only
//! the position moves. Frames are `[3, h, w]` in [-1, 1].

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster;
use crate::scalar::Real;

/// Number of equally spaced hues in the corpus palette.
pub const PALETTE_SIZE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    /// Constant velocity, reflecting off the frame border.
    Bounce,
    /// Constant velocity on a torus (the shape wraps around).
    Drift,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub motion_kind: MotionKind,
    pub seed: u64,
    /// Per-frame displacement range in pixels.
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_videos: 512,
            frames: 64,
            height: 32,
            width: 32,
            motion_kind: MotionKind::Bounce,
            seed: 7,
            speed_min: 1.0,
            speed_max: 2.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0 {
            return Err(Error::Config("n_videos must be at least 1".into()));
        }
        if self.frames < 2 {
            return Err(Error::Config(format!("clips need at least 2 frames, got {}", self.frames)));
        }
        if self.height < 8 || self.width < 8 || self.height > 64 || self.width > 64 {
            return Err(Error::Config(format!(
                "frame size {}x{} outside supported range 8..=64",
                self.height, self.width
            )));
        }
        if !(self.speed_min >= 1.0 && self.speed_max >= self.speed_min) {
            return Err(Error::Config("speed range must satisfy 1 <= min <= max".into()));
        }
        Ok(())
    }

    /// Checks the `frames >= 2k + 1` requirement for pair interval `k`.
    pub fn check_interval(&self, k: usize) -> Result<()> {
        if k == 0 || self.frames < 2 * k + 1 {
            return Err(Error::Config(format!(
                "interval k={k} needs clips of at least {} frames, corpus has {}",
                2 * k + 1,
                self.frames
            )));
        }
        Ok(())
    }

    fn shape_radius_range(&self) -> (f64, f64) {
        let side = self.height.min(self.width) as f64;
        (side * 0.1, side * 0.16)
    }
}

/// Static attributes shared by all frames of one clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentId {
    pub shape: ShapeKind,
    pub hue_index: usize,
    pub radius: f64,
}

impl ContentId {
    /// Hue in [0, 1).
    pub fn hue(&self) -> f64 {
        self.hue_index as f64 / PALETTE_SIZE as f64
    }

    /// Fully saturated RGB color in [-1, 1].
    pub fn color(&self) -> [f64; 3] {
        let rgb = hsv_to_rgb(self.hue(), 1.0, 1.0);
        [rgb[0] * 2.0 - 1.0, rgb[1] * 2.0 - 1.0, rgb[2] * 2.0 - 1.0]
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = match self.shape {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
        };
        write!(f, "{shape}-h{}-r{:.2}", self.hue_index, self.radius)
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip<T = f32> {
    /// `[t, 3, h, w]` in [-1, 1].
    pub frames: Array4<T>,
    pub content_id: Option<ContentId>,
    pub fps_tag: u32,
    pub clip_id: usize,
}

impl<T: Real> VideoClip<T> {
    pub fn new(frames: Array4<T>, content_id: Option<ContentId>, clip_id: usize) -> Self {
        Self { frames, content_id, fps_tag: 25, clip_id }
    }

    pub fn len(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, T> {
        self.frames.index_axis(Axis(0), t)
    }

    pub fn cast<U: Real>(&self) -> VideoClip<U> {
        VideoClip {
            frames: self.frames.mapv(|v| U::c(v.value())),
            content_id: self.content_id,
            fps_tag: self.fps_tag,
            clip_id: self.clip_id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSource {
    Corpus { clip: usize, former: usize, latter: usize },
    Generated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T = f32> {
    /// `[6, h, w]`: channels 0..3 former frame, 3..6 latter frame.
    pub pixels: Array3<T>,
    pub source: PairSource,
}

impl<T: Real> ImagePair<T> {
    pub fn from_frames(former: ArrayView3<'_, T>, latter: ArrayView3<'_, T>, source: PairSource) -> Self {
        let (_, h, w) = former.dim();
        let mut pixels = Array3::zeros((6, h, w));
        pixels.slice_mut(s![0..3, .., ..]).assign(&former);
        pixels.slice_mut(s![3..6, .., ..]).assign(&latter);
        Self { pixels, source }
    }

    pub fn former(&self) -> ArrayView3<'_, T> {
        self.pixels.slice(s![0..3, .., ..])
    }

    pub fn latter(&self) -> ArrayView3<'_, T> {
        self.pixels.slice(s![3..6, .., ..])
    }

    pub fn swapped(&self) -> Self {
        let source = match self.source {
            PairSource::Corpus { clip, former, latter } => PairSource::Corpus { clip, former: latter, latter: former },
            PairSource::Generated => PairSource::Generated,
        };
        Self::from_frames(self.latter(), self.former(), source)
    }
}

struct ShapeState {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

fn render_frame(cfg: &CorpusConfig, content: &ContentId, st: &ShapeState) -> Array3<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let color = content.color();
    let r = content.radius;
    let wrap = cfg.motion_kind == MotionKind::Drift;
    let mut frame = Array3::from_elem((3, h, w), -1.0f32);
    for py in 0..h {
        for px in 0..w {
            let mut dx = px as f64 + 0.5 - st.x;
            let mut dy = py as f64 + 0.5 - st.y;
            if wrap {
                dx -= (dx / w as f64).round() * w as f64;
                dy -= (dy / h as f64).round() * h as f64;
            }
            let cov = match content.shape {
                ShapeKind::Disk => (r + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0),
                ShapeKind::Square => {
                    (r + 0.5 - dx.abs()).clamp(0.0, 1.0) * (r + 0.5 - dy.abs()).clamp(0.0, 1.0)
                }
            };
            if cov > 0.0 {
                for c in 0..3 {
                    frame[[c, py, px]] = (-1.0 + cov * (color[c] + 1.0)) as f32;
                }
            }
        }
    }
    frame
}

fn advance(cfg: &CorpusConfig, r: f64, st: &mut ShapeState) {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    st.x += st.vx;
    st.y += st.vy;
    match cfg.motion_kind {
        MotionKind::Drift => {
            st.x = st.x.rem_euclid(w);
            st.y = st.y.rem_euclid(h);
        }
        MotionKind::Bounce => {
            let reflect = |p: &mut f64, v: &mut f64, lo: f64, hi: f64| {
                if *p < lo {
                    *p = 2.0 * lo - *p;
                    *v = -*v;
                } else if *p > hi {
                    *p = 2.0 * hi - *p;
                    *v = -*v;
                }
            };
            reflect(&mut st.x, &mut st.vx, r, w - r);
            reflect(&mut st.y, &mut st.vy, r, h - r);
        }
    }
}

/// Renders the corpus; identical configs give bit-identical clips.
pub fn make_corpus(config: &CorpusConfig) -> Result<Vec<VideoClip>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (rmin, rmax) = config.shape_radius_range();
    let mut clips = Vec::with_capacity(config.n_videos);
    for clip_id in 0..config.n_videos {
        let content = ContentId {
            shape: if rng.random_bool(0.5) { ShapeKind::Disk } else { ShapeKind::Square },
            hue_index: rng.random_range(0..PALETTE_SIZE),
            radius: rng.random_range(rmin..rmax),
        };
        let r = content.radius;
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = rng.random_range(config.speed_min..=config.speed_max);
        let mut st = ShapeState {
            x: rng.random_range(r..config.width as f64 - r),
            y: rng.random_range(r..config.height as f64 - r),
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        };
        let mut frames = Array4::zeros((config.frames, 3, config.height, config.width));
        for t in 0..config.frames {
            frames.index_axis_mut(Axis(0), t).assign(&render_frame(config, &content, &st));
            advance(config, r, &mut st);
        }
        clips.push(VideoClip::new(frames, Some(content), clip_id));
    }
    Ok(clips)
}

/// Draws `batch` interval-`k` pairs, each in forward or reversed order with
/// probability 1/2. Start indices are uniform over all valid positions.
pub fn sample_pairs<R: Rng + ?Sized>(corpus: &[VideoClip], k: usize, batch: usize, rng: &mut R) -> Result<Vec<ImagePair>> {
    if k == 0 {
        return Err(Error::Config("frame interval k must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Sampling("empty corpus".into()));
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let clip = corpus.choose(rng).expect("non-empty corpus");
        if clip.len() < k + 1 {
            return Err(Error::Sampling(format!(
                "clip {} has {} frames, too short for interval k={k}",
                clip.clip_id,
                clip.len()
            )));
        }
        let t = rng.random_range(0..clip.len() - k);
        let (former, latter) = if rng.random_bool(0.5) { (t, t + k) } else { (t + k, t) };
        out.push(ImagePair::from_frames(
            clip.frame(former),
            clip.frame(latter),
            PairSource::Corpus { clip: clip.clip_id, former, latter },
        ));
    }
    Ok(out)
}

/// One random contiguous window of `t_clip` frames per selected video.
pub fn sample_clips<R: Rng + ?Sized>(corpus: &[VideoClip], t_clip: usize, batch: usize, rng: &mut R) -> Result<Vec<VideoClip>> {
    if t_clip == 0 {
        return Err(Error::Config("clip length must be at least 1".into()));
    }
    let eligible: Vec<&VideoClip> = corpus.iter().filter(|c| c.len() >= t_clip).collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(format!("no clip has {t_clip} or more frames")));
    }
    Ok((0..batch)
        .map(|_| {
            let clip = *eligible.choose(rng).expect("non-empty");
            let start = rng.random_range(0..=clip.len() - t_clip);
            window(clip, start, t_clip)
        })
        .collect())
}

pub fn window<T: Real>(clip: &VideoClip<T>, start: usize, len: usize) -> VideoClip<T> {
    VideoClip {
        frames: clip.frames.slice(s![start..start + len, .., .., ..]).to_owned(),
        content_id: clip.content_id,
        fps_tag: clip.fps_tag,
        clip_id: clip.clip_id,
    }
}

pub fn reverse_clip<T: Real>(clip: &VideoClip<T>) -> VideoClip<T> {
    VideoClip {
        frames: clip.frames.slice(s![..;-1, .., .., ..]).to_owned(),
        content_id: clip.content_id,
        fps_tag: clip.fps_tag,
        clip_id: clip.clip_id,
    }
}

/// Keeps frames `0, stride, 2·stride, …`.
pub fn subsample_clip<T: Real>(clip: &VideoClip<T>, stride: usize) -> Result<VideoClip<T>> {
    if stride < 1 {
        return Err(Error::Config("subsampling stride must be at least 1".into()));
    }
    Ok(VideoClip {
        frames: clip.frames.slice(s![..;stride as isize, .., .., ..]).to_owned(),
        content_id: clip.content_id,
        fps_tag: clip.fps_tag,
        clip_id: clip.clip_id,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClipManifest {
    content_id: Option<ContentId>,
    content_label: String,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    seed: u64,
    motion_kind: MotionKind,
    fps_tag: u32,
}

/// Writes one subdirectory per clip with PNG frames and a JSON manifest.
pub fn save_corpus(dir: &Path, config: &CorpusConfig, clips: &[VideoClip]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("corpus.json"), serde_json::to_vec_pretty(config)?)?;
    for clip in clips {
        let cdir = dir.join(format!("clip_{:05}", clip.clip_id));
        fs::create_dir_all(&cdir)?;
        for t in 0..clip.len() {
            raster::write_png(&cdir.join(format!("frame_{t:05}.png")), clip.frame(t))?;
        }
        let manifest = ClipManifest {
            content_id: clip.content_id,
            content_label: clip.content_id.map(|c| c.to_string()).unwrap_or_default(),
            t: clip.len(),
            h: clip.height(),
            w: clip.width(),
            seed: config.seed,
            motion_kind: config.motion_kind,
            fps_tag: clip.fps_tag,
        };
        fs::write(cdir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<(CorpusConfig, Vec<VideoClip>)> {
    let config: CorpusConfig = serde_json::from_slice(&fs::read(dir.join("corpus.json"))?)?;
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("clip_"))
        .collect();
    entries.sort_by_key(|e| e.file_name());
    let mut clips = Vec::with_capacity(entries.len());
    for entry in entries {
        let cdir = entry.path();
        let name = entry.file_name().to_string_lossy().to_string();
        let clip_id: usize = name[5..]
            .parse()
            .map_err(|_| Error::Format(format!("bad clip directory name {name}")))?;
        let m: ClipManifest = serde_json::from_slice(&fs::read(cdir.join("manifest.json"))?)?;
        let mut frames = Array4::zeros((m.t, 3, m.h, m.w));
        for t in 0..m.t {
            let f = raster::read_png(&cdir.join(format!("frame_{t:05}.png")))?;
            if f.dim() != (3, m.h, m.w) {
                return Err(Error::Format(format!("{name} frame {t} has wrong size")));
            }
            frames.index_axis_mut(Axis(0), t).assign(&f);
        }
        clips.push(VideoClip { frames, content_id: m.content_id, fps_tag: m.fps_tag, clip_id });
    }
    if clips.len() != config.n_videos {
        return Err(Error::Format(format!(
            "manifest lists {} videos, found {}",
            config.n_videos,
            clips.len()
        )));
    }
    Ok((config, clips))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig { n_videos: 6, frames: 12, height: 16, width: 16, ..Default::default() }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = make_corpus(&small()).unwrap();
        let b = make_corpus(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn single_frame_clips_are_rejected() {
        let cfg = CorpusConfig { frames: 1, ..small() };
        assert!(matches!(make_corpus(&cfg), Err(Error::Config(_))));
        assert!(matches!(make_corpus(&CorpusConfig { n_videos: 0, ..small() }), Err(Error::Config(_))));
    }

    #[test]
    fn frames_are_in_range_and_content_is_constant() {
        for kind in [MotionKind::Bounce, MotionKind::Drift] {
            let clips = make_corpus(&CorpusConfig { motion_kind: kind, ..small() }).unwrap();
            for clip in &clips {
                assert!(clip.frames.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
                // Brightest pixel color equals the content color in every frame.
                let color = clip.content_id.unwrap().color();
                for t in 0..clip.len() {
                    let f = clip.frame(t);
                    let mut best = (0usize, 0usize, f32::MIN);
                    for y in 0..clip.height() {
                        for x in 0..clip.width() {
                            let s = f[[0, y, x]] + f[[1, y, x]] + f[[2, y, x]];
                            if s > best.2 {
                                best = (y, x, s);
                            }
                        }
                    }
                    for c in 0..3 {
                        assert!((f[[c, best.0, best.1]] as f64 - color[c]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn bounce_clips_move_every_frame() {
        let clips = make_corpus(&small()).unwrap();
        for clip in &clips {
            let mut total = 0.0;
            for t in 1..clip.len() {
                total += (&clip.frame(t) - &clip.frame(t - 1)).mapv(f32::abs).mean().unwrap();
            }
            assert!(total / (clip.len() - 1) as f32 > 0.0);
        }
    }

    #[test]
    fn pair_sampler_covers_both_orders() {
        let clips = make_corpus(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs = sample_pairs(&clips, 4, 10_000, &mut rng).unwrap();
        let mut forward = 0usize;
        for p in &pairs {
            match p.source {
                PairSource::Corpus { clip, former, latter } => {
                    assert_eq!(former.abs_diff(latter), 4);
                    assert!(former.max(latter) < clips[clip].len());
                    if former < latter {
                        forward += 1;
                    }
                }
                PairSource::Generated => unreachable!(),
            }
        }
        let frac = forward as f64 / pairs.len() as f64;
        assert!((0.47..=0.53).contains(&frac), "forward fraction {frac}");
        // The reversed twin of a sampled pair is itself a valid sample.
        let twin = pairs[0].swapped();
        assert_eq!(twin.former(), pairs[0].latter());
    }

    #[test]
    fn pair_sampler_names_short_clip() {
        let clips = make_corpus(&CorpusConfig { frames: 3, ..small() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_pairs(&clips, 4, 1, &mut rng).unwrap_err();
        assert!(err.to_string().contains("clip"));
    }

    #[test]
    fn clip_windows_match_source() {
        let clips = make_corpus(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let full = sample_clips(&clips, 12, 5, &mut rng).unwrap();
        for c in &full {
            assert_eq!(c.frames, clips[c.clip_id].frames);
        }
        let part = sample_clips(&clips, 5, 20, &mut rng).unwrap();
        for c in &part {
            let src = &clips[c.clip_id];
            let hit = (0..=src.len() - 5).any(|s| window(src, s, 5).frames == c.frames);
            assert!(hit);
        }
        assert!(matches!(sample_clips(&clips, 13, 1, &mut rng), Err(Error::Sampling(_))));
    }

    #[test]
    fn reverse_and_subsample() {
        let clips = make_corpus(&small()).unwrap();
        let v = &clips[0];
        let r = reverse_clip(v);
        assert_eq!(r.len(), v.len());
        assert_eq!(r.frame(0), v.frame(v.len() - 1));
        assert_eq!(reverse_clip(&r), *v);
        assert_eq!(subsample_clip(v, 1).unwrap(), *v);
        let s2 = subsample_clip(&window(v, 0, 8), 2).unwrap();
        assert_eq!(s2.len(), 4);
        assert_eq!(s2.frame(3), v.frame(6));
        assert!(subsample_clip(v, 0).is_err());
        // Commutes with reversal when len ≡ 1 (mod s).
        for (len, s) in [(7usize, 2usize), (7, 3), (10, 3), (9, 4)] {
            let w = window(v, 0, len);
            assert_eq!(
                subsample_clip(&reverse_clip(&w), s).unwrap(),
                reverse_clip(&subsample_clip(&w, s).unwrap())
            );
        }
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let cfg = CorpusConfig { n_videos: 2, frames: 3, ..small() };
        let clips = make_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &cfg, &clips).unwrap();
        let (cfg2, loaded) = load_corpus(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        for (a, b) in clips.iter().zip(&loaded) {
            assert_eq!(a.content_id, b.content_id);
            let err = (&a.frames - &b.frames).mapv(f32::abs).fold(0.0f32, |m, &v| m.max(v));
            assert!(err <= 1.0 / 255.0 + 1e-6, "quantization error {err}");
        }
    }
}
