use std::collections::BTreeMap;
use std::path::Path;

use motionvid_core::metrics::{
    content_consistency, feature_frechet, flatten_clip, loop_score, motion_magnitude, real_clips, ContentOracle,
    RandomFeaturizer,
};
use motionvid_core::synthvideo::VideoClip;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, PipelineConfig};
use crate::pipeline::{csv_err, open_corpus, open_model, Codes, Layout};
use crate::stage::{dir_hash, CliResult, Provenance, Staging};

/// Per-video scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub index: usize,
    pub consistency: f64,
    pub hue_drift: f64,
    pub blank_frames: usize,
    pub hue_pass: bool,
    pub motion: f64,
    pub loop_score: f64,
}

pub fn score_video(index: usize, clip: &VideoClip<f32>, oracle: &ContentOracle, tolerance: f64) -> CliResult<VideoScore> {
    let c = content_consistency(clip, oracle);
    Ok(VideoScore {
        index,
        consistency: c.score,
        hue_drift: c.hue_drift,
        blank_frames: c.blank_frames,
        hue_pass: c.blank_frames == 0 && c.hue_drift < tolerance,
        motion: motion_magnitude(clip),
        loop_score: if clip.len() >= 4 { loop_score(clip)? } else { f64::NAN },
    })
}

/// Aggregates over a set of generated videos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub proxy_frechet: f64,
    pub hue_pass_rate: f64,
    pub mean_consistency: f64,
    pub median_motion: f64,
    pub mean_motion: f64,
    pub median_loop: f64,
    pub real_median_motion: f64,
    pub real_median_loop: f64,
    pub generated: usize,
    pub real: usize,
}

pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Scores `fake` against clips drawn from `corpus` under the configured
/// protocol.
pub fn score_videos(eval: &EvalConfig, corpus: &[VideoClip], fake: &[VideoClip<f32>]) -> CliResult<(Metrics, Vec<VideoScore>)> {
    let oracle = ContentOracle::default();
    let t_clip = fake.first().map_or(0, |c| c.len());
    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed ^ 0x5eed);
    let real = real_clips(corpus, t_clip, fake.len(), eval.protocol, &mut rng)?;
    let flat_fake: Vec<Vec<f32>> = fake.iter().map(flatten_clip).collect();
    let flat_real: Vec<Vec<f32>> = real.iter().map(flatten_clip).collect();
    let featurizer = RandomFeaturizer::new(eval.feature_seed, flat_fake[0].len(), eval.feature_dim);
    let proxy_frechet = feature_frechet(&flat_real, &flat_fake, &featurizer)?;
    let scores =
        fake.iter().enumerate().map(|(i, c)| score_video(i, c, &oracle, eval.hue_tolerance)).collect::<CliResult<Vec<_>>>()?;
    let real_loops = real.iter().map(loop_score).collect::<motionvid_core::Result<Vec<_>>>()?;
    let metrics = Metrics {
        proxy_frechet,
        hue_pass_rate: scores.iter().filter(|s| s.hue_pass).count() as f64 / scores.len() as f64,
        mean_consistency: mean(scores.iter().map(|s| s.consistency)),
        median_motion: median(scores.iter().map(|s| s.motion)),
        mean_motion: mean(scores.iter().map(|s| s.motion)),
        median_loop: median(scores.iter().map(|s| s.loop_score)),
        real_median_motion: median(real.iter().map(motion_magnitude)),
        real_median_loop: median(real_loops),
        generated: fake.len(),
        real: real.len(),
    };
    Ok((metrics, scores))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub metrics: Metrics,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub upstream: BTreeMap<String, String>,
}

pub fn write_scores_csv(path: &Path, scores: &[VideoScore]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in scores {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn evaluate(cfg: &PipelineConfig, layout: &Layout, codes: Codes, per_video_csv: bool, force: bool) -> CliResult<Report> {
    let corpus = open_corpus(layout)?;
    let model = open_model(layout, codes, cfg.sequencer.stride)?;
    let staging = Staging::begin(&layout.eval(codes), force)?;
    let fake = model.sample(cfg.eval.samples, cfg.eval.seed)?;
    let (metrics, scores) = score_videos(&cfg.eval, &corpus.clips, &fake)?;
    let mut hashes = model.hashes.clone();
    hashes.insert("corpus".into(), corpus.hash.clone());
    let report = Report {
        metrics,
        config: cfg.clone(),
        seeds: [
            ("eval".to_string(), cfg.eval.seed),
            ("feature".to_string(), cfg.eval.feature_seed),
            ("sequencer".to_string(), model.train.seed),
        ]
        .into_iter()
        .collect(),
        upstream: hashes.clone(),
    };
    motionvid_core::archive::write_atomic(&staging.dir.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    if per_video_csv {
        write_scores_csv(&staging.dir.join("videos.csv"), &scores)?;
    }
    let prov = Provenance { stage: "evaluate".into(), hash: dir_hash(&staging.dir)?, upstream: hashes, seed: cfg.eval.seed };
    staging.commit(&prov, cfg)?;
    println!("{}", serde_json::to_string_pretty(&report.metrics)?);
    Ok(report)
}
