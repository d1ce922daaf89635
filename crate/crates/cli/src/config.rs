use std::path::Path;

use motionvid_core::metrics::{ClipProtocol, HUE_PASS_TOLERANCE};
use motionvid_core::motionspace::MotionConfig;
use motionvid_core::pairgan::PairTrainConfig;
use motionvid_core::sequencer::SequencerTrainConfig;
use motionvid_core::synthvideo::CorpusConfig;
use motionvid_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sampling and scoring settings shared by `generate`, `evaluate` and
/// `ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub protocol: ClipProtocol,
    /// Generated (and real) videos per evaluation.
    pub samples: usize,
    pub seed: u64,
    pub feature_seed: u64,
    pub feature_dim: usize,
    pub hue_tolerance: f64,
    /// Length of `generate-long` outputs.
    pub long_frames: usize,
    /// Latent interpolation factor of the interpolate long-video mode.
    pub long_factor: usize,
    /// Clip stride of the sequencer used by the subsampled long-video mode.
    pub long_stride: usize,
    /// Seed of the random motion codes in the motion-code ablation.
    pub random_code_seed: u64,
    /// Seeds for ablation variants.
    pub ablation_seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: ClipProtocol::OneClipPerVideo,
            samples: 256,
            seed: 1000,
            feature_seed: 1234,
            feature_dim: 128,
            hue_tolerance: HUE_PASS_TOLERANCE,
            long_frames: 128,
            long_factor: 8,
            long_stride: 4,
            random_code_seed: 99,
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

/// Every stage's settings in one file, one TOML table per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub pairgan: PairTrainConfig,
    pub motion: MotionConfig,
    pub sequencer: SequencerTrainConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.pairgan.validate()?;
        self.corpus.check_interval(self.pairgan.k)?;
        let res = self.pairgan.generator.resolution();
        if self.corpus.height != res || self.corpus.width != res {
            return Err(Error::Config(format!(
                "corpus frames are {}x{} but the generator emits {res}x{res}",
                self.corpus.height, self.corpus.width
            )));
        }
        if self.motion.m == 0 || self.motion.m > self.pairgan.generator.d_w {
            return Err(Error::Config(format!("motion.m must be in 1..={}", self.pairgan.generator.d_w)));
        }
        self.sequencer.validate()?;
        if self.sequencer.span() > self.corpus.frames {
            return Err(Error::Config(format!(
                "sequencer clips span {} frames but corpus videos have {}",
                self.sequencer.span(),
                self.corpus.frames
            )));
        }
        if self.eval.samples < 2 {
            return Err(Error::Config("eval.samples must be at least 2".into()));
        }
        if self.eval.long_frames < self.sequencer.n_frames {
            return Err(Error::Config("eval.long_frames is shorter than a sequencer clip".into()));
        }
        if self.eval.long_factor == 0 || self.eval.long_stride < 2 {
            return Err(Error::Config("eval.long_factor must be positive and eval.long_stride at least 2".into()));
        }
        Ok(())
    }
}
