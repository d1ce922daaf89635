use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use motionvid_core::archive::{artifact_exists, verify_hash, write_atomic};
use motionvid_core::motionspace::{compute_motion_basis, load_basis, save_basis, BasisManifest, MotionBasis};
use motionvid_core::pairgan::{load_checkpoint, save_checkpoint_from, train_pairgan, PairGenerator, PairTrainConfig};
use motionvid_core::raster::write_png;
use motionvid_core::sequencer::{
    generate_long_video, generate_video, load_sequencer, save_sequencer, train_sequencer, CodeBook, LongVideoMode,
    Sequencer, SequencerManifest, SequencerTrainConfig, SEQUENCER_FORMAT,
};
use motionvid_core::synthvideo::{load_corpus, make_corpus, save_corpus, CorpusConfig, VideoClip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::stage::{dir_hash, verified, CliError, CliResult, Provenance, Staging};

const BASIS_FORMAT: u32 = 1;
pub const GENERATOR_ARTIFACT: &str = "generator";
pub const BASIS_ARTIFACT: &str = "basis";
pub const SEQUENCER_ARTIFACT: &str = "sequencer";

/// Directory names of every stage under the output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

/// Selects the computed or random-code branch of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Codes {
    #[default]
    Computed,
    Random,
}

impl Codes {
    fn suffix(self) -> &'static str {
        match self {
            Codes::Computed => "",
            Codes::Random => "-random",
        }
    }
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn pairgan(&self) -> PathBuf {
        self.root.join("pairgan")
    }

    pub fn motion(&self, codes: Codes) -> PathBuf {
        self.root.join(format!("motion{}", codes.suffix()))
    }

    pub fn sequencer(&self, codes: Codes, stride: usize) -> PathBuf {
        let s = if stride > 1 { format!("-s{stride}") } else { String::new() };
        self.root.join(format!("sequencer{}{s}", codes.suffix()))
    }

    pub fn videos(&self, codes: Codes) -> PathBuf {
        self.root.join(format!("videos{}", codes.suffix()))
    }

    pub fn long_videos(&self, codes: Codes, mode: LongVideoMode) -> PathBuf {
        let m = match mode {
            LongVideoMode::Interpolate { .. } => "interpolate",
            LongVideoMode::SubsampledModel => "subsampled",
        };
        self.root.join(format!("long-{m}{}", codes.suffix()))
    }

    pub fn eval(&self, codes: Codes) -> PathBuf {
        self.root.join(format!("eval{}", codes.suffix()))
    }

    pub fn ablation(&self, axis: &str) -> PathBuf {
        self.root.join(format!("ablate-{axis}"))
    }
}

fn upstream(entries: &[(&str, &str)]) -> BTreeMap<String, String> {
    entries.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

// Stage 0: corpus.

pub fn synth_data(cfg: &PipelineConfig, layout: &Layout, force: bool) -> CliResult<Provenance> {
    let clips = make_corpus(&cfg.corpus)?;
    let staging = Staging::begin(&layout.corpus(), force)?;
    save_corpus(&staging.dir, &cfg.corpus, &clips)?;
    let prov = Provenance {
        stage: "synth-data".into(),
        hash: dir_hash(&staging.dir)?,
        upstream: BTreeMap::new(),
        seed: cfg.corpus.seed,
    };
    staging.commit(&prov, cfg)?;
    log::info!("wrote {} clips to {}", clips.len(), layout.corpus().display());
    Ok(prov)
}

pub struct LoadedCorpus {
    pub config: CorpusConfig,
    pub clips: Vec<VideoClip>,
    pub hash: String,
}

pub fn open_corpus(layout: &Layout) -> CliResult<LoadedCorpus> {
    let dir = layout.corpus();
    let prov = verified(&dir, || dir_hash(&dir))?;
    let (config, clips) = load_corpus(&dir)?;
    Ok(LoadedCorpus { config, clips, hash: prov.hash })
}

// Stage 1: image-pair GAN.

pub fn train_pairs(cfg: &PipelineConfig, layout: &Layout, force: bool) -> CliResult<Provenance> {
    let corpus = open_corpus(layout)?;
    train_pairs_into(&layout.pairgan(), &cfg.pairgan, &corpus, cfg, force)
}

/// Trains a pair generator with `pcfg` on `corpus` and commits it to `dir`.
pub fn train_pairs_into(
    dir: &Path,
    pcfg: &PairTrainConfig,
    corpus: &LoadedCorpus,
    cfg: &PipelineConfig,
    force: bool,
) -> CliResult<Provenance> {
    corpus.config.check_interval(pcfg.k)?;
    let staging = Staging::begin(dir, force)?;
    let run = train_pairgan::<f32>(&corpus.clips, pcfg, None)?;
    let hash = save_checkpoint_from(
        &staging.dir,
        GENERATOR_ARTIFACT,
        &run.generator,
        &run.discriminator,
        run.best_step,
        pcfg.seed,
        pcfg.k,
        Some(&corpus.hash),
    )?;
    write_atomic(&staging.dir.join("history.json"), &serde_json::to_vec_pretty(&(&run.history, &run.checkpoints))?)?;
    let prov = Provenance {
        stage: "train-pairs".into(),
        hash,
        upstream: upstream(&[("corpus", &corpus.hash)]),
        seed: pcfg.seed,
    };
    staging.commit(&prov, cfg)?;
    log::info!("pair generator: best step {} of {}", run.best_step, pcfg.steps);
    Ok(prov)
}

pub struct LoadedGenerator {
    pub generator: PairGenerator<f32>,
    pub hash: String,
}

pub fn open_generator(dir: &Path) -> CliResult<LoadedGenerator> {
    require_artifact(dir, GENERATOR_ARTIFACT)?;
    let (generator, _, _, hash) = load_checkpoint::<f32>(dir, GENERATOR_ARTIFACT)?;
    let prov = Provenance::read(dir)?;
    verify_hash(&dir.display().to_string(), &prov.hash, &hash)?;
    Ok(LoadedGenerator { generator, hash })
}

fn require_artifact(dir: &Path, name: &str) -> CliResult<()> {
    if !artifact_exists(dir, name) {
        return Err(CliError::Precondition(format!("{} has no '{name}' artifact; run its stage first", dir.display())));
    }
    Ok(())
}

// Stage 2: motion codes.

pub fn extract_motions(cfg: &PipelineConfig, layout: &Layout, codes: Codes, force: bool) -> CliResult<Provenance> {
    match codes {
        Codes::Computed => extract_motions_into(&layout.motion(codes), &layout.pairgan(), cfg, force),
        Codes::Random => randomize_motions_into(&layout.motion(codes), &layout.motion(Codes::Computed), cfg, force),
    }
}

pub fn extract_motions_into(dir: &Path, pairgan_dir: &Path, cfg: &PipelineConfig, force: bool) -> CliResult<Provenance> {
    let g = open_generator(pairgan_dir)?;
    let staging = Staging::begin(dir, force)?;
    let basis = compute_motion_basis(&g.generator.cast::<f64>(), &cfg.motion)?;
    let manifest = BasisManifest {
        format_version: BASIS_FORMAT,
        m: basis.m(),
        d_w: basis.dim(),
        r_a: basis.r_a,
        r_b: basis.r_b,
        tau: cfg.motion.tau,
        lambda: cfg.motion.rpca.lambda,
        tol: cfg.motion.rpca.tol,
        anchor_count: cfg.motion.anchor_count,
        anchor_seed: cfg.motion.anchor_seed,
        candidates: cfg.motion.candidates,
        checkpoint_hash: g.hash.clone(),
        random_seed: None,
    };
    let hash = save_basis(&staging.dir, BASIS_ARTIFACT, &basis, &manifest)?;
    write_selectivity_table(&staging.dir.join("codes.csv"), &basis)?;
    print_code_table(&basis);
    let prov = Provenance {
        stage: "extract-motions".into(),
        hash,
        upstream: upstream(&[("pairgan", &g.hash)]),
        seed: cfg.motion.anchor_seed,
    };
    staging.commit(&prov, cfg)?;
    Ok(prov)
}

/// The random-code ablation: the computed basis with every row replaced by
/// a random unit vector.
pub fn randomize_motions_into(dir: &Path, motion_dir: &Path, cfg: &PipelineConfig, force: bool) -> CliResult<Provenance> {
    let computed = open_basis(motion_dir)?;
    let staging = Staging::begin(dir, force)?;
    let seed = cfg.eval.random_code_seed;
    let basis = computed.basis.random_like(seed);
    let manifest = BasisManifest { random_seed: Some(seed), ..computed.manifest.clone() };
    let hash = save_basis(&staging.dir, BASIS_ARTIFACT, &basis, &manifest)?;
    let prov = Provenance {
        stage: "extract-motions".into(),
        hash,
        upstream: upstream(&[("motion", &computed.hash), ("pairgan", &computed.manifest.checkpoint_hash)]),
        seed,
    };
    staging.commit(&prov, cfg)?;
    Ok(prov)
}

fn write_selectivity_table(path: &Path, basis: &MotionBasis) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["code", "singval_a", "singval_b", "selectivity_b", "selectivity_f"]).map_err(csv_err)?;
    for i in 0..basis.m() {
        let cell = |v: &[f64]| v.get(i).map(|x| format!("{x:.6}")).unwrap_or_default();
        w.write_record([i.to_string(), cell(&basis.singvals_a), cell(&basis.singvals_b), cell(&basis.selectivity_b), cell(&basis.selectivity_f)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> CliError {
    CliError::Core(motionvid_core::Error::Io(std::io::Error::other(e)))
}

fn print_code_table(basis: &MotionBasis) {
    println!("rank r_a={} r_b={}", basis.r_a, basis.r_b);
    println!("{:>4} {:>12} {:>12} {:>10} {:>10}", "code", "sigma_a", "sigma_b", "sel_b", "sel_f");
    for i in 0..basis.m() {
        let cell = |v: &[f64]| v.get(i).map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{i:>4} {:>12} {:>12} {:>10} {:>10}",
            cell(&basis.singvals_a),
            cell(&basis.singvals_b),
            cell(&basis.selectivity_b),
            cell(&basis.selectivity_f)
        );
    }
}

pub struct LoadedBasis {
    pub basis: MotionBasis,
    pub manifest: BasisManifest,
    pub hash: String,
}

pub fn open_basis(dir: &Path) -> CliResult<LoadedBasis> {
    require_artifact(dir, BASIS_ARTIFACT)?;
    let (basis, manifest, hash) = load_basis(dir, BASIS_ARTIFACT)?;
    let prov = Provenance::read(dir)?;
    verify_hash(&dir.display().to_string(), &prov.hash, &hash)?;
    Ok(LoadedBasis { basis, manifest, hash })
}

// Stage 3: sequencer.

pub fn train_sequencer_stage(cfg: &PipelineConfig, layout: &Layout, codes: Codes, force: bool) -> CliResult<Provenance> {
    let corpus = open_corpus(layout)?;
    let g = open_generator(&layout.pairgan())?;
    let basis = open_basis(&layout.motion(codes))?;
    let dir = layout.sequencer(codes, cfg.sequencer.stride);
    train_sequencer_into(&dir, &cfg.sequencer, &g, &basis, &corpus, cfg, force)
}

pub fn train_sequencer_into(
    dir: &Path,
    scfg: &SequencerTrainConfig,
    g: &LoadedGenerator,
    basis: &LoadedBasis,
    corpus: &LoadedCorpus,
    cfg: &PipelineConfig,
    force: bool,
) -> CliResult<Provenance> {
    let staging = Staging::begin(dir, force)?;
    let run = train_sequencer(&g.generator, &g.hash, &basis.basis, &basis.manifest.checkpoint_hash, &corpus.clips, scfg)?;
    let manifest = SequencerManifest {
        format_version: SEQUENCER_FORMAT,
        config: run.sequencer.config.clone(),
        train: scfg.clone(),
        generator_hash: g.hash.clone(),
        basis_hash: basis.hash.clone(),
    };
    let hash = save_sequencer(&staging.dir, SEQUENCER_ARTIFACT, &run.sequencer, &manifest)?;
    write_atomic(&staging.dir.join("history.json"), &serde_json::to_vec_pretty(&run.history)?)?;
    let prov = Provenance {
        stage: "train-sequencer".into(),
        hash,
        upstream: upstream(&[("corpus", &corpus.hash), ("pairgan", &g.hash), ("motion", &basis.hash)]),
        seed: scfg.seed,
    };
    staging.commit(&prov, cfg)?;
    log::info!("sequencer trained for {} steps", run.steps);
    Ok(prov)
}

/// Everything needed to render videos, with the provenance chain checked.
pub struct VideoModel {
    pub generator: PairGenerator<f32>,
    pub sequencer: Sequencer<f32>,
    pub book: CodeBook<f32>,
    pub train: SequencerTrainConfig,
    pub hashes: BTreeMap<String, String>,
}

pub fn open_video_model(pairgan_dir: &Path, motion_dir: &Path, sequencer_dir: &Path) -> CliResult<VideoModel> {
    let g = open_generator(pairgan_dir)?;
    let basis = open_basis(motion_dir)?;
    require_artifact(sequencer_dir, SEQUENCER_ARTIFACT)?;
    let (sequencer, manifest, hash) = load_sequencer::<f32>(sequencer_dir, SEQUENCER_ARTIFACT)?;
    let prov = Provenance::read(sequencer_dir)?;
    verify_hash(&sequencer_dir.display().to_string(), &prov.hash, &hash)?;
    verify_hash("sequencer generator", &manifest.generator_hash, &g.hash)?;
    verify_hash("sequencer motion basis", &manifest.basis_hash, &basis.hash)?;
    verify_hash("motion basis generator", &basis.manifest.checkpoint_hash, &g.hash)?;
    Ok(VideoModel {
        book: CodeBook::from_basis(&basis.basis),
        generator: g.generator,
        sequencer,
        train: manifest.train,
        hashes: upstream(&[("pairgan", &g.hash), ("motion", &basis.hash), ("sequencer", &hash)]),
    })
}

impl VideoModel {
    /// `count` videos whose content codes come from a `seed`ed stream.
    pub fn sample(&self, count: usize, seed: u64) -> CliResult<Vec<VideoClip<f32>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let w0 = self.generator.sample_latent(&mut rng).values;
                Ok(generate_video(&self.generator, &self.sequencer, &self.book, &w0, self.train.first)?)
            })
            .collect()
    }

    pub fn sample_long(&self, count: usize, seed: u64, frames: usize, mode: LongVideoMode) -> CliResult<Vec<VideoClip<f32>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let w0 = self.generator.sample_latent(&mut rng).values;
                Ok(generate_long_video(&self.generator, &self.sequencer, &self.book, &w0, frames, mode, self.train.first)?)
            })
            .collect()
    }
}

pub fn open_model(layout: &Layout, codes: Codes, stride: usize) -> CliResult<VideoModel> {
    open_video_model(&layout.pairgan(), &layout.motion(codes), &layout.sequencer(codes, stride))
}

// Video output.

/// Writes each clip as `video_%05d/frame_%05d.png`, plus an animation when
/// `gif` is set.
pub fn write_videos(dir: &Path, clips: &[VideoClip<f32>], gif: bool) -> CliResult<()> {
    for (i, clip) in clips.iter().enumerate() {
        let vdir = dir.join(format!("video_{i:05}"));
        fs::create_dir_all(&vdir)?;
        for t in 0..clip.len() {
            write_png(&vdir.join(format!("frame_{t:05}.png")), clip.frame(t))?;
        }
        if gif {
            write_gif(&vdir.join("video.gif"), clip)?;
        }
    }
    Ok(())
}

fn write_gif(path: &Path, clip: &VideoClip<f32>) -> CliResult<()> {
    let (h, w) = (clip.height() as u16, clip.width() as u16);
    let gif_err = |e: gif::EncodingError| CliError::Core(motionvid_core::Error::Io(std::io::Error::other(e)));
    let mut bytes = Vec::new();
    {
        let mut enc = gif::Encoder::new(&mut bytes, w, h, &[]).map_err(gif_err)?;
        enc.set_repeat(gif::Repeat::Infinite).map_err(gif_err)?;
        for t in 0..clip.len() {
            let f = clip.frame(t);
            let mut rgb = Vec::with_capacity(3 * h as usize * w as usize);
            for y in 0..h as usize {
                for x in 0..w as usize {
                    for c in 0..3 {
                        rgb.push(motionvid_core::raster::quantize(f[[c, y, x]] as f64));
                    }
                }
            }
            let mut frame = gif::Frame::from_rgb(w, h, &rgb);
            frame.delay = 8;
            enc.write_frame(&frame).map_err(gif_err)?;
        }
    }
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn generate(cfg: &PipelineConfig, layout: &Layout, codes: Codes, count: usize, gif: bool, force: bool) -> CliResult<Provenance> {
    let model = open_model(layout, codes, cfg.sequencer.stride)?;
    let staging = Staging::begin(&layout.videos(codes), force)?;
    let clips = model.sample(count, cfg.eval.seed)?;
    write_videos(&staging.dir, &clips, gif)?;
    let prov = Provenance { stage: "generate".into(), hash: dir_hash(&staging.dir)?, upstream: model.hashes, seed: cfg.eval.seed };
    staging.commit(&prov, cfg)?;
    Ok(prov)
}

/// The long-video mode as configured; the subsampled mode reads the
/// sequencer trained with `eval.long_stride`.
pub fn long_mode(cfg: &PipelineConfig, subsampled: bool) -> LongVideoMode {
    if subsampled {
        LongVideoMode::SubsampledModel
    } else {
        LongVideoMode::Interpolate { factor: cfg.eval.long_factor }
    }
}

pub fn generate_long(
    cfg: &PipelineConfig,
    layout: &Layout,
    codes: Codes,
    mode: LongVideoMode,
    count: usize,
    gif: bool,
    force: bool,
) -> CliResult<Provenance> {
    let stride = match mode {
        LongVideoMode::Interpolate { .. } => cfg.sequencer.stride,
        LongVideoMode::SubsampledModel => cfg.eval.long_stride,
    };
    let model = open_model(layout, codes, stride)?;
    let staging = Staging::begin(&layout.long_videos(codes, mode), force)?;
    let clips = model.sample_long(count, cfg.eval.seed, cfg.eval.long_frames, mode)?;
    write_videos(&staging.dir, &clips, gif)?;
    let prov = Provenance { stage: "generate-long".into(), hash: dir_hash(&staging.dir)?, upstream: model.hashes, seed: cfg.eval.seed };
    staging.commit(&prov, cfg)?;
    Ok(prov)
}
