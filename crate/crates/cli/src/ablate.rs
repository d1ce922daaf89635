use std::collections::BTreeMap;
use std::path::Path;

use motionvid_core::archive::write_atomic;
use motionvid_core::sequencer::DiscriminatorSet;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::evaluate::{score_videos, Metrics};
use crate::pipeline::{
    csv_err, extract_motions_into, open_basis, open_corpus, open_generator, open_video_model, randomize_motions_into,
    train_pairs_into, train_sequencer_into, Codes, Layout, LoadedBasis, LoadedCorpus, LoadedGenerator,
};
use crate::stage::{dir_hash, CliError, CliResult, Provenance, Staging, PROVENANCE_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Discriminators,
    IntervalK,
    MotionCodes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Discriminators(DiscriminatorSet),
    IntervalK(usize),
    Codes(#[serde(with = "codes_serde")] Codes),
}

mod codes_serde {
    use super::Codes;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(c: &Codes, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if *c == Codes::Random { "random" } else { "computed" })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Codes, D::Error> {
        Ok(if String::deserialize(d)? == "random" { Codes::Random } else { Codes::Computed })
    }
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Discriminators(set) => match set {
                DiscriminatorSet::Tvd => "tvd".into(),
                DiscriminatorSet::Bvd => "bvd".into(),
                DiscriminatorSet::TvdBvd => "tvd_bvd".into(),
                DiscriminatorSet::TvdBvdId => "tvd_bvd_id".into(),
            },
            Variant::IntervalK(k) => format!("k{k}"),
            Variant::Codes(Codes::Computed) => "computed".into(),
            Variant::Codes(Codes::Random) => "random".into(),
        }
    }

    fn axis(&self) -> Axis {
        match self {
            Variant::Discriminators(_) => Axis::Discriminators,
            Variant::IntervalK(_) => Axis::IntervalK,
            Variant::Codes(_) => Axis::MotionCodes,
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Discriminators => "discriminators",
            Axis::IntervalK => "interval_k",
            Axis::MotionCodes => "motion_codes",
        }
    }

    /// The full sweep for this axis.
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Axis::Discriminators => [DiscriminatorSet::Tvd, DiscriminatorSet::Bvd, DiscriminatorSet::TvdBvdId, DiscriminatorSet::TvdBvd]
                .into_iter()
                .map(Variant::Discriminators)
                .collect(),
            Axis::IntervalK => (2..=5).map(Variant::IntervalK).collect(),
            Axis::MotionCodes => vec![Variant::Codes(Codes::Computed), Variant::Codes(Codes::Random)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub upstream: BTreeMap<String, String>,
}

impl AblationReport {
    pub fn rows_for(&self, variant: &str) -> impl Iterator<Item = &AblationRow> {
        let v = variant.to_string();
        self.rows.iter().filter(move |r| r.variant == v)
    }
}

pub fn ablate(cfg: &PipelineConfig, layout: &Layout, axis: Axis, force: bool) -> CliResult<AblationReport> {
    ablate_variants(cfg, layout, axis, &axis.variants(), &cfg.eval.ablation_seeds, force)
}

/// Trains and scores `variants` for every seed. Seed `s` drives the
/// sequencer initialisation and the evaluation stream (`eval.seed + s`), so
/// variants of one seed see the same content codes.
pub fn ablate_variants(
    cfg: &PipelineConfig,
    layout: &Layout,
    axis: Axis,
    variants: &[Variant],
    seeds: &[u64],
    force: bool,
) -> CliResult<AblationReport> {
    if let Some(v) = variants.iter().find(|v| v.axis() != axis) {
        return Err(CliError::Usage(format!("variant {} is not on the {} axis", v.label(), axis.name())));
    }
    if seeds.is_empty() {
        return Err(CliError::Usage("ablation needs at least one seed".into()));
    }
    let corpus = open_corpus(layout)?;
    let staging = Staging::begin(&layout.ablation(axis.name()), force)?;
    let mut upstream = BTreeMap::from([("corpus".to_string(), corpus.hash.clone())]);
    let mut rows = Vec::new();
    let base = if axis == Axis::IntervalK {
        None
    } else {
        let g = open_generator(&layout.pairgan())?;
        let basis = open_basis(&layout.motion(Codes::Computed))?;
        upstream.insert("pairgan".into(), g.hash.clone());
        upstream.insert("motion".into(), basis.hash.clone());
        Some((g, basis))
    };
    for variant in variants {
        let vdir = staging.dir.join(variant.label());
        let label = variant.label();
        match *variant {
            Variant::Discriminators(set) => {
                let (g, basis) = base.as_ref().expect("loaded above");
                let mut v = cfg.clone();
                v.sequencer.discriminators = set;
                let pdir = layout.pairgan();
                let mdir = layout.motion(Codes::Computed);
                for &s in seeds {
                    rows.push(run_seed(&v, &vdir, &label, s, g, basis, &corpus, &pdir, &mdir)?);
                }
            }
            Variant::IntervalK(k) => {
                let mut v = cfg.clone();
                v.pairgan.k = k;
                v.validate()?;
                // Training is deterministic, so the base stages stand in
                // for their own k.
                let reuse = k == cfg.pairgan.k && layout.motion(Codes::Computed).join(PROVENANCE_FILE).exists();
                let (pdir, mdir) = if reuse {
                    (layout.pairgan(), layout.motion(Codes::Computed))
                } else {
                    let pdir = vdir.join("pairgan");
                    let mdir = vdir.join("motion");
                    train_pairs_into(&pdir, &v.pairgan, &corpus, &v, force)?;
                    extract_motions_into(&mdir, &pdir, &v, force)?;
                    (pdir, mdir)
                };
                let g = open_generator(&pdir)?;
                let basis = open_basis(&mdir)?;
                upstream.insert(format!("pairgan-{label}"), g.hash.clone());
                upstream.insert(format!("motion-{label}"), basis.hash.clone());
                for &s in seeds {
                    rows.push(run_seed(&v, &vdir, &label, s, &g, &basis, &corpus, &pdir, &mdir)?);
                }
            }
            Variant::Codes(codes) => {
                let (g, computed) = base.as_ref().expect("loaded above");
                let pdir = layout.pairgan();
                for &s in seeds {
                    let (basis, mdir) = match codes {
                        Codes::Computed => (None, layout.motion(Codes::Computed)),
                        Codes::Random => {
                            let mut v = cfg.clone();
                            v.eval.random_code_seed = cfg.eval.random_code_seed + s;
                            let mdir = vdir.join(format!("motion-s{s}"));
                            randomize_motions_into(&mdir, &layout.motion(Codes::Computed), &v, force)?;
                            (Some(open_basis(&mdir)?), mdir)
                        }
                    };
                    let basis = basis.as_ref().unwrap_or(computed);
                    rows.push(run_seed(cfg, &vdir, &label, s, g, basis, &corpus, &pdir, &mdir)?);
                }
            }
        }
    }
    let report = AblationReport { axis, seeds: seeds.to_vec(), rows, upstream: upstream.clone() };
    write_atomic(&staging.dir.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    write_report_csv(&staging.dir.join("report.csv"), &report)?;
    let prov = Provenance { stage: format!("ablate-{}", axis.name()), hash: dir_hash(&staging.dir)?, upstream, seed: cfg.eval.seed };
    staging.commit(&prov, cfg)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_seed(
    cfg: &PipelineConfig,
    vdir: &Path,
    label: &str,
    seed: u64,
    g: &LoadedGenerator,
    basis: &LoadedBasis,
    corpus: &LoadedCorpus,
    pairgan_dir: &Path,
    motion_dir: &Path,
) -> CliResult<AblationRow> {
    let mut scfg = cfg.sequencer.clone();
    scfg.seed = seed;
    let sdir = vdir.join(format!("sequencer-s{seed}"));
    train_sequencer_into(&sdir, &scfg, g, basis, corpus, cfg, true)?;
    let model = open_video_model(pairgan_dir, motion_dir, &sdir)?;
    let mut eval = cfg.eval.clone();
    eval.seed = cfg.eval.seed + seed;
    let fake = model.sample(eval.samples, eval.seed)?;
    let (metrics, _) = score_videos(&eval, &corpus.clips, &fake)?;
    log::info!("{label} seed {seed}: {metrics:?}");
    Ok(AblationRow { variant: label.to_string(), seed, metrics })
}

fn write_report_csv(path: &Path, report: &AblationReport) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "variant",
        "seed",
        "proxy_frechet",
        "hue_pass_rate",
        "mean_consistency",
        "median_motion",
        "mean_motion",
        "median_loop",
        "real_median_motion",
        "real_median_loop",
        "generated",
        "real",
    ])
    .map_err(csv_err)?;
    for r in &report.rows {
        let m = &r.metrics;
        w.write_record([
            r.variant.clone(),
            r.seed.to_string(),
            m.proxy_frechet.to_string(),
            m.hue_pass_rate.to_string(),
            m.mean_consistency.to_string(),
            m.median_motion.to_string(),
            m.mean_motion.to_string(),
            m.median_loop.to_string(),
            m.real_median_motion.to_string(),
            m.real_median_loop.to_string(),
            m.generated.to_string(),
            m.real.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
