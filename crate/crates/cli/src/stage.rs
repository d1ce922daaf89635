use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use motionvid_core::archive::{sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Core(#[from] motionvid_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 usage, 3 precondition or provenance, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        use motionvid_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) => 2,
                E::Numerical(_) | E::NoSelectiveDirection { .. } | E::InsufficientMotionCodes { .. } => 4,
                _ => 3,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Identity of a finished stage directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub hash: String,
    /// Stage name to the hash it was built from.
    pub upstream: BTreeMap<String, String>,
    pub seed: u64,
}

impl Provenance {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(PROVENANCE_FILE);
        if !path.exists() {
            return Err(CliError::Precondition(format!("{} is missing; run its stage first", path.display())));
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Hash of every file under `dir` except the provenance record and the
/// config dump, in sorted path order.
pub fn dir_hash(dir: &Path) -> CliResult<String> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut chunks = Vec::new();
    for rel in &files {
        chunks.push(rel.to_string_lossy().as_bytes().to_vec());
        chunks.push(fs::read(dir.join(rel))?);
    }
    let refs: Vec<&[u8]> = chunks.iter().map(Vec::as_slice).collect();
    Ok(sha256_hex(&refs))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_path_buf();
            if rel != Path::new(PROVENANCE_FILE) && rel != Path::new(CONFIG_FILE) {
                out.push(rel);
            }
        }
    }
    Ok(())
}

/// A stage output being written to `<final>.tmp`.
pub struct Staging {
    pub dir: PathBuf,
    target: PathBuf,
}

impl Staging {
    pub fn begin(target: &Path, force: bool) -> CliResult<Self> {
        if target.exists() && !force {
            return Err(CliError::Precondition(format!("{} exists; pass --force to overwrite", target.display())));
        }
        let mut tmp = target.as_os_str().to_owned();
        tmp.push(".tmp");
        let dir = PathBuf::from(tmp);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, target: target.to_path_buf() })
    }

    /// Writes the provenance record and resolved config, then moves the
    /// directory into place.
    pub fn commit(self, provenance: &Provenance, config: &PipelineConfig) -> CliResult<PathBuf> {
        write_atomic(&self.dir.join(PROVENANCE_FILE), &serde_json::to_vec_pretty(provenance)?)?;
        write_atomic(&self.dir.join(CONFIG_FILE), config.to_toml().as_bytes())?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.dir, &self.target)?;
        Ok(self.target)
    }
}

/// Checks `dir` against its own provenance record and returns the record.
pub fn verified(dir: &Path, recompute: impl FnOnce() -> CliResult<String>) -> CliResult<Provenance> {
    let prov = Provenance::read(dir)?;
    let found = recompute()?;
    motionvid_core::archive::verify_hash(&dir.display().to_string(), &prov.hash, &found)?;
    Ok(prov)
}
