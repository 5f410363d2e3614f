//! Configuration files, presets, file formats and the command implementations
//! behind the `hrm-lm` binary.

pub mod analyze;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod memcalc;
pub mod presets;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use hrm_lm_core::checkpoint::Checkpoint;
use hrm_lm_core::data::{Corpus, DataSplit, BYTE_VOCAB};
use hrm_lm_core::{Model, Rng};

pub use config::{DataSource, RunConfig};
pub use error::{CliError, Result};

/// Overrides `paths.metrics_dir` when set.
pub const METRICS_DIR_ENV: &str = "HRM_METRICS_DIR";

pub fn metrics_dir(config: &RunConfig) -> PathBuf {
    std::env::var_os(METRICS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| config.paths.metrics_dir.clone())
}

/// The configured corpus; `corpus_override` replaces it with a file.
pub fn load_corpus(config: &RunConfig, corpus_override: Option<&Path>) -> Result<Corpus> {
    let file = corpus_override.or(match config.data {
        DataSource::File => config.paths.corpus.as_deref(),
        DataSource::Synthetic { .. } => None,
    });
    if let Some(path) = file {
        let bytes = fs::read(path).map_err(|source| CliError::Input {
            path: path.to_path_buf(),
            source,
        })?;
        return Ok(Corpus::from_bytes(&bytes)?);
    }
    match &config.data {
        DataSource::Synthetic { task, seed } => Ok(Corpus::synthetic(task, &mut Rng::new(*seed))?),
        DataSource::File => unreachable!("file source always has a corpus path"),
    }
}

pub fn load_split(config: &RunConfig, corpus_override: Option<&Path>) -> Result<DataSplit> {
    if config.model.vocab() < BYTE_VOCAB {
        return Err(CliError::config(
            "model.vocab",
            format!("byte-level corpora need a vocabulary of at least {BYTE_VOCAB}"),
        ));
    }
    Ok(load_corpus(config, corpus_override)?.split(config.model.seq_len())?)
}

/// Freshly initialized model of the config's architecture and seed.
pub fn build_model(config: &RunConfig) -> Result<Model> {
    Ok(Model::new(&config.model, &mut Rng::new(config.train.seed), config.init_std)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Checkpoint::decode(&bytes)?)
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let out = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    fs::write(&tmp, bytes).map_err(out)?;
    fs::rename(&tmp, path).map_err(out)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}
