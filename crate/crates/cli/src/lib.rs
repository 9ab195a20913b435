//! Config-driven experiment runner for `cmj-core`.
//!
//! An experiment is described by a TOML file (see [`config`]). Running it
//! writes CSV and JSON artifacts plus a `manifest.json` recording the
//! configuration hash, the seed and the tool version. Outputs depend only on
//! the configuration and the seed, not on the number of threads.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use report::{convergence_report, ConvergenceRow, ConvergenceTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    /// SHA-256 of the configuration file as given.
    pub config_sha256: String,
    /// The configuration after the command-line overrides.
    pub resolved_config: String,
    pub files: Vec<FileEntry>,
    pub summary: serde_json::Value,
}

/// Command-line overrides of a configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn partial_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out.with_file_name(name)
}

/// Loads, validates and runs the experiment in `config_path`, writing its
/// artifacts to `out` (which must not exist yet). Outputs are assembled in
/// a sibling `.partial` directory that is renamed on success and removed on
/// failure.
pub fn run(config_path: &Path, out: &Path, overrides: &Overrides) -> CliResult<Manifest> {
    let text = fs::read(config_path).map_err(|e| CliError::Validation {
        field: "--config".into(),
        message: format!("{}: {e}", config_path.display()),
    })?;
    let config_sha256 = hex(&Sha256::digest(&text));
    let text = String::from_utf8(text).map_err(|_| CliError::Validation {
        field: "--config".into(),
        message: "not UTF-8".into(),
    })?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    if let Some(kind) = overrides.kind {
        config.kind = Some(kind);
    }
    if let Some(seed) = overrides.seed {
        config.run.seed = seed;
    }
    let kind = config.kind.ok_or_else(|| CliError::Validation {
        field: "kind".into(),
        message: "no experiment kind in the config or on the command line".into(),
    })?;
    let model = config.validate()?;
    if out.exists() {
        return Err(CliError::Validation {
            field: "--out".into(),
            message: format!("{} already exists", out.display()),
        });
    }

    let partial = partial_dir(out);
    if partial.exists() {
        fs::remove_dir_all(&partial)?;
    }
    fs::create_dir_all(&partial)?;
    let result = (|| -> CliResult<Manifest> {
        let ctx = experiments::Context {
            config: &config,
            model: &model,
            dir: &partial,
        };
        let summary = experiments::run_kind(kind, &ctx)?;
        let mut names: Vec<String> = fs::read_dir(&partial)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<Result<_, _>>()?;
        names.sort();
        let files = names
            .into_iter()
            .map(|name| {
                let bytes = fs::read(partial.join(&name))?;
                Ok(FileEntry {
                    sha256: hex(&Sha256::digest(&bytes)),
                    name,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            kind,
            seed: config.run.seed,
            config_sha256,
            resolved_config: config.to_toml(),
            files,
            summary,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifests always serialize");
        fs::write(partial.join("manifest.json"), json + "\n")?;
        Ok(manifest)
    })();
    match result {
        Ok(manifest) => {
            fs::rename(&partial, out)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&partial);
            Err(e)
        }
    }
}
