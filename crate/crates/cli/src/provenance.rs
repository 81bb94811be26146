//! `.prov` sidecars: every artifact carries the config hash, tool version
//! and seed that produced it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self { config_hash: cfg.hash(), tool_version: TOOL_VERSION.to_string(), seed: cfg.seed }
    }

    pub fn sidecar(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".prov");
        PathBuf::from(s)
    }

    pub fn render(&self) -> String {
        format!("config_hash = {}\ntool_version = {}\nseed = {}\n", self.config_hash, self.tool_version, self.seed)
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut hash = None;
        let mut version = None;
        let mut seed = None;
        for line in text.lines() {
            let (k, v) = line.split_once(" = ")?;
            match k {
                "config_hash" => hash = Some(v.to_string()),
                "tool_version" => version = Some(v.to_string()),
                "seed" => seed = v.parse().ok(),
                _ => return None,
            }
        }
        Some(Self { config_hash: hash?, tool_version: version?, seed: seed? })
    }

    pub fn read(artifact: &Path) -> CliResult<Self> {
        let side = Self::sidecar(artifact);
        let text = std::fs::read_to_string(&side)
            .map_err(|_| CliError::Missing(format!("{} has no provenance sidecar", artifact.display())))?;
        Self::parse(&text).ok_or_else(|| CliError::Provenance(format!("unreadable sidecar {}", side.display())))
    }
}

/// Writes `path` through `body`, then its sidecar.
pub fn write_artifact<F>(path: &Path, prov: &Provenance, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()?;
    std::fs::write(Provenance::sidecar(path), prov.render())?;
    Ok(())
}

/// Fails unless `path` exists and was produced under `expected`. `hint`
/// names the command that creates it.
pub fn check(path: &Path, expected: &Provenance, hint: &str) -> CliResult<()> {
    if !path.exists() {
        return Err(CliError::Missing(format!("{} not found; run `beamid {hint}` first", path.display())));
    }
    let found = Provenance::read(path)?;
    if found != *expected {
        let mut diffs = Vec::new();
        if found.config_hash != expected.config_hash {
            diffs.push(format!("config hash {} vs {}", &found.config_hash[..16.min(found.config_hash.len())], &expected.config_hash[..16]));
        }
        if found.tool_version != expected.tool_version {
            diffs.push(format!("tool version {} vs {}", found.tool_version, expected.tool_version));
        }
        if found.seed != expected.seed {
            diffs.push(format!("seed {} vs {}", found.seed, expected.seed));
        }
        return Err(CliError::Provenance(format!(
            "{} was produced by a different run ({}); rerun `beamid {hint}` with this config",
            path.display(),
            diffs.join(", ")
        )));
    }
    Ok(())
}
