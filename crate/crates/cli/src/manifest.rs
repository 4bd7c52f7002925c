use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const STATUS_FILE: &str = "status.txt";

/// Flat `key=value` record of one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
        }
    }

    pub fn file_name(&self) -> String {
        format!("manifest_{}.txt", self.command)
    }

    pub fn render(&self) -> String {
        format!(
            "command={}\nconfig_sha256={}\nseed={}\nversion={}\nstarted_unix={}\n",
            self.command, self.config_sha256, self.seed, self.version, self.started_unix
        )
    }

    /// Writes the manifest and the effective config next to it. Called
    /// before any stage output.
    pub fn write(&self, dir: &Path, config_text: &str) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(self.file_name());
        fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))?;
        let cfg = dir.join(format!("config_{}.toml", self.command));
        fs::write(&cfg, config_text).with_context(|| format!("writing {}", cfg.display()))?;
        Ok(())
    }

    /// Appends the stage outcome to the run's status log.
    pub fn record_status(&self, dir: &Path, status: &str) -> Result<()> {
        let path = dir.join(STATUS_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        writeln!(f, "{}={} finished_unix={}", self.command, status, now())?;
        Ok(())
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_only_on_config() {
        let a = RunManifest::new("solve", "x = 1", 4);
        let b = RunManifest::new("solve", "x = 1", 4);
        let c = RunManifest::new("solve", "x = 2", 4);
        assert_eq!(a.config_sha256, b.config_sha256);
        assert_ne!(a.config_sha256, c.config_sha256);
        assert_eq!(a.config_sha256.len(), 64);
    }

    #[test]
    fn render_parses_back() {
        let m = RunManifest::new("simulate", "", 9);
        let kv = parse_key_values(&m.render());
        assert_eq!(kv[0], ("command".into(), "simulate".into()));
        assert!(kv.contains(&("seed".into(), "9".into())));
        assert_eq!(kv.len(), 5);
    }
}
