//! Run manifests: every command writes exactly one `manifest.txt` next to
//! its outputs, recording the command, the fully resolved configuration,
//! input/output paths, the seed and the artifact version. The wall-clock
//! line is the only entry excluded from byte-level reproducibility.

use std::path::Path;

use crate::error::{CliError, Result};

pub const ARTIFACT_VERSION: &str = "1";

pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Manifest {
        Manifest {
            lines: vec![
                ("command".into(), command.to_string()),
                ("artifact_version".into(), ARTIFACT_VERSION.into()),
                ("seed".into(), seed.to_string()),
            ],
        }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = (String, String)>) {
        self.lines.extend(entries);
    }

    /// Write the manifest, appending wall-clock seconds as the final line.
    pub fn write(mut self, dir: &Path, wall_clock_secs: f64) -> Result<()> {
        self.lines
            .push(("wall_clock_secs".into(), format!("{wall_clock_secs:.3}")));
        let mut text = String::new();
        for (k, v) in &self.lines {
            text.push_str(&format!("{k} = {v}\n"));
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }
}

/// Read a manifest back as key/value pairs (last line included).
pub fn read_manifest(dir: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    crate::config::parse_kv(&text)
}

pub fn manifest_value<T: std::str::FromStr>(
    map: &std::collections::BTreeMap<String, String>,
    key: &str,
) -> Result<T> {
    map.get(key)
        .ok_or_else(|| CliError::config(format!("manifest missing key {key}")))?
        .parse()
        .map_err(|_| CliError::config(format!("manifest key {key} has invalid value")))
}
