//! Output directory with atomic writes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::config::Scenario;

pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn new(root: &Path) -> Self {
        OutDir { root: root.to_path_buf(), written: Vec::new() }
    }

    /// Writes to a temporary file in the same directory and renames it into place.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> std::io::Result<()> {
        let target = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(contents)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn has_outputs(&self) -> bool {
        !self.written.is_empty()
    }

    pub fn manifest(&mut self, command: &str, scenario: &Scenario, wall_time: f64) -> std::io::Result<()> {
        let mut inputs = scenario.doc.clone();
        if let Some(map) = inputs.as_object_mut() {
            map.insert("seed".into(), json!(scenario.seed));
        }
        let m = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": scenario.seed,
            "wall_time_s": wall_time,
            "inputs": inputs,
            "outputs": self.written,
        });
        self.json("manifest.json", &m)
    }
}
