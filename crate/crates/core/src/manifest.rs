//! Dataset manifests: which clips exist, where their files live, their
//! speakers and train/test splits, plus optional per-dataset configuration
//! overrides (datasets differ in fps, onset ranges, and lexicon size).

use crate::config::Config;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub motion: PathBuf,
    pub audio: PathBuf,
    /// Absent for audio-only clips.
    pub alignment: Option<PathBuf>,
    pub speaker: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub skeleton: PathBuf,
    pub embeddings: PathBuf,
    pub clips: Vec<ClipRecord>,
    /// Partial config override table merged onto the run config at load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_overrides: Option<serde_json::Value>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        // resolve paths relative to the manifest file
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut manifest.skeleton);
        fix(&mut manifest.embeddings);
        for c in manifest.clips.iter_mut() {
            fix(&mut c.motion);
            fix(&mut c.audio);
            if let Some(a) = c.alignment.as_mut() {
                fix(a);
            }
        }
        manifest.validate(path)?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.clips.is_empty() {
            return Err(Error::schema(path, "manifest lists no clips"));
        }
        for file in [&self.skeleton, &self.embeddings] {
            if !file.exists() {
                return Err(Error::schema(
                    path,
                    format!("referenced file missing: {}", file.display()),
                ));
            }
        }
        for c in &self.clips {
            for file in [Some(&c.motion), Some(&c.audio), c.alignment.as_ref()]
                .into_iter()
                .flatten()
            {
                if !file.exists() {
                    return Err(Error::schema(
                        path,
                        format!("clip `{}` references missing file {}", c.id, file.display()),
                    ));
                }
            }
        }
        // speaker ids must be dense 0..N_I
        let n = self.num_speakers();
        for c in &self.clips {
            if c.speaker >= n {
                return Err(Error::schema(path, format!("speaker {} out of range", c.speaker)));
            }
        }
        let mut seen = vec![false; n];
        for c in &self.clips {
            seen[c.speaker] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::schema(
                path,
                "speaker ids must be dense in [0, N_I)",
            ));
        }
        Ok(())
    }

    pub fn num_speakers(&self) -> usize {
        self.clips.iter().map(|c| c.speaker + 1).max().unwrap_or(0)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    /// Apply the manifest's override table onto a config.
    pub fn apply_overrides(&self, cfg: &Config) -> Result<Config> {
        let Some(overrides) = &self.config_overrides else {
            return Ok(cfg.clone());
        };
        let mut value = serde_json::to_value(cfg).expect("config serializes");
        let serde_json::Value::Object(base) = &mut value else {
            unreachable!("config is a map");
        };
        let serde_json::Value::Object(over) = overrides else {
            return Err(Error::config(
                "config_overrides",
                "must be a table of config fields",
            ));
        };
        for (k, v) in over {
            if !base.contains_key(k) {
                return Err(Error::config(k, "unknown config field in overrides"));
            }
            base.insert(k.clone(), v.clone());
        }
        let merged: Config = serde_json::from_value(value)
            .map_err(|e| Error::config("config_overrides", e.to_string()))?;
        merged.validate()?;
        Ok(merged)
    }
}
