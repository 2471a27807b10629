//! Atomic output handling: every report file is written to a temp file in
//! the output directory and renamed into place, so a failed run never
//! leaves a partial file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Names of the files written so far, in write order.
    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Write `name` atomically with the given producer.
    pub fn write_file<F>(&mut self, name: &str, produce: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
            .with_context(|| format!("cannot create temp file in {}", self.dir.display()))?;
        produce(tmp.as_file_mut())?;
        tmp.as_file_mut().flush()?;
        let target = self.dir.join(name);
        tmp.persist(&target)
            .with_context(|| format!("cannot finalize {}", target.display()))?;
        self.written.push(name.to_owned());
        Ok(())
    }

    /// Serialize `value` as pretty JSON into `name`.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_file(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Write the run manifest; call last so it lists every output.
    pub fn write_manifest<T: Serialize>(&mut self, manifest: &T) -> Result<()> {
        self.write_json("manifest.json", manifest)
    }
}
