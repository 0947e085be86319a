//! Output directories: every file is written under a `.partial` name and
//! renamed once complete, and a `manifest.json` records what produced it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const GIT_DESCRIBE: &str = env!("SECSCHED_GIT_DESCRIBE");

pub struct OutDir {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    mode: &'a str,
    version: &'a str,
    git_describe: &'a str,
    seeds: BTreeMap<&'a str, u64>,
    config: &'a C,
    files: &'a BTreeMap<String, String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<OutDir> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Runs `write` against a temporary path, then moves the result into
    /// place and records its hash.
    pub fn write_with<F>(&mut self, name: &str, write: F) -> Result<()>
    where
        F: FnOnce(&Path) -> secsched::Result<()>,
    {
        let tmp = self.dir.join(format!("{name}.partial"));
        write(&tmp).with_context(|| format!("writing {name}"))?;
        let hash = sha256_file(&tmp)?;
        fs::rename(&tmp, self.path(name)).with_context(|| format!("renaming {name}"))?;
        self.files.insert(name.to_string(), hash);
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.write_with(name, |p| {
            let mut f = fs::File::create(p)?;
            f.write_all(bytes)?;
            Ok(())
        })
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn finish<C: Serialize>(self, command: &str, mode: &str, seeds: &[(&str, u64)], config: &C) -> Result<()> {
        let manifest = Manifest {
            command,
            mode,
            version: env!("CARGO_PKG_VERSION"),
            git_describe: GIT_DESCRIBE,
            seeds: seeds.iter().copied().collect(),
            config,
            files: &self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let tmp = self.dir.join("manifest.json.partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, self.dir.join("manifest.json"))?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
