use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Everything needed to re-run a command and get the same output.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub argv: &'a [String],
    pub seed: u64,
    pub inputs: Vec<InputFile>,
    /// Configuration after presets, files and flag overrides are merged.
    pub resolved: Value,
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub role: &'static str,
    pub path: PathBuf,
    pub bytes: u64,
}

impl InputFile {
    pub fn new(role: &'static str, path: &Path) -> Self {
        InputFile {
            role,
            path: path.to_path_buf(),
            bytes: std::fs::metadata(path).map(|m| m.len()).unwrap_or(0),
        }
    }
}

impl<'a> Manifest<'a> {
    pub fn new(subcommand: &'static str, argv: &'a [String], seed: u64, output: &Path) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            argv,
            seed,
            inputs: Vec::new(),
            resolved: Value::Null,
            output: output.to_path_buf(),
        }
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn write(&self) -> std::io::Result<PathBuf> {
        let path = Self::path_for(&self.output);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(path)
    }
}
