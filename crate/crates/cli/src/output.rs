use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use ganmc::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(config_hash: String, seed: u64) -> Meta {
        Meta {
            tool: "ganmc",
            version: env!("CARGO_PKG_VERSION"),
            config_hash,
            seed,
        }
    }

    pub fn line(&self) -> String {
        format!("# {} {} config_hash={} seed={}", self.tool, self.version, self.config_hash, self.seed)
    }
}

/// Creates a CSV file whose first line is the `#` metadata comment.
pub fn csv_file(path: &Path, meta: &Meta) -> Result<File> {
    let mut f = File::create(path)?;
    writeln!(f, "{}", meta.line())?;
    Ok(f)
}

#[derive(Serialize)]
struct WithMeta<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, body: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(&WithMeta { meta, body })?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}
