//! Output files. Each starts with one `#` line naming the tool version, the
//! command and the sha256 of the config bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Artifacts {
    prefix: String,
    header: String,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(prefix: String, command: &str, digest: &str) -> Self {
        Self {
            prefix,
            header: format!("# semimarkov {VERSION} command={command} config_sha256={digest}"),
            written: Vec::new(),
        }
    }

    /// Writes `<prefix>_<suffix>.csv` through `body`.
    pub fn write<F>(&mut self, suffix: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = PathBuf::from(format!("{}_{suffix}.csv", self.prefix));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let io = |e: std::io::Error| {
            anyhow::Error::new(e).context(format!("writing {}", path.display()))
        };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        writeln!(w, "{}", self.header).map_err(io)?;
        body(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
        self.written.push(path);
        Ok(())
    }
}
