//! Output files named `<name>-<hash12>-<kind>.csv`, each opening with `#`
//! metadata lines that carry the full config hash.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Output {
    dir: PathBuf,
    name: String,
    hash: String,
    command: String,
}

impl Output {
    pub fn new(dir: &Path, name: &str, hash: &str, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            name: name.to_string(),
            hash: hash.to_string(),
            command: command.to_string(),
        })
    }

    pub fn path(&self, kind: &str) -> PathBuf {
        self.dir.join(format!("{}-{}-{kind}.csv", self.name, &self.hash[..12]))
    }

    pub fn metadata(&self) -> Vec<String> {
        vec![
            format!("config_hash: {}", self.hash),
            format!("name: {}", self.name),
            format!("command: {}", self.command),
        ]
    }

    /// Creates `kind`'s file and hands the writer to `body` with the
    /// metadata lines to emit first.
    pub fn write(
        &self,
        kind: &str,
        body: impl FnOnce(&mut BufWriter<File>, &[String]) -> io::Result<()>,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(kind);
        let file = File::create(&path)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        body(&mut w, &self.metadata())?;
        w.flush()?;
        Ok(path)
    }

    /// A plain CSV with metadata, one header and rows.
    pub fn write_rows(&self, kind: &str, header: &str, rows: &[String]) -> Result<PathBuf, CliError> {
        self.write(kind, |w, meta| {
            for m in meta {
                writeln!(w, "# {m}")?;
            }
            writeln!(w, "{header}")?;
            for r in rows {
                writeln!(w, "{r}")?;
            }
            Ok(())
        })
    }
}

/// Shortest form of `x` rounded to 12 significant digits, so `-0.3` prints as such.
pub fn short(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let r: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if r.abs() < 1e-4 || r.abs() >= 1e15 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}
