//! CSV tables and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Round-trip format with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, fields: Vec<String>) {
        debug_assert_eq!(fields.len(), self.header.len());
        self.rows.push(fields);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &target).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::from(e)
    })?;
    Ok(target)
}

/// Output directory of one run; remembers the files it wrote.
#[derive(Debug)]
pub struct RunDir {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl RunDir {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new() }
    }

    pub fn table(&mut self, name: &str, t: &Table) -> Result<(), CliError> {
        write_atomic(&self.dir, name, t.render().as_bytes())?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Reads a CSV written by [`Table`]: header and numeric rows.
pub fn read_numeric(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Validation(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        if l.is_empty() {
            continue;
        }
        let r: Result<Vec<f64>, _> = l.split(',').map(str::parse::<f64>).collect();
        let r = r.map_err(|e| CliError::Validation(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if r.len() != header.len() {
            return Err(CliError::Validation(format!("{} line {}: wrong field count", path.display(), i + 2)));
        }
        rows.push(r);
    }
    Ok((header, rows))
}
