//! CSV output: scientific formatting, optional fields, and file/stdout
//! emission with an environment-controlled default directory.

use std::io::Write;
use std::path::{Path, PathBuf};

/// Environment variable naming the directory that relative output paths
/// are resolved against.
pub const OUTPUT_DIR_VAR: &str = "NUDFT_OUTPUT_DIR";

/// Scientific notation with four significant digits, e.g. `3.142e0`.
pub fn format_number(x: f64) -> String {
    format!("{x:.3e}")
}

/// Like [`format_number`], but an absent value renders as an empty field.
pub fn format_optional(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_default()
}

/// An integer count; absent renders as an empty field.
pub fn format_count(n: Option<usize>) -> String {
    n.map(|v| v.to_string()).unwrap_or_default()
}

/// A rectangular CSV table: one header row plus data rows.
#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: Vec<S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row);
    }

    /// Render as comma-separated text with a trailing newline.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Resolve an output path: absolute paths pass through, relative paths
/// are joined onto `$NUDFT_OUTPUT_DIR` when that variable is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Write the table to the given path (creating parent directories), or to
/// stdout when no path is configured.
pub fn emit(table: &Table, path: Option<&Path>) -> std::io::Result<()> {
    let csv = table.to_csv();
    match path {
        Some(p) => {
            let resolved = resolve_output(p);
            if let Some(parent) = resolved.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&resolved, csv)?;
            eprintln!("wrote {}", resolved.display());
            Ok(())
        }
        None => std::io::stdout().write_all(csv.as_bytes()),
    }
}
