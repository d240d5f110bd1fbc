//! Machine-readable outputs: the versioned JSON check report and the value
//! surface CSV.
//!
//! Numbers in the CSV are written with Rust's shortest round-trip decimal
//! formatting. Under the deterministic flag the timestamp line is suppressed
//! and two runs of the same command on the same config are byte-identical.

use crate::control::ValueSurface;
use crate::error::{Error, Result};
use serde::Serialize;
use serde_json::Value;
use std::io::Write;
use std::path::Path;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub details: Value,
}

impl CheckResult {
    pub fn new(id: &str, name: &str, passed: bool, details: Value) -> CheckResult {
        CheckResult {
            id: id.to_string(),
            name: name.to_string(),
            passed,
            details,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub problem: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn new(
        command: &str,
        problem: &str,
        checks: Vec<CheckResult>,
        deterministic: bool,
    ) -> Report {
        let passed = checks.iter().all(|c| c.passed);
        Report {
            schema: REPORT_SCHEMA,
            command: command.to_string(),
            problem: problem.to_string(),
            generated_at: if deterministic {
                None
            } else {
                Some(unix_timestamp())
            },
            passed,
            checks,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_file(path, text.as_bytes())
    }
}

fn unix_timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    secs.to_string()
}

/// Writes a value surface as CSV with header `t,x1..xn,value,argmin_u`.
pub fn write_surface_csv(surface: &ValueSurface, path: &Path, deterministic: bool) -> Result<()> {
    let grid = surface.space_grid();
    let n = grid.dim();
    let mut out = String::new();
    if !deterministic {
        out.push_str(&format!("# generated-unix: {}\n", unix_timestamp()));
    }
    out.push('t');
    for axis in 1..=n {
        out.push_str(&format!(",x{axis}"));
    }
    out.push_str(",value,argmin_u\n");
    for level in 0..surface.num_levels() {
        let t = surface.time_grid().time(level);
        let slice = surface.slice(level);
        let argmin = surface.argmin(level);
        for (flat, &u_index) in argmin.iter().enumerate() {
            let x = grid.point(flat);
            out.push_str(&format!("{t}"));
            for j in 0..n {
                out.push_str(&format!(",{}", x[j]));
            }
            out.push_str(&format!(",{},{u_index}\n", slice.value(flat)));
        }
    }
    write_file(path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
