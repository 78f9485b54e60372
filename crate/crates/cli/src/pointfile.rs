//! `x y z [label]` text files, one point per line, `#` starts a comment line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tas_core::{Point3, PointCloud};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct PointFile {
    pub points: Vec<Point3>,
    pub labels: Option<Vec<i32>>,
}

impl PointFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut columns = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let at = |msg: &str| format!("line {}: {msg}", lineno + 1);
            if fields.len() != 3 && fields.len() != 4 {
                return Err(at(&format!("expected 3 or 4 columns, found {}", fields.len())));
            }
            match columns {
                None => columns = Some(fields.len()),
                Some(c) if c != fields.len() => return Err(at("column count differs from earlier rows")),
                _ => {}
            }
            let mut p = [0.0; 3];
            for (slot, f) in p.iter_mut().zip(&fields) {
                let v: f64 = f.parse().map_err(|_| at(&format!("bad coordinate {f:?}")))?;
                if !v.is_finite() {
                    return Err(at("non-finite coordinate"));
                }
                *slot = v;
            }
            points.push(p);
            if let Some(l) = fields.get(3) {
                let l: i32 = l.parse().map_err(|_| at(&format!("bad label {l:?}")))?;
                if l < -1 {
                    return Err(at("labels must be >= -1"));
                }
                labels.push(l);
            }
        }
        let labels = (columns == Some(4)).then_some(labels);
        Ok(Self { points, labels })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self { points: cloud.points().to_vec(), labels: cloud.labels().map(<[i32]>::to_vec) }
    }

    pub fn to_cloud(&self) -> CliResult<PointCloud> {
        let cloud = PointCloud::new(self.points.clone())?;
        Ok(match &self.labels {
            Some(l) => cloud.with_labels(l.clone())?,
            None => cloud,
        })
    }

    pub fn format(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 72);
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
            if let Some(l) = &self.labels {
                let _ = write!(out, " {}", l[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.format()).map_err(|e| CliError::io(path, e))
    }
}

pub fn read_cloud(path: &Path) -> CliResult<PointCloud> {
    PointFile::read(path)?.to_cloud()
}

/// One index per line.
pub fn read_indices(path: &Path) -> CliResult<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse().map_err(|_| CliError::usage(format!("{}: bad index {l:?}", path.display()))))
        .collect()
}

pub fn write_indices(path: &Path, indices: &[usize]) -> CliResult<()> {
    let text: String = indices.iter().map(|i| format!("{i}\n")).collect();
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
