//! Artifact writers. Everything goes through `Artifacts`, which knows the
//! output directory and turns I/O failures into `CliError::Output`.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shellopt::{Point, ShellMesh};

use crate::error::CliError;

pub struct Artifacts {
    dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThicknessRow {
    pub face_index: usize,
    pub thickness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisplacementRow {
    pub vertex_index: usize,
    pub magnitude: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

fn output_error(path: &Path, source: impl Into<std::io::Error>) -> CliError {
    CliError::Output { path: path.to_path_buf(), source: source.into() }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    output_error(path, std::io::Error::other(e))
}

/// Streaming CSV file that is flushed after every row, so an aborted run
/// still leaves everything written so far.
pub struct CsvLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn row(&mut self, record: &impl Serialize) -> Result<(), CliError> {
        self.writer.serialize(record).map_err(|e| csv_error(&self.path, e))?;
        self.writer.flush().map_err(|e| output_error(&self.path, e))
    }
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv_log(&self, name: &str) -> Result<CsvLog, CliError> {
        let path = self.path(name);
        let writer = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        Ok(CsvLog { path, writer })
    }

    pub fn csv<R: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
        let mut log = self.csv_log(name)?;
        for r in rows {
            log.row(&r)?;
        }
        Ok(())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| output_error(&path, e))
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| output_error(&self.path(name), e))?;
        self.text(name, &(text + "\n"))
    }

    pub fn thickness(&self, u: &[f64]) -> Result<(), CliError> {
        self.csv("thickness.csv", u.iter().enumerate().map(|(face_index, &thickness)| ThicknessRow { face_index, thickness }))
    }

    /// Reference mesh moved by `displacement` plus the per-vertex sidecar.
    pub fn deformation(&self, mesh: &ShellMesh, displacement: &[f64]) -> Result<(), CliError> {
        let moved: Vec<Point> = mesh
            .positions
            .iter()
            .enumerate()
            .map(|(v, p)| p + Point::new(displacement[3 * v], displacement[3 * v + 1], displacement[3 * v + 2]))
            .collect();
        self.text("deformed.obj", &mesh.to_obj(&moved))?;
        self.csv(
            "displacement.csv",
            (0..mesh.positions.len()).map(|v| {
                let d = Point::new(displacement[3 * v], displacement[3 * v + 1], displacement[3 * v + 2]);
                DisplacementRow { vertex_index: v, magnitude: d.norm(), dx: d.x, dy: d.y, dz: d.z }
            }),
        )
    }
}

/// Reads a `face_index,thickness` CSV covering every face exactly once.
pub fn read_thickness(path: &Path, faces: usize) -> Result<Vec<f64>, CliError> {
    let input = |m: String| CliError::Input(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| input(e.to_string()))?;
    let mut u = vec![f64::NAN; faces];
    for row in reader.deserialize::<ThicknessRow>() {
        let row = row.map_err(|e| input(e.to_string()))?;
        let slot = u.get_mut(row.face_index).ok_or_else(|| input(format!("face index {} out of range", row.face_index)))?;
        if !slot.is_nan() {
            return Err(input(format!("face index {} listed twice", row.face_index)));
        }
        if !(row.thickness > 0.0 && row.thickness.is_finite()) {
            return Err(input(format!("face {}: thickness {} is not positive", row.face_index, row.thickness)));
        }
        *slot = row.thickness;
    }
    if let Some(t) = u.iter().position(|x| x.is_nan()) {
        return Err(input(format!("face {t} has no thickness")));
    }
    Ok(u)
}
