//! Procedural meshes: the roof used by the shipped configs and small patches
//! used in tests. All generators are deterministic.

use serde::{Deserialize, Serialize};

use crate::mesh::{Point, ShellMesh};

/// Diagonal orientation per grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonals {
    /// Every cell split along the same diagonal; symmetric under `x <-> y`.
    Uniform,
    /// Cell orientation from an integer hash of the cell index.
    Scrambled(u64),
}

fn cell_hash(i: usize, j: usize, seed: u64) -> u64 {
    let mut h = seed ^ ((i as u64) << 32 | j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h
}

/// Structured `n × n` cell grid over `[x0, x1]²` lifted by `height`.
pub fn grid(n: usize, x0: f64, x1: f64, diagonals: Diagonals, height: impl Fn(f64, f64) -> f64) -> ShellMesh {
    assert!(n >= 1, "grid needs at least one cell");
    let step = (x1 - x0) / n as f64;
    let mut positions = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = (x0 + i as f64 * step, x0 + j as f64 * step);
            positions.push(Point::new(x, y, height(x, y)));
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut faces = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            let main = match diagonals {
                Diagonals::Uniform => true,
                Diagonals::Scrambled(seed) => cell_hash(i, j, seed) & 1 == 0,
            };
            if main {
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            } else {
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            }
        }
    }
    ShellMesh::from_parts(positions, faces).expect("grid indices are in range")
}

/// Unit-square patch with a smooth asymmetric bump and scrambled diagonals.
pub fn bumpy_patch(n: usize, amplitude: f64) -> ShellMesh {
    use std::f64::consts::PI;
    grid(n, 0.0, 1.0, Diagonals::Scrambled(7), |x, y| {
        amplitude * (PI * x).sin() * (PI * y).sin() * (1.0 + 0.3 * x) + 0.1 * amplitude * x * y
    })
}

/// Unit-square dome symmetric under `x <-> y`, including the triangulation.
pub fn symmetric_patch(n: usize, amplitude: f64) -> ShellMesh {
    use std::f64::consts::PI;
    grid(n, 0.0, 1.0, Diagonals::Uniform, |x, y| amplitude * (PI * x).sin() * (PI * y).sin() + 0.2 * amplitude * x * y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoofShape {
    /// Cells per side.
    pub resolution: usize,
    /// Half width of the square footprint.
    pub half_width: f64,
    pub height: f64,
    /// Radius of the flat foot around each corner.
    pub foot_radius: f64,
    /// Corner distance beyond which the roof is a flat plateau.
    pub plateau_radius: f64,
    pub seed: u64,
}

impl Default for RoofShape {
    fn default() -> Self {
        Self { resolution: 16, half_width: 10.0, height: 10.0, foot_radius: 2.0, plateau_radius: 12.0, seed: 1 }
    }
}

/// Roof standing on four flat corner feet with a flat central plateau.
///
/// The height is a smoothstep of the distance to the nearest footprint
/// corner, so the feet lie exactly on `z = 0` and the plateau exactly on
/// `z = height`. Diagonals are scrambled to break the square symmetry.
pub fn roof(shape: &RoofShape) -> ShellMesh {
    let RoofShape { resolution, half_width: w, height, foot_radius, plateau_radius, seed } = *shape;
    grid(resolution, -w, w, Diagonals::Scrambled(seed), |x, y| {
        let d = [(w, w), (w, -w), (-w, w), (-w, -w)]
            .iter()
            .map(|(cx, cy)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        let s = ((d - foot_radius) / (plateau_radius - foot_radius)).clamp(0.0, 1.0);
        height * s * s * (3.0 - 2.0 * s)
    })
}
