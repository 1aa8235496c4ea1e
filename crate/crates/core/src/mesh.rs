//! Triangle meshes for discrete shells.
//!
//! A [`ShellMesh`] holds the reference positions, the triangle list, the
//! undirected edge list with face adjacency, and the Dirichlet (clamped)
//! vertices. Interior edges carry a [`Hinge`] stencil (two edge vertices and
//! the two opposite "wing" vertices) which is what the bending energy and
//! the dihedral angle operate on.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::MeshError;

pub type Point = Vector3<f64>;

/// Faces with reference area below this value are rejected.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Endpoints, sorted ascending.
    pub vertices: [usize; 2],
    pub faces: (usize, Option<usize>),
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.faces.1.is_some()
    }
}

/// Four-vertex stencil of an interior edge.
///
/// `edge` are the shared vertices, `wings[i]` is the vertex of `faces[i]`
/// opposite to the edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hinge {
    pub edge_index: usize,
    pub edge: [usize; 2],
    pub wings: [usize; 2],
    pub faces: [usize; 2],
}

impl Hinge {
    /// Stencil vertex order used by all per-hinge blocks: edge, edge, wing, wing.
    pub fn vertices(&self) -> [usize; 4] {
        [self.edge[0], self.edge[1], self.wings[0], self.wings[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DirichletSelector {
    /// All vertices with `z <= z_threshold`.
    ZThreshold(f64),
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
pub struct ShellMesh {
    pub positions: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    pub hinges: Vec<Hinge>,
    /// Sorted, unique.
    pub dirichlet: Vec<usize>,
    /// Faces whose three vertices are all Dirichlet vertices.
    pub frozen: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceQuantities {
    pub edge_lengths: Vec<f64>,
    pub face_areas: Vec<f64>,
    /// `(a_t + a_t') / 3` for interior edges, `None` on the boundary.
    pub edge_areas: Vec<Option<f64>>,
    pub vertex_areas: Vec<f64>,
}

impl ShellMesh {
    /// Builds a mesh from raw arrays, checking vertex indices. Topology is
    /// not built.
    pub fn from_parts(positions: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let count = positions.len();
        for (t, face) in faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&v| v >= count) {
                return Err(MeshError::IndexOutOfRange { face: t, index: bad as i64, count });
            }
        }
        let n_faces = faces.len();
        Ok(Self { positions, faces, frozen: vec![false; n_faces], ..Default::default() })
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self, MeshError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| MeshError::Io { path: path.to_path_buf(), source })?;
        Self::parse_obj(&text)
    }

    /// Parses ASCII Wavefront OBJ. Only `v` and `f` records are honored.
    pub fn parse_obj(text: &str) -> Result<Self, MeshError> {
        let mut positions = Vec::new();
        let mut raw_faces: Vec<(usize, [i64; 3])> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.split('#').next().unwrap_or("");
            let mut tokens = line.split_whitespace();
            match tokens.next() {
                Some("v") => {
                    let coords: Vec<f64> = tokens
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| MeshError::Parse { line: line_no, message: e.to_string() })?;
                    if coords.len() != 3 {
                        return Err(MeshError::Parse {
                            line: line_no,
                            message: "vertex needs three coordinates".into(),
                        });
                    }
                    positions.push(Point::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let refs: Vec<&str> = tokens.collect();
                    if refs.len() != 3 {
                        return Err(MeshError::NonTriangularFace { line: line_no, count: refs.len() });
                    }
                    let mut idx = [0i64; 3];
                    for (k, r) in refs.iter().enumerate() {
                        let head = r.split('/').next().unwrap_or("");
                        idx[k] = head.parse::<i64>().map_err(|e| MeshError::Parse {
                            line: line_no,
                            message: format!("bad vertex reference {r:?}: {e}"),
                        })?;
                    }
                    raw_faces.push((line_no, idx));
                }
                _ => {}
            }
        }
        let count = positions.len();
        let mut faces = Vec::with_capacity(raw_faces.len());
        for (t, (_, idx)) in raw_faces.iter().enumerate() {
            let mut face = [0usize; 3];
            for k in 0..3 {
                // OBJ indices are 1-based; negative values count from the end.
                let resolved = if idx[k] > 0 { idx[k] - 1 } else { count as i64 + idx[k] };
                if idx[k] == 0 || resolved < 0 || resolved >= count as i64 {
                    return Err(MeshError::IndexOutOfRange { face: t, index: idx[k], count });
                }
                face[k] = resolved as usize;
            }
            faces.push(face);
        }
        Self::from_parts(positions, faces)
    }

    pub fn to_obj(&self, positions: &[Point]) -> String {
        let mut out = String::new();
        for p in positions {
            let _ = writeln!(out, "v {:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    /// Builds the undirected edge list and the interior hinge stencils.
    pub fn build_topology(mut self) -> Result<Self, MeshError> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let adj = map.entry(key).or_default();
                adj.push(t);
                if adj.len() > 2 {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
            }
        }
        self.edges.clear();
        self.hinges.clear();
        for ((a, b), adj) in map {
            let edge_index = self.edges.len();
            let faces = (adj[0], adj.get(1).copied());
            if let Some(t1) = faces.1 {
                let t0 = faces.0;
                self.hinges.push(Hinge {
                    edge_index,
                    edge: [a, b],
                    wings: [self.opposite(t0, a, b), self.opposite(t1, a, b)],
                    faces: [t0, t1],
                });
            }
            self.edges.push(Edge { vertices: [a, b], faces });
        }
        Ok(self)
    }

    fn opposite(&self, face: usize, a: usize, b: usize) -> usize {
        *self.faces[face].iter().find(|&&v| v != a && v != b).expect("face contains edge")
    }

    pub fn interior_edge_count(&self) -> usize {
        self.hinges.len()
    }

    pub fn face_area(&self, positions: &[Point], t: usize) -> f64 {
        0.5 * face_cross(positions, self.faces[t]).norm()
    }

    pub fn reference_quantities(&self) -> Result<ReferenceQuantities, MeshError> {
        if self.edges.is_empty() && !self.faces.is_empty() {
            return Err(MeshError::MissingTopology);
        }
        let mut face_areas = Vec::with_capacity(self.faces.len());
        for t in 0..self.faces.len() {
            let area = self.face_area(&self.positions, t);
            if !(area >= DEGENERATE_AREA) {
                return Err(MeshError::DegenerateFace { face: t, area });
            }
            face_areas.push(area);
        }
        let edge_lengths = self
            .edges
            .iter()
            .map(|e| (self.positions[e.vertices[1]] - self.positions[e.vertices[0]]).norm())
            .collect();
        let edge_areas = self
            .edges
            .iter()
            .map(|e| e.faces.1.map(|t1| (face_areas[e.faces.0] + face_areas[t1]) / 3.0))
            .collect();
        let mut vertex_areas = vec![0.0; self.positions.len()];
        for (t, f) in self.faces.iter().enumerate() {
            for &v in f {
                vertex_areas[v] += face_areas[t] / 3.0;
            }
        }
        Ok(ReferenceQuantities { edge_lengths, face_areas, edge_areas, vertex_areas })
    }

    /// Marks Dirichlet vertices and freezes faces lying entirely on them.
    pub fn select_dirichlet(mut self, selector: &DirichletSelector) -> Result<Self, MeshError> {
        let mut chosen: Vec<usize> = match selector {
            DirichletSelector::ZThreshold(z) => {
                (0..self.positions.len()).filter(|&v| self.positions[v].z <= *z).collect()
            }
            DirichletSelector::Indices(list) => {
                if let Some(&bad) = list.iter().find(|&&v| v >= self.positions.len()) {
                    return Err(MeshError::DirichletOutOfRange(bad));
                }
                list.clone()
            }
        };
        chosen.sort_unstable();
        chosen.dedup();
        if chosen.len() < 3 {
            return Err(MeshError::TooFewDirichlet(chosen.len()));
        }
        if collinear(&chosen.iter().map(|&v| self.positions[v]).collect::<Vec<_>>()) {
            return Err(MeshError::CollinearDirichlet);
        }
        let mut is_fixed = vec![false; self.positions.len()];
        for &v in &chosen {
            is_fixed[v] = true;
        }
        self.frozen = self.faces.iter().map(|f| f.iter().all(|&v| is_fixed[v])).collect();
        self.dirichlet = chosen;
        Ok(self)
    }

    pub fn is_dirichlet(&self) -> Vec<bool> {
        let mut fixed = vec![false; self.positions.len()];
        for &v in &self.dirichlet {
            fixed[v] = true;
        }
        fixed
    }

    /// Normalized average of the unit normals of the adjacent faces.
    pub fn vertex_normals(&self) -> Result<Vec<Point>, MeshError> {
        let mut acc = vec![Point::zeros(); self.positions.len()];
        for f in &self.faces {
            let n = face_cross(&self.positions, *f);
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            for &v in f {
                acc[v] += n / len;
            }
        }
        acc.into_iter()
            .enumerate()
            .map(|(v, n)| {
                let len = n.norm();
                if len < 1e-12 {
                    Err(MeshError::ZeroNormal(v))
                } else {
                    Ok(n / len)
                }
            })
            .collect()
    }

    /// Bounding-box diagonal of the reference configuration.
    pub fn diameter(&self) -> f64 {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for p in &self.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if self.positions.is_empty() {
            0.0
        } else {
            (hi - lo).norm()
        }
    }

    /// Interior hinges adjacent to each face.
    pub fn face_hinges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.faces.len()];
        for (h, hinge) in self.hinges.iter().enumerate() {
            out[hinge.faces[0]].push(h);
            out[hinge.faces[1]].push(h);
        }
        out
    }
}

fn face_cross(positions: &[Point], f: [usize; 3]) -> Point {
    (positions[f[1]] - positions[f[0]]).cross(&(positions[f[2]] - positions[f[0]]))
}

fn collinear(points: &[Point]) -> bool {
    let p0 = points[0];
    let (far, dist) = points
        .iter()
        .map(|p| (p, (p - p0).norm()))
        .fold((&p0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if dist == 0.0 {
        return true;
    }
    let dir = (far - p0) / dist;
    let spread = points.iter().map(|p| dir.cross(&(p - p0)).norm()).fold(0.0, f64::max);
    spread <= 1e-9 * dist
}

/// Unnormalized normals `(n_0, n_1)` of the two hinge faces, oriented so that
/// they coincide for a flat hinge regardless of the face winding in the file.
fn hinge_normals(x: &[Point; 4]) -> (Point, Point) {
    let e = x[1] - x[0];
    (e.cross(&(x[2] - x[0])), (x[3] - x[0]).cross(&e))
}

fn gather(positions: &[Point], hinge: &Hinge) -> [Point; 4] {
    hinge.vertices().map(|v| positions[v])
}

/// Signed dihedral angle of an interior edge.
///
/// The magnitude is `arccos(n_0 . n_1)` of the unit face normals; the sign
/// comes from the orientation of `n_0 x n_1` relative to the shared edge, so
/// the angle is smooth through the flat configuration.
pub fn dihedral_angle(positions: &[Point], hinge: &Hinge) -> Result<f64, MeshError> {
    let x = gather(positions, hinge);
    let (n0, n1) = hinge_normals(&x);
    let (l0, l1) = (n0.norm(), n1.norm());
    let e = x[1] - x[0];
    if 0.5 * l0 < DEGENERATE_AREA {
        return Err(MeshError::DegenerateFace { face: hinge.faces[0], area: 0.5 * l0 });
    }
    if 0.5 * l1 < DEGENERATE_AREA {
        return Err(MeshError::DegenerateFace { face: hinge.faces[1], area: 0.5 * l1 });
    }
    let (n0, n1) = (n0 / l0, n1 / l1);
    let cos = n0.dot(&n1).clamp(-1.0, 1.0);
    let sin = n0.cross(&n1).dot(&(e / e.norm()));
    Ok(sin.atan2(cos))
}

/// Gradient of [`dihedral_angle`] with respect to the stencil positions,
/// in [`Hinge::vertices`] order.
pub fn dihedral_gradient(positions: &[Point], hinge: &Hinge) -> Result<[Point; 4], MeshError> {
    let x = gather(positions, hinge);
    let (n0, n1) = hinge_normals(&x);
    let e = x[1] - x[0];
    let len = e.norm();
    let (l0, l1) = (n0.norm(), n1.norm());
    if 0.5 * l0 < DEGENERATE_AREA {
        return Err(MeshError::DegenerateFace { face: hinge.faces[0], area: 0.5 * l0 });
    }
    if 0.5 * l1 < DEGENERATE_AREA {
        return Err(MeshError::DegenerateFace { face: hinge.faces[1], area: 0.5 * l1 });
    }
    // Moving a wing along its face normal by eps rotates that face by eps / h.
    let g2 = -n0 * (len / (l0 * l0));
    let g3 = -n1 * (len / (l1 * l1));
    let s2 = (x[2] - x[0]).dot(&e) / (len * len);
    let s3 = (x[3] - x[0]).dot(&e) / (len * len);
    let g0 = -g2 * (1.0 - s2) - g3 * (1.0 - s3);
    let g1 = -g2 * s2 - g3 * s3;
    Ok([g0, g1, g2, g3])
}
