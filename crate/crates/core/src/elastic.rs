//! Discrete-shell elasticity: membrane and bending energies, their
//! linearization around the reference configuration, and the state solve.
//!
//! The Hessian of the stored energy at zero displacement is kept as a set of
//! per-element blocks so that `H[u]` for any thickness field is a cheap
//! weighted sum:
//!
//! ```text
//! H[u] = Σ_t u_t K_t^mem + γ Σ_e u_e³ K_e^bend,   u_e = (u_t + u_t') / 2
//! ```
//!
//! Dirichlet vertices are eliminated, so every matrix here lives on the
//! reduced set of free degrees of freedom.

use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3x2, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{ElasticError, MeshError};
use crate::mesh::{dihedral_angle, dihedral_gradient, Hinge, Point, ReferenceQuantities, ShellMesh};
use crate::sparse::{SkylineCholesky, SkylineMatrix, SkylinePattern};

pub type MembraneBlock = SMatrix<f64, 9, 9>;
pub type BendingBlock = SMatrix<f64, 12, 12>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElasticParams {
    pub mu: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self { mu: 1.0, lambda: 1.0, gamma: 1.0 }
    }
}

impl ElasticParams {
    /// Coefficient of `log det A` that makes the identity stress-free.
    pub fn log_coefficient(&self) -> f64 {
        0.5 * self.mu + 0.25 * self.lambda
    }
}

/// Per-face thickness together with its admissible box and volume cap.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub thickness: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub volume_max: f64,
    pub frozen: Vec<bool>,
}

impl MaterialField {
    pub fn volume(&self, face_areas: &[f64]) -> f64 {
        volume(&self.thickness, face_areas)
    }

    /// Strict interior of the box and volume constraints; frozen faces are
    /// exempt from the box.
    pub fn check_strictly_feasible(&self, face_areas: &[f64]) -> Result<(), String> {
        check_strictly_feasible(&self.thickness, &self.frozen, face_areas, self.lower, self.upper, self.volume_max)
    }
}

pub fn volume(thickness: &[f64], face_areas: &[f64]) -> f64 {
    thickness.iter().zip(face_areas).map(|(u, a)| u * a).sum()
}

pub fn check_strictly_feasible(
    thickness: &[f64],
    frozen: &[bool],
    face_areas: &[f64],
    lower: f64,
    upper: f64,
    volume_max: f64,
) -> Result<(), String> {
    if thickness.len() != face_areas.len() {
        return Err(format!("expected {} thickness values, got {}", face_areas.len(), thickness.len()));
    }
    for (t, &u) in thickness.iter().enumerate() {
        if !frozen[t] && !(u > lower && u < upper) {
            return Err(format!("face {t}: thickness {u} outside ({lower}, {upper})"));
        }
        if !(u > 0.0) {
            return Err(format!("face {t}: thickness {u} is not positive"));
        }
    }
    let vol = volume(thickness, face_areas);
    if !(vol < volume_max) {
        return Err(format!("volume {vol} is not below V+ = {volume_max}"));
    }
    Ok(())
}

/// Nodal displacement, three components per vertex, zero on Dirichlet vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub values: Vec<f64>,
}

impl Displacement {
    pub fn vertex(&self, v: usize) -> Point {
        Point::new(self.values[3 * v], self.values[3 * v + 1], self.values[3 * v + 2])
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.values.len() / 3).map(|v| self.vertex(v).norm()).collect()
    }

    pub fn deformed(&self, reference: &[Point]) -> Vec<Point> {
        deformed_positions(reference, &self.values)
    }
}

pub fn deformed_positions(reference: &[Point], y: &[f64]) -> Vec<Point> {
    reference
        .iter()
        .enumerate()
        .map(|(v, p)| p + Point::new(y[3 * v], y[3 * v + 1], y[3 * v + 2]))
        .collect()
}

fn frame(positions: &[Point], f: [usize; 3]) -> Matrix3x2<f64> {
    let e1 = positions[f[1]] - positions[f[0]];
    let e2 = positions[f[2]] - positions[f[0]];
    Matrix3x2::from_columns(&[e1, e2])
}

/// Metric `G = DxᵀDx` of the affine map from the unit reference triangle.
pub fn face_metric(positions: &[Point], face: [usize; 3]) -> Matrix2<f64> {
    let d = frame(positions, face);
    d.transpose() * d
}

/// `Ĝ⁻¹ G` for one face.
pub fn cauchy_green(
    reference: &[Point],
    deformed: &[Point],
    face_index: usize,
    face: [usize; 3],
) -> Result<Matrix2<f64>, ElasticError> {
    let g_ref = face_metric(reference, face);
    let inv = g_ref.try_inverse().ok_or(MeshError::DegenerateFace { face: face_index, area: 0.0 })?;
    let a = inv * face_metric(deformed, face);
    let det = a.determinant();
    if !(det > 1e-14) {
        return Err(ElasticError::InvertedElement { face: face_index, det });
    }
    Ok(a)
}

/// Neo-Hookean density `μ/2 tr A + λ/4 det A − c log det A − μ − λ/4`
/// with `c = μ/2 + λ/4`.
pub fn membrane_density(a: &Matrix2<f64>, params: &ElasticParams) -> Result<f64, ElasticError> {
    let det = a.determinant();
    if !(det > 0.0) {
        return Err(ElasticError::NonPositiveDeterminant(det));
    }
    let ElasticParams { mu, lambda, .. } = *params;
    Ok(0.5 * mu * a.trace() + 0.25 * lambda * det - params.log_coefficient() * det.ln() - mu - 0.25 * lambda)
}

/// `∂W/∂A`.
pub fn membrane_density_gradient(a: &Matrix2<f64>, params: &ElasticParams) -> Result<Matrix2<f64>, ElasticError> {
    let det = a.determinant();
    if !(det > 0.0) {
        return Err(ElasticError::NonPositiveDeterminant(det));
    }
    let inv_t = a.try_inverse().ok_or(ElasticError::NonPositiveDeterminant(det))?.transpose();
    Ok(Matrix2::identity() * (0.5 * params.mu) + inv_t * (0.25 * params.lambda * det - params.log_coefficient()))
}

fn check_lengths(mesh: &ShellMesh, u: &[f64], y: &[f64]) -> Result<(), ElasticError> {
    if u.len() != mesh.faces.len() {
        return Err(ElasticError::Dimension { expected: mesh.faces.len(), got: u.len() });
    }
    if y.len() != 3 * mesh.positions.len() {
        return Err(ElasticError::Dimension { expected: 3 * mesh.positions.len(), got: y.len() });
    }
    Ok(())
}

pub fn membrane_energy(
    mesh: &ShellMesh,
    refq: &ReferenceQuantities,
    u: &[f64],
    y: &[f64],
    params: &ElasticParams,
) -> Result<f64, ElasticError> {
    check_lengths(mesh, u, y)?;
    let x = deformed_positions(&mesh.positions, y);
    let mut total = 0.0;
    for (t, &face) in mesh.faces.iter().enumerate() {
        let a = cauchy_green(&mesh.positions, &x, t, face)?;
        total += refq.face_areas[t] * u[t] * membrane_density(&a, params)?;
    }
    Ok(total)
}

pub fn bending_energy(
    mesh: &ShellMesh,
    refq: &ReferenceQuantities,
    u: &[f64],
    y: &[f64],
    params: &ElasticParams,
) -> Result<f64, ElasticError> {
    check_lengths(mesh, u, y)?;
    let x = deformed_positions(&mesh.positions, y);
    let mut total = 0.0;
    for hinge in &mesh.hinges {
        let (weight, _) = hinge_weight(refq, hinge, u);
        let delta = dihedral_angle(&x, hinge)? - dihedral_angle(&mesh.positions, hinge)?;
        total += params.gamma * weight * delta * delta;
    }
    Ok(total)
}

/// `(u_e³ l_e² / a_e, u_e)` for a hinge.
fn hinge_weight(refq: &ReferenceQuantities, hinge: &Hinge, u: &[f64]) -> (f64, f64) {
    let ue = 0.5 * (u[hinge.faces[0]] + u[hinge.faces[1]]);
    let l = refq.edge_lengths[hinge.edge_index];
    let ae = refq.edge_areas[hinge.edge_index].expect("hinges are interior edges");
    (ue * ue * ue * l * l / ae, ue)
}

pub fn total_energy(
    mesh: &ShellMesh,
    refq: &ReferenceQuantities,
    u: &[f64],
    y: &[f64],
    params: &ElasticParams,
) -> Result<f64, ElasticError> {
    Ok(membrane_energy(mesh, refq, u, y, params)? + bending_energy(mesh, refq, u, y, params)?)
}

/// `W[u, y] − fᵀ M y` with the lumped vertex-area mass matrix.
pub fn free_energy(
    mesh: &ShellMesh,
    refq: &ReferenceQuantities,
    u: &[f64],
    f: &[f64],
    y: &[f64],
    params: &ElasticParams,
) -> Result<f64, ElasticError> {
    let load: f64 = (0..y.len()).map(|i| f[i] * refq.vertex_areas[i / 3] * y[i]).sum();
    Ok(total_energy(mesh, refq, u, y, params)? - load)
}

/// `∂_y W[u, y]`, full length (Dirichlet entries included).
pub fn energy_gradient(
    mesh: &ShellMesh,
    refq: &ReferenceQuantities,
    u: &[f64],
    y: &[f64],
    params: &ElasticParams,
) -> Result<Vec<f64>, ElasticError> {
    check_lengths(mesh, u, y)?;
    let x = deformed_positions(&mesh.positions, y);
    let mut grad = vec![0.0; y.len()];
    for (t, &face) in mesh.faces.iter().enumerate() {
        let a = cauchy_green(&mesh.positions, &x, t, face)?;
        let g_inv = face_metric(&mesh.positions, face).try_inverse().expect("checked in cauchy_green");
        let p = g_inv * membrane_density_gradient(&a, params)?;
        let d = frame(&x, face) * (p + p.transpose()) * (refq.face_areas[t] * u[t]);
        let (c1, c2) = (d.column(0).into_owned(), d.column(1).into_owned());
        for c in 0..3 {
            grad[3 * face[1] + c] += c1[c];
            grad[3 * face[2] + c] += c2[c];
            grad[3 * face[0] + c] -= c1[c] + c2[c];
        }
    }
    for hinge in &mesh.hinges {
        let (weight, _) = hinge_weight(refq, hinge, u);
        let delta = dihedral_angle(&x, hinge)? - dihedral_angle(&mesh.positions, hinge)?;
        let dtheta = dihedral_gradient(&x, hinge)?;
        let scale = 2.0 * params.gamma * weight * delta;
        for (k, &v) in hinge.vertices().iter().enumerate() {
            for c in 0..3 {
                grad[3 * v + c] += scale * dtheta[k][c];
            }
        }
    }
    Ok(grad)
}

/// Second derivative of `a_t W(Ĝ⁻¹G)` at zero displacement (unit thickness).
///
/// At the identity `∂W/∂A = 0`, so only the first-order variation of `A`
/// contributes: `d²W[B, B] = λ/4 (tr B)² + μ/2 tr(B²)`.
fn membrane_block(positions: &[Point], face: [usize; 3], area: f64, params: &ElasticParams) -> Option<MembraneBlock> {
    let x = frame(positions, face);
    let g_inv = (x.transpose() * x).try_inverse()?;
    let mut b = [Matrix2::<f64>::zeros(); 9];
    for (i, bi) in b.iter_mut().enumerate() {
        let (vertex, coord) = (i / 3, i % 3);
        let mut dx = Matrix3x2::<f64>::zeros();
        match vertex {
            0 => {
                dx[(coord, 0)] = -1.0;
                dx[(coord, 1)] = -1.0;
            }
            1 => dx[(coord, 0)] = 1.0,
            _ => dx[(coord, 1)] = 1.0,
        }
        let dg = dx.transpose() * x + x.transpose() * dx;
        *bi = g_inv * dg;
    }
    let mut k = MembraneBlock::zeros();
    for i in 0..9 {
        for j in 0..9 {
            k[(i, j)] = area * (0.25 * params.lambda * b[i].trace() * b[j].trace() + 0.5 * params.mu * (b[i] * b[j]).trace());
        }
    }
    Some((k + k.transpose()) * 0.5)
}

/// Second derivative of `l_e²/a_e (θ − θ̂)²` at zero displacement.
fn bending_block(positions: &[Point], hinge: &Hinge, refq: &ReferenceQuantities) -> Result<BendingBlock, MeshError> {
    let grad = dihedral_gradient(positions, hinge)?;
    let g = SVector::<f64, 12>::from_fn(|i, _| grad[i / 3][i % 3]);
    let l = refq.edge_lengths[hinge.edge_index];
    let ae = refq.edge_areas[hinge.edge_index].expect("hinges are interior edges");
    let k = g * g.transpose() * (2.0 * l * l / ae);
    Ok((k + k.transpose()) * 0.5)
}

/// Precomputed stiffness blocks, the lumped mass and the reduced DOF map.
#[derive(Debug, Clone)]
pub struct ElasticComponents {
    params: ElasticParams,
    faces: Vec<[usize; 3]>,
    hinges: Vec<Hinge>,
    face_hinges: Vec<Vec<usize>>,
    frozen: Vec<bool>,
    free_dof: Vec<Option<usize>>,
    n_free: usize,
    membrane: Vec<MembraneBlock>,
    bending: Vec<BendingBlock>,
    vertex_areas: Vec<f64>,
    face_areas: Vec<f64>,
    pattern: Arc<SkylinePattern>,
}

/// Cholesky factor of `H[u]` on the free degrees of freedom.
#[derive(Debug, Clone)]
pub struct StiffnessFactor {
    chol: SkylineCholesky,
}

impl StiffnessFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.chol.solve(rhs)
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }
}

impl ElasticComponents {
    pub fn assemble(mesh: &ShellMesh, refq: &ReferenceQuantities, params: ElasticParams) -> Result<Self, ElasticError> {
        let n_vertices = mesh.positions.len();
        let fixed = mesh.is_dirichlet();
        let mut free_dof = vec![None; 3 * n_vertices];
        let mut n_free = 0;
        for v in 0..n_vertices {
            if !fixed[v] {
                for c in 0..3 {
                    free_dof[3 * v + c] = Some(n_free);
                    n_free += 1;
                }
            }
        }
        let mut membrane = Vec::with_capacity(mesh.faces.len());
        for (t, &face) in mesh.faces.iter().enumerate() {
            let block = membrane_block(&mesh.positions, face, refq.face_areas[t], &params)
                .ok_or(MeshError::DegenerateFace { face: t, area: refq.face_areas[t] })?;
            membrane.push(block);
        }
        let bending = mesh
            .hinges
            .iter()
            .map(|h| bending_block(&mesh.positions, h, refq))
            .collect::<Result<Vec<_>, _>>()?;

        let mut cliques: Vec<Vec<usize>> = Vec::with_capacity(mesh.faces.len() + mesh.hinges.len());
        let dofs_of = |verts: &[usize]| -> Vec<usize> {
            verts.iter().flat_map(|&v| (0..3).map(move |c| 3 * v + c)).filter_map(|g| free_dof[g]).collect()
        };
        for face in &mesh.faces {
            cliques.push(dofs_of(face));
        }
        for hinge in &mesh.hinges {
            cliques.push(dofs_of(&hinge.vertices()));
        }
        let pattern = Arc::new(SkylinePattern::from_cliques(n_free, &cliques));
        let frozen = if mesh.frozen.len() == mesh.faces.len() { mesh.frozen.clone() } else { vec![false; mesh.faces.len()] };
        Ok(Self {
            params,
            faces: mesh.faces.clone(),
            hinges: mesh.hinges.clone(),
            face_hinges: mesh.face_hinges(),
            frozen,
            free_dof,
            n_free,
            membrane,
            bending,
            vertex_areas: refq.vertex_areas.clone(),
            face_areas: refq.face_areas.clone(),
            pattern,
        })
    }

    pub fn params(&self) -> &ElasticParams {
        &self.params
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_areas.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn membrane_block(&self, t: usize) -> &MembraneBlock {
        &self.membrane[t]
    }

    pub fn bending_block(&self, h: usize) -> &BendingBlock {
        &self.bending[h]
    }

    pub fn hinge_count(&self) -> usize {
        self.hinges.len()
    }

    /// Reduced index of a global DOF, `None` for Dirichlet DOFs.
    pub fn free_dof(&self, global: usize) -> Option<usize> {
        self.free_dof[global]
    }

    /// Diagonal of `M`: each vertex area repeated for its three coordinates.
    pub fn mass_diagonal(&self) -> Vec<f64> {
        self.vertex_areas.iter().flat_map(|&a| [a, a, a]).collect()
    }

    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (g, slot) in self.free_dof.iter().enumerate() {
            if let Some(i) = slot {
                out[*i] = full[g];
            }
        }
        out
    }

    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        self.free_dof.iter().map(|slot| slot.map_or(0.0, |i| reduced[i])).collect()
    }

    /// `M f` restricted to the free DOFs.
    pub fn mass_load(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (g, slot) in self.free_dof.iter().enumerate() {
            if let Some(i) = slot {
                out[*i] = self.vertex_areas[g / 3] * f[g];
            }
        }
        out
    }

    fn face_dofs(&self, t: usize) -> [Option<usize>; 9] {
        let f = self.faces[t];
        std::array::from_fn(|i| self.free_dof[3 * f[i / 3] + i % 3])
    }

    fn hinge_dofs(&self, h: usize) -> [Option<usize>; 12] {
        let v = self.hinges[h].vertices();
        std::array::from_fn(|i| self.free_dof[3 * v[i / 3] + i % 3])
    }

    fn hinge_thickness(&self, h: usize, u: &[f64]) -> f64 {
        let [t0, t1] = self.hinges[h].faces;
        0.5 * (u[t0] + u[t1])
    }

    fn check_thickness(&self, u: &[f64]) -> Result<(), ElasticError> {
        if u.len() != self.faces.len() {
            return Err(ElasticError::Dimension { expected: self.faces.len(), got: u.len() });
        }
        if let Some((face, &value)) = u.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(ElasticError::NonPositiveThickness { face, value });
        }
        Ok(())
    }

    /// Membrane and bending parts of `H[u]` separately (bending includes γ).
    pub fn stiffness_parts(&self, u: &[f64]) -> Result<(SkylineMatrix, SkylineMatrix), ElasticError> {
        self.check_thickness(u)?;
        let mut mem = SkylineMatrix::zeros(Arc::clone(&self.pattern));
        for t in 0..self.faces.len() {
            mem.add_block(&self.face_dofs(t), &self.membrane[t], u[t]);
        }
        let mut bend = SkylineMatrix::zeros(Arc::clone(&self.pattern));
        for h in 0..self.hinges.len() {
            let ue = self.hinge_thickness(h, u);
            bend.add_block(&self.hinge_dofs(h), &self.bending[h], self.params.gamma * ue * ue * ue);
        }
        Ok((mem, bend))
    }

    /// `H[u]` on the free DOFs.
    pub fn stiffness(&self, u: &[f64]) -> Result<SkylineMatrix, ElasticError> {
        let (mut mem, bend) = self.stiffness_parts(u)?;
        mem.axpy(1.0, &bend);
        Ok(mem)
    }

    pub fn factorize(&self, u: &[f64]) -> Result<StiffnessFactor, ElasticError> {
        let h = self.stiffness(u)?;
        self.factorize_matrix(&h)
    }

    pub fn factorize_matrix(&self, h: &SkylineMatrix) -> Result<StiffnessFactor, ElasticError> {
        h.cholesky().map(|chol| StiffnessFactor { chol }).map_err(|pivot| {
            let global = self.free_dof.iter().position(|s| *s == Some(pivot)).unwrap_or(0);
            ElasticError::NotPositiveDefinite { vertex: global / 3, coord: global % 3, pivot }
        })
    }

    /// `y = H[u]⁻¹ M f`, returned on all vertices.
    pub fn solve_state(&self, factor: &StiffnessFactor, f: &[f64]) -> Displacement {
        let rhs = self.mass_load(f);
        let y = if rhs.iter().all(|&r| r == 0.0) { vec![0.0; self.n_free] } else { factor.solve(&rhs) };
        Displacement { values: self.expand(&y) }
    }

    /// `∂H/∂u_t` as a matrix on the free DOFs.
    pub fn dh_du(&self, u: &[f64], t: usize) -> Result<SkylineMatrix, ElasticError> {
        self.check_thickness(u)?;
        if self.frozen[t] {
            return Err(ElasticError::FrozenFace(t));
        }
        let mut d = SkylineMatrix::zeros(Arc::clone(&self.pattern));
        d.add_block(&self.face_dofs(t), &self.membrane[t], 1.0);
        for &h in &self.face_hinges[t] {
            let ue = self.hinge_thickness(h, u);
            d.add_block(&self.hinge_dofs(h), &self.bending[h], self.params.gamma * 1.5 * ue * ue);
        }
        Ok(d)
    }

    /// `aᵀ (∂H/∂u_t) b` for every face, from full-length vectors that vanish
    /// on Dirichlet DOFs. Frozen faces get 0.
    pub fn dh_du_bilinear(&self, u: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
        let hinge_terms: Vec<f64> = (0..self.hinges.len())
            .map(|h| {
                let verts = self.hinges[h].vertices();
                let gather = |x: &[f64]| SVector::<f64, 12>::from_fn(|i, _| x[3 * verts[i / 3] + i % 3]);
                let ue = self.hinge_thickness(h, u);
                let q = gather(a).dot(&(self.bending[h] * gather(b)));
                self.params.gamma * 1.5 * ue * ue * q
            })
            .collect();
        (0..self.faces.len())
            .map(|t| {
                if self.frozen[t] {
                    return 0.0;
                }
                let f = self.faces[t];
                let gather = |x: &[f64]| SVector::<f64, 9>::from_fn(|i, _| x[3 * f[i / 3] + i % 3]);
                let mem = gather(a).dot(&(self.membrane[t] * gather(b)));
                mem + self.face_hinges[t].iter().map(|&h| hinge_terms[h]).sum::<f64>()
            })
            .collect()
    }
}
