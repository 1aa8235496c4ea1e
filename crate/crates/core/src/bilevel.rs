//! Abstract pessimistic bilevel machinery over an SPD family `H[u]`.
//!
//! The follower maximizes the compliance `q(u, f) = (Mf)ᵀ H[u]⁻¹ (Mf)` over
//! a polytope given by its extreme points. Since `q(u, ·)` is strictly
//! convex the maximum is attained at an extreme point, so `ψ`, `Ψ` and `Φ`
//! are computed by enumeration. The `η`-regularized value `Φ_η` is
//! evaluated by filtering a uniform grid over the box hull.

use nalgebra::{DMatrix, DVector};

use crate::elastic::ElasticComponents;
use crate::error::BilevelError;

/// Default relative tie tolerance for the argmax set.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Evaluates `(Mf)ᵀ H[u]⁻¹ (Mf)` for a family of SPD matrices.
pub trait SpdProvider: Sync {
    fn dim(&self) -> usize;
    fn quad_value(&self, u: &[f64], f: &[f64]) -> Result<f64, BilevelError>;
}

/// Dense provider from a closure `u ↦ H[u]` and a diagonal mass.
pub struct DenseProvider<H> {
    pub hessian: H,
    pub mass: Vec<f64>,
}

impl<H> SpdProvider for DenseProvider<H>
where
    H: Fn(&[f64]) -> DMatrix<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.mass.len()
    }

    fn quad_value(&self, u: &[f64], f: &[f64]) -> Result<f64, BilevelError> {
        let h = (self.hessian)(u);
        let chol = h.cholesky().ok_or_else(|| BilevelError::NotSpd(u.to_vec()))?;
        let mf = DVector::from_iterator(f.len(), f.iter().zip(&self.mass).map(|(a, m)| a * m));
        Ok(mf.dot(&chol.solve(&mf)))
    }
}

/// Shell compliance `fᵀ M H[u]⁻¹ M f` on the full vertex DOF vector.
pub struct ShellProvider<'a> {
    pub components: &'a ElasticComponents,
}

impl SpdProvider for ShellProvider<'_> {
    fn dim(&self) -> usize {
        3 * self.components.n_vertices()
    }

    fn quad_value(&self, u: &[f64], f: &[f64]) -> Result<f64, BilevelError> {
        let factor = self.components.factorize(u).map_err(|_| BilevelError::NotSpd(u.to_vec()))?;
        let rhs = self.components.mass_load(f);
        let y = factor.solve(&rhs);
        Ok(rhs.iter().zip(&y).map(|(a, b)| a * b).sum())
    }
}

/// Closed-form provider of the two-dimensional example:
/// `H[u]⁻¹ = [[1, u−1], [u−1, 1]]`, `M = Id`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyProvider;

impl SpdProvider for ToyProvider {
    fn dim(&self) -> usize {
        2
    }

    fn quad_value(&self, u: &[f64], f: &[f64]) -> Result<f64, BilevelError> {
        let c = u[0] - 1.0;
        if !(c.abs() < 1.0) {
            return Err(BilevelError::NotSpd(u.to_vec()));
        }
        Ok(f[0] * f[0] + f[1] * f[1] + 2.0 * c * f[0] * f[1])
    }
}

pub type UpperCost = Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Lower level with polytope `F = conv(P)` and upper-level cost `J`.
pub struct QuadraticLowerLevel<P> {
    pub provider: P,
    pub extreme_points: Vec<Vec<f64>>,
    pub cost: UpperCost,
    /// Axis-aligned hull of `F` used by the `Φ_η` grid; `None` means the
    /// bounding box of the extreme points.
    pub box_hull: Option<Vec<(f64, f64)>>,
}

impl<P: SpdProvider> QuadraticLowerLevel<P> {
    pub fn new(provider: P, extreme_points: Vec<Vec<f64>>, cost: UpperCost) -> Result<Self, BilevelError> {
        if extreme_points.is_empty() {
            return Err(BilevelError::NoExtremePoints);
        }
        Ok(Self { provider, extreme_points, cost, box_hull: None })
    }

    pub fn quad_value(&self, u: &[f64], f: &[f64]) -> Result<f64, BilevelError> {
        self.provider.quad_value(u, f)
    }

    /// `ψ[u] = max_{f ∈ P} q(u, f)`.
    pub fn psi(&self, u: &[f64]) -> Result<f64, BilevelError> {
        let mut best = f64::NEG_INFINITY;
        for f in &self.extreme_points {
            best = best.max(self.quad_value(u, f)?);
        }
        Ok(best)
    }

    /// Extreme points within `rel_tol · max(1, ψ)` of the optimum.
    pub fn big_psi(&self, u: &[f64], rel_tol: f64) -> Result<Vec<Vec<f64>>, BilevelError> {
        let values = self
            .extreme_points
            .iter()
            .map(|f| self.quad_value(u, f))
            .collect::<Result<Vec<_>, _>>()?;
        let psi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = rel_tol * psi.abs().max(1.0);
        Ok(self
            .extreme_points
            .iter()
            .zip(&values)
            .filter(|(_, &q)| psi - q <= tol)
            .map(|(f, _)| f.clone())
            .collect())
    }

    /// Pessimistic value `Φ[u] = max_{f ∈ Ψ[u]} J[u, f]`.
    pub fn phi(&self, u: &[f64], rel_tol: f64) -> Result<f64, BilevelError> {
        Ok(self
            .big_psi(u, rel_tol)?
            .iter()
            .map(|f| (self.cost)(u, f))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn hull(&self) -> Vec<(f64, f64)> {
        self.box_hull.clone().unwrap_or_else(|| {
            let d = self.extreme_points[0].len();
            (0..d)
                .map(|k| {
                    self.extreme_points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
                        (lo.min(f[k]), hi.max(f[k]))
                    })
                })
                .collect()
        })
    }

    /// Grid approximation of `sup { J[u, f] : f ∈ F, ψ[u] − q(u, f) < η }`
    /// with `resolution` points per dimension of the box hull.
    ///
    /// Every grid point is treated as admissible, so this is exact in the
    /// grid limit only when `F` is the box itself.
    pub fn phi_eta(&self, u: &[f64], eta: f64, resolution: usize) -> Result<f64, BilevelError> {
        if !(eta > 0.0) {
            return Err(BilevelError::InvalidEta(eta));
        }
        let hull = self.hull();
        if hull.is_empty() || hull.len() > 3 || resolution < 2 {
            return Err(BilevelError::NoBox);
        }
        let psi = self.psi(u)?;
        let d = hull.len();
        let total = resolution.pow(d as u32);
        let mut best = f64::NEG_INFINITY;
        let mut f = vec![0.0; d];
        for index in 0..total {
            let mut rest = index;
            for (k, (lo, hi)) in hull.iter().enumerate() {
                let i = rest % resolution;
                rest /= resolution;
                f[k] = lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
            }
            if psi - self.quad_value(u, &f)? < eta - 1e-12 {
                best = best.max((self.cost)(u, &f));
            }
        }
        if best == f64::NEG_INFINITY {
            return Err(BilevelError::EmptyFilteredSet);
        }
        Ok(best)
    }
}

/// The two-dimensional example with a jump in `Φ` at `u = 1`:
/// `F = [−1, 1] × [0, 1]`, `J[u, f] = u f₁`, `U = [1/2, 3/2]`.
pub struct ToyInstance;

impl ToyInstance {
    pub const U_MIN: f64 = 0.5;
    pub const U_MAX: f64 = 1.5;

    pub fn lower_level() -> QuadraticLowerLevel<ToyProvider> {
        let points = vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 1.0], vec![1.0, 1.0]];
        let mut lower =
            QuadraticLowerLevel::new(ToyProvider, points, Box::new(|u, f| u[0] * f[0])).expect("nonempty");
        lower.box_hull = Some(vec![(-1.0, 1.0), (0.0, 1.0)]);
        lower
    }

    /// Same instance through the generic dense solver with `H[u]` formed
    /// by inverting the closed-form `H[u]⁻¹`.
    pub fn dense_lower_level() -> QuadraticLowerLevel<DenseProvider<impl Fn(&[f64]) -> DMatrix<f64> + Sync>> {
        let hessian = |u: &[f64]| {
            let c = u[0] - 1.0;
            DMatrix::from_row_slice(2, 2, &[1.0, -c, -c, 1.0]) / (1.0 - c * c)
        };
        let points = vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 1.0], vec![1.0, 1.0]];
        let provider = DenseProvider { hessian, mass: vec![1.0, 1.0] };
        let mut lower = QuadraticLowerLevel::new(provider, points, Box::new(|u, f| u[0] * f[0])).expect("nonempty");
        lower.box_hull = Some(vec![(-1.0, 1.0), (0.0, 1.0)]);
        lower
    }

    pub fn psi_closed(u: f64) -> f64 {
        2.0 + 2.0 * (u - 1.0).abs()
    }

    pub fn phi_closed(u: f64) -> f64 {
        if u >= 1.0 {
            u
        } else {
            -u
        }
    }
}

/// Gap between the perturbed and unperturbed outcome maps of the example,
/// `v ↦ Φ[u_k v]` against `v ↦ Φ[v]`, sampled on `points` uniformly spaced
/// values of `v ∈ [9/10, 11/10]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeGap {
    /// Maximum absolute difference over the grid.
    pub linf: f64,
    /// Grid average of the absolute difference.
    pub l1: f64,
}

pub fn toy_linf_gap(u_k: f64, points: usize) -> Result<OutcomeGap, BilevelError> {
    let lower = ToyInstance::lower_level();
    let (lo, hi) = (0.9, 1.1);
    let mut linf: f64 = 0.0;
    let mut sum = 0.0;
    for i in 0..points {
        let v = if points == 1 { lo } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 };
        let gap = (lower.phi(&[u_k * v], DEFAULT_REL_TOL)? - lower.phi(&[v], DEFAULT_REL_TOL)?).abs();
        linf = linf.max(gap);
        sum += gap;
    }
    Ok(OutcomeGap { linf, l1: sum / points.max(1) as f64 })
}
