//! Pessimistic bilevel stochastic optimization of discrete elastic shells.
//!
//! A leader chooses per-face material thickness, a follower answers with
//! the admissible load of maximal compliance, and manufacturing noise
//! perturbs the thickness multiplicatively. The crate provides the shell
//! model, both optimization levels, the abstract bilevel oracles and the
//! empirical risk measures used to evaluate designs.

pub mod bilevel;
pub mod elastic;
pub mod error;
pub mod follower;
pub mod leader;
pub mod mesh;
pub mod risk;
pub mod shapes;
pub mod sparse;

pub use elastic::{Displacement, ElasticComponents, ElasticParams, MaterialField};
pub use error::{BilevelError, ElasticError, FollowerError, LeaderError, MeshError, RiskError};
pub use mesh::{DirichletSelector, Point, ReferenceQuantities, ShellMesh};
