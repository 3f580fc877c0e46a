//! Skeletal density fields and shape-complementarity guidance for virtual assembly.
//!
//! A part is a closed triangle mesh ([`TriMesh`]). Its skeletal density is a
//! complex field concentrated near the medial loci of the solid, positive
//! imaginary inside and negative imaginary outside. Precomputing it on a grid
//! ([`build_affinity_grid`]) lets two parts be scored against each other at any
//! relative pose ([`score`]), which yields an energy well at the assembled
//! configuration and a guidance [`Wrench`] everywhere else.

pub mod affinity;
pub mod bvh;
pub mod distance;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod mesh_io;
pub mod protocol;
pub mod scenes;
pub mod session;
pub mod trajectory;

pub use affinity::{affinity_at, affinity_gradient_at, build_affinity_grid, Truncation};
pub use distance::{DistanceResult, Membership, Solid};
pub use energy::{
    analytic_gradient, energy, fdm_gradient, score, score_relative, stiffness, sweep_rotation,
    sweep_translation, wrench, wrench_with, GradientBackend, PosePair, ScoreGradient, ScoreResult,
    StiffnessMatrix, SweepAxis, SweepTable, Wrench,
};
pub use error::{Error, Result};
pub use geometry::{Aabb, AxisAngle, Complex, RigidTransform, TriMesh, Vec3};
pub use grid::{AffinityGrid, GridLayout};
pub use kernel::{phi_kernel, phi_partials, ComplexSpreadSample, KernelParams};
pub use mesh_io::{load_mesh, save_mesh};
pub use protocol::{Coupling, SessionSettings, WireMessage, WirePose};
pub use session::{run_session, Scene, SessionState};
pub use trajectory::{run_trace, Trajectory};

// The guide's code blocks run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/sessions.md")]
    mod sessions {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
