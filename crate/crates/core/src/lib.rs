//! Phase-field simulation of anti-plane (Mode-III) brittle fracture with a
//! strain-limiting bulk energy and an adaptively chosen regularization length.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`]: quadtree mesh of the unit square with 2:1 balance
//! * [`fem`]: Q1 elements, hanging-node condensation, sparse assembly and solve
//! * [`constitutive`]: strain-limiting energy density and degradation
//! * [`phase_field`]: AT1 damage subproblem with irreversibility
//! * [`length_scale`]: calibration and fixed/global/local regularization length
//! * [`driver`]: staggered time stepping, AMR and solution transfer
//! * [`io`]: configuration, energy log, VTK output

pub mod constitutive;
pub mod driver;
pub mod fem;
pub mod io;
pub mod length_scale;
pub mod mesh;
pub mod phase_field;

pub use driver::{RunReport, Simulation};
pub use io::config::RunConfig;
