//! Forward simulation of relativistic collisionless and collisional
//! particle kinetics on explicit globally hyperbolic product spacetimes,
//! plus the inverse light-probe toolkit built on top of it: colliding-beam
//! sources, lightlike measurement sections, singularity detection, and
//! recovery of earliest light-observation data.

pub mod boltzmann;
pub mod causal;
pub mod collision;
pub mod error;
pub mod geodesics;
pub mod grid;
pub mod kinetic;
pub mod probe;
pub mod quad;
pub mod scenario;
pub mod spacetime;

pub use error::{Error, Result};
pub use grid::{CoordBox, GridAxis, RectGrid};
pub use kinetic::{PhaseDensity, SourcePatch};
pub use spacetime::{CausalClass, CausalKind, MetricSpec, TimeDirection};
