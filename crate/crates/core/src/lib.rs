//! Approximation schemes for TSP and Steiner tree in d-dimensional hyperbolic
//! space (d = 2 or 3), in the Poincaré upper half-space model.
//!
//! The pipeline: normalize the input into a bounding horobox, snap points to
//! centers of small cells of a hybrid hyperbolic quadtree, apply a random
//! shift, build the compressed tree, place portals on sibling facets, and run
//! a portal-respecting dynamic program. `verify` holds exact oracles and an
//! empirical harness for the crossing/patching bounds that drive the
//! approximation guarantee.

pub mod constants;
pub mod error;
pub mod hgeom;
pub mod hybridtree;
pub mod io;
pub mod portals;
pub mod dyntsp;
pub mod steiner;
pub mod verify;

pub use error::{Error, Result};
