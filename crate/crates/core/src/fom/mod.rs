//! Full-order parametric advection–diffusion–reaction model: P1 finite
//! elements on the unit square, backward Euler in time, and the dataset
//! built from it.

pub mod band;
pub mod dataset;
pub mod mesh;
pub mod solver;
pub mod splits;

pub use dataset::{generate, Dataset, DatasetConfig, FieldArray, Grid, Manifest, Split};
pub use mesh::{assemble_system, MeshP1, Param};
pub use solver::{simulate, step_backward_euler, TimeConfig, Trajectory};
pub use splits::{build_splits, NormStats, SplitConfig, SplitSpec};
