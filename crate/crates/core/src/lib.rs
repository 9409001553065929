//! Order-one biharmonic capacity of compacta in three dimensions, Wiener-type
//! series, model geometries and desk-scale Green's function checks.

pub mod biharm;
pub mod capacity;
pub mod cli;
pub mod error;
pub mod fd;
pub mod forms;
pub mod kernel;
pub mod linalg;
pub mod pispace;
pub mod sphgrid;
pub mod wiener;

pub use error::{Error, Result};
pub mod models;
