//! Numerical surface holonomy for 2-connections on nonabelian gerbes.
//!
//! Local data lives in [`connection`] and [`bundle`]; [`path_transport`] and
//! [`surface_transport`] integrate the transport equations on a patch and
//! [`global_holonomy`] glues patches over a mesh into one element of `H`.
//!
//! ```
//! use twohol::bundle::sphere_two_chart_scenario;
//! use twohol::global_holonomy::global_holonomy;
//! use twohol::numerics::StepSpec;
//!
//! let (bundle, gamma) = sphere_two_chart_scenario(1)?;
//! let hol = global_holonomy(&gamma, &bundle, 8, StepSpec::rk4(64))?;
//! let h = hol.hol()[(0, 0)];
//! assert!((h.re - 1.0).abs() < 1e-5 && h.im.abs() < 1e-5);
//! # Ok::<(), twohol::Error>(())
//! ```

pub mod algebra;
pub mod bundle;
pub mod cli;
pub mod connection;
pub mod error;
pub mod global_holonomy;
pub mod numerics;
pub mod path_transport;
pub mod report;
pub mod surface_transport;

pub use error::{Error, Result};
