//! Guaranteed bounds on the smallest load perturbation that renders a DC-OPF
//! instance infeasible.
//!
//! The pipeline is:
//!
//! 1. [`case`] parses a MATPOWER case into a per-unit [`NetworkCase`].
//! 2. [`model`] builds the PTDF matrix and the reduced feasibility polytope
//!    `{p : A p + B δ + c <= 0}` and solves the nominal DC-OPF.
//! 3. [`attack`] searches for small infeasibility-inducing perturbations
//!    (Farkas certificates) and certifies every upper bound it reports.
//! 4. [`defense`] computes affine generation policies `p = p0 + G δ` whose
//!    radius `t` is a guaranteed lower bound on the attack size.
//! 5. [`squeeze`] drives both bounds together and assembles a report.
//!
//! ```no_run
//! use dcattack::{case, model, squeeze};
//!
//! let case = case::load_case("data/pglib/pglib_opf_case5_pjm.m").unwrap();
//! let report = squeeze::squeeze_run(&case, &squeeze::SqueezeConfig::default()).unwrap();
//! println!("{} <= |δ*|² <= {:?}", report.lb, report.ub);
//! ```

pub mod attack;
pub mod case;
pub mod cli;
pub mod defense;
pub mod error;
pub mod lin_solve;
pub mod model;
pub mod numeric;
pub mod report;
pub mod squeeze;

pub use case::NetworkCase;
pub use error::{Error, Result};
pub use model::{FeasibilityMatrices, PtdfSet};
pub use numeric::NumericPolicy;
