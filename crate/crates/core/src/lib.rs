//! Limited-commitment contracting on finite and interval environments.

pub mod contracts;
pub mod env;
pub mod equilibrium;
pub mod expr;
pub mod numeric;
pub mod revisable;
pub mod single;
pub mod agency;
