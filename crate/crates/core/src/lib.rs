//! Matching with contracts for a dynamic manufacturing-service marketplace.
//!
//! Orders arrive each period with a due date; suppliers list machine hours for
//! the next few periods. Every period the open orders are matched to suppliers
//! through contracts by one of three mechanisms: a socially optimal assignment
//! ([`mw`]), a maximum-weight matching among those with the fewest blocking
//! groups ([`mwas`]), and an order-proposing cumulative offer process
//! ([`approx_stable`]). [`audit`] finds blocking pairs and groups, and [`sim`]
//! runs the multi-period marketplace.

pub mod approx_stable;
pub mod audit;
pub mod choice;
pub mod error;
pub mod gen;
pub mod model;
pub mod mw;
pub mod mwas;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
