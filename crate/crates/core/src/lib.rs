//! Policy-cycle workflow engine with PROV-style provenance capture.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO: every command
//! carries its own timestamp, and persistence, transport and clocks live in
//! the `pcp` companion crate.

#![no_std]

extern crate alloc;

pub mod engine;
pub mod ids;
pub mod metamodel;
pub mod prov;
pub mod routing;
pub mod runtime;
pub mod store;
pub mod time;
pub mod workload;

pub use ids::*;
pub use time::Timestamp;
