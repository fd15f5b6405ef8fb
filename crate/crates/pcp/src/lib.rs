//! Service, command line and file-backed persistence for [`pcp_core`].

pub mod api;
pub mod cli;
pub mod client;
pub mod http;
pub mod state;

pub use pcp_core;
