//! Frontends for the ragforge engine: the HTTP router used by `serve` and
//! the helpers shared by the command line.

pub mod server;
