//! Command-line and HTTP front end for texgen.

pub mod config;
pub mod imaging;
pub mod record;
pub mod service;
