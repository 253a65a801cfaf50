//! Test-only oracles that share no code path with the library.
#![allow(dead_code)]

pub mod dd;
pub mod toy;
