//! Core screening logic: everything that does not touch the filesystem,
//! network or clock. The crate is `no_std` (alloc only) so the rule engine
//! and statistics can be embedded in services, CLIs or WASM verifiers alike;
//! IO, HTTP and the command-line front end live in the companion crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod seeds;
pub mod textclean;
pub mod corpus;
pub mod guideline;
pub mod synth;
pub mod prompts;
pub mod wire;
pub mod inference;
pub mod decide;
pub mod evalkit;
pub mod stats;
pub mod mock;
