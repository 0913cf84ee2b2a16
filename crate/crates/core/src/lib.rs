//! A deterministic shared-memory laboratory for recoverable mutual exclusion.
//!
//! The crate simulates `n` crash-prone processes over shared memory with exact
//! RMR accounting (CC and DSM), implements a family of recoverable locks as
//! step machines, and checks histories against the properties those locks
//! promise.

pub mod broadcast;
pub mod checker;
pub mod composite;
pub mod lab;
pub mod lockmodel;
pub mod reclaim;
pub mod simkernel;
pub mod wrlock;

pub use simkernel::*;
