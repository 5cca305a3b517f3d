//! Runtime for event-triggered signal temporal logic tasks on a mobile
//! manipulator, with online modification of the running specification.
//!
//! The crate is `no_std` (it needs `alloc`). Wall-clock timing is injected
//! through [`clock::Clock`].

#![no_std]

extern crate alloc;

pub mod abstraction;
pub mod buchi;
pub mod cbf;
pub mod clock;
pub mod ltl;
pub mod modify;
pub mod monitor;
pub mod qp;
pub mod runner;
pub mod runtime;
pub mod scenario;
pub mod spec;
pub mod validate;
pub mod world;
