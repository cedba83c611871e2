//! Secure link-state routing for mobile ad hoc networks: node library and a
//! deterministic discrete-event simulator.

pub mod crypto;
pub mod engine;
pub mod keystore;
pub mod lsdb;
pub mod nlp;
pub mod sched;
pub mod time;
pub mod wire;
pub mod sim;
pub mod scenario;
