//! Single-server queues fed by scheduled traffic.
//!
//! Customer `n` is scheduled at `nh` and arrives at `nh + ξₙ` with i.i.d.
//! perturbations ξ. The crate samples such streams exactly on a finite
//! window, evaluates the counting, early and late processes and the queue
//! workload, and runs Monte Carlo experiments on their limit behaviour.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrival;
pub mod cli;
pub mod config;
pub mod distributions;
pub mod experiments;
pub mod seed;
pub mod stats;
pub mod workload;
