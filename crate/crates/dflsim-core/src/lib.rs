//! Core algorithms for simulating decentralized federated learning (D-FL)
//! over multi-hop networks with packet errors.
//!
//! The crate is organized around the lifecycle of one experiment:
//!
//! * [`netmodel`] turns node geometry into per-link bit/packet success rates
//!   (path loss -> SNR -> BER -> PER chain).
//! * [`routing`] computes minimum end-to-end packet-error-rate routes between
//!   every ordered client pair, bandwidth-constrained admission, TDMA slot
//!   assignment, and communication-overhead accounting.
//! * [`learning`] provides training tasks with known smoothness/convexity
//!   constants and deterministic full-batch gradient descent.
//! * [`protocol`] executes synchronized rounds of the route-and-aggregate
//!   (R&A) protocol plus the aggregate-as-you-go (gossip) and centralized
//!   baselines, with segment-level packet-loss sampling.
//! * [`analysis`] evaluates the aggregation bias statistics and the
//!   convergence-bound constants, and cross-checks them against Monte Carlo
//!   simulation.
//!
//! Everything here is `no_std` + `alloc`: all floating-point transcendentals
//! go through [`libm`] so results are bit-identical across platforms. File
//! formats, configuration, and the CLI live in the companion `dflsim` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod learning;
pub mod linalg;
pub mod math;
pub mod netmodel;
pub mod protocol;
pub mod routing;

pub use netmodel::{ChannelParams, Link, Modulation, NetworkGraph, Node, NodeKind};
pub use routing::{RoutePlan, SlotSchedule};
pub use learning::{ModelVector, Task, Weights};
pub use protocol::{AggregationScheme, RoundOutcome, SuccessTensor, TrainState};
