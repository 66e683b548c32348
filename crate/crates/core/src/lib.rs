//! Inter-base-station load balancing modelled as a networked dynamical
//! system.
//!
//! - [`radio`]: path loss, RSRP, SINR and PRB demand, i.e. what a user costs
//!   each station.
//! - [`topology`]: coverage graph, Laplacian, Jacobi eigensolver and
//!   Gershgorin discs.
//! - [`dynamics`]: continuous and discrete load evolution, conservative and
//!   non-conservative, plus finite-difference linearization.
//! - [`stability`]: every stability check and the oscillation bound, as
//!   machine-readable [`stability::StabilityReport`]s.
//! - [`balancer`]: accommodation-capped handover rounds (ALG1/2/3) and the
//!   greedy offset baseline.
//! - [`harness`]: seeded scenarios, simulation traces, exports and sweeps.
//! - [`cli`]: the `loadsync` command line.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balancer;
pub mod cli;
pub mod dynamics;
pub mod harness;
pub mod radio;
pub mod stability;
pub mod topology;
