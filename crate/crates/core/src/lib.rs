//! Bandwidth aggregation for hosts with several network interfaces.
//!
//! Connections are placed whole on one interface (connection oriented) or
//! cut into chunks that are striped over every interface and resequenced by
//! the peer (packet oriented). The [`scheduling`] module holds the placement
//! policies, [`estimation`] the demand and bandwidth estimators they read,
//! and [`transport`] the chunk framing, reordering and failover. [`netsim`]
//! is a deterministic simulator to evaluate them and [`harness`] runs
//! parameter sweeps over it.
//!
//! ```
//! use ifagg::netsim::{run_simulation, ModePolicy, Topology, WorkloadSpec};
//! use ifagg::scheduling::SchedulerKind;
//!
//! let m = run_simulation(
//!     &Topology::nominal(),
//!     &WorkloadSpec::saturating(5.0, 1),
//!     SchedulerKind::PoWeightedRoundRobin,
//!     ModePolicy::DetectAndWait,
//! )
//! .unwrap();
//! assert!(m.aggregate_throughput > 2e6);
//! ```
//!
//! A longer guide lives in the `book/` directory of the repository.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimation;
pub mod harness;
pub mod netsim;
pub mod scheduling;
pub mod transport;
pub mod types;

pub use scheduling::{Scheduler, SchedulerKind};
pub use types::{ConnId, IfaceId, OperationMode};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    pub mod estimation {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    pub mod scheduling {}
    #[doc = include_str!("../../../book/src/transport.md")]
    pub mod transport {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    pub mod protocol {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    pub mod simulator {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
