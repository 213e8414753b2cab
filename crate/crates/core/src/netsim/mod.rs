//! Deterministic discrete-event network simulator.
//!
//! A client with one shaped uplink per interface reaches a server through a
//! shared server link. Every connection runs Reno over each interface it
//! uses; the scheduler under test decides which.

pub mod event;
pub mod link;
pub mod metrics;
pub mod sim;
pub mod tcp;
pub mod workload;

pub use event::{EventQueue, SimTime};
pub use link::{Link, LinkConfig, Transmit};
pub use metrics::{RunMetrics, SampleLog, TraceKind, TraceRecord};
pub use sim::{run_simulation, simulate, IfaceEvent, ModePolicy, Recording, SimConfig, SimError, Topology};
pub use tcp::{TcpConfig, TcpReceiver, TcpSender};
pub use workload::{generate_workload, WorkloadSpec, LONG_LIVED_BYTES};
