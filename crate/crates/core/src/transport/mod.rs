//! Packet-oriented transport: mode detection, chunk framing, receiver-side
//! reordering and migration of unacknowledged chunks off failed interfaces.

pub mod frame;
pub mod mode;
pub mod reorder;
pub mod unacked;

pub use frame::{decode_frame, encode_frame, ChunkFrame, FrameError, FrameType, HEADER_LEN};
pub use mode::{detect_mode, Detection, ModeTracker, ProbeOutcome, ServiceProbe, SERVICE_PORT};
pub use reorder::{ReorderBuffer, ReorderError};
pub use unacked::{on_interface_down, MigrationError, Migrated, UnackedEntry, UnackedSet};
