//! Discovering whether a destination speaks the striping protocol.
//!
//! A host opens a throwaway connection to a reserved port on the
//! destination. If it is accepted the destination runs the striping service
//! and later connections may be packet oriented; anything else leaves the
//! host in connection-oriented mode. Connections keep flowing in
//! connection-oriented mode while the probe is outstanding.

use std::net::{IpAddr, SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use crate::types::OperationMode;

/// Default port of the striping service.
pub const SERVICE_PORT: u16 = 48059;

pub const DEFAULT_DETECT_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Accepted { after: Duration },
    Refused { after: Duration },
    TimedOut,
}

/// Something that can be asked to accept a connection on a port.
pub trait ServiceProbe {
    fn try_connect(&self, port: u16, timeout: Duration) -> ProbeOutcome;
}

impl ServiceProbe for IpAddr {
    fn try_connect(&self, port: u16, timeout: Duration) -> ProbeOutcome {
        let start = Instant::now();
        match TcpStream::connect_timeout(&SocketAddr::new(*self, port), timeout) {
            Ok(_) => ProbeOutcome::Accepted { after: start.elapsed() },
            Err(e) if e.kind() == std::io::ErrorKind::TimedOut => ProbeOutcome::TimedOut,
            Err(_) => ProbeOutcome::Refused { after: start.elapsed() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub mode: OperationMode,
    pub elapsed: Duration,
}

/// Probes `dest` once. Never fails: every problem resolves to
/// connection-oriented mode, no later than `timeout`.
pub fn detect_mode(dest: &impl ServiceProbe, port: u16, timeout: Duration) -> Detection {
    match dest.try_connect(port, timeout) {
        ProbeOutcome::Accepted { after } if after <= timeout => {
            Detection { mode: OperationMode::PacketOriented, elapsed: after }
        }
        ProbeOutcome::Refused { after } if after <= timeout => {
            Detection { mode: OperationMode::ConnectionOriented, elapsed: after }
        }
        _ => Detection { mode: OperationMode::ConnectionOriented, elapsed: timeout },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DetectState {
    Unprobed,
    Probing,
    Known(OperationMode),
}

/// Mode bookkeeping for one destination.
///
/// New connections start connection-oriented until a probe confirms
/// support. Once packet-oriented is confirmed it is never withdrawn.
#[derive(Debug, Clone)]
pub struct ModeTracker {
    state: DetectState,
}

impl Default for ModeTracker {
    fn default() -> Self {
        ModeTracker { state: DetectState::Unprobed }
    }
}

impl ModeTracker {
    /// Returns true when the caller should launch a probe now.
    pub fn begin_probe(&mut self) -> bool {
        if self.state == DetectState::Unprobed {
            self.state = DetectState::Probing;
            true
        } else {
            false
        }
    }

    pub fn probe_finished(&mut self, mode: OperationMode) {
        if self.state != DetectState::Known(OperationMode::PacketOriented) {
            self.state = DetectState::Known(mode);
        }
    }

    pub fn is_probing(&self) -> bool {
        self.state == DetectState::Probing
    }

    pub fn mode_for_new_connection(&self) -> OperationMode {
        match self.state {
            DetectState::Known(mode) => mode,
            _ => OperationMode::ConnectionOriented,
        }
    }
}
