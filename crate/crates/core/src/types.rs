//! Domain types shared by the estimators, schedulers, transport and simulator.

use std::fmt;

use thiserror::Error;

/// Smallest MTU an interface may be configured with (the IPv4 minimum
/// reassembly size).
pub const MIN_MTU: u32 = 576;

/// MTU used for every simulated interface unless configured otherwise.
pub const DEFAULT_MTU: u32 = 1500;

/// Bytes of transport and IP header assumed on every data packet.
pub const TRANSPORT_OVERHEAD: u32 = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("loss ratio {0} is outside [0, 1]")]
    InvalidLossRatio(f64),
    #[error("bandwidth {0} bps is negative or not finite")]
    InvalidBandwidth(f64),
    #[error("mtu {0} is below the minimum of {MIN_MTU} bytes")]
    MtuTooSmall(u32),
    #[error("connection {conn} acknowledged {acked} bytes but only carries {total}")]
    AckOverflow { conn: ConnId, acked: u64, total: u64 },
    #[error("connection size must be positive")]
    EmptyConnection,
}

/// Index of a local network interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct IfaceId(pub u16);

impl IfaceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for IfaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "if{}", self.0)
    }
}

/// Connection identifier, unique within one simulation run. Four bytes on
/// the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ConnId(pub u32);

impl fmt::Display for ConnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conn{}", self.0)
    }
}

/// Per-interface view held by the host: what the estimator believes about
/// the interface plus the load the scheduler has committed to it.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceState {
    pub id: IfaceId,
    /// Estimated available bandwidth in bits per second.
    pub est_bandwidth: f64,
    pub est_loss_ratio: f64,
    pub mtu: u32,
    /// Bytes scheduled on this interface that have not been transmitted yet.
    pub backlog_bytes: u64,
    pub is_up: bool,
    /// The configured link rate. Only the optimal baseline reads this; real
    /// schedulers work from `est_bandwidth`.
    pub configured_bandwidth: f64,
}

/// Builds an interface whose estimate starts at the configured rate.
pub fn new_interface(
    id: IfaceId,
    bandwidth_bps: f64,
    loss_ratio: f64,
    mtu: u32,
) -> Result<InterfaceState, CoreError> {
    if !bandwidth_bps.is_finite() || bandwidth_bps < 0.0 {
        return Err(CoreError::InvalidBandwidth(bandwidth_bps));
    }
    if !(0.0..=1.0).contains(&loss_ratio) {
        return Err(CoreError::InvalidLossRatio(loss_ratio));
    }
    if mtu < MIN_MTU {
        return Err(CoreError::MtuTooSmall(mtu));
    }
    Ok(InterfaceState {
        id,
        est_bandwidth: bandwidth_bps,
        est_loss_ratio: loss_ratio,
        mtu,
        backlog_bytes: 0,
        is_up: true,
        configured_bandwidth: bandwidth_bps,
    })
}

impl InterfaceState {
    /// Same as [`new_interface`] but with nothing known yet: the estimates
    /// start at zero and must be learned.
    pub fn cold(id: IfaceId, bandwidth_bps: f64, mtu: u32) -> Result<Self, CoreError> {
        let mut iface = new_interface(id, bandwidth_bps, 0.0, mtu)?;
        iface.est_bandwidth = 0.0;
        Ok(iface)
    }

    pub fn add_backlog(&mut self, bytes: u64) {
        self.backlog_bytes += bytes;
    }

    /// Removes up to `bytes` from the backlog and returns how much was
    /// actually removed.
    pub fn drain_backlog(&mut self, bytes: u64) -> u64 {
        let removed = bytes.min(self.backlog_bytes);
        self.backlog_bytes -= removed;
        removed
    }
}

/// Application identity: a process name and, when known, a well-known port.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AppKey {
    pub name: String,
    pub port: Option<u16>,
}

impl AppKey {
    pub fn named(name: impl Into<String>) -> Self {
        AppKey { name: name.into(), port: None }
    }

    pub fn with_port(name: impl Into<String>, port: u16) -> Self {
        AppKey { name: name.into(), port: Some(port) }
    }

    pub fn is_empty(&self) -> bool {
        self.name.is_empty() && self.port.is_none()
    }

    /// Identity used for the demand database. The name wins; the port is
    /// only used for nameless applications.
    pub fn profile_key(&self) -> ProfileKey {
        if self.name.is_empty() {
            ProfileKey::Port(self.port.unwrap_or(0))
        } else {
            ProfileKey::Name(self.name.to_ascii_lowercase())
        }
    }
}

impl fmt::Display for AppKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.port {
            Some(port) => write!(f, "{}:{}", self.name, port),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProfileKey {
    Name(String),
    Port(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum QualClass {
    Realtime,
    BandwidthIntensive,
    #[default]
    Unknown,
}

impl QualClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "realtime" => Some(QualClass::Realtime),
            "bandwidth-intensive" | "bandwidth_intensive" | "bulk" => {
                Some(QualClass::BandwidthIntensive)
            }
            "unknown" => Some(QualClass::Unknown),
            _ => None,
        }
    }
}

/// What the host has learned about one application.
#[derive(Debug, Clone, PartialEq)]
pub struct AppProfile {
    pub key: AppKey,
    pub qual_class: QualClass,
    /// Smoothed bytes per connection. Zero until a connection completes.
    pub c_demand: f64,
    pub completed_connections: u64,
}

impl AppProfile {
    pub fn fresh(key: AppKey) -> Self {
        AppProfile { key, qual_class: QualClass::Unknown, c_demand: 0.0, completed_connections: 0 }
    }
}

/// A connection request as the application issues it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionSpec {
    pub conn_id: ConnId,
    pub app: AppKey,
    pub total_bytes: u64,
    /// Seconds on the simulation clock.
    pub arrival_time: f64,
    /// Whether the destination runs the striping service. Mode detection
    /// still has to discover this; the flag only drives the simulated peer.
    pub dest_supports_striping: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnState {
    Active,
    Finished,
}

/// Lifetime accounting for one connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionRecord {
    pub spec: ConnectionSpec,
    assigned_iface: Option<IfaceId>,
    bytes_acked: u64,
    state: ConnState,
}

impl ConnectionRecord {
    /// A connection pinned to one interface for its whole lifetime.
    pub fn connection_oriented(spec: ConnectionSpec, iface: IfaceId) -> Result<Self, CoreError> {
        Self::build(spec, Some(iface))
    }

    /// A striped connection; no single interface is assigned.
    pub fn packet_oriented(spec: ConnectionSpec) -> Result<Self, CoreError> {
        Self::build(spec, None)
    }

    fn build(spec: ConnectionSpec, assigned_iface: Option<IfaceId>) -> Result<Self, CoreError> {
        if spec.total_bytes == 0 {
            return Err(CoreError::EmptyConnection);
        }
        Ok(ConnectionRecord { spec, assigned_iface, bytes_acked: 0, state: ConnState::Active })
    }

    pub fn assigned_iface(&self) -> Option<IfaceId> {
        self.assigned_iface
    }

    pub fn bytes_acked(&self) -> u64 {
        self.bytes_acked
    }

    pub fn state(&self) -> ConnState {
        self.state
    }

    pub fn remaining(&self) -> u64 {
        self.spec.total_bytes - self.bytes_acked
    }

    /// Records `bytes` more acknowledged payload. Returns `true` when this
    /// call finished the connection.
    pub fn acknowledge(&mut self, bytes: u64) -> Result<bool, CoreError> {
        let acked = self.bytes_acked + bytes;
        if acked > self.spec.total_bytes {
            return Err(CoreError::AckOverflow {
                conn: self.spec.conn_id,
                acked,
                total: self.spec.total_bytes,
            });
        }
        self.bytes_acked = acked;
        let finished_now = self.state == ConnState::Active && acked == self.spec.total_bytes;
        if finished_now {
            self.state = ConnState::Finished;
        }
        Ok(finished_now)
    }
}

/// The packet-oriented unit of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub conn_id: ConnId,
    pub chunk_id: u64,
    pub payload_len: u16,
    pub acked: bool,
}

/// Payload bytes carried by one chunk on an interface with the given MTU:
/// the MTU minus the chunk header and the transport/IP overhead.
pub fn chunk_payload_size(mtu: u32) -> u16 {
    let header = crate::transport::frame::HEADER_LEN as u32;
    let room = mtu.saturating_sub(header + TRANSPORT_OVERHEAD).max(1);
    room.min(u16::MAX as u32) as u16
}

/// Splits a byte stream into chunks with contiguous ids starting at zero.
#[derive(Debug, Clone)]
pub struct Chunker {
    conn_id: ConnId,
    payload_size: u16,
    remaining: u64,
    next_id: u64,
}

impl Chunker {
    pub fn new(conn_id: ConnId, total_bytes: u64, payload_size: u16) -> Self {
        assert!(payload_size > 0);
        Chunker { conn_id, payload_size, remaining: total_bytes, next_id: 0 }
    }

    pub fn remaining_bytes(&self) -> u64 {
        self.remaining
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }
}

impl Iterator for Chunker {
    type Item = Chunk;

    fn next(&mut self) -> Option<Chunk> {
        if self.remaining == 0 {
            return None;
        }
        let len = self.remaining.min(self.payload_size as u64) as u16;
        let chunk = Chunk { conn_id: self.conn_id, chunk_id: self.next_id, payload_len: len, acked: false };
        self.remaining -= len as u64;
        self.next_id += 1;
        Some(chunk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperationMode {
    ConnectionOriented,
    PacketOriented,
}

/// Matches applications for user policy.
#[derive(Debug, Clone, PartialEq)]
pub enum AppPattern {
    /// Case-insensitive glob over the process name; `*` matches any run.
    Name(String),
    Port(u16),
    Class(QualClass),
}

impl AppPattern {
    pub fn matches(&self, app: &AppKey, class: QualClass) -> bool {
        match self {
            AppPattern::Name(pattern) => {
                glob_match(&pattern.to_ascii_lowercase(), &app.name.to_ascii_lowercase())
            }
            AppPattern::Port(port) => app.port == Some(*port),
            AppPattern::Class(c) => *c == class,
        }
    }
}

/// Pins matching applications to one interface.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRule {
    pub pattern: AppPattern,
    pub pinned_iface: IfaceId,
}

/// `*`-only glob matching.
pub(crate) fn glob_match(pattern: &str, text: &str) -> bool {
    let p = pattern.as_bytes();
    let t = text.as_bytes();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(total: u64) -> ConnectionSpec {
        ConnectionSpec {
            conn_id: ConnId(1),
            app: AppKey::named("web"),
            total_bytes: total,
            arrival_time: 0.0,
            dest_supports_striping: false,
        }
    }

    #[test]
    fn table_one_interfaces() {
        let if1 = new_interface(IfaceId(0), 2_000_000.0, 0.0, 1500).unwrap();
        assert_eq!(if1.est_bandwidth, 2e6);
        assert_eq!(if1.backlog_bytes, 0);
        assert!(if1.is_up);
        let if2 = new_interface(IfaceId(1), 1_000_000.0, 0.0, 1500).unwrap();
        assert_eq!(if2.configured_bandwidth, 1e6);
    }

    #[test]
    fn rejects_bad_interface_parameters() {
        assert_eq!(
            new_interface(IfaceId(0), 2e6, 1.5, 1500),
            Err(CoreError::InvalidLossRatio(1.5))
        );
        assert_eq!(new_interface(IfaceId(0), 2e6, 0.0, 575), Err(CoreError::MtuTooSmall(575)));
        assert!(new_interface(IfaceId(0), -1.0, 0.0, 1500).is_err());
        assert!(new_interface(IfaceId(0), f64::NAN, 0.0, 1500).is_err());
    }

    #[test]
    fn cold_interface_has_no_estimate() {
        let iface = InterfaceState::cold(IfaceId(3), 1e6, 1500).unwrap();
        assert_eq!(iface.est_bandwidth, 0.0);
        assert_eq!(iface.configured_bandwidth, 1e6);
    }

    #[test]
    fn backlog_never_goes_negative() {
        let mut iface = new_interface(IfaceId(0), 1e6, 0.0, 1500).unwrap();
        iface.add_backlog(100);
        assert_eq!(iface.drain_backlog(250), 100);
        assert_eq!(iface.backlog_bytes, 0);
    }

    #[test]
    fn record_finishes_exactly_at_total() {
        let mut rec = ConnectionRecord::connection_oriented(spec(1000), IfaceId(1)).unwrap();
        assert_eq!(rec.assigned_iface(), Some(IfaceId(1)));
        assert!(!rec.acknowledge(600).unwrap());
        assert_eq!(rec.state(), ConnState::Active);
        assert!(rec.acknowledge(400).unwrap());
        assert_eq!(rec.state(), ConnState::Finished);
        assert!(rec.acknowledge(1).is_err());
        assert_eq!(rec.bytes_acked(), 1000);
    }

    #[test]
    fn empty_connection_rejected() {
        assert_eq!(ConnectionRecord::packet_oriented(spec(0)), Err(CoreError::EmptyConnection));
    }

    #[test]
    fn chunker_ids_are_contiguous() {
        let chunks: Vec<_> = Chunker::new(ConnId(9), 3000, 1442).collect();
        assert_eq!(chunks.iter().map(|c| c.chunk_id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(chunks.iter().map(|c| c.payload_len as u64).sum::<u64>(), 3000);
        assert_eq!(chunks[2].payload_len, 116);
    }

    #[test]
    fn chunk_size_at_default_mtu() {
        assert_eq!(chunk_payload_size(1500), 1442);
    }

    #[test]
    fn profile_key_prefers_name() {
        assert_eq!(AppKey::with_port("FTP", 21).profile_key(), ProfileKey::Name("ftp".into()));
        assert_eq!(AppKey { name: String::new(), port: Some(21) }.profile_key(), ProfileKey::Port(21));
    }

    #[test]
    fn glob() {
        assert!(glob_match("sky*", "skype"));
        assert!(glob_match("*", ""));
        assert!(glob_match("*pe", "skype"));
        assert!(glob_match("s*y*e", "skype"));
        assert!(!glob_match("skype", "skyp"));
        assert!(!glob_match("a*b", "acbd"));
    }

    #[test]
    fn patterns() {
        let app = AppKey::with_port("Skype", 5060);
        assert!(AppPattern::Name("skype".into()).matches(&app, QualClass::Unknown));
        assert!(AppPattern::Port(5060).matches(&app, QualClass::Unknown));
        assert!(AppPattern::Class(QualClass::Realtime).matches(&app, QualClass::Realtime));
        assert!(!AppPattern::Class(QualClass::Realtime).matches(&app, QualClass::Unknown));
    }
}
