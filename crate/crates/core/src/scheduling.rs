//! Connection and chunk schedulers.
//!
//! Connection-granularity schedulers pick one interface for the lifetime of a
//! connection; chunk-granularity schedulers pick an interface per chunk and
//! never consult the application profiles.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::estimation::{classify_app, ClassRules, ProfileStore};
use crate::types::{Chunk, ConnectionRecord, ConnectionSpec, IfaceId, InterfaceState, PolicyRule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("no interface is up")]
    NoInterfaceAvailable,
    #[error("scheduler {0} cannot place chunks")]
    NotChunkScheduler(SchedulerKind),
    #[error("unknown scheduler `{0}`")]
    UnknownScheduler(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchedulerKind {
    OnlyOne,
    CoRoundRobin,
    CoWeightedRoundRobin,
    CoMaxThroughput,
    PoRoundRobin,
    PoWeightedRoundRobin,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::OnlyOne,
        SchedulerKind::CoRoundRobin,
        SchedulerKind::CoWeightedRoundRobin,
        SchedulerKind::CoMaxThroughput,
        SchedulerKind::PoRoundRobin,
        SchedulerKind::PoWeightedRoundRobin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::OnlyOne => "only-one",
            SchedulerKind::CoRoundRobin => "co-rr",
            SchedulerKind::CoWeightedRoundRobin => "co-wrr",
            SchedulerKind::CoMaxThroughput => "co-max-throughput",
            SchedulerKind::PoRoundRobin => "po-rr",
            SchedulerKind::PoWeightedRoundRobin => "po-wrr",
        }
    }

    pub fn is_packet_oriented(self) -> bool {
        matches!(self, SchedulerKind::PoRoundRobin | SchedulerKind::PoWeightedRoundRobin)
    }

    /// The connection scheduler used for connections that cannot be striped
    /// (legacy destination, or mode detection still in flight).
    pub fn connection_fallback(self) -> SchedulerKind {
        match self {
            SchedulerKind::PoRoundRobin => SchedulerKind::CoRoundRobin,
            SchedulerKind::PoWeightedRoundRobin => SchedulerKind::CoWeightedRoundRobin,
            other => other,
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ScheduleError::UnknownScheduler(s.to_string()))
    }
}

/// Rotation cursor over the up interfaces, in index order.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    next: usize,
}

impl RoundRobin {
    pub fn pick(&mut self, ifaces: &[InterfaceState]) -> Option<IfaceId> {
        let n = ifaces.len();
        (0..n).map(|k| (self.next + k) % n).find(|&i| ifaces[i].is_up).map(|i| {
            self.next = (i + 1) % n;
            ifaces[i].id
        })
    }
}

/// Smooth weighted round robin. Each pick adds every candidate's weight to
/// its current weight, takes the largest current weight (lowest index on
/// ties) and charges the winner the total weight.
#[derive(Debug, Clone, Default)]
pub struct WrrState {
    current: Vec<f64>,
    up_mask: Vec<bool>,
    fallback: RoundRobin,
}

impl WrrState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_weights(&self) -> &[f64] {
        &self.current
    }

    /// Picks with `est_bandwidth` as the weight. When every up interface has
    /// a zero estimate the pick degrades to plain rotation.
    pub fn pick(&mut self, ifaces: &[InterfaceState]) -> Option<IfaceId> {
        let weights: Vec<f64> = ifaces.iter().map(|i| i.est_bandwidth.max(0.0)).collect();
        let up: Vec<bool> = ifaces.iter().map(|i| i.is_up).collect();
        self.pick_weighted(&weights, &up).map(|i| ifaces[i].id).or_else(|| self.fallback.pick(ifaces))
    }

    /// Returns `None` when no up candidate has a positive weight.
    pub fn pick_weighted(&mut self, weights: &[f64], up: &[bool]) -> Option<usize> {
        if self.current.len() != weights.len() || self.up_mask != up {
            self.current = vec![0.0; weights.len()];
            self.up_mask = up.to_vec();
        }
        let total: f64 = weights.iter().zip(up).filter(|(_, &u)| u).map(|(w, _)| *w).sum();
        if !(total > 0.0) {
            return None;
        }
        let mut best: Option<usize> = None;
        for i in 0..weights.len() {
            if !up[i] {
                continue;
            }
            self.current[i] += weights[i];
            if best.is_none_or(|b| self.current[i] > self.current[b]) {
                best = Some(i);
            }
        }
        let winner = best?;
        self.current[winner] -= total;
        Some(winner)
    }
}

/// Expected seconds for `iface` to finish its backlog plus `demand` bytes.
/// Infinite when nothing is known about the interface's bandwidth.
pub fn finish_time(iface: &InterfaceState, demand: f64) -> f64 {
    if iface.est_bandwidth > 0.0 {
        (iface.backlog_bytes as f64 + demand) * 8.0 / iface.est_bandwidth
    } else {
        f64::INFINITY
    }
}

/// Predicted load a connection placed on its interface, so the prediction
/// can be retired as data is sent and when the connection ends.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadTicket {
    pub iface: IfaceId,
    pub predicted: u64,
    drained: u64,
}

impl LoadTicket {
    pub fn new(iface: IfaceId, predicted: u64) -> Self {
        LoadTicket { iface, predicted, drained: 0 }
    }

    /// Retires prediction for `bytes` newly transmitted. Returns the amount
    /// removed from the interface backlog.
    pub fn on_transmit(&mut self, bytes: u64, ifaces: &mut [InterfaceState]) -> u64 {
        let take = bytes.min(self.predicted - self.drained);
        self.drained += take;
        ifaces[self.iface.index()].drain_backlog(take)
    }

    pub fn outstanding(&self) -> u64 {
        self.predicted - self.drained
    }
}

/// The scheduler and its mutable rotation state. Not reentrant: one logical
/// thread owns it.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    primary: IfaceId,
    rr: RoundRobin,
    wrr: WrrState,
    policy: Vec<PolicyRule>,
    class_rules: ClassRules,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind) -> Self {
        Scheduler {
            kind,
            primary: IfaceId(0),
            rr: RoundRobin::default(),
            wrr: WrrState::new(),
            policy: Vec::new(),
            class_rules: ClassRules::default(),
        }
    }

    pub fn with_primary(mut self, primary: IfaceId) -> Self {
        self.primary = primary;
        self
    }

    pub fn with_policy(mut self, policy: Vec<PolicyRule>) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_class_rules(mut self, rules: ClassRules) -> Self {
        self.class_rules = rules;
        self
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn class_rules(&self) -> &ClassRules {
        &self.class_rules
    }

    /// The interface a user policy pins this connection to, if any rule
    /// matches and that interface is up.
    pub fn pinned(&self, conn: &ConnectionSpec, ifaces: &[InterfaceState]) -> Option<IfaceId> {
        let class = classify_app(&self.class_rules, &conn.app);
        self.policy
            .iter()
            .find(|r| r.pattern.matches(&conn.app, class))
            .map(|r| r.pinned_iface)
            .filter(|id| ifaces.get(id.index()).is_some_and(|i| i.is_up))
    }

    /// Places a whole connection. The chosen interface is charged the
    /// application's current demand estimate.
    pub fn schedule_connection(
        &mut self,
        conn: &ConnectionSpec,
        ifaces: &mut [InterfaceState],
        profiles: &ProfileStore,
    ) -> Result<LoadTicket, ScheduleError> {
        if !ifaces.iter().any(|i| i.is_up) {
            return Err(ScheduleError::NoInterfaceAvailable);
        }
        let demand = profiles.c_demand(&conn.app);
        let iface = match self.pinned(conn, ifaces) {
            Some(id) => id,
            None => self.pick_connection(demand, ifaces)?,
        };
        let predicted = demand.round() as u64;
        ifaces[iface.index()].add_backlog(predicted);
        Ok(LoadTicket::new(iface, predicted))
    }

    fn pick_connection(&mut self, demand: f64, ifaces: &[InterfaceState]) -> Result<IfaceId, ScheduleError> {
        let picked = match self.kind.connection_fallback() {
            SchedulerKind::OnlyOne => {
                ifaces.get(self.primary.index()).filter(|i| i.is_up).map(|i| i.id)
            }
            SchedulerKind::CoRoundRobin => self.rr.pick(ifaces),
            SchedulerKind::CoWeightedRoundRobin => self.wrr.pick(ifaces),
            SchedulerKind::CoMaxThroughput => {
                let mut best: Option<(f64, IfaceId)> = None;
                for iface in ifaces.iter().filter(|i| i.is_up) {
                    let t = finish_time(iface, demand);
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, iface.id));
                    }
                }
                match best {
                    Some((t, id)) if t.is_finite() => Some(id),
                    _ => self.rr.pick(ifaces),
                }
            }
            SchedulerKind::PoRoundRobin | SchedulerKind::PoWeightedRoundRobin => unreachable!(),
        };
        picked.ok_or(ScheduleError::NoInterfaceAvailable)
    }

    /// Places one chunk and charges its wire size to the chosen interface.
    pub fn schedule_chunk(&mut self, chunk: &Chunk, ifaces: &mut [InterfaceState]) -> Result<IfaceId, ScheduleError> {
        let picked = match self.kind {
            SchedulerKind::PoRoundRobin => self.rr.pick(ifaces),
            SchedulerKind::PoWeightedRoundRobin => self.wrr.pick(ifaces),
            other => return Err(ScheduleError::NotChunkScheduler(other)),
        };
        let id = picked.ok_or(ScheduleError::NoInterfaceAvailable)?;
        let wire = chunk.payload_len as u64 + crate::transport::frame::HEADER_LEN as u64;
        ifaces[id.index()].add_backlog(wire);
        Ok(id)
    }
}

/// Retires what is left of a finished connection's predicted load: the
/// prediction not consumed by bytes actually sent. Returns the residual.
pub fn on_connection_finished(
    record: &ConnectionRecord,
    ticket: &mut LoadTicket,
    ifaces: &mut [InterfaceState],
) -> u64 {
    let sent = record.bytes_acked();
    let consumed = sent.min(ticket.predicted);
    if consumed > ticket.drained {
        ticket.on_transmit(consumed - ticket.drained, ifaces);
    }
    let residual = ticket.predicted.saturating_sub(sent);
    ticket.drained += residual;
    ifaces[ticket.iface.index()].drain_backlog(residual);
    residual
}

/// Sum of the configured rates of the up interfaces: the unattainable
/// upper bound every real scheduler is compared against.
pub fn optimal_throughput(ifaces: &[InterfaceState]) -> f64 {
    ifaces.iter().filter(|i| i.is_up).map(|i| i.configured_bandwidth).sum()
}
