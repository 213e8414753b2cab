use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use super::event::SimTime;
use crate::estimation::SampleSource;
use crate::types::{ConnId, IfaceId, OperationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arrive,
    Assign,
    Pending,
    Mode,
    ChunkRx,
    ChunkAck,
    Migrate,
    Stall,
    Finish,
    Abort,
    Rto,
    FastRetransmit,
    IfaceDown,
    IfaceUp,
    Sample,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Arrive => "arrive",
            TraceKind::Assign => "assign",
            TraceKind::Pending => "pending",
            TraceKind::Mode => "mode",
            TraceKind::ChunkRx => "chunk_rx",
            TraceKind::ChunkAck => "chunk_ack",
            TraceKind::Migrate => "migrate",
            TraceKind::Stall => "stall",
            TraceKind::Finish => "finish",
            TraceKind::Abort => "abort",
            TraceKind::Rto => "rto",
            TraceKind::FastRetransmit => "fast_retx",
            TraceKind::IfaceDown => "iface_down",
            TraceKind::IfaceUp => "iface_up",
            TraceKind::Sample => "sample",
        }
    }
}

/// One line of the optional event trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: TraceKind,
    pub conn: Option<ConnId>,
    pub iface: Option<IfaceId>,
    pub id: Option<u64>,
}

impl fmt::Display for TraceRecord {
    /// `<seconds> <kind>[ conn=N][ iface=N][ id=N]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.time, self.kind.name())?;
        if let Some(c) = self.conn {
            write!(f, " conn={c}")?;
        }
        if let Some(i) = self.iface {
            write!(f, " iface={}", i.0)?;
        }
        if let Some(id) = self.id {
            write!(f, " id={id}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleLog {
    pub time: f64,
    pub iface: IfaceId,
    pub source: SampleSource,
    pub rate_bps: f64,
    pub est_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub duration: f64,
    pub total_app_bytes_delivered: u64,
    /// Demand of every connection that arrived during the run.
    pub total_app_bytes_offered: u64,
    /// Bytes each interface put on the wire, headers and losses included.
    pub per_iface_wire_bytes: Vec<u64>,
    /// Application bytes acknowledged per interface.
    pub per_iface_app_bytes: Vec<u64>,
    pub aggregate_throughput: f64,
    /// (connection, seconds from arrival to last byte delivered)
    pub completion_times: Vec<(ConnId, f64)>,
    pub connections_arrived: usize,
    pub connections_finished: usize,
    pub connections_aborted: usize,
    pub detected_mode: Option<OperationMode>,
    pub probes_completed: usize,
    pub samples: Vec<SampleLog>,
    pub final_est_bandwidth: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    /// In-order application deliveries per connection as (offset, len).
    pub deliveries: BTreeMap<ConnId, Vec<(u64, u32)>>,
    /// Departure log of each interface's uplink as (time, wire bytes).
    pub link_departures: Vec<Vec<(SimTime, u32)>>,
}

impl RunMetrics {
    pub fn total_wire_bytes(&self) -> u64 {
        self.per_iface_wire_bytes.iter().sum()
    }

    /// Canonical text form. Two runs are identical iff these strings are.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "duration {}", self.duration);
        let _ = writeln!(s, "delivered {}", self.total_app_bytes_delivered);
        let _ = writeln!(s, "offered {}", self.total_app_bytes_offered);
        let _ = writeln!(s, "throughput {:?}", self.aggregate_throughput);
        let _ = writeln!(s, "wire {:?}", self.per_iface_wire_bytes);
        let _ = writeln!(s, "app {:?}", self.per_iface_app_bytes);
        let _ = writeln!(
            s,
            "conns {} {} {}",
            self.connections_arrived, self.connections_finished, self.connections_aborted
        );
        let _ = writeln!(s, "mode {:?}", self.detected_mode);
        let _ = writeln!(s, "probes {}", self.probes_completed);
        let _ = writeln!(s, "est {:?}", self.final_est_bandwidth);
        for (c, t) in &self.completion_times {
            let _ = writeln!(s, "fct {c} {t:?}");
        }
        for x in &self.samples {
            let _ = writeln!(s, "sample {:?} {} {:?} {:?} {:?}", x.time, x.iface.0, x.source, x.rate_bps, x.est_after);
        }
        for r in &self.trace {
            let _ = writeln!(s, "{r}");
        }
        for (c, d) in &self.deliveries {
            let _ = writeln!(s, "deliveries {c} {d:?}");
        }
        s
    }

    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|r| format!("{r}\n")).collect()
    }
}
