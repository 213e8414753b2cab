//! The event loop: a client with several shaped uplinks, one server link,
//! per-interface TCP flows and the scheduler deciding where data goes.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use super::event::{EventQueue, SimTime};
use super::link::{Link, LinkConfig, Transmit};
use super::metrics::{RunMetrics, SampleLog, TraceKind, TraceRecord};
use super::tcp::{TcpConfig, TcpReceiver, TcpSender};
use super::workload::{generate_workload, rng_stream, streams, WorkloadSpec};
use crate::estimation::{
    classify_app, probe_interfaces, update_interface_estimate, BandwidthSample, ClassRules, DeliveryMeter,
    ProbeConfig, ProbeRequest, ProfileStore, SampleSource,
};
use crate::scheduling::{on_connection_finished, LoadTicket, Scheduler, SchedulerKind};
use crate::transport::frame::HEADER_LEN;
use crate::transport::mode::ModeTracker;
use crate::transport::reorder::{ReorderBuffer, DEFAULT_REORDER_CAPACITY};
use crate::transport::unacked::{on_interface_down, MigrationError, UnackedSet};
use crate::types::{
    chunk_payload_size, new_interface, Chunker, ConnectionRecord, ConnectionSpec, CoreError, IfaceId,
    InterfaceState, OperationMode, PolicyRule, QualClass, DEFAULT_MTU, TRANSPORT_OVERHEAD,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Client uplinks, one per interface, in interface-id order.
    pub interfaces: Vec<LinkConfig>,
    /// Link from the shaping node to the server.
    pub server: LinkConfig,
    pub mtu: u32,
}

impl Topology {
    /// 2 Mbps and 1 Mbps interfaces, lossless, behind a 6 Mbps server link.
    pub fn nominal() -> Self {
        Topology {
            interfaces: vec![LinkConfig::new(2e6, 0.0), LinkConfig::new(1e6, 0.0)],
            server: LinkConfig::new(6e6, 0.0),
            mtu: DEFAULT_MTU,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.interfaces.is_empty() {
            return Err(SimError::NoPath("client has no interfaces".into()));
        }
        if self.interfaces.len() > u16::MAX as usize {
            return Err(SimError::NoPath("too many interfaces".into()));
        }
        let links = self.interfaces.iter().enumerate().map(|(i, l)| (format!("interface {i}"), l));
        for (name, link) in links.chain(std::iter::once(("server link".to_string(), &self.server))) {
            if !(link.bandwidth_bps > 0.0) || !link.bandwidth_bps.is_finite() {
                return Err(SimError::NoPath(format!("{name} has bandwidth {}", link.bandwidth_bps)));
            }
            if !(0.0..=1.0).contains(&link.loss_ratio) {
                return Err(SimError::InvalidLink(format!("{name} loss ratio {}", link.loss_ratio)));
            }
            if !(link.prop_delay >= 0.0) || link.queue_packets == 0 {
                return Err(SimError::InvalidLink(format!("{name} needs a delay >= 0 and a queue of at least one packet")));
            }
        }
        if self.server.loss_ratio >= 1.0 || self.interfaces.iter().all(|l| l.loss_ratio >= 1.0) {
            return Err(SimError::NoPath("every path drops all packets".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModePolicy {
    /// Probe the destination at start-up; packet-oriented schedulers stripe
    /// once the striping service is confirmed. Connections opened while the
    /// probe is out run connection-oriented.
    Detect,
    /// Like `Detect`, but connections opened while the probe is out wait
    /// for its answer.
    DetectAndWait,
    /// Never probe; every connection is connection-oriented.
    ConnectionOnly,
}

/// Scripted failure or recovery of an interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IfaceEvent {
    pub at: f64,
    pub iface: IfaceId,
    pub up: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Recording {
    pub trace: bool,
    pub deliveries: bool,
    pub departures: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub topology: Topology,
    pub workload: WorkloadSpec,
    pub kind: SchedulerKind,
    pub mode_policy: ModePolicy,
    pub primary: IfaceId,
    pub policy: Vec<PolicyRule>,
    pub class_rules: ClassRules,
    pub events: Vec<IfaceEvent>,
    pub tcp: TcpConfig,
    pub probe: ProbeConfig,
    /// Seconds between passive estimator samples.
    pub sample_period: f64,
    pub reorder_capacity: usize,
    pub detect_timeout: f64,
    /// Start estimates at zero instead of the configured rates.
    pub cold_estimates: bool,
    pub record: Recording,
}

impl SimConfig {
    pub fn new(topology: Topology, workload: WorkloadSpec, kind: SchedulerKind) -> Self {
        SimConfig {
            topology,
            workload,
            kind,
            mode_policy: ModePolicy::Detect,
            primary: IfaceId(0),
            policy: Vec::new(),
            class_rules: ClassRules::default(),
            events: Vec::new(),
            tcp: TcpConfig::default(),
            probe: ProbeConfig::default(),
            sample_period: 1.0,
            reorder_capacity: DEFAULT_REORDER_CAPACITY,
            detect_timeout: 0.5,
            cold_estimates: false,
            record: Recording::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.topology.validate()?;
        let n = self.topology.interfaces.len();
        let check = |id: IfaceId| {
            if id.index() < n {
                Ok(())
            } else {
                Err(SimError::UnknownInterface { iface: id, count: n })
            }
        };
        check(self.primary)?;
        for r in &self.policy {
            check(r.pinned_iface)?;
        }
        for e in &self.events {
            check(e.iface)?;
            if !(e.at >= 0.0) {
                return Err(SimError::InvalidLink(format!("event time {}", e.at)));
            }
        }
        if !(self.workload.duration > 0.0) || !(self.sample_period > 0.0) || !(self.probe.period > 0.0) {
            return Err(SimError::InvalidLink("durations and periods must be positive".into()));
        }
        if self.reorder_capacity == 0 {
            return Err(SimError::InvalidLink("reorder capacity must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no path from client to server: {0}")]
    NoPath(String),
    #[error("invalid configuration: {0}")]
    InvalidLink(String),
    #[error("interface {iface} does not exist (topology has {count})")]
    UnknownInterface { iface: IfaceId, count: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Runs one simulation with default settings for everything but the
/// topology, workload, scheduler and mode policy.
pub fn run_simulation(
    topology: &Topology,
    workload: &WorkloadSpec,
    kind: SchedulerKind,
    mode_policy: ModePolicy,
) -> Result<RunMetrics, SimError> {
    let mut cfg = SimConfig::new(topology.clone(), workload.clone(), kind);
    cfg.mode_policy = mode_policy;
    simulate(&cfg)
}

pub fn simulate(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg)?;
    sim.run();
    Ok(sim.finish())
}

#[derive(Debug, Clone, Copy)]
struct Pkt {
    flow: u32,
    /// Segment number for data, cumulative acknowledgement for acks.
    seq: u64,
    wire: u32,
}

#[derive(Debug)]
enum Ev {
    Arrival(usize),
    Hop { link: usize, pkt: Pkt, epoch: u32 },
    Rto { flow: usize, gen: u32 },
    Sample,
    Probe,
    ModeDetected(OperationMode),
    Iface { iface: usize, up: bool },
}

#[derive(Debug)]
enum Owner {
    Conn(usize),
    Probe { req: ProbeRequest, started: SimTime },
}

#[derive(Debug)]
enum Segments {
    Stream { total: u64 },
    /// (chunk id, payload length) per segment.
    Chunks(Vec<(u64, u16)>),
}

#[derive(Debug)]
struct Flow {
    owner: Owner,
    iface: usize,
    sender: TcpSender,
    receiver: TcpReceiver,
    segs: Segments,
    open: bool,
    active: bool,
    timer_gen: u32,
    timer_at: Option<SimTime>,
}

impl Flow {
    /// (application bytes, chunk id) of a segment.
    fn segment(&self, seq: u64, mss: u64) -> (u32, Option<u64>) {
        match &self.segs {
            Segments::Stream { total } => ((total - seq * mss).min(mss) as u32, None),
            Segments::Chunks(v) => {
                let (id, len) = v[seq as usize];
                (len as u32, Some(id))
            }
        }
    }

    fn wire_bytes(&self, app: u32) -> u32 {
        match self.segs {
            Segments::Stream { .. } => app + TRANSPORT_OVERHEAD,
            Segments::Chunks(_) => app + HEADER_LEN as u32 + TRANSPORT_OVERHEAD,
        }
    }

    fn meter(&self) -> Option<SampleSource> {
        match (&self.owner, &self.segs) {
            (Owner::Probe { .. }, _) => None,
            (_, Segments::Stream { .. }) => Some(SampleSource::Passive),
            (_, Segments::Chunks(_)) => Some(SampleSource::PeerAck),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Waiting,
    Active,
    Done,
    Aborted,
}

#[derive(Debug)]
struct Striped {
    chunker: Chunker,
    unacked: UnackedSet<()>,
    flows: Vec<Option<usize>>,
    reorder: ReorderBuffer<(u64, u16)>,
    stalled: bool,
}

#[derive(Debug)]
struct Conn {
    phase: Phase,
    class: QualClass,
    record: Option<ConnectionRecord>,
    ticket: Option<LoadTicket>,
    flow: Option<usize>,
    striped: Option<Box<Striped>>,
    delivered: u64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    now: SimTime,
    end: SimTime,
    q: EventQueue<Ev>,
    n: usize,
    links: Vec<Link>,
    ifaces: Vec<InterfaceState>,
    scheduler: Scheduler,
    profiles: ProfileStore,
    tracker: ModeTracker,
    specs: Vec<ConnectionSpec>,
    conns: Vec<Conn>,
    flows: Vec<Flow>,
    pending: VecDeque<usize>,
    awaiting_mode: Vec<usize>,
    passive: DeliveryMeter,
    peer: DeliveryMeter,
    busy_passive: Vec<u32>,
    busy_peer: Vec<u32>,
    probing: Vec<bool>,
    mss: u64,
    payload_size: u16,
    m: RunMetrics,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        let top = &cfg.topology;
        let n = top.interfaces.len();
        let seed = cfg.workload.seed;
        let mut links = Vec::with_capacity(2 * n + 2);
        for (i, l) in top.interfaces.iter().enumerate() {
            let mut up = Link::new(l, top.mtu, rng_stream(seed, streams::LINK_BASE + 2 * i as u64));
            if cfg.record.departures {
                up.record_departures();
            }
            links.push(up);
            let back = LinkConfig { loss_ratio: 0.0, ..l.clone() };
            links.push(Link::new(&back, top.mtu, rng_stream(seed, streams::LINK_BASE + 2 * i as u64 + 1)));
        }
        links.push(Link::new(&top.server, top.mtu, rng_stream(seed, streams::LINK_BASE + 2 * n as u64)));
        let back = LinkConfig { loss_ratio: 0.0, ..top.server.clone() };
        links.push(Link::new(&back, top.mtu, rng_stream(seed, streams::LINK_BASE + 2 * n as u64 + 1)));

        let mut ifaces = Vec::with_capacity(n);
        for (i, l) in top.interfaces.iter().enumerate() {
            let mut s = new_interface(IfaceId(i as u16), l.bandwidth_bps, l.loss_ratio, top.mtu)?;
            if cfg.cold_estimates {
                s.est_bandwidth = 0.0;
                s.est_loss_ratio = 0.0;
            }
            ifaces.push(s);
        }
        let scheduler = Scheduler::new(cfg.kind)
            .with_primary(cfg.primary)
            .with_policy(cfg.policy.clone())
            .with_class_rules(cfg.class_rules.clone());
        let specs = generate_workload(&cfg.workload);
        let m = RunMetrics {
            duration: cfg.workload.duration,
            per_iface_wire_bytes: vec![0; n],
            per_iface_app_bytes: vec![0; n],
            ..RunMetrics::default()
        };
        Ok(Sim {
            cfg,
            now: SimTime::ZERO,
            end: SimTime::from_secs(cfg.workload.duration),
            q: EventQueue::new(),
            n,
            links,
            ifaces,
            scheduler,
            profiles: ProfileStore::new(),
            tracker: ModeTracker::default(),
            specs,
            conns: Vec::new(),
            flows: Vec::new(),
            pending: VecDeque::new(),
            awaiting_mode: Vec::new(),
            passive: DeliveryMeter::new(n, SampleSource::Passive),
            peer: DeliveryMeter::new(n, SampleSource::PeerAck),
            busy_passive: vec![0; n],
            busy_peer: vec![0; n],
            probing: vec![false; n],
            mss: cfg.tcp.mss as u64,
            payload_size: chunk_payload_size(top.mtu),
            m,
        })
    }

    fn up_link(i: usize) -> usize {
        2 * i
    }

    fn down_link(i: usize) -> usize {
        2 * i + 1
    }

    fn server_up(&self) -> usize {
        2 * self.n
    }

    fn server_down(&self) -> usize {
        2 * self.n + 1
    }

    fn trace(&mut self, kind: TraceKind, conn: Option<usize>, iface: Option<usize>, id: Option<u64>) {
        if self.cfg.record.trace {
            self.m.trace.push(TraceRecord {
                time: self.now,
                kind,
                conn: conn.map(|c| self.specs[c].conn_id),
                iface: iface.map(|i| IfaceId(i as u16)),
                id,
            });
        }
    }

    fn run(&mut self) {
        for (i, spec) in self.specs.iter().enumerate() {
            self.q.push(SimTime::from_secs(spec.arrival_time), Ev::Arrival(i));
        }
        self.conns = (0..self.specs.len())
            .map(|_| Conn {
                phase: Phase::Waiting,
                class: QualClass::Unknown,
                record: None,
                ticket: None,
                flow: None,
                striped: None,
                delivered: 0,
            })
            .collect();
        for e in &self.cfg.events {
            self.q.push(SimTime::from_secs(e.at), Ev::Iface { iface: e.iface.index(), up: e.up });
        }
        self.q.push(SimTime::from_secs(self.cfg.sample_period), Ev::Sample);
        let mut probe_rng = rng_stream(self.cfg.workload.seed, streams::PROBE);
        let phase = probe_rng.random::<f64>() * self.cfg.probe.period;
        self.q.push(SimTime::from_secs(phase), Ev::Probe);
        if self.cfg.kind.is_packet_oriented()
            && self.cfg.mode_policy != ModePolicy::ConnectionOnly
            && self.tracker.begin_probe()
        {
            self.start_detection();
        }

        while let Some(t) = self.q.peek_time() {
            if t >= self.end {
                break;
            }
            let (t, ev) = self.q.pop().expect("peeked");
            self.now = t;
            match ev {
                Ev::Arrival(ci) => self.on_arrival(ci),
                Ev::Hop { link, pkt, epoch } => self.on_hop(link, pkt, epoch),
                Ev::Rto { flow, gen } => self.on_rto(flow, gen),
                Ev::Sample => self.on_sample(),
                Ev::Probe => self.on_probe(),
                Ev::ModeDetected(mode) => {
                    self.tracker.probe_finished(mode);
                    self.m.detected_mode = Some(self.tracker.mode_for_new_connection());
                    self.trace(TraceKind::Mode, None, None, Some((mode == OperationMode::PacketOriented) as u64));
                    for ci in std::mem::take(&mut self.awaiting_mode) {
                        self.try_start(ci);
                    }
                }
                Ev::Iface { iface, up: false } => self.iface_down(iface),
                Ev::Iface { iface, up: true } => self.iface_up(iface),
            }
        }
    }

    /// The dummy connection to the service port costs one round trip; it
    /// is answered either way unless it would exceed the timeout.
    fn start_detection(&mut self) {
        let top = &self.cfg.topology;
        let rtt = self
            .ifaces
            .iter()
            .position(|i| i.is_up)
            .map(|i| 2.0 * (top.interfaces[i].prop_delay + top.server.prop_delay));
        let (mode, at) = match rtt {
            Some(rtt) if rtt <= self.cfg.detect_timeout => {
                let mode = if self.cfg.workload.dest_supports_striping {
                    OperationMode::PacketOriented
                } else {
                    OperationMode::ConnectionOriented
                };
                (mode, rtt)
            }
            _ => (OperationMode::ConnectionOriented, self.cfg.detect_timeout),
        };
        self.q.push(SimTime::from_secs(at), Ev::ModeDetected(mode));
    }

    fn on_arrival(&mut self, ci: usize) {
        self.m.connections_arrived += 1;
        self.m.total_app_bytes_offered = self.m.total_app_bytes_offered.saturating_add(self.specs[ci].total_bytes);
        self.conns[ci].class = classify_app(self.scheduler.class_rules(), &self.specs[ci].app);
        self.trace(TraceKind::Arrive, Some(ci), None, Some(self.specs[ci].total_bytes));
        self.try_start(ci);
    }

    fn try_start(&mut self, ci: usize) {
        if self.cfg.mode_policy == ModePolicy::DetectAndWait && self.tracker.is_probing() {
            self.awaiting_mode.push(ci);
            return;
        }
        let spec = &self.specs[ci];
        let striped = self.cfg.kind.is_packet_oriented()
            && spec.dest_supports_striping
            && self.tracker.mode_for_new_connection() == OperationMode::PacketOriented
            && self.scheduler.pinned(spec, &self.ifaces).is_none();
        if !self.ifaces.iter().any(|i| i.is_up) {
            self.pending.push_back(ci);
            self.trace(TraceKind::Pending, Some(ci), None, None);
            return;
        }
        if striped {
            self.start_striped(ci);
            return;
        }
        let ticket = match self.scheduler.schedule_connection(spec, &mut self.ifaces, &self.profiles) {
            Ok(t) => t,
            Err(_) => {
                self.pending.push_back(ci);
                self.trace(TraceKind::Pending, Some(ci), None, None);
                return;
            }
        };
        let iface = ticket.iface.index();
        let total = spec.total_bytes;
        let record = ConnectionRecord::connection_oriented(spec.clone(), ticket.iface).expect("sizes are positive");
        let fi = self.new_flow(Owner::Conn(ci), iface, Segments::Stream { total });
        self.flows[fi].sender.push(total.div_ceil(self.mss));
        let conn = &mut self.conns[ci];
        conn.phase = Phase::Active;
        conn.record = Some(record);
        conn.ticket = Some(ticket);
        conn.flow = Some(fi);
        self.trace(TraceKind::Assign, Some(ci), Some(iface), None);
        self.pump(fi);
    }

    fn start_striped(&mut self, ci: usize) {
        let spec = &self.specs[ci];
        let record = ConnectionRecord::packet_oriented(spec.clone()).expect("sizes are positive");
        let striped = Striped {
            chunker: Chunker::new(spec.conn_id, spec.total_bytes, self.payload_size),
            unacked: UnackedSet::new(),
            flows: vec![None; self.n],
            reorder: ReorderBuffer::with_capacity(self.cfg.reorder_capacity),
            stalled: false,
        };
        let conn = &mut self.conns[ci];
        conn.phase = Phase::Active;
        conn.record = Some(record);
        conn.striped = Some(Box::new(striped));
        self.trace(TraceKind::Assign, Some(ci), None, None);
        self.fill_chunks(ci);
    }

    fn new_flow(&mut self, owner: Owner, iface: usize, segs: Segments) -> usize {
        self.flows.push(Flow {
            owner,
            iface,
            sender: TcpSender::new(&self.cfg.tcp),
            receiver: TcpReceiver::default(),
            segs,
            open: true,
            active: false,
            timer_gen: 0,
            timer_at: None,
        });
        self.flows.len() - 1
    }

    /// The open flow of a striped connection on `iface`, created on demand.
    fn striped_flow(&mut self, ci: usize, iface: usize) -> usize {
        let existing = self.conns[ci].striped.as_ref().expect("striped").flows[iface];
        if let Some(fi) = existing.filter(|&fi| self.flows[fi].open) {
            return fi;
        }
        let fi = self.new_flow(Owner::Conn(ci), iface, Segments::Chunks(Vec::new()));
        self.conns[ci].striped.as_mut().expect("striped").flows[iface] = Some(fi);
        fi
    }

    fn enqueue_chunk(&mut self, ci: usize, iface: usize, chunk_id: u64, len: u16) -> usize {
        let fi = self.striped_flow(ci, iface);
        let flow = &mut self.flows[fi];
        if let Segments::Chunks(v) = &mut flow.segs {
            v.push((chunk_id, len));
        }
        flow.sender.push(1);
        fi
    }

    /// Schedules chunks while the credit window allows: no chunk is more
    /// than the reorder capacity ahead of the oldest unacknowledged one.
    fn fill_chunks(&mut self, ci: usize) {
        let mut touched = Vec::new();
        loop {
            let st = self.conns[ci].striped.as_mut().expect("striped");
            if st.stalled {
                break;
            }
            let floor = st.unacked.lowest().unwrap_or(st.chunker.next_id());
            if st.chunker.next_id() >= floor + self.cfg.reorder_capacity as u64 || st.chunker.remaining_bytes() == 0 {
                break;
            }
            if !self.ifaces.iter().any(|i| i.is_up) {
                st.stalled = true;
                self.trace(TraceKind::Stall, Some(ci), None, None);
                break;
            }
            let chunk = st.chunker.next().expect("bytes remain");
            let to = self.scheduler.schedule_chunk(&chunk, &mut self.ifaces).expect("an interface is up");
            st.unacked.insert(chunk, (), to);
            let fi = self.enqueue_chunk(ci, to.index(), chunk.chunk_id, chunk.payload_len);
            if !touched.contains(&fi) {
                touched.push(fi);
            }
        }
        for fi in touched {
            self.pump(fi);
        }
    }

    fn pump(&mut self, fi: usize) {
        if self.flows[fi].open {
            while let Some(out) = self.flows[fi].sender.poll_send(self.now) {
                self.send_segment(fi, out.seq, out.retransmit);
            }
        }
        self.update_active(fi);
        self.sync_timer(fi);
    }

    fn send_segment(&mut self, fi: usize, seq: u64, retransmit: bool) {
        let flow = &self.flows[fi];
        let (app, chunk) = flow.segment(seq, self.mss);
        let wire = flow.wire_bytes(app);
        let iface = flow.iface;
        let source = flow.meter();
        if !retransmit {
            if let Owner::Conn(ci) = flow.owner {
                let conn = &mut self.conns[ci];
                match (chunk, conn.ticket.as_mut(), conn.striped.as_mut()) {
                    (None, Some(ticket), _) => {
                        ticket.on_transmit(app as u64, &mut self.ifaces);
                    }
                    (Some(id), _, Some(st)) => st.unacked.mark_sent(id, self.now.as_secs(), &mut self.ifaces),
                    _ => {}
                }
            }
        }
        if let Some(meter) = self.meter(source) {
            meter.sent(IfaceId(iface as u16), 1);
            if retransmit {
                meter.lost(IfaceId(iface as u16), 1);
            }
        }
        let link = Self::up_link(iface);
        let pkt = Pkt { flow: fi as u32, seq, wire };
        self.transmit(link, pkt);
    }

    fn transmit(&mut self, link: usize, pkt: Pkt) {
        let l = &mut self.links[link];
        if let Transmit::Arrives(at) = l.transmit(self.now, pkt.wire) {
            let epoch = l.epoch();
            self.q.push(at, Ev::Hop { link, pkt, epoch });
        }
    }

    fn meter(&mut self, source: Option<SampleSource>) -> Option<&mut DeliveryMeter> {
        match source {
            Some(SampleSource::Passive) => Some(&mut self.passive),
            Some(SampleSource::PeerAck) => Some(&mut self.peer),
            _ => None,
        }
    }

    fn update_active(&mut self, fi: usize) {
        let flow = &mut self.flows[fi];
        let active = flow.open && flow.sender.has_pending();
        if active == flow.active {
            return;
        }
        flow.active = active;
        let iface = flow.iface;
        let source = flow.meter();
        let now = self.now.as_secs();
        let (count, meter) = match source {
            Some(SampleSource::Passive) => (&mut self.busy_passive[iface], &mut self.passive),
            Some(SampleSource::PeerAck) => (&mut self.busy_peer[iface], &mut self.peer),
            _ => return,
        };
        if active {
            *count += 1;
            if *count == 1 {
                meter.set_busy(IfaceId(iface as u16), now, true);
            }
        } else {
            *count -= 1;
            if *count == 0 {
                meter.set_busy(IfaceId(iface as u16), now, false);
            }
        }
    }

    fn sync_timer(&mut self, fi: usize) {
        let flow = &mut self.flows[fi];
        if !flow.open {
            return;
        }
        if let Some(d) = flow.sender.deadline() {
            if flow.timer_at.is_none_or(|t| d < t) {
                flow.timer_gen += 1;
                flow.timer_at = Some(d);
                let gen = flow.timer_gen;
                self.q.push(d, Ev::Rto { flow: fi, gen });
            }
        }
    }

    fn on_rto(&mut self, fi: usize, gen: u32) {
        let flow = &mut self.flows[fi];
        if gen != flow.timer_gen || !flow.open {
            return;
        }
        flow.timer_at = None;
        if flow.sender.on_timeout(self.now) {
            let (iface, owner) = (flow.iface, match flow.owner {
                Owner::Conn(ci) => Some(ci),
                Owner::Probe { .. } => None,
            });
            self.trace(TraceKind::Rto, owner, Some(iface), None);
            self.pump(fi);
        } else {
            self.sync_timer(fi);
        }
    }

    fn on_hop(&mut self, link: usize, pkt: Pkt, epoch: u32) {
        if self.links[link].epoch() != epoch {
            return;
        }
        let server_up = self.server_up();
        let server_down = self.server_down();
        if link == server_up {
            self.server_receive(pkt);
        } else if link == server_down {
            let iface = self.flows[pkt.flow as usize].iface;
            self.transmit(Self::down_link(iface), pkt);
        } else if link.is_multiple_of(2) {
            self.transmit(server_up, pkt);
        } else {
            self.client_receive(pkt);
        }
    }

    fn server_receive(&mut self, pkt: Pkt) {
        let fi = pkt.flow as usize;
        let (ack, fresh) = self.flows[fi].receiver.on_segment(pkt.seq);
        for seq in fresh {
            self.deliver(fi, seq);
        }
        let wire = match self.flows[fi].segs {
            Segments::Stream { .. } => TRANSPORT_OVERHEAD,
            Segments::Chunks(_) => TRANSPORT_OVERHEAD + HEADER_LEN as u32,
        };
        let down = self.server_down();
        self.transmit(down, Pkt { flow: pkt.flow, seq: ack, wire });
    }

    fn deliver(&mut self, fi: usize, seq: u64) {
        let flow = &self.flows[fi];
        let Owner::Conn(ci) = flow.owner else { return };
        let (app, chunk) = flow.segment(seq, self.mss);
        match chunk {
            None => self.deliver_app(ci, seq * self.mss, app),
            Some(id) => {
                let iface = flow.iface;
                self.trace(TraceKind::ChunkRx, Some(ci), Some(iface), Some(id));
                let st = self.conns[ci].striped.as_mut().expect("striped");
                let ready = st.reorder.accept(id, (id, app as u16)).expect("credit window bounds the reorder buffer");
                for (id, len) in ready {
                    self.deliver_app(ci, id * self.payload_size as u64, len as u32);
                }
            }
        }
    }

    fn deliver_app(&mut self, ci: usize, offset: u64, len: u32) {
        let conn = &mut self.conns[ci];
        conn.delivered += len as u64;
        self.m.total_app_bytes_delivered += len as u64;
        if self.cfg.record.deliveries {
            self.m.deliveries.entry(self.specs[ci].conn_id).or_default().push((offset, len));
        }
        if conn.delivered == self.specs[ci].total_bytes {
            let fct = self.now.as_secs() - self.specs[ci].arrival_time;
            self.m.completion_times.push((self.specs[ci].conn_id, fct));
        }
    }

    fn client_receive(&mut self, pkt: Pkt) {
        let fi = pkt.flow as usize;
        if !self.flows[fi].open {
            return;
        }
        let out = self.flows[fi].sender.on_ack(self.now, pkt.seq);
        for seq in out.acked.clone() {
            self.segment_acked(fi, seq);
            if !self.flows[fi].open {
                break;
            }
        }
        if !self.flows[fi].open {
            self.update_active(fi);
            return;
        }
        if let Some(seq) = out.fast_retransmit {
            let (iface, owner) = (self.flows[fi].iface, match self.flows[fi].owner {
                Owner::Conn(ci) => Some(ci),
                Owner::Probe { .. } => None,
            });
            self.trace(TraceKind::FastRetransmit, owner, Some(iface), Some(seq));
            self.send_segment(fi, seq, true);
        }
        self.pump(fi);
        if let Owner::Conn(ci) = self.flows[fi].owner {
            if self.conns[ci].phase == Phase::Active && self.conns[ci].striped.is_some() {
                self.fill_chunks(ci);
            }
        }
    }

    fn segment_acked(&mut self, fi: usize, seq: u64) {
        let flow = &self.flows[fi];
        let iface = flow.iface;
        let (app, chunk) = flow.segment(seq, self.mss);
        let source = flow.meter();
        match flow.owner {
            Owner::Probe { .. } => {
                if !flow.sender.has_pending() {
                    self.probe_done(fi);
                }
            }
            Owner::Conn(ci) => {
                if let Some(id) = chunk {
                    let st = self.conns[ci].striped.as_mut().expect("striped");
                    if st.unacked.ack(id).is_none() {
                        return;
                    }
                    self.trace(TraceKind::ChunkAck, Some(ci), Some(iface), Some(id));
                }
                if let Some(meter) = self.meter(source) {
                    meter.delivered(IfaceId(iface as u16), app as u64);
                }
                self.m.per_iface_app_bytes[iface] += app as u64;
                let record = self.conns[ci].record.as_mut().expect("started");
                if record.acknowledge(app as u64).expect("acks never exceed demand") {
                    self.finish_conn(ci);
                }
            }
        }
    }

    fn finish_conn(&mut self, ci: usize) {
        self.m.connections_finished += 1;
        self.trace(TraceKind::Finish, Some(ci), None, None);
        let conn = &mut self.conns[ci];
        conn.phase = Phase::Done;
        let record = conn.record.as_ref().expect("started");
        let spec = &self.specs[ci];
        self.profiles
            .record_completion(&spec.app, conn.class, spec.total_bytes as f64)
            .expect("byte counts are non-negative");
        if let Some(ticket) = conn.ticket.as_mut() {
            on_connection_finished(record, ticket, &mut self.ifaces);
        }
        let mut flows: Vec<usize> = conn.flow.into_iter().collect();
        if let Some(st) = &conn.striped {
            flows.extend(st.flows.iter().flatten());
        }
        for fi in flows {
            self.close_flow(fi);
        }
    }

    fn close_flow(&mut self, fi: usize) {
        self.flows[fi].open = false;
        self.update_active(fi);
    }

    fn on_sample(&mut self) {
        let now = self.now.as_secs();
        let mut samples = self.passive.take_samples(now);
        samples.extend(self.peer.take_samples(now));
        for s in samples {
            self.apply_sample(s);
        }
        self.q.push(self.now + SimTime::from_secs(self.cfg.sample_period), Ev::Sample);
    }

    fn apply_sample(&mut self, s: BandwidthSample) {
        let i = s.iface.index();
        let updated = update_interface_estimate(self.ifaces[i].clone(), &s).expect("well-formed sample");
        self.ifaces[i] = updated;
        self.m.samples.push(SampleLog {
            time: self.now.as_secs(),
            iface: s.iface,
            source: s.source,
            rate_bps: s.rate_bps(),
            est_after: self.ifaces[i].est_bandwidth,
        });
        self.trace(TraceKind::Sample, None, Some(i), Some(s.rate_bps() as u64));
    }

    fn host_mode(&self) -> OperationMode {
        if self.cfg.kind.is_packet_oriented() {
            self.tracker.mode_for_new_connection()
        } else {
            OperationMode::ConnectionOriented
        }
    }

    fn on_probe(&mut self) {
        for req in probe_interfaces(&self.ifaces, self.host_mode(), &self.cfg.probe) {
            let i = req.iface.index();
            if self.probing[i] || req.bytes == 0 {
                continue;
            }
            self.probing[i] = true;
            let total = req.bytes;
            let fi = self.new_flow(Owner::Probe { req, started: self.now }, i, Segments::Stream { total });
            self.flows[fi].sender.push(total.div_ceil(self.mss));
            self.pump(fi);
        }
        self.q.push(self.now + SimTime::from_secs(self.cfg.probe.period), Ev::Probe);
    }

    fn probe_done(&mut self, fi: usize) {
        let flow = &self.flows[fi];
        let Owner::Probe { req, started } = &flow.owner else { return };
        let elapsed = (self.now - *started).as_secs();
        let sent = flow.sender.queued() + flow.sender.retransmits;
        let sample = req.complete(elapsed, flow.sender.retransmits, sent);
        self.probing[flow.iface] = false;
        self.m.probes_completed += 1;
        self.close_flow(fi);
        self.apply_sample(sample);
    }

    fn iface_down(&mut self, i: usize) {
        if !self.ifaces[i].is_up {
            return;
        }
        self.links[Self::up_link(i)].set_up(false, self.now);
        self.links[Self::down_link(i)].set_up(false, self.now);
        self.ifaces[i].is_up = false;
        self.trace(TraceKind::IfaceDown, None, Some(i), None);

        let mut striped = Vec::new();
        for fi in 0..self.flows.len() {
            if !self.flows[fi].open || self.flows[fi].iface != i {
                continue;
            }
            match self.flows[fi].owner {
                Owner::Probe { .. } => {
                    self.probing[i] = false;
                    self.close_flow(fi);
                }
                Owner::Conn(ci) if self.conns[ci].striped.is_some() => {
                    self.close_flow(fi);
                    if !striped.contains(&ci) {
                        striped.push(ci);
                    }
                }
                Owner::Conn(ci) => {
                    self.close_flow(fi);
                    let conn = &mut self.conns[ci];
                    conn.phase = Phase::Aborted;
                    if let Some(t) = &conn.ticket {
                        self.ifaces[i].drain_backlog(t.outstanding());
                    }
                    self.m.connections_aborted += 1;
                    self.trace(TraceKind::Abort, Some(ci), Some(i), None);
                }
            }
        }
        // every chunk placed on an interface sits in a flow there, so the
        // connections found above are all that need migrating
        striped.sort_unstable();
        for ci in striped {
            self.migrate(ci, i);
        }
    }

    fn migrate(&mut self, ci: usize, from: usize) {
        let st = self.conns[ci].striped.as_mut().expect("striped");
        match on_interface_down(IfaceId(from as u16), &mut st.unacked, &mut self.ifaces, &mut self.scheduler) {
            Ok(moved) => {
                let mut touched = Vec::new();
                for mv in moved {
                    let len = self.conns[ci].striped.as_ref().expect("striped").unacked.get(mv.chunk_id).expect("moved").chunk.payload_len;
                    let fi = self.enqueue_chunk(ci, mv.to.index(), mv.chunk_id, len);
                    self.trace(TraceKind::Migrate, Some(ci), Some(mv.to.index()), Some(mv.chunk_id));
                    if !touched.contains(&fi) {
                        touched.push(fi);
                    }
                }
                for fi in touched {
                    self.pump(fi);
                }
            }
            Err(MigrationError::MigrationImpossible { .. }) => {
                st.stalled = true;
                self.trace(TraceKind::Stall, Some(ci), None, None);
            }
            Err(MigrationError::Schedule(e)) => panic!("chunk scheduler refused a striped connection: {e}"),
        }
    }

    fn iface_up(&mut self, i: usize) {
        if self.ifaces[i].is_up {
            return;
        }
        self.links[Self::up_link(i)].set_up(true, self.now);
        self.links[Self::down_link(i)].set_up(true, self.now);
        self.ifaces[i].is_up = true;
        self.trace(TraceKind::IfaceUp, None, Some(i), None);

        for ci in std::mem::take(&mut self.pending) {
            self.try_start(ci);
        }
        for ci in 0..self.conns.len() {
            let stalled = self.conns[ci].phase == Phase::Active
                && self.conns[ci].striped.as_ref().is_some_and(|s| s.stalled);
            if !stalled {
                continue;
            }
            self.conns[ci].striped.as_mut().expect("striped").stalled = false;
            for j in 0..self.n {
                if !self.ifaces[j].is_up {
                    self.migrate(ci, j);
                }
            }
            // chunks stranded on this interface lost their flow when it went
            // down; they go out again on a fresh one
            let stranded: Vec<(u64, u16)> = self.conns[ci]
                .striped
                .as_ref()
                .expect("striped")
                .unacked
                .iter()
                .filter(|e| e.iface.index() == i)
                .map(|e| (e.chunk.chunk_id, e.chunk.payload_len))
                .collect();
            if !stranded.is_empty() {
                let mut fi = 0;
                for (id, len) in stranded {
                    fi = self.enqueue_chunk(ci, i, id, len);
                }
                self.pump(fi);
            }
            self.fill_chunks(ci);
        }
    }

    fn finish(mut self) -> RunMetrics {
        for i in 0..self.n {
            self.m.per_iface_wire_bytes[i] = self.links[Self::up_link(i)].bytes_sent();
        }
        self.m.aggregate_throughput = 8.0 * self.m.total_app_bytes_delivered as f64 / self.cfg.workload.duration;
        self.m.final_est_bandwidth = self.ifaces.iter().map(|i| i.est_bandwidth).collect();
        if self.cfg.record.departures {
            self.m.link_departures = (0..self.n)
                .map(|i| self.links[Self::up_link(i)].departures().unwrap_or_default().to_vec())
                .collect();
        }
        self.m
    }
}
