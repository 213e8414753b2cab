use std::collections::BTreeMap;

use thiserror::Error;

use crate::scheduling::{ScheduleError, Scheduler};
use crate::transport::frame::HEADER_LEN;
use crate::types::{Chunk, IfaceId, InterfaceState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MigrationError {
    #[error("no surviving interface to migrate {stranded} chunks to")]
    MigrationImpossible { stranded: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// A chunk placed on an interface and not yet acknowledged.
#[derive(Debug, Clone, PartialEq)]
pub struct UnackedEntry<P> {
    pub chunk: Chunk,
    pub payload: P,
    pub iface: IfaceId,
    /// `None` while the chunk is still queued behind the interface.
    pub sent_at: Option<f64>,
    /// Bytes of this chunk still counted in the interface backlog.
    pub charged: u64,
}

/// Per-connection record of chunks awaiting acknowledgement.
#[derive(Debug, Clone)]
pub struct UnackedSet<P> {
    entries: BTreeMap<u64, UnackedEntry<P>>,
}

impl<P> Default for UnackedSet<P> {
    fn default() -> Self {
        UnackedSet { entries: BTreeMap::new() }
    }
}

impl<P> UnackedSet<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a freshly scheduled chunk, charged in full to `iface`.
    pub fn insert(&mut self, chunk: Chunk, payload: P, iface: IfaceId) {
        let charged = chunk.payload_len as u64 + HEADER_LEN as u64;
        self.entries.insert(chunk.chunk_id, UnackedEntry { chunk, payload, iface, sent_at: None, charged });
    }

    /// Marks a chunk transmitted, releasing its backlog charge.
    pub fn mark_sent(&mut self, chunk_id: u64, now: f64, ifaces: &mut [InterfaceState]) {
        if let Some(e) = self.entries.get_mut(&chunk_id) {
            if e.sent_at.is_none() {
                e.sent_at = Some(now);
            }
            ifaces[e.iface.index()].drain_backlog(e.charged);
            e.charged = 0;
        }
    }

    /// Removes a chunk on receipt of its acknowledgement.
    pub fn ack(&mut self, chunk_id: u64) -> Option<UnackedEntry<P>> {
        self.entries.remove(&chunk_id)
    }

    pub fn get(&self, chunk_id: u64) -> Option<&UnackedEntry<P>> {
        self.entries.get(&chunk_id)
    }

    pub fn contains(&self, chunk_id: u64) -> bool {
        self.entries.contains_key(&chunk_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UnackedEntry<P>> {
        self.entries.values()
    }

    /// Smallest chunk id still awaiting acknowledgement.
    pub fn lowest(&self) -> Option<u64> {
        self.entries.keys().next().copied()
    }

    pub fn on_iface(&self, iface: IfaceId) -> usize {
        self.entries.values().filter(|e| e.iface == iface).count()
    }
}

/// A chunk moved off a failed interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Migrated {
    pub chunk_id: u64,
    pub from: IfaceId,
    pub to: IfaceId,
}

/// Moves every unacknowledged chunk of the failed interface onto the
/// surviving ones through the chunk scheduler. Chunk ids are preserved, so
/// the receiver's reorder buffer stitches the stream back together.
pub fn on_interface_down<P>(
    down: IfaceId,
    unacked: &mut UnackedSet<P>,
    ifaces: &mut [InterfaceState],
    scheduler: &mut Scheduler,
) -> Result<Vec<Migrated>, MigrationError> {
    ifaces[down.index()].is_up = false;
    let stranded: Vec<u64> =
        unacked.entries.values().filter(|e| e.iface == down).map(|e| e.chunk.chunk_id).collect();
    if stranded.is_empty() {
        return Ok(Vec::new());
    }
    if !ifaces.iter().any(|i| i.is_up) {
        return Err(MigrationError::MigrationImpossible { stranded: stranded.len() });
    }
    let mut moved = Vec::with_capacity(stranded.len());
    for id in stranded {
        let entry = unacked.entries.get_mut(&id).expect("collected above");
        ifaces[down.index()].drain_backlog(entry.charged);
        let to = scheduler.schedule_chunk(&entry.chunk, ifaces)?;
        entry.iface = to;
        entry.sent_at = None;
        entry.charged = entry.chunk.payload_len as u64 + HEADER_LEN as u64;
        moved.push(Migrated { chunk_id: id, from: down, to });
    }
    Ok(moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduling::SchedulerKind;
    use crate::types::{new_interface, ConnId};

    fn ifaces() -> Vec<InterfaceState> {
        vec![
            new_interface(IfaceId(0), 2e6, 0.0, 1500).unwrap(),
            new_interface(IfaceId(1), 1e6, 0.0, 1500).unwrap(),
        ]
    }

    fn chunk(id: u64) -> Chunk {
        Chunk { conn_id: ConnId(1), chunk_id: id, payload_len: 1442, acked: false }
    }

    #[test]
    fn five_chunks_move_to_the_survivor() {
        let mut ifs = ifaces();
        let mut set = UnackedSet::new();
        for id in 0..5 {
            set.insert(chunk(id), (), IfaceId(1));
            ifs[1].add_backlog(1460);
            set.mark_sent(id, 0.1, &mut ifs);
        }
        set.insert(chunk(5), (), IfaceId(0));
        let mut sched = Scheduler::new(SchedulerKind::PoWeightedRoundRobin);
        let moved = on_interface_down(IfaceId(1), &mut set, &mut ifs, &mut sched).unwrap();
        assert_eq!(moved.len(), 5);
        assert!(moved.iter().all(|m| m.to == IfaceId(0) && m.from == IfaceId(1)));
        assert_eq!(moved.iter().map(|m| m.chunk_id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(set.on_iface(IfaceId(0)), 6);
        assert_eq!(ifs[1].backlog_bytes, 0);
        assert_eq!(ifs[0].backlog_bytes, 5 * 1460);
        assert!(set.iter().all(|e| e.iface != IfaceId(1)));
    }

    #[test]
    fn queued_chunks_release_their_charge() {
        let mut ifs = ifaces();
        let mut set = UnackedSet::new();
        set.insert(chunk(0), (), IfaceId(1));
        ifs[1].add_backlog(1460);
        let mut sched = Scheduler::new(SchedulerKind::PoRoundRobin);
        on_interface_down(IfaceId(1), &mut set, &mut ifs, &mut sched).unwrap();
        assert_eq!(ifs[1].backlog_bytes, 0);
        assert_eq!(set.get(0).unwrap().charged, 1460);
    }

    #[test]
    fn nothing_to_migrate() {
        let mut ifs = ifaces();
        let mut set: UnackedSet<()> = UnackedSet::new();
        set.insert(chunk(0), (), IfaceId(0));
        let mut sched = Scheduler::new(SchedulerKind::PoRoundRobin);
        assert!(on_interface_down(IfaceId(1), &mut set, &mut ifs, &mut sched).unwrap().is_empty());
    }

    #[test]
    fn no_survivor() {
        let mut ifs = ifaces();
        ifs[0].is_up = false;
        let mut set = UnackedSet::new();
        set.insert(chunk(0), (), IfaceId(1));
        let mut sched = Scheduler::new(SchedulerKind::PoRoundRobin);
        assert_eq!(
            on_interface_down(IfaceId(1), &mut set, &mut ifs, &mut sched),
            Err(MigrationError::MigrationImpossible { stranded: 1 })
        );
    }

    #[test]
    fn ack_removes_exactly_once() {
        let mut set = UnackedSet::new();
        set.insert(chunk(3), "p", IfaceId(0));
        assert!(set.contains(3));
        assert_eq!(set.ack(3).unwrap().payload, "p");
        assert!(set.ack(3).is_none());
        assert!(set.is_empty());
    }
}
