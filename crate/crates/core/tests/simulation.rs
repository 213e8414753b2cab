use std::collections::{BTreeMap, HashSet};

use ifagg::estimation::SampleSource;
use ifagg::netsim::{
    generate_workload, run_simulation, simulate, IfaceEvent, LinkConfig, ModePolicy, Recording, SimConfig, SimError,
    TraceKind, Topology, WorkloadSpec,
};
use ifagg::scheduling::SchedulerKind;
use ifagg::types::{ConnId, IfaceId, OperationMode};

fn light(duration: f64, seed: u64) -> WorkloadSpec {
    WorkloadSpec { beta_small: 4.0, beta_large: 0.2, duration, seed, ..WorkloadSpec::default() }
}

fn recorded(mut cfg: SimConfig) -> SimConfig {
    cfg.record = Recording { trace: true, deliveries: true, departures: true };
    cfg
}

/// Offsets must tile [0, total) in order with no gap or overlap.
fn assert_contiguous(conn: ConnId, chunks: &[(u64, u32)], total: u64) {
    let mut next = 0u64;
    for &(off, len) in chunks {
        assert_eq!(off, next, "conn {conn}: gap or repeat at {off}");
        next += len as u64;
    }
    assert_eq!(next, total, "conn {conn}: stream length");
}

#[test]
fn same_seed_same_run() {
    for kind in SchedulerKind::ALL {
        let cfg = recorded(SimConfig::new(Topology::nominal(), light(8.0, 3), kind));
        let a = simulate(&cfg).unwrap().serialize();
        let b = simulate(&cfg).unwrap().serialize();
        assert_eq!(a, b, "{}", kind.name());
        let other = SimConfig { workload: light(8.0, 4), ..cfg.clone() };
        assert_ne!(a, simulate(&other).unwrap().serialize());
    }
}

#[test]
fn delivered_never_exceeds_offered_and_finished_streams_are_whole() {
    for kind in SchedulerKind::ALL {
        let cfg = recorded(SimConfig::new(Topology::nominal(), light(20.0, 9), kind));
        let m = simulate(&cfg).unwrap();
        assert!(m.total_app_bytes_delivered <= m.total_app_bytes_offered);
        let specs: BTreeMap<ConnId, u64> =
            generate_workload(&cfg.workload).iter().map(|c| (c.conn_id, c.total_bytes)).collect();
        assert!(m.connections_finished > 0);
        for (id, _) in &m.completion_times {
            assert_contiguous(*id, &m.deliveries[id], specs[id]);
        }
        let delivered: u64 = m.deliveries.values().flatten().map(|d| d.1 as u64).sum();
        assert_eq!(delivered, m.total_app_bytes_delivered);
    }
}

#[test]
fn uplinks_never_beat_their_rate() {
    let topo = Topology::nominal();
    for kind in [SchedulerKind::CoMaxThroughput, SchedulerKind::PoWeightedRoundRobin] {
        let cfg = recorded(SimConfig::new(topo.clone(), WorkloadSpec { duration: 15.0, ..WorkloadSpec::default() }, kind));
        let m = simulate(&cfg).unwrap();
        for (link, deps) in topo.interfaces.iter().zip(&m.link_departures) {
            assert!(!deps.is_empty());
            let cap = link.bandwidth_bps / 8.0 + topo.mtu as f64;
            let mut lo = 0;
            let mut in_window = 0u64;
            for (hi, &(t, bytes)) in deps.iter().enumerate() {
                in_window += bytes as u64;
                while deps[lo].0 .0 + 1_000_000_000 <= t.0 {
                    in_window -= deps[lo].1 as u64;
                    lo += 1;
                }
                assert!(in_window as f64 <= cap, "{} bytes in the second ending at {t} (entry {hi})", in_window);
            }
        }
    }
}

#[test]
fn chunks_are_acknowledged_only_after_arrival() {
    let cfg = recorded(SimConfig::new(Topology::nominal(), light(10.0, 2), SchedulerKind::PoRoundRobin));
    let m = simulate(&cfg).unwrap();
    let mut received = HashSet::new();
    let mut acks = 0;
    for r in &m.trace {
        match r.kind {
            TraceKind::ChunkRx => {
                received.insert((r.conn, r.id));
            }
            TraceKind::ChunkAck => {
                acks += 1;
                assert!(received.contains(&(r.conn, r.id)), "ack before receipt: {r}");
            }
            _ => {}
        }
    }
    assert!(acks > 100);
}

#[test]
fn connection_oriented_traffic_stays_on_one_interface() {
    for kind in &SchedulerKind::ALL[..4] {
        let cfg = recorded(SimConfig::new(Topology::nominal(), light(10.0, 5), *kind));
        let m = simulate(&cfg).unwrap();
        let mut seen: BTreeMap<ConnId, usize> = BTreeMap::new();
        for r in m.trace.iter().filter(|r| r.kind == TraceKind::Assign) {
            assert!(r.iface.is_some());
            *seen.entry(r.conn.unwrap()).or_default() += 1;
        }
        assert!(seen.values().all(|&n| n == 1));
        assert!(!m.trace.iter().any(|r| r.kind == TraceKind::ChunkRx));
    }
}

#[test]
fn failure_mid_transfer_keeps_every_stream_whole() {
    let wl = WorkloadSpec { beta_small: 2.0, beta_large: 0.5, duration: 40.0, seed: 21, ..WorkloadSpec::default() };
    let base = recorded(SimConfig::new(Topology::nominal(), wl.clone(), SchedulerKind::PoWeightedRoundRobin));
    let failing = SimConfig { events: vec![IfaceEvent { at: 6.0, iface: IfaceId(1), up: false }], ..base.clone() };
    let clean = simulate(&base).unwrap();
    let failed = simulate(&failing).unwrap();
    let migrated = failed.trace.iter().filter(|r| r.kind == TraceKind::Migrate).count();
    assert!(migrated > 0, "the failure should strand chunks");
    assert!(failed.link_departures[1].iter().all(|d| d.0.as_secs() <= 6.0));
    let sizes: BTreeMap<ConnId, u64> = generate_workload(&wl).iter().map(|c| (c.conn_id, c.total_bytes)).collect();
    let finished: HashSet<ConnId> = failed.completion_times.iter().map(|c| c.0).collect();
    assert!(finished.len() * 10 >= sizes.len() * 8);
    for id in &finished {
        assert_contiguous(*id, &failed.deliveries[id], sizes[id]);
        if clean.completion_times.iter().any(|c| c.0 == *id) {
            assert_eq!(failed.deliveries[id].iter().map(|d| d.1 as u64).sum::<u64>(),
                       clean.deliveries[id].iter().map(|d| d.1 as u64).sum::<u64>());
        }
    }
}

#[test]
fn fail_and_restore_without_traffic_changes_nothing() {
    let idle = WorkloadSpec { beta_small: 0.0, beta_large: 0.0, duration: 10.0, ..WorkloadSpec::default() };
    let cfg = SimConfig::new(Topology::nominal(), idle, SchedulerKind::PoWeightedRoundRobin);
    let flapped = SimConfig {
        events: vec![
            IfaceEvent { at: 2.0, iface: IfaceId(1), up: false },
            IfaceEvent { at: 3.0, iface: IfaceId(1), up: true },
        ],
        ..cfg.clone()
    };
    assert_eq!(simulate(&cfg).unwrap().serialize(), simulate(&flapped).unwrap().serialize());
}

#[test]
fn losing_the_only_interface_stalls_then_resumes() {
    let topo = Topology { interfaces: vec![LinkConfig::new(2e6, 0.0)], ..Topology::nominal() };
    let mut cfg = recorded(SimConfig::new(topo, WorkloadSpec::saturating(30.0, 1), SchedulerKind::PoWeightedRoundRobin));
    cfg.mode_policy = ModePolicy::DetectAndWait;
    cfg.events = vec![IfaceEvent { at: 10.0, iface: IfaceId(0), up: false }, IfaceEvent { at: 20.0, iface: IfaceId(0), up: true }];
    let m = simulate(&cfg).unwrap();
    let deps = &m.link_departures[0];
    assert!(!deps.iter().any(|d| d.0.as_secs() > 10.0 && d.0.as_secs() < 20.0));
    assert!(deps.iter().any(|d| d.0.as_secs() > 21.0));
    assert!(m.trace.iter().any(|r| r.kind == TraceKind::Stall));
    let stream = &m.deliveries[&ConnId(0)];
    let total: u64 = stream.iter().map(|d| d.1 as u64).sum();
    assert!(total as f64 * 8.0 > 2e6 * 15.0);
    assert_contiguous(ConnId(0), stream, total);
}

#[test]
fn no_arrivals_no_throughput() {
    let idle = WorkloadSpec { beta_small: 0.0, beta_large: 0.0, duration: 5.0, ..WorkloadSpec::default() };
    for kind in SchedulerKind::ALL {
        let m = run_simulation(&Topology::nominal(), &idle, kind, ModePolicy::DetectAndWait).unwrap();
        assert_eq!(m.aggregate_throughput, 0.0);
        assert_eq!(m.connections_arrived, 0);
    }
}

#[test]
fn single_reno_flow_follows_the_square_root_law() {
    let mss = 1460.0;
    let p: f64 = 0.01;
    let rtt = 0.040;
    let predicted = mss * 8.0 / (rtt * (2.0 * p / 3.0).sqrt());
    assert!((predicted - 3.5770e6).abs() < 1e3, "{predicted}");
    let topo = Topology {
        interfaces: vec![LinkConfig::new(100e6, p)],
        server: LinkConfig::new(1e9, 0.0),
        mtu: 1500,
    };
    let mut rates = Vec::new();
    for seed in 1..=5 {
        let m = run_simulation(&topo, &WorkloadSpec::saturating(60.0, seed), SchedulerKind::OnlyOne, ModePolicy::ConnectionOnly)
            .unwrap();
        rates.push(m.aggregate_throughput);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!(mean >= predicted / 2.0 && mean <= predicted * 2.0, "{mean} vs {predicted}");
}

#[test]
fn bandwidth_estimates_stay_under_capacity() {
    for kind in [SchedulerKind::OnlyOne, SchedulerKind::CoWeightedRoundRobin, SchedulerKind::PoWeightedRoundRobin] {
        let m = run_simulation(&Topology::nominal(), &WorkloadSpec { duration: 30.0, ..WorkloadSpec::default() }, kind,
                               ModePolicy::DetectAndWait).unwrap();
        let caps = [2e6, 1e6];
        for s in &m.samples {
            assert!(s.est_after <= caps[s.iface.index()] * 1.125, "{kind:?} {s:?}");
        }
        for (est, cap) in m.final_est_bandwidth.iter().zip(caps) {
            assert!(*est <= cap * 1.125);
        }
    }
}

#[test]
fn sample_sources_follow_the_mode() {
    let striped = run_simulation(&Topology::nominal(), &light(20.0, 1), SchedulerKind::PoWeightedRoundRobin,
                                 ModePolicy::DetectAndWait).unwrap();
    assert_eq!(striped.detected_mode, Some(OperationMode::PacketOriented));
    assert_eq!(striped.probes_completed, 0);
    assert!(striped.samples.iter().all(|s| s.source != SampleSource::Probe));
    assert!(striped.samples.iter().any(|s| s.source == SampleSource::PeerAck));

    let legacy = WorkloadSpec { dest_supports_striping: false, ..light(20.0, 1) };
    let co = run_simulation(&Topology::nominal(), &legacy, SchedulerKind::PoWeightedRoundRobin, ModePolicy::DetectAndWait)
        .unwrap();
    assert_eq!(co.detected_mode, Some(OperationMode::ConnectionOriented));
    assert!(co.probes_completed > 0);
    assert!(co.samples.iter().any(|s| s.source == SampleSource::Probe));
    assert!(co.samples.iter().all(|s| s.source != SampleSource::PeerAck));
}

#[test]
fn unusable_topologies_are_rejected() {
    let wl = light(1.0, 1);
    let empty = Topology { interfaces: vec![], ..Topology::nominal() };
    assert!(matches!(run_simulation(&empty, &wl, SchedulerKind::OnlyOne, ModePolicy::Detect), Err(SimError::NoPath(_))));
    let dead = Topology { interfaces: vec![LinkConfig::new(0.0, 0.0)], ..Topology::nominal() };
    assert!(matches!(run_simulation(&dead, &wl, SchedulerKind::OnlyOne, ModePolicy::Detect), Err(SimError::NoPath(_))));
    let lossy = Topology { interfaces: vec![LinkConfig::new(1e6, 1.0)], ..Topology::nominal() };
    assert!(matches!(run_simulation(&lossy, &wl, SchedulerKind::OnlyOne, ModePolicy::Detect), Err(SimError::NoPath(_))));
    let mut cfg = SimConfig::new(Topology::nominal(), wl, SchedulerKind::OnlyOne);
    cfg.primary = IfaceId(5);
    assert!(matches!(simulate(&cfg), Err(SimError::UnknownInterface { .. })));
}

#[test]
fn one_interface_saturated_lands_near_its_rate() {
    let m = run_simulation(&Topology::nominal(), &WorkloadSpec::saturating(60.0, 1), SchedulerKind::OnlyOne,
                           ModePolicy::DetectAndWait).unwrap();
    assert!((1.8e6..=2.0e6).contains(&m.aggregate_throughput), "{}", m.aggregate_throughput);
    assert_eq!(m.per_iface_app_bytes[1], 0);
}
