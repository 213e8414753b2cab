//! Application and interface characteristics estimation.
//!
//! Both estimators are exponentially weighted moving averages with a
//! smoothing weight of 1/8. An application's demand estimate moves once per
//! finished connection; an interface's bandwidth and loss estimates move once
//! per [`BandwidthSample`], whether that sample came from an active probe,
//! from passive accounting of ordinary traffic, or from the peer's per-chunk
//! acknowledgements.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::types::{
    AppKey, AppProfile, IfaceId, InterfaceState, OperationMode, ProfileKey, QualClass,
};

/// EWMA weight given to the newest observation.
pub const ALPHA: f64 = 0.125;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("connection demand {0} is negative or not finite")]
    NegativeDemand(f64),
    #[error("sample for {sample} applied to {iface}")]
    IfaceMismatch { iface: IfaceId, sample: IfaceId },
    #[error("sample window {0} s must be positive")]
    EmptyWindow(f64),
    #[error("sample reports {losses} losses out of {packets} packets")]
    LossesExceedPackets { losses: u64, packets: u64 },
}

/// Folds the byte count of a just-terminated connection into the profile.
pub fn update_app_demand(mut profile: AppProfile, cc_demand: f64) -> Result<AppProfile, EstimationError> {
    if !cc_demand.is_finite() || cc_demand < 0.0 {
        return Err(EstimationError::NegativeDemand(cc_demand));
    }
    profile.c_demand = (1.0 - ALPHA) * profile.c_demand + ALPHA * cc_demand;
    profile.completed_connections += 1;
    Ok(profile)
}

/// Per-application demand database.
#[derive(Debug, Clone, Default)]
pub struct ProfileStore {
    profiles: BTreeMap<ProfileKey, AppProfile>,
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// The stored profile, or a fresh one for an application never seen.
    pub fn lookup(&self, app: &AppKey) -> AppProfile {
        self.profiles
            .get(&app.profile_key())
            .cloned()
            .unwrap_or_else(|| AppProfile::fresh(app.clone()))
    }

    pub fn c_demand(&self, app: &AppKey) -> f64 {
        self.profiles.get(&app.profile_key()).map_or(0.0, |p| p.c_demand)
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Records a terminated connection of `app` that carried `bytes`.
    pub fn record_completion(
        &mut self,
        app: &AppKey,
        class: QualClass,
        bytes: f64,
    ) -> Result<&AppProfile, EstimationError> {
        let mut profile = self.lookup(app);
        profile.qual_class = class;
        let updated = update_app_demand(profile, bytes)?;
        let slot = self.profiles.entry(app.profile_key()).or_insert_with(|| AppProfile::fresh(app.clone()));
        *slot = updated;
        Ok(slot)
    }
}

/// Name and port rules for the qualitative class of an application.
///
/// Name rules are consulted first; the port rules only decide when no name
/// rule matched.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRules {
    pub names: Vec<(String, QualClass)>,
    pub ports: Vec<(u16, QualClass)>,
}

impl Default for ClassRules {
    fn default() -> Self {
        use QualClass::*;
        ClassRules {
            names: vec![
                ("skype".into(), Realtime),
                ("*voip*".into(), Realtime),
                ("zoom".into(), Realtime),
                ("*ftp*".into(), BandwidthIntensive),
                ("*torrent*".into(), BandwidthIntensive),
            ],
            ports: vec![
                (20, BandwidthIntensive),
                (21, BandwidthIntensive),
                (5060, Realtime),
                (3478, Realtime),
            ],
        }
    }
}

impl ClassRules {
    pub fn empty() -> Self {
        ClassRules { names: Vec::new(), ports: Vec::new() }
    }
}

pub fn classify_app(rules: &ClassRules, app: &AppKey) -> QualClass {
    let name = app.name.to_ascii_lowercase();
    if !name.is_empty() {
        for (pattern, class) in &rules.names {
            if crate::types::glob_match(&pattern.to_ascii_lowercase(), &name) {
                return *class;
            }
        }
    }
    if let Some(port) = app.port {
        if let Some((_, class)) = rules.ports.iter().find(|(p, _)| *p == port) {
            return *class;
        }
    }
    QualClass::Unknown
}

/// Where a bandwidth sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleSource {
    /// A dedicated probe transfer (connection-oriented mode).
    Probe,
    /// Accounting of ordinary connection traffic.
    Passive,
    /// Per-interface delivery counts reported back by the peer.
    PeerAck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSample {
    pub iface: IfaceId,
    pub bytes_delivered: u64,
    /// Seconds over which `bytes_delivered` were observed.
    pub window: f64,
    pub losses_observed: u64,
    pub packets_sent: u64,
    pub source: SampleSource,
}

impl BandwidthSample {
    pub fn rate_bps(&self) -> f64 {
        8.0 * self.bytes_delivered as f64 / self.window
    }
}

pub fn update_interface_estimate(
    mut iface: InterfaceState,
    sample: &BandwidthSample,
) -> Result<InterfaceState, EstimationError> {
    if sample.iface != iface.id {
        return Err(EstimationError::IfaceMismatch { iface: iface.id, sample: sample.iface });
    }
    if !(sample.window > 0.0) {
        return Err(EstimationError::EmptyWindow(sample.window));
    }
    if sample.losses_observed > sample.packets_sent {
        return Err(EstimationError::LossesExceedPackets {
            losses: sample.losses_observed,
            packets: sample.packets_sent,
        });
    }
    let loss = sample.losses_observed as f64 / sample.packets_sent.max(1) as f64;
    iface.est_bandwidth = (1.0 - ALPHA) * iface.est_bandwidth + ALPHA * sample.rate_bps();
    iface.est_loss_ratio = ((1.0 - ALPHA) * iface.est_loss_ratio + ALPHA * loss).clamp(0.0, 1.0);
    Ok(iface)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Bytes per probe transfer.
    pub probe_bytes: u64,
    /// Seconds between probe rounds.
    pub period: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { probe_bytes: 16 * 1024, period: 5.0 }
    }
}

/// One probe transfer to be carried out over `iface`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRequest {
    pub iface: IfaceId,
    pub bytes: u64,
}

impl ProbeRequest {
    /// Turns a finished probe transfer into a sample.
    pub fn complete(&self, elapsed: f64, losses: u64, packets: u64) -> BandwidthSample {
        BandwidthSample {
            iface: self.iface,
            bytes_delivered: self.bytes,
            window: elapsed,
            losses_observed: losses,
            packets_sent: packets,
            source: SampleSource::Probe,
        }
    }
}

/// Plans one round of active probing.
///
/// Connection-oriented hosts probe every up interface. In packet-oriented
/// mode nothing is sent: the estimates come from the peer through a
/// [`DeliveryMeter`] fed with acknowledgements instead.
pub fn probe_interfaces(
    ifaces: &[InterfaceState],
    mode: OperationMode,
    config: &ProbeConfig,
) -> Vec<ProbeRequest> {
    match mode {
        OperationMode::PacketOriented => Vec::new(),
        OperationMode::ConnectionOriented => ifaces
            .iter()
            .filter(|i| i.is_up)
            .map(|i| ProbeRequest { iface: i.id, bytes: config.probe_bytes })
            .collect(),
    }
}

#[derive(Debug, Clone, Default)]
struct MeterSlot {
    bytes: u64,
    losses: u64,
    packets: u64,
    busy_since: Option<f64>,
    busy: f64,
}

/// Accumulates delivery statistics per interface and cuts them into samples.
///
/// The window of a sample is the time the interface actually had data
/// outstanding, so an idle interface is not mistaken for a slow one.
#[derive(Debug, Clone)]
pub struct DeliveryMeter {
    slots: Vec<MeterSlot>,
    source: SampleSource,
    min_window: f64,
}

impl DeliveryMeter {
    pub fn new(n_ifaces: usize, source: SampleSource) -> Self {
        DeliveryMeter { slots: vec![MeterSlot::default(); n_ifaces], source, min_window: 0.05 }
    }

    pub fn delivered(&mut self, iface: IfaceId, bytes: u64) {
        self.slots[iface.index()].bytes += bytes;
    }

    pub fn sent(&mut self, iface: IfaceId, packets: u64) {
        self.slots[iface.index()].packets += packets;
    }

    pub fn lost(&mut self, iface: IfaceId, packets: u64) {
        self.slots[iface.index()].losses += packets;
    }

    pub fn set_busy(&mut self, iface: IfaceId, now: f64, busy: bool) {
        let slot = &mut self.slots[iface.index()];
        match (slot.busy_since, busy) {
            (None, true) => slot.busy_since = Some(now),
            (Some(since), false) => {
                slot.busy += now - since;
                slot.busy_since = None;
            }
            _ => {}
        }
    }

    /// Closes the current window and returns one sample per interface that
    /// was busy long enough to say something.
    pub fn take_samples(&mut self, now: f64) -> Vec<BandwidthSample> {
        let mut out = Vec::new();
        for (i, slot) in self.slots.iter_mut().enumerate() {
            if let Some(since) = slot.busy_since {
                slot.busy += now - since;
                slot.busy_since = Some(now);
            }
            if slot.busy >= self.min_window && slot.bytes > 0 {
                out.push(BandwidthSample {
                    iface: IfaceId(i as u16),
                    bytes_delivered: slot.bytes,
                    window: slot.busy,
                    losses_observed: slot.losses.min(slot.packets),
                    packets_sent: slot.packets,
                    source: self.source,
                });
            }
            slot.bytes = 0;
            slot.losses = 0;
            slot.packets = 0;
            slot.busy = 0.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::new_interface;

    fn profile(c: f64) -> AppProfile {
        AppProfile { c_demand: c, ..AppProfile::fresh(AppKey::named("web")) }
    }

    #[test]
    fn demand_update_examples() {
        assert_eq!(update_app_demand(profile(0.0), 8000.0).unwrap().c_demand, 1000.0);
        assert_eq!(update_app_demand(profile(22380.0), 22380.0).unwrap().c_demand, 22380.0);
        assert_eq!(update_app_demand(profile(1000.0), 9000.0).unwrap().c_demand, 2000.0);
        assert_eq!(update_app_demand(profile(0.0), 1.0).unwrap().completed_connections, 1);
    }

    #[test]
    fn negative_demand_rejected() {
        assert_eq!(update_app_demand(profile(0.0), -1.0), Err(EstimationError::NegativeDemand(-1.0)));
        assert!(update_app_demand(profile(0.0), f64::INFINITY).is_err());
    }

    #[test]
    fn store_lookup_of_unknown_app_is_fresh_and_stable() {
        let store = ProfileStore::new();
        let a = store.lookup(&AppKey::named("never-seen"));
        let b = store.lookup(&AppKey::named("never-seen"));
        assert_eq!(a, b);
        assert_eq!(a.c_demand, 0.0);
        assert_eq!(a.qual_class, QualClass::Unknown);
        assert!(store.is_empty());
    }

    #[test]
    fn store_keeps_one_profile_per_app() {
        let mut store = ProfileStore::new();
        let web = AppKey::named("web");
        store.record_completion(&web, QualClass::Unknown, 8000.0).unwrap();
        store.record_completion(&AppKey::with_port("WEB", 80), QualClass::Unknown, 8000.0).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.c_demand(&web), 1875.0);
        assert_eq!(store.lookup(&web).completed_connections, 2);
    }

    #[test]
    fn classification_examples() {
        let rules = ClassRules::default();
        assert_eq!(classify_app(&rules, &AppKey::named("skype")), QualClass::Realtime);
        assert_eq!(classify_app(&rules, &AppKey::with_port("client", 21)), QualClass::BandwidthIntensive);
        assert_eq!(classify_app(&rules, &AppKey::named("unknownapp")), QualClass::Unknown);
        // name rules take precedence over port rules
        assert_eq!(classify_app(&rules, &AppKey::with_port("Skype", 21)), QualClass::Realtime);
    }

    fn sample(bytes: u64, window: f64, losses: u64, packets: u64) -> BandwidthSample {
        BandwidthSample {
            iface: IfaceId(0),
            bytes_delivered: bytes,
            window,
            losses_observed: losses,
            packets_sent: packets,
            source: SampleSource::Passive,
        }
    }

    #[test]
    fn interface_estimate_examples() {
        let mut cold = new_interface(IfaceId(0), 2e6, 0.0, 1500).unwrap();
        cold.est_bandwidth = 0.0;
        let warm = update_interface_estimate(cold, &sample(250_000, 1.0, 0, 100)).unwrap();
        assert_eq!(warm.est_bandwidth, 250_000.0);

        let steady = new_interface(IfaceId(0), 2e6, 0.0, 1500).unwrap();
        let steady = update_interface_estimate(steady, &sample(250_000, 1.0, 0, 100)).unwrap();
        assert_eq!(steady.est_bandwidth, 2e6);

        let lossy = new_interface(IfaceId(0), 2e6, 0.0, 1500).unwrap();
        let lossy = update_interface_estimate(lossy, &sample(250_000, 1.0, 5, 100)).unwrap();
        assert!((lossy.est_loss_ratio - 0.00625).abs() < 1e-15);
    }

    #[test]
    fn interface_estimate_rejects_bad_samples() {
        let iface = new_interface(IfaceId(1), 2e6, 0.0, 1500).unwrap();
        assert!(matches!(
            update_interface_estimate(iface.clone(), &sample(1, 1.0, 0, 1)),
            Err(EstimationError::IfaceMismatch { .. })
        ));
        let mut s = sample(1, 0.0, 0, 1);
        s.iface = IfaceId(1);
        assert!(matches!(update_interface_estimate(iface.clone(), &s), Err(EstimationError::EmptyWindow(_))));
        let mut s = sample(1, 1.0, 2, 1);
        s.iface = IfaceId(1);
        assert!(update_interface_estimate(iface, &s).is_err());
    }

    fn two_ifaces() -> Vec<InterfaceState> {
        vec![
            new_interface(IfaceId(0), 2e6, 0.0, 1500).unwrap(),
            new_interface(IfaceId(1), 1e6, 0.0, 1500).unwrap(),
        ]
    }

    #[test]
    fn probing_plans() {
        let cfg = ProbeConfig::default();
        let mut ifaces = two_ifaces();
        let plan = probe_interfaces(&ifaces, OperationMode::ConnectionOriented, &cfg);
        assert_eq!(plan.len(), 2);
        assert!(plan.iter().all(|p| p.bytes == 16 * 1024));

        ifaces[1].is_up = false;
        let plan = probe_interfaces(&ifaces, OperationMode::ConnectionOriented, &cfg);
        assert_eq!(plan, vec![ProbeRequest { iface: IfaceId(0), bytes: 16384 }]);

        assert!(probe_interfaces(&two_ifaces(), OperationMode::PacketOriented, &cfg).is_empty());
    }

    #[test]
    fn probe_completion_makes_a_probe_sample() {
        let req = ProbeRequest { iface: IfaceId(1), bytes: 16384 };
        let s = req.complete(0.5, 0, 12);
        assert_eq!(s.source, SampleSource::Probe);
        assert_eq!(s.rate_bps(), 16384.0 * 8.0 / 0.5);
    }

    #[test]
    fn meter_uses_busy_time_as_window() {
        let mut meter = DeliveryMeter::new(2, SampleSource::PeerAck);
        meter.set_busy(IfaceId(0), 0.0, true);
        meter.delivered(IfaceId(0), 25_000);
        meter.sent(IfaceId(0), 20);
        meter.set_busy(IfaceId(0), 0.25, false);
        let samples = meter.take_samples(1.0);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].window, 0.25);
        assert_eq!(samples[0].source, SampleSource::PeerAck);
        assert!(meter.take_samples(2.0).is_empty());
    }

    #[test]
    fn meter_carries_open_busy_period_across_windows() {
        let mut meter = DeliveryMeter::new(1, SampleSource::Passive);
        meter.set_busy(IfaceId(0), 0.5, true);
        meter.delivered(IfaceId(0), 100);
        let s = meter.take_samples(1.0);
        assert_eq!(s[0].window, 0.5);
        meter.delivered(IfaceId(0), 100);
        let s = meter.take_samples(2.0);
        assert_eq!(s[0].window, 1.0);
    }
}
