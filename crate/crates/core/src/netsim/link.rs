use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::event::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub bandwidth_bps: f64,
    pub prop_delay: f64,
    /// Per-packet Bernoulli drop probability in the data direction.
    pub loss_ratio: f64,
    /// Drop-tail queue size in packets of MTU size.
    pub queue_packets: u32,
}

impl LinkConfig {
    pub fn new(bandwidth_bps: f64, loss_ratio: f64) -> Self {
        LinkConfig { bandwidth_bps, prop_delay: 0.010, loss_ratio, queue_packets: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmit {
    /// The packet reaches the far end at this time.
    Arrives(SimTime),
    /// Tail drop: the queue was full.
    QueueDrop,
    /// Serialized onto the wire but corrupted.
    Lost,
    /// The link is down.
    Down,
}

/// One direction of a shaped link: a drop-tail FIFO in front of a fixed-rate
/// serializer, followed by a fixed propagation delay.
#[derive(Debug, Clone)]
pub struct Link {
    bandwidth_bps: f64,
    prop_delay: SimTime,
    loss_ratio: f64,
    queue_cap_bytes: u64,
    busy_until: SimTime,
    /// Departure times and sizes of packets not yet fully serialized.
    fifo: VecDeque<(SimTime, u32)>,
    queued_bytes: u64,
    up: bool,
    epoch: u32,
    rng: ChaCha8Rng,
    bytes_sent: u64,
    departures: Option<Vec<(SimTime, u32)>>,
}

impl Link {
    pub fn new(config: &LinkConfig, mtu: u32, rng: ChaCha8Rng) -> Self {
        Link {
            bandwidth_bps: config.bandwidth_bps,
            prop_delay: SimTime::from_secs(config.prop_delay),
            loss_ratio: config.loss_ratio,
            queue_cap_bytes: config.queue_packets as u64 * mtu as u64,
            busy_until: SimTime::ZERO,
            fifo: VecDeque::new(),
            queued_bytes: 0,
            up: true,
            epoch: 0,
            rng,
            bytes_sent: 0,
            departures: None,
        }
    }

    pub fn record_departures(&mut self) {
        self.departures = Some(Vec::new());
    }

    pub fn departures(&self) -> Option<&[(SimTime, u32)]> {
        self.departures.as_deref()
    }

    pub fn bandwidth_bps(&self) -> f64 {
        self.bandwidth_bps
    }

    pub fn prop_delay(&self) -> SimTime {
        self.prop_delay
    }

    /// Bytes serialized onto the wire, including packets lost in transit.
    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    /// Incremented on every failure; packets launched in an older epoch are
    /// discarded on arrival.
    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn is_up(&self) -> bool {
        self.up
    }

    pub fn set_up(&mut self, up: bool, now: SimTime) {
        if self.up && !up {
            self.epoch += 1;
            // packets still queued or mid-serialization never make it out
            self.expire(now);
            let unsent = self.fifo.len();
            self.bytes_sent -= self.queued_bytes;
            if let Some(log) = &mut self.departures {
                log.truncate(log.len() - unsent);
            }
            self.fifo.clear();
            self.queued_bytes = 0;
            self.busy_until = now;
        }
        self.up = up;
    }

    pub fn queued_bytes(&mut self, now: SimTime) -> u64 {
        self.expire(now);
        self.queued_bytes
    }

    fn expire(&mut self, now: SimTime) {
        while let Some(&(depart, bytes)) = self.fifo.front() {
            if depart > now {
                break;
            }
            self.fifo.pop_front();
            self.queued_bytes -= bytes as u64;
        }
    }

    pub fn transmit(&mut self, now: SimTime, bytes: u32) -> Transmit {
        if !self.up {
            return Transmit::Down;
        }
        self.expire(now);
        if self.queued_bytes + bytes as u64 > self.queue_cap_bytes {
            return Transmit::QueueDrop;
        }
        let start = self.busy_until.max(now);
        let depart = start + SimTime::transmission(bytes as u64, self.bandwidth_bps);
        self.busy_until = depart;
        self.fifo.push_back((depart, bytes));
        self.queued_bytes += bytes as u64;
        self.bytes_sent += bytes as u64;
        if let Some(log) = &mut self.departures {
            log.push((depart, bytes));
        }
        if self.loss_ratio > 0.0 && self.rng.random::<f64>() < self.loss_ratio {
            return Transmit::Lost;
        }
        Transmit::Arrives(depart + self.prop_delay)
    }
}
