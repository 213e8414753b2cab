//! Reno congestion control over segment-numbered flows.
//!
//! Sequence numbers count segments, not bytes; every segment is at most one
//! MSS. The receiver acknowledges every segment with the next segment it
//! expects, so three duplicate acknowledgements mean a hole.

use std::collections::BTreeSet;
use std::ops::Range;

use super::event::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct TcpConfig {
    pub mss: u32,
    /// Initial congestion window in segments.
    pub initial_cwnd: u32,
    pub initial_ssthresh: u64,
    /// Receive window advertised by the peer.
    pub max_window: u64,
    pub rto_initial: SimTime,
    pub rto_min: SimTime,
    pub rto_max: SimTime,
}

impl Default for TcpConfig {
    fn default() -> Self {
        TcpConfig {
            mss: 1460,
            initial_cwnd: 2,
            initial_ssthresh: 65_535,
            max_window: 65_535,
            rto_initial: SimTime::from_millis(1000),
            rto_min: SimTime::from_millis(200),
            rto_max: SimTime::from_millis(60_000),
        }
    }
}

/// A segment the sender wants on the wire now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outgoing {
    pub seq: u64,
    pub retransmit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AckOutcome {
    /// Segments newly covered by the cumulative acknowledgement.
    pub acked: Range<u64>,
    /// Set when the third duplicate acknowledgement triggers a fast
    /// retransmit of this segment.
    pub fast_retransmit: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TcpSender {
    mss: u64,
    max_window: u64,
    cwnd: u64,
    ssthresh: u64,
    queued: u64,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    dup_acks: u32,
    in_recovery: bool,
    srtt: Option<f64>,
    rttvar: f64,
    rto: SimTime,
    rto_min: SimTime,
    rto_max: SimTime,
    backoff: u32,
    timed: Option<(u64, SimTime)>,
    deadline: Option<SimTime>,
    pub retransmits: u64,
    pub timeouts: u64,
    pub fast_retransmits: u64,
}

impl TcpSender {
    pub fn new(cfg: &TcpConfig) -> Self {
        let mss = cfg.mss as u64;
        TcpSender {
            mss,
            max_window: cfg.max_window.max(mss),
            cwnd: cfg.initial_cwnd.max(1) as u64 * mss,
            ssthresh: cfg.initial_ssthresh,
            queued: 0,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            dup_acks: 0,
            in_recovery: false,
            srtt: None,
            rttvar: 0.0,
            rto: cfg.rto_initial,
            rto_min: cfg.rto_min,
            rto_max: cfg.rto_max,
            backoff: 0,
            timed: None,
            deadline: None,
            retransmits: 0,
            timeouts: 0,
            fast_retransmits: 0,
        }
    }

    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn queued(&self) -> u64 {
        self.queued
    }

    pub fn in_flight(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    /// True while some queued segment is not yet acknowledged.
    pub fn has_pending(&self) -> bool {
        self.snd_una < self.queued
    }

    pub fn deadline(&self) -> Option<SimTime> {
        self.deadline
    }

    pub fn current_rto(&self) -> SimTime {
        let backed = self.rto.0.saturating_mul(1u64 << self.backoff.min(16));
        SimTime(backed.min(self.rto_max.0))
    }

    /// Makes `n` more segments available to send.
    pub fn push(&mut self, n: u64) {
        self.queued += n;
    }

    fn window_segments(&self) -> u64 {
        (self.cwnd.min(self.max_window) / self.mss).max(1)
    }

    /// Next segment the congestion window allows, if any.
    pub fn poll_send(&mut self, now: SimTime) -> Option<Outgoing> {
        if self.snd_nxt >= self.queued || self.in_flight() >= self.window_segments() {
            return None;
        }
        let seq = self.snd_nxt;
        self.snd_nxt += 1;
        let retransmit = seq < self.snd_max;
        if retransmit {
            self.retransmits += 1;
        } else {
            self.snd_max = seq + 1;
            if self.timed.is_none() {
                self.timed = Some((seq, now));
            }
        }
        if self.deadline.is_none() {
            self.deadline = Some(now + self.current_rto());
        }
        Some(Outgoing { seq, retransmit })
    }

    /// Processes a cumulative acknowledgement naming the next expected
    /// segment.
    pub fn on_ack(&mut self, now: SimTime, ack: u64) -> AckOutcome {
        let ack = ack.min(self.snd_max);
        if ack > self.snd_una {
            let acked = self.snd_una..ack;
            if let Some((seq, sent)) = self.timed {
                if ack > seq {
                    self.rtt_sample((now - sent).as_secs());
                    self.timed = None;
                }
            }
            if self.in_recovery {
                self.in_recovery = false;
                self.cwnd = self.ssthresh;
            } else if self.cwnd < self.ssthresh {
                self.cwnd += self.mss;
            } else {
                self.cwnd += (self.mss * self.mss / self.cwnd).max(1);
            }
            self.snd_una = ack;
            self.snd_nxt = self.snd_nxt.max(ack);
            self.dup_acks = 0;
            self.backoff = 0;
            self.deadline = (self.snd_nxt > self.snd_una).then(|| now + self.current_rto());
            return AckOutcome { acked, fast_retransmit: None };
        }
        let mut out = AckOutcome { acked: ack..ack, fast_retransmit: None };
        if ack == self.snd_una && self.snd_nxt > self.snd_una {
            self.dup_acks += 1;
            if self.dup_acks == 3 && !self.in_recovery {
                self.on_triple_dup_ack();
                self.retransmits += 1;
                self.timed = None;
                self.deadline = Some(now + self.current_rto());
                out.fast_retransmit = Some(self.snd_una);
            }
        }
        out
    }

    /// Multiplicative decrease on a loss signalled by duplicate acks.
    pub fn on_triple_dup_ack(&mut self) {
        self.ssthresh = (self.cwnd / 2).max(2 * self.mss);
        self.cwnd = self.ssthresh;
        self.in_recovery = true;
        self.fast_retransmits += 1;
    }

    /// Fires the retransmission timer if it is due. Returns whether it did;
    /// the unacknowledged tail is then resent by [`poll_send`](Self::poll_send).
    pub fn on_timeout(&mut self, now: SimTime) -> bool {
        match self.deadline {
            Some(d) if d <= now && self.snd_nxt > self.snd_una => {}
            _ => return false,
        }
        self.ssthresh = (self.cwnd / 2).max(2 * self.mss);
        self.cwnd = self.mss;
        self.snd_nxt = self.snd_una;
        self.backoff = (self.backoff + 1).min(16);
        self.dup_acks = 0;
        self.in_recovery = false;
        self.timed = None;
        self.deadline = None;
        self.timeouts += 1;
        true
    }

    fn rtt_sample(&mut self, r: f64) {
        let (srtt, rttvar) = match self.srtt {
            None => (r, r / 2.0),
            Some(srtt) => {
                let rttvar = 0.75 * self.rttvar + 0.25 * (srtt - r).abs();
                (0.875 * srtt + 0.125 * r, rttvar)
            }
        };
        self.srtt = Some(srtt);
        self.rttvar = rttvar;
        let rto = SimTime::from_secs(srtt + (4.0 * rttvar).max(0.001));
        self.rto = rto.max(self.rto_min).min(self.rto_max);
    }

    pub fn srtt(&self) -> Option<f64> {
        self.srtt
    }
}

/// Receiving half of a flow.
#[derive(Debug, Clone, Default)]
pub struct TcpReceiver {
    rcv_nxt: u64,
    out_of_order: BTreeSet<u64>,
}

impl TcpReceiver {
    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    /// Accepts a segment. Returns the cumulative acknowledgement to send and
    /// the segments that just became deliverable in order.
    pub fn on_segment(&mut self, seq: u64) -> (u64, Range<u64>) {
        let start = self.rcv_nxt;
        if seq == self.rcv_nxt {
            self.rcv_nxt += 1;
            while self.out_of_order.remove(&self.rcv_nxt) {
                self.rcv_nxt += 1;
            }
        } else if seq > self.rcv_nxt {
            self.out_of_order.insert(seq);
        }
        (self.rcv_nxt, start..self.rcv_nxt)
    }
}
