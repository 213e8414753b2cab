//! Reference implementations the library is checked against. Written from
//! the definitions, without calling into the code under test.
#![allow(dead_code)]

use ifagg::types::{new_interface, AppKey, ConnId, ConnectionSpec, IfaceId, InterfaceState};

pub const ALPHA: f64 = 0.125;

/// Closed form of the demand average after folding in `seq` starting from
/// `init`: (1-a)^n c0 + sum_k a (1-a)^(n-1-k) x_k.
pub fn ewma_closed_form(init: f64, seq: &[f64]) -> f64 {
    let n = seq.len() as i32;
    let mut acc = (1.0 - ALPHA).powi(n) * init;
    for (k, x) in seq.iter().enumerate() {
        acc += ALPHA * (1.0 - ALPHA).powi(n - 1 - k as i32) * x;
    }
    acc
}

/// One interface as the brute-force scheduler sees it.
#[derive(Debug, Clone, Copy)]
pub struct IfaceCase {
    pub bandwidth: f64,
    pub backlog: u64,
    pub up: bool,
}

/// Lowest-index interface with the smallest finite finish time. `None` when
/// no up interface has a finite one.
pub fn max_throughput_oracle(ifaces: &[IfaceCase], demand: f64) -> Option<usize> {
    let times: Vec<Option<f64>> = ifaces
        .iter()
        .map(|c| (c.up && c.bandwidth > 0.0).then(|| (c.backlog as f64 + demand) * 8.0 / c.bandwidth))
        .collect();
    let best = times.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    times.iter().position(|t| *t == Some(best))
}

pub fn build_ifaces(cases: &[IfaceCase]) -> Vec<InterfaceState> {
    cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut s = new_interface(IfaceId(i as u16), c.bandwidth, 0.0, 1500).unwrap();
            s.backlog_bytes = c.backlog;
            s.is_up = c.up;
            s
        })
        .collect()
}

pub fn conn(id: u32, app: &str) -> ConnectionSpec {
    ConnectionSpec {
        conn_id: ConnId(id),
        app: AppKey::named(app),
        total_bytes: 10_000,
        arrival_time: 0.0,
        dest_supports_striping: false,
    }
}

/// Deterministic byte pattern for chunk `id` of a stream.
pub fn chunk_bytes(id: u64, len: usize) -> Vec<u8> {
    (0..len).map(|i| (id.wrapping_mul(31).wrapping_add(i as u64 * 7) % 251) as u8).collect()
}
