//! Poisson connection arrivals with exponentially distributed sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::types::{AppKey, ConnId, ConnectionSpec};

/// Demand of the optional long-lived connection: far more than any link
/// can carry within a run.
pub const LONG_LIVED_BYTES: u64 = 1 << 50;

/// Sub-stream ids. Each random process draws from its own stream so that
/// enabling one never shifts the draws of another.
pub(crate) mod streams {
    pub const SMALL: u64 = 1;
    pub const LARGE: u64 = 2;
    pub const PROBE: u64 = 3;
    pub const LINK_BASE: u64 = 16;
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    /// Arrival rate of small connections, per second.
    pub beta_small: f64,
    pub beta_large: f64,
    /// Mean size of a small connection in bytes.
    pub lambda_small: f64,
    pub lambda_large: f64,
    pub duration: f64,
    pub seed: u64,
    /// Adds one connection of unbounded demand at t = 0.
    pub long_lived: bool,
    /// Whether the destination runs the striping service.
    pub dest_supports_striping: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            beta_small: 13.0,
            beta_large: 1.0,
            lambda_small: 22_380.0,
            lambda_large: 285_000.0,
            duration: 60.0,
            seed: 1,
            long_lived: false,
            dest_supports_striping: true,
        }
    }
}

impl WorkloadSpec {
    /// No arrivals, one connection that never runs out of data.
    pub fn saturating(duration: f64, seed: u64) -> Self {
        WorkloadSpec { beta_small: 0.0, beta_large: 0.0, duration, seed, long_lived: true, ..Self::default() }
    }
}

fn poisson_arrivals(
    rate: f64,
    mean: f64,
    duration: f64,
    mut rng: ChaCha8Rng,
) -> Vec<(f64, u64)> {
    if !(rate > 0.0) || !(mean > 0.0) {
        return Vec::new();
    }
    let gap = Exp::new(rate).expect("positive rate");
    let size = Exp::new(1.0 / mean).expect("positive mean");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= duration {
            return out;
        }
        let bytes = (size.sample(&mut rng).ceil() as u64).max(1);
        out.push((t, bytes));
    }
}

/// Connections of one run in arrival order, ids assigned in that order.
pub fn generate_workload(spec: &WorkloadSpec) -> Vec<ConnectionSpec> {
    let small = poisson_arrivals(
        spec.beta_small,
        spec.lambda_small,
        spec.duration,
        rng_stream(spec.seed, streams::SMALL),
    );
    let large = poisson_arrivals(
        spec.beta_large,
        spec.lambda_large,
        spec.duration,
        rng_stream(spec.seed, streams::LARGE),
    );
    let web = AppKey::with_port("web", 80);
    let bulk = AppKey::with_port("bulk", 21);
    let mut all: Vec<(f64, u64, &AppKey)> = Vec::with_capacity(small.len() + large.len() + 1);
    if spec.long_lived {
        all.push((0.0, LONG_LIVED_BYTES, &bulk));
    }
    all.extend(small.into_iter().map(|(t, b)| (t, b, &web)));
    all.extend(large.into_iter().map(|(t, b)| (t, b, &bulk)));
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all.into_iter()
        .enumerate()
        .map(|(i, (t, bytes, app))| ConnectionSpec {
            conn_id: ConnId(i as u32),
            app: app.clone(),
            total_bytes: bytes,
            arrival_time: t,
            dest_supports_striping: spec.dest_supports_striping,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_count_within_four_sigma() {
        let spec = WorkloadSpec { beta_large: 0.0, seed: 11, ..WorkloadSpec::default() };
        let n = generate_workload(&spec).len() as f64;
        assert!((n - 780.0).abs() <= 4.0 * 780f64.sqrt(), "{n}");
    }

    #[test]
    fn zero_rate_means_no_bulk() {
        let spec = WorkloadSpec { beta_large: 0.0, ..WorkloadSpec::default() };
        assert!(generate_workload(&spec).iter().all(|c| c.app.name == "web"));
        let none = WorkloadSpec { beta_small: 0.0, beta_large: 0.0, ..WorkloadSpec::default() };
        assert!(generate_workload(&none).is_empty());
    }

    #[test]
    fn size_mean_within_two_percent() {
        let sizes = poisson_arrivals(1e5 / 10.0, 285_000.0, 10.0, rng_stream(3, streams::LARGE));
        assert!(sizes.len() > 90_000);
        let mean = sizes.iter().map(|s| s.1 as f64).sum::<f64>() / sizes.len() as f64;
        assert!((mean / 285_000.0 - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn ordered_and_streams_independent() {
        let a = generate_workload(&WorkloadSpec { seed: 5, ..WorkloadSpec::default() });
        assert!(a.windows(2).all(|w| w[0].arrival_time <= w[1].arrival_time));
        let no_large = generate_workload(&WorkloadSpec { seed: 5, beta_large: 0.0, ..WorkloadSpec::default() });
        let small_a: Vec<_> = a.iter().filter(|c| c.app.name == "web").map(|c| (c.arrival_time, c.total_bytes)).collect();
        let small_b: Vec<_> = no_large.iter().map(|c| (c.arrival_time, c.total_bytes)).collect();
        assert_eq!(small_a, small_b);
    }

    #[test]
    fn long_lived_comes_first() {
        let w = generate_workload(&WorkloadSpec::saturating(60.0, 1));
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].total_bytes, LONG_LIVED_BYTES);
        assert_eq!(w[0].arrival_time, 0.0);
    }
}
