//! The built-in studies.

use super::config::{ExperimentConfig, Params, SweepVar};
use crate::scheduling::SchedulerKind;

pub struct Builtin {
    pub name: &'static str,
    pub about: &'static str,
    build: fn() -> ExperimentConfig,
}

impl Builtin {
    pub fn config(&self) -> ExperimentConfig {
        (self.build)()
    }
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "bandwidth-sweep",
        about: "IF2 bandwidth 0.25..2 Mbps, nominal workload, every scheduler",
        build: bandwidth_sweep,
    },
    Builtin {
        name: "loss-sweep",
        about: "IF2 loss 0..10 % at 1 Mbps, nominal workload, every scheduler",
        build: loss_sweep,
    },
    Builtin {
        name: "workload-sweep",
        about: "large-connection rate 0..5 per second with 13 small per second, every scheduler",
        build: workload_sweep,
    },
    Builtin {
        name: "granularity",
        about: "one long-lived connection plus sparse bulk arrivals, IF2 at 2 and 1 Mbps",
        build: granularity,
    },
    Builtin {
        name: "saturation",
        about: "one long-lived connection on the nominal interfaces, every scheduler",
        build: saturation,
    },
];

pub fn builtin(name: &str) -> Option<ExperimentConfig> {
    BUILTINS.iter().find(|b| b.name == name).map(Builtin::config)
}

fn bandwidth_sweep() -> ExperimentConfig {
    ExperimentConfig {
        name: "bandwidth-sweep".into(),
        sweep_var: SweepVar::If2BandwidthMbps,
        sweep_values: (1..=8).map(|i| i as f64 * 0.25).collect(),
        ..ExperimentConfig::default()
    }
}

fn loss_sweep() -> ExperimentConfig {
    ExperimentConfig {
        name: "loss-sweep".into(),
        sweep_var: SweepVar::If2LossPercent,
        sweep_values: (0..=10).map(f64::from).collect(),
        ..ExperimentConfig::default()
    }
}

fn workload_sweep() -> ExperimentConfig {
    ExperimentConfig {
        name: "workload-sweep".into(),
        sweep_var: SweepVar::BetaLarge,
        sweep_values: (0..=5).map(f64::from).collect(),
        ..ExperimentConfig::default()
    }
}

fn granularity() -> ExperimentConfig {
    let mut params = Params { beta_small: 0.0, beta_large: 0.25, long_lived: true, ..Params::default() };
    params.interfaces[1].bandwidth_mbps = 2.0;
    ExperimentConfig {
        name: "granularity".into(),
        params,
        sweep_var: SweepVar::If2BandwidthMbps,
        sweep_values: vec![2.0, 1.0],
        schedulers: vec![
            SchedulerKind::OnlyOne,
            SchedulerKind::CoMaxThroughput,
            SchedulerKind::PoRoundRobin,
            SchedulerKind::PoWeightedRoundRobin,
        ],
        ..ExperimentConfig::default()
    }
}

fn saturation() -> ExperimentConfig {
    ExperimentConfig {
        name: "saturation".into(),
        params: Params { beta_small: 0.0, beta_large: 0.0, long_lived: true, ..Params::default() },
        ..ExperimentConfig::default()
    }
}
